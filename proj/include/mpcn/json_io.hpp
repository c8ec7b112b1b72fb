#pragma once

#include "json.hpp"
#include "mpcn/netblocks.hpp"

namespace mpcn {

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

}  // namespace mpcn
