#include "mpcn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mpcn/binvox.hpp"
#include "mpcn/errors.hpp"
#include "mpcn/json_io.hpp"

namespace mpcn {

void to_json(nlohmann::json& j, const ModelSpec& s) {
  nlohmann::json backbone = nlohmann::json::array();
  for (const auto& st : s.image.backbone) backbone.push_back({st.channels, st.stride});
  j = {{"preset", s.preset},
       {"resolution", s.resolution},
       {"image",
        {{"image_size", s.image.image_size},
         {"backbone", backbone},
         {"head_channels", s.image.head_channels},
         {"embed_dim", s.image.embed_dim}}},
       {"shape",
        {{"resolution", s.shape.resolution},
         {"channels", s.shape.channels},
         {"first_stride", s.shape.first_stride},
         {"feature_dim", s.shape.feature_dim}}},
       {"prior", {{"width", s.prior.width}, {"heads", s.prior.heads}, {"ffn_hidden", s.prior.ffn_hidden}}},
       {"decoder", {{"input_dim", s.decoder.input_dim}, {"channels", s.decoder.channels}}}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.preset = j.at("preset").get<std::string>();
  s.resolution = j.at("resolution").get<int>();
  const auto& im = j.at("image");
  s.image.image_size = im.at("image_size").get<int>();
  s.image.backbone.clear();
  for (const auto& st : im.at("backbone")) s.image.backbone.push_back({st.at(0).get<int>(), st.at(1).get<int>()});
  s.image.head_channels = im.at("head_channels").get<std::array<int, 3>>();
  s.image.embed_dim = im.at("embed_dim").get<int>();
  const auto& sh = j.at("shape");
  s.shape.resolution = sh.at("resolution").get<int>();
  s.shape.channels = sh.at("channels").get<std::array<int, 4>>();
  s.shape.first_stride = sh.at("first_stride").get<int>();
  s.shape.feature_dim = sh.at("feature_dim").get<int>();
  const auto& pr = j.at("prior");
  s.prior = {pr.at("width").get<int>(), pr.at("heads").get<int>(), pr.at("ffn_hidden").get<int>()};
  const auto& de = j.at("decoder");
  s.decoder = {de.at("input_dim").get<int>(), de.at("channels").get<std::vector<int>>()};
}

namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  template <typename I>
  void put(I v) {
    unsigned char b[sizeof(I)];
    std::memcpy(b, &v, sizeof(I));  // host is little-endian (x86-64 / aarch64)
    out_.write(reinterpret_cast<const char*>(b), sizeof(I));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    put<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed: " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot read " + path.string());
  }
  template <typename I>
  I get() {
    I v;
    bytes(&v, sizeof(I));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw ParseError("archive truncated", offset_);
    offset_ += n;
  }
  std::string str(std::size_t limit = std::size_t{1} << 30) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw ParseError("archive string too long", offset_);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t offset() const { return offset_; }

 private:
  std::ifstream in_;
  std::size_t offset_ = 0;
};

void expect_magic(Reader& r, const char* magic) {
  char m[8];
  r.bytes(m, 8);
  if (std::memcmp(m, magic, 8) != 0) throw ParseError(std::string("bad archive magic, expected ") + magic, 0);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw ParseError("unsupported archive version " + std::to_string(version), 8);
}

}  // namespace

template <typename T>
void save_model(Model<T>& model, const std::filesystem::path& path, const std::string& extra_json) {
  nlohmann::json meta;
  meta["spec"] = model.spec();
  meta["extra"] = nlohmann::json::parse(extra_json);
  Writer w(path);
  w.bytes("MPCNCKPT", 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(sizeof(T));
  w.str(meta.dump());
  const auto params = model.params();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.rank()));
    for (int d : p->value.shape()) w.put<std::int32_t>(d);
    w.bytes(p->value.data(), p->value.size() * sizeof(T));
  }
  w.finish();
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path, std::string* extra_json) {
  Reader r(path);
  expect_magic(r, "MPCNCKPT");
  const auto width = r.get<std::uint32_t>();
  if (width != sizeof(T)) throw ParseError("checkpoint element width " + std::to_string(width) + " does not match", 12);
  const auto meta = nlohmann::json::parse(r.str());
  Model<T> model(meta.at("spec").get<ModelSpec>());
  if (extra_json) *extra_json = meta.value("extra", nlohmann::json::object()).dump();
  const auto params = model.params();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) throw ParseError("checkpoint parameter count mismatch", r.offset());
  for (auto* p : params) {
    const std::string name = r.str(4096);
    if (name != p->name) throw ParseError("checkpoint parameter '" + name + "' where '" + p->name + "' expected", r.offset());
    const auto rank = r.get<std::uint32_t>();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = r.get<std::int32_t>();
    if (shape != p->value.shape()) throw ParseError("checkpoint shape mismatch for " + name, r.offset());
    r.bytes(p->value.data(), p->value.size() * sizeof(T));
  }
  return model;
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes("MPCNBANK", 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(bank.capacity());
  w.put<std::int32_t>(bank.key_dim());
  w.put<std::int32_t>(bank.resolution());
  w.put<std::uint64_t>(bank.next_tick());
  w.put<std::uint64_t>(bank.size());
  for (const auto& s : bank.slots()) {
    w.put<std::uint64_t>(s.insert_tick);
    w.bytes(s.key.data(), s.key.size() * sizeof(double));
    const auto bytes = write_binvox(*s.value);
    w.put<std::uint64_t>(bytes.size());
    w.bytes(bytes.data(), bytes.size());
  }
  w.finish();
}

MemoryBank load_bank(const std::filesystem::path& path) {
  Reader r(path);
  expect_magic(r, "MPCNBANK");
  const auto capacity = r.get<std::uint64_t>();
  const auto key_dim = r.get<std::int32_t>();
  const auto resolution = r.get<std::int32_t>();
  const auto next_tick = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();
  if (key_dim <= 0 || resolution <= 0 || count > capacity) throw ParseError("bank archive geometry invalid", r.offset());
  MemoryBank bank(capacity, key_dim, resolution);
  for (std::uint64_t i = 0; i < count; ++i) {
    MemorySlot slot;
    slot.insert_tick = r.get<std::uint64_t>();
    slot.key.resize(static_cast<std::size_t>(key_dim));
    r.bytes(slot.key.data(), slot.key.size() * sizeof(double));
    const auto n = r.get<std::uint64_t>();
    if (n > (std::uint64_t{1} << 28)) throw ParseError("bank archive value too large", r.offset());
    std::vector<std::uint8_t> bytes(n);
    r.bytes(bytes.data(), n);
    slot.value = std::make_shared<const VoxelGrid>(read_binvox(bytes));
    bank.restore(std::move(slot), next_tick);
  }
  return bank;
}

template void save_model<float>(Model<float>&, const std::filesystem::path&, const std::string&);
template void save_model<double>(Model<double>&, const std::filesystem::path&, const std::string&);
template Model<float> load_model<float>(const std::filesystem::path&, std::string*);
template Model<double> load_model<double>(const std::filesystem::path&, std::string*);

}  // namespace mpcn
