#pragma once

#include <vector>

#include "mpcn/layers.hpp"

namespace mpcn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamOptions opt);
  /// Applies one update from the accumulated gradients.
  void step();
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace mpcn
