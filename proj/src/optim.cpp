#include "mpcn/optim.hpp"

#include <cmath>

namespace mpcn {

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& val = params_[i]->value;
    const auto& g = params_[i]->grad;
    auto& m = m_[i];
    auto& v = v_[i];
#pragma omp parallel for schedule(static) if (val.size() > 65536)
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
      val[j] -= static_cast<T>(opt_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace mpcn
