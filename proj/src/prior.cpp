#include "mpcn/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpcn/errors.hpp"

namespace mpcn {

template <typename T>
PriorModule<T>::PriorModule(const PriorConfig& config, int query_dim, int value_dim)
    : config_(config),
      query_dim_(query_dim),
      value_dim_(value_dim),
      wq_("prior.wq", query_dim, config.width),
      wk_("prior.wk", query_dim, config.width),
      wv_("prior.wv", value_dim, config.width),
      wo_("prior.wo", config.width, config.width),
      ln1_("prior.ln1", config.width),
      ffn1_("prior.ffn1", config.width, config.ffn_hidden),
      ffn2_("prior.ffn2", config.ffn_hidden, config.width),
      ln2_("prior.ln2", config.width) {
  if (config.heads <= 0 || config.width % config.heads != 0)
    throw ConfigError("PriorModule: width must be divisible by the number of heads");
}

template <typename T>
std::vector<Param<T>*> PriorModule<T>::params() {
  std::vector<Param<T>*> out;
  for (Layer<T>* l : std::initializer_list<Layer<T>*>{&wq_, &wk_, &wv_, &wo_, &ln1_, &ffn1_, &ffn2_, &ln2_}) {
    auto p = l->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
void PriorModule<T>::init(std::mt19937_64& rng) {
  for (Layer<T>* l : std::initializer_list<Layer<T>*>{&wq_, &wk_, &wv_, &wo_, &ln1_, &ffn1_, &ffn2_, &ln2_})
    l->init(rng);
}

template <typename T>
Tensor<T> PriorModule<T>::forward(const Tensor<T>& query, const Tensor<T>& keys, const std::vector<int>& value_index,
                                  const Tensor<T>& shape_feats, PriorFusion fusion) {
  if (query.rank() != 2 || query.dim(1) != query_dim_) throw ShapeError("fuse_prior: query shape " + query.shape_string());
  const int batch = query.dim(0);
  if (keys.rank() != 3 || keys.dim(0) != batch || keys.dim(2) != query_dim_ || keys.dim(1) < 1)
    throw ShapeError("fuse_prior: keys shape " + keys.shape_string());
  const int k = keys.dim(1);
  if (value_index.size() != static_cast<std::size_t>(batch) * k) throw ShapeError("fuse_prior: value index size");
  if (shape_feats.rank() != 2 || shape_feats.dim(1) != value_dim_)
    throw ShapeError("fuse_prior: shape feature shape " + shape_feats.shape_string());
  const int units = shape_feats.dim(0);
  for (int v : value_index)
    if (v >= units || v < -1) throw ShapeError("fuse_prior: value index out of range");

  batch_ = batch;
  k_ = k;
  units_ = units;
  fusion_ = fusion;
  index_ = value_index;
  const int w = config_.width;
  const int heads = config_.heads;
  const int dh = w / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  qp_ = wq_.forward(query);
  kp_ = wk_.forward(keys.reshaped({batch * k, query_dim_}));
  vp_ = units > 0 ? wv_.forward(shape_feats) : Tensor<T>({0, w});

  weights_.assign(static_cast<std::size_t>(batch) * heads * k, T(0));
  row_masked_.assign(static_cast<std::size_t>(batch), 0);
  all_masked_ = 0;
  Tensor<T> ctx({batch, w});
  std::vector<T> logits(static_cast<std::size_t>(k));
  for (int b = 0; b < batch; ++b) {
    const int* idx = index_.data() + static_cast<std::size_t>(b) * k;
    if (std::all_of(idx, idx + k, [](int v) { return v < 0; })) {
      row_masked_[b] = 1;
      ++all_masked_;
      continue;
    }
    for (int h = 0; h < heads; ++h) {
      const T* q = qp_.slice(b) + h * dh;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < k; ++j) {
        if (idx[j] < 0) continue;
        T s = T(0);
        if (fusion == PriorFusion::kAttention) {
          const T* kr = kp_.slice(b * k + j) + h * dh;
          for (int d = 0; d < dh; ++d) s += q[d] * kr[d];
          s *= scale;
        }
        logits[j] = s;
        mx = std::max(mx, s);
      }
      T z = T(0);
      T* a = weights_.data() + (static_cast<std::size_t>(b) * heads + h) * k;
      for (int j = 0; j < k; ++j) {
        if (idx[j] < 0) continue;
        a[j] = std::exp(logits[j] - mx);
        z += a[j];
      }
      T* c = ctx.slice(b) + h * dh;
      for (int j = 0; j < k; ++j) {
        if (idx[j] < 0) continue;
        a[j] /= z;
        const T* v = vp_.slice(idx[j]) + h * dh;
        for (int d = 0; d < dh; ++d) c[d] += a[j] * v[d];
      }
    }
  }

  Tensor<T> mha = wo_.forward(ctx);
  for (int b = 0; b < batch; ++b)
    if (row_masked_[b]) std::fill(mha.slice(b), mha.slice(b) + w, T(0));
  Tensor<T> e = ln1_.forward(mha);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += qp_[i];
  Tensor<T> out = ln2_.forward(ffn2_.forward(ffn_act_.forward(ffn1_.forward(e))));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += e[i];
  return out;
}

template <typename T>
typename PriorModule<T>::Gradients PriorModule<T>::backward(const Tensor<T>& dprior) {
  const int w = config_.width;
  if (dprior.shape() != std::vector<int>{batch_, w}) throw ShapeError("fuse_prior backward: gradient shape");
  const int heads = config_.heads;
  const int dh = w / heads;
  const int k = k_;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> de = ffn1_.backward(ffn_act_.backward(ffn2_.backward(ln2_.backward(dprior))));
  for (std::size_t i = 0; i < de.size(); ++i) de[i] += dprior[i];
  Tensor<T> dqp = de;
  Tensor<T> dmha = ln1_.backward(de);
  for (int b = 0; b < batch_; ++b)
    if (row_masked_[b]) std::fill(dmha.slice(b), dmha.slice(b) + w, T(0));
  Tensor<T> dctx = wo_.backward(dmha);

  Tensor<T> dkp(kp_.shape());
  Tensor<T> dvp({units_, w});
  std::vector<T> da(static_cast<std::size_t>(k));
  for (int b = 0; b < batch_; ++b) {
    if (row_masked_[b]) continue;
    const int* idx = index_.data() + static_cast<std::size_t>(b) * k;
    for (int h = 0; h < heads; ++h) {
      const T* a = weights_.data() + (static_cast<std::size_t>(b) * heads + h) * k;
      const T* g = dctx.slice(b) + h * dh;
      T dot = T(0);
      for (int j = 0; j < k; ++j) {
        if (idx[j] < 0) continue;
        const T* v = vp_.slice(idx[j]) + h * dh;
        T* dv = dvp.slice(idx[j]) + h * dh;
        T s = T(0);
        for (int d = 0; d < dh; ++d) {
          dv[d] += a[j] * g[d];
          s += g[d] * v[d];
        }
        da[j] = s;
        dot += a[j] * s;
      }
      if (fusion_ != PriorFusion::kAttention) continue;
      const T* q = qp_.slice(b) + h * dh;
      T* dq = dqp.slice(b) + h * dh;
      for (int j = 0; j < k; ++j) {
        if (idx[j] < 0) continue;
        const T ds = a[j] * (da[j] - dot) * scale;
        const T* kr = kp_.slice(b * k + j) + h * dh;
        T* dk = dkp.slice(b * k + j) + h * dh;
        for (int d = 0; d < dh; ++d) {
          dq[d] += ds * kr[d];
          dk[d] += ds * q[d];
        }
      }
    }
  }

  wk_.backward(dkp);  // keys are stored features: only the projection learns
  Gradients grads;
  grads.query = wq_.backward(dqp);
  grads.shape_feats = units_ > 0 ? wv_.backward(dvp) : Tensor<T>({0, value_dim_});
  return grads;
}

template <typename T>
Tensor<T> concat_condition(const Tensor<T>& image_feat, const Tensor<T>& prior) {
  if (image_feat.rank() != 2 || prior.rank() != 2 || image_feat.dim(0) != prior.dim(0))
    throw ShapeError("concat_condition: " + image_feat.shape_string() + " vs " + prior.shape_string());
  const int batch = image_feat.dim(0), a = image_feat.dim(1), p = prior.dim(1);
  Tensor<T> out({batch, a + p});
  for (int b = 0; b < batch; ++b) {
    std::copy(image_feat.slice(b), image_feat.slice(b) + a, out.slice(b));
    std::copy(prior.slice(b), prior.slice(b) + p, out.slice(b) + a);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_condition(const Tensor<T>& grad, int image_width) {
  const int batch = grad.dim(0), total = grad.dim(1);
  if (image_width < 0 || image_width > total) throw ShapeError("split_condition: bad width");
  Tensor<T> a({batch, image_width}), p({batch, total - image_width});
  for (int b = 0; b < batch; ++b) {
    std::copy(grad.slice(b), grad.slice(b) + image_width, a.slice(b));
    std::copy(grad.slice(b) + image_width, grad.slice(b) + total, p.slice(b));
  }
  return {std::move(a), std::move(p)};
}

template class PriorModule<float>;
template class PriorModule<double>;
template Tensor<float> concat_condition(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_condition(const Tensor<double>&, const Tensor<double>&);
template std::pair<Tensor<float>, Tensor<float>> split_condition(const Tensor<float>&, int);
template std::pair<Tensor<double>, Tensor<double>> split_condition(const Tensor<double>&, int);

}  // namespace mpcn
