#include "mpcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpcn/errors.hpp"

namespace mpcn {

double bce_loss(const ProbVolume& pred, const VoxelGrid& gt) {
  if (pred.resolution() != gt.resolution()) throw ShapeError("bce_loss: resolution mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred[i]), kBceClamp, 1.0 - kBceClamp);
    sum += gt[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(pred.size());
}

template <typename T>
double bce_batch(const Tensor<T>& pred, const std::vector<const VoxelGrid*>& gts, Tensor<T>* grad) {
  const int batch = pred.rank() > 0 ? pred.dim(0) : 0;
  if (batch == 0 || gts.size() != static_cast<std::size_t>(batch)) throw ShapeError("bce_batch: batch size mismatch");
  const std::size_t vol = pred.stride0();
  if (grad) *grad = Tensor<T>(pred.shape());
  double total = 0.0;
  const double scale = 1.0 / (static_cast<double>(vol) * batch);
  for (int b = 0; b < batch; ++b) {
    if (gts[b]->size() != vol) throw ShapeError("bce_batch: resolution mismatch");
    const T* p = pred.slice(b);
    const auto& g = gts[b]->data();
    double sum = 0.0;
    for (std::size_t i = 0; i < vol; ++i) {
      const double pv = static_cast<double>(p[i]);
      const double pc = std::clamp(pv, kBceClamp, 1.0 - kBceClamp);
      sum += g[i] ? std::log(pc) : std::log(1.0 - pc);
      if (grad && pv == pc) (*grad).slice(b)[i] = static_cast<T>((g[i] ? -1.0 / pc : 1.0 / (1.0 - pc)) * scale);
    }
    total += -sum / static_cast<double>(vol);
  }
  return total / batch;
}

double pair_weight(double d, double gamma) { return std::max(0.0, 1.0 - d * gamma); }

std::vector<double> pairwise_shape_distance(const std::vector<const VoxelGrid*>& shapes) {
  const std::size_t n = shapes.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = shape_distance(*shapes[i], *shapes[j]);
  return d;
}

namespace {

// Loss and dLoss/dS for the similarity matrix S = f f^T / tau.
ContrastResult contrast_core(const std::vector<double>& sim, int n, const std::vector<double>& shape_dist,
                             const ContrastOptions& opt, std::vector<double>* dsim) {
  if (n < 2) throw ShapeError("contrastive loss needs at least two samples");
  if (shape_dist.size() != static_cast<std::size_t>(n) * n) throw ShapeError("contrastive loss: distance matrix size");
  ContrastResult res;
  res.queries = n;
  if (dsim) dsim->assign(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> w(static_cast<std::size_t>(n));
  std::vector<char> positive(static_cast<std::size_t>(n));
  struct QueryTerm {
    int q;
    double num, den, mx;
    std::vector<double> w;
    std::vector<char> pos;
  };
  std::vector<QueryTerm> terms;
  double total = 0.0;
  for (int q = 0; q < n; ++q) {
    const double* s = sim.data() + static_cast<std::size_t>(q) * n;
    int m = 0;
    for (int p = 0; p < n; ++p) {
      positive[p] = p != q && shape_dist[static_cast<std::size_t>(q) * n + p] < opt.delta;
      w[p] = positive[p]
                 ? (opt.weighting == NceWeighting::kUniform ? 1.0
                                                            : pair_weight(shape_dist[static_cast<std::size_t>(q) * n + p], opt.gamma))
                 : 0.0;
      m += positive[p];
    }
    if (m == 0) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k)
      if (k != q) mx = std::max(mx, s[k]);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < n; ++k) {
      if (k == q) continue;
      const double e = std::exp(s[k] - mx);
      den += e;
      if (positive[k]) num += w[k] * e;
    }
    if (!(num > 0.0)) continue;
    total += -std::log(num) + std::log(static_cast<double>(m)) + std::log(den);
    ++res.valid_queries;
    terms.push_back({q, num, den, mx, w, positive});
  }
  if (res.valid_queries == 0) return res;
  res.loss = total / res.valid_queries;
  if (dsim) {
    const double inv = 1.0 / res.valid_queries;
    for (const auto& t : terms) {
      const double* s = sim.data() + static_cast<std::size_t>(t.q) * n;
      double* g = dsim->data() + static_cast<std::size_t>(t.q) * n;
      for (int k = 0; k < n; ++k) {
        if (k == t.q) continue;
        const double e = std::exp(s[k] - t.mx);
        g[k] = inv * (e / t.den - (t.pos[k] ? t.w[k] * e / t.num : 0.0));
      }
    }
  }
  return res;
}

}  // namespace

ContrastResult contrastive_3d_loss(const std::vector<double>& embeddings, int n, int dim,
                                   const std::vector<double>& shape_dist, const ContrastOptions& opt) {
  if (embeddings.size() != static_cast<std::size_t>(n) * dim) throw ShapeError("contrastive loss: embedding size");
  std::vector<double> sim(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int d = 0; d < dim; ++d)
        s += embeddings[static_cast<std::size_t>(i) * dim + d] * embeddings[static_cast<std::size_t>(j) * dim + d];
      sim[static_cast<std::size_t>(i) * n + j] = s / opt.tau;
    }
  return contrast_core(sim, n, shape_dist, opt, nullptr);
}

template <typename T>
ContrastResult contrastive_3d(const Tensor<T>& features, const std::vector<double>& shape_dist,
                              const ContrastOptions& opt, Tensor<T>* grad) {
  if (features.rank() != 2) throw ShapeError("contrastive loss: features must be [N, dim]");
  const int n = features.dim(0), dim = features.dim(1);
  std::vector<double> f(static_cast<std::size_t>(n) * dim), norm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) s += static_cast<double>(features.slice(i)[d]) * features.slice(i)[d];
    norm[i] = std::max(std::sqrt(s), 1e-12);
    for (int d = 0; d < dim; ++d) f[static_cast<std::size_t>(i) * dim + d] = features.slice(i)[d] / norm[i];
  }
  std::vector<double> sim(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int d = 0; d < dim; ++d) s += f[static_cast<std::size_t>(i) * dim + d] * f[static_cast<std::size_t>(j) * dim + d];
      sim[static_cast<std::size_t>(i) * n + j] = s / opt.tau;
    }
  std::vector<double> dsim;
  ContrastResult res = contrast_core(sim, n, shape_dist, opt, grad ? &dsim : nullptr);
  if (!grad) return res;
  *grad = Tensor<T>(features.shape());
  if (res.valid_queries == 0) return res;
  std::vector<double> df(f.size(), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double g = dsim[static_cast<std::size_t>(i) * n + j] / opt.tau;
      if (g == 0.0) continue;
      for (int d = 0; d < dim; ++d) {
        df[static_cast<std::size_t>(i) * dim + d] += g * f[static_cast<std::size_t>(j) * dim + d];
        df[static_cast<std::size_t>(j) * dim + d] += g * f[static_cast<std::size_t>(i) * dim + d];
      }
    }
  for (int i = 0; i < n; ++i) {
    const double* fi = f.data() + static_cast<std::size_t>(i) * dim;
    const double* gi = df.data() + static_cast<std::size_t>(i) * dim;
    double dot = 0.0;
    for (int d = 0; d < dim; ++d) dot += fi[d] * gi[d];
    for (int d = 0; d < dim; ++d) grad->slice(i)[d] = static_cast<T>((gi[d] - fi[d] * dot) / norm[i]);
  }
  return res;
}

template double bce_batch<float>(const Tensor<float>&, const std::vector<const VoxelGrid*>&, Tensor<float>*);
template double bce_batch<double>(const Tensor<double>&, const std::vector<const VoxelGrid*>&, Tensor<double>*);
template ContrastResult contrastive_3d<float>(const Tensor<float>&, const std::vector<double>&, const ContrastOptions&,
                                              Tensor<float>*);
template ContrastResult contrastive_3d<double>(const Tensor<double>&, const std::vector<double>&,
                                               const ContrastOptions&, Tensor<double>*);

}  // namespace mpcn
