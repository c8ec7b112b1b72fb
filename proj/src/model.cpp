#include "mpcn/model.hpp"

#include <cstring>

#include "mpcn/errors.hpp"

namespace mpcn {

template <typename T>
Model<T>::Model(const ModelSpec& spec)
    : spec_((spec.validate(), spec)),
      image_encoder_(spec.image),
      shape_encoder_(spec.shape),
      prior_(spec.prior, spec.image.embed_dim, spec.shape.feature_dim),
      decoder_(spec.decoder) {}

template <typename T>
void Model<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  image_encoder_.init(rng);
  shape_encoder_.init(rng);
  prior_.init(rng);
  decoder_.init(rng);
}

template <typename T>
typename Model<T>::Outputs Model<T>::forward(const Tensor<T>& images, const PriorBatch<T>& memory, PriorMode mode) {
  return forward_from_features(forward_features(images), memory, mode);
}

template <typename T>
Tensor<T> Model<T>::forward_features(const Tensor<T>& images) {
  return image_encoder_.forward(images);
}

template <typename T>
typename Model<T>::Outputs Model<T>::forward_from_features(Tensor<T> features, const PriorBatch<T>& memory,
                                                           PriorMode mode) {
  Outputs out;
  out.features = std::move(features);
  batch_ = out.features.dim(0);
  mode_ = mode;
  shapes_encoded_ = false;
  if (mode == PriorMode::kNone) {
    out.prior = Tensor<T>({batch_, spec_.prior.width});
  } else {
    Tensor<T> feats;
    if (!memory.shape_voxels.empty()) {
      feats = shape_encoder_.forward(memory.shape_voxels);
      shapes_encoded_ = true;
    } else if (!memory.shape_feats.empty()) {
      feats = memory.shape_feats;
    } else {
      feats = Tensor<T>({0, spec_.shape.feature_dim});
    }
    out.prior = prior_.forward(out.features, memory.keys, memory.value_index, feats,
                               mode == PriorMode::kAverage ? PriorFusion::kAverage : PriorFusion::kAttention);
  }
  out.prob = decoder_.forward(concat_condition(out.features, out.prior));
  return out;
}

template <typename T>
void Model<T>::backward(const Tensor<T>& dprob, const Tensor<T>* feature_grad) {
  auto [dfeat, dprior] = split_condition(decoder_.backward(dprob), spec_.image.embed_dim);
  if (mode_ != PriorMode::kNone) {
    auto g = prior_.backward(dprior);
    for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += g.query[i];
    if (shapes_encoded_) shape_encoder_.backward(g.shape_feats);
  }
  if (feature_grad) {
    require_same_shape(*feature_grad, dfeat, "Model::backward feature gradient");
    for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += (*feature_grad)[i];
  }
  image_encoder_.backward(dfeat);
}

template <typename T>
std::vector<Param<T>*> Model<T>::params() {
  std::vector<Param<T>*> out;
  for (auto list : {image_encoder_.params(), shape_encoder_.params(), prior_.params(), decoder_.params()})
    out.insert(out.end(), list.begin(), list.end());
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

template <typename T>
std::uint64_t Model<T>::checksum() {
  std::uint64_t h = 1469598103934665603ull;
  for (auto* p : params()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < p->value.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

template class Model<float>;
template class Model<double>;

}  // namespace mpcn
