#include <gtest/gtest.h>

#include <random>

#include "mpcn/losses.hpp"
#include "mpcn/model.hpp"
#include "test_util.hpp"

using namespace mpcn;
using mpcn::testing::check_param_grads;
using mpcn::testing::dot;
using mpcn::testing::random_grid;
using mpcn::testing::random_tensor;
using mpcn::testing::rel_error;

namespace {

Tensor<double> binary_volume(int n, int r, std::mt19937_64& rng) {
  Tensor<double> t({n, 1, r, r, r});
  std::bernoulli_distribution bit(0.4);
  for (auto& v : t.values()) v = bit(rng) ? 1.0 : 0.0;
  return t;
}

template <typename Net>
void zero(Net& net) {
  for (auto* p : net.params()) p->zero_grad();
}

}  // namespace

TEST(GradCheck, ImageEncoder) {
  const auto spec = ModelSpec::tiny();
  ImageEncoder<double> enc(spec.image);
  std::mt19937_64 rng(1);
  enc.init(rng);
  const auto x = random_tensor<double>({2, 1, 8, 8}, rng, 0, 1);
  const auto w = random_tensor<double>({2, spec.image.embed_dim}, rng);
  zero(enc);
  enc.forward(x);
  enc.backward(w);
  check_param_grads(enc.params(), [&] { return dot(enc.forward(x), w); });
}

TEST(GradCheck, ShapeEncoderOnBinaryInput) {
  const auto spec = ModelSpec::tiny();
  ShapeEncoder<double> enc(spec.shape);
  std::mt19937_64 rng(2);
  enc.init(rng);
  const auto x = binary_volume(3, 8, rng);
  const auto w = random_tensor<double>({3, spec.shape.feature_dim}, rng);
  zero(enc);
  enc.forward(x);
  enc.backward(w);
  check_param_grads(enc.params(), [&] { return dot(enc.forward(x), w); });
}

TEST(GradCheck, DecoderWithBce) {
  const auto spec = ModelSpec::tiny();
  ShapeDecoder<double> dec(spec.decoder);
  std::mt19937_64 rng(3);
  dec.init(rng);
  mpcn::testing::jitter(dec.params(), rng);
  auto z = random_tensor<double>({2, spec.decoder.input_dim}, rng);
  const auto g0 = random_grid(8, rng), g1 = random_grid(8, rng);
  const std::vector<const VoxelGrid*> gts{&g0, &g1};
  auto loss = [&] { return bce_batch<double>(dec.forward(z), gts, nullptr); };
  zero(dec);
  Tensor<double> dprob;
  bce_batch(dec.forward(z), gts, &dprob);
  const auto dz = dec.backward(dprob);
  check_param_grads(dec.params(), loss);
  for (std::size_t i = 0; i < z.size(); i += 3) {
    const double keep = z[i];
    z[i] = keep + 1e-6;
    const double up = loss();
    z[i] = keep - 1e-6;
    const double down = loss();
    z[i] = keep;
    EXPECT_LT(rel_error(dz[i], (up - down) / 2e-6), 1e-3);
  }
}

TEST(GradCheck, PriorFusion) {
  PriorModule<double> m({8, 2, 12}, 6, 5);
  std::mt19937_64 rng(4);
  m.init(rng);
  mpcn::testing::jitter(m.params(), rng, 0.2);
  auto q = random_tensor<double>({3, 6}, rng);
  const auto keys = random_tensor<double>({3, 3, 6}, rng);
  auto v = random_tensor<double>({4, 5}, rng);
  const std::vector<int> idx{0, 1, 2, 3, -1, 1, -1, -1, -1};
  const auto w = random_tensor<double>({3, 8}, rng);
  for (auto fusion : {PriorFusion::kAttention, PriorFusion::kAverage}) {
    auto loss = [&] { return dot(m.forward(q, keys, idx, v, fusion), w); };
    for (auto* p : m.params()) p->zero_grad();
    m.forward(q, keys, idx, v, fusion);
    const auto g = m.backward(w);
    check_param_grads(m.params(), loss);
    for (auto* t : {&q, &v}) {
      const auto& an = t == &q ? g.query : g.shape_feats;
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double keep = (*t)[i];
        (*t)[i] = keep + 1e-6;
        const double up = loss();
        (*t)[i] = keep - 1e-6;
        const double down = loss();
        (*t)[i] = keep;
        EXPECT_LT(rel_error(an[i], (up - down) / 2e-6), 1e-3);
      }
    }
  }
}

TEST(GradCheck, FullModelTotalLoss) {
  const auto spec = ModelSpec::tiny();
  Model<double> model(spec);
  model.init(5);
  std::mt19937_64 rng(6);
  mpcn::testing::jitter(model.params(), rng);
  const int batch = 3;
  const auto images = random_tensor<double>({batch, 1, 8, 8}, rng, 0, 1);
  std::vector<VoxelGrid> grids;
  for (int b = 0; b < batch; ++b) grids.push_back(random_grid(8, rng));
  const std::vector<const VoxelGrid*> gts{&grids[0], &grids[1], &grids[2]};
  PriorBatch<double> mem;
  mem.keys = random_tensor<double>({batch, 2, spec.image.embed_dim}, rng);
  mem.value_index = {0, 1, 2, -1, 1, 1};
  mem.shape_voxels = binary_volume(3, 8, rng);
  const std::vector<double> dist{0, 0.03, 0.5, 0.03, 0, 0.06, 0.5, 0.06, 0};
  const double lambda = 0.5;

  for (auto mode : {PriorMode::kAttention, PriorMode::kAverage, PriorMode::kNone}) {
    auto loss = [&] {
      const auto out = model.forward(images, mem, mode);
      return total_loss(bce_batch<double>(out.prob, gts, nullptr),
                        contrastive_3d<double>(out.features, dist, {}, nullptr).loss, lambda);
    };
    model.zero_grad();
    const auto out = model.forward(images, mem, mode);
    Tensor<double> dprob, dfeat;
    bce_batch(out.prob, gts, &dprob);
    contrastive_3d(out.features, dist, {}, &dfeat);
    for (auto& g : dfeat.values()) g *= lambda;
    model.backward(dprob, &dfeat);
    const double worst = check_param_grads(model.params(), loss, 6);
    EXPECT_LT(worst, 1e-3);
    if (mode == PriorMode::kNone) {
      for (auto* p : model.shape_encoder().params())
        for (double g : p->grad.values()) EXPECT_EQ(g, 0.0);
    }
  }
}
