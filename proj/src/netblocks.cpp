#include "mpcn/netblocks.hpp"

#include "mpcn/errors.hpp"

namespace mpcn {
namespace {

int conv3_side(int n, int stride) { return (n - 1) / stride + 1; }
int pool3_side(int n) { return (n - 1) / 2 + 1; }

}  // namespace

int EncoderSpec::backbone_side() const {
  int n = image_size;
  for (const auto& st : backbone) n = conv3_side(n, st.stride);
  return n;
}

int EncoderSpec::head_side() const { return pool3_side(backbone_side()) / 2; }

int ShapeEncoderSpec::output_side() const {
  const int after_first = (resolution + 4 - 5) / first_stride + 1;
  return after_first / 2 / 2;
}

void ModelSpec::validate() const {
  auto fail = [this](const std::string& m) { throw ConfigError("model preset '" + preset + "': " + m); };
  if (resolution != 8 && resolution != 32) fail("resolution must be 8 or 32");
  if (image.image_size < 4 || image.embed_dim <= 0) fail("bad image encoder sizes");
  for (const auto& st : image.backbone)
    if (st.channels <= 0 || st.stride <= 0) fail("bad backbone stage");
  for (int c : image.head_channels)
    if (c <= 0) fail("bad encoder head channel");
  if (image.head_side() < 1) fail("image too small for the encoder head");
  if (shape.resolution != resolution) fail("shape encoder resolution differs from model resolution");
  for (int c : shape.channels)
    if (c <= 0) fail("bad shape encoder channel");
  if (shape.output_side() < 1 || shape.feature_dim <= 0) fail("shape encoder collapses the volume");
  if (prior.width <= 0 || prior.heads <= 0 || prior.width % prior.heads != 0)
    fail("prior width must be divisible by the head count");
  if (prior.ffn_hidden <= 0) fail("bad prior feed-forward width");
  if (decoder.channels.empty() || decoder.channels.back() != 1) fail("decoder must end with one channel");
  if (decoder.output_resolution() != resolution) fail("decoder output resolution differs from model resolution");
  if (decoder.input_dim != image.embed_dim + prior.width) fail("decoder input must be image width + prior width");
}

ModelSpec ModelSpec::paper() {
  ModelSpec s;
  s.preset = "paper";
  s.resolution = 32;
  s.image.image_size = 224;
  s.image.backbone = {{64, 2}, {128, 2}, {256, 2}, {512, 2}, {512, 2}};
  s.image.head_channels = {512, 256, 128};
  s.image.embed_dim = 2048;
  s.shape = {32, {32, 64, 128, 128}, 2, 2048};
  s.prior = {2048, 2, 4096};
  s.decoder = {4096, {256, 128, 32, 8, 1}};
  return s;
}

ModelSpec ModelSpec::desk() {
  ModelSpec s;
  s.preset = "desk";
  s.resolution = 32;
  s.image.image_size = 32;
  s.image.backbone = {{16, 2}, {16, 1}, {32, 2}, {32, 1}};
  s.image.head_channels = {64, 48, 32};
  s.image.embed_dim = 128;
  s.shape = {32, {8, 16, 32, 32}, 2, 128};
  s.prior = {128, 2, 256};
  s.decoder = {256, {64, 32, 16, 8, 1}};
  return s;
}

ModelSpec ModelSpec::tiny() {
  ModelSpec s;
  s.preset = "tiny";
  s.resolution = 8;
  s.image.image_size = 8;
  s.image.backbone = {{4, 2}};
  s.image.head_channels = {4, 4, 4};
  s.image.embed_dim = 8;
  s.shape = {8, {2, 2, 4, 4}, 1, 8};
  s.prior = {8, 2, 16};
  s.decoder = {16, {4, 2, 1}};
  return s;
}

ModelSpec ModelSpec::by_name(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  if (name == "tiny") return tiny();
  throw ConfigError("unknown preset '" + name + "' (expected paper, desk or tiny)");
}

std::size_t parameter_count(const EncoderSpec& s) {
  std::size_t n = 0;
  int in = 1;
  for (const auto& st : s.backbone) {
    n += static_cast<std::size_t>(st.channels) * in * 9 + st.channels;
    in = st.channels;
  }
  for (int c : s.head_channels) {
    n += static_cast<std::size_t>(c) * in * 9 + c;
    in = c;
  }
  const std::size_t flat = static_cast<std::size_t>(in) * s.head_side() * s.head_side();
  return n + flat * s.embed_dim + s.embed_dim;
}

std::size_t parameter_count(const ShapeEncoderSpec& s) {
  const int kernels[4] = {5, 3, 3, 3};
  std::size_t n = 0;
  int in = 1;
  for (int i = 0; i < 4; ++i) {
    n += static_cast<std::size_t>(s.channels[i]) * in * kernels[i] * kernels[i] * kernels[i] + s.channels[i];
    in = s.channels[i];
  }
  const std::size_t side = static_cast<std::size_t>(s.output_side());
  return n + static_cast<std::size_t>(in) * side * side * side * s.feature_dim + s.feature_dim;
}

std::size_t parameter_count(const DecoderSpec& s) {
  std::size_t n = 0;
  int in = s.input_dim;
  for (int c : s.channels) {
    n += static_cast<std::size_t>(in) * c * 64 + c;
    in = c;
  }
  return n;
}

std::size_t parameter_count(const PriorConfig& p, int query_dim, int value_dim) {
  const std::size_t w = static_cast<std::size_t>(p.width);
  const std::size_t h = static_cast<std::size_t>(p.ffn_hidden);
  return (query_dim * w + w) * 2 + (value_dim * w + w) + (w * w + w) + 2 * w + (w * h + h) + (h * w + w) + 2 * w;
}

std::size_t parameter_count(const ModelSpec& s) {
  return parameter_count(s.image) + parameter_count(s.shape) + parameter_count(s.decoder) +
         parameter_count(s.prior, s.image.embed_dim, s.shape.feature_dim);
}

// ---------------------------------------------------------------- blocks

template <typename T>
ImageEncoder<T>::ImageEncoder(const EncoderSpec& spec) : spec_(spec) {
  int in = 1;
  int i = 0;
  for (const auto& st : spec.backbone) {
    auto& conv = net_.template add<Conv<T>>("image.backbone" + std::to_string(i), 2, in, st.channels, 3, st.stride, 1);
    if (i++ == 0) conv.set_input_grad(false);
    net_.template add<ReLU<T>>();
    in = st.channels;
  }
  for (int h = 0; h < 3; ++h) {
    net_.template add<Conv<T>>("image.head" + std::to_string(h), 2, in, spec.head_channels[h], 3, 1, 1);
    net_.template add<ReLU<T>>();
    in = spec.head_channels[h];
    if (h == 1) net_.template add<MaxPool<T>>(2, 3, 2, 1);
    if (h == 2) net_.template add<MaxPool<T>>(2, 2, 2, 0);
  }
  net_.template add<Linear<T>>("image.project", in * spec.head_side() * spec.head_side(), spec.embed_dim);
}

template <typename T>
Tensor<T> ImageEncoder<T>::forward(const Tensor<T>& images) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != spec_.image_size || images.dim(3) != spec_.image_size)
    throw ShapeError("encode_image: expected [B,1," + std::to_string(spec_.image_size) + "," +
                     std::to_string(spec_.image_size) + "], got " + images.shape_string());
  return net_.forward(images);
}

template <typename T>
ShapeEncoder<T>::ShapeEncoder(const ShapeEncoderSpec& spec) : spec_(spec) {
  const int kernels[4] = {5, 3, 3, 3};
  int in = 1;
  for (int i = 0; i < 4; ++i) {
    auto& conv = net_.template add<Conv<T>>("shape.conv" + std::to_string(i), 3, in, spec.channels[i], kernels[i],
                                            i == 0 ? spec.first_stride : 1, kernels[i] / 2);
    if (i == 0) conv.set_input_grad(false);
    net_.template add<LeakyReLU<T>>(T(0.2));
    if (i < 2) net_.template add<MaxPool<T>>(3, 2, 2, 0);
    in = spec.channels[i];
  }
  const int side = spec.output_side();
  net_.template add<Linear<T>>("shape.project", in * side * side * side, spec.feature_dim);
}

template <typename T>
Tensor<T> ShapeEncoder<T>::forward(const Tensor<T>& voxels) {
  const int r = spec_.resolution;
  if (voxels.rank() != 5 || voxels.dim(1) != 1 || voxels.dim(2) != r || voxels.dim(3) != r || voxels.dim(4) != r)
    throw ShapeError("encode_shape: expected [U,1," + std::to_string(r) + "^3], got " + voxels.shape_string());
  return net_.forward(voxels);
}

template <typename T>
ShapeDecoder<T>::ShapeDecoder(const DecoderSpec& spec) : spec_(spec) {
  net_.template add<Reshape<T>>(std::vector<int>{spec.input_dim, 1, 1, 1});
  int in = spec.input_dim;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    net_.template add<ConvTranspose3d<T>>("decoder.deconv" + std::to_string(i), in, spec.channels[i], 4, 2, 1);
    if (i + 1 < spec.channels.size())
      net_.template add<ReLU<T>>();
    else
      net_.template add<Sigmoid<T>>();
    in = spec.channels[i];
  }
}

template <typename T>
Tensor<T> ShapeDecoder<T>::forward(const Tensor<T>& embedding) {
  if (embedding.rank() != 2 || embedding.dim(1) != spec_.input_dim)
    throw ShapeError("decode_shape: expected [B," + std::to_string(spec_.input_dim) + "], got " +
                     embedding.shape_string());
  return net_.forward(embedding);
}

template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class ShapeEncoder<float>;
template class ShapeEncoder<double>;
template class ShapeDecoder<float>;
template class ShapeDecoder<double>;

}  // namespace mpcn
