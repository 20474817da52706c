#include "ccgan/models.hpp"

#include <algorithm>

#include "ccgan/ops.hpp"

namespace ccgan {

std::string to_string(Mode mode) { return mode == Mode::kAttribute ? "attribute" : "identity"; }

Mode parse_mode(const std::string& text) {
  if (text == "attribute") return Mode::kAttribute;
  if (text == "identity") return Mode::kIdentity;
  throw ConfigError("unknown mode '" + text + "' (expected attribute or identity)");
}

ArchConfig ArchConfig::face() {
  ArchConfig a;
  a.image_channels = 3;
  a.image_size = 128;
  a.cond_dim = 18;
  a.gen_base = 64;
  a.disc_base = 64;
  a.emb_dim = 256;
  a.emb_classes = 2;
  return a;
}

void ArchConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("arch: " + m); };
  if (image_channels == 0) fail("image_channels must be >= 1");
  // The discriminator normalises the outputs of its second and third stride-2
  // convs; below 12 pixels the third one is 1x1 and normalises to zero.
  if (image_size < 12 || image_size % 4 != 0) fail("image_size must be a multiple of 4 and >= 12");
  if (gen_base == 0 || disc_base == 0) fail("network widths must be >= 1");
  if (emb_conv1 == 0 || emb_conv2 == 0 || emb_dim == 0) fail("embedder widths must be >= 1");
  if (emb_classes < 2) fail("emb_classes must be >= 2");
}

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> ParamSet<T>::add(std::string name, Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  entries_.push_back({std::move(name), t});
  return t;
}

template <typename T>
std::vector<Tensor<T>> ParamSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename T>
void ParamSet<T>::init_gaussian(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& e : entries_) {
    Tensor<T> t = e.tensor;
    if (t.rank() == 1) {
      std::fill(t.data().begin(), t.data().end(), T(0));
    } else {
      for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    }
  }
}

template <typename T>
std::size_t ParamSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

namespace {

template <typename T>
Conv<T> add_conv(ParamSet<T>& ps, const std::string& name, std::size_t cout, std::size_t cin,
                 std::size_t k) {
  return {ps.add(name + ".weight", {cout, cin, k, k}), ps.add(name + ".bias", {cout})};
}

template <typename T>
Conv<T> add_tconv(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout,
                  std::size_t k) {
  return {ps.add(name + ".weight", {cin, cout, k, k}), ps.add(name + ".bias", {cout})};
}

template <typename T>
Conv<T> add_dense(ParamSet<T>& ps, const std::string& name, std::size_t out, std::size_t in) {
  return {ps.add(name + ".weight", {out, in}), ps.add(name + ".bias", {out})};
}

template <typename T>
Tensor<T> with_condition(const Tensor<T>& features, const Tensor<T>& condition,
                         std::size_t cond_dim, const char* who) {
  if (cond_dim == 0) return features;
  if (!condition.defined() || condition.rank() != 2 || condition.dim(1) != cond_dim ||
      condition.dim(0) != features.dim(0)) {
    throw ConfigError(std::string(who) + ": expected condition of shape [" +
                      std::to_string(features.dim(0)) + "," + std::to_string(cond_dim) +
                      "], got " +
                      (condition.defined() ? shape_str(condition.shape()) : "<none>"));
  }
  return concat_channels(features, replicate_condition(condition, features.dim(2), features.dim(3)));
}

template <typename T>
void check_image(const Tensor<T>& image, std::size_t channels, const char* who) {
  if (!image.defined() || image.rank() != 4 || image.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected image [N," + std::to_string(channels) +
                     ",H,W], got " + (image.defined() ? shape_str(image.shape()) : "<none>"));
  }
}

}  // namespace

// --------------------------------------------------------------------------

template <typename T>
Generator<T>::Generator(std::size_t image_channels, std::size_t cond_dim, std::size_t base,
                        std::size_t res_blocks)
    : image_channels_(image_channels), cond_dim_(cond_dim) {
  enc1_ = add_conv(params_, "enc1", base, image_channels + cond_dim, 3);
  enc2_ = add_conv(params_, "enc2", 2 * base, base, 3);
  for (std::size_t i = 0; i < res_blocks; ++i) {
    const auto prefix = "res" + std::to_string(i);
    auto a = add_conv(params_, prefix + ".conv1", 2 * base, 2 * base, 3);
    auto b = add_conv(params_, prefix + ".conv2", 2 * base, 2 * base, 3);
    res_.emplace_back(a, b);
  }
  dec1_ = add_tconv(params_, "dec1", 2 * base, base, 3);
  dec2_ = add_tconv(params_, "dec2", base, base, 3);
  out_ = add_conv(params_, "out", image_channels, base, 3);
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& image, const Tensor<T>& condition) const {
  check_image(image, image_channels_, "generator");
  Tensor<T> h = with_condition(image, condition, cond_dim_, "generator");
  h = relu(instance_norm(conv2d(h, enc1_.weight, enc1_.bias, 2, 1)));
  h = relu(instance_norm(conv2d(h, enc2_.weight, enc2_.bias, 2, 1)));
  for (const auto& [a, b] : res_) {
    Tensor<T> r = relu(instance_norm(conv2d(h, a.weight, a.bias, 1, 1)));
    r = instance_norm(conv2d(r, b.weight, b.bias, 1, 1));
    h = add(h, r);
  }
  h = relu(instance_norm(conv_transpose2d(h, dec1_.weight, dec1_.bias, 2, 1, 1)));
  h = relu(instance_norm(conv_transpose2d(h, dec2_.weight, dec2_.bias, 2, 1, 1)));
  return tanh(conv2d(h, out_.weight, out_.bias, 1, 1));
}

// --------------------------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(std::size_t image_channels, std::size_t cond_dim,
                                std::size_t base)
    : image_channels_(image_channels), cond_dim_(cond_dim) {
  conv1_ = add_conv(params_, "conv1", base, image_channels, 3);
  conv2_ = add_conv(params_, "conv2", 2 * base, base + cond_dim, 3);
  conv3_ = add_conv(params_, "conv3", 4 * base, 2 * base, 3);
  conv4_ = add_conv(params_, "conv4", 4 * base, 4 * base, 3);
  head_ = add_conv(params_, "head", 1, 4 * base, 3);
}

template <typename T>
Tensor<T> Discriminator<T>::conditioned_features(const Tensor<T>& image,
                                                 const Tensor<T>& condition) const {
  check_image(image, image_channels_, "discriminator");
  Tensor<T> h = leaky_relu(conv2d(image, conv1_.weight, conv1_.bias, 2, 1), T(0.2));
  return with_condition(h, condition, cond_dim_, "discriminator");
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& image, const Tensor<T>& condition) const {
  Tensor<T> h = conditioned_features(image, condition);
  h = leaky_relu(instance_norm(conv2d(h, conv2_.weight, conv2_.bias, 2, 1)), T(0.2));
  h = leaky_relu(instance_norm(conv2d(h, conv3_.weight, conv3_.bias, 2, 1)), T(0.2));
  h = leaky_relu(conv2d(h, conv4_.weight, conv4_.bias, 2, 1), T(0.2));
  Tensor<T> score_map = conv2d(h, head_.weight, head_.bias, 1, 1);
  return sigmoid(reshape(spatial_mean(score_map), {image.dim(0)}));
}

// --------------------------------------------------------------------------

template <typename T>
Embedder<T>::Embedder(const ArchConfig& arch)
    : image_channels_(arch.image_channels), dim_(arch.emb_dim) {
  const std::size_t s = arch.image_size / 4;
  conv1_ = add_conv(params_, "conv1", arch.emb_conv1, arch.image_channels, 3);
  conv2_ = add_conv(params_, "conv2", arch.emb_conv2, arch.emb_conv1, 3);
  fc_ = add_dense(params_, "fc", arch.emb_dim, arch.emb_conv2 * s * s);
  head_ = add_dense(params_, "head", arch.emb_classes, arch.emb_dim);
}

template <typename T>
Tensor<T> Embedder<T>::embed(const Tensor<T>& image) const {
  check_image(image, image_channels_, "embedder");
  Tensor<T> h = avg_pool2d(relu(conv2d(image, conv1_.weight, conv1_.bias, 1, 1)), 2);
  h = avg_pool2d(relu(conv2d(h, conv2_.weight, conv2_.bias, 1, 1)), 2);
  h = reshape(h, {h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  return tanh(linear(h, fc_.weight, fc_.bias));
}

template <typename T>
Tensor<T> Embedder<T>::logits(const Tensor<T>& image) const {
  return linear(embed(image), head_.weight, head_.bias);
}

template <typename T>
std::vector<int> Embedder<T>::classify(const Tensor<T>& image) const {
  Tensor<T> lg = logits(image);
  const std::size_t n = lg.dim(0), k = lg.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lg.data().data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

// --------------------------------------------------------------------------

template <typename T>
ModelBundle<T>::ModelBundle(const ArchConfig& a, Mode m)
    : arch(a),
      mode(m),
      g_xy(a.image_channels, 0, a.gen_base, a.res_blocks),
      g_yx(a.image_channels, a.cond_dim, a.gen_base, a.res_blocks),
      d_x(a.image_channels, a.cond_dim, a.disc_base),
      d_y(a.image_channels, 0, a.disc_base) {
  a.validate();
  if (a.cond_dim == 0) throw ConfigError("arch: cond_dim must be >= 1");
  if (m == Mode::kIdentity && a.cond_dim != a.emb_dim) {
    throw ConfigError("identity mode needs cond_dim == emb_dim (" + std::to_string(a.cond_dim) +
                      " vs " + std::to_string(a.emb_dim) + ")");
  }
}

template <typename T>
std::vector<NamedTensor<T>> ModelBundle<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  auto append = [&out](const std::string& prefix, const ParamSet<T>& ps) {
    for (const auto& e : ps.entries()) out.push_back({prefix + "/" + e.name, e.tensor});
  };
  append("g_xy", g_xy.params());
  append("g_yx", g_yx.params());
  append("d_x", d_x.params());
  append("d_y", d_y.params());
  if (embedder) append("embedder", embedder->params());
  return out;
}

template <typename T>
std::size_t ModelBundle<T>::trainable_count() const {
  return g_xy.params().count() + g_yx.params().count() + d_x.params().count() +
         d_y.params().count();
}

template <typename T>
ModelBundle<T> init_params(std::uint64_t seed, Mode mode, const ArchConfig& arch) {
  ModelBundle<T> bundle(arch, mode);
  std::mt19937_64 rng(seed);
  bundle.g_xy.params().init_gaussian(rng);
  bundle.g_yx.params().init_gaussian(rng);
  bundle.d_x.params().init_gaussian(rng);
  bundle.d_y.params().init_gaussian(rng);
  return bundle;
}

template <typename T>
void copy_parameters(const ParamSet<T>& src, ParamSet<T>& dst) {
  const auto& s = src.entries();
  const auto& d = dst.entries();
  if (s.size() != d.size()) throw ConfigError("copy_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].name != d[i].name || s[i].tensor.shape() != d[i].tensor.shape()) {
      throw ConfigError("copy_parameters: mismatch at " + d[i].name);
    }
    Tensor<T> dt = d[i].tensor;
    std::copy(s[i].tensor.data().begin(), s[i].tensor.data().end(), dt.data().begin());
  }
}

template <typename T>
void freeze(ParamSet<T>& params) {
  for (const auto& e : params.entries()) {
    Tensor<T> t = e.tensor;
    t.set_requires_grad(false);
  }
}

#define CCGAN_INSTANTIATE_MODELS(T)                                          \
  template class ParamSet<T>;                                                \
  template class Generator<T>;                                               \
  template class Discriminator<T>;                                           \
  template class Embedder<T>;                                                \
  template struct ModelBundle<T>;                                            \
  template ModelBundle<T> init_params<T>(std::uint64_t, Mode, const ArchConfig&); \
  template void copy_parameters(const ParamSet<T>&, ParamSet<T>&);           \
  template void freeze(ParamSet<T>&);

CCGAN_INSTANTIATE_MODELS(float)
CCGAN_INSTANTIATE_MODELS(double)

#undef CCGAN_INSTANTIATE_MODELS

}  // namespace ccgan
