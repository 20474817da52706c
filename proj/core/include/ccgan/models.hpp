#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ccgan/tensor.hpp"

namespace ccgan {

enum class Mode { kAttribute, kIdentity };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

/// Network widths and sizes. MNIST defaults; see face() for the 128x128,
/// 18-attribute layout.
struct ArchConfig {
  std::size_t image_channels = 1;
  std::size_t image_size = 28;
  /// Condition width d. In identity mode it must equal emb_dim.
  std::size_t cond_dim = 10;
  std::size_t gen_base = 32;
  std::size_t res_blocks = 4;
  std::size_t disc_base = 32;
  std::size_t emb_conv1 = 16;
  std::size_t emb_conv2 = 32;
  std::size_t emb_dim = 32;
  std::size_t emb_classes = 10;

  static ArchConfig mnist() { return {}; }
  static ArchConfig face();

  /// Throws ConfigError when sizes cannot be realised by the layer stack.
  void validate() const;

  bool operator==(const ArchConfig&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered parameter registry shared by all networks.
template <typename T>
class ParamSet {
 public:
  Tensor<T> add(std::string name, Shape shape);
  const std::vector<NamedTensor<T>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  /// Weights ~ N(0, std) in registration order, biases (rank 1) zero.
  void init_gaussian(std::mt19937_64& rng, double std = 0.02);
  std::size_t count() const;

 private:
  std::vector<NamedTensor<T>> entries_;
};

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Encoder (2 stride-2 convs) -> residual trunk -> decoder (2 stride-2
/// transposed convs) -> 3x3 conv with tanh head. With cond_dim > 0 the
/// condition is tiled to the image size and concatenated with the input.
template <typename T>
class Generator {
 public:
  Generator(std::size_t image_channels, std::size_t cond_dim, std::size_t base,
            std::size_t res_blocks);

  /// image [N,C,H,W]; condition [N,d] (ignored/undefined when d == 0).
  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& condition = {}) const;

  std::size_t cond_dim() const noexcept { return cond_dim_; }
  std::size_t input_channels() const noexcept { return image_channels_ + cond_dim_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  ParamSet<T>& params() noexcept { return params_; }

 private:
  std::size_t image_channels_;
  std::size_t cond_dim_;
  ParamSet<T> params_;
  Conv<T> enc1_, enc2_;
  std::vector<std::pair<Conv<T>, Conv<T>>> res_;
  Conv<T> dec1_, dec2_, out_;
};

/// Patch discriminator: conv1 (stride 2) -> [condition concat] -> three
/// stride-2 convs -> 1-channel score map, sigmoid of its mean.
template <typename T>
class Discriminator {
 public:
  Discriminator(std::size_t image_channels, std::size_t cond_dim, std::size_t base);

  /// Per-sample probability in (0,1), shape [N].
  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& condition = {}) const;
  /// conv1 activations with the tiled condition appended, [N, base + d, H/2, W/2].
  Tensor<T> conditioned_features(const Tensor<T>& image, const Tensor<T>& condition) const;

  std::size_t cond_dim() const noexcept { return cond_dim_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  ParamSet<T>& params() noexcept { return params_; }

 private:
  std::size_t image_channels_;
  std::size_t cond_dim_;
  ParamSet<T> params_;
  Conv<T> conv1_, conv2_, conv3_, conv4_, head_;
};

/// Small classifier whose tanh hidden layer is the identity embedding.
template <typename T>
class Embedder {
 public:
  explicit Embedder(const ArchConfig& arch);

  Tensor<T> embed(const Tensor<T>& image) const;
  Tensor<T> logits(const Tensor<T>& image) const;
  /// Argmax class per sample.
  std::vector<int> classify(const Tensor<T>& image) const;

  std::size_t dim() const noexcept { return dim_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  ParamSet<T>& params() noexcept { return params_; }

 private:
  std::size_t image_channels_;
  std::size_t dim_;
  ParamSet<T> params_;
  Conv<T> conv1_, conv2_, fc_, head_;
};

/// G_{X->Y}, G_{Y->X}, D_X, D_Y and, in identity mode, the frozen embedder.
template <typename T>
struct ModelBundle {
  ArchConfig arch;
  Mode mode = Mode::kAttribute;
  Generator<T> g_xy;
  Generator<T> g_yx;
  Discriminator<T> d_x;
  Discriminator<T> d_y;
  std::optional<Embedder<T>> embedder;

  ModelBundle(const ArchConfig& arch, Mode mode);

  /// Every tensor with its checkpoint name ("g_xy/enc1.weight", ...).
  std::vector<NamedTensor<T>> named_parameters() const;
  std::size_t trainable_count() const;
};

/// Fresh bundle with N(0, 0.02) weights and zero biases drawn from `seed`.
/// The embedder (identity mode) is attached separately.
template <typename T>
ModelBundle<T> init_params(std::uint64_t seed, Mode mode, const ArchConfig& arch);

/// Copies values of every parameter from src into dst (matching names/shapes).
template <typename T>
void copy_parameters(const ParamSet<T>& src, ParamSet<T>& dst);

/// Marks every parameter frozen (requires_grad = false).
template <typename T>
void freeze(ParamSet<T>& params);

}  // namespace ccgan
