#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "ccgan/models.hpp"
#include "ccgan/tensor.hpp"

namespace ccgan {

enum class Domain { kHighRes, kLowRes };

enum class ConditionKind { kOneHot, kBinary, kEmbedding };

/// The condition z fed to G_{Y->X} and D_X.
struct ConditionVector {
  std::vector<float> values;
  ConditionKind kind = ConditionKind::kOneHot;

  static ConditionVector one_hot(int label, std::size_t dim);
  std::size_t dim() const noexcept { return values.size(); }
  /// Throws DataError if the values violate the kind's constraints.
  void validate() const;
  bool operator==(const ConditionVector&) const = default;
};

/// Images in [-1,1] plus per-image labels. `attributes` is filled for
/// face-format sets (one binary vector per image) and empty for MNIST.
struct LabeledImageSet {
  Tensor<float> images;  // [count, C, H, W]
  std::vector<int> labels;
  std::vector<std::vector<std::uint8_t>> attributes;
  /// Position of each image in the file it was read from.
  std::vector<std::size_t> source_index;
  Domain domain = Domain::kHighRes;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  /// Stacks the selected images into [indices.size(), C, H, W].
  Tensor<float> gather(std::span<const std::size_t> indices) const;
  LabeledImageSet subset(std::span<const std::size_t> indices) const;
};

/// Reads an IDX image file (magic 2051) and label file (magic 2049).
/// Pixels map affinely from [0,255] to [-1,1].
LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

/// Writes images (clamped to [-1,1], quantised to bytes) and labels as IDX files.
void write_idx(const LabeledImageSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Face-format set: `table` has one row per image, "<file> b1 ... b18" with
/// b in {0,1}; files are binary PGM/PPM resolved relative to `image_dir`.
LabeledImageSet load_attribute_table(const std::filesystem::path& table,
                                     const std::filesystem::path& image_dir,
                                     std::size_t attribute_count = 18);

/// factor x factor average pooling followed by bilinear upsampling back to
/// the original canvas. The result is tagged Domain::kLowRes.
LabeledImageSet make_low_res(const LabeledImageSet& set, std::size_t factor);

/// Disjoint unpaired pools: a seeded permutation splits `train` in halves;
/// the first half stays high-res (X), the second becomes low-res (Y).
struct UnpairedPools {
  LabeledImageSet x;
  LabeledImageSet y;
};
UnpairedPools split_unpaired(const LabeledImageSet& train, std::size_t low_res_factor,
                             std::uint64_t seed);

/// z for one image: one-hot label (MNIST) or binary attributes in attribute
/// mode, the embedder's output in identity mode.
ConditionVector condition_of(const LabeledImageSet& set, std::size_t index, Mode mode,
                             std::size_t cond_dim, const Embedder<float>* embedder = nullptr);

/// Batched form of condition_of, [indices.size(), d].
Tensor<float> conditions_of(const LabeledImageSet& set, std::span<const std::size_t> indices,
                            Mode mode, std::size_t cond_dim,
                            const Embedder<float>* embedder = nullptr);

/// Precomputed conditions for a whole pool, indexed like the pool.
class ConditionTable {
 public:
  ConditionTable(const LabeledImageSet& set, Mode mode, std::size_t cond_dim,
                 const Embedder<float>* embedder = nullptr);

  Mode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

 private:
  Mode mode_;
  std::size_t dim_;
  std::size_t rows_;
  std::vector<float> values_;
};

/// One Algorithm-1 minibatch.
struct Batch {
  Tensor<float> x;      // high-res images
  Tensor<float> z;      // conditions matched with x
  Tensor<float> z_hat;  // mismatched conditions, z_hat[i] != z[i]
  Tensor<float> y;      // unpaired low-res images
  std::vector<std::size_t> x_index;
  std::vector<std::size_t> y_index;
};

/// x and its z from the X pool, y independently from the Y pool, z_hat by the
/// mismatch rule: attribute mode picks another sample's condition from the
/// batch (redrawn until it differs, falling back to a random different label
/// or a flipped attribute bit); identity mode uses the embedding of a
/// different random X image.
Batch sample_batch(const LabeledImageSet& xset, const ConditionTable& xcond,
                   const LabeledImageSet& yset, std::size_t batch, std::mt19937_64& rng);

}  // namespace ccgan
