#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccgan/models.hpp"
#include "ccgan/pnm.hpp"
#include "ccgan/tensor.hpp"

namespace ccgan {

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Windowed SSIM with a Gaussian window, averaged over every position where
/// the window fits ("valid") and, for multi-channel images, over channels.
/// Images are [C,H,W] (or [1,C,H,W]) with values on a [0, dynamic_range] scale.
double ssim(const Tensor<double>& a, const Tensor<double>& b, const SsimParams& params = {});

/// Maps [-1,1] network images onto [0,1].
Tensor<double> to_unit_range(const Tensor<float>& images);

/// Fraction of images the oracle classifies as the conditioning label.
double label_fidelity(const Tensor<float>& images, std::span<const int> labels,
                      const Embedder<float>& oracle);

/// Mean over images of mean|embed(image) - embed(exemplar)|. `exemplars`
/// is either one image per generated image or a single image for all.
double embedding_distance(const Tensor<float>& images, const Tensor<float>& exemplars,
                          const Embedder<float>& embedder);

struct EvalReport {
  std::size_t sample_count = 0;
  double mean_ssim = 0;
  std::vector<double> per_image_ssim;
  /// Mean per-pixel |x_rec - x| of forward-cycle reconstructions on [0,1].
  double cycle_l1 = 0;
  double label_fidelity = 0;
  std::optional<double> mean_embedding_l1;

  std::string to_text() const;
  static EvalReport parse(const std::string& text);
};

/// Row-major tiling of [N,C,H,W] images in [-1,1] with 1-pixel white
/// separators; unused cells stay black. C must be 1 or 3.
Raster render_grid(const Tensor<float>& images, std::size_t rows, std::size_t cols);
void emit_grid(const Tensor<float>& images, std::size_t rows, std::size_t cols,
               const std::filesystem::path& path);

}  // namespace ccgan
