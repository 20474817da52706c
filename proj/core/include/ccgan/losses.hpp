#pragma once

#include <array>
#include <string>
#include <string_view>

#include "ccgan/tensor.hpp"

// Objectives of one conditional CycleGAN step. Every loss is written for
// minimisation: discriminators minimise their negative log-likelihood,
// generators minimise the non-saturating -log D(fake). Scores are clamped
// to [kScoreClamp, 1 - kScoreClamp] before any log.
namespace ccgan {

inline constexpr double kScoreClamp = 1e-7;

/// L_DY = -mean[log(rho_r) + log(1 - rho_f)]; scores are per-sample [N].
template <typename T>
Tensor<T> d_loss_unconditional(const Tensor<T>& rho_r, const Tensor<T>& rho_f);

/// L_DX = -mean{log(s_r) + [log(1 - s_f) + log(1 - s_w)] / 2}.
/// s_r: real image with its own condition; s_f: generated image; s_w: real
/// image with a mismatched condition.
template <typename T>
Tensor<T> d_loss_conditional(const Tensor<T>& s_r, const Tensor<T>& s_f, const Tensor<T>& s_w);

/// lambda1 * mean|x_rec - x| + lambda2 * mean|y_rec - y|.
template <typename T>
Tensor<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& x_rec, const Tensor<T>& y,
                     const Tensor<T>& y_rec, T lambda1, T lambda2);

/// Mean absolute difference of two embedding batches [N,e].
template <typename T>
Tensor<T> identity_loss(const Tensor<T>& emb_fake, const Tensor<T>& emb_target);

template <typename T>
struct GeneratorLosses {
  Tensor<T> g_xy;  // -mean log(rho_f) + L_c
  Tensor<T> g_yx;  // -mean log(s_f) + L_c + w_id * L_id
};

/// `identity` may be undefined (attribute mode); it is then treated as 0.
template <typename T>
GeneratorLosses<T> g_losses(const Tensor<T>& rho_f, const Tensor<T>& s_f, const Tensor<T>& cycle,
                            const Tensor<T>& identity, T w_id);

/// Per-step scalars. Scores are batch means.
struct LossBundle {
  double rho_r = 0, rho_f = 0, s_r = 0, s_f = 0, s_w = 0;
  double l_dy = 0, l_dx = 0, l_gxy = 0, l_gyx = 0;
  double l_c = 0, l_id = 0;

  static constexpr std::array<std::string_view, 11> kColumns = {
      "rho_r", "rho_f", "s_r", "s_f", "s_w", "L_DY", "L_DX", "L_GXY", "L_GYX", "L_c", "L_id"};

  std::array<double, 11> values() const {
    return {rho_r, rho_f, s_r, s_f, s_w, l_dy, l_dx, l_gxy, l_gyx, l_c, l_id};
  }
  static LossBundle from_values(const std::array<double, 11>& v);

  /// Name of the first non-finite field, or empty when all are finite.
  std::string first_non_finite() const;

  bool operator==(const LossBundle&) const = default;
};

}  // namespace ccgan
