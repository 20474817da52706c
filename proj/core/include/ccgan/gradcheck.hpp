#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ccgan/tensor.hpp"

namespace ccgan {

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. Returns the maximum over checked entries of
/// |a - b| / max(|a|, |b|, 1e-8).
///
/// `f` must be deterministic; it is evaluated once on a tape and twice per
/// perturbed entry without one.
double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double eps = 1e-5);

/// Same check for a nullary function of several leaf tensors (typically
/// network parameters). When `max_entries` is non-zero, at most that many
/// evenly strided entries are probed per tensor.
double finite_diff_check(const std::function<Tensor<double>()>& f,
                         std::span<const Tensor<double>> wrt, double eps = 1e-5,
                         std::size_t max_entries = 0);


struct FiniteDiffStats {
  double max_rel_error = 0;
  std::size_t checked = 0;
  /// Entries left out because f is not smooth within +-eps there (a ReLU or
  /// |.| kink is crossed): the one-sided difference quotients disagree.
  std::size_t skipped = 0;
};

/// Nullary check with optional kink screening; the screen never alters the
/// comparison at smooth points.
FiniteDiffStats finite_diff_stats(const std::function<Tensor<double>()>& f,
                                  std::span<const Tensor<double>> wrt, double eps = 1e-5,
                                  std::size_t max_entries = 0, bool skip_nonsmooth = false);

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double tolerance = 1e-4;
  /// Skipped entries may not exceed 5% of those probed.
  bool passed() const { return max_rel_error < tolerance && skipped * 20 <= checked + skipped; }
};

/// Every differentiable primitive on small random float64 tensors (inputs
/// kept clear of kinks), plus end-to-end generator + loss composites.
std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed = 1);

}  // namespace ccgan
