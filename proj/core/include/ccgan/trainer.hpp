#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>

#include "ccgan/data.hpp"
#include "ccgan/losses.hpp"
#include "ccgan/models.hpp"
#include "ccgan/optimizer.hpp"

namespace ccgan {

struct TrainConfig {
  std::size_t iterations = 4000;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer;
  double lambda1 = 10.0;
  double lambda2 = 10.0;
  /// Weight of the identity loss in the G_{Y->X} objective (identity mode only).
  double identity_weight = 1.0;
  Mode mode = Mode::kAttribute;
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 500;
  std::size_t log_interval = 100;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Owns the model bundle, one optimizer per trainable network and the
/// sampling generator; executes conditional CycleGAN steps.
class Trainer {
 public:
  /// Identity mode requires `embedder`; it is frozen and kept in the bundle.
  Trainer(const ArchConfig& arch, const TrainConfig& config,
          std::optional<Embedder<float>> embedder = std::nullopt);

  /// One step on a prepared batch:
  ///  y_hat = G_xy(x), x_rec = G_yx(y_hat, z), x_hat = G_yx(y, z), y_rec = G_xy(x_hat);
  ///  rho_r = D_y(y), rho_f = D_y(y_hat), s_r = D_x(x, z), s_f = D_x(x_hat, z),
  ///  s_w = D_x(x, z_hat); then updates D_y, D_x, G_xy, G_yx in that order.
  /// All gradients are taken on this step's forward pass before any update.
  /// Throws NumericError naming the first non-finite term.
  LossBundle step(const Batch& batch);

  /// Draws the next batch from the trainer's generator.
  Batch next_batch(const LabeledImageSet& xset, const ConditionTable& xcond,
                   const LabeledImageSet& yset);

  ModelBundle<float>& bundle() noexcept { return bundle_; }
  const ModelBundle<float>& bundle() const noexcept { return bundle_; }
  const ArchConfig& arch() const noexcept { return bundle_.arch; }
  const TrainConfig& config() const noexcept { return config_; }
  std::uint64_t iteration() const noexcept { return iteration_; }
  void set_iteration(std::uint64_t it) noexcept { iteration_ = it; }
  /// Extends (or shortens) the run's target iteration count, e.g. on resume.
  void set_total_iterations(std::size_t iterations);
  std::mt19937_64& rng() noexcept { return rng_; }
  const std::mt19937_64& rng() const noexcept { return rng_; }

  Optimizer<float>& opt_g_xy() noexcept { return opt_g_xy_; }
  Optimizer<float>& opt_g_yx() noexcept { return opt_g_yx_; }
  Optimizer<float>& opt_d_x() noexcept { return opt_d_x_; }
  Optimizer<float>& opt_d_y() noexcept { return opt_d_y_; }
  const Optimizer<float>& opt_g_xy() const noexcept { return opt_g_xy_; }
  const Optimizer<float>& opt_g_yx() const noexcept { return opt_g_yx_; }
  const Optimizer<float>& opt_d_x() const noexcept { return opt_d_x_; }
  const Optimizer<float>& opt_d_y() const noexcept { return opt_d_y_; }

 private:
  TrainConfig config_;
  ModelBundle<float> bundle_;
  Optimizer<float> opt_g_xy_, opt_g_yx_, opt_d_x_, opt_d_y_;
  std::mt19937_64 rng_;
  std::uint64_t iteration_ = 0;
};

/// Tab-separated loss history: header "iter<TAB>rho_r<TAB>...<TAB>L_id".
std::string loss_log_header();
std::string loss_log_line(std::uint64_t iteration, const LossBundle& losses);
/// Parses a loss log written by train_loop; throws DataError when malformed.
std::vector<std::pair<std::uint64_t, LossBundle>> read_loss_log(const std::filesystem::path& path);

struct TrainLoopHooks {
  /// After every step.
  std::function<void(std::uint64_t, const LossBundle&)> on_step;
  /// After each checkpoint write (every checkpoint_interval and at the end).
  std::function<void(std::uint64_t)> on_checkpoint;
};

inline constexpr const char* kCheckpointFile = "checkpoint.ccgn";
inline constexpr const char* kLossLogFile = "losses.tsv";

/// Runs steps iteration()+1 .. config.iterations, appending to
/// out_dir/losses.tsv and writing out_dir/checkpoint.ccgn. A trainer restored
/// from a checkpoint continues exactly where the original run was; log lines
/// beyond the restored iteration are dropped first.
void train_loop(Trainer& trainer, const LabeledImageSet& xset, const ConditionTable& xcond,
                const LabeledImageSet& yset, const std::filesystem::path& out_dir,
                const TrainLoopHooks& hooks = {});

struct PretrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
  double accuracy_floor = 0.95;
  /// 0 = use every training image.
  std::size_t max_train = 0;
};

struct PretrainResult {
  Embedder<float> embedder;
  double heldout_accuracy = 0;
};

/// Trains the embedder-classifier on labelled high-res images and freezes
/// it. Throws TrainingError if held-out accuracy stays below the floor.
PretrainResult pretrain_embedder(const ArchConfig& arch, const LabeledImageSet& train,
                                 const LabeledImageSet& heldout, const PretrainConfig& config,
                                 const std::function<void(std::size_t, double)>& on_epoch = {});

/// Held-out accuracy of an embedder-classifier.
double classifier_accuracy(const Embedder<float>& embedder, const LabeledImageSet& set);

}  // namespace ccgan
