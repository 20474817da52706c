#include "ccgan/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ccgan/checkpoint.hpp"
#include "ccgan/error.hpp"
#include "ccgan/metrics.hpp"
#include "ccgan/ops.hpp"
#include "ccgan/tape.hpp"

namespace ccgan {

void TrainConfig::validate() const {
  if (iterations == 0) throw ConfigError("train.iterations must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1)) throw ConfigError("train.beta1 must be in [0,1)");
  if (!(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) throw ConfigError("train.beta2 must be in [0,1)");
  if (!(optimizer.epsilon > 0)) throw ConfigError("train.epsilon must be > 0");
  if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ConfigError("train.lambda1/lambda2 must be >= 0");
  if (!(identity_weight >= 0)) throw ConfigError("train.identity_weight must be >= 0");
  if (checkpoint_interval == 0) throw ConfigError("train.checkpoint_interval must be >= 1");
  if (log_interval == 0) throw ConfigError("train.log_interval must be >= 1");
}

namespace {

ModelBundle<float> make_bundle(const ArchConfig& arch, const TrainConfig& config,
                               std::optional<Embedder<float>> embedder) {
  config.validate();
  ModelBundle<float> bundle = init_params<float>(config.seed, config.mode, arch);
  if (config.mode == Mode::kIdentity) {
    if (!embedder) throw ConfigError("identity mode needs a pretrained embedder");
    if (embedder->dim() != arch.cond_dim) {
      throw ConfigError("embedder dimension " + std::to_string(embedder->dim()) +
                        " does not match cond_dim " + std::to_string(arch.cond_dim));
    }
    freeze(embedder->params());
    bundle.embedder = std::move(embedder);
  }
  return bundle;
}

double mean_of(const Tensor<float>& t) {
  double s = 0;
  for (float v : t.data()) s += v;
  return t.numel() ? s / static_cast<double>(t.numel()) : 0.0;
}

}  // namespace

Trainer::Trainer(const ArchConfig& arch, const TrainConfig& config,
                 std::optional<Embedder<float>> embedder)
    : config_(config),
      bundle_(make_bundle(arch, config, std::move(embedder))),
      opt_g_xy_(config.optimizer, bundle_.g_xy.params().tensors()),
      opt_g_yx_(config.optimizer, bundle_.g_yx.params().tensors()),
      opt_d_x_(config.optimizer, bundle_.d_x.params().tensors()),
      opt_d_y_(config.optimizer, bundle_.d_y.params().tensors()),
      // Offset so batch sampling does not replay the initialisation stream.
      rng_(config.seed ^ 0x9e3779b97f4a7c15ULL) {}

void Trainer::set_total_iterations(std::size_t iterations) {
  TrainConfig c = config_;
  c.iterations = iterations;
  c.validate();
  config_ = c;
}

Batch Trainer::next_batch(const LabeledImageSet& xset, const ConditionTable& xcond,
                          const LabeledImageSet& yset) {
  return sample_batch(xset, xcond, yset, config_.batch_size, rng_);
}

LossBundle Trainer::step(const Batch& batch) {
  const auto& arch = bundle_.arch;
  if (batch.z.rank() != 2 || batch.z.dim(1) != arch.cond_dim) {
    throw ConfigError("batch condition width " +
                      (batch.z.rank() == 2 ? std::to_string(batch.z.dim(1)) : shape_str(batch.z.shape())) +
                      " does not match cond_dim " + std::to_string(arch.cond_dim));
  }
  for (auto* opt : {&opt_d_y_, &opt_d_x_, &opt_g_xy_, &opt_g_yx_}) opt->zero_grad();

  Tape<float> tape;
  LossBundle out;
  {
    TapeScope<float> scope(tape);
    const auto& m = bundle_;
    Tensor<float> y_hat = m.g_xy.forward(batch.x);
    Tensor<float> x_rec = m.g_yx.forward(y_hat, batch.z);
    Tensor<float> x_hat = m.g_yx.forward(batch.y, batch.z);
    Tensor<float> y_rec = m.g_xy.forward(x_hat);

    Tensor<float> rho_r = m.d_y.forward(batch.y);
    Tensor<float> rho_f = m.d_y.forward(y_hat);
    Tensor<float> s_r = m.d_x.forward(batch.x, batch.z);
    Tensor<float> s_f = m.d_x.forward(x_hat, batch.z);
    Tensor<float> s_w = m.d_x.forward(batch.x, batch.z_hat);

    Tensor<float> l_dy = d_loss_unconditional(rho_r, rho_f);
    Tensor<float> l_dx = d_loss_conditional(s_r, s_f, s_w);
    Tensor<float> l_c = cycle_loss(batch.x, x_rec, batch.y, y_rec,
                                   static_cast<float>(config_.lambda1),
                                   static_cast<float>(config_.lambda2));
    Tensor<float> l_id;
    if (m.mode == Mode::kIdentity) l_id = identity_loss(m.embedder->embed(x_hat), batch.z);
    const auto g = g_losses(rho_f, s_f, l_c, l_id, static_cast<float>(config_.identity_weight));

    out.rho_r = mean_of(rho_r);
    out.rho_f = mean_of(rho_f);
    out.s_r = mean_of(s_r);
    out.s_f = mean_of(s_f);
    out.s_w = mean_of(s_w);
    out.l_dy = l_dy.item();
    out.l_dx = l_dx.item();
    out.l_gxy = g.g_xy.item();
    out.l_gyx = g.g_yx.item();
    out.l_c = l_c.item();
    out.l_id = l_id.defined() ? l_id.item() : 0.0;
    if (const auto bad = out.first_non_finite(); !bad.empty()) {
      throw NumericError("non-finite " + bad + " at iteration " + std::to_string(iteration_ + 1));
    }

    // L_GXY depends on theta_YX only through L_c and L_GYX on theta_XY only
    // through L_c, so one pass over L_GXY + L_GYX - L_c yields both
    // generators' own gradients.
    Tensor<float> joint = add(g.g_xy, sub(g.g_yx, l_c));

    tape.backward(l_dy, std::span<const Tensor<float>>(opt_d_y_.params()));
    tape.backward(l_dx, std::span<const Tensor<float>>(opt_d_x_.params()));
    std::vector<Tensor<float>> gen = opt_g_xy_.params();
    gen.insert(gen.end(), opt_g_yx_.params().begin(), opt_g_yx_.params().end());
    tape.backward(joint, std::span<const Tensor<float>>(gen));
  }
  tape.clear();

  opt_d_y_.step();
  opt_d_x_.step();
  opt_g_xy_.step();
  opt_g_yx_.step();
  ++iteration_;

  for (const auto& p : bundle_.named_parameters()) {
    if (!p.tensor.all_finite()) {
      throw NumericError("non-finite parameter " + p.name + " after iteration " +
                         std::to_string(iteration_));
    }
  }
  return out;
}

// --------------------------------------------------------------------------

std::string loss_log_header() {
  std::string h = "iter";
  for (auto c : LossBundle::kColumns) {
    h += '\t';
    h += c;
  }
  return h;
}

std::string loss_log_line(std::uint64_t iteration, const LossBundle& losses) {
  std::ostringstream os;
  os << std::setprecision(17) << iteration;
  for (double v : losses.values()) os << '\t' << v;
  return os.str();
}

std::vector<std::pair<std::uint64_t, LossBundle>> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != loss_log_header()) {
    throw DataError("loss log " + path.string() + ": unexpected header");
  }
  std::vector<std::pair<std::uint64_t, LossBundle>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::uint64_t it = 0;
    std::array<double, 11> v{};
    ls >> it;
    for (auto& x : v) ls >> x;
    if (!ls) throw DataError("loss log " + path.string() + ":" + std::to_string(line_no) + ": malformed row");
    rows.emplace_back(it, LossBundle::from_values(v));
  }
  return rows;
}

namespace {

// Keeps the header and the rows with iter <= keep; a missing log starts fresh.
void prepare_log(const std::filesystem::path& path, std::uint64_t keep) {
  std::vector<std::string> kept;
  if (keep > 0 && std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find('\t'))) <= keep) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write loss log " + path.string());
  out << loss_log_header() << '\n';
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

void train_loop(Trainer& trainer, const LabeledImageSet& xset, const ConditionTable& xcond,
                const LabeledImageSet& yset, const std::filesystem::path& out_dir,
                const TrainLoopHooks& hooks) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto log_path = out_dir / kLossLogFile;
  const auto ckpt_path = out_dir / kCheckpointFile;
  prepare_log(log_path, trainer.iteration());

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot append to " + log_path.string());
  const auto& cfg = trainer.config();
  while (trainer.iteration() < cfg.iterations) {
    const Batch batch = trainer.next_batch(xset, xcond, yset);
    const LossBundle losses = trainer.step(batch);
    const auto it = trainer.iteration();
    log << loss_log_line(it, losses) << '\n';
    if (hooks.on_step) hooks.on_step(it, losses);
    if (it % cfg.checkpoint_interval == 0 || it == cfg.iterations) {
      log.flush();
      save_checkpoint(trainer, ckpt_path);
      if (hooks.on_checkpoint) hooks.on_checkpoint(it);
    }
  }
  log.flush();
  if (!log) throw IoError("write failed on " + log_path.string());
}

// --------------------------------------------------------------------------

double classifier_accuracy(const Embedder<float>& embedder, const LabeledImageSet& set) {
  return label_fidelity(set.images, set.labels, embedder);
}

PretrainResult pretrain_embedder(const ArchConfig& arch, const LabeledImageSet& train,
                                 const LabeledImageSet& heldout, const PretrainConfig& config,
                                 const std::function<void(std::size_t, double)>& on_epoch) {
  arch.validate();
  if (train.size() == 0 || heldout.size() == 0) throw DataError("pretrain: empty image set");
  if (config.batch_size == 0 || config.epochs == 0) {
    throw ConfigError("pretrain: epochs and batch_size must be >= 1");
  }
  for (int l : train.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= arch.emb_classes) {
      throw DataError("pretrain: label " + std::to_string(l) + " outside [0," +
                      std::to_string(arch.emb_classes) + ")");
    }
  }
  Embedder<float> emb(arch);
  std::mt19937_64 rng(config.seed);
  emb.params().init_gaussian(rng, 0.1);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdam;
  oc.learning_rate = config.learning_rate;
  oc.beta1 = 0.9;
  oc.beta2 = 0.999;
  Optimizer<float> opt(oc, emb.params().tensors());

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t used = config.max_train ? std::min(config.max_train, order.size()) : order.size();
  double acc = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + config.batch_size <= used; start += config.batch_size) {
      std::span<const std::size_t> idx(order.data() + start, config.batch_size);
      const Tensor<float> images = train.gather(idx);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      opt.zero_grad();
      Tape<float> tape;
      {
        TapeScope<float> scope(tape);
        Tensor<float> loss = softmax_cross_entropy(emb.logits(images), labels);
        tape.backward(loss);
      }
      tape.clear();
      opt.step();
    }
    acc = classifier_accuracy(emb, heldout);
    if (on_epoch) on_epoch(epoch, acc);
  }
  if (acc < config.accuracy_floor) {
    throw TrainingError("embedder held-out accuracy " + std::to_string(acc) + " is below " +
                        std::to_string(config.accuracy_floor));
  }
  freeze(emb.params());
  return {std::move(emb), acc};
}

}  // namespace ccgan
