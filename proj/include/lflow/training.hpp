#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "lflow/container.hpp"
#include "lflow/model.hpp"

namespace lflow {

struct TrainConfig {
  int batch = 100;
  int steps_per_epoch = 50;
  int epochs = 100;
  double lr = 1e-3;
  int lr_drop_step = 250;
  double lr_drop_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int ess_samples = 1000;
  int checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
  std::uint64_t seed = 1;
  bool train_omega = true;
  bool freeze = false;  // diagnostics: run the loop without updating
  // Optional stopping rules, checked at epoch boundaries. 0 disables.
  double stop_at_ess = 0.0;
  double budget_seconds = 0.0;

  void validate() const {
    if (batch < 1 || steps_per_epoch < 1 || epochs < 0 || ess_samples < 1) {
      throw ConfigError("training sizes must be positive");
    }
    if (lr <= 0.0 || lr_drop_factor <= 0.0 || lr_drop_step < 0) {
      throw ConfigError("invalid learning-rate schedule");
    }
    if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 ||
        adam_beta2 >= 1 || adam_eps <= 0) {
      throw ConfigError("invalid Adam constants");
    }
  }
};

inline double lr_schedule(const TrainConfig& cfg, long step) {
  return step < cfg.lr_drop_step ? cfg.lr : cfg.lr * cfg.lr_drop_factor;
}

// Normalised effective sample size in (0, 1]:
// (mean w)^2 / mean w^2 with w = exp(log_p - log_q), computed after shifting
// by the largest log weight. Invariant to constant shifts of log_p.
double effective_sample_size(std::span<const double> log_p,
                             std::span<const double> log_q);

// Plain Adam with bias correction. Moments live here; parameters live in the
// model. Updates iterate parameters in creation order.
class AdamState {
 public:
  explicit AdamState(const grad::ParameterSet& params);

  void apply(grad::ParameterSet& params, const grad::GradientRecord& grads,
             double lr, const TrainConfig& cfg,
             const std::vector<std::string>& skip = {});

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }

  std::vector<ArrayEntry> to_arrays() const;
  void load_arrays(const Container& c);

 private:
  std::vector<std::pair<std::string, grad::Tensor>> m_, v_;
  long t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double ess = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
};

// Report-time smoothing; stored metrics stay raw.
std::vector<double> rolling_mean(std::span<const double> values, int window);

struct TrainResult {
  RunMetrics metrics;
  double best_ess = 0.0;
  double final_ess = 0.0;
  long steps_run = 0;
  int epochs_run = 0;
  bool halted = false;         // numeric failure
  bool stopped_early = false;  // stopping rule hit
  std::string halt_message;
};

// State needed to continue a run exactly where it left off.
struct ResumeState {
  long global_step = 0;
  int epoch = 0;
  std::uint64_t prior_counter = 0;
  std::uint64_t metric_counter = 0;
  double best_ess = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const FlowModel& model,
                     const Phi4Couplings& couplings, const AdamState& adam,
                     const ResumeState& state);

// Rebuilds a model from checkpoint metadata and loads its parameters.
std::unique_ptr<FlowModel> load_model(const Container& c);
std::unique_ptr<FlowModel> load_model(const std::filesystem::path& path);
ResumeState resume_state_of(const Container& c);

// Reverse-KL training loop: per step, push a fresh prior batch through the
// flow and descend mean[log q(phi) + S(phi)]; per epoch, evaluate the ESS on
// fresh samples. Artifacts (metrics CSV, checkpoints) go to out_dir when it
// is non-empty. A numeric failure halts with a diagnostic checkpoint instead
// of throwing.
TrainResult train(FlowModel& model, const Phi4Couplings& couplings,
                  const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {},
                  const ResumeState* resume = nullptr,
                  AdamState* adam_io = nullptr,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// One reverse-KL loss value for a fixed latent batch (no update); the same
// program train() optimises.
double reverse_kl_loss(const FlowModel& model, const Phi4Couplings& couplings,
                       const FieldBatch& z);

}  // namespace lflow
