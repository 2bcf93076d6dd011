#include "lflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lflow/cnf.hpp"
#include "lflow/realnvp.hpp"

namespace lflow {

namespace {

struct LossProgram {
  grad::Tape tape;
  grad::ValueRef z, logr, phi, logdet, loss;

  LossProgram(const FlowModel& model, const Phi4Couplings& couplings,
              int batch) {
    const auto& geo = model.geometry();
    z = tape.input({geo.sites, batch}, "z");
    logr = tape.input({batch}, "log_prior");
    auto [p, ld] = model.build_forward(tape, z);
    phi = p;
    logdet = ld;
    auto action = action_on_tape(tape, phi, geo, couplings);
    auto per_sample = tape.add(tape.sub(logr, logdet), action);
    loss = tape.mean_vec(per_sample);
    tape.set_loss(loss);
  }

  void bind_batch(const FieldBatch& batch) {
    tape.bind_input(z, std::span<const double>(to_site_major(batch)));
    tape.bind_input(logr, std::span<const double>(log_prior_batch(batch)));
  }
};

double evaluate_ess(const FlowModel& model, const Phi4Couplings& couplings,
                    int n, Rng& rng) {
  FieldBatch z(model.geometry(), n);
  fill_gaussian(z, rng);
  auto fwd = model.forward(z);
  auto log_q = log_q_of_forward(z, fwd);
  auto log_p = action_batch(fwd.field, couplings);
  for (double& v : log_p) v = -v;
  return effective_sample_size(log_p, log_q);
}

}  // namespace

double effective_sample_size(std::span<const double> log_p,
                             std::span<const double> log_q) {
  if (log_p.size() != log_q.size() || log_p.empty()) {
    throw ValidationError("effective sample size needs matched, non-empty logs");
  }
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    if (std::isnan(log_p[i]) || std::isnan(log_q[i]) ||
        log_p[i] == std::numeric_limits<double>::infinity() ||
        log_q[i] == -std::numeric_limits<double>::infinity()) {
      throw NumericError("invalid log weight in effective sample size");
    }
    top = std::max(top, log_p[i] - log_q[i]);
  }
  if (!std::isfinite(top)) {
    throw NumericError("all importance weights vanish");
  }
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double w = std::exp(log_p[i] - log_q[i] - top);
    sum += w;
    sum_sq += w * w;
  }
  const double n = static_cast<double>(log_p.size());
  return (sum * sum) / (n * sum_sq);
}

std::vector<double> rolling_mean(std::span<const double> values, int window) {
  if (window < 1) throw ValidationError("window must be positive");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= static_cast<std::size_t>(window)) acc -= values[i - window];
    const double n = std::min<std::size_t>(i + 1, window);
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

AdamState::AdamState(const grad::ParameterSet& params) {
  for (const auto& [name, tensor] : params) {
    m_.emplace_back(name, grad::Tensor(tensor.shape));
    v_.emplace_back(name, grad::Tensor(tensor.shape));
  }
}

void AdamState::apply(grad::ParameterSet& params,
                      const grad::GradientRecord& grads, double lr,
                      const TrainConfig& cfg,
                      const std::vector<std::string>& skip) {
  ++t_;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const std::string& name = m_[i].first;
    const grad::Tensor& g = grads.at(name);
    grad::Tensor& m = m_[i].second;
    grad::Tensor& v = v_[i].second;
    if (!same_shape(g, m)) {
      throw ValidationError("gradient shape mismatch for: " + name);
    }
    grad::Tensor& p = params.at(name);
    const bool frozen =
        std::find(skip.begin(), skip.end(), name) != skip.end();
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      if (!frozen) {
        p.data[j] -= lr * (m[j] / corr1) / (std::sqrt(v[j] / corr2) + cfg.adam_eps);
      }
    }
  }
}

std::vector<ArrayEntry> AdamState::to_arrays() const {
  std::vector<ArrayEntry> out;
  for (const auto& [name, t] : m_) {
    out.push_back({"adam.m." + name, t.shape, t.data});
  }
  for (const auto& [name, t] : v_) {
    out.push_back({"adam.v." + name, t.shape, t.data});
  }
  return out;
}

void AdamState::load_arrays(const Container& c) {
  for (auto& [name, t] : m_) t.data = c.at("adam.m." + name).data;
  for (auto& [name, t] : v_) t.data = c.at("adam.v." + name).data;
}

void save_checkpoint(const std::filesystem::path& path, const FlowModel& model,
                     const Phi4Couplings& couplings, const AdamState& adam,
                     const ResumeState& state) {
  nlohmann::json meta;
  meta["type"] = "checkpoint";
  meta["model"] = model.metadata();
  meta["couplings"] = {{"m_sq", couplings.m_sq}, {"lambda", couplings.lambda}};
  meta["train"] = {{"global_step", state.global_step},
                   {"epoch", state.epoch},
                   {"prior_counter", state.prior_counter},
                   {"metric_counter", state.metric_counter},
                   {"best_ess", state.best_ess},
                   {"adam_steps", adam.step_count()}};
  std::vector<ArrayEntry> arrays;
  for (const auto& [name, t] : model.parameters()) {
    arrays.push_back({name, t.shape, t.data});
  }
  for (auto& a : adam.to_arrays()) arrays.push_back(std::move(a));
  write_container(path, meta, arrays);
}

std::unique_ptr<FlowModel> load_model(const Container& c) {
  const auto& meta = c.meta.at("model");
  const std::string kind = meta.at("kind").get<std::string>();
  std::unique_ptr<FlowModel> model;
  if (kind == "cnf") {
    TimeKernel kernel{meta.at("time_dims").get<int>(),
                      meta.at("horizon").get<double>()};
    model = std::make_unique<CnfFlow>(
        LatticeGeometry(meta.at("side").get<int>()),
        cnf_variant_from_string(meta.at("variant").get<std::string>()), kernel,
        meta.at("freq_count").get<int>(),
        meta.at("omega_seed").get<std::uint64_t>(),
        meta.at("rk4_steps").get<int>());
  } else if (kind == "realnvp") {
    RealNvpConfig cfg;
    cfg.layers = meta.at("layers").get<int>();
    cfg.hidden = meta.at("hidden").get<int>();
    cfg.init_scale = meta.at("init_scale").get<double>();
    cfg.leaky_slope = meta.at("leaky_slope").get<double>();
    model = std::make_unique<RealNvpFlow>(
        LatticeGeometry(meta.at("side").get<int>()), cfg,
        meta.at("init_seed").get<std::uint64_t>());
  } else {
    throw ValidationError("unknown model kind in checkpoint: " + kind);
  }
  for (auto& [name, t] : model->parameters()) {
    const ArrayEntry& a = c.at(name);
    if (a.shape != t.shape) {
      throw ValidationError("checkpoint array shape mismatch: " + name);
    }
    t.data = a.data;
  }
  return model;
}

std::unique_ptr<FlowModel> load_model(const std::filesystem::path& path) {
  return load_model(read_container(path));
}

ResumeState resume_state_of(const Container& c) {
  ResumeState st;
  const auto& tr = c.meta.at("train");
  st.global_step = tr.at("global_step").get<long>();
  st.epoch = tr.at("epoch").get<int>();
  st.prior_counter = tr.at("prior_counter").get<std::uint64_t>();
  st.metric_counter = tr.at("metric_counter").get<std::uint64_t>();
  st.best_ess = tr.at("best_ess").get<double>();
  return st;
}

double reverse_kl_loss(const FlowModel& model, const Phi4Couplings& couplings,
                       const FieldBatch& z) {
  LossProgram prog(model, couplings, z.count);
  prog.bind_batch(z);
  prog.tape.bind_params(model.parameters());
  return prog.tape.forward();
}

TrainResult train(FlowModel& model, const Phi4Couplings& couplings,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const ResumeState* resume, AdamState* adam_io,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  couplings.validate();
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();

  AdamState local_adam(model.parameters());
  AdamState& adam = adam_io ? *adam_io : local_adam;
  ResumeState st = resume ? *resume : ResumeState{};

  Rng prior(cfg.seed, Stream::kPrior);
  prior.set_counter(st.prior_counter);
  Rng metric_rng(cfg.seed, Stream::kMetrics);
  metric_rng.set_counter(st.metric_counter);

  std::vector<std::string> skip;
  if (!cfg.train_omega && model.parameters().has("omega")) {
    skip.push_back("omega");
  }

  LossProgram prog(model, couplings, cfg.batch);

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto metrics_path = out_dir / "metrics.csv";
    const bool append = st.epoch > 0 && std::filesystem::exists(metrics_path);
    csv.open(metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!append) csv << "epoch,loss,ess,lr,seconds\n";
  }

  TrainResult result;
  result.best_ess = st.best_ess;

  auto checkpoint = [&](const std::string& stem) {
    if (out_dir.empty()) return;
    st.prior_counter = prior.counter();
    st.metric_counter = metric_rng.counter();
    st.best_ess = result.best_ess;
    save_checkpoint(out_dir / (stem + ".lflow"), model, couplings, adam, st);
  };

  for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = clock::now();
    double loss_sum = 0.0;
    double ess = 0.0;
    try {
      for (int step = 0; step < cfg.steps_per_epoch; ++step) {
        FieldBatch zb(model.geometry(), cfg.batch);
        fill_gaussian(zb, prior);
        prog.bind_batch(zb);
        auto rec = grad::value_and_grad(prog.tape, model.parameters());
        loss_sum += rec.loss;
        if (!cfg.freeze) {
          adam.apply(model.parameters(), rec, lr_schedule(cfg, st.global_step),
                     cfg, skip);
        }
        ++st.global_step;
      }
      ess = evaluate_ess(model, couplings, cfg.ess_samples, metric_rng);
    } catch (const NumericError& e) {
      result.halted = true;
      result.halt_message = e.what();
      st.epoch = epoch;
      checkpoint("ckpt_halt");
      break;
    }

    st.epoch = epoch + 1;
    EpochRecord row;
    row.epoch = epoch + 1;
    row.loss = loss_sum / cfg.steps_per_epoch;
    row.ess = ess;
    row.lr = lr_schedule(cfg, st.global_step > 0 ? st.global_step - 1 : 0);
    row.seconds =
        std::chrono::duration<double>(clock::now() - epoch_start).count();
    result.metrics.epochs.push_back(row);
    result.final_ess = ess;
    result.epochs_run = epoch + 1 - (resume ? resume->epoch : 0);

    if (csv.is_open()) {
      char line[160];
      std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.6g\n",
                    row.epoch, row.loss, row.ess, row.lr, row.seconds);
      csv << line;
      csv.flush();
    }
    if (on_epoch) on_epoch(row);

    if (ess > result.best_ess) {
      result.best_ess = ess;
      checkpoint("ckpt_best");
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "ckpt_epoch%05d", epoch + 1);
      checkpoint(stem);
    }

    if (cfg.stop_at_ess > 0.0 && ess >= cfg.stop_at_ess) {
      result.stopped_early = true;
      break;
    }
    if (cfg.budget_seconds > 0.0 &&
        std::chrono::duration<double>(clock::now() - run_start).count() >=
            cfg.budget_seconds) {
      result.stopped_early = true;
      break;
    }
  }

  result.steps_run = st.global_step - (resume ? resume->global_step : 0);
  if (!result.halted) checkpoint("ckpt_final");
  return result;
}

}  // namespace lflow
