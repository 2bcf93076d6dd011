#pragma once

#include <cstdint>

#include "lflow/model.hpp"

namespace lflow {

// Affine coupling stack with checkerboard partitions. Each layer freezes one
// parity class and transforms the other with scale/shift fields produced by a
// small two-layer convolutional conditioner (circular padding), so the log
// Jacobian is the sum of the active-site log scales.
struct RealNvpConfig {
  int layers = 16;
  int hidden = 8;
  double init_scale = 1e-2;  // conditioner first-layer weight scale
  double leaky_slope = 0.01;

  void validate() const {
    if (layers < 1) throw ValidationError("coupling stack needs >= 1 layer");
    if (hidden < 1) throw ValidationError("conditioner needs >= 1 channel");
  }
};

class RealNvpFlow final : public FlowModel {
 public:
  RealNvpFlow(LatticeGeometry geo, RealNvpConfig config,
              std::uint64_t init_seed);

  const LatticeGeometry& geometry() const override { return geo_; }
  std::string kind() const override { return "realnvp"; }

  PushForward forward(const FieldBatch& z) const override;
  PushForward inverse(const FieldBatch& phi) const override;

  std::pair<grad::ValueRef, grad::ValueRef> build_forward(
      grad::Tape& tape, grad::ValueRef z) const override;

  grad::ParameterSet& parameters() override { return params_; }
  const grad::ParameterSet& parameters() const override { return params_; }
  nlohmann::json metadata() const override;

  const RealNvpConfig& config() const { return config_; }
  // Frozen-site indicator of layer l (1 = passes through unchanged).
  const std::vector<double>& frozen_mask(int layer) const {
    return layer % 2 == 0 ? mask_even_ : mask_odd_;
  }

 private:
  // Evaluates the conditioner of one layer on site-major data and returns
  // the post-tanh log-scale and the shift, both (D,B).
  void conditioner(int layer, const std::vector<double>& masked, int batch,
                   std::vector<double>& log_scale,
                   std::vector<double>& shift) const;

  LatticeGeometry geo_;
  RealNvpConfig config_;
  std::uint64_t init_seed_;
  std::vector<double> mask_even_, mask_odd_;
  grad::ParameterSet params_;
};

// Per-sample spread of the model log-density over a set of symmetry copies.
struct SpreadStats {
  double mean = 0.0;
  double stddev = 0.0;
  double spread = 0.0;  // max - min
};

// Evaluates log q over every group transform of each sample (the invariance
// audit behind the log-likelihood-vs-symmetry plots). target log densities
// come along for reference.
struct EquivarianceAudit {
  std::vector<SpreadStats> per_sample;
  // [sample][group element]
  std::vector<std::vector<double>> model_log_q;
  std::vector<std::vector<double>> target_log_p;
};

EquivarianceAudit audit_equivariance(const FlowModel& model,
                                     const FieldBatch& samples,
                                     const Phi4Couplings& couplings);

std::vector<SpreadStats> equivariance_violation(const FlowModel& model,
                                                const FieldBatch& samples);

}  // namespace lflow
