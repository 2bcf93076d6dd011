#pragma once

#include <cstdint>
#include <string>

#include "lflow/model.hpp"

namespace lflow {

// Piecewise-linear (hat function) interpolation kernel on [0, horizon] with
// `dims` equally spaced nodes. The weights form a partition of unity and at
// most two are nonzero at any time.
struct TimeKernel {
  int dims = 10;
  double horizon = 1.0;

  void validate() const {
    if (dims < 2) throw ValidationError("time kernel needs at least 2 nodes");
    if (horizon <= 0.0) throw ValidationError("time horizon must be positive");
  }

  struct Active {
    int index[2] = {0, 0};
    double weight[2] = {0.0, 0.0};
    int count = 0;
  };

  // The nonzero hat weights at time t; throws outside [0, horizon].
  Active at(double t) const;
  // Full weight vector, mostly for tests and plots.
  std::vector<double> weights(double t) const;
};

// Which symmetries the vector field is built to respect. The spatial axis of
// the weight tensors runs over point-group orbits when orbit sharing is on,
// and over all displacements otherwise; the sine-only basis is odd under
// phi -> -phi, the extended basis (sine, cosine, constant) is not.
enum class CnfVariant {
  kFullEquivariant,   // orbit sharing, sine basis
  kTranslationOnly,   // per-displacement weights, sine basis
  kNoSignFlip,        // orbit sharing, sine+cosine+constant basis
  kNeither,           // per-displacement weights, extended basis
};

std::string to_string(CnfVariant v);
CnfVariant cnf_variant_from_string(const std::string& s);
bool variant_shares_orbits(CnfVariant v);
bool variant_sign_symmetric(CnfVariant v);

// Continuous flow whose velocity is a circular convolution of pointwise
// trig features of the field with a time-interpolated, symmetry-shared
// kernel. The divergence is analytic (only the zero-displacement weight
// enters the Jacobian diagonal), so the log-density ODE integrates exactly
// alongside the state.
class CnfFlow final : public FlowModel {
 public:
  CnfFlow(LatticeGeometry geo, CnfVariant variant, TimeKernel kernel,
          int freq_count, std::uint64_t omega_seed, int rk4_steps = 50);

  const LatticeGeometry& geometry() const override { return geo_; }
  std::string kind() const override { return "cnf"; }

  PushForward forward(const FieldBatch& z) const override;
  PushForward inverse(const FieldBatch& phi) const override;
  PushForward integrate(const FieldBatch& start, int steps,
                        bool forward_direction) const;

  std::pair<grad::ValueRef, grad::ValueRef> build_forward(
      grad::Tape& tape, grad::ValueRef z) const override;

  grad::ParameterSet& parameters() override { return params_; }
  const grad::ParameterSet& parameters() const override { return params_; }
  nlohmann::json metadata() const override;

  CnfVariant variant() const { return variant_; }
  const TimeKernel& time_kernel() const { return kernel_; }
  int freq_count() const { return freq_count_; }
  int rk4_steps() const { return rk4_steps_; }
  void set_rk4_steps(int steps);
  const OrbitTable& orbits() const { return orbits_; }
  // Spatial extent of the weight tensors (orbit count or site count).
  int spatial_size() const { return spatial_size_; }

  // Velocity of one configuration at time t; exposed for oracle tests.
  std::vector<double> velocity(std::span<const double> field, double t) const;
  double divergence(std::span<const double> field, double t) const;

  // Direct evaluation of the defining double sum over sites, bypassing the
  // convolution layout. Reference path for equivalence tests.
  std::vector<double> velocity_reference(std::span<const double> field,
                                         double t) const;

 private:
  struct Work;
  void velocity_div_batch(const std::vector<double>& state, int batch,
                          double t, Work& w, std::vector<double>& vel,
                          std::vector<double>& div) const;
  std::vector<double> expanded_kernel(const grad::Tensor& w, double t) const;

  LatticeGeometry geo_;
  CnfVariant variant_;
  TimeKernel kernel_;
  int freq_count_;
  std::uint64_t omega_seed_;
  int rk4_steps_;
  OrbitTable orbits_;
  int spatial_size_;
  std::vector<int> spatial_index_;  // displacement -> weight column
  grad::ParameterSet params_;
};

}  // namespace lflow
