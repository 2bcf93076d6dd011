#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lflow/phi4.hpp"
#include "lflow/rng.hpp"
#include "lflow/tape.hpp"

namespace lflow {

// Result of pushing a batch through a flow map (either direction):
// transformed configurations plus the per-sample log-Jacobian increment of
// the map that was applied.
struct PushForward {
  FieldBatch field;
  std::vector<double> delta_logdet;
};

// Common surface of the trainable samplers. Evaluation (forward/inverse) is
// allocation-light plain code; training goes through build_forward, which
// lays the same computation onto a gradient tape.
class FlowModel {
 public:
  virtual ~FlowModel() = default;

  virtual const LatticeGeometry& geometry() const = 0;
  virtual std::string kind() const = 0;

  // z -> phi with delta_logdet = log |det d phi / d z| accumulated forward.
  virtual PushForward forward(const FieldBatch& z) const = 0;
  // phi -> z with delta_logdet of the inverse map, so
  // log q(phi) = log_prior(z) + delta_logdet.
  virtual PushForward inverse(const FieldBatch& phi) const = 0;

  // Training path: given a (D,B) site-major latent input on the tape,
  // returns (phi (D,B), delta_logdet (B)).
  virtual std::pair<grad::ValueRef, grad::ValueRef> build_forward(
      grad::Tape& tape, grad::ValueRef z) const = 0;

  virtual grad::ParameterSet& parameters() = 0;
  virtual const grad::ParameterSet& parameters() const = 0;

  // Hyperparameters needed to rebuild the model from a checkpoint.
  virtual nlohmann::json metadata() const = 0;
};

// Unit Gaussian prior per site.
double log_prior(std::span<const double> z);
std::vector<double> log_prior_batch(const FieldBatch& z);
void fill_gaussian(FieldBatch& z, Rng& rng);

// Model log-density of samples produced by forward():
// log q(phi) = log r(z) - delta_logdet.
std::vector<double> log_q_of_forward(const FieldBatch& z,
                                     const PushForward& fwd);

// Model log-density of arbitrary configurations, via the inverse map.
std::vector<double> log_q(const FlowModel& model, const FieldBatch& phi);

// Batch layout helpers: FieldBatch is sample-major (B,D); the numeric kernels
// work site-major (D,B).
std::vector<double> to_site_major(const FieldBatch& batch);
FieldBatch from_site_major(const LatticeGeometry& geo, int count,
                           std::span<const double> data);

}  // namespace lflow
