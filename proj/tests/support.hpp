#pragma once

// Shared helpers for the test suites: randomised model/field construction
// and the brute-force oracles the numeric checks compare against.

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "lflow/cnf.hpp"
#include "lflow/model.hpp"
#include "lflow/realnvp.hpp"
#include "lflow/rng.hpp"

namespace lflow::testing {

inline FieldBatch random_fields(const LatticeGeometry& geo, int count,
                                std::uint64_t seed, double scale = 1.0) {
  FieldBatch batch(geo, count);
  Rng rng(seed, Stream::kScratch);
  for (double& v : batch.values) v = scale * rng.gaussian();
  return batch;
}

inline void randomize(grad::ParameterSet& params, std::uint64_t seed,
                      double scale) {
  Rng rng(seed, Stream::kScratch);
  for (auto& [name, tensor] : params) {
    for (double& v : tensor.data) {
      v = (name == "omega" ? 1.0 : scale) * rng.gaussian();
    }
  }
}

inline double rms(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return std::sqrt(acc / a.size());
}

// log |det J| of a flow's forward map, with J assembled column by column from
// central finite differences of the discrete map itself.
inline double fd_log_abs_det_jacobian(const FlowModel& model,
                                      std::span<const double> z,
                                      double h = 1e-5) {
  const auto& geo = model.geometry();
  const int d = geo.sites;
  Eigen::MatrixXd jac(d, d);
  FieldBatch probe(geo, 1);
  for (int j = 0; j < d; ++j) {
    std::copy(z.begin(), z.end(), probe.values.begin());
    probe.values[j] = z[j] + h;
    auto up = model.forward(probe);
    probe.values[j] = z[j] - h;
    auto down = model.forward(probe);
    for (int i = 0; i < d; ++i) {
      jac(i, j) =
          (up.field.values[i] - down.field.values[i]) / (2.0 * h);
    }
  }
  return std::log(std::abs(jac.determinant()));
}

// Trace of the velocity Jacobian by central finite differences.
inline double fd_divergence(const CnfFlow& flow, std::span<const double> field,
                            double t, double h = 1e-5) {
  std::vector<double> probe(field.begin(), field.end());
  double trace = 0.0;
  for (std::size_t x = 0; x < probe.size(); ++x) {
    probe[x] = field[x] + h;
    const auto up = flow.velocity(probe, t);
    probe[x] = field[x] - h;
    const auto down = flow.velocity(probe, t);
    probe[x] = field[x];
    trace += (up[x] - down[x]) / (2.0 * h);
  }
  return trace;
}

}  // namespace lflow::testing
