#pragma once

#include <span>
#include <vector>

#include "lflow/lattice.hpp"
#include "lflow/tape.hpp"

namespace lflow {

// A batch of scalar field configurations on one lattice, sample-major:
// values[b * sites + site]. count == 1 is a single configuration.
struct FieldBatch {
  LatticeGeometry geo;
  int count = 0;
  std::vector<double> values;

  FieldBatch() = default;
  FieldBatch(LatticeGeometry g, int n)
      : geo(g), count(n), values(static_cast<std::size_t>(n) * g.sites, 0.0) {}

  std::span<double> sample(int b) {
    return {values.data() + static_cast<std::size_t>(b) * geo.sites,
            static_cast<std::size_t>(geo.sites)};
  }
  std::span<const double> sample(int b) const {
    return {values.data() + static_cast<std::size_t>(b) * geo.sites,
            static_cast<std::size_t>(geo.sites)};
  }
};

// Applies one group element to every sample.
FieldBatch apply_symmetry_to_field(const GroupElement& g, const FieldBatch& in);

// Bare couplings of the quartic theory in lattice units. The density
// exp(-S) is normalisable for lambda > 0, or for lambda == 0 with m_sq > 0.
struct Phi4Couplings {
  double m_sq = 0.0;
  double lambda = 0.0;

  void validate() const {
    if (lambda < 0.0 || (lambda == 0.0 && m_sq <= 0.0)) {
      throw ValidationError("couplings give a non-normalisable density");
    }
  }
};

// S(phi) = sum over forward links of (phi(x) - phi(y))^2
//        + sum over sites of m^2 phi^2 + lambda phi^4.
// The link sum equals phi^T (degree - adjacency) phi for every side length,
// including the side-2 multigraph case.
double action(std::span<const double> field, const LatticeGeometry& geo,
              const Phi4Couplings& c);

std::vector<double> action_batch(const FieldBatch& batch,
                                 const Phi4Couplings& c);

// dS/dphi(x) = 2 (Lap phi)(x) + 2 m^2 phi(x) + 4 lambda phi(x)^3.
std::vector<double> action_gradient(std::span<const double> field,
                                    const LatticeGeometry& geo,
                                    const Phi4Couplings& c);

inline double log_unnormalized_density(std::span<const double> field,
                                       const LatticeGeometry& geo,
                                       const Phi4Couplings& c) {
  return -action(field, geo, c);
}

// Exact two-point susceptibility of the free (lambda = 0) theory: the zero
// momentum mode of the Gaussian with precision 2 (Lap + m^2) has variance
// 1 / (2 m^2), independent of the lattice size.
double free_theory_chi2(double m_sq, const LatticeGeometry& geo);

// Per-sample action of a site-major (D,B) tape value.
grad::ValueRef action_on_tape(grad::Tape& tape, grad::ValueRef phi,
                              const LatticeGeometry& geo,
                              const Phi4Couplings& c);

}  // namespace lflow
