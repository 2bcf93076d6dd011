#include "lflow/phi4.hpp"

#include <cmath>

namespace lflow {

FieldBatch apply_symmetry_to_field(const GroupElement& g,
                                   const FieldBatch& in) {
  const auto perm = field_permutation(g, in.geo);
  FieldBatch out(in.geo, in.count);
  for (int b = 0; b < in.count; ++b) {
    auto src = in.sample(b);
    auto dst = out.sample(b);
    for (int x = 0; x < in.geo.sites; ++x) dst[x] = src[perm[x]];
  }
  return out;
}

double action(std::span<const double> field, const LatticeGeometry& geo,
              const Phi4Couplings& c) {
  c.validate();
  if (static_cast<int>(field.size()) != geo.sites) {
    throw ValidationError("field size does not match lattice");
  }
  const int L = geo.extent;
  double kinetic = 0.0;
  double local = 0.0;
  for (int x1 = 0; x1 < L; ++x1) {
    const int row = x1 * L;
    const int row_down = ((x1 + 1) % L) * L;
    for (int x2 = 0; x2 < L; ++x2) {
      const double v = field[row + x2];
      if (!std::isfinite(v)) throw NumericError("non-finite field value");
      const double dr = v - field[row + (x2 + 1) % L];
      const double dd = v - field[row_down + x2];
      kinetic += dr * dr + dd * dd;
      const double v2 = v * v;
      local += c.m_sq * v2 + c.lambda * v2 * v2;
    }
  }
  return kinetic + local;
}

std::vector<double> action_batch(const FieldBatch& batch,
                                 const Phi4Couplings& c) {
  std::vector<double> out(batch.count);
  for (int b = 0; b < batch.count; ++b) {
    out[b] = action(batch.sample(b), batch.geo, c);
  }
  return out;
}

std::vector<double> action_gradient(std::span<const double> field,
                                    const LatticeGeometry& geo,
                                    const Phi4Couplings& c) {
  c.validate();
  if (static_cast<int>(field.size()) != geo.sites) {
    throw ValidationError("field size does not match lattice");
  }
  const int L = geo.extent;
  std::vector<double> grad(geo.sites);
  for (int x1 = 0; x1 < L; ++x1) {
    for (int x2 = 0; x2 < L; ++x2) {
      const int x = x1 * L + x2;
      const double v = field[x];
      const double neighbours = field[x1 * L + (x2 + 1) % L] +
                                field[x1 * L + (x2 + L - 1) % L] +
                                field[((x1 + 1) % L) * L + x2] +
                                field[((x1 + L - 1) % L) * L + x2];
      grad[x] = 2.0 * (4.0 * v - neighbours) + 2.0 * c.m_sq * v +
                4.0 * c.lambda * v * v * v;
    }
  }
  return grad;
}

double free_theory_chi2(double m_sq, const LatticeGeometry& geo) {
  (void)geo;
  if (m_sq <= 0.0) {
    throw ValidationError("free-theory susceptibility needs m_sq > 0");
  }
  return 1.0 / (2.0 * m_sq);
}

grad::ValueRef action_on_tape(grad::Tape& tape, grad::ValueRef phi,
                              const LatticeGeometry& geo,
                              const Phi4Couplings& c) {
  c.validate();
  const int L = geo.extent;
  auto right = std::make_shared<std::vector<int>>(geo.sites);
  auto down = std::make_shared<std::vector<int>>(geo.sites);
  for (int x = 0; x < geo.sites; ++x) {
    const int x1 = x / L, x2 = x % L;
    (*right)[x] = x1 * L + (x2 + 1) % L;
    (*down)[x] = ((x1 + 1) % L) * L + x2;
  }
  auto d1 = tape.sub(phi, tape.permute_sites(phi, right));
  auto d2 = tape.sub(phi, tape.permute_sites(phi, down));
  auto body = tape.add(tape.mul(d1, d1), tape.mul(d2, d2));
  auto sq = tape.mul(phi, phi);
  body = tape.add_scaled(body, sq, c.m_sq);
  body = tape.add_scaled(body, tape.mul(sq, sq), c.lambda);
  return tape.sum_sites(body);
}

}  // namespace lflow
