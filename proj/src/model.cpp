#include "lflow/model.hpp"

#include <cmath>

namespace lflow {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112353;
}

double log_prior(std::span<const double> z) {
  double ss = 0.0;
  for (double v : z) ss += v * v;
  return -0.5 * (ss + static_cast<double>(z.size()) * kLogTwoPi);
}

std::vector<double> log_prior_batch(const FieldBatch& z) {
  std::vector<double> out(z.count);
  for (int b = 0; b < z.count; ++b) out[b] = log_prior(z.sample(b));
  return out;
}

void fill_gaussian(FieldBatch& z, Rng& rng) {
  for (double& v : z.values) v = rng.gaussian();
}

std::vector<double> log_q_of_forward(const FieldBatch& z,
                                     const PushForward& fwd) {
  std::vector<double> out(z.count);
  for (int b = 0; b < z.count; ++b) {
    out[b] = log_prior(z.sample(b)) - fwd.delta_logdet[b];
  }
  return out;
}

std::vector<double> log_q(const FlowModel& model, const FieldBatch& phi) {
  PushForward inv = model.inverse(phi);
  std::vector<double> out(phi.count);
  for (int b = 0; b < phi.count; ++b) {
    out[b] = log_prior(inv.field.sample(b)) + inv.delta_logdet[b];
  }
  return out;
}

std::vector<double> to_site_major(const FieldBatch& batch) {
  const int d = batch.geo.sites;
  const int n = batch.count;
  std::vector<double> out(static_cast<std::size_t>(d) * n);
  for (int b = 0; b < n; ++b) {
    auto src = batch.sample(b);
    for (int x = 0; x < d; ++x) out[static_cast<std::size_t>(x) * n + b] = src[x];
  }
  return out;
}

FieldBatch from_site_major(const LatticeGeometry& geo, int count,
                           std::span<const double> data) {
  if (data.size() != static_cast<std::size_t>(geo.sites) * count) {
    throw ValidationError("site-major buffer size mismatch");
  }
  FieldBatch out(geo, count);
  for (int b = 0; b < count; ++b) {
    auto dst = out.sample(b);
    for (int x = 0; x < geo.sites; ++x) {
      dst[x] = data[static_cast<std::size_t>(x) * count + b];
    }
  }
  return out;
}

}  // namespace lflow
