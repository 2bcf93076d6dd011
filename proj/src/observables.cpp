#include "lflow/observables.hpp"

#include <cmath>

#include "lflow/fft.hpp"

namespace lflow {

namespace {

// Running sums sufficient for the estimator and its jackknife blocks:
// s2[d] accumulates sum_y phi(y) phi(y+d) per sample, m[y] the mean field.
struct CorrSums {
  long n = 0;
  std::vector<double> s2;
  std::vector<double> m;

  explicit CorrSums(int sites) : s2(sites, 0.0), m(sites, 0.0) {}

  void merge(const CorrSums& other) {
    n += other.n;
    for (std::size_t i = 0; i < s2.size(); ++i) s2[i] += other.s2[i];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += other.m[i];
  }
  void subtract(const CorrSums& other) {
    n -= other.n;
    for (std::size_t i = 0; i < s2.size(); ++i) s2[i] -= other.s2[i];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] -= other.m[i];
  }
};

void accumulate_sample(CorrSums& acc, std::span<const double> phi,
                       const LatticeGeometry& geo, AutoCorrelator* fft) {
  const int d_count = geo.sites;
  const int side = geo.extent;
  ++acc.n;
  for (int y = 0; y < d_count; ++y) acc.m[y] += phi[y];
  if (fft) {
    fft->accumulate(phi, acc.s2);
    return;
  }
  for (int d = 0; d < d_count; ++d) {
    const int d1 = d / side, d2 = d % side;
    double sum = 0.0;
    for (int y1 = 0; y1 < side; ++y1) {
      const int row = y1 * side;
      const int row_shift = ((y1 + d1) % side) * side;
      for (int y2 = 0; y2 < side; ++y2) {
        sum += phi[row + y2] * phi[row_shift + (y2 + d2) % side];
      }
    }
    acc.s2[d] += sum;
  }
}

TwoPointEstimate estimate_from(const LatticeGeometry& geo,
                               const CorrSums& sums) {
  if (sums.n < 2) {
    throw ValidationError("two-point estimate needs at least 2 samples");
  }
  const int d_count = geo.sites;
  const int side = geo.extent;
  const double inv_n = 1.0 / static_cast<double>(sums.n);

  std::vector<double> mean(d_count);
  for (int y = 0; y < d_count; ++y) mean[y] = sums.m[y] * inv_n;

  TwoPointEstimate est;
  est.geo = geo;
  est.sample_count = sums.n;
  est.g_hat.resize(d_count);
  for (int d = 0; d < d_count; ++d) {
    const int d1 = d / side, d2 = d % side;
    double mean_corr = 0.0;
    for (int y1 = 0; y1 < side; ++y1) {
      const int row = y1 * side;
      const int row_shift = ((y1 + d1) % side) * side;
      for (int y2 = 0; y2 < side; ++y2) {
        mean_corr += mean[row + y2] * mean[row_shift + (y2 + d2) % side];
      }
    }
    est.g_hat[d] = (sums.s2[d] * inv_n - mean_corr) / d_count;
  }
  return est;
}

}  // namespace

TwoPointEstimate g_hat(const FieldBatch& samples) {
  if (samples.count < 2) {
    throw ValidationError("two-point estimate needs at least 2 samples");
  }
  CorrSums sums(samples.geo.sites);
  auto fft = AutoCorrelator::create_if_worthwhile(samples.geo);
  for (int i = 0; i < samples.count; ++i) {
    accumulate_sample(sums, samples.sample(i), samples.geo, fft.get());
  }
  return estimate_from(samples.geo, sums);
}

double chi2_hat(const TwoPointEstimate& est) {
  double sum = 0.0;
  for (double v : est.g_hat) sum += v;
  return sum;
}

std::vector<double> g_c(const TwoPointEstimate& est) {
  const int side = est.geo.extent;
  std::vector<double> out(side, 0.0);
  for (int x2 = 0; x2 < side; ++x2) {
    double sum = 0.0;
    for (int x1 = 0; x1 < side; ++x1) sum += est.g_hat[x1 * side + x2];
    out[x2] = sum / side;
  }
  return out;
}

double pole_mass_hat(const TwoPointEstimate& est, PoleMassKind kind,
                     int* clamped) {
  const int side = est.geo.extent;
  if (side < 2) {
    throw ValidationError("pole mass needs a lattice side of at least 2");
  }
  const auto gc = g_c(est);
  for (double v : gc) {
    if (!(v > 0.0)) {
      throw NumericError("pole mass undefined: nonpositive correlator");
    }
  }
  if (clamped) *clamped = 0;
  double sum = 0.0;
  for (int x2 = 1; x2 < side; ++x2) {
    const double ratio = (gc[x2 - 1] + gc[(x2 + 1) % side]) / (2.0 * gc[x2]);
    if (kind == PoleMassKind::kVerbatim) {
      sum += ratio;
    } else {
      double r = ratio;
      if (r < 1.0) {
        r = 1.0;
        if (clamped) ++*clamped;
      }
      sum += std::acosh(r);
    }
  }
  return sum / (side - 1);
}

nlohmann::json MeasurementReport::to_json() const {
  return nlohmann::json{
      {"sample_count", sample_count},
      {"blocks", blocks},
      {"chi2", {{"value", chi2}, {"stderr", chi2_err}}},
      {"pole_mass",
       {{"arccosh",
         {{"value", pole_mass_arccosh}, {"stderr", pole_mass_arccosh_err}}},
        {"verbatim",
         {{"value", pole_mass_verbatim}, {"stderr", pole_mass_verbatim_err}}},
        {"clamped_ratios", clamped_ratios}}}};
}

MeasurementReport measure(const FieldBatch& samples, int blocks) {
  if (samples.count < 2) {
    throw ValidationError("measurement needs at least 2 samples");
  }
  if (blocks < 2) throw ValidationError("jackknife needs at least 2 blocks");
  const int n_blocks = std::min<int>(blocks, samples.count);
  const auto& geo = samples.geo;
  auto fft = AutoCorrelator::create_if_worthwhile(geo);

  std::vector<CorrSums> block_sums(n_blocks, CorrSums(geo.sites));
  CorrSums total(geo.sites);
  for (int i = 0; i < samples.count; ++i) {
    const int blk = static_cast<int>(
        static_cast<long>(i) * n_blocks / samples.count);
    accumulate_sample(block_sums[blk], samples.sample(i), geo, fft.get());
  }
  for (const auto& b : block_sums) total.merge(b);

  MeasurementReport rep;
  rep.sample_count = samples.count;
  rep.blocks = n_blocks;

  const auto full = estimate_from(geo, total);
  rep.chi2 = chi2_hat(full);
  rep.pole_mass_arccosh =
      pole_mass_hat(full, PoleMassKind::kArccosh, &rep.clamped_ratios);
  rep.pole_mass_verbatim = pole_mass_hat(full, PoleMassKind::kVerbatim);

  std::vector<double> jk_chi2(n_blocks), jk_mp_a(n_blocks), jk_mp_v(n_blocks);
  for (int b = 0; b < n_blocks; ++b) {
    CorrSums rest = total;
    rest.subtract(block_sums[b]);
    const auto est = estimate_from(geo, rest);
    jk_chi2[b] = chi2_hat(est);
    jk_mp_a[b] = pole_mass_hat(est, PoleMassKind::kArccosh);
    jk_mp_v[b] = pole_mass_hat(est, PoleMassKind::kVerbatim);
  }

  auto jackknife_err = [n_blocks](const std::vector<double>& theta) {
    double mean = 0.0;
    for (double v : theta) mean += v;
    mean /= n_blocks;
    double ss = 0.0;
    for (double v : theta) ss += (v - mean) * (v - mean);
    return std::sqrt(ss * (n_blocks - 1) / static_cast<double>(n_blocks));
  };
  rep.chi2_err = jackknife_err(jk_chi2);
  rep.pole_mass_arccosh_err = jackknife_err(jk_mp_a);
  rep.pole_mass_verbatim_err = jackknife_err(jk_mp_v);
  return rep;
}

}  // namespace lflow
