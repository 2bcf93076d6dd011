#pragma once

#include <json.hpp>

#include "lflow/phi4.hpp"

namespace lflow {

// Connected two-point estimate, one value per displacement, volume-averaged
// over the base site with sample means subtracted (biased covariance, 1/N).
struct TwoPointEstimate {
  LatticeGeometry geo;
  std::vector<double> g_hat;  // indexed by displacement site
  long sample_count = 0;
};

TwoPointEstimate g_hat(const FieldBatch& samples);

// Susceptibility: sum of the connected correlator over all displacements.
double chi2_hat(const TwoPointEstimate& est);

// Row-averaged correlator G_c(x2) = mean over x1 of G(x1, x2).
std::vector<double> g_c(const TwoPointEstimate& est);

enum class PoleMassKind {
  kVerbatim,  // mean of (G_c(x2-1) + G_c(x2+1)) / (2 G_c(x2))
  kArccosh,   // mean of arccosh of those ratios (effective mass)
};

// Inverse correlation length estimate. Requires a strictly positive
// row-averaged correlator. For the arccosh variant, ratios that dip below 1
// (possible in noise) are clamped to 1; `clamped` reports how many.
double pole_mass_hat(const TwoPointEstimate& est, PoleMassKind kind,
                     int* clamped = nullptr);

struct MeasurementReport {
  long sample_count = 0;
  int blocks = 0;
  double chi2 = 0.0;
  double chi2_err = 0.0;
  double pole_mass_arccosh = 0.0;
  double pole_mass_arccosh_err = 0.0;
  double pole_mass_verbatim = 0.0;
  double pole_mass_verbatim_err = 0.0;
  int clamped_ratios = 0;

  nlohmann::json to_json() const;
};

// Estimates with jackknife standard errors over contiguous sample blocks.
MeasurementReport measure(const FieldBatch& samples, int blocks = 50);

}  // namespace lflow
