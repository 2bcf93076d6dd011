#pragma once

#include <memory>
#include <span>
#include <vector>

#include "lflow/lattice.hpp"

namespace lflow {

// FFT-backed helpers for circular correlations on the periodic lattice.
// Everything here is an optional fast path: results are anchored to the
// direct quadratic sums by equality tests, and callers fall back to those
// sums when FFT support is compiled out or the lattice is small.
bool fft_available();

// Lattices below this site count stay on the direct path; the quadratic sum
// is cache-resident and beats transform overhead there.
inline constexpr int kFftMinSites = 256;

// Accumulates out[d] += sum_y phi(y) phi(y+d) for single configurations.
class AutoCorrelator {
 public:
  static std::unique_ptr<AutoCorrelator> create(const LatticeGeometry& geo);
  static std::unique_ptr<AutoCorrelator> create_if_worthwhile(
      const LatticeGeometry& geo);

  ~AutoCorrelator();
  void accumulate(std::span<const double> phi, std::vector<double>& out);

 private:
  struct Impl;
  explicit AutoCorrelator(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

// Batched cross-correlation with batch-minor layout:
// out[x*batch+b] = sum_f sum_d kernels[f*D+d] * feats[(f*D + x(+)d)*batch + b].
class BatchCrossCorrelator {
 public:
  BatchCrossCorrelator(int side, int batch, int freq_count);
  ~BatchCrossCorrelator();

  int side() const;
  int batch() const;
  int freq_count() const;

  // kernels: (F,D); feats: (F,D,B); out: (D,B), overwritten.
  void correlate(const double* kernels, const double* feats, double* out);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lflow
