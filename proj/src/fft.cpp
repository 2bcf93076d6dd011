#include "lflow/fft.hpp"

#include <cstring>

#if defined(LFLOW_HAVE_FFTW)
#include <fftw3.h>
#endif

namespace lflow {

bool fft_available() {
#if defined(LFLOW_HAVE_FFTW)
  return true;
#else
  return false;
#endif
}

#if defined(LFLOW_HAVE_FFTW)

struct AutoCorrelator::Impl {
  int side = 0;
  int sites = 0;
  int spec = 0;  // side * (side/2 + 1)
  double* real = nullptr;
  fftw_complex* freq = nullptr;
  double* corr = nullptr;
  fftw_plan fwd{};
  fftw_plan inv{};

  explicit Impl(int l) : side(l), sites(l * l), spec(l * (l / 2 + 1)) {
    real = fftw_alloc_real(sites);
    freq = fftw_alloc_complex(spec);
    corr = fftw_alloc_real(sites);
    fwd = fftw_plan_dft_r2c_2d(side, side, real, freq, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_2d(side, side, freq, corr, FFTW_ESTIMATE);
  }
  ~Impl() {
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(freq);
    fftw_free(corr);
  }
};

AutoCorrelator::AutoCorrelator(std::unique_ptr<Impl> impl)
    : impl_(std::move(impl)) {}
AutoCorrelator::~AutoCorrelator() = default;

std::unique_ptr<AutoCorrelator> AutoCorrelator::create(
    const LatticeGeometry& geo) {
  return std::unique_ptr<AutoCorrelator>(
      new AutoCorrelator(std::make_unique<Impl>(geo.extent)));
}

std::unique_ptr<AutoCorrelator> AutoCorrelator::create_if_worthwhile(
    const LatticeGeometry& geo) {
  if (geo.sites < kFftMinSites) return nullptr;
  return create(geo);
}

void AutoCorrelator::accumulate(std::span<const double> phi,
                                std::vector<double>& out) {
  Impl& s = *impl_;
  if (static_cast<int>(phi.size()) != s.sites ||
      static_cast<int>(out.size()) != s.sites) {
    throw ValidationError("autocorrelation size mismatch");
  }
  std::memcpy(s.real, phi.data(), s.sites * sizeof(double));
  fftw_execute(s.fwd);
  for (int i = 0; i < s.spec; ++i) {
    s.freq[i][0] = s.freq[i][0] * s.freq[i][0] + s.freq[i][1] * s.freq[i][1];
    s.freq[i][1] = 0.0;
  }
  fftw_execute(s.inv);
  const double norm = 1.0 / s.sites;
  for (int i = 0; i < s.sites; ++i) out[i] += s.corr[i] * norm;
}

struct BatchCrossCorrelator::Impl {
  int side, sites, spec, batch, freqs;
  double* real = nullptr;        // (D, B) batch-minor staging
  fftw_complex* sig = nullptr;   // (spec, B)
  fftw_complex* acc = nullptr;   // (spec, B)
  double* ker_real = nullptr;    // (F, D)
  fftw_complex* ker_hat = nullptr;  // (F, spec)
  fftw_plan fwd_batch{};
  fftw_plan inv_batch{};
  fftw_plan fwd_kernels{};

  Impl(int l, int b, int f)
      : side(l), sites(l * l), spec(l * (l / 2 + 1)), batch(b), freqs(f) {
    real = fftw_alloc_real(static_cast<std::size_t>(sites) * batch);
    sig = fftw_alloc_complex(static_cast<std::size_t>(spec) * batch);
    acc = fftw_alloc_complex(static_cast<std::size_t>(spec) * batch);
    ker_real = fftw_alloc_real(static_cast<std::size_t>(freqs) * sites);
    ker_hat = fftw_alloc_complex(static_cast<std::size_t>(freqs) * spec);

    int n[2] = {side, side};
    // Batch-minor data: stride = batch, successive transforms offset by 1.
    fwd_batch = fftw_plan_many_dft_r2c(2, n, batch, real, nullptr, batch, 1,
                                       sig, nullptr, batch, 1, FFTW_ESTIMATE);
    inv_batch = fftw_plan_many_dft_c2r(2, n, batch, acc, nullptr, batch, 1,
                                       real, nullptr, batch, 1, FFTW_ESTIMATE);
    // Kernels are row-major contiguous.
    fwd_kernels = fftw_plan_many_dft_r2c(2, n, freqs, ker_real, nullptr, 1,
                                         sites, ker_hat, nullptr, 1, spec,
                                         FFTW_ESTIMATE);
  }
  ~Impl() {
    fftw_destroy_plan(fwd_batch);
    fftw_destroy_plan(inv_batch);
    fftw_destroy_plan(fwd_kernels);
    fftw_free(real);
    fftw_free(sig);
    fftw_free(acc);
    fftw_free(ker_real);
    fftw_free(ker_hat);
  }
};

BatchCrossCorrelator::BatchCrossCorrelator(int side, int batch, int freq_count)
    : impl_(std::make_unique<Impl>(side, batch, freq_count)) {}
BatchCrossCorrelator::~BatchCrossCorrelator() = default;

int BatchCrossCorrelator::side() const { return impl_->side; }
int BatchCrossCorrelator::batch() const { return impl_->batch; }
int BatchCrossCorrelator::freq_count() const { return impl_->freqs; }

void BatchCrossCorrelator::correlate(const double* kernels,
                                     const double* feats, double* out) {
  Impl& s = *impl_;
  const std::size_t db = static_cast<std::size_t>(s.sites) * s.batch;
  const std::size_t sb = static_cast<std::size_t>(s.spec) * s.batch;

  std::memcpy(s.ker_real, kernels,
              static_cast<std::size_t>(s.freqs) * s.sites * sizeof(double));
  fftw_execute(s.fwd_kernels);

  std::memset(s.acc, 0, sb * sizeof(fftw_complex));
  for (int f = 0; f < s.freqs; ++f) {
    std::memcpy(s.real, feats + static_cast<std::size_t>(f) * db,
                db * sizeof(double));
    fftw_execute(s.fwd_batch);
    const fftw_complex* kh = s.ker_hat + static_cast<std::size_t>(f) * s.spec;
    for (int i = 0; i < s.spec; ++i) {
      // Cross-correlation: multiply by the conjugated kernel spectrum.
      const double kr = kh[i][0];
      const double ki = -kh[i][1];
      fftw_complex* row = s.sig + static_cast<std::size_t>(i) * s.batch;
      fftw_complex* arow = s.acc + static_cast<std::size_t>(i) * s.batch;
      for (int b = 0; b < s.batch; ++b) {
        arow[b][0] += kr * row[b][0] - ki * row[b][1];
        arow[b][1] += kr * row[b][1] + ki * row[b][0];
      }
    }
  }
  fftw_execute(s.inv_batch);
  const double norm = 1.0 / s.sites;
  for (std::size_t j = 0; j < db; ++j) out[j] = s.real[j] * norm;
}

#else  // !LFLOW_HAVE_FFTW

struct AutoCorrelator::Impl {};
AutoCorrelator::AutoCorrelator(std::unique_ptr<Impl> impl)
    : impl_(std::move(impl)) {}
AutoCorrelator::~AutoCorrelator() = default;

std::unique_ptr<AutoCorrelator> AutoCorrelator::create(
    const LatticeGeometry&) {
  throw Error("built without FFT support");
}
std::unique_ptr<AutoCorrelator> AutoCorrelator::create_if_worthwhile(
    const LatticeGeometry&) {
  return nullptr;
}
void AutoCorrelator::accumulate(std::span<const double>,
                                std::vector<double>&) {
  throw Error("built without FFT support");
}

struct BatchCrossCorrelator::Impl {};
BatchCrossCorrelator::BatchCrossCorrelator(int, int, int) {
  throw Error("built without FFT support");
}
BatchCrossCorrelator::~BatchCrossCorrelator() = default;
int BatchCrossCorrelator::side() const { return 0; }
int BatchCrossCorrelator::batch() const { return 0; }
int BatchCrossCorrelator::freq_count() const { return 0; }
void BatchCrossCorrelator::correlate(const double*, const double*, double*) {
  throw Error("built without FFT support");
}

#endif

}  // namespace lflow
