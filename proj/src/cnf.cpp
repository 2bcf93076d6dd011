#include "lflow/cnf.hpp"

#include <cmath>
#include <cstring>

#include "lflow/fft.hpp"

namespace lflow {

namespace {

#if defined(__GNUC__)
inline void sincos_both(double x, double* s, double* c) { ::sincos(x, s, c); }
#else
inline void sincos_both(double x, double* s, double* c) {
  *s = std::sin(x);
  *c = std::cos(x);
}
#endif

inline void axpy(double* dst, const double* src, double c, int n) {
  for (int i = 0; i < n; ++i) dst[i] += c * src[i];
}

}  // namespace

TimeKernel::Active TimeKernel::at(double t) const {
  validate();
  const double eps = 1e-12 * std::max(1.0, horizon);
  if (t < -eps || t > horizon + eps) {
    throw ValidationError("time outside the kernel support");
  }
  t = std::min(std::max(t, 0.0), horizon);
  const double pos = t * (dims - 1) / horizon;
  int i0 = static_cast<int>(pos);
  if (i0 >= dims - 1) i0 = dims - 2;
  const double frac = pos - i0;
  Active a;
  a.index[0] = i0;
  a.weight[0] = 1.0 - frac;
  a.count = 1;
  if (frac > 0.0) {
    a.index[1] = i0 + 1;
    a.weight[1] = frac;
    a.count = 2;
  }
  return a;
}

std::vector<double> TimeKernel::weights(double t) const {
  Active a = at(t);
  std::vector<double> w(dims, 0.0);
  for (int i = 0; i < a.count; ++i) w[a.index[i]] = a.weight[i];
  return w;
}

std::string to_string(CnfVariant v) {
  switch (v) {
    case CnfVariant::kFullEquivariant: return "full_equivariant";
    case CnfVariant::kTranslationOnly: return "translation_only";
    case CnfVariant::kNoSignFlip: return "no_sign_flip";
    case CnfVariant::kNeither: return "neither";
  }
  return "?";
}

CnfVariant cnf_variant_from_string(const std::string& s) {
  if (s == "full_equivariant") return CnfVariant::kFullEquivariant;
  if (s == "translation_only") return CnfVariant::kTranslationOnly;
  if (s == "no_sign_flip") return CnfVariant::kNoSignFlip;
  if (s == "neither") return CnfVariant::kNeither;
  throw ConfigError("unknown flow variant: " + s);
}

bool variant_shares_orbits(CnfVariant v) {
  return v == CnfVariant::kFullEquivariant || v == CnfVariant::kNoSignFlip;
}

bool variant_sign_symmetric(CnfVariant v) {
  return v == CnfVariant::kFullEquivariant ||
         v == CnfVariant::kTranslationOnly;
}

CnfFlow::CnfFlow(LatticeGeometry geo, CnfVariant variant, TimeKernel kernel,
                 int freq_count, std::uint64_t omega_seed, int rk4_steps)
    : geo_(geo),
      variant_(variant),
      kernel_(kernel),
      freq_count_(freq_count),
      omega_seed_(omega_seed),
      rk4_steps_(rk4_steps),
      orbits_(compute_orbits(geo)) {
  kernel_.validate();
  if (freq_count_ < 1) throw ValidationError("need at least one frequency");
  set_rk4_steps(rk4_steps);

  if (variant_shares_orbits(variant_)) {
    spatial_size_ = orbits_.count;
    spatial_index_ = orbits_.orbit_id;
  } else {
    spatial_size_ = geo_.sites;
    spatial_index_.resize(geo_.sites);
    for (int d = 0; d < geo_.sites; ++d) spatial_index_[d] = d;
  }

  const int a = kernel_.dims;
  const int f = freq_count_;
  // Zero-initialised weights make the flow exactly the identity map.
  params_.add("w_sin", grad::Tensor({a, f, spatial_size_}));
  grad::Tensor omega({f});
  Rng rng(omega_seed_, Stream::kOmegaInit);
  for (double& v : omega.data) v = rng.gaussian();
  params_.add("omega", std::move(omega));
  if (!variant_sign_symmetric(variant_)) {
    params_.add("w_cos", grad::Tensor({a, f, spatial_size_}));
    params_.add("w_const", grad::Tensor({a, 1, spatial_size_}));
  }
}

void CnfFlow::set_rk4_steps(int steps) {
  if (steps < 1) throw ValidationError("integrator needs at least one step");
  rk4_steps_ = steps;
}

nlohmann::json CnfFlow::metadata() const {
  return nlohmann::json{{"kind", "cnf"},
                        {"variant", to_string(variant_)},
                        {"side", geo_.extent},
                        {"time_dims", kernel_.dims},
                        {"horizon", kernel_.horizon},
                        {"freq_count", freq_count_},
                        {"omega_seed", omega_seed_},
                        {"rk4_steps", rk4_steps_}};
}

// Gathered kernel for one weight tensor at time t: out[f*D + d] combines the
// active time slices and maps the spatial column through the sharing index.
std::vector<double> CnfFlow::expanded_kernel(const grad::Tensor& w,
                                             double t) const {
  const auto act = kernel_.at(t);
  const int f_dim = w.dim(1);
  const int s = spatial_size_;
  const int d_count = geo_.sites;
  std::vector<double> combined(static_cast<std::size_t>(f_dim) * s);
  {
    const double* w0 = w.data.data() +
                       static_cast<std::size_t>(act.index[0]) * f_dim * s;
    for (std::size_t j = 0; j < combined.size(); ++j) {
      combined[j] = act.weight[0] * w0[j];
    }
    if (act.count == 2) {
      const double* w1 = w.data.data() +
                         static_cast<std::size_t>(act.index[1]) * f_dim * s;
      for (std::size_t j = 0; j < combined.size(); ++j) {
        combined[j] += act.weight[1] * w1[j];
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(f_dim) * d_count);
  for (int f = 0; f < f_dim; ++f) {
    const double* src = combined.data() + static_cast<std::size_t>(f) * s;
    double* dst = out.data() + static_cast<std::size_t>(f) * d_count;
    for (int d = 0; d < d_count; ++d) dst[d] = src[spatial_index_[d]];
  }
  return out;
}

struct CnfFlow::Work {
  std::vector<double> feat_sin, feat_cos;  // (F,D,B)
  std::vector<double> colsum;              // (F,B)
  std::vector<double> corr_tmp;            // (D,B) staging for the FFT path
  std::vector<int> shift;                  // (D,D): shift[d*D+x] = x (+) d
  std::unique_ptr<BatchCrossCorrelator> fft;
  bool fft_checked = false;
};

void CnfFlow::velocity_div_batch(const std::vector<double>& state, int batch,
                                 double t, Work& w, std::vector<double>& vel,
                                 std::vector<double>& div) const {
  const int d_count = geo_.sites;
  const int f_count = freq_count_;
  const int side = geo_.extent;
  const std::size_t db = static_cast<std::size_t>(d_count) * batch;
  const double* omega = params_.at("omega").data.data();

  if (!w.fft_checked) {
    w.fft_checked = true;
    if (d_count >= kFftMinSites && fft_available()) {
      w.fft = std::make_unique<BatchCrossCorrelator>(side, batch, f_count);
    }
  }
  w.feat_sin.resize(f_count * db);
  w.feat_cos.resize(f_count * db);
  w.colsum.resize(static_cast<std::size_t>(f_count) * batch);

  for (int f = 0; f < f_count; ++f) {
    const double om = omega[f];
    double* s = w.feat_sin.data() + f * db;
    double* c = w.feat_cos.data() + f * db;
    for (std::size_t j = 0; j < db; ++j) sincos_both(om * state[j], &s[j], &c[j]);
  }

  // Accumulates sum_f corr(ker_f, feat_f) into out. The FFT path needs
  // matching frequency counts, so the single-channel constant block always
  // takes the direct loops.
  auto corr = [&](const std::vector<double>& feat,
                  const std::vector<double>& ker, int f_dim, double* out) {
    if (w.fft && f_dim == f_count) {
      bool all_zero = true;
      for (double v : ker) {
        if (v != 0.0) {
          all_zero = false;
          break;
        }
      }
      if (all_zero) return;
      w.corr_tmp.resize(db);
      w.fft->correlate(ker.data(), feat.data(), w.corr_tmp.data());
      for (std::size_t j = 0; j < db; ++j) out[j] += w.corr_tmp[j];
      return;
    }
    if (w.shift.empty()) {
      w.shift.resize(static_cast<std::size_t>(d_count) * d_count);
      for (int d = 0; d < d_count; ++d) {
        const int d1 = d / side, d2 = d % side;
        for (int x = 0; x < d_count; ++x) {
          const int x1 = x / side, x2 = x % side;
          w.shift[static_cast<std::size_t>(d) * d_count + x] =
              ((x1 + d1) % side) * side + (x2 + d2) % side;
        }
      }
    }
    for (int f = 0; f < f_dim; ++f) {
      const double* featf = feat.data() + f * db;
      const double* kerf = ker.data() + static_cast<std::size_t>(f) * d_count;
      for (int d = 0; d < d_count; ++d) {
        const double k = kerf[d];
        if (k == 0.0) continue;
        const int* tbl = w.shift.data() + static_cast<std::size_t>(d) * d_count;
        for (int x = 0; x < d_count; ++x) {
          axpy(out + static_cast<std::size_t>(x) * batch,
               featf + static_cast<std::size_t>(tbl[x]) * batch, k, batch);
        }
      }
    }
  };

  auto column_sums = [&](const std::vector<double>& feat) {
    for (int f = 0; f < f_count; ++f) {
      const double* src = feat.data() + f * db;
      double* out = w.colsum.data() + static_cast<std::size_t>(f) * batch;
      std::memcpy(out, src, static_cast<std::size_t>(batch) * sizeof(double));
      for (int x = 1; x < d_count; ++x) {
        const double* row = src + static_cast<std::size_t>(x) * batch;
        for (int b = 0; b < batch; ++b) out[b] += row[b];
      }
    }
  };

  vel.assign(db, 0.0);
  div.assign(batch, 0.0);

  const auto ker_sin = expanded_kernel(params_.at("w_sin"), t);
  corr(w.feat_sin, ker_sin, f_count, vel.data());

  // Only the zero-displacement weight reaches the Jacobian diagonal.
  column_sums(w.feat_cos);
  for (int f = 0; f < f_count; ++f) {
    const double coef = ker_sin[static_cast<std::size_t>(f) * d_count] * omega[f];
    axpy(div.data(), w.colsum.data() + static_cast<std::size_t>(f) * batch,
         coef, batch);
  }

  if (!variant_sign_symmetric(variant_)) {
    const auto ker_cos = expanded_kernel(params_.at("w_cos"), t);
    corr(w.feat_cos, ker_cos, f_count, vel.data());

    column_sums(w.feat_sin);
    for (int f = 0; f < f_count; ++f) {
      const double coef =
          ker_cos[static_cast<std::size_t>(f) * d_count] * omega[f];
      axpy(div.data(), w.colsum.data() + static_cast<std::size_t>(f) * batch,
           -coef, batch);
    }

    // Constant basis: a spatially uniform, time-dependent drift with zero
    // divergence.
    const auto ker_const = expanded_kernel(params_.at("w_const"), t);
    double drift = 0.0;
    for (int d = 0; d < d_count; ++d) drift += ker_const[d];
    if (drift != 0.0) {
      for (std::size_t j = 0; j < db; ++j) vel[j] += drift;
    }
  }
}

PushForward CnfFlow::integrate(const FieldBatch& start, int steps,
                               bool forward_direction) const {
  if (start.geo != geo_) throw ValidationError("field lattice mismatch");
  if (steps < 1) throw ValidationError("integrator needs at least one step");
  const int batch = start.count;
  const int d_count = geo_.sites;
  const std::size_t db = static_cast<std::size_t>(d_count) * batch;
  const double horizon = kernel_.horizon;
  const double h = (forward_direction ? 1.0 : -1.0) * horizon / steps;

  std::vector<double> y = to_site_major(start);
  std::vector<double> logdet(batch, 0.0);
  std::vector<double> k, acc(db), ytmp(db), div, dacc(batch);
  Work w;

  for (int i = 0; i < steps; ++i) {
    // Stage times as exact rationals of the horizon so the kernel domain
    // check never trips on accumulated rounding.
    const int base = forward_direction ? i : steps - i;
    const double t0 = horizon * base / steps;
    const double tm =
        horizon * (2 * base + (forward_direction ? 1 : -1)) / (2.0 * steps);
    const double t1 =
        horizon * (forward_direction ? base + 1 : base - 1) / steps;

    velocity_div_batch(y, batch, t0, w, k, div);
    std::memcpy(acc.data(), k.data(), db * sizeof(double));
    std::memcpy(dacc.data(), div.data(), batch * sizeof(double));

    for (std::size_t j = 0; j < db; ++j) ytmp[j] = y[j] + 0.5 * h * k[j];
    velocity_div_batch(ytmp, batch, tm, w, k, div);
    axpy(acc.data(), k.data(), 2.0, static_cast<int>(db));
    axpy(dacc.data(), div.data(), 2.0, batch);

    for (std::size_t j = 0; j < db; ++j) ytmp[j] = y[j] + 0.5 * h * k[j];
    velocity_div_batch(ytmp, batch, tm, w, k, div);
    axpy(acc.data(), k.data(), 2.0, static_cast<int>(db));
    axpy(dacc.data(), div.data(), 2.0, batch);

    for (std::size_t j = 0; j < db; ++j) ytmp[j] = y[j] + h * k[j];
    velocity_div_batch(ytmp, batch, t1, w, k, div);
    axpy(acc.data(), k.data(), 1.0, static_cast<int>(db));
    axpy(dacc.data(), div.data(), 1.0, batch);

    const double w6 = h / 6.0;
    for (std::size_t j = 0; j < db; ++j) y[j] += w6 * acc[j];
    for (int b = 0; b < batch; ++b) logdet[b] += w6 * dacc[b];

    for (std::size_t j = 0; j < db; ++j) {
      if (!std::isfinite(y[j])) {
        throw NumericError("non-finite state at integration step " +
                           std::to_string(i));
      }
    }
  }

  PushForward out;
  out.field = from_site_major(geo_, batch, y);
  out.delta_logdet = std::move(logdet);
  return out;
}

PushForward CnfFlow::forward(const FieldBatch& z) const {
  return integrate(z, rk4_steps_, true);
}

PushForward CnfFlow::inverse(const FieldBatch& phi) const {
  return integrate(phi, rk4_steps_, false);
}

std::pair<grad::ValueRef, grad::ValueRef> CnfFlow::build_forward(
    grad::Tape& tape, grad::ValueRef z) const {
  const int d_count = geo_.sites;
  const int f_count = freq_count_;
  const int side = geo_.extent;
  const int a_dims = kernel_.dims;
  const int batch = tape.value(z).dim(1);
  if (tape.value(z).dim(0) != d_count) {
    throw ValidationError("latent input does not match the lattice");
  }
  const bool extended = !variant_sign_symmetric(variant_);

  auto w_sin = tape.param("w_sin", {a_dims, f_count, spatial_size_});
  auto omega = tape.param("omega", {f_count});
  grad::ValueRef w_cos, w_const, ones;
  if (extended) {
    w_cos = tape.param("w_cos", {a_dims, f_count, spatial_size_});
    w_const = tape.param("w_const", {a_dims, 1, spatial_size_});
    ones = tape.input({1, d_count, batch}, "ones");
    grad::Tensor one_t({1, d_count, batch});
    one_t.fill(1.0);
    tape.bind_input(ones, one_t);
  }
  auto sidx = std::make_shared<const std::vector<int>>(spatial_index_);

  auto zeros_b = tape.input({batch}, "logdet_zero");
  auto logdet = zeros_b;
  auto y = z;

  auto gathered = [&](grad::ValueRef w, const TimeKernel::Active& act) {
    auto s0 = tape.slice_axis0(w, act.index[0]);
    auto combined = tape.scale(s0, act.weight[0]);
    if (act.count == 2) {
      auto s1 = tape.slice_axis0(w, act.index[1]);
      combined = tape.add_scaled(combined, s1, act.weight[1]);
    }
    return tape.gather_last(combined, sidx);
  };

  auto stage = [&](grad::ValueRef state, double t)
      -> std::pair<grad::ValueRef, grad::ValueRef> {
    const auto act = kernel_.at(t);
    auto ker_sin = gathered(w_sin, act);
    auto u = tape.outer_scale(state, omega);
    auto [s, c] = tape.sin_cos(u);
    auto vel = tape.circ_corr(s, ker_sin, side);
    auto coef_sin = tape.mul(tape.pick_last0(ker_sin), omega);
    auto div = tape.contract_first(tape.sum_sites(c), coef_sin);
    if (extended) {
      auto ker_cos = gathered(w_cos, act);
      vel = tape.add(vel, tape.circ_corr(c, ker_cos, side));
      auto coef_cos = tape.mul(tape.pick_last0(ker_cos), omega);
      div = tape.sub(div, tape.contract_first(tape.sum_sites(s), coef_cos));
      auto ker_const = gathered(w_const, act);
      vel = tape.add(vel, tape.circ_corr(ones, ker_const, side));
    }
    return {vel, div};
  };

  const int steps = rk4_steps_;
  const double horizon = kernel_.horizon;
  const double h = horizon / steps;
  for (int i = 0; i < steps; ++i) {
    const double t0 = horizon * i / steps;
    const double tm = horizon * (2 * i + 1) / (2.0 * steps);
    const double t1 = horizon * (i + 1) / steps;

    auto [k1, d1] = stage(y, t0);
    auto [k2, d2] = stage(tape.add_scaled(y, k1, 0.5 * h), tm);
    auto [k3, d3] = stage(tape.add_scaled(y, k2, 0.5 * h), tm);
    auto [k4, d4] = stage(tape.add_scaled(y, k3, h), t1);

    auto acc = tape.add_scaled(k1, k2, 2.0);
    acc = tape.add_scaled(acc, k3, 2.0);
    acc = tape.add(acc, k4);
    y = tape.add_scaled(y, acc, h / 6.0);

    auto dacc = tape.add_scaled(d1, d2, 2.0);
    dacc = tape.add_scaled(dacc, d3, 2.0);
    dacc = tape.add(dacc, d4);
    logdet = tape.add_scaled(logdet, dacc, h / 6.0);
  }
  return {y, logdet};
}

std::vector<double> CnfFlow::velocity(std::span<const double> field,
                                      double t) const {
  if (static_cast<int>(field.size()) != geo_.sites) {
    throw ValidationError("field size does not match lattice");
  }
  Work w;
  std::vector<double> state(field.begin(), field.end());
  std::vector<double> vel, div;
  velocity_div_batch(state, 1, t, w, vel, div);
  return vel;
}

double CnfFlow::divergence(std::span<const double> field, double t) const {
  if (static_cast<int>(field.size()) != geo_.sites) {
    throw ValidationError("field size does not match lattice");
  }
  Work w;
  std::vector<double> state(field.begin(), field.end());
  std::vector<double> vel, div;
  velocity_div_batch(state, 1, t, w, vel, div);
  return div[0];
}

std::vector<double> CnfFlow::velocity_reference(std::span<const double> field,
                                                double t) const {
  const int d_count = geo_.sites;
  const int side = geo_.extent;
  const auto act = kernel_.at(t);
  const auto& w_sin = params_.at("w_sin");
  const double* omega = params_.at("omega").data.data();
  const bool extended = !variant_sign_symmetric(variant_);
  const int f_count = freq_count_;
  const int s_size = spatial_size_;

  std::vector<double> vel(d_count, 0.0);
  for (int x = 0; x < d_count; ++x) {
    const int x1 = x / side, x2 = x % side;
    double total = 0.0;
    for (int y = 0; y < d_count; ++y) {
      const int y1 = y / side, y2 = y % side;
      const int disp = ((y1 - x1 + side) % side) * side + (y2 - x2 + side) % side;
      const int col = spatial_index_[disp];
      for (int ai = 0; ai < act.count; ++ai) {
        const int a = act.index[ai];
        const double kw = act.weight[ai];
        for (int f = 0; f < f_count; ++f) {
          const std::size_t at =
              (static_cast<std::size_t>(a) * f_count + f) * s_size + col;
          total += kw * w_sin.data[at] * std::sin(omega[f] * field[y]);
          if (extended) {
            total += kw * params_.at("w_cos").data[at] *
                     std::cos(omega[f] * field[y]);
          }
        }
        if (extended) {
          total += kw *
                   params_.at("w_const")
                       .data[static_cast<std::size_t>(a) * s_size + col];
        }
      }
    }
    vel[x] = total;
  }
  return vel;
}

}  // namespace lflow
