#include "lflow/realnvp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lflow {

namespace {

inline void axpy(double* dst, const double* src, double c, int n) {
  for (int i = 0; i < n; ++i) dst[i] += c * src[i];
}

std::string layer_name(int layer, const char* leaf) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%02d.%s", layer, leaf);
  return buf;
}

}  // namespace

RealNvpFlow::RealNvpFlow(LatticeGeometry geo, RealNvpConfig config,
                         std::uint64_t init_seed)
    : geo_(geo), config_(config), init_seed_(init_seed) {
  config_.validate();
  mask_even_.resize(geo_.sites);
  mask_odd_.resize(geo_.sites);
  for (int x = 0; x < geo_.sites; ++x) {
    auto [x1, x2] = geo_.coords(x);
    const bool even = (x1 + x2) % 2 == 0;
    mask_even_[x] = even ? 1.0 : 0.0;
    mask_odd_[x] = even ? 0.0 : 1.0;
  }

  Rng rng(init_seed_, Stream::kModelInit);
  const int h = config_.hidden;
  for (int l = 0; l < config_.layers; ++l) {
    grad::Tensor w1({h, 1, 3, 3});
    for (double& v : w1.data) v = config_.init_scale * rng.gaussian();
    params_.add(layer_name(l, "conv1.w"), std::move(w1));
    params_.add(layer_name(l, "conv1.b"), grad::Tensor({h}));
    // Zero output head: the stack starts as the identity map.
    params_.add(layer_name(l, "conv2.w"), grad::Tensor({2, h, 3, 3}));
    params_.add(layer_name(l, "conv2.b"), grad::Tensor({2}));
  }
}

nlohmann::json RealNvpFlow::metadata() const {
  return nlohmann::json{{"kind", "realnvp"},
                        {"side", geo_.extent},
                        {"layers", config_.layers},
                        {"hidden", config_.hidden},
                        {"init_scale", config_.init_scale},
                        {"leaky_slope", config_.leaky_slope},
                        {"init_seed", init_seed_}};
}

void RealNvpFlow::conditioner(int layer, const std::vector<double>& masked,
                              int batch, std::vector<double>& log_scale,
                              std::vector<double>& shift) const {
  const int d = geo_.sites;
  const int side = geo_.extent;
  const int hidden = config_.hidden;
  const std::size_t db = static_cast<std::size_t>(d) * batch;

  const auto& w1 = params_.at(layer_name(layer, "conv1.w"));
  const auto& b1 = params_.at(layer_name(layer, "conv1.b"));
  const auto& w2 = params_.at(layer_name(layer, "conv2.w"));
  const auto& b2 = params_.at(layer_name(layer, "conv2.b"));

  static thread_local std::vector<int> ctab;
  static thread_local int ctab_side = 0;
  if (ctab_side != side) {
    ctab.assign(9u * d, 0);
    for (int k = 0; k < 9; ++k) {
      const int u = k / 3 - 1, v = k % 3 - 1;
      for (int x = 0; x < d; ++x) {
        const int x1 = x / side, x2 = x % side;
        ctab[static_cast<std::size_t>(k) * d + x] =
            ((x1 + u + side) % side) * side + (x2 + v + side) % side;
      }
    }
    ctab_side = side;
  }

  auto conv = [&](const double* in, int ci_count, const double* w,
                  const double* bias, int co_count, double* out) {
    std::memset(out, 0,
                static_cast<std::size_t>(co_count) * db * sizeof(double));
    for (int co = 0; co < co_count; ++co) {
      double* dst = out + static_cast<std::size_t>(co) * db;
      for (int ci = 0; ci < ci_count; ++ci) {
        const double* src = in + static_cast<std::size_t>(ci) * db;
        const double* wk = w + (static_cast<std::size_t>(co) * ci_count + ci) * 9;
        for (int k = 0; k < 9; ++k) {
          const double wv = wk[k];
          if (wv == 0.0) continue;
          const int* t = ctab.data() + static_cast<std::size_t>(k) * d;
          for (int x = 0; x < d; ++x) {
            axpy(dst + static_cast<std::size_t>(x) * batch,
                 src + static_cast<std::size_t>(t[x]) * batch, wv, batch);
          }
        }
      }
      const double bv = bias[co];
      for (std::size_t j = 0; j < db; ++j) dst[j] += bv;
    }
  };

  std::vector<double> h1(static_cast<std::size_t>(hidden) * db);
  conv(masked.data(), 1, w1.data.data(), b1.data.data(), hidden, h1.data());
  const double slope = config_.leaky_slope;
  for (double& v : h1) v = v >= 0.0 ? v : slope * v;

  std::vector<double> head(2 * db);
  conv(h1.data(), hidden, w2.data.data(), b2.data.data(), 2, head.data());

  log_scale.resize(db);
  shift.resize(db);
  for (std::size_t j = 0; j < db; ++j) {
    log_scale[j] = std::tanh(head[j]);  // bounded log-scale keeps exp stable
    shift[j] = head[db + j];
  }
}

PushForward RealNvpFlow::forward(const FieldBatch& z) const {
  if (z.geo != geo_) throw ValidationError("field lattice mismatch");
  const int batch = z.count;
  const int d = geo_.sites;
  const std::size_t db = static_cast<std::size_t>(d) * batch;

  std::vector<double> y = to_site_major(z);
  std::vector<double> logdet(batch, 0.0);
  std::vector<double> masked(db), ls, sh;

  for (int l = 0; l < config_.layers; ++l) {
    const auto& frozen = frozen_mask(l);
    for (int x = 0; x < d; ++x) {
      const double m = frozen[x];
      const std::size_t off = static_cast<std::size_t>(x) * batch;
      for (int b = 0; b < batch; ++b) masked[off + b] = m * y[off + b];
    }
    conditioner(l, masked, batch, ls, sh);
    for (int x = 0; x < d; ++x) {
      if (frozen[x] != 0.0) continue;
      const std::size_t off = static_cast<std::size_t>(x) * batch;
      for (int b = 0; b < batch; ++b) {
        const double s = std::exp(ls[off + b]);
        y[off + b] = y[off + b] * s + sh[off + b];
        logdet[b] += ls[off + b];
        if (!std::isfinite(y[off + b])) {
          throw NumericError("non-finite activation in coupling layer " +
                             std::to_string(l));
        }
      }
    }
  }

  PushForward out;
  out.field = from_site_major(geo_, batch, y);
  out.delta_logdet = std::move(logdet);
  return out;
}

PushForward RealNvpFlow::inverse(const FieldBatch& phi) const {
  if (phi.geo != geo_) throw ValidationError("field lattice mismatch");
  const int batch = phi.count;
  const int d = geo_.sites;
  const std::size_t db = static_cast<std::size_t>(d) * batch;

  std::vector<double> y = to_site_major(phi);
  std::vector<double> logdet(batch, 0.0);
  std::vector<double> masked(db), ls, sh;

  for (int l = config_.layers - 1; l >= 0; --l) {
    const auto& frozen = frozen_mask(l);
    for (int x = 0; x < d; ++x) {
      const double m = frozen[x];
      const std::size_t off = static_cast<std::size_t>(x) * batch;
      for (int b = 0; b < batch; ++b) masked[off + b] = m * y[off + b];
    }
    conditioner(l, masked, batch, ls, sh);
    for (int x = 0; x < d; ++x) {
      if (frozen[x] != 0.0) continue;
      const std::size_t off = static_cast<std::size_t>(x) * batch;
      for (int b = 0; b < batch; ++b) {
        y[off + b] = (y[off + b] - sh[off + b]) * std::exp(-ls[off + b]);
        logdet[b] -= ls[off + b];
        if (!std::isfinite(y[off + b])) {
          throw NumericError("non-finite activation in coupling layer " +
                             std::to_string(l));
        }
      }
    }
  }

  PushForward out;
  out.field = from_site_major(geo_, batch, y);
  out.delta_logdet = std::move(logdet);
  return out;
}

std::pair<grad::ValueRef, grad::ValueRef> RealNvpFlow::build_forward(
    grad::Tape& tape, grad::ValueRef z) const {
  const int d = geo_.sites;
  const int side = geo_.extent;
  const int batch = tape.value(z).dim(1);
  if (tape.value(z).dim(0) != d) {
    throw ValidationError("latent input does not match the lattice");
  }

  auto zeros_b = tape.input({batch}, "logdet_zero");
  auto logdet = zeros_b;
  auto y = z;

  auto even = std::make_shared<const std::vector<double>>(mask_even_);
  auto odd = std::make_shared<const std::vector<double>>(mask_odd_);

  for (int l = 0; l < config_.layers; ++l) {
    auto frozen = l % 2 == 0 ? even : odd;
    auto active = l % 2 == 0 ? odd : even;

    auto w1 = tape.param(layer_name(l, "conv1.w"),
                         {config_.hidden, 1, 3, 3});
    auto b1 = tape.param(layer_name(l, "conv1.b"), {config_.hidden});
    auto w2 = tape.param(layer_name(l, "conv2.w"), {2, config_.hidden, 3, 3});
    auto b2 = tape.param(layer_name(l, "conv2.b"), {2});

    auto masked = tape.scale_sites(y, frozen);
    auto h1 = tape.leaky_relu(
        tape.bias_channels(tape.conv3x3(masked, w1, side), b1),
        config_.leaky_slope);
    auto head = tape.bias_channels(tape.conv3x3(h1, w2, side), b2);
    auto log_scale = tape.tanh(tape.slice_axis0(head, 0));
    auto shift = tape.slice_axis0(head, 1);
    auto scale = tape.exp(log_scale);

    auto transformed = tape.add(tape.mul(y, scale), shift);
    y = tape.add(tape.scale_sites(y, frozen),
                 tape.scale_sites(transformed, active));
    logdet = tape.add(logdet, tape.sum_sites(tape.scale_sites(log_scale, active)));
  }
  return {y, logdet};
}

EquivarianceAudit audit_equivariance(const FlowModel& model,
                                     const FieldBatch& samples,
                                     const Phi4Couplings& couplings) {
  const auto& geo = model.geometry();
  const auto group = enumerate_group(geo);
  const int g_count = static_cast<int>(group.size());

  EquivarianceAudit audit;
  audit.per_sample.resize(samples.count);
  audit.model_log_q.assign(samples.count, {});
  audit.target_log_p.assign(samples.count, {});

  for (int i = 0; i < samples.count; ++i) {
    FieldBatch transforms(geo, g_count);
    for (int g = 0; g < g_count; ++g) {
      const auto perm = field_permutation(group[g], geo);
      auto src = samples.sample(i);
      auto dst = transforms.sample(g);
      for (int x = 0; x < geo.sites; ++x) dst[x] = src[perm[x]];
    }
    auto lq = log_q(model, transforms);
    std::vector<double> lp(g_count);
    for (int g = 0; g < g_count; ++g) {
      lp[g] = log_unnormalized_density(transforms.sample(g), geo, couplings);
    }

    SpreadStats st;
    double lo = lq[0], hi = lq[0], sum = 0.0;
    for (double v : lq) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    st.mean = sum / g_count;
    double ss = 0.0;
    for (double v : lq) ss += (v - st.mean) * (v - st.mean);
    st.stddev = std::sqrt(ss / g_count);
    st.spread = hi - lo;

    audit.per_sample[i] = st;
    audit.model_log_q[i] = std::move(lq);
    audit.target_log_p[i] = std::move(lp);
  }
  return audit;
}

std::vector<SpreadStats> equivariance_violation(const FlowModel& model,
                                                const FieldBatch& samples) {
  // Spread of log q only; the target couplings do not matter here.
  Phi4Couplings c{1.0, 0.0};
  return audit_equivariance(model, samples, c).per_sample;
}

}  // namespace lflow
