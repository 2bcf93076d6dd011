#include <doctest.h>

#include "support.hpp"

using namespace lflow;
using lflow::testing::fd_divergence;
using lflow::testing::fd_log_abs_det_jacobian;
using lflow::testing::random_fields;
using lflow::testing::randomize;
using lflow::testing::rms;

namespace {

CnfFlow make_flow(int side, CnfVariant variant, int steps = 50,
                  int time_dims = 10, int freqs = 9) {
  return CnfFlow(LatticeGeometry(side), variant, TimeKernel{time_dims, 1.0},
                 freqs, 99, steps);
}

const CnfVariant kAllVariants[] = {
    CnfVariant::kFullEquivariant, CnfVariant::kTranslationOnly,
    CnfVariant::kNoSignFlip, CnfVariant::kNeither};

}  // namespace

TEST_CASE("interpolation kernel weights") {
  TimeKernel k{5, 1.0};
  CHECK(k.weights(0.0) == std::vector<double>{1, 0, 0, 0, 0});
  CHECK(k.weights(1.0) == std::vector<double>{0, 0, 0, 0, 1});
  CHECK(k.weights(0.125) == std::vector<double>{0.5, 0.5, 0, 0, 0});

  CHECK_THROWS_AS(k.at(-0.01), ValidationError);
  CHECK_THROWS_AS(k.at(1.01), ValidationError);
  CHECK_THROWS_AS((TimeKernel{1, 1.0}.at(0.0)), ValidationError);

  Rng rng(1, Stream::kScratch);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = rng.uniform();
    auto w = k.weights(t);
    double sum = 0.0;
    int nonzero = 0;
    for (double v : w) {
      sum += v;
      if (v != 0.0) ++nonzero;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(nonzero <= 2);
  }
}

TEST_CASE("velocity field zero cases") {
  for (auto variant : kAllVariants) {
    auto flow = make_flow(4, variant);
    std::vector<double> field(16, 0.7);
    auto vel = flow.velocity(field, 0.37);
    for (double v : vel) CHECK(v == 0.0);  // zero-initialised weights

    if (variant_sign_symmetric(variant)) {
      randomize(flow.parameters(), 5, 0.4);
      std::vector<double> zeros(16, 0.0);
      auto v0 = flow.velocity(zeros, 0.37);
      for (double v : v0) CHECK(v == 0.0);  // sine of zero field
    }
  }
}

TEST_CASE("velocity matches the direct double-sum reference") {
  for (auto variant : kAllVariants) {
    auto flow = make_flow(6, variant, 50, 4, 3);
    randomize(flow.parameters(), 7, 0.5);
    auto batch = random_fields(flow.geometry(), 1, 11);
    for (double t : {0.0, 0.31, 0.5, 0.87, 1.0}) {
      auto fast = flow.velocity(batch.sample(0), t);
      auto ref = flow.velocity_reference(batch.sample(0), t);
      CHECK(rms(fast, ref) <= 1e-10);
    }
  }
}

TEST_CASE("velocity field is group equivariant for the shared-orbit variant") {
  auto flow = make_flow(5, CnfVariant::kFullEquivariant, 50, 4, 3);
  randomize(flow.parameters(), 13, 0.5);
  const auto& geo = flow.geometry();
  auto batch = random_fields(geo, 1, 17);
  auto group = enumerate_group(geo);
  Rng rng(19, Stream::kScratch);

  const double t = 0.42;
  auto vel = flow.velocity(batch.sample(0), t);
  for (int trial = 0; trial < 50; ++trial) {
    const auto& g = group[rng.next_u64() % group.size()];
    auto moved = apply_symmetry_to_field(g, batch);
    auto vel_moved = flow.velocity(moved.sample(0), t);
    const auto perm = field_permutation(g, geo);
    double err = 0.0, scale = 0.0;
    for (int x = 0; x < geo.sites; ++x) {
      err = std::max(err, std::abs(vel_moved[x] - vel[perm[x]]));
      scale = std::max(scale, std::abs(vel[perm[x]]));
    }
    CHECK(err <= 1e-12 * (1.0 + scale));
  }
}

TEST_CASE("analytic divergence") {
  SUBCASE("zero weights give zero divergence") {
    auto flow = make_flow(4, CnfVariant::kFullEquivariant);
    auto batch = random_fields(flow.geometry(), 1, 3);
    CHECK(flow.divergence(batch.sample(0), 0.3) == 0.0);
  }

  SUBCASE("closed form at the zero field") {
    for (auto variant : kAllVariants) {
      auto flow = make_flow(4, variant, 50, 6, 4);
      randomize(flow.parameters(), 23, 0.5);
      const double t = 0.41;
      const auto act = flow.time_kernel().at(t);
      const auto& w = flow.parameters().at("w_sin");
      const auto& omega = flow.parameters().at("omega");
      const int f_count = flow.freq_count();
      const int s_size = flow.spatial_size();

      double expected = 0.0;
      for (int f = 0; f < f_count; ++f) {
        double keff0 = 0.0;
        for (int i = 0; i < act.count; ++i) {
          keff0 += act.weight[i] *
                   w.data[(static_cast<std::size_t>(act.index[i]) * f_count + f) *
                          s_size];
        }
        expected += keff0 * omega[f];
      }
      expected *= flow.geometry().sites;

      std::vector<double> zeros(flow.geometry().sites, 0.0);
      CHECK(flow.divergence(zeros, t) ==
            doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("matches the finite-difference Jacobian trace") {
    for (auto variant : kAllVariants) {
      auto flow = make_flow(4, variant, 50, 5, 3);
      randomize(flow.parameters(), 29, 0.5);
      Rng rng(31, Stream::kScratch);
      for (int trial = 0; trial < 10; ++trial) {
        auto batch = random_fields(flow.geometry(), 1, 400 + trial);
        const double t = rng.uniform();
        const double analytic = flow.divergence(batch.sample(0), t);
        const double fd = fd_divergence(flow, batch.sample(0), t);
        CHECK(std::abs(analytic - fd) <= 1e-5 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST_CASE("identity at initialisation is exact") {
  for (auto variant : kAllVariants) {
    auto flow = make_flow(6, variant);
    auto z = random_fields(flow.geometry(), 4, 37);
    auto fwd = flow.forward(z);
    for (std::size_t i = 0; i < z.values.size(); ++i) {
      CHECK(fwd.field.values[i] == z.values[i]);
    }
    for (double ld : fwd.delta_logdet) CHECK(ld == 0.0);
  }
}

TEST_CASE("step doubling changes the output at fourth order") {
  // The hat kernel is only piecewise smooth in time; clean fourth-order
  // self-convergence needs the node times to land on integration steps, so
  // this uses 6 nodes (kinks at multiples of 0.2).
  auto flow = make_flow(6, CnfVariant::kFullEquivariant, 50, 6);
  randomize(flow.parameters(), 41, 0.03);
  auto z = random_fields(flow.geometry(), 3, 43);

  auto coarse = flow.integrate(z, 50, true);
  auto fine = flow.integrate(z, 100, true);
  CHECK(rms(coarse.field.values, fine.field.values) <= 1e-8);
  for (int b = 0; b < z.count; ++b) {
    CHECK(std::abs(coarse.delta_logdet[b] - fine.delta_logdet[b]) <= 1e-8);
  }

  // Halving the step once more shrinks the defect roughly 16-fold.
  auto finer = flow.integrate(z, 200, true);
  const double d1 = rms(coarse.field.values, fine.field.values);
  const double d2 = rms(fine.field.values, finer.field.values);
  CHECK(d2 * 8.0 <= d1);
}

TEST_CASE("log-determinant matches the finite-difference Jacobian") {
  for (auto variant : {CnfVariant::kFullEquivariant, CnfVariant::kNeither}) {
    auto flow = make_flow(3, variant, 50, 5, 3);
    randomize(flow.parameters(), 47, 0.4);
    auto z = random_fields(flow.geometry(), 1, 53);
    auto fwd = flow.forward(z);
    const double oracle = fd_log_abs_det_jacobian(flow, z.sample(0));
    CHECK(std::abs(fwd.delta_logdet[0] - oracle) <=
          1e-4 * std::abs(oracle));
  }
}

TEST_CASE("inverse integration") {
  for (auto variant : kAllVariants) {
    auto flow = make_flow(4, variant, 50, 4, 3);

    auto z = random_fields(flow.geometry(), 3, 59);
    auto identity = flow.inverse(z);
    for (std::size_t i = 0; i < z.values.size(); ++i) {
      CHECK(identity.field.values[i] == z.values[i]);
    }

    randomize(flow.parameters(), 61, 0.3);
    auto fwd = flow.forward(z);
    auto back = flow.inverse(fwd.field);
    CHECK(rms(back.field.values, z.values) <= 1e-6);
    for (int b = 0; b < z.count; ++b) {
      CHECK(std::abs(back.delta_logdet[b] + fwd.delta_logdet[b]) <= 1e-6);
    }
  }
}

TEST_CASE("log q properties") {
  SUBCASE("identity flow reproduces the prior") {
    auto flow = make_flow(4, CnfVariant::kFullEquivariant);
    auto phi = random_fields(flow.geometry(), 5, 67);
    auto lq = log_q(flow, phi);
    auto lr = log_prior_batch(phi);
    for (int b = 0; b < phi.count; ++b) {
      CHECK(lq[b] == doctest::Approx(lr[b]).epsilon(1e-12));
    }
  }

  SUBCASE("sign flip invariance holds exactly for odd-basis variants") {
    for (auto variant :
         {CnfVariant::kFullEquivariant, CnfVariant::kTranslationOnly}) {
      auto flow = make_flow(4, variant, 50, 4, 3);
      randomize(flow.parameters(), 71, 0.4);
      auto phi = random_fields(flow.geometry(), 3, 73);
      FieldBatch negated = phi;
      for (double& v : negated.values) v = -v;
      auto lq = log_q(flow, phi);
      auto lq_neg = log_q(flow, negated);
      for (int b = 0; b < phi.count; ++b) {
        CHECK(std::abs(lq[b] - lq_neg[b]) <= 1e-10);
      }
    }
  }

  SUBCASE("extended basis violates sign flip") {
    auto flow = make_flow(4, CnfVariant::kNoSignFlip, 50, 4, 3);
    randomize(flow.parameters(), 79, 0.4);
    auto phi = random_fields(flow.geometry(), 3, 83);
    FieldBatch negated = phi;
    for (double& v : negated.values) v = -v;
    auto lq = log_q(flow, phi);
    auto lq_neg = log_q(flow, negated);
    double max_gap = 0.0;
    for (int b = 0; b < phi.count; ++b) {
      max_gap = std::max(max_gap, std::abs(lq[b] - lq_neg[b]));
    }
    CHECK(max_gap > 1e-8);
  }

  SUBCASE("spatial invariance over the whole group") {
    auto flow = make_flow(6, CnfVariant::kFullEquivariant, 50, 4, 3);
    randomize(flow.parameters(), 89, 0.4);
    auto z = random_fields(flow.geometry(), 2, 97);
    auto phi = flow.forward(z).field;
    auto lq = log_q(flow, phi);
    for (const auto& g : enumerate_group(flow.geometry())) {
      auto moved = apply_symmetry_to_field(g, phi);
      auto lq_g = log_q(flow, moved);
      for (int b = 0; b < phi.count; ++b) {
        CHECK(std::abs(lq_g[b] - lq[b]) <= 1e-6);
      }
    }
  }

  SUBCASE("translation-only sharing is not rotation invariant") {
    auto flow = make_flow(4, CnfVariant::kTranslationOnly, 50, 4, 3);
    randomize(flow.parameters(), 101, 0.4);
    auto z = random_fields(flow.geometry(), 2, 103);
    auto phi = flow.forward(z).field;
    auto lq = log_q(flow, phi);
    GroupElement rot{0, 0, 1};
    auto moved = apply_symmetry_to_field(rot, phi);
    auto lq_rot = log_q(flow, moved);
    double max_gap = 0.0;
    for (int b = 0; b < phi.count; ++b) {
      max_gap = std::max(max_gap, std::abs(lq_rot[b] - lq[b]));
    }
    CHECK(max_gap > 1e-8);
  }
}

TEST_CASE("flow map commutes with the group action") {
  auto flow = make_flow(5, CnfVariant::kFullEquivariant, 50, 4, 3);
  randomize(flow.parameters(), 107, 0.4);
  const auto& geo = flow.geometry();
  auto z = random_fields(geo, 2, 109);
  auto fwd = flow.forward(z);
  Rng rng(113, Stream::kScratch);
  auto group = enumerate_group(geo);
  for (int trial = 0; trial < 12; ++trial) {
    const auto& g = group[rng.next_u64() % group.size()];
    auto moved_then_flow = flow.forward(apply_symmetry_to_field(g, z));
    auto flow_then_moved = apply_symmetry_to_field(g, fwd.field);
    CHECK(rms(moved_then_flow.field.values, flow_then_moved.values) <= 1e-10);
    for (int b = 0; b < z.count; ++b) {
      CHECK(std::abs(moved_then_flow.delta_logdet[b] - fwd.delta_logdet[b]) <=
            1e-10);
    }
  }
}

TEST_CASE("tape program reproduces the plain evaluation") {
  for (auto variant : kAllVariants) {
    auto flow = make_flow(3, variant, 10, 4, 3);
    randomize(flow.parameters(), 127, 0.4);
    const int batch = 4;
    auto z = random_fields(flow.geometry(), batch, 131);

    grad::Tape tape;
    auto zin = tape.input({flow.geometry().sites, batch});
    auto [phi, logdet] = flow.build_forward(tape, zin);
    tape.set_loss(tape.mean_vec(logdet));
    tape.bind_input(zin, std::span<const double>(to_site_major(z)));
    tape.bind_params(flow.parameters());
    tape.forward();

    auto eval = flow.integrate(z, 10, true);
    auto taped_phi = from_site_major(flow.geometry(), batch,
                                     tape.value(phi).data);
    CHECK(rms(taped_phi.values, eval.field.values) <= 1e-12);
    for (int b = 0; b < batch; ++b) {
      CHECK(tape.value(logdet)[b] ==
            doctest::Approx(eval.delta_logdet[b]).epsilon(1e-12));
    }
  }
}

TEST_CASE("parameter counts follow the sharing pattern") {
  auto geo = LatticeGeometry(6);
  auto orbits = compute_orbits(geo);
  auto full = make_flow(6, CnfVariant::kFullEquivariant);
  CHECK(full.spatial_size() == orbits.count);
  CHECK(static_cast<int>(full.parameters().at("w_sin").size()) ==
        10 * 9 * orbits.count);

  auto trans = make_flow(6, CnfVariant::kTranslationOnly);
  CHECK(trans.spatial_size() == geo.sites);

  auto extended = make_flow(6, CnfVariant::kNoSignFlip);
  CHECK(extended.parameters().has("w_cos"));
  CHECK(extended.parameters().has("w_const"));
  CHECK(!full.parameters().has("w_cos"));
}
