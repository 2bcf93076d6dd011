#include <doctest.h>

#include <cmath>
#include <limits>

#include "lflow/phi4.hpp"
#include "lflow/rng.hpp"
#include "lflow/tape.hpp"

using namespace lflow;

namespace {

FieldBatch random_batch(const LatticeGeometry& geo, int count,
                        std::uint64_t seed) {
  FieldBatch batch(geo, count);
  Rng rng(seed, Stream::kScratch);
  for (double& v : batch.values) v = rng.gaussian();
  return batch;
}

}  // namespace

TEST_CASE("action on simple fields") {
  LatticeGeometry geo(4);
  Phi4Couplings c{-4.0, 6.975};
  std::vector<double> zero(geo.sites, 0.0);
  CHECK(action(zero, geo, c) == 0.0);

  LatticeGeometry geo2(2);
  std::vector<double> ones(geo2.sites, 1.0);
  CHECK(action(ones, geo2, c) == doctest::Approx(11.9).epsilon(1e-12));
}

TEST_CASE("action symmetries") {
  LatticeGeometry geo(6);
  Phi4Couplings c{-4.0, 6.975};
  auto batch = random_batch(geo, 1, 21);
  const double s0 = action(batch.sample(0), geo, c);

  for (const auto& g : enumerate_group(geo)) {
    auto transformed = apply_symmetry_to_field(g, batch);
    const double sg = action(transformed.sample(0), geo, c);
    CHECK(std::abs(sg - s0) <= 1e-10 * (1.0 + std::abs(s0)));
  }

  Rng rng(22, Stream::kScratch);
  auto group = enumerate_group(geo);
  for (int trial = 0; trial < 20; ++trial) {
    auto sample = random_batch(geo, 1, 100 + trial);
    const double s = action(sample.sample(0), geo, c);
    const auto& g = group[rng.next_u64() % group.size()];
    auto moved = apply_symmetry_to_field(g, sample);
    CHECK(action(moved.sample(0), geo, c) ==
          doctest::Approx(s).epsilon(1e-12));

    FieldBatch flipped = sample;
    for (double& v : flipped.values) v = -v;
    CHECK(action(flipped.sample(0), geo, c) ==
          doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("action input validation") {
  LatticeGeometry geo(3);
  Phi4Couplings c{1.0, 0.5};
  std::vector<double> bad(geo.sites, 0.0);
  bad[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(action(bad, geo, c), NumericError);

  std::vector<double> wrong_size(geo.sites + 1, 0.0);
  CHECK_THROWS_AS(action(wrong_size, geo, c), ValidationError);

  CHECK_THROWS_AS((Phi4Couplings{1.0, -0.5}.validate()), ValidationError);
  CHECK_THROWS_AS((Phi4Couplings{-1.0, 0.0}.validate()), ValidationError);
  CHECK_NOTHROW((Phi4Couplings{-4.0, 6.975}.validate()));
  CHECK_NOTHROW((Phi4Couplings{0.5, 0.0}.validate()));
}

TEST_CASE("log density identities") {
  LatticeGeometry geo(3);
  Phi4Couplings c{0.7, 0.3};
  auto a = random_batch(geo, 1, 31);
  auto b = random_batch(geo, 1, 32);

  CHECK(log_unnormalized_density(a.sample(0), geo, c) ==
        -action(a.sample(0), geo, c));

  // Density ratio equals exp(S(a) - S(b)).
  const double ratio = std::exp(log_unnormalized_density(b.sample(0), geo, c) -
                                log_unnormalized_density(a.sample(0), geo, c));
  CHECK(ratio == doctest::Approx(std::exp(action(a.sample(0), geo, c) -
                                          action(b.sample(0), geo, c)))
                     .epsilon(1e-12));

  // Larger quartic coupling can only lower the log density of a nonzero
  // field.
  Phi4Couplings stronger{0.7, 0.9};
  CHECK(log_unnormalized_density(a.sample(0), geo, stronger) <
        log_unnormalized_density(a.sample(0), geo, c));

  std::vector<double> zero(geo.sites, 0.0);
  CHECK(log_unnormalized_density(zero, geo, c) == 0.0);
}

TEST_CASE("action gradient matches central finite differences") {
  LatticeGeometry geo(4);
  Phi4Couplings c{-4.0, 6.975};
  auto batch = random_batch(geo, 1, 41);
  auto field = batch.sample(0);
  auto grad = action_gradient(field, geo, c);

  const double h = 1e-5;
  std::vector<double> probe(field.begin(), field.end());
  for (int x = 0; x < geo.sites; ++x) {
    probe[x] = field[x] + h;
    const double up = action(probe, geo, c);
    probe[x] = field[x] - h;
    const double down = action(probe, geo, c);
    probe[x] = field[x];
    const double fd = (up - down) / (2.0 * h);
    CHECK(std::abs(grad[x] - fd) <= 1e-6 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("free theory susceptibility") {
  LatticeGeometry geo(6);
  CHECK(free_theory_chi2(1.0, geo) == 0.5);
  CHECK(free_theory_chi2(0.5, geo) == 1.0);
  CHECK_THROWS_AS(free_theory_chi2(0.0, geo), ValidationError);
  CHECK_THROWS_AS(free_theory_chi2(-1.0, geo), ValidationError);
  for (int side : {2, 4, 8}) {
    CHECK(free_theory_chi2(0.7, LatticeGeometry(side)) ==
          free_theory_chi2(0.7, geo));
  }
}

TEST_CASE("taped action equals the direct evaluation") {
  LatticeGeometry geo(4);
  Phi4Couplings c{-4.0, 6.975};
  const int batch = 5;
  auto fields = random_batch(geo, batch, 51);

  grad::Tape tape;
  auto phi = tape.input({geo.sites, batch});
  auto s = action_on_tape(tape, phi, geo, c);
  tape.set_loss(tape.mean_vec(s));

  // Site-major transpose of the batch.
  grad::Tensor site_major({geo.sites, batch});
  for (int b = 0; b < batch; ++b) {
    for (int x = 0; x < geo.sites; ++x) {
      site_major.data[static_cast<std::size_t>(x) * batch + b] =
          fields.sample(b)[x];
    }
  }
  tape.bind_input(phi, site_major);
  tape.forward();

  auto direct = action_batch(fields, c);
  for (int b = 0; b < batch; ++b) {
    CHECK(tape.value(s)[b] ==
          doctest::Approx(direct[b]).epsilon(1e-12));
  }
}
