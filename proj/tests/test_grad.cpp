#include <doctest.h>

#include <cmath>
#include <functional>

#include "lflow/lattice.hpp"
#include "lflow/rng.hpp"
#include "lflow/tape.hpp"

using namespace lflow;
using grad::ParameterSet;
using grad::Tape;
using grad::Tensor;
using grad::ValueRef;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.gaussian();
  return t;
}

// Central finite differences of the program loss against the backward pass,
// for every coordinate of every parameter.
void check_gradients(const std::function<void(Tape&)>& build,
                     ParameterSet& params, double h = 1e-5,
                     double tol = 1e-6) {
  Tape tape;
  build(tape);
  auto rec = grad::value_and_grad(tape, params);
  for (auto& [name, value] : params) {
    const Tensor& g = rec.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.data[i];
      value.data[i] = saved + h;
      tape.bind_params(params);
      const double up = tape.forward();
      value.data[i] = saved - h;
      tape.bind_params(params);
      const double down = tape.forward();
      value.data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      INFO("param ", name, " coordinate ", i);
      CHECK(std::abs(g[i] - fd) <= tol * (1.0 + std::abs(fd)));
    }
  }
}

}  // namespace

TEST_CASE("quadratic loss has gradient 2 theta") {
  Rng rng(1, Stream::kScratch);
  ParameterSet params;
  params.add("theta", random_tensor({7}, rng));

  Tape tape;
  auto theta = tape.param("theta", {7});
  auto loss = tape.scale(tape.mean_vec(tape.mul(theta, theta)), 7.0);
  tape.set_loss(loss);

  auto rec = grad::value_and_grad(tape, params);
  double expected_loss = 0.0;
  for (double v : params.at("theta").data) expected_loss += v * v;
  CHECK(rec.loss == doctest::Approx(expected_loss).epsilon(1e-14));
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(rec.at("theta")[i] ==
          doctest::Approx(2.0 * params.at("theta")[i]).epsilon(1e-12));
  }
}

TEST_CASE("loss constant in the parameters has zero gradient") {
  Rng rng(2, Stream::kScratch);
  ParameterSet params;
  params.add("theta", random_tensor({4}, rng));

  Tape tape;
  tape.param("theta", {4});
  auto x = tape.input({5});
  auto loss = tape.mean_vec(x);
  tape.set_loss(loss);
  tape.bind_input(x, random_tensor({5}, rng));

  auto rec = grad::value_and_grad(tape, params);
  for (std::size_t i = 0; i < 4; ++i) CHECK(rec.at("theta")[i] == 0.0);
}

TEST_CASE("elementwise and trig primitives match finite differences") {
  Rng rng(3, Stream::kScratch);
  ParameterSet params;
  params.add("a", random_tensor({3, 4}, rng, 0.7));
  params.add("b", random_tensor({3, 4}, rng, 0.7));

  check_gradients(
      [&](Tape& t) {
        auto a = t.param("a", {3, 4});
        auto b = t.param("b", {3, 4});
        auto [s, c] = t.sin_cos(t.mul(a, b));
        auto mix = t.add_scaled(t.exp(t.scale(s, 0.3)), t.tanh(c), 0.9);
        auto more = t.leaky_relu(t.sub(mix, b), 0.01);
        t.set_loss(t.mean_vec(t.sum_sites(t.mul(more, more))));
      },
      params);
}

TEST_CASE("structure primitives match finite differences") {
  LatticeGeometry geo(3);
  Rng rng(4, Stream::kScratch);
  const int batch = 2, freqs = 2;

  ParameterSet params;
  params.add("field", random_tensor({geo.sites, batch}, rng, 0.5));
  params.add("omega", random_tensor({freqs}, rng));
  params.add("w", random_tensor({4, freqs, geo.sites}, rng, 0.3));

  auto perm = std::make_shared<const std::vector<int>>(
      std::vector<int>{3, 4, 5, 6, 7, 8, 0, 1, 2});
  auto idx = std::make_shared<const std::vector<int>>(
      std::vector<int>{0, 3, 3, 2, 1, 0, 5, 6, 8});
  auto mask = std::make_shared<const std::vector<double>>(
      std::vector<double>{1, 0, 1, 0, 1, 0, 0.5, 1, 0});

  check_gradients(
      [&](Tape& t) {
        auto field = t.param("field", {geo.sites, batch});
        auto omega = t.param("omega", {freqs});
        auto w = t.param("w", {4, freqs, geo.sites});

        auto feats = t.outer_scale(t.permute_sites(field, perm), omega);
        auto [s, c] = t.sin_cos(feats);
        auto ker = t.gather_last(
            t.add_scaled(t.slice_axis0(w, 1), t.slice_axis0(w, 2), 0.6), idx);
        auto vel = t.circ_corr(s, ker, geo.extent);
        auto coef = t.mul(t.pick_last0(ker), omega);
        auto div = t.contract_first(t.sum_sites(c), coef);
        auto masked = t.scale_sites(vel, mask);
        auto per = t.add(t.sum_sites(t.mul(masked, masked)), div);
        t.set_loss(t.mean_vec(per));
      },
      params, 1e-5, 2e-6);
}

TEST_CASE("convolution primitives match finite differences") {
  LatticeGeometry geo(3);
  Rng rng(5, Stream::kScratch);
  const int batch = 2, hidden = 3;

  ParameterSet params;
  params.add("x", random_tensor({geo.sites, batch}, rng, 0.5));
  params.add("w1", random_tensor({hidden, 1, 3, 3}, rng, 0.4));
  params.add("b1", random_tensor({hidden}, rng, 0.2));
  params.add("w2", random_tensor({2, hidden, 3, 3}, rng, 0.4));
  params.add("b2", random_tensor({2}, rng, 0.2));

  check_gradients(
      [&](Tape& t) {
        auto x = t.param("x", {geo.sites, batch});
        auto w1 = t.param("w1", {hidden, 1, 3, 3});
        auto b1 = t.param("b1", {hidden});
        auto w2 = t.param("w2", {2, hidden, 3, 3});
        auto b2 = t.param("b2", {2});

        auto h1 = t.leaky_relu(
            t.bias_channels(t.conv3x3(x, w1, geo.extent), b1), 0.01);
        auto head = t.bias_channels(t.conv3x3(h1, w2, geo.extent), b2);
        auto ls = t.tanh(t.slice_axis0(head, 0));
        auto shift = t.slice_axis0(head, 1);
        auto y = t.add(t.mul(x, t.exp(ls)), shift);
        t.set_loss(t.mean_vec(t.sum_sites(t.mul(y, y))));
      },
      params, 1e-5, 2e-6);
}

TEST_CASE("gradient of a linear combination is the linear combination") {
  Rng rng(6, Stream::kScratch);
  ParameterSet params;
  params.add("theta", random_tensor({6}, rng));
  const double a = 0.7, b = -1.3;

  auto build_l1 = [](Tape& t) -> ValueRef {
    auto th = t.param("theta", {6});
    return t.mean_vec(t.mul(th, th));
  };
  auto build_l2 = [](Tape& t) -> ValueRef {
    auto th = t.param("theta", {6});
    auto [s, c] = t.sin_cos(th);
    return t.mean_vec(t.mul(s, c));
  };

  Tape t1;
  t1.set_loss(build_l1(t1));
  auto r1 = grad::value_and_grad(t1, params);

  Tape t2;
  t2.set_loss(build_l2(t2));
  auto r2 = grad::value_and_grad(t2, params);

  Tape t3;
  {
    auto th = t3.param("theta", {6});
    auto l1 = t3.mean_vec(t3.mul(th, th));
    auto [s, c] = t3.sin_cos(th);
    auto l2 = t3.mean_vec(t3.mul(s, c));
    t3.set_loss(t3.add_scaled(t3.scale(l1, a), l2, b));
  }
  auto r3 = grad::value_and_grad(t3, params);

  CHECK(r3.loss == doctest::Approx(a * r1.loss + b * r2.loss).epsilon(1e-13));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(r3.at("theta")[i] ==
          doctest::Approx(a * r1.at("theta")[i] + b * r2.at("theta")[i])
              .epsilon(1e-12));
  }
}

TEST_CASE("identical runs are bit identical") {
  Rng rng(7, Stream::kScratch);
  ParameterSet params;
  params.add("w", random_tensor({2, 2, 9}, rng));
  params.add("omega", random_tensor({2}, rng));
  Tensor input = random_tensor({9, 3}, rng);

  auto run = [&]() {
    Tape t;
    auto field = t.input({9, 3});
    auto w = t.param("w", {2, 2, 9});
    auto omega = t.param("omega", {2});
    auto idx = std::make_shared<const std::vector<int>>(
        std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    auto [s, c] = t.sin_cos(t.outer_scale(field, omega));
    auto ker = t.gather_last(t.slice_axis0(w, 0), idx);
    auto vel = t.circ_corr(s, ker, 3);
    auto per = t.add(t.sum_sites(t.mul(vel, vel)),
                     t.contract_first(t.sum_sites(c), omega));
    t.set_loss(t.mean_vec(per));
    t.bind_input(field, input);
    return grad::value_and_grad(t, params);
  };

  auto r1 = run();
  auto r2 = run();
  CHECK(r1.loss == r2.loss);
  for (const auto& [name, g1] : r1.grads) {
    const Tensor& g2 = r2.at(name);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
  }
}

TEST_CASE("non-finite intermediates raise a diagnostic naming the op") {
  ParameterSet params;
  Tensor big({3});
  big.fill(1000.0);
  params.add("theta", big);

  Tape tape;
  auto theta = tape.param("theta", {3});
  auto loss = tape.mean_vec(tape.exp(theta));  // overflows to infinity
  tape.set_loss(loss);
  tape.bind_params(params);
  CHECK_THROWS_WITH_AS(tape.forward(), doctest::Contains("exp"), NumericError);
}

TEST_CASE("construction-time shape validation") {
  Tape tape;
  auto a = tape.input({3, 2});
  auto b = tape.input({2, 3});
  CHECK_THROWS_AS(tape.add(a, b), ValidationError);
  CHECK_THROWS_AS(tape.mean_vec(a), ValidationError);
  CHECK_THROWS_AS(tape.outer_scale(a, b), ValidationError);
  auto w = tape.input({2, 1, 3, 3});
  CHECK_THROWS_AS(tape.conv3x3(b, w, 2), ValidationError);
  CHECK_THROWS_AS(tape.set_loss(a), ValidationError);
}
