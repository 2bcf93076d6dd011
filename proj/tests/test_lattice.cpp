#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "lflow/lattice.hpp"
#include "lflow/rng.hpp"

using namespace lflow;

namespace {

// Independent orbit-count oracle: the orbit of a displacement is the set of
// its eight point-op images; count distinct sets.
int brute_force_orbit_count(const LatticeGeometry& geo) {
  std::set<std::set<int>> orbits;
  for (int d = 0; d < geo.sites; ++d) {
    auto [d1, d2] = geo.coords(d);
    std::set<int> image;
    for (int op = 0; op < kPointOpCount; ++op) {
      auto img = apply_point_op(op, d1, d2);
      image.insert(geo.index(img.first, img.second));
    }
    orbits.insert(image);
  }
  return static_cast<int>(orbits.size());
}

GroupElement random_element(const LatticeGeometry& geo, Rng& rng) {
  return {static_cast<int>(rng.next_u64() % geo.extent),
          static_cast<int>(rng.next_u64() % geo.extent),
          static_cast<int>(rng.next_u64() % kPointOpCount)};
}

}  // namespace

TEST_CASE("apply_symmetry basics") {
  LatticeGeometry geo(6);
  CHECK(apply_symmetry(GroupElement::identity(), {3, 1}, geo) ==
        std::pair<int, int>{3, 1});
  CHECK(apply_symmetry(GroupElement::translation(1, 0), {5, 0}, geo) ==
        std::pair<int, int>{0, 0});

  LatticeGeometry geo4(4);
  GroupElement rot{0, 0, 1};
  CHECK(apply_symmetry(rot, {1, 0}, geo4) == std::pair<int, int>{0, 1});
  CHECK(apply_symmetry(rot, {1, 1}, geo4) == std::pair<int, int>{3, 1});

  CHECK_THROWS_AS(apply_symmetry(rot, {4, 0}, geo4), ValidationError);
  CHECK_THROWS_AS(apply_symmetry(rot, {0, -1}, geo4), ValidationError);
}

TEST_CASE("group element action is a bijection") {
  LatticeGeometry geo(5);
  Rng rng(11, Stream::kScratch);
  for (int trial = 0; trial < 20; ++trial) {
    GroupElement g = random_element(geo, rng);
    std::set<int> image;
    for (int s = 0; s < geo.sites; ++s) {
      auto to = apply_symmetry(g, geo.coords(s), geo);
      image.insert(geo.index(to.first, to.second));
    }
    CHECK(image.size() == static_cast<std::size_t>(geo.sites));
  }
}

TEST_CASE("enumerate_group size and group axioms") {
  for (int side : {4, 6}) {
    LatticeGeometry geo(side);
    auto group = enumerate_group(geo);
    CHECK(group.size() == static_cast<std::size_t>(8 * side * side));

    auto key = [&](const GroupElement& g) {
      return std::tuple<int, int, int>(g.t1, g.t2, g.point_op);
    };
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& g : group) seen.insert(key(g));
    CHECK(seen.size() == group.size());
    CHECK(seen.contains(key(GroupElement::identity())));

    // Every element has a two-sided inverse inside the set.
    Rng rng(7, Stream::kScratch);
    for (int trial = 0; trial < 50; ++trial) {
      const auto& g = group[rng.next_u64() % group.size()];
      GroupElement gi = inverse(g, geo);
      CHECK(seen.contains(key(gi)));
      GroupElement e1 = compose(g, gi, geo);
      GroupElement e2 = compose(gi, g, geo);
      CHECK(key(e1) == key(GroupElement::identity()));
      CHECK(key(e2) == key(GroupElement::identity()));
    }

    // Closure and associativity on sampled triples, checked via the action.
    for (int trial = 0; trial < 50; ++trial) {
      GroupElement a = random_element(geo, rng);
      GroupElement b = random_element(geo, rng);
      GroupElement c = random_element(geo, rng);
      CHECK(seen.contains(key(compose(a, b, geo))));
      GroupElement ab_c = compose(compose(a, b, geo), c, geo);
      GroupElement a_bc = compose(a, compose(b, c, geo), geo);
      CHECK(key(ab_c) == key(a_bc));
      for (int s = 0; s < geo.sites; ++s) {
        auto via_compose = apply_symmetry(compose(a, b, geo), geo.coords(s), geo);
        auto stepwise =
            apply_symmetry(a, apply_symmetry(b, geo.coords(s), geo), geo);
        CHECK(via_compose == stepwise);
      }
    }
  }
}

TEST_CASE("orbit counts match the brute-force oracle") {
  std::map<int, int> expected{{1, 1}, {4, 6}, {11, 21}};
  for (auto [side, count] : expected) {
    LatticeGeometry geo(side);
    CHECK(brute_force_orbit_count(geo) == count);
    auto table = compute_orbits(geo);
    CHECK(table.count == count);
  }
  for (int side : {2, 3, 5, 6, 7, 8, 12}) {
    LatticeGeometry geo(side);
    CHECK(compute_orbits(geo).count == brute_force_orbit_count(geo));
  }
}

TEST_CASE("orbit partition structure") {
  for (int side : {3, 4, 6, 11}) {
    LatticeGeometry geo(side);
    auto table = compute_orbits(geo);

    int total = 0;
    for (int s : table.orbit_size) {
      CHECK((s == 1 || s == 2 || s == 4 || s == 8));
      total += s;
    }
    CHECK(total == geo.sites);

    for (int d = 0; d < geo.sites; ++d) {
      CHECK(table.orbit_id[d] >= 0);
      CHECK(table.orbit_id[d] < table.count);
    }

    // Representatives are the lexicographically smallest members and orbit
    // ids are sorted by representative.
    for (int i = 0; i < table.count; ++i) {
      const int rep = table.representative[i];
      CHECK(table.orbit_id[rep] == i);
      if (i > 0) CHECK(rep > table.representative[i - 1]);
      for (int d = 0; d < geo.sites; ++d) {
        if (table.orbit_id[d] == i) CHECK(rep <= d);
      }
    }

    // Two displacements share an orbit iff some point op maps one to the
    // other.
    for (int d = 0; d < geo.sites; ++d) {
      auto [d1, d2] = geo.coords(d);
      std::set<int> image;
      for (int op = 0; op < kPointOpCount; ++op) {
        auto img = apply_point_op(op, d1, d2);
        image.insert(geo.index(img.first, img.second));
      }
      for (int e = 0; e < geo.sites; ++e) {
        CHECK((table.orbit_id[e] == table.orbit_id[d]) == image.contains(e));
      }
    }
  }
}

TEST_CASE("orbit_of_pair") {
  LatticeGeometry geo(4);
  auto table = compute_orbits(geo);

  for (int s = 0; s < geo.sites; ++s) {
    auto site = geo.coords(s);
    CHECK(orbit_of_pair(site, site, table) == table.orbit_id[0]);
  }
  CHECK(orbit_of_pair({0, 0}, {1, 0}, table) ==
        orbit_of_pair({2, 2}, {2, 3}, table));

  // Simultaneous symmetry invariance on random triples.
  Rng rng(3, Stream::kScratch);
  for (int trial = 0; trial < 1000; ++trial) {
    auto x = geo.coords(static_cast<int>(rng.next_u64() % geo.sites));
    auto y = geo.coords(static_cast<int>(rng.next_u64() % geo.sites));
    GroupElement g = random_element(geo, rng);
    CHECK(orbit_of_pair(apply_symmetry(g, x, geo), apply_symmetry(g, y, geo),
                        table) == orbit_of_pair(x, y, table));
  }
}

TEST_CASE("expand_kernel") {
  LatticeGeometry geo(4);
  auto table = compute_orbits(geo);

  std::vector<double> zeros(table.count, 0.0);
  auto zero_kernel = expand_kernel(zeros, table);
  CHECK(std::all_of(zero_kernel.begin(), zero_kernel.end(),
                    [](double v) { return v == 0.0; }));

  std::vector<double> onehot(table.count, 0.0);
  onehot[table.orbit_id[geo.index(1, 0)]] = 1.0;
  auto kernel = expand_kernel(onehot, table);
  std::set<int> hits{geo.index(1, 0), geo.index(0, 1), geo.index(3, 0),
                     geo.index(0, 3)};
  for (int d = 0; d < geo.sites; ++d) {
    CHECK(kernel[d] == (hits.contains(d) ? 1.0 : 0.0));
  }

  // Point-op invariance of any expanded kernel.
  Rng rng(5, Stream::kScratch);
  std::vector<double> values(table.count);
  for (double& v : values) v = rng.gaussian();
  auto k = expand_kernel(values, table);
  for (int op = 0; op < kPointOpCount; ++op) {
    for (int d = 0; d < geo.sites; ++d) {
      auto [d1, d2] = geo.coords(d);
      auto img = apply_point_op(op, d1, d2);
      CHECK(k[d] == k[geo.index(img.first, img.second)]);
    }
  }

  std::vector<double> wrong(table.count + 1, 0.0);
  CHECK_THROWS_AS(expand_kernel(wrong, table), ValidationError);
}

TEST_CASE("weight sharing is invariant under simultaneous group action") {
  LatticeGeometry geo(6);
  auto table = compute_orbits(geo);
  Rng rng(9, Stream::kScratch);
  std::vector<double> values(table.count);
  for (double& v : values) v = rng.gaussian();
  auto kernel = expand_kernel(values, table);

  auto weight = [&](std::pair<int, int> x, std::pair<int, int> y) {
    return kernel[geo.index(y.first - x.first, y.second - x.second)];
  };

  auto group = enumerate_group(geo);
  for (int trial = 0; trial < 120; ++trial) {
    const auto& g = group[rng.next_u64() % group.size()];
    auto x = geo.coords(static_cast<int>(rng.next_u64() % geo.sites));
    auto y = geo.coords(static_cast<int>(rng.next_u64() % geo.sites));
    CHECK(weight(apply_symmetry(g, x, geo), apply_symmetry(g, y, geo)) ==
          weight(x, y));
  }
}

TEST_CASE("field permutation composes and preserves values") {
  LatticeGeometry geo(5);
  Rng rng(13, Stream::kScratch);
  auto group = enumerate_group(geo);

  for (int trial = 0; trial < 30; ++trial) {
    const auto& a = group[rng.next_u64() % group.size()];
    const auto& b = group[rng.next_u64() % group.size()];
    auto pa = field_permutation(a, geo);
    auto pb = field_permutation(b, geo);
    auto pab = field_permutation(compose(a, b, geo), geo);
    for (int x = 0; x < geo.sites; ++x) {
      // (ab) phi = a (b phi): gather through a first, then b.
      CHECK(pab[x] == pb[pa[x]]);
    }

    std::multiset<double> before, after;
    std::vector<double> field(geo.sites);
    for (double& v : field) v = rng.gaussian();
    for (int x = 0; x < geo.sites; ++x) {
      before.insert(field[x]);
      after.insert(field[pa[x]]);
    }
    CHECK(before == after);
  }
}
