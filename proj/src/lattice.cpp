#include "lflow/lattice.hpp"

#include <algorithm>
#include <array>
#include <map>

namespace lflow {

std::pair<int, int> apply_point_op(int op, int x1, int x2) {
  if (op >= 4) {
    std::swap(x1, x2);
    op -= 4;
  }
  switch (op) {
    case 0: return {x1, x2};
    case 1: return {-x2, x1};
    case 2: return {-x1, -x2};
    case 3: return {x2, -x1};
    default: throw ValidationError("point op index out of range");
  }
}

namespace {

// Composition and inverses are derived once from the action on the two basis
// vectors; two image points identify a point op uniquely.
struct PointOpTables {
  std::array<std::array<int, kPointOpCount>, kPointOpCount> compose{};
  std::array<int, kPointOpCount> inverse{};

  PointOpTables() {
    auto signature = [](int op) {
      return std::make_pair(apply_point_op(op, 1, 0), apply_point_op(op, 0, 1));
    };
    std::map<std::pair<std::pair<int, int>, std::pair<int, int>>, int> lookup;
    for (int op = 0; op < kPointOpCount; ++op) lookup[signature(op)] = op;
    for (int a = 0; a < kPointOpCount; ++a) {
      for (int b = 0; b < kPointOpCount; ++b) {
        auto e1 = apply_point_op(b, 1, 0);
        auto e2 = apply_point_op(b, 0, 1);
        auto img1 = apply_point_op(a, e1.first, e1.second);
        auto img2 = apply_point_op(a, e2.first, e2.second);
        compose[a][b] = lookup.at({img1, img2});
      }
    }
    for (int a = 0; a < kPointOpCount; ++a) {
      for (int b = 0; b < kPointOpCount; ++b) {
        if (compose[a][b] == 0) inverse[a] = b;
      }
    }
  }
};

const PointOpTables& point_op_tables() {
  static const PointOpTables tables;
  return tables;
}

}  // namespace

int compose_point_ops(int lhs, int rhs) {
  if (lhs < 0 || lhs >= kPointOpCount || rhs < 0 || rhs >= kPointOpCount) {
    throw ValidationError("point op index out of range");
  }
  return point_op_tables().compose[lhs][rhs];
}

int invert_point_op(int op) {
  if (op < 0 || op >= kPointOpCount) {
    throw ValidationError("point op index out of range");
  }
  return point_op_tables().inverse[op];
}

GroupElement compose(const GroupElement& lhs, const GroupElement& rhs,
                     const LatticeGeometry& geo) {
  // (t1, h1) . (t2, h2) : x -> h1 h2 x + h1(t2) + t1
  auto rotated = apply_point_op(lhs.point_op, rhs.t1, rhs.t2);
  return {geo.wrap(lhs.t1 + rotated.first), geo.wrap(lhs.t2 + rotated.second),
          compose_point_ops(lhs.point_op, rhs.point_op)};
}

GroupElement inverse(const GroupElement& g, const LatticeGeometry& geo) {
  const int inv = invert_point_op(g.point_op);
  auto back = apply_point_op(inv, g.t1, g.t2);
  return {geo.wrap(-back.first), geo.wrap(-back.second), inv};
}

std::pair<int, int> apply_symmetry(const GroupElement& g,
                                   std::pair<int, int> site,
                                   const LatticeGeometry& geo) {
  if (site.first < 0 || site.first >= geo.extent || site.second < 0 ||
      site.second >= geo.extent) {
    throw ValidationError("site coordinates out of range");
  }
  auto rotated = apply_point_op(g.point_op, site.first, site.second);
  return {geo.wrap(rotated.first + g.t1), geo.wrap(rotated.second + g.t2)};
}

std::vector<GroupElement> enumerate_group(const LatticeGeometry& geo) {
  std::vector<GroupElement> out;
  out.reserve(static_cast<std::size_t>(kPointOpCount) * geo.sites);
  for (int op = 0; op < kPointOpCount; ++op) {
    for (int t1 = 0; t1 < geo.extent; ++t1) {
      for (int t2 = 0; t2 < geo.extent; ++t2) {
        out.push_back({t1, t2, op});
      }
    }
  }
  return out;
}

std::vector<int> field_permutation(const GroupElement& g,
                                   const LatticeGeometry& geo) {
  const GroupElement ginv = inverse(g, geo);
  std::vector<int> perm(geo.sites);
  for (int site = 0; site < geo.sites; ++site) {
    auto src = apply_symmetry(ginv, geo.coords(site), geo);
    perm[site] = geo.index(src.first, src.second);
  }
  return perm;
}

OrbitTable compute_orbits(const LatticeGeometry& geo) {
  OrbitTable table;
  table.geo = geo;
  table.orbit_id.assign(geo.sites, -1);

  // Canonical member of each orbit = smallest row-major index among the eight
  // point-op images, which is exactly the lexicographically smallest (x1,x2).
  std::vector<int> canonical(geo.sites);
  for (int d = 0; d < geo.sites; ++d) {
    auto [d1, d2] = geo.coords(d);
    int best = geo.sites;
    for (int op = 0; op < kPointOpCount; ++op) {
      auto img = apply_point_op(op, d1, d2);
      best = std::min(best, geo.index(img.first, img.second));
    }
    canonical[d] = best;
  }

  std::vector<int> reps(canonical);
  std::sort(reps.begin(), reps.end());
  reps.erase(std::unique(reps.begin(), reps.end()), reps.end());

  table.count = static_cast<int>(reps.size());
  table.representative = reps;
  table.orbit_size.assign(table.count, 0);
  std::vector<int> id_of_rep(geo.sites, -1);
  for (int i = 0; i < table.count; ++i) id_of_rep[reps[i]] = i;
  for (int d = 0; d < geo.sites; ++d) {
    table.orbit_id[d] = id_of_rep[canonical[d]];
    ++table.orbit_size[table.orbit_id[d]];
  }
  return table;
}

int orbit_of_pair(std::pair<int, int> x, std::pair<int, int> y,
                  const OrbitTable& table) {
  const auto& geo = table.geo;
  if (x.first < 0 || x.first >= geo.extent || x.second < 0 ||
      x.second >= geo.extent || y.first < 0 || y.first >= geo.extent ||
      y.second < 0 || y.second >= geo.extent) {
    throw ValidationError("site coordinates out of range");
  }
  return table.orbit_id[geo.index(y.first - x.first, y.second - x.second)];
}

std::vector<double> expand_kernel(std::span<const double> free_values,
                                  const OrbitTable& table) {
  if (static_cast<int>(free_values.size()) != table.count) {
    throw ValidationError("expected one kernel value per orbit");
  }
  std::vector<double> kernel(table.geo.sites);
  for (int d = 0; d < table.geo.sites; ++d) {
    kernel[d] = free_values[table.orbit_id[d]];
  }
  return kernel;
}

}  // namespace lflow
