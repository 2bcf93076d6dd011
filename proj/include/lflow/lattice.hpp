#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lflow/errors.hpp"

namespace lflow {

// Square periodic lattice of side `extent`. Sites are addressed row-major by
// coordinates (x1, x2) with 0 <= xi < extent; all coordinate arithmetic wraps
// mod extent.
struct LatticeGeometry {
  int extent = 0;
  int sites = 0;

  LatticeGeometry() = default;
  explicit LatticeGeometry(int side) : extent(side), sites(side * side) {
    if (side < 1) throw ValidationError("lattice side must be >= 1");
  }

  int wrap(int v) const {
    v %= extent;
    return v < 0 ? v + extent : v;
  }
  int index(int x1, int x2) const { return wrap(x1) * extent + wrap(x2); }
  std::pair<int, int> coords(int site) const {
    return {site / extent, site % extent};
  }
  bool operator==(const LatticeGeometry&) const = default;
};

// The eight point operations of the square (rotations by right angles and
// reflections), indexed 0..7. Indices 0..3 are rotations; 4..7 apply the
// diagonal mirror (x1,x2)->(x2,x1) first and then rotate.
inline constexpr int kPointOpCount = 8;

std::pair<int, int> apply_point_op(int op, int x1, int x2);
int compose_point_ops(int lhs, int rhs);  // lhs after rhs
int invert_point_op(int op);

// One element of the lattice symmetry group (translations combined with the
// point group): site x maps to point_op(x) + (t1, t2), everything mod extent.
struct GroupElement {
  int t1 = 0;
  int t2 = 0;
  int point_op = 0;

  static GroupElement identity() { return {}; }
  static GroupElement translation(int a, int b) { return {a, b, 0}; }
};

GroupElement compose(const GroupElement& lhs, const GroupElement& rhs,
                     const LatticeGeometry& geo);
GroupElement inverse(const GroupElement& g, const LatticeGeometry& geo);

std::pair<int, int> apply_symmetry(const GroupElement& g,
                                   std::pair<int, int> site,
                                   const LatticeGeometry& geo);

// All 8 * extent^2 group elements, identity first.
std::vector<GroupElement> enumerate_group(const LatticeGeometry& geo);

// Site permutation realising the field action (g phi)(x) = phi(g^-1 x):
// perm[x] is the site whose value lands on x.
std::vector<int> field_permutation(const GroupElement& g,
                                   const LatticeGeometry& geo);

// Partition of displacement vectors into point-group orbits about the origin.
// Orbit ids are contiguous and sorted by their lexicographically smallest
// member, so the layout of orbit-indexed parameters is reproducible.
struct OrbitTable {
  LatticeGeometry geo;
  std::vector<int> orbit_id;        // one entry per displacement site
  std::vector<int> representative;  // canonical displacement per orbit
  std::vector<int> orbit_size;
  int count = 0;
};

OrbitTable compute_orbits(const LatticeGeometry& geo);

// Orbit of the displacement y - x; invariant under applying any group element
// simultaneously to both sites.
int orbit_of_pair(std::pair<int, int> x, std::pair<int, int> y,
                  const OrbitTable& table);

// Expands one value per orbit into a full displacement-indexed kernel.
std::vector<double> expand_kernel(std::span<const double> free_values,
                                  const OrbitTable& table);

}  // namespace lflow
