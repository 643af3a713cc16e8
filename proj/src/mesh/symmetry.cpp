#include "ss3d/mesh/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "ss3d/common/error.hpp"

namespace ss3d {

MirrorSymmetry::MirrorSymmetry(const TriangleMesh& base, int axis, double tolerance)
    : axis_(axis),
      mirror_(base.num_vertices()),
      owner_(base.num_vertices()),
      signs_({base.num_vertices(), 3}, 1.0),
      reflect_({1, 3}, 1.0) {
  require(axis >= 0 && axis < 3, "E_ARG", "mirror axis must be 0, 1 or 2");
  reflect_[static_cast<std::size_t>(axis)] = -1.0;
  const std::size_t n = base.num_vertices();
  // Sort by a key that is invariant under the reflection so partners are near each other.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const Vec3& v = base.vertices[i];
    return std::make_tuple(v[(axis + 1) % 3], v[(axis + 2) % 3]);
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  for (std::size_t i = 0; i < n; ++i) {
    Vec3 target = base.vertices[i];
    target[axis] = -target[axis];
    if (std::abs(base.vertices[i][axis]) <= tolerance) {
      mirror_[i] = i;
      continue;
    }
    // Linear scan within the window of matching keys; O(n log n + n w).
    const auto lower = std::lower_bound(order.begin(), order.end(), i, [&](std::size_t a, std::size_t) {
      return std::get<0>(key(a)) < target[(axis + 1) % 3] - tolerance;
    });
    bool found = false;
    for (auto it = lower; it != order.end(); ++it) {
      const Vec3& c = base.vertices[*it];
      if (c[(axis + 1) % 3] > target[(axis + 1) % 3] + tolerance) break;
      if ((c - target).norm() <= tolerance) {
        mirror_[i] = *it;
        found = true;
        break;
      }
    }
    require(found, "E_NOT_MIRROR_CLOSED", "vertex " + std::to_string(i) + " has no mirror partner");
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double c = base.vertices[i][axis];
    if (mirror_[i] == i) {
      owner_[i] = representatives_.size();
      representatives_.push_back(i);
      signs_[3 * i + static_cast<std::size_t>(axis)] = 0.0;
    } else if (c > 0.0) {
      owner_[i] = representatives_.size();
      representatives_.push_back(i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (mirror_[i] != i && base.vertices[i][axis] < 0.0) {
      owner_[i] = owner_[mirror_[i]];
      signs_[3 * i + static_cast<std::size_t>(axis)] = -1.0;
    }
  }
}

ad::Var MirrorSymmetry::symmetrize(ad::Var free) const {
  require(free.shape() == ad::Shape{num_free(), 3}, "E_SHAPE", "free parameter array must be (num_free x 3)");
  return ad::gather(free, owner_) * free.tape()->constant(signs_);
}

ad::Var MirrorSymmetry::project(ad::Var offsets) const {
  require(offsets.shape() == ad::Shape{num_vertices(), 3}, "E_SHAPE", "offsets must be (N x 3)");
  ad::Var mirrored = ad::gather(offsets, mirror_) * offsets.tape()->constant(reflect_);
  return (offsets + mirrored) * 0.5;
}

ad::Array MirrorSymmetry::symmetrize(const ad::Array& free) const {
  ad::Tape tape;
  return symmetrize(tape.constant(free)).value();
}

}  // namespace ss3d
