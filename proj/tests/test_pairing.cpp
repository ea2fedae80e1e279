#include <doctest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "posebench/error.hpp"
#include "posebench/pairing.hpp"
#include "posebench/rng.hpp"

using namespace posebench;

namespace {

Pose look_at_origin(const Eigen::Vector3d& eye) {
  const Eigen::Vector3d forward = (-eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitY();
  if (std::abs(forward.dot(up)) > 0.95) up = Eigen::Vector3d::UnitX();
  Eigen::Matrix3d rot;
  rot.row(2) = forward;
  rot.row(0) = forward.cross(up).normalized();
  rot.row(1) = rot.row(2).cross(rot.row(0));
  return Pose(Eigen::Quaterniond(rot), -(rot * eye));
}

std::map<image_id_t, Pose> ring_poses(int n, double radius) {
  std::map<image_id_t, Pose> poses;
  for (int i = 0; i < n; ++i) {
    const double angle = 2.0 * M_PI * i / n;
    poses.emplace(i + 1, look_at_origin({radius * std::cos(angle),
                                         radius * std::sin(angle), 0.0}));
  }
  return poses;
}

// Exhaustive reference: same rule evaluated over all C(n,2) pairs.
std::set<std::pair<image_id_t, image_id_t>> brute_force_pairs(
    const std::map<image_id_t, Pose>& poses, int k, double max_angle) {
  std::vector<image_id_t> ids;
  std::vector<Eigen::Vector3d> centers;
  for (const auto& [id, pose] : poses) {
    ids.push_back(id);
    centers.push_back(pose.center());
  }
  const int n = static_cast<int>(ids.size());
  const int kk = std::min(k, n - 1);
  std::vector<std::set<int>> nearest(n);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> order;
    for (int j = 0; j < n; ++j) {
      if (j != i) order.push_back({(centers[i] - centers[j]).squaredNorm(), j});
    }
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return ids[a.second] < ids[b.second];
    });
    for (int j = 0; j < kk; ++j) nearest[i].insert(order[j].second);
  }
  std::set<std::pair<image_id_t, image_id_t>> result;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (!nearest[i].count(j) && !nearest[j].count(i)) continue;
      if (viewing_ray_angle_deg(poses.at(ids[i]), poses.at(ids[j])) >= max_angle)
        continue;
      result.insert({std::min(ids[i], ids[j]), std::max(ids[i], ids[j])});
    }
  }
  return result;
}

}  // namespace

TEST_CASE("select_pairs: collinear cameras with identical orientation") {
  std::map<image_id_t, Pose> poses;
  for (int i = 0; i < 3; ++i) {
    poses.emplace(i + 1,
                  Pose(Eigen::Quaterniond::Identity(), {double(i), 0.0, 0.0}));
  }
  const PairList pairs = select_pairs(poses, {});
  CHECK(pairs.pairs.size() == 3);  // all angles 0 < 60
}

TEST_CASE("select_pairs: opposite-facing cameras produce no pairs") {
  std::map<image_id_t, Pose> poses;
  poses.emplace(1, Pose(Eigen::Quaterniond::Identity(), {0, 0, 0}));
  poses.emplace(2, Pose(Eigen::Quaterniond(Eigen::AngleAxisd(
                            M_PI, Eigen::Vector3d::UnitX())),
                        {1, 0, 0}));
  const PairList pairs = select_pairs(poses, {});
  CHECK(pairs.pairs.empty());
}

TEST_CASE("select_pairs: ring of 60 matches the brute-force oracle") {
  const auto poses = ring_poses(60, 10.0);
  for (const int k : {1, 5, 50}) {
    for (const double angle : {10.0, 60.0, 180.0}) {
      PairSelectionOptions options;
      options.k_nearest = k;
      options.max_ray_angle_deg = angle;
      const PairList pairs = select_pairs(poses, options);
      const auto expected = brute_force_pairs(poses, k, angle);
      const std::set<std::pair<image_id_t, image_id_t>> got(pairs.pairs.begin(),
                                                            pairs.pairs.end());
      CHECK(got == expected);
    }
  }
}

TEST_CASE("select_pairs: fewer than two images is an error") {
  std::map<image_id_t, Pose> one;
  one.emplace(1, Pose{});
  CHECK_THROWS_AS((void)select_pairs(one, {}), Error);
}

TEST_CASE("select_pairs: pair count bound and determinism") {
  const auto poses = ring_poses(30, 5.0);
  PairSelectionOptions options;
  options.k_nearest = 4;
  const PairList a = select_pairs(poses, options);
  const PairList b = select_pairs(poses, options);
  CHECK(a.pairs == b.pairs);
  CHECK(a.pairs.size() <= poses.size() * options.k_nearest);
  CHECK(std::is_sorted(a.pairs.begin(), a.pairs.end()));
  for (const auto& [x, y] : a.pairs) CHECK(x < y);
}

TEST_CASE("select_pairs: equivariant under id relabeling") {
  const auto poses = ring_poses(12, 4.0);
  PairSelectionOptions options;
  options.k_nearest = 3;

  // Relabel id -> 100 - id (order-reversing), recompute, map back.
  std::map<image_id_t, Pose> relabeled;
  for (const auto& [id, pose] : poses) relabeled.emplace(100 - id, pose);
  const PairList direct = select_pairs(poses, options);
  const PairList mapped = select_pairs(relabeled, options);
  std::set<std::pair<image_id_t, image_id_t>> mapped_back;
  for (const auto& [a, b] : mapped.pairs) {
    const image_id_t x = 100 - a, y = 100 - b;
    mapped_back.insert({std::min(x, y), std::max(x, y)});
  }
  const std::set<std::pair<image_id_t, image_id_t>> expected(
      direct.pairs.begin(), direct.pairs.end());
  CHECK(mapped_back == expected);
}

TEST_CASE("select_pairs: exhaustive when k >= N-1 and angle wide open") {
  SplitMix64 rng(77);
  std::map<image_id_t, Pose> poses;
  for (int i = 0; i < 9; ++i) {
    const Eigen::Quaterniond q =
        Eigen::Quaterniond(rng.gaussian(), rng.gaussian(), rng.gaussian(),
                           rng.gaussian())
            .normalized();
    poses.emplace(i + 1, Pose(q, {rng.gaussian(), rng.gaussian(), rng.gaussian()}));
  }
  PairSelectionOptions options;
  options.k_nearest = 8;
  options.max_ray_angle_deg = 180.0;
  const PairList pairs = select_pairs(poses, options);
  CHECK(pairs.pairs.size() == 9 * 8 / 2);
}

TEST_CASE("select_pairs: mutual mode yields a subset of union mode") {
  const auto poses = ring_poses(20, 6.0);
  PairSelectionOptions union_mode;
  union_mode.k_nearest = 3;
  PairSelectionOptions mutual_mode = union_mode;
  mutual_mode.mutual_only = true;
  const PairList union_pairs = select_pairs(poses, union_mode);
  const PairList mutual_pairs = select_pairs(poses, mutual_mode);
  CHECK(mutual_pairs.pairs.size() <= union_pairs.pairs.size());
  for (const auto& pair : mutual_pairs.pairs) {
    CHECK(std::find(union_pairs.pairs.begin(), union_pairs.pairs.end(), pair) !=
          union_pairs.pairs.end());
  }
}
