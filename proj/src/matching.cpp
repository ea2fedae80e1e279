#include "posebench/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "posebench/error.hpp"
#include "posebench/threads.hpp"

namespace posebench {

namespace {

using RowMajorMatrixXf =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<Match> mnn_from_distances(const RowMajorMatrixXf& sq_dist,
                                      const MatchOptions& options) {
  const int na = static_cast<int>(sq_dist.rows());
  const int nb = static_cast<int>(sq_dist.cols());
  if (na == 0 || nb == 0) return {};

  // One fused pass finds best and runner-up in both directions; scanning
  // ascending with strict < keeps ties on the smaller index.
  std::vector<int> best_ab(na, -1), best_ba(nb, -1);
  std::vector<float> best_ab_d(na, std::numeric_limits<float>::infinity());
  std::vector<float> second_ab_d(na, std::numeric_limits<float>::infinity());
  std::vector<float> best_ba_d(nb, std::numeric_limits<float>::infinity());
  std::vector<float> second_ba_d(nb, std::numeric_limits<float>::infinity());
  for (int i = 0; i < na; ++i) {
    const float* row = sq_dist.data() + static_cast<size_t>(i) * nb;
    for (int j = 0; j < nb; ++j) {
      const float d = row[j];
      if (d < best_ab_d[i]) {
        second_ab_d[i] = best_ab_d[i];
        best_ab_d[i] = d;
        best_ab[i] = j;
      } else if (d < second_ab_d[i]) {
        second_ab_d[i] = d;
      }
      if (d < best_ba_d[j]) {
        second_ba_d[j] = best_ba_d[j];
        best_ba_d[j] = d;
        best_ba[j] = i;
      } else if (d < second_ba_d[j]) {
        second_ba_d[j] = d;
      }
    }
  }

  std::vector<Match> matches;
  for (int i = 0; i < na; ++i) {
    const int j = best_ab[i];
    if (j < 0 || best_ba[j] != i) continue;
    const float distance = std::sqrt(std::max(0.0f, best_ab_d[i]));
    if (options.ratio) {
      // Both directions, so match_mnn(A,B) mirrors match_mnn(B,A).
      const float second_a = std::sqrt(std::max(0.0f, second_ab_d[i]));
      const float second_b = std::sqrt(std::max(0.0f, second_ba_d[j]));
      if (second_a > 0.0f && distance / second_a > *options.ratio) continue;
      if (second_b > 0.0f && distance / second_b > *options.ratio) continue;
    }
    matches.push_back({static_cast<uint32_t>(i), static_cast<uint32_t>(j), distance});
  }
  return matches;  // already sorted by idx_a
}

// Reported distances are recomputed exactly per selected pair; the fast
// selection matrix carries GEMM round-off. The max_distance gate applies
// to the exact value.
std::vector<Match> finalize_matches(const FeatureSet& a, const FeatureSet& b,
                                    std::vector<Match> matches,
                                    const MatchOptions& options) {
  std::vector<Match> out;
  out.reserve(matches.size());
  for (Match& m : matches) {
    m.distance = (a.descriptors.row(m.idx_a) - b.descriptors.row(m.idx_b)).norm();
    if (options.max_distance && m.distance > *options.max_distance) continue;
    out.push_back(m);
  }
  return out;
}

}  // namespace

RowMajorMatrixXf descriptor_sq_distances(const RowMajorMatrixXf& a,
                                         const RowMajorMatrixXf& b,
                                         int num_threads) {
  const int na = static_cast<int>(a.rows());
  const int nb = static_cast<int>(b.rows());
  RowMajorMatrixXf dist(na, nb);
  if (na == 0 || nb == 0) return dist;

  const Eigen::VectorXf a_norm = a.rowwise().squaredNorm();
  const Eigen::RowVectorXf b_norm = b.rowwise().squaredNorm().transpose();
  constexpr int kRowBlock = 64;
  const int num_blocks = (na + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(dynamic, 1) num_threads(num_threads) \
    if (num_threads > 1)
  for (int block = 0; block < num_blocks; ++block) {
    const int row0 = block * kRowBlock;
    const int rows = std::min(kRowBlock, na - row0);
    auto slab = dist.middleRows(row0, rows);
    slab.noalias() = a.middleRows(row0, rows) * b.transpose();
    slab = ((-2.0f * slab).colwise() + a_norm.segment(row0, rows)).rowwise() +
           b_norm;
    slab = slab.cwiseMax(0.0f);
  }
  return dist;
}

std::vector<Match> match_mnn(const FeatureSet& a, const FeatureSet& b,
                             const MatchOptions& options) {
  if (a.descriptors.cols() != b.descriptors.cols() && a.descriptors.rows() > 0 &&
      b.descriptors.rows() > 0) {
    throw Error("descriptor dim mismatch: " + std::to_string(a.descriptors.cols()) +
                " vs " + std::to_string(b.descriptors.cols()));
  }
  const RowMajorMatrixXf sq_dist =
      descriptor_sq_distances(a.descriptors, b.descriptors, max_threads());
  return finalize_matches(a, b, mnn_from_distances(sq_dist, options), options);
}

std::vector<Match> match_mnn_reference(const FeatureSet& a, const FeatureSet& b,
                                       const MatchOptions& options) {
  if (a.descriptors.cols() != b.descriptors.cols() && a.descriptors.rows() > 0 &&
      b.descriptors.rows() > 0) {
    throw Error("descriptor dim mismatch: " + std::to_string(a.descriptors.cols()) +
                " vs " + std::to_string(b.descriptors.cols()));
  }
  const int na = static_cast<int>(a.descriptors.rows());
  const int nb = static_cast<int>(b.descriptors.rows());
  RowMajorMatrixXf sq_dist(na, nb);
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      sq_dist(i, j) = (a.descriptors.row(i) - b.descriptors.row(j)).squaredNorm();
    }
  }
  return finalize_matches(a, b, mnn_from_distances(sq_dist, options), options);
}

EpipolarResult verify_epipolar(std::span<const Match> matches,
                               std::span<const Eigen::Vector2d> keypoints_a,
                               std::span<const Eigen::Vector2d> keypoints_b,
                               const CameraModel& camera_a,
                               const CameraModel& camera_b, const Pose& pose_a,
                               const Pose& pose_b, double threshold_px) {
  EpipolarResult result;

  const Eigen::Matrix3d rot_a = pose_a.rotation_matrix();
  const Eigen::Matrix3d rot_b = pose_b.rotation_matrix();
  const Eigen::Matrix3d rot_ab = rot_b * rot_a.transpose();
  const Eigen::Vector3d t_ab = pose_b.translation - rot_ab * pose_a.translation;

  const double pose_scale = std::max(
      {1.0, pose_a.translation.norm(), pose_b.translation.norm()});
  if (t_ab.norm() < 1e-12 * pose_scale) {
    result.zero_baseline = true;
    result.inliers.assign(matches.begin(), matches.end());
    result.inlier_ratio = matches.empty() ? 0.0 : 1.0;
    return result;
  }

  Eigen::Matrix3d t_cross;
  t_cross << 0.0, -t_ab.z(), t_ab.y(),
             t_ab.z(), 0.0, -t_ab.x(),
             -t_ab.y(), t_ab.x(), 0.0;
  const Eigen::Matrix3d essential = t_cross * rot_ab;

  const double focal_scale =
      std::sqrt(camera_a.mean_focal() * camera_b.mean_focal());

  for (const Match& match : matches) {
    if (match.idx_a >= keypoints_a.size() || match.idx_b >= keypoints_b.size()) {
      throw Error("match references out-of-range keypoint index");
    }
    const Eigen::Vector2d na =
        camera_a.pixel_to_normalized(keypoints_a[match.idx_a]);
    const Eigen::Vector2d nb =
        camera_b.pixel_to_normalized(keypoints_b[match.idx_b]);
    const Eigen::Vector3d x1(na.x(), na.y(), 1.0);
    const Eigen::Vector3d x2(nb.x(), nb.y(), 1.0);

    const Eigen::Vector3d ex1 = essential * x1;
    const Eigen::Vector3d etx2 = essential.transpose() * x2;
    const double numerator = x2.dot(ex1);
    const double denom = ex1.x() * ex1.x() + ex1.y() * ex1.y() +
                         etx2.x() * etx2.x() + etx2.y() * etx2.y();
    if (denom < 1e-30) continue;
    const double sampson_px =
        std::abs(numerator) / std::sqrt(denom) * focal_scale;
    if (sampson_px < threshold_px) result.inliers.push_back(match);
  }
  result.inlier_ratio =
      matches.empty() ? 0.0
                      : static_cast<double>(result.inliers.size()) /
                            static_cast<double>(matches.size());
  return result;
}

void MatchGraph::insert(image_id_t a, image_id_t b, std::vector<Match> matches) {
  if (a == b) throw Error("match graph pair cannot be a self-pair");
  if (a > b) {
    for (Match& m : matches) std::swap(m.idx_a, m.idx_b);
    std::swap(a, b);
    std::sort(matches.begin(), matches.end(),
              [](const Match& x, const Match& y) { return x.idx_a < y.idx_a; });
  }
  pairs[{a, b}] = std::move(matches);
}

void write_match_dump(
    const std::vector<std::pair<std::pair<std::string, std::string>,
                                std::vector<Match>>>& blocks,
    const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  bool first = true;
  for (const auto& [names, matches] : blocks) {
    if (!first) out << '\n';
    first = false;
    out << names.first << ' ' << names.second << '\n';
    for (const Match& m : matches) out << m.idx_a << ' ' << m.idx_b << '\n';
  }
}

std::vector<std::pair<std::pair<std::string, std::string>, std::vector<Match>>>
read_match_dump(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<std::pair<std::pair<std::string, std::string>, std::vector<Match>>>
      blocks;
  std::string line;
  bool in_block = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      in_block = false;
      continue;
    }
    std::istringstream stream(line);
    if (!in_block) {
      std::string name_a, name_b, extra;
      if (!(stream >> name_a >> name_b) || (stream >> extra)) {
        throw IoError("malformed pair header '" + line + "' in " + file.string());
      }
      blocks.push_back({{name_a, name_b}, {}});
      in_block = true;
    } else {
      Match m;
      if (!(stream >> m.idx_a >> m.idx_b)) {
        throw IoError("malformed match line '" + line + "' in " + file.string());
      }
      blocks.back().second.push_back(m);
    }
  }
  return blocks;
}

}  // namespace posebench
