#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace posebench {

using camera_id_t = int32_t;
using image_id_t = int32_t;
using point3d_id_t = int64_t;

// Sentinel for a 2D observation without a 3D point. Serialized as
// two's-complement -1 (all-ones 64-bit) in binary, "-1" in text.
inline constexpr point3d_id_t kNoPoint3D = -1;

enum class CameraModelKind : int32_t {
  kSimplePinhole = 0,   // f, cx, cy
  kPinhole = 1,         // fx, fy, cx, cy
  kSimpleRadial = 2,    // f, cx, cy, k
  kRadial = 3,          // f, cx, cy, k1, k2
  kOpenCV = 4,          // fx, fy, cx, cy, k1, k2, p1, p2
  kOpenCVFisheye = 5,   // fx, fy, cx, cy, k1, k2, k3, k4
};

int camera_model_num_params(CameraModelKind kind);
std::string_view camera_model_name(CameraModelKind kind);
// Both throw ValidationError on unknown input.
CameraModelKind camera_model_from_id(int32_t id);
CameraModelKind camera_model_from_name(std::string_view name);

struct CameraRecord {
  camera_id_t camera_id = 0;
  CameraModelKind model = CameraModelKind::kSimplePinhole;
  uint64_t width = 0;
  uint64_t height = 0;
  std::vector<double> params;
};

struct Observation2D {
  double x = 0.0;
  double y = 0.0;
  point3d_id_t point3d_id = kNoPoint3D;
};

struct ImageRecord {
  image_id_t image_id = 0;
  // World-to-camera rotation, stored verbatim from disk (unit within 1e-9
  // but never renormalized here, so binary round-trips stay bit-exact).
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  camera_id_t camera_id = 0;
  std::string name;
  std::vector<Observation2D> observations;
};

struct TrackElement {
  image_id_t image_id = 0;
  uint32_t obs_index = 0;
};

struct Point3DRecord {
  point3d_id_t point3d_id = 0;
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  std::array<uint8_t, 3> rgb = {0, 0, 0};
  double error = 0.0;  // mean reprojection error in px
  std::vector<TrackElement> track;
};

// Complete sparse reconstruction state. Ordered maps keep every iteration
// and every file write in ascending-id order.
struct SparseModel {
  std::map<camera_id_t, CameraRecord> cameras;
  std::map<image_id_t, ImageRecord> images;
  std::map<point3d_id_t, Point3DRecord> points;
};

// Checks structural invariants: parameter counts, positive dimensions and
// focals, unit quaternions (1e-9), and two-way referential integrity
// between image observations and point tracks. Throws ValidationError
// with the offending id; never repairs.
void validate_model(const SparseModel& model);

// Per-image keypoints plus row-major float descriptors (one row per
// keypoint). Integer descriptors are converted by the producer, not here.
// Keypoints are kept at double precision in memory; the FEAT1 file format
// stores them as f32.
struct FeatureSet {
  std::string image_name;
  std::vector<Eigen::Vector2d> keypoints;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> descriptors;
};

// Maximum pairwise distance between camera centers; the scale reference
// for position-noise fractions and alignment thresholds.
double scene_diameter(const SparseModel& model);

}  // namespace posebench
