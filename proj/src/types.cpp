#include "posebench/types.hpp"

#include <set>
#include <string>

#include "posebench/error.hpp"

namespace posebench {

int camera_model_num_params(CameraModelKind kind) {
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
      return 3;
    case CameraModelKind::kPinhole:
      return 4;
    case CameraModelKind::kSimpleRadial:
      return 4;
    case CameraModelKind::kRadial:
      return 5;
    case CameraModelKind::kOpenCV:
      return 8;
    case CameraModelKind::kOpenCVFisheye:
      return 8;
  }
  throw ValidationError("unknown camera model kind " +
                        std::to_string(static_cast<int32_t>(kind)));
}

std::string_view camera_model_name(CameraModelKind kind) {
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
      return "SIMPLE_PINHOLE";
    case CameraModelKind::kPinhole:
      return "PINHOLE";
    case CameraModelKind::kSimpleRadial:
      return "SIMPLE_RADIAL";
    case CameraModelKind::kRadial:
      return "RADIAL";
    case CameraModelKind::kOpenCV:
      return "OPENCV";
    case CameraModelKind::kOpenCVFisheye:
      return "OPENCV_FISHEYE";
  }
  throw ValidationError("unknown camera model kind " +
                        std::to_string(static_cast<int32_t>(kind)));
}

CameraModelKind camera_model_from_id(int32_t id) {
  if (id < 0 || id > 5) {
    throw ValidationError("unknown camera model id " + std::to_string(id));
  }
  return static_cast<CameraModelKind>(id);
}

CameraModelKind camera_model_from_name(std::string_view name) {
  for (int32_t id = 0; id <= 5; ++id) {
    const auto kind = static_cast<CameraModelKind>(id);
    if (camera_model_name(kind) == name) return kind;
  }
  throw ValidationError("unknown camera model name '" + std::string(name) + "'");
}

namespace {

// Focal parameters lead the parameter list for every supported model:
// one for SIMPLE_* kinds, two otherwise.
int num_focal_params(CameraModelKind kind) {
  return (kind == CameraModelKind::kSimplePinhole ||
          kind == CameraModelKind::kSimpleRadial ||
          kind == CameraModelKind::kRadial)
             ? 1
             : 2;
}

}  // namespace

void validate_model(const SparseModel& model) {
  for (const auto& [camera_id, camera] : model.cameras) {
    if (camera.camera_id != camera_id) {
      throw ValidationError("camera map key " + std::to_string(camera_id) +
                            " does not match record id " +
                            std::to_string(camera.camera_id));
    }
    if (camera_id <= 0) {
      throw ValidationError("camera id must be positive, got " +
                            std::to_string(camera_id));
    }
    const int expected = camera_model_num_params(camera.model);
    if (static_cast<int>(camera.params.size()) != expected) {
      throw ValidationError(
          "camera " + std::to_string(camera_id) + " has " +
          std::to_string(camera.params.size()) + " params, expected " +
          std::to_string(expected) + " for " +
          std::string(camera_model_name(camera.model)));
    }
    if (camera.width == 0 || camera.height == 0) {
      throw ValidationError("camera " + std::to_string(camera_id) +
                            " has zero width or height");
    }
    for (int i = 0; i < num_focal_params(camera.model); ++i) {
      if (!(camera.params[i] > 0.0)) {
        throw ValidationError("camera " + std::to_string(camera_id) +
                              " has non-positive focal parameter");
      }
    }
    for (const double p : camera.params) {
      if (!std::isfinite(p)) {
        throw ValidationError("camera " + std::to_string(camera_id) +
                              " has non-finite parameter");
      }
    }
  }

  for (const auto& [image_id, image] : model.images) {
    if (image.image_id != image_id) {
      throw ValidationError("image map key " + std::to_string(image_id) +
                            " does not match record id " +
                            std::to_string(image.image_id));
    }
    if (image_id <= 0) {
      throw ValidationError("image id must be positive, got " +
                            std::to_string(image_id));
    }
    if (std::abs(image.rotation.norm() - 1.0) > 1e-9) {
      throw ValidationError("image " + std::to_string(image_id) +
                            " quaternion is not unit norm");
    }
    if (!image.translation.allFinite()) {
      throw ValidationError("image " + std::to_string(image_id) +
                            " has non-finite translation");
    }
    if (model.cameras.find(image.camera_id) == model.cameras.end()) {
      throw ValidationError("image " + std::to_string(image_id) +
                            " references missing camera " +
                            std::to_string(image.camera_id));
    }
    std::set<point3d_id_t> seen;
    for (size_t i = 0; i < image.observations.size(); ++i) {
      const Observation2D& obs = image.observations[i];
      if (!std::isfinite(obs.x) || !std::isfinite(obs.y)) {
        throw ValidationError("image " + std::to_string(image_id) +
                              " observation " + std::to_string(i) +
                              " has non-finite coordinates");
      }
      if (obs.point3d_id == kNoPoint3D) continue;
      if (model.points.find(obs.point3d_id) == model.points.end()) {
        throw ValidationError("image " + std::to_string(image_id) +
                              " references missing point " +
                              std::to_string(obs.point3d_id));
      }
      if (!seen.insert(obs.point3d_id).second) {
        throw ValidationError("image " + std::to_string(image_id) +
                              " observes point " +
                              std::to_string(obs.point3d_id) + " twice");
      }
    }
  }

  for (const auto& [point_id, point] : model.points) {
    if (point.point3d_id != point_id) {
      throw ValidationError("point map key " + std::to_string(point_id) +
                            " does not match record id " +
                            std::to_string(point.point3d_id));
    }
    if (point_id <= 0) {
      throw ValidationError("point id must be positive, got " +
                            std::to_string(point_id));
    }
    if (!(point.error >= 0.0)) {
      throw ValidationError("point " + std::to_string(point_id) +
                            " has negative error");
    }
    if (!point.xyz.allFinite()) {
      throw ValidationError("point " + std::to_string(point_id) +
                            " has non-finite position");
    }
    for (const TrackElement& el : point.track) {
      const auto image_it = model.images.find(el.image_id);
      if (image_it == model.images.end()) {
        throw ValidationError("point " + std::to_string(point_id) +
                              " track references missing image " +
                              std::to_string(el.image_id));
      }
      const auto& observations = image_it->second.observations;
      if (el.obs_index >= observations.size()) {
        throw ValidationError("point " + std::to_string(point_id) +
                              " track references out-of-range observation " +
                              std::to_string(el.obs_index) + " of image " +
                              std::to_string(el.image_id));
      }
      if (observations[el.obs_index].point3d_id != point_id) {
        throw ValidationError("point " + std::to_string(point_id) +
                              " track element (image " +
                              std::to_string(el.image_id) + ", obs " +
                              std::to_string(el.obs_index) +
                              ") does not back-reference the point");
      }
    }
  }

  // Reverse direction: every linked observation must appear in its
  // point's track.
  for (const auto& [image_id, image] : model.images) {
    for (size_t i = 0; i < image.observations.size(); ++i) {
      const point3d_id_t pid = image.observations[i].point3d_id;
      if (pid == kNoPoint3D) continue;
      const Point3DRecord& point = model.points.at(pid);
      bool found = false;
      for (const TrackElement& el : point.track) {
        if (el.image_id == image_id && el.obs_index == i) {
          found = true;
          break;
        }
      }
      if (!found) {
        throw ValidationError("image " + std::to_string(image_id) +
                              " observation " + std::to_string(i) +
                              " links point " + std::to_string(pid) +
                              " but is absent from its track");
      }
    }
  }
}

double scene_diameter(const SparseModel& model) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(model.images.size());
  for (const auto& [id, image] : model.images) {
    const Eigen::Matrix3d rot = image.rotation.normalized().toRotationMatrix();
    centers.push_back(-(rot.transpose() * image.translation));
  }
  double diameter = 0.0;
  for (size_t i = 0; i < centers.size(); ++i) {
    for (size_t j = i + 1; j < centers.size(); ++j) {
      diameter = std::max(diameter, (centers[i] - centers[j]).norm());
    }
  }
  return diameter;
}

}  // namespace posebench
