#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "posebench/types.hpp"

namespace posebench {

enum class ModelFormat { kText, kBinary };

// Reads cameras/images/points3D from `directory` (.bin or .txt by format),
// validates all structural invariants, and preserves ids verbatim.
// Throws IoError / ValidationError with the offending file or id.
SparseModel read_model(const std::filesystem::path& directory, ModelFormat format);

// Deterministic writer: records in ascending-id order, binary layout
// little-endian regardless of host, text reals printed with 17
// significant digits.
void write_model(const SparseModel& model, const std::filesystem::path& directory,
                 ModelFormat format);

// FEAT1 feature files: magic "FEAT1", u32 keypoint count, u32 descriptor
// dim, f32 keypoints, f32 row-major descriptors.
FeatureSet read_features(const std::filesystem::path& file);
void write_features(const FeatureSet& features, const std::filesystem::path& file);

// Loads every <name>.feat in a directory, keyed by image name.
std::map<std::string, FeatureSet> read_feature_directory(
    const std::filesystem::path& directory);

struct MetricRecord {
  std::string scene;
  std::string view;
  std::string metric;  // psnr | ssim | lpips
  double value = 0.0;
};

// CSV with exact header "scene,view,metric,value". Duplicate
// (scene,view,metric) keys and unknown metrics are errors naming the row.
// Missing views are not invented here; penalization happens in evaluation.
std::map<std::string, std::vector<MetricRecord>> read_metric_table(
    const std::filesystem::path& file);

void write_metric_table(const std::vector<MetricRecord>& records,
                        const std::filesystem::path& file);

}  // namespace posebench
