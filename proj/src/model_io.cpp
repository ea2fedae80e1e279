#include "posebench/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "posebench/error.hpp"

namespace posebench {

namespace {

// --- little-endian primitives -------------------------------------------

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  std::make_unsigned_t<T> bits = static_cast<std::make_unsigned_t<T>>(value);
  char buffer[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) {
    buffer[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  }
  out.write(buffer, sizeof(T));
}

void write_le_f64(std::ostream& out, double value) {
  write_le<uint64_t>(out, std::bit_cast<uint64_t>(value));
}

void write_le_f32(std::ostream& out, float value) {
  write_le<uint32_t>(out, std::bit_cast<uint32_t>(value));
}

template <typename T>
T read_le(std::istream& in, const std::string& context) {
  char buffer[sizeof(T)];
  in.read(buffer, sizeof(T));
  if (!in) throw IoError("truncated read in " + context);
  std::make_unsigned_t<T> bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(buffer[i]))
            << (8 * i);
  }
  return static_cast<T>(bits);
}

double read_le_f64(std::istream& in, const std::string& context) {
  return std::bit_cast<double>(read_le<uint64_t>(in, context));
}

float read_le_f32(std::istream& in, const std::string& context) {
  return std::bit_cast<float>(read_le<uint32_t>(in, context));
}

std::ifstream open_input(const std::filesystem::path& path, bool binary) {
  std::ifstream file(path, binary ? std::ios::binary : std::ios::in);
  if (!file) throw IoError("cannot open " + path.string());
  return file;
}

std::ofstream open_output(const std::filesystem::path& path, bool binary) {
  std::ofstream file(path, binary ? std::ios::binary : std::ios::out);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  return file;
}

std::string format_real(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

// --- binary readers -------------------------------------------------------

void read_cameras_binary(SparseModel& model, const std::filesystem::path& path) {
  std::ifstream file = open_input(path, true);
  const uint64_t count = read_le<uint64_t>(file, path.string());
  for (uint64_t i = 0; i < count; ++i) {
    CameraRecord camera;
    camera.camera_id = read_le<int32_t>(file, path.string());
    camera.model = camera_model_from_id(read_le<int32_t>(file, path.string()));
    camera.width = read_le<uint64_t>(file, path.string());
    camera.height = read_le<uint64_t>(file, path.string());
    const int num_params = camera_model_num_params(camera.model);
    camera.params.resize(num_params);
    for (int p = 0; p < num_params; ++p) {
      camera.params[p] = read_le_f64(file, path.string());
    }
    if (!model.cameras.emplace(camera.camera_id, camera).second) {
      throw ValidationError("duplicate camera id " +
                            std::to_string(camera.camera_id) + " in " +
                            path.string());
    }
  }
}

void read_images_binary(SparseModel& model, const std::filesystem::path& path) {
  std::ifstream file = open_input(path, true);
  const uint64_t count = read_le<uint64_t>(file, path.string());
  for (uint64_t i = 0; i < count; ++i) {
    ImageRecord image;
    image.image_id = read_le<int32_t>(file, path.string());
    const double qw = read_le_f64(file, path.string());
    const double qx = read_le_f64(file, path.string());
    const double qy = read_le_f64(file, path.string());
    const double qz = read_le_f64(file, path.string());
    image.rotation = Eigen::Quaterniond(qw, qx, qy, qz);
    image.translation.x() = read_le_f64(file, path.string());
    image.translation.y() = read_le_f64(file, path.string());
    image.translation.z() = read_le_f64(file, path.string());
    image.camera_id = read_le<int32_t>(file, path.string());
    char c;
    while (file.get(c) && c != '\0') image.name.push_back(c);
    if (!file) throw IoError("truncated image name in " + path.string());
    const uint64_t num_obs = read_le<uint64_t>(file, path.string());
    image.observations.resize(num_obs);
    for (uint64_t o = 0; o < num_obs; ++o) {
      image.observations[o].x = read_le_f64(file, path.string());
      image.observations[o].y = read_le_f64(file, path.string());
      image.observations[o].point3d_id = read_le<int64_t>(file, path.string());
    }
    if (!model.images.emplace(image.image_id, image).second) {
      throw ValidationError("duplicate image id " +
                            std::to_string(image.image_id) + " in " +
                            path.string());
    }
  }
}

void read_points_binary(SparseModel& model, const std::filesystem::path& path) {
  std::ifstream file = open_input(path, true);
  const uint64_t count = read_le<uint64_t>(file, path.string());
  for (uint64_t i = 0; i < count; ++i) {
    Point3DRecord point;
    point.point3d_id = read_le<int64_t>(file, path.string());
    point.xyz.x() = read_le_f64(file, path.string());
    point.xyz.y() = read_le_f64(file, path.string());
    point.xyz.z() = read_le_f64(file, path.string());
    point.rgb[0] = read_le<uint8_t>(file, path.string());
    point.rgb[1] = read_le<uint8_t>(file, path.string());
    point.rgb[2] = read_le<uint8_t>(file, path.string());
    point.error = read_le_f64(file, path.string());
    const uint64_t track_len = read_le<uint64_t>(file, path.string());
    point.track.resize(track_len);
    for (uint64_t t = 0; t < track_len; ++t) {
      point.track[t].image_id = read_le<int32_t>(file, path.string());
      point.track[t].obs_index =
          static_cast<uint32_t>(read_le<int32_t>(file, path.string()));
    }
    if (!model.points.emplace(point.point3d_id, point).second) {
      throw ValidationError("duplicate point id " +
                            std::to_string(point.point3d_id) + " in " +
                            path.string());
    }
  }
}

// --- binary writers --------------------------------------------------------

void write_cameras_binary(const SparseModel& model,
                          const std::filesystem::path& path) {
  std::ofstream file = open_output(path, true);
  write_le<uint64_t>(file, model.cameras.size());
  for (const auto& [id, camera] : model.cameras) {
    write_le<int32_t>(file, camera.camera_id);
    write_le<int32_t>(file, static_cast<int32_t>(camera.model));
    write_le<uint64_t>(file, camera.width);
    write_le<uint64_t>(file, camera.height);
    for (const double p : camera.params) write_le_f64(file, p);
  }
}

void write_images_binary(const SparseModel& model,
                         const std::filesystem::path& path) {
  std::ofstream file = open_output(path, true);
  write_le<uint64_t>(file, model.images.size());
  for (const auto& [id, image] : model.images) {
    write_le<int32_t>(file, image.image_id);
    write_le_f64(file, image.rotation.w());
    write_le_f64(file, image.rotation.x());
    write_le_f64(file, image.rotation.y());
    write_le_f64(file, image.rotation.z());
    write_le_f64(file, image.translation.x());
    write_le_f64(file, image.translation.y());
    write_le_f64(file, image.translation.z());
    write_le<int32_t>(file, image.camera_id);
    file.write(image.name.data(), static_cast<std::streamsize>(image.name.size()));
    file.put('\0');
    write_le<uint64_t>(file, image.observations.size());
    for (const Observation2D& obs : image.observations) {
      write_le_f64(file, obs.x);
      write_le_f64(file, obs.y);
      write_le<int64_t>(file, obs.point3d_id);
    }
  }
}

void write_points_binary(const SparseModel& model,
                         const std::filesystem::path& path) {
  std::ofstream file = open_output(path, true);
  write_le<uint64_t>(file, model.points.size());
  for (const auto& [id, point] : model.points) {
    write_le<int64_t>(file, point.point3d_id);
    write_le_f64(file, point.xyz.x());
    write_le_f64(file, point.xyz.y());
    write_le_f64(file, point.xyz.z());
    write_le<uint8_t>(file, point.rgb[0]);
    write_le<uint8_t>(file, point.rgb[1]);
    write_le<uint8_t>(file, point.rgb[2]);
    write_le_f64(file, point.error);
    write_le<uint64_t>(file, point.track.size());
    for (const TrackElement& el : point.track) {
      write_le<int32_t>(file, el.image_id);
      write_le<int32_t>(file, static_cast<int32_t>(el.obs_index));
    }
  }
}

// --- text readers -----------------------------------------------------------

// Yields non-comment, non-empty lines.
bool next_data_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    size_t end = line.find_last_not_of(" \t\r");
    line = line.substr(start, end - start + 1);
    return true;
  }
  return false;
}

double parse_real(const std::string& token, const std::string& context) {
  try {
    size_t pos = 0;
    const double value = std::stod(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw IoError("malformed real '" + token + "' in " + context);
  }
}

int64_t parse_int(const std::string& token, const std::string& context) {
  try {
    size_t pos = 0;
    const int64_t value = std::stoll(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw IoError("malformed integer '" + token + "' in " + context);
  }
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream stream(line);
  std::string token;
  while (stream >> token) tokens.push_back(token);
  return tokens;
}

void read_cameras_text(SparseModel& model, const std::filesystem::path& path) {
  std::ifstream file = open_input(path, false);
  std::string line;
  while (next_data_line(file, line)) {
    const auto tokens = split_ws(line);
    if (tokens.size() < 4) throw IoError("short camera line in " + path.string());
    CameraRecord camera;
    camera.camera_id = static_cast<camera_id_t>(parse_int(tokens[0], path.string()));
    camera.model = camera_model_from_name(tokens[1]);
    camera.width = static_cast<uint64_t>(parse_int(tokens[2], path.string()));
    camera.height = static_cast<uint64_t>(parse_int(tokens[3], path.string()));
    const int num_params = camera_model_num_params(camera.model);
    if (static_cast<int>(tokens.size()) != 4 + num_params) {
      throw IoError("camera " + tokens[0] + " in " + path.string() + " has " +
                    std::to_string(tokens.size() - 4) + " params, expected " +
                    std::to_string(num_params));
    }
    for (int p = 0; p < num_params; ++p) {
      camera.params.push_back(parse_real(tokens[4 + p], path.string()));
    }
    if (!model.cameras.emplace(camera.camera_id, camera).second) {
      throw ValidationError("duplicate camera id " + tokens[0] + " in " +
                            path.string());
    }
  }
}

void read_images_text(SparseModel& model, const std::filesystem::path& path) {
  std::ifstream file = open_input(path, false);
  std::string line;
  while (next_data_line(file, line)) {
    const auto tokens = split_ws(line);
    if (tokens.size() != 10) {
      throw IoError("image header line in " + path.string() +
                    " must have 10 fields, got " + std::to_string(tokens.size()));
    }
    ImageRecord image;
    image.image_id = static_cast<image_id_t>(parse_int(tokens[0], path.string()));
    image.rotation = Eigen::Quaterniond(
        parse_real(tokens[1], path.string()), parse_real(tokens[2], path.string()),
        parse_real(tokens[3], path.string()), parse_real(tokens[4], path.string()));
    image.translation = Eigen::Vector3d(parse_real(tokens[5], path.string()),
                                        parse_real(tokens[6], path.string()),
                                        parse_real(tokens[7], path.string()));
    image.camera_id = static_cast<camera_id_t>(parse_int(tokens[8], path.string()));
    image.name = tokens[9];

    // Observations line follows, possibly empty.
    std::string obs_line;
    if (!std::getline(file, obs_line)) {
      throw IoError("missing observations line for image " + tokens[0] + " in " +
                    path.string());
    }
    const auto obs_tokens = split_ws(obs_line);
    if (obs_tokens.size() % 3 != 0) {
      throw IoError("observations of image " + tokens[0] + " in " + path.string() +
                    " are not (x y point3d_id) triplets");
    }
    for (size_t i = 0; i < obs_tokens.size(); i += 3) {
      Observation2D obs;
      obs.x = parse_real(obs_tokens[i], path.string());
      obs.y = parse_real(obs_tokens[i + 1], path.string());
      obs.point3d_id = parse_int(obs_tokens[i + 2], path.string());
      image.observations.push_back(obs);
    }
    if (!model.images.emplace(image.image_id, image).second) {
      throw ValidationError("duplicate image id " + tokens[0] + " in " +
                            path.string());
    }
  }
}

void read_points_text(SparseModel& model, const std::filesystem::path& path) {
  std::ifstream file = open_input(path, false);
  std::string line;
  while (next_data_line(file, line)) {
    const auto tokens = split_ws(line);
    if (tokens.size() < 8 || (tokens.size() - 8) % 2 != 0) {
      throw IoError("malformed point line in " + path.string());
    }
    Point3DRecord point;
    point.point3d_id = parse_int(tokens[0], path.string());
    point.xyz = Eigen::Vector3d(parse_real(tokens[1], path.string()),
                                parse_real(tokens[2], path.string()),
                                parse_real(tokens[3], path.string()));
    for (int c = 0; c < 3; ++c) {
      const int64_t v = parse_int(tokens[4 + c], path.string());
      if (v < 0 || v > 255) throw IoError("rgb out of range in " + path.string());
      point.rgb[c] = static_cast<uint8_t>(v);
    }
    point.error = parse_real(tokens[7], path.string());
    for (size_t i = 8; i < tokens.size(); i += 2) {
      TrackElement el;
      el.image_id = static_cast<image_id_t>(parse_int(tokens[i], path.string()));
      el.obs_index =
          static_cast<uint32_t>(parse_int(tokens[i + 1], path.string()));
      point.track.push_back(el);
    }
    if (!model.points.emplace(point.point3d_id, point).second) {
      throw ValidationError("duplicate point id " + tokens[0] + " in " +
                            path.string());
    }
  }
}

// --- text writers -----------------------------------------------------------

void write_cameras_text(const SparseModel& model,
                        const std::filesystem::path& path) {
  std::ofstream file = open_output(path, false);
  file << "# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n";
  for (const auto& [id, camera] : model.cameras) {
    file << camera.camera_id << ' ' << camera_model_name(camera.model) << ' '
         << camera.width << ' ' << camera.height;
    for (const double p : camera.params) file << ' ' << format_real(p);
    file << '\n';
  }
}

void write_images_text(const SparseModel& model,
                       const std::filesystem::path& path) {
  std::ofstream file = open_output(path, false);
  file << "# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n"
       << "#   followed by observations: X Y POINT3D_ID\n";
  for (const auto& [id, image] : model.images) {
    file << image.image_id << ' ' << format_real(image.rotation.w()) << ' '
         << format_real(image.rotation.x()) << ' '
         << format_real(image.rotation.y()) << ' '
         << format_real(image.rotation.z()) << ' '
         << format_real(image.translation.x()) << ' '
         << format_real(image.translation.y()) << ' '
         << format_real(image.translation.z()) << ' ' << image.camera_id << ' '
         << image.name << '\n';
    bool first = true;
    for (const Observation2D& obs : image.observations) {
      if (!first) file << ' ';
      first = false;
      file << format_real(obs.x) << ' ' << format_real(obs.y) << ' '
           << obs.point3d_id;
    }
    file << '\n';
  }
}

void write_points_text(const SparseModel& model,
                       const std::filesystem::path& path) {
  std::ofstream file = open_output(path, false);
  file << "# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[] as "
          "(IMAGE_ID OBS_INDEX)\n";
  for (const auto& [id, point] : model.points) {
    file << point.point3d_id << ' ' << format_real(point.xyz.x()) << ' '
         << format_real(point.xyz.y()) << ' ' << format_real(point.xyz.z()) << ' '
         << static_cast<int>(point.rgb[0]) << ' ' << static_cast<int>(point.rgb[1])
         << ' ' << static_cast<int>(point.rgb[2]) << ' '
         << format_real(point.error);
    for (const TrackElement& el : point.track) {
      file << ' ' << el.image_id << ' ' << el.obs_index;
    }
    file << '\n';
  }
}

}  // namespace

SparseModel read_model(const std::filesystem::path& directory, ModelFormat format) {
  SparseModel model;
  const char* ext = format == ModelFormat::kBinary ? ".bin" : ".txt";
  const auto cameras_path = directory / (std::string("cameras") + ext);
  const auto images_path = directory / (std::string("images") + ext);
  const auto points_path = directory / (std::string("points3D") + ext);
  for (const auto& p : {cameras_path, images_path, points_path}) {
    if (!std::filesystem::exists(p)) {
      throw IoError("missing model file " + p.string());
    }
  }
  if (format == ModelFormat::kBinary) {
    read_cameras_binary(model, cameras_path);
    read_images_binary(model, images_path);
    read_points_binary(model, points_path);
  } else {
    read_cameras_text(model, cameras_path);
    read_images_text(model, images_path);
    read_points_text(model, points_path);
  }
  validate_model(model);
  return model;
}

void write_model(const SparseModel& model, const std::filesystem::path& directory,
                 ModelFormat format) {
  validate_model(model);
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (!std::filesystem::is_directory(directory)) {
    throw IoError("cannot create model directory " + directory.string());
  }
  if (format == ModelFormat::kBinary) {
    write_cameras_binary(model, directory / "cameras.bin");
    write_images_binary(model, directory / "images.bin");
    write_points_binary(model, directory / "points3D.bin");
  } else {
    write_cameras_text(model, directory / "cameras.txt");
    write_images_text(model, directory / "images.txt");
    write_points_text(model, directory / "points3D.txt");
  }
}

FeatureSet read_features(const std::filesystem::path& file) {
  std::ifstream in = open_input(file, true);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "FEAT1", 5) != 0) {
    throw IoError("bad magic in feature file " + file.string());
  }
  const uint32_t count = read_le<uint32_t>(in, file.string());
  const uint32_t dim = read_le<uint32_t>(in, file.string());
  FeatureSet features;
  features.image_name = file.stem().string();
  features.keypoints.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    features.keypoints[i].x() = static_cast<double>(read_le_f32(in, file.string()));
    features.keypoints[i].y() = static_cast<double>(read_le_f32(in, file.string()));
    if (!std::isfinite(features.keypoints[i].x()) ||
        !std::isfinite(features.keypoints[i].y())) {
      throw ValidationError("non-finite keypoint in " + file.string());
    }
  }
  features.descriptors.resize(count, dim);
  for (uint32_t i = 0; i < count; ++i) {
    for (uint32_t d = 0; d < dim; ++d) {
      features.descriptors(i, d) = read_le_f32(in, file.string());
    }
  }
  return features;
}

void write_features(const FeatureSet& features, const std::filesystem::path& file) {
  if (features.descriptors.rows() !=
      static_cast<Eigen::Index>(features.keypoints.size())) {
    throw ValidationError("keypoint count does not match descriptor rows");
  }
  std::ofstream out = open_output(file, true);
  out.write("FEAT1", 5);
  write_le<uint32_t>(out, static_cast<uint32_t>(features.keypoints.size()));
  write_le<uint32_t>(out, static_cast<uint32_t>(features.descriptors.cols()));
  for (const Eigen::Vector2d& kp : features.keypoints) {
    write_le_f32(out, static_cast<float>(kp.x()));
    write_le_f32(out, static_cast<float>(kp.y()));
  }
  for (Eigen::Index i = 0; i < features.descriptors.rows(); ++i) {
    for (Eigen::Index d = 0; d < features.descriptors.cols(); ++d) {
      write_le_f32(out, features.descriptors(i, d));
    }
  }
}

std::map<std::string, FeatureSet> read_feature_directory(
    const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory)) {
    throw IoError("feature directory " + directory.string() + " does not exist");
  }
  std::map<std::string, FeatureSet> result;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".feat") continue;
    FeatureSet features = read_features(entry.path());
    const std::string name = features.image_name;
    result.emplace(name, std::move(features));
  }
  return result;
}

std::map<std::string, std::vector<MetricRecord>> read_metric_table(
    const std::filesystem::path& file) {
  std::ifstream in = open_input(file, false);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty metric file " + file.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "scene,view,metric,value") {
    throw IoError("bad metric CSV header in " + file.string() +
                  ": expected 'scene,view,metric,value'");
  }
  std::map<std::string, std::vector<MetricRecord>> result;
  std::set<std::string> keys;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream stream(line);
    std::string field;
    while (std::getline(stream, field, ',')) fields.push_back(field);
    if (fields.size() != 4) {
      throw IoError("unparseable row " + std::to_string(row) + " in " +
                    file.string());
    }
    MetricRecord record;
    record.scene = fields[0];
    record.view = fields[1];
    record.metric = fields[2];
    if (record.metric != "psnr" && record.metric != "ssim" &&
        record.metric != "lpips") {
      throw IoError("unknown metric '" + record.metric + "' at row " +
                    std::to_string(row) + " in " + file.string());
    }
    record.value = parse_real(fields[3], file.string() + " row " +
                                             std::to_string(row));
    const std::string key = record.scene + "\x1f" + record.view + "\x1f" +
                            record.metric;
    if (!keys.insert(key).second) {
      throw IoError("duplicate (scene,view,metric) at row " +
                    std::to_string(row) + " in " + file.string() + ": " + line);
    }
    result[record.scene].push_back(record);
  }
  return result;
}

void write_metric_table(const std::vector<MetricRecord>& records,
                        const std::filesystem::path& file) {
  std::ofstream out = open_output(file, false);
  out << "scene,view,metric,value\n";
  for (const MetricRecord& r : records) {
    out << r.scene << ',' << r.view << ',' << r.metric << ','
        << format_real(r.value) << '\n';
  }
}

}  // namespace posebench
