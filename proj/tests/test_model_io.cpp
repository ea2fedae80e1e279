#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "posebench/error.hpp"
#include "posebench/model_io.hpp"
#include "posebench/rng.hpp"

using namespace posebench;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("posebench_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_le(std::vector<char>& out, uint64_t bits, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

void append_f64(std::vector<char>& out, double value) {
  append_le(out, std::bit_cast<uint64_t>(value), 8);
}

// Randomized valid model covering every camera model kind.
SparseModel random_model(SplitMix64& rng) {
  SparseModel model;
  const int n_cameras = 1 + static_cast<int>(rng.uniform_index(4));
  for (int c = 0; c < n_cameras; ++c) {
    CameraRecord camera;
    camera.camera_id = c + 1;
    camera.model = static_cast<CameraModelKind>(rng.uniform_index(6));
    camera.width = 200 + rng.uniform_index(800);
    camera.height = 200 + rng.uniform_index(800);
    const int num_params = camera_model_num_params(camera.model);
    for (int p = 0; p < num_params; ++p) {
      // Leading focal params must stay positive.
      camera.params.push_back(p < 2 ? rng.uniform(100.0, 900.0)
                                    : rng.uniform(-0.2, 0.2));
    }
    model.cameras.emplace(camera.camera_id, camera);
  }
  const int n_images = 2 + static_cast<int>(rng.uniform_index(5));
  for (int i = 0; i < n_images; ++i) {
    ImageRecord image;
    image.image_id = i + 1;
    Eigen::Quaterniond q(rng.gaussian(), rng.gaussian(), rng.gaussian(),
                         rng.gaussian());
    image.rotation = q.normalized();
    image.translation =
        Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
    image.camera_id = 1 + static_cast<camera_id_t>(rng.uniform_index(n_cameras));
    image.name = "img_" + std::to_string(i) + ".png";
    const int n_obs = 2 + static_cast<int>(rng.uniform_index(6));
    for (int o = 0; o < n_obs; ++o) {
      image.observations.push_back(
          {rng.uniform(0.0, 800.0), rng.uniform(0.0, 800.0), kNoPoint3D});
    }
    model.images.emplace(image.image_id, image);
  }
  // One point observed by the first two observations of every image.
  Point3DRecord point;
  point.point3d_id = 7;
  point.xyz = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
  point.rgb = {static_cast<uint8_t>(rng.uniform_index(256)),
               static_cast<uint8_t>(rng.uniform_index(256)),
               static_cast<uint8_t>(rng.uniform_index(256))};
  point.error = rng.uniform(0.0, 2.0);
  for (auto& [id, image] : model.images) {
    image.observations[0].point3d_id = point.point3d_id;
    point.track.push_back({id, 0});
  }
  model.points.emplace(point.point3d_id, point);
  return model;
}

bool models_equal(const SparseModel& a, const SparseModel& b, double tol) {
  if (a.cameras.size() != b.cameras.size()) return false;
  if (a.images.size() != b.images.size()) return false;
  if (a.points.size() != b.points.size()) return false;
  for (const auto& [id, ca] : a.cameras) {
    const CameraRecord& cb = b.cameras.at(id);
    if (ca.model != cb.model || ca.width != cb.width || ca.height != cb.height)
      return false;
    for (size_t p = 0; p < ca.params.size(); ++p) {
      if (std::abs(ca.params[p] - cb.params[p]) > tol) return false;
    }
  }
  for (const auto& [id, ia] : a.images) {
    const ImageRecord& ib = b.images.at(id);
    if (ia.name != ib.name || ia.camera_id != ib.camera_id) return false;
    if ((ia.rotation.coeffs() - ib.rotation.coeffs()).cwiseAbs().maxCoeff() > tol)
      return false;
    if ((ia.translation - ib.translation).cwiseAbs().maxCoeff() > tol) return false;
    if (ia.observations.size() != ib.observations.size()) return false;
    for (size_t o = 0; o < ia.observations.size(); ++o) {
      if (std::abs(ia.observations[o].x - ib.observations[o].x) > tol ||
          std::abs(ia.observations[o].y - ib.observations[o].y) > tol ||
          ia.observations[o].point3d_id != ib.observations[o].point3d_id)
        return false;
    }
  }
  for (const auto& [id, pa] : a.points) {
    const Point3DRecord& pb = b.points.at(id);
    if ((pa.xyz - pb.xyz).cwiseAbs().maxCoeff() > tol) return false;
    if (pa.rgb != pb.rgb || std::abs(pa.error - pb.error) > tol) return false;
    if (pa.track.size() != pb.track.size()) return false;
    for (size_t t = 0; t < pa.track.size(); ++t) {
      if (pa.track[t].image_id != pb.track[t].image_id ||
          pa.track[t].obs_index != pb.track[t].obs_index)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("model io: empty model round trip") {
  const fs::path dir = temp_dir("empty");
  const SparseModel empty;
  for (const ModelFormat format : {ModelFormat::kBinary, ModelFormat::kText}) {
    write_model(empty, dir, format);
    const SparseModel back = read_model(dir, format);
    CHECK(back.cameras.empty());
    CHECK(back.images.empty());
    CHECK(back.points.empty());
  }
}

TEST_CASE("model io: hand-assembled binary camera file") {
  const fs::path dir = temp_dir("handbin");
  // Independent byte-level encoding of one SIMPLE_PINHOLE camera.
  std::vector<char> bytes;
  append_le(bytes, 1, 8);                     // camera count
  append_le(bytes, 1, 4);                     // camera_id
  append_le(bytes, 0, 4);                     // model id SIMPLE_PINHOLE
  append_le(bytes, 100, 8);                   // width
  append_le(bytes, 100, 8);                   // height
  append_f64(bytes, 50.0);                    // f
  append_f64(bytes, 50.0);                    // cx
  append_f64(bytes, 50.0);                    // cy
  std::ofstream(dir / "cameras.bin", std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::vector<char> none;
  append_le(none, 0, 8);
  std::ofstream(dir / "images.bin", std::ios::binary)
      .write(none.data(), static_cast<std::streamsize>(none.size()));
  std::ofstream(dir / "points3D.bin", std::ios::binary)
      .write(none.data(), static_cast<std::streamsize>(none.size()));

  const SparseModel model = read_model(dir, ModelFormat::kBinary);
  REQUIRE(model.cameras.size() == 1);
  const CameraRecord& camera = model.cameras.at(1);
  CHECK(camera.model == CameraModelKind::kSimplePinhole);
  CHECK(camera.width == 100);
  CHECK(camera.height == 100);
  REQUIRE(camera.params.size() == 3);
  CHECK(camera.params[0] == 50.0);
  CHECK(camera.params[1] == 50.0);
  CHECK(camera.params[2] == 50.0);
}

TEST_CASE("model io: binary round trip is byte identical") {
  SplitMix64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    SparseModel model = random_model(rng);
    const fs::path dir_a = temp_dir("bytes_a");
    const fs::path dir_b = temp_dir("bytes_b");
    write_model(model, dir_a, ModelFormat::kBinary);
    const SparseModel back = read_model(dir_a, ModelFormat::kBinary);
    write_model(back, dir_b, ModelFormat::kBinary);
    for (const char* name : {"cameras.bin", "images.bin", "points3D.bin"}) {
      CHECK(read_bytes(dir_a / name) == read_bytes(dir_b / name));
    }
    CHECK(models_equal(model, back, 0.0));
  }
}

TEST_CASE("model io: text round trip within 1e-9") {
  SplitMix64 rng(202);
  for (int trial = 0; trial < 10; ++trial) {
    SparseModel model = random_model(rng);
    const fs::path dir = temp_dir("text");
    write_model(model, dir, ModelFormat::kText);
    const SparseModel back = read_model(dir, ModelFormat::kText);
    CHECK(models_equal(model, back, 1e-9));
  }
}

TEST_CASE("model io: NULL observation encoded as all-ones 64-bit") {
  const fs::path dir = temp_dir("nullenc");
  SplitMix64 rng(33);
  SparseModel model = random_model(rng);
  write_model(model, dir, ModelFormat::kBinary);

  // The second observation of each image is unlinked; hunt for the -1
  // sentinel bytes in the raw image file.
  const std::vector<char> bytes = read_bytes(dir / "images.bin");
  int sentinels = 0;
  for (size_t i = 0; i + 8 <= bytes.size(); ++i) {
    bool all_ones = true;
    for (size_t b = 0; b < 8; ++b) {
      if (static_cast<unsigned char>(bytes[i + b]) != 0xFF) {
        all_ones = false;
        break;
      }
    }
    if (all_ones) ++sentinels;
  }
  size_t unlinked = 0;
  for (const auto& [id, image] : model.images) {
    for (const Observation2D& obs : image.observations) {
      if (obs.point3d_id == kNoPoint3D) ++unlinked;
    }
  }
  CHECK(sentinels >= static_cast<int>(unlinked));
}

TEST_CASE("model io: text quaternions survive with < 1e-9 error") {
  const fs::path dir = temp_dir("qualttext");
  SplitMix64 rng(72);
  SparseModel model = random_model(rng);
  write_model(model, dir, ModelFormat::kText);
  const SparseModel back = read_model(dir, ModelFormat::kText);
  for (const auto& [id, image] : model.images) {
    const Eigen::Quaterniond& qa = image.rotation;
    const Eigen::Quaterniond& qb = back.images.at(id).rotation;
    CHECK((qa.coeffs() - qb.coeffs()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("model io: dangling references rejected with offending id") {
  const fs::path dir = temp_dir("dangling");
  SplitMix64 rng(55);
  SparseModel model = random_model(rng);
  model.images.begin()->second.observations[1].point3d_id = 99999;
  CHECK_THROWS_WITH_AS(write_model(model, dir, ModelFormat::kBinary),
                       doctest::Contains("99999"), ValidationError);

  // The same model written around the validator must be rejected on read.
  model.images.begin()->second.observations[1].point3d_id = kNoPoint3D;
  write_model(model, dir, ModelFormat::kText);
  std::ofstream patch(dir / "images.txt", std::ios::app);
  patch << "1000 1 0 0 0 0 0 0 1 ghost.png\n10.0 10.0 424242\n";
  patch.close();
  CHECK_THROWS_WITH_AS((void)read_model(dir, ModelFormat::kText),
                       doctest::Contains("424242"), ValidationError);
}

TEST_CASE("model io: unknown camera model id rejected") {
  const fs::path dir = temp_dir("badmodel");
  std::vector<char> bytes;
  append_le(bytes, 1, 8);
  append_le(bytes, 1, 4);
  append_le(bytes, 42, 4);  // unknown model id
  append_le(bytes, 10, 8);
  append_le(bytes, 10, 8);
  std::ofstream(dir / "cameras.bin", std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::vector<char> none;
  append_le(none, 0, 8);
  std::ofstream(dir / "images.bin", std::ios::binary)
      .write(none.data(), static_cast<std::streamsize>(none.size()));
  std::ofstream(dir / "points3D.bin", std::ios::binary)
      .write(none.data(), static_cast<std::streamsize>(none.size()));
  CHECK_THROWS_AS((void)read_model(dir, ModelFormat::kBinary), ValidationError);
}

TEST_CASE("model io: missing and truncated files rejected") {
  const fs::path dir = temp_dir("missing");
  CHECK_THROWS_AS((void)read_model(dir, ModelFormat::kBinary), IoError);

  std::vector<char> bytes;
  append_le(bytes, 3, 8);  // claims 3 cameras, provides none
  std::ofstream(dir / "cameras.bin", std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::vector<char> none;
  append_le(none, 0, 8);
  std::ofstream(dir / "images.bin", std::ios::binary)
      .write(none.data(), static_cast<std::streamsize>(none.size()));
  std::ofstream(dir / "points3D.bin", std::ios::binary)
      .write(none.data(), static_cast<std::streamsize>(none.size()));
  CHECK_THROWS_AS((void)read_model(dir, ModelFormat::kBinary), IoError);
}

TEST_CASE("model io: track back-reference mismatch rejected") {
  SplitMix64 rng(91);
  SparseModel model = random_model(rng);
  // Point claims an element whose observation does not link back.
  model.points.at(7).track.push_back({model.images.begin()->first, 1});
  const fs::path dir = temp_dir("backref");
  CHECK_THROWS_AS(write_model(model, dir, ModelFormat::kBinary), ValidationError);
}

TEST_CASE("feature io: FEAT1 empty and exact payload") {
  const fs::path dir = temp_dir("feat");

  FeatureSet empty;
  empty.image_name = "empty";
  empty.descriptors.resize(0, 128);
  write_features(empty, dir / "empty.feat");
  const FeatureSet back = read_features(dir / "empty.feat");
  CHECK(back.keypoints.empty());
  CHECK(back.descriptors.rows() == 0);
  CHECK(back.descriptors.cols() == 128);

  FeatureSet two;
  two.image_name = "two";
  two.keypoints = {{1.5, 2.5}, {3.0, 4.0}};
  two.descriptors.resize(2, 2);
  two.descriptors << 1.0f, 0.0f, 0.0f, 1.0f;
  write_features(two, dir / "two.feat");
  const FeatureSet two_back = read_features(dir / "two.feat");
  REQUIRE(two_back.keypoints.size() == 2);
  CHECK(two_back.keypoints[0].x() == 1.5);
  CHECK(two_back.descriptors(0, 0) == 1.0f);
  CHECK(two_back.descriptors(0, 1) == 0.0f);
  CHECK(two_back.descriptors(1, 1) == 1.0f);
}

TEST_CASE("feature io: write-read identity on random sets") {
  const fs::path dir = temp_dir("featrt");
  SplitMix64 rng(7);
  FeatureSet features;
  features.image_name = "rand";
  const int n = 37, dim = 16;
  features.descriptors.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    // Float-representable coordinates round-trip exactly.
    features.keypoints.emplace_back(static_cast<float>(rng.uniform(0, 640)),
                                    static_cast<float>(rng.uniform(0, 480)));
    for (int d = 0; d < dim; ++d) {
      features.descriptors(i, d) = static_cast<float>(rng.gaussian());
    }
  }
  write_features(features, dir / "rand.feat");
  const FeatureSet back = read_features(dir / "rand.feat");
  REQUIRE(back.keypoints.size() == features.keypoints.size());
  for (int i = 0; i < n; ++i) {
    CHECK(back.keypoints[i] == features.keypoints[i]);
  }
  CHECK((back.descriptors - features.descriptors).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("feature io: bad magic and truncation rejected") {
  const fs::path dir = temp_dir("featbad");
  std::ofstream(dir / "bad.feat", std::ios::binary).write("NOPE!", 5);
  CHECK_THROWS_AS((void)read_features(dir / "bad.feat"), IoError);

  std::ofstream trunc(dir / "trunc.feat", std::ios::binary);
  trunc.write("FEAT1", 5);
  const uint32_t count = 10, dim = 8;
  trunc.write(reinterpret_cast<const char*>(&count), 4);
  trunc.write(reinterpret_cast<const char*>(&dim), 4);
  trunc.close();  // payload missing
  CHECK_THROWS_AS((void)read_features(dir / "trunc.feat"), IoError);
}

TEST_CASE("metric table: rows, duplicates, header-only") {
  const fs::path dir = temp_dir("metrics");

  std::ofstream(dir / "ok.csv") << "scene,view,metric,value\n"
                                << "s1,v1,psnr,25.5\n"
                                << "s1,v2,psnr,27.0\n";
  const auto table = read_metric_table(dir / "ok.csv");
  REQUIRE(table.count("s1") == 1);
  CHECK(table.at("s1").size() == 2);

  std::ofstream(dir / "dup.csv") << "scene,view,metric,value\n"
                                 << "s1,v1,psnr,25.5\n"
                                 << "s1,v1,psnr,26.0\n";
  CHECK_THROWS_WITH_AS((void)read_metric_table(dir / "dup.csv"),
                       doctest::Contains("row 3"), IoError);

  std::ofstream(dir / "empty.csv") << "scene,view,metric,value\n";
  CHECK(read_metric_table(dir / "empty.csv").empty());

  std::ofstream(dir / "badmetric.csv") << "scene,view,metric,value\n"
                                       << "s1,v1,vibes,1.0\n";
  CHECK_THROWS_AS((void)read_metric_table(dir / "badmetric.csv"), IoError);
}
