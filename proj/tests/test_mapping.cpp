#include <doctest.h>

#include <algorithm>

#include "posebench/error.hpp"
#include "posebench/mapping.hpp"
#include "posebench/synth.hpp"
#include "posebench/threads.hpp"

using namespace posebench;

namespace {

MatchGraph graph_from(
    const std::vector<std::tuple<image_id_t, image_id_t,
                                 std::vector<std::pair<uint32_t, uint32_t>>>>&
        entries) {
  MatchGraph graph;
  for (const auto& [a, b, matches] : entries) {
    std::vector<Match> list;
    for (const auto& [ia, ib] : matches) list.push_back({ia, ib, 0.0f});
    graph.insert(a, b, std::move(list));
  }
  return graph;
}

SynthScene small_scene(uint64_t seed, double pixel_noise = 0.0) {
  SynthConfig cfg;
  cfg.n_cameras = 10;
  cfg.n_points = 50;
  cfg.pixel_noise_sigma = pixel_noise;
  cfg.seed = seed;
  return generate(cfg);
}

// Fresh copy of the ground-truth model with points and links stripped,
// ready for triangulation.
SparseModel unlinked_model(const SynthScene& scene) {
  SparseModel model = scene.gt_model;
  model.points.clear();
  for (auto& [id, image] : model.images) {
    for (Observation2D& obs : image.observations) obs.point3d_id = kNoPoint3D;
  }
  return model;
}

}  // namespace

TEST_CASE("build_tracks: transitive closure over pairs") {
  // A0-B0 and B0-C0 collapse into one track.
  const MatchGraph graph = graph_from({{1, 2, {{0, 0}}}, {2, 3, {{0, 0}}}});
  const auto tracks = build_tracks(graph);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].elements.size() == 3);
}

TEST_CASE("build_tracks: same-image conflict drops the later element") {
  const MatchGraph graph = graph_from({{1, 2, {{0, 0}, {1, 0}}}});
  const auto tracks = build_tracks(graph);
  REQUIRE(tracks.size() == 1);
  REQUIRE(tracks[0].elements.size() == 2);
  CHECK(tracks[0].elements[0].image_id == 1);
  CHECK(tracks[0].elements[0].obs_index == 0);
  CHECK(tracks[0].elements[1].image_id == 2);
}

TEST_CASE("build_tracks: empty graph") {
  CHECK(build_tracks(MatchGraph{}).empty());
}

TEST_CASE("triangulate_tracks: noiseless scene accepts every track") {
  const SynthScene scene = small_scene(17);
  SparseModel model = unlinked_model(scene);
  std::vector<Track> tracks = build_tracks(scene.true_matches);
  const TriangulationThresholds th;
  const auto stats = triangulate_tracks(model, tracks, th);
  CHECK(stats.accepted == static_cast<int>(tracks.size()));
  CHECK(stats.rejected == 0);
  validate_model(model);

  // Every accepted point lands on its generating ground-truth position.
  for (const auto& [id, point] : model.points) {
    double best = 1e9;
    for (const auto& [gt_id, gt_point] : scene.gt_model.points) {
      best = std::min(best, (point.xyz - gt_point.xyz).norm());
    }
    CHECK(best < 1e-8);
  }
}

TEST_CASE("triangulate_tracks: coincident cameras reject the track") {
  SparseModel model;
  CameraRecord cam;
  cam.camera_id = 1;
  cam.model = CameraModelKind::kSimplePinhole;
  cam.width = cam.height = 100;
  cam.params = {50.0, 50.0, 50.0};
  model.cameras.emplace(1, cam);
  for (int i = 1; i <= 2; ++i) {
    ImageRecord image;
    image.image_id = i;
    image.camera_id = 1;
    image.name = "img" + std::to_string(i);
    image.observations = {{40.0, 60.0, kNoPoint3D}};
    model.images.emplace(i, image);
  }
  std::vector<Track> tracks(1);
  tracks[0].elements = {{1, 0}, {2, 0}};
  const auto stats = triangulate_tracks(model, tracks, TriangulationThresholds{});
  CHECK(stats.accepted == 0);
  CHECK(tracks[0].status == TrackStatus::kRejected);
  CHECK(model.points.empty());
}

TEST_CASE("triangulate_tracks: corrupted observation is dropped, point kept") {
  const SynthScene scene = small_scene(23);
  SparseModel model = unlinked_model(scene);
  std::vector<Track> tracks = build_tracks(scene.true_matches);

  // Corrupt one observation of the first track by 100 px.
  REQUIRE(!tracks.empty());
  Track& victim = tracks.front();
  REQUIRE(victim.elements.size() >= 4);
  const TrackElement el = victim.elements[1];
  model.images.at(el.image_id).observations[el.obs_index].x += 100.0;

  const TriangulationThresholds th;
  std::vector<Track> single{victim};
  const auto stats = triangulate_tracks(model, single, th);
  CHECK(stats.accepted == 1);
  const Point3DRecord& point = model.points.begin()->second;
  CHECK(point.track.size() == victim.elements.size() - 1);
  for (const TrackElement& kept : point.track) {
    CHECK(!(kept.image_id == el.image_id && kept.obs_index == el.obs_index));
  }
}

TEST_CASE("merge_points: artificially split track is reunited") {
  const SynthScene scene = small_scene(31);
  SparseModel model = scene.gt_model;

  // Split the first point into two halves with separate ids.
  const point3d_id_t victim_id = model.points.begin()->first;
  Point3DRecord victim = model.points.at(victim_id);
  REQUIRE(victim.track.size() >= 4);
  const size_t half = victim.track.size() / 2;
  Point3DRecord first = victim, second = victim;
  first.point3d_id = victim_id;
  first.track.assign(victim.track.begin(), victim.track.begin() + half);
  second.point3d_id = model.points.rbegin()->first + 1;
  second.track.assign(victim.track.begin() + half, victim.track.end());
  model.points.erase(victim_id);
  model.points.emplace(first.point3d_id, first);
  model.points.emplace(second.point3d_id, second);
  for (const TrackElement& el : second.track) {
    model.images.at(el.image_id).observations[el.obs_index].point3d_id =
        second.point3d_id;
  }
  validate_model(model);
  const size_t before = model.points.size();

  const int merged = merge_points(model, scene.true_matches, {});
  CHECK(merged == 1);
  CHECK(model.points.size() == before - 1);
  validate_model(model);

  // Idempotent: nothing left to merge.
  CHECK(merge_points(model, scene.true_matches, {}) == 0);
}

TEST_CASE("merge_points: no cross links leaves the model unchanged") {
  const SynthScene scene = small_scene(37);
  SparseModel model = scene.gt_model;
  const size_t points_before = model.points.size();
  CHECK(merge_points(model, scene.true_matches, {}) == 0);
  CHECK(model.points.size() == points_before);
}

TEST_CASE("merge_points: union failing the threshold is not merged") {
  const SynthScene scene = small_scene(41);
  SparseModel model = scene.gt_model;

  // Split one track, then corrupt every observation of the second half by
  // 20 px so the union cannot re-triangulate cleanly.
  const point3d_id_t victim_id = model.points.begin()->first;
  Point3DRecord victim = model.points.at(victim_id);
  REQUIRE(victim.track.size() >= 6);
  const size_t half = victim.track.size() / 2;
  Point3DRecord first = victim, second = victim;
  first.track.assign(victim.track.begin(), victim.track.begin() + half);
  second.point3d_id = model.points.rbegin()->first + 1;
  second.track.assign(victim.track.begin() + half, victim.track.end());
  model.points.erase(victim_id);
  for (const TrackElement& el : second.track) {
    Observation2D& obs = model.images.at(el.image_id).observations[el.obs_index];
    obs.x += 20.0;
    obs.point3d_id = second.point3d_id;
  }
  // Re-triangulate the corrupted half so it is self-consistent on its own.
  {
    std::vector<Track> tracks(1);
    tracks[0].elements = second.track;
    for (const TrackElement& el : second.track) {
      model.images.at(el.image_id).observations[el.obs_index].point3d_id =
          kNoPoint3D;
    }
    TriangulationThresholds loose;
    loose.max_reproj_px = 50.0;
    loose.min_tri_angle_deg = 0.1;
    SparseModel scratch = model;
    triangulate_tracks(scratch, tracks, loose);
    REQUIRE(scratch.points.size() == model.points.size() + 1);
    const Point3DRecord moved = scratch.points.rbegin()->second;
    model = scratch;
  }
  model.points.emplace(first.point3d_id, first);
  for (const TrackElement& el : first.track) {
    model.images.at(el.image_id).observations[el.obs_index].point3d_id =
        first.point3d_id;
  }
  validate_model(model);

  const size_t before = model.points.size();
  const int merged = merge_points(model, scene.true_matches, {});
  // The corrupted half must not fuse with the clean half: both survive.
  CHECK(merged == 0);
  CHECK(model.points.size() == before);
  CHECK(model.points.count(first.point3d_id) == 1);
}

TEST_CASE("complete_points: withheld observation is restored") {
  const SynthScene scene = small_scene(43);
  SparseModel model = scene.gt_model;

  // Withhold one observation from the first sufficiently long track.
  point3d_id_t victim_id = 0;
  for (const auto& [id, point] : model.points) {
    if (point.track.size() >= 4) {
      victim_id = id;
      break;
    }
  }
  REQUIRE(victim_id != 0);
  Point3DRecord& victim = model.points.at(victim_id);
  const TrackElement withheld = victim.track.back();
  victim.track.pop_back();
  model.images.at(withheld.image_id).observations[withheld.obs_index].point3d_id =
      kNoPoint3D;
  validate_model(model);

  const int added = complete_points(model, scene.true_matches, {});
  CHECK(added == 1);
  const Point3DRecord& restored = model.points.at(victim_id);
  const bool has_back =
      std::any_of(restored.track.begin(), restored.track.end(),
                  [&](const TrackElement& el) {
                    return el.image_id == withheld.image_id &&
                           el.obs_index == withheld.obs_index;
                  });
  CHECK(has_back);
  validate_model(model);

  CHECK(complete_points(model, scene.true_matches, {}) == 0);  // idempotent
}

TEST_CASE("complete_points: fully complete model gains nothing") {
  const SynthScene scene = small_scene(47);
  SparseModel model = scene.gt_model;
  CHECK(complete_points(model, scene.true_matches, {}) == 0);
}

TEST_CASE("complete_points: far-off candidate not added") {
  const SynthScene scene = small_scene(53);
  SparseModel model = scene.gt_model;
  point3d_id_t victim_id = 0;
  for (const auto& [id, point] : model.points) {
    if (point.track.size() >= 4) {
      victim_id = id;
      break;
    }
  }
  REQUIRE(victim_id != 0);
  Point3DRecord& victim = model.points.at(victim_id);
  const TrackElement withheld = victim.track.back();
  victim.track.pop_back();
  Observation2D& obs =
      model.images.at(withheld.image_id).observations[withheld.obs_index];
  obs.point3d_id = kNoPoint3D;
  obs.x += 30.0;  // 30 px off: beyond the 4 px gate
  const int added = complete_points(model, scene.true_matches, {});
  CHECK(added == 0);
}

TEST_CASE("filter_points: clean model is untouched") {
  const SynthScene scene = small_scene(59);
  SparseModel model = scene.gt_model;
  const size_t before = model.points.size();
  CHECK(filter_points(model, {}) == 0);
  CHECK(model.points.size() == before);
}

TEST_CASE("filter_points: corrupt observations sink a short track") {
  const SynthScene scene = small_scene(61);
  SparseModel model = scene.gt_model;

  // Build a 3-element point, then corrupt 2 of its observations.
  point3d_id_t victim_id = 0;
  for (const auto& [id, point] : model.points) {
    if (point.track.size() >= 3) {
      victim_id = id;
      break;
    }
  }
  REQUIRE(victim_id != 0);
  Point3DRecord& victim = model.points.at(victim_id);
  while (victim.track.size() > 3) {
    const TrackElement el = victim.track.back();
    victim.track.pop_back();
    model.images.at(el.image_id).observations[el.obs_index].point3d_id =
        kNoPoint3D;
  }
  for (int i = 0; i < 2; ++i) {
    const TrackElement& el = victim.track[i];
    model.images.at(el.image_id).observations[el.obs_index].x += 25.0;
  }
  const size_t before = model.points.size();
  const int removed = filter_points(model, {});
  CHECK(removed >= 1);
  CHECK(model.points.size() < before);
  CHECK(model.points.find(victim_id) == model.points.end());
  validate_model(model);
}

TEST_CASE("filter_points: zero threshold removes everything") {
  const SynthScene scene = small_scene(67, /*pixel_noise=*/0.3);
  SparseModel model = scene.gt_model;
  TriangulationThresholds th;
  th.max_reproj_px = 0.0;
  const int removed = filter_points(model, th);
  CHECK(removed == static_cast<int>(scene.gt_model.points.size()));
  CHECK(model.points.empty());
  for (const auto& [id, image] : model.images) {
    for (const Observation2D& obs : image.observations) {
      CHECK(obs.point3d_id == kNoPoint3D);
    }
  }
}

TEST_CASE("triangulate_tracks: serial and parallel agree exactly") {
  const SynthScene scene = small_scene(71, /*pixel_noise=*/0.5);
  std::vector<Track> tracks = build_tracks(scene.true_matches);

  SparseModel serial_model = unlinked_model(scene);
  {
    ScopedThreadLimit limit(1);
    std::vector<Track> work = tracks;
    triangulate_tracks(serial_model, work, {});
  }
  SparseModel parallel_model = unlinked_model(scene);
  {
    ScopedThreadLimit limit(4);
    std::vector<Track> work = tracks;
    triangulate_tracks(parallel_model, work, {});
  }
  REQUIRE(serial_model.points.size() == parallel_model.points.size());
  auto it_a = serial_model.points.begin();
  auto it_b = parallel_model.points.begin();
  for (; it_a != serial_model.points.end(); ++it_a, ++it_b) {
    CHECK(it_a->first == it_b->first);
    CHECK((it_a->second.xyz - it_b->second.xyz).norm() == 0.0);
    CHECK(it_a->second.track.size() == it_b->second.track.size());
  }
}

TEST_CASE("monotonicity: complete never shortens tracks, filter never raises error") {
  const SynthScene scene = small_scene(73, /*pixel_noise=*/0.4);
  SparseModel model = scene.gt_model;

  std::map<point3d_id_t, size_t> before;
  for (const auto& [id, point] : model.points) before[id] = point.track.size();
  complete_points(model, scene.true_matches, {});
  for (const auto& [id, point] : model.points) {
    CHECK(point.track.size() >= before.at(id));
  }

  const double error_before = [&] {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& [id, point] : model.points) {
      sum += point.error * static_cast<double>(point.track.size());
      n += point.track.size();
    }
    return sum / static_cast<double>(n);
  }();
  filter_points(model, {});
  const double error_after = [&] {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& [id, point] : model.points) {
      sum += point.error * static_cast<double>(point.track.size());
      n += point.track.size();
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
  }();
  CHECK(error_after <= error_before + 1e-12);
}
