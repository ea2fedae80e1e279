#pragma once

#include <span>
#include <string>
#include <vector>

#include "posebench/matching.hpp"
#include "posebench/types.hpp"

namespace posebench {

enum class TrackStatus { kUntriangulated, kTriangulated, kRejected };

struct Track {
  std::vector<TrackElement> elements;  // sorted by (image_id, obs_index)
  TrackStatus status = TrackStatus::kUntriangulated;
  point3d_id_t point3d_id = kNoPoint3D;
  std::string reject_reason;
};

struct TriangulationThresholds {
  double max_reproj_px = 4.0;
  double min_tri_angle_deg = 1.5;
  int min_track_len = 2;
};

// Connected components of the keypoint correspondence graph (union-find
// over (image_id, keypoint) nodes). A union that would put two keypoints
// of one image into the same component is refused, dropping the
// later-joined element; deterministic given pair/match order.
std::vector<Track> build_tracks(const MatchGraph& graph);

struct TriangulateTracksStats {
  int accepted = 0;
  int rejected = 0;
};

// Triangulates each track with iterative per-element outlier dropping
// (outlier: reprojection > max_reproj_px). Accepted points get fresh
// ascending ids and back-links written into the image observations.
// Updates each track's status in place. Parallel per track.
TriangulateTracksStats triangulate_tracks(SparseModel& model,
                                          std::span<Track> tracks,
                                          const TriangulationThresholds& th);

// Fuses points connected by verified matches when the united track
// re-triangulates within thresholds. Iterates to fixpoint; returns the
// number of merge events.
int merge_points(SparseModel& model, const MatchGraph& graph,
                 const TriangulationThresholds& th);

// Attaches match-linked keypoints missing from a point's track when they
// reproject within max_reproj_px. Iterates to fixpoint; returns the
// number of added observations.
int complete_points(SparseModel& model, const MatchGraph& graph,
                    const TriangulationThresholds& th);

// Drops observations above the reprojection threshold, then removes
// points that fall below min_track_len or the minimum triangulation
// angle. Returns the number of removed points.
int filter_points(SparseModel& model, const TriangulationThresholds& th);

}  // namespace posebench
