#pragma once

#include <string>
#include <vector>

#include "bodyfit/fitter.hpp"
#include "bodyfit/raycaster.hpp"
#include "bodyfit/retarget.hpp"

namespace bodyfit {

// A pedestrian placed in the scene: a pose track plus its shape.
struct Actor {
  std::string name;
  const SkeletonTemplate* tmpl = nullptr;
  ShapeParams shape;
  std::vector<PoseParams> poses;
  std::vector<double> timestamps;

  // Pose at an arbitrary time inside the track (slerp between keyframes).
  PoseParams pose_at(double t) const;
};

struct ObstacleMesh {
  std::vector<Vec3d> vertices;
  std::vector<std::array<int, 3>> faces;
};

struct SweepPose {
  double time = 0;
  Vec3d origin{};
  Mat3d orientation = Mat3d::identity();
};

struct Scene {
  std::vector<Actor> actors;
  std::vector<ObstacleMesh> obstacles;
  double azimuth_res = 0, elevation_res = 0;
  std::vector<SweepPose> sweeps;  // strictly increasing times
};

struct SweepResult {
  double time = 0;
  std::vector<Vec3d> points;       // merged scan
  std::vector<int> actor_labels;   // actor index per point
  std::vector<TriangleHit> hits;   // provenance per point
  std::vector<std::vector<Vec3d>> per_actor;  // points per actor
};

// Global closest hit over every actor and obstacle; actors occlude one
// another and obstacles occlude actors.
SweepResult simulate_sweep(const Scene& scene, double t);

// Declarative scenario: resolved against an asset bank by the CLI layer.
struct ScenarioScript {
  struct ActorSpec {
    std::string asset_id;
    QueryTrajectory query;
  };
  std::vector<ActorSpec> actors;
  std::vector<std::string> obstacle_files;
  double azimuth_res = 0, elevation_res = 0;
  std::vector<SweepPose> sweeps;
};

// Synthetic ground-truth scenes for recovery tests.
struct SynthConfig {
  uint64_t seed = 0;
  int frames = 10;
  double frame_dt = 0.1;
  double yaw = 0.0;              // facing, radians about +z
  double distance = 9.0;         // body distance from the sensor, meters
  double walk_speed = 1.1;       // m/s along the facing direction
  double azimuth_res = 0.0035;   // ~0.2 degrees
  double elevation_res = 0.0035;
  double pixel_noise = 0.0;      // std of 2D joint noise
  double displacement_amplitude = 0.003;  // meters
  double scale_lo = 0.8, scale_hi = 1.25;
  double pose_jitter = 0.04;     // radians around the anchor trajectory
  int obstacle_walls = 0;        // optional occluder slabs between sensor and body
};

struct SynthScene {
  std::vector<FrameObservation> observations;
  std::vector<PoseParams> true_poses;
  ShapeParams true_shape;
  SensorModel sensor;
};

SynthScene synth_ground_truth(const SkeletonTemplate& tmpl, const GmmPrior& gmm,
                              const SynthConfig& config);

}  // namespace bodyfit
