#include "bodyfit/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "bodyfit/error.hpp"
#include "bodyfit/rng.hpp"

namespace bodyfit {

PoseParams Actor::pose_at(double t) const {
  if (poses.empty() || poses.size() != timestamps.size())
    throw ValidationError("actor '" + name + "': empty or inconsistent trajectory");
  if (t < timestamps.front() - 1e-9 || t > timestamps.back() + 1e-9)
    throw ValidationError("actor '" + name + "': time " + std::to_string(t) +
                          " outside trajectory span");
  if (poses.size() == 1) return poses[0];
  const auto it = std::upper_bound(timestamps.begin(), timestamps.end(), t);
  const int hi = std::clamp(static_cast<int>(it - timestamps.begin()), 1,
                            static_cast<int>(poses.size()) - 1);
  const int lo = hi - 1;
  const double span = timestamps[hi] - timestamps[lo];
  const double w = span > 0 ? std::clamp((t - timestamps[lo]) / span, 0.0, 1.0) : 0.0;
  if (w == 0.0) return poses[lo];
  if (w == 1.0) return poses[hi];
  PoseParams pose;
  pose.joint_rotations.resize(poses[lo].joint_rotations.size());
  for (size_t k = 0; k < pose.joint_rotations.size(); ++k)
    pose.joint_rotations[k] =
        axis_angle_from_quat(slerp(quat_from_axis_angle(poses[lo].joint_rotations[k]),
                                   quat_from_axis_angle(poses[hi].joint_rotations[k]), w));
  pose.root_offset = poses[lo].root_offset * (1.0 - w) + poses[hi].root_offset * w;
  return pose;
}

SweepResult simulate_sweep(const Scene& scene, double t) {
  const auto sweep = std::find_if(scene.sweeps.begin(), scene.sweeps.end(),
                                  [&](const SweepPose& s) { return std::abs(s.time - t) < 1e-9; });
  if (sweep == scene.sweeps.end())
    throw ValidationError("simulate_sweep: no sweep registered at t=" + std::to_string(t));
  SensorModel sensor{sweep->origin, sweep->orientation, scene.azimuth_res, scene.elevation_res};

  SweepResult result;
  result.time = t;
  result.per_actor.resize(scene.actors.size());
  if (scene.actors.empty()) return result;

  // Pose every actor, collect the union ray window over actor boxes.
  std::vector<PosedMesh> meshes;
  std::vector<MeshBvh> bvhs;
  meshes.reserve(scene.actors.size());
  std::vector<std::pair<int, int>> cells;
  RaySet window_proto;
  for (const auto& actor : scene.actors) {
    meshes.push_back(pose_mesh(*actor.tmpl, actor.pose_at(t), actor.shape));
    LidarScan stub;
    stub.bbox = bounding_box(meshes.back().vertices);
    stub.sensor = sensor;
    const RaySet w = ray_window(stub, sensor);
    cells.insert(cells.end(), w.cells.begin(), w.cells.end());
    window_proto = w;  // shared sensor/lattice parameters
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  window_proto.cells = std::move(cells);

  for (const auto& mesh : meshes) bvhs.emplace_back(mesh);
  std::vector<MeshBvh> obstacle_bvhs;
  for (const auto& obs : scene.obstacles)
    obstacle_bvhs.emplace_back(std::span<const Vec3d>(obs.vertices),
                               std::span<const std::array<int, 3>>(obs.faces));

  for (const auto& [i, j] : window_proto.cells) {
    const Ray ray{sensor.origin, window_proto.cell_direction(i, j)};
    int best_actor = -1;
    std::optional<TriangleHit> best;
    for (size_t a = 0; a < bvhs.size(); ++a) {
      const auto hit = bvhs[a].intersect(ray);
      if (hit && (!best || hit->distance < best->distance)) {
        best = hit;
        best_actor = static_cast<int>(a);
      }
    }
    for (const auto& ob : obstacle_bvhs) {
      const auto hit = ob.intersect(ray);
      if (hit && (!best || hit->distance < best->distance)) {
        best = hit;
        best_actor = -1;  // obstacle wins: ray is blocked
      }
    }
    if (best && best_actor >= 0) {
      result.points.push_back(best->point);
      result.actor_labels.push_back(best_actor);
      result.hits.push_back(*best);
      result.per_actor[best_actor].push_back(best->point);
    }
  }
  return result;
}

namespace {

Camera make_synth_camera(const Vec3d& position) {
  // Looks along world +x; x_cam = -y, y_cam = -z, z_cam = +x.
  const double f = 900.0, cx = 640.0, cy = 480.0;
  const double r[9] = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  Camera cam;
  cam.width = 1280;
  cam.height = 960;
  const double tx = -(r[0] * position.x + r[1] * position.y + r[2] * position.z);
  const double ty = -(r[3] * position.x + r[4] * position.y + r[5] * position.z);
  const double tz = -(r[6] * position.x + r[7] * position.y + r[8] * position.z);
  // K [R|t]
  cam.p = {f * r[0] + cx * r[6], f * r[1] + cx * r[7], f * r[2] + cx * r[8], f * tx + cx * tz,
           f * r[3] + cy * r[6], f * r[4] + cy * r[7], f * r[5] + cy * r[8], f * ty + cy * tz,
           r[6],                 r[7],                 r[8],                 tz};
  return cam;
}

}  // namespace

SynthScene synth_ground_truth(const SkeletonTemplate& tmpl, const GmmPrior& gmm,
                              const SynthConfig& config) {
  if (config.frames < 1) throw ValidationError("synth: need at least one frame");
  if (gmm.dim != pose_prior_dim(tmpl))
    throw ValidationError("synth: gmm dimension does not match the template");
  Rng rng(config.seed);

  SynthScene scene;
  scene.sensor.origin = Vec3d(0, 0, 1.0);
  scene.sensor.azimuth_res = config.azimuth_res;
  scene.sensor.elevation_res = config.elevation_res;

  // Shape: per-class scales drawn in [lo, hi], constrained so cumulative
  // chain products stay within the (tighter) anatomical band: overall body
  // proportions vary much less than individual bones.
  scene.true_shape.bone_scales.assign(tmpl.num_scale_classes, 0.0);
  {
    const double cum_lo = 1.0 - 0.5 * (1.0 - config.scale_lo);
    const double cum_hi = 1.0 + 0.5 * (config.scale_hi - 1.0);
    std::vector<char> drawn(tmpl.num_scale_classes, 0);
    std::vector<double> cumulative(tmpl.num_joints(), 1.0);
    for (int k : tmpl.topo_order) {
      const int parent = tmpl.parents[k];
      if (parent < 0) continue;
      const int cls = tmpl.symmetry_class[k];
      if (!drawn[cls]) {
        const double lo = std::max(config.scale_lo, cum_lo / cumulative[parent]);
        const double hi = std::min(config.scale_hi, cum_hi / cumulative[parent]);
        scene.true_shape.bone_scales[cls] = rng.uniform(lo, hi);
        drawn[cls] = 1;
      }
      cumulative[k] = cumulative[parent] * scene.true_shape.bone_scales[cls];
    }
  }
  const Vec3d k1(rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0));
  const Vec3d k2(rng.uniform(4.0, 7.0), rng.uniform(4.0, 7.0), rng.uniform(4.0, 7.0));
  const double p1 = rng.uniform(0.0, 2.0 * M_PI), p2 = rng.uniform(0.0, 2.0 * M_PI);
  scene.true_shape.displacements.resize(tmpl.num_vertices());
  for (int i = 0; i < tmpl.num_vertices(); ++i) {
    const Vec3d& v = tmpl.vertices[i];
    scene.true_shape.displacements[i] =
        config.displacement_amplitude *
        (0.6 * std::sin(k1.dot(v) + p1) + 0.4 * std::sin(k2.dot(v) + p2));
  }

  // Pose trajectory oscillating between the two heaviest mixture means.
  std::vector<int> order(gmm.components());
  for (size_t r = 0; r < order.size(); ++r) order[r] = static_cast<int>(r);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return gmm.weights[a] > gmm.weights[b]; });
  const std::vector<double>& mean_a = gmm.means[order[0]];
  const std::vector<double>& mean_b = gmm.means[order[std::min<size_t>(1, order.size() - 1)]];

  const Vec3d travel(std::cos(config.yaw), std::sin(config.yaw), 0.0);
  const double duration = config.frame_dt * (config.frames - 1);
  const Vec3d start = Vec3d(config.distance, 0, 0.95) - travel * (0.5 * config.walk_speed *
                                                                  duration);

  const Camera camera = make_synth_camera(Vec3d(0, 0.05, 1.05));

  for (int t = 0; t < config.frames; ++t) {
    const double phase = 0.5 - 0.5 * std::cos(2.0 * M_PI * t / std::max(1, config.frames - 1));
    PoseParams pose;
    pose.joint_rotations.assign(tmpl.num_joints(), Vec3d(0, 0, 0));
    int cursor = 0;
    for (int k = 0; k < tmpl.num_joints(); ++k) {
      if (tmpl.parents[k] < 0) continue;
      for (int a = 0; a < 3; ++a) {
        const double base = (1.0 - phase) * mean_a[cursor] + phase * mean_b[cursor];
        pose.joint_rotations[k][a] = base + rng.normal(0.0, config.pose_jitter);
        ++cursor;
      }
    }
    pose.joint_rotations[tmpl.root()] = Vec3d(0, 0, config.yaw);
    pose.root_offset = start + travel * (config.walk_speed * config.frame_dt * t);
    scene.true_poses.push_back(pose);
  }

  // Optional occluder slabs between the sensor and the body.
  std::vector<ObstacleMesh> walls;
  for (int w = 0; w < config.obstacle_walls; ++w) {
    ObstacleMesh wall;
    const double wx = config.distance * 0.5;
    const double y0 = -0.8 + 0.5 * w, y1 = y0 + 0.35;
    const double z0 = 0.2, z1 = 2.2;
    wall.vertices = {{wx, y0, z0}, {wx, y1, z0}, {wx, y1, z1}, {wx, y0, z1}};
    wall.faces = {{0, 1, 2}, {0, 2, 3}};
    walls.push_back(std::move(wall));
  }

  for (int t = 0; t < config.frames; ++t) {
    FrameObservation obs;
    obs.timestamp = t * config.frame_dt;
    obs.camera = camera;

    const PosedMesh mesh = pose_mesh(tmpl, scene.true_poses[t], scene.true_shape);
    LidarScan scan;
    scan.sensor = scene.sensor;
    scan.bbox = bounding_box(mesh.vertices);
    const RaySet window = ray_window(scan, scene.sensor);

    const MeshBvh body(mesh);
    std::vector<MeshBvh> wall_bvhs;
    for (const auto& wall : walls)
      wall_bvhs.emplace_back(std::span<const Vec3d>(wall.vertices),
                             std::span<const std::array<int, 3>>(wall.faces));
    for (const auto& [i, j] : window.cells) {
      const Ray ray{scene.sensor.origin, window.cell_direction(i, j)};
      auto body_hit = body.intersect(ray);
      std::optional<TriangleHit> wall_hit;
      for (const auto& wb : wall_bvhs) {
        const auto h = wb.intersect(ray);
        if (h && (!wall_hit || h->distance < wall_hit->distance)) wall_hit = h;
      }
      if (wall_hit && (!body_hit || wall_hit->distance < body_hit->distance))
        scan.obstacle_points.push_back(wall_hit->point);
      else if (body_hit)
        scan.target_points.push_back(body_hit->point);
    }
    obs.scan = std::move(scan);

    const auto jt = joint_transforms(tmpl, scene.true_poses[t], scene.true_shape);
    for (int k = 0; k < tmpl.num_joints(); ++k) {
      const std::string& name = tmpl.joint_names[k];
      const auto px = try_project(camera, jt.posed_joints[k]);
      if (!px) continue;
      Joints2D::Detection det;
      det.name = name;
      det.u = px->x + (config.pixel_noise > 0 ? rng.normal(0.0, config.pixel_noise) : 0.0);
      det.v = px->y + (config.pixel_noise > 0 ? rng.normal(0.0, config.pixel_noise) : 0.0);
      det.confidence = config.pixel_noise > 0 ? rng.uniform(0.75, 1.0) : 1.0;
      obs.joints2d.detections.push_back(det);
    }
    obs.joints2d.bind(tmpl);
    scene.observations.push_back(std::move(obs));
  }
  return scene;
}

}  // namespace bodyfit
