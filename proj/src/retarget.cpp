#include "bodyfit/retarget.hpp"

#include <algorithm>
#include <cmath>

#include "bodyfit/error.hpp"

namespace bodyfit {

Quat quat_from_axis_angle(const Vec3d& aa) {
  const double theta = aa.norm();
  if (theta < 1e-12) return Quat{1.0, 0.5 * aa.x, 0.5 * aa.y, 0.5 * aa.z}.normalized();
  const double half = 0.5 * theta;
  const double s = std::sin(half) / theta;
  return {std::cos(half), aa.x * s, aa.y * s, aa.z * s};
}

Vec3d axis_angle_from_quat(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w < 0.0) q = -q;  // angle in [0, pi]
  const double vnorm = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  if (vnorm < 1e-12) return {2.0 * q.x, 2.0 * q.y, 2.0 * q.z};
  const double theta = 2.0 * std::atan2(vnorm, q.w);
  return Vec3d(q.x, q.y, q.z) * (theta / vnorm);
}

Quat compose(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

double rotation_angle_between(const Vec3d& aa0, const Vec3d& aa1) {
  const Quat q0 = quat_from_axis_angle(aa0);
  const Quat q1 = quat_from_axis_angle(aa1);
  const double d = std::clamp(std::abs(q0.dot(q1)), 0.0, 1.0);
  return 2.0 * std::acos(d);
}

Quat slerp(const Quat& q0_in, const Quat& q1_in, double t) {
  const Quat q0 = q0_in.normalized();
  Quat q1 = q1_in.normalized();
  double d = q0.dot(q1);
  if (d < 0.0) {  // shortest arc
    q1 = -q1;
    d = -d;
  }
  const double angle = std::acos(std::clamp(d, -1.0, 1.0));
  double w0, w1;
  if (angle < 1e-6) {  // nearly parallel: normalized lerp
    w0 = 1.0 - t;
    w1 = t;
  } else {
    const double s = std::sin(angle);
    w0 = std::sin((1.0 - t) * angle) / s;
    w1 = std::sin(t * angle) / s;
  }
  return Quat{w0 * q0.w + w1 * q1.w, w0 * q0.x + w1 * q1.x, w0 * q0.y + w1 * q1.y,
              w0 * q0.z + w1 * q1.z}
      .normalized();
}

namespace {

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// Forward-difference headings, held through stationary stretches.
std::vector<double> track_headings(const std::vector<Vec2d>& pts) {
  const size_t n = pts.size();
  std::vector<double> headings(n, 0.0);
  double last = 0.0;
  bool seen_motion = false;
  for (size_t i = 0; i < n; ++i) {
    if (i + 1 < n) {
      const Vec2d d = pts[i + 1] - pts[i];
      if (d.norm() > 1e-12) {
        last = std::atan2(d.y, d.x);
        seen_motion = true;
      }
    }
    headings[i] = last;
  }
  if (!seen_motion) std::fill(headings.begin(), headings.end(), 0.0);
  return headings;
}

std::vector<double> track_speeds(const std::vector<Vec2d>& pts,
                                 const std::vector<double>& times) {
  const size_t n = pts.size();
  std::vector<double> speed(n, 0.0);
  for (size_t i = 0; i + 1 < n; ++i) {
    const double dt = times[i + 1] - times[i];
    speed[i] = (pts[i + 1] - pts[i]).norm() / dt;
  }
  if (n > 1) speed[n - 1] = speed[n - 2];
  return speed;
}

}  // namespace

void AssetSequence::finalize() {
  if (poses.empty() || poses.size() != timestamps.size())
    throw ValidationError("asset: pose and timestamp counts disagree or are empty");
  for (size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1]))
      throw ValidationError("asset: timestamps must be strictly increasing");
  bev.clear();
  for (const auto& p : poses) bev.push_back({p.root_offset.x, p.root_offset.y});
  speed = track_speeds(bev, timestamps);
}

void QueryTrajectory::finalize() {
  if (waypoints.empty() || waypoints.size() != timestamps.size())
    throw ValidationError("query: waypoint and timestamp counts disagree or are empty");
  for (size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1]))
      throw ValidationError("query: timestamps must be strictly increasing");
  headings = track_headings(waypoints);
}

std::vector<double> QueryTrajectory::speeds() const { return track_speeds(waypoints, timestamps); }

double pose_distance(const std::vector<int>& parents, const PoseParams& a, const PoseParams& b) {
  if (a.joint_rotations.size() != b.joint_rotations.size() ||
      a.joint_rotations.size() != parents.size())
    throw ValidationError("pose_distance: joint counts disagree");
  double sum = 0.0;
  int count = 0;
  for (size_t k = 0; k < parents.size(); ++k) {
    if (parents[k] < 0) continue;  // heading-independent similarity
    sum += rotation_angle_between(a.joint_rotations[k], b.joint_rotations[k]);
    ++count;
  }
  return count ? sum / count : 0.0;
}

AssetSequence clip_cycle(const AssetSequence& seq, double tau_pose, double min_len) {
  if (seq.poses.empty()) throw ValidationError("clip_cycle: empty sequence");
  if (!(tau_pose > 0.0) || !(min_len > 0.0))
    throw ValidationError("clip_cycle: thresholds must be positive");
  const double total = seq.timestamps.back() - seq.timestamps.front();
  if (total < min_len)
    throw ValidationError("clip_cycle: sequence shorter than the minimum cycle length");

  std::vector<int> parents(seq.poses[0].joint_rotations.size(), 0);
  parents[seq.root_joint] = -1;  // only the root flag matters for the distance

  const int n = seq.frames();
  for (int t0 = 0; t0 < n; ++t0) {
    for (int t1 = t0 + 1; t1 < n; ++t1) {
      if (seq.timestamps[t1] - seq.timestamps[t0] < min_len) continue;
      if (pose_distance(parents, seq.poses[t0], seq.poses[t1]) < tau_pose) {
        AssetSequence out;
        out.id = seq.id;
        out.root_joint = seq.root_joint;
        out.shape = seq.shape;
        out.poses.assign(seq.poses.begin() + t0, seq.poses.begin() + t1 + 1);
        out.timestamps.assign(seq.timestamps.begin() + t0, seq.timestamps.begin() + t1 + 1);
        out.cyclic = true;
        out.finalize();
        return out;
      }
    }
  }
  throw ValidationError("clip_cycle: no window of length >= " + std::to_string(min_len) +
                        " closes within tau; asset rejected");
}

namespace {

// Asset speed at a relative time, cycling and interpolating between frames.
double asset_speed_at(const AssetSequence& asset, double rel_time) {
  const double duration = asset.timestamps.back() - asset.timestamps.front();
  if (duration <= 0.0 || asset.frames() == 1) return asset.speed[0];
  double tau = std::fmod(rel_time, duration);
  if (tau < 0.0) tau += duration;
  const double t = asset.timestamps.front() + tau;
  const auto it = std::upper_bound(asset.timestamps.begin(), asset.timestamps.end(), t);
  const int hi = std::clamp(static_cast<int>(it - asset.timestamps.begin()), 1,
                            asset.frames() - 1);
  const int lo = hi - 1;
  const double w =
      (t - asset.timestamps[lo]) / (asset.timestamps[hi] - asset.timestamps[lo]);
  return (1.0 - w) * asset.speed[lo] + w * asset.speed[hi];
}

}  // namespace

const AssetSequence& retrieve(const std::vector<AssetSequence>& bank,
                              const QueryTrajectory& query) {
  if (bank.empty()) throw ValidationError("retrieve: empty asset bank");
  if (query.waypoints.empty()) throw ValidationError("retrieve: empty query");
  const std::vector<double> qspeed = query.speeds();

  const AssetSequence* best = nullptr;
  double best_mean = 0.0;
  for (const auto& asset : bank) {
    double sum = 0.0;
    bool ok = true;
    for (size_t i = 0; i < qspeed.size() && ok; ++i) {
      const double rel = query.timestamps[i] - query.timestamps.front();
      const double diff = std::abs(asset_speed_at(asset, rel) - qspeed[i]);
      if (diff > kSpeedBand) ok = false;
      sum += diff;
    }
    if (!ok) continue;
    const double mean = sum / qspeed.size();
    if (!best || mean < best_mean || (mean == best_mean && asset.id < best->id)) {
      best = &asset;
      best_mean = mean;
    }
  }
  if (!best)
    throw ValidationError("retrieve: no asset stays within " + std::to_string(kSpeedBand) +
                          " m/s of the query");
  return *best;
}

std::vector<PoseParams> retarget_sequence(const AssetSequence& asset,
                                          const QueryTrajectory& query,
                                          std::vector<double>* phases) {
  if (!asset.cyclic) throw ValidationError("retarget: asset is not cycle-clipped");
  if (query.waypoints.empty()) throw ValidationError("retarget: zero-length query");
  if (asset.frames() < 2) throw ValidationError("retarget: asset needs at least two frames");

  const int n = asset.frames();
  std::vector<double> arc(n, 0.0);
  for (int i = 1; i < n; ++i) arc[i] = arc[i - 1] + (asset.bev[i] - asset.bev[i - 1]).norm();
  const double cycle_len = arc.back();
  const double cycle_dur = asset.timestamps.back() - asset.timestamps.front();
  const std::vector<double> asset_headings = track_headings(asset.bev);

  // Progress coordinate: arc length when the asset moves, time otherwise.
  const bool by_arc = cycle_len > 1e-9;
  const std::vector<double>& key = by_arc ? arc : asset.timestamps;
  const double period = by_arc ? cycle_len : cycle_dur;

  std::vector<PoseParams> out;
  out.reserve(query.waypoints.size());
  double progress = 0.0;
  for (size_t i = 0; i < query.waypoints.size(); ++i) {
    if (i > 0)
      progress += by_arc ? (query.waypoints[i] - query.waypoints[i - 1]).norm()
                         : query.timestamps[i] - query.timestamps[i - 1];
    // Phase in (0, period], exact at keyframes so identity queries reproduce.
    double phase = progress;
    if (phase > 0.0) {
      const double wraps = std::ceil(phase / period) - 1.0;
      phase -= wraps * period;
    }
    if (phases) phases->push_back(phase / period);

    const double key0 = by_arc ? 0.0 : asset.timestamps.front();
    const double target = key0 + phase;
    int hi = 1;
    while (hi < n - 1 && key[hi] < target) ++hi;
    const int lo = hi - 1;
    const double span = key[hi] - key[lo];
    const double w = span > 0.0 ? std::clamp((target - key[lo]) / span, 0.0, 1.0) : 0.0;

    PoseParams pose;
    pose.joint_rotations.resize(asset.poses[lo].joint_rotations.size());
    for (size_t k = 0; k < pose.joint_rotations.size(); ++k) {
      const Quat q = slerp(quat_from_axis_angle(asset.poses[lo].joint_rotations[k]),
                           quat_from_axis_angle(asset.poses[hi].joint_rotations[k]), w);
      pose.joint_rotations[k] = axis_angle_from_quat(q);
    }
    // Root heading: swap the asset's own heading for the query's.
    const int rj = asset.root_joint;
    const double asset_heading = asset_headings[lo] +
                                 w * wrap_angle(asset_headings[hi] - asset_headings[lo]);
    const double spin = wrap_angle(query.headings[i] - asset_heading);
    const Quat root = slerp(quat_from_axis_angle(asset.poses[lo].joint_rotations[rj]),
                            quat_from_axis_angle(asset.poses[hi].joint_rotations[rj]), w);
    pose.joint_rotations[rj] =
        axis_angle_from_quat(compose(quat_from_axis_angle(Vec3d(0, 0, spin)), root));

    const double z =
        (1.0 - w) * asset.poses[lo].root_offset.z + w * asset.poses[hi].root_offset.z;
    pose.root_offset = Vec3d(query.waypoints[i].x, query.waypoints[i].y, z);
    out.push_back(std::move(pose));
  }
  return out;
}

}  // namespace bodyfit
