#include "bodyfit/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "bodyfit/error.hpp"

namespace bodyfit::io {

std::string digest_bytes(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string digest_file(const std::string& path) { return digest_bytes(read_file(path)); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
  if (!out) throw ValidationError("write failed: " + path);
}

std::string dump_document(const Json& j) { return j.dump(2) + "\n"; }

Json parse_document(const std::string& text, const std::string& expected_format,
                    const std::string& source_name) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(source_name + ": " + e.what());
  }
  if (!j.contains("format"))
    throw ValidationError(source_name + ": missing field 'format'");
  const std::string format = j["format"].get<std::string>();
  if (format != expected_format)
    throw ValidationError(source_name + ": format '" + format + "' does not match expected '" +
                          expected_format + "'");
  return j;
}

const Json& require(const Json& j, const std::string& field, const std::string& source_name) {
  if (!j.contains(field))
    throw ValidationError(source_name + ": missing field '" + field + "'");
  return j.at(field);
}

namespace {

Json vec3_list(const std::vector<Vec3d>& pts) {
  Json out = Json::array();
  for (const auto& p : pts) out.push_back(Json::array({p.x, p.y, p.z}));
  return out;
}

std::vector<Vec3d> vec3_list_from(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected an array of points");
  std::vector<Vec3d> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 3)
      throw ValidationError(where + ": point must be [x, y, z]");
    const Vec3d p(e[0].get<double>(), e[1].get<double>(), e[2].get<double>());
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ValidationError(where + ": non-finite point");
    out.push_back(p);
  }
  return out;
}

Json double_list(const std::vector<double>& xs) {
  Json out = Json::array();
  for (double x : xs) out.push_back(x);
  return out;
}

std::vector<double> double_list_from(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(e.get<double>());
  return out;
}

Json pose_to_json(const PoseParams& pose) {
  Json rot = Json::array();
  for (const auto& aa : pose.joint_rotations) {
    const Vec3d w = wrap_axis_angle(aa);  // canonical range at IO
    rot.push_back(Json::array({w.x, w.y, w.z}));
  }
  Json out;
  out["rotations"] = std::move(rot);
  out["offset"] = Json::array({pose.root_offset.x, pose.root_offset.y, pose.root_offset.z});
  return out;
}

PoseParams pose_from_json(const Json& j, const std::string& where) {
  PoseParams pose;
  const Json& rot = require(j, "rotations", where);
  for (const auto& e : rot)
    pose.joint_rotations.push_back(Vec3d(e[0].get<double>(), e[1].get<double>(),
                                         e[2].get<double>()));
  const Json& off = require(j, "offset", where);
  pose.root_offset = Vec3d(off[0].get<double>(), off[1].get<double>(), off[2].get<double>());
  return pose;
}

}  // namespace

Json template_to_json(const SkeletonTemplate& tmpl) {
  Json j;
  j["format"] = "template/1";
  j["vertices"] = vec3_list(tmpl.vertices);
  j["normals"] = vec3_list(tmpl.normals);
  Json faces = Json::array();
  for (const auto& f : tmpl.faces) faces.push_back(Json::array({f[0], f[1], f[2]}));
  j["faces"] = std::move(faces);
  Json weights = Json::array();
  for (size_t i = 0; i < tmpl.blend_weights.size(); ++i)
    for (const auto& [joint, w] : tmpl.blend_weights[i])
      weights.push_back(Json::array({static_cast<int>(i), joint, w}));
  j["weights"] = std::move(weights);
  j["joints"] = vec3_list(tmpl.joints);
  Json parents = Json::array();
  for (int p : tmpl.parents) parents.push_back(p);
  j["parents"] = std::move(parents);
  Json classes = Json::array();
  for (int c = 0; c < tmpl.num_scale_classes; ++c) {
    Json members = Json::array();
    for (int k = 0; k < tmpl.num_joints(); ++k)
      if (tmpl.symmetry_class[k] == c) members.push_back(k);
    classes.push_back(std::move(members));
  }
  j["symmetry_classes"] = std::move(classes);
  Json names = Json::array();
  for (const auto& n : tmpl.joint_names) names.push_back(n);
  j["joint_names"] = std::move(names);
  return j;
}

SkeletonTemplate template_from_json(const Json& j, const std::string& src) {
  SkeletonTemplate tmpl;
  tmpl.vertices = vec3_list_from(require(j, "vertices", src), src + ": vertices");
  tmpl.normals = vec3_list_from(require(j, "normals", src), src + ": normals");
  for (const auto& f : require(j, "faces", src)) {
    if (!f.is_array() || f.size() != 3)
      throw ValidationError(src + ": faces entries must be index triples");
    tmpl.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
  }
  tmpl.joints = vec3_list_from(require(j, "joints", src), src + ": joints");
  for (const auto& p : require(j, "parents", src)) tmpl.parents.push_back(p.get<int>());
  tmpl.blend_weights.resize(tmpl.vertices.size());
  for (const auto& w : require(j, "weights", src)) {
    if (!w.is_array() || w.size() != 3)
      throw ValidationError(src + ": weights entries must be (vertex, joint, weight) triples");
    const int v = w[0].get<int>();
    if (v < 0 || v >= static_cast<int>(tmpl.vertices.size()))
      throw ValidationError(src + ": weight references invalid vertex");
    tmpl.blend_weights[v].push_back({w[1].get<int>(), w[2].get<double>()});
  }
  const Json& classes = require(j, "symmetry_classes", src);
  tmpl.symmetry_class.assign(tmpl.joints.size(), -1);
  tmpl.num_scale_classes = static_cast<int>(classes.size());
  for (size_t c = 0; c < classes.size(); ++c)
    for (const auto& k : classes[c]) {
      const int joint = k.get<int>();
      if (joint < 0 || joint >= static_cast<int>(tmpl.joints.size()))
        throw ValidationError(src + ": symmetry_classes references invalid joint");
      tmpl.symmetry_class[joint] = static_cast<int>(c);
    }
  if (j.contains("joint_names"))
    for (const auto& n : j.at("joint_names")) tmpl.joint_names.push_back(n.get<std::string>());
  else
    for (size_t k = 0; k < tmpl.joints.size(); ++k)
      tmpl.joint_names.push_back("joint_" + std::to_string(k));
  tmpl.finalize();
  return tmpl;
}

Json scan_to_json(const LidarScan& scan) {
  Json sensor;
  sensor["origin"] =
      Json::array({scan.sensor.origin.x, scan.sensor.origin.y, scan.sensor.origin.z});
  sensor["d_phi"] = scan.sensor.azimuth_res;
  sensor["d_theta"] = scan.sensor.elevation_res;
  Json orient = Json::array();
  for (double m : scan.sensor.orientation.m) orient.push_back(m);
  sensor["orientation"] = std::move(orient);
  Json j;
  j["format"] = "scan/1";
  j["sensor"] = std::move(sensor);
  j["target_points"] = vec3_list(scan.target_points);
  j["obstacle_points"] = vec3_list(scan.obstacle_points);
  Json bbox;
  bbox["min"] = Json::array({scan.bbox.min.x, scan.bbox.min.y, scan.bbox.min.z});
  bbox["max"] = Json::array({scan.bbox.max.x, scan.bbox.max.y, scan.bbox.max.z});
  j["bbox"] = std::move(bbox);
  return j;
}

LidarScan scan_from_json(const Json& j, const std::string& src) {
  LidarScan scan;
  const Json& sensor = require(j, "sensor", src);
  const Json& origin = require(sensor, "origin", src + ": sensor");
  scan.sensor.origin =
      Vec3d(origin[0].get<double>(), origin[1].get<double>(), origin[2].get<double>());
  scan.sensor.azimuth_res = require(sensor, "d_phi", src + ": sensor").get<double>();
  scan.sensor.elevation_res = require(sensor, "d_theta", src + ": sensor").get<double>();
  if (sensor.contains("orientation")) {
    const Json& o = sensor.at("orientation");
    if (o.size() != 9) throw ValidationError(src + ": sensor orientation must have 9 entries");
    for (int i = 0; i < 9; ++i) scan.sensor.orientation.m[i] = o[i].get<double>();
  }
  scan.target_points = vec3_list_from(require(j, "target_points", src), src + ": target_points");
  scan.obstacle_points =
      vec3_list_from(require(j, "obstacle_points", src), src + ": obstacle_points");
  const Json& bbox = require(j, "bbox", src);
  const Json& lo = require(bbox, "min", src + ": bbox");
  const Json& hi = require(bbox, "max", src + ": bbox");
  scan.bbox.min = Vec3d(lo[0].get<double>(), lo[1].get<double>(), lo[2].get<double>());
  scan.bbox.max = Vec3d(hi[0].get<double>(), hi[1].get<double>(), hi[2].get<double>());
  return scan;
}

Json joints2d_to_json(const Joints2D& joints) {
  Json j;
  j["format"] = "joints2d/1";
  Json list = Json::array();
  for (const auto& det : joints.detections) {
    Json d;
    d["name"] = det.name;
    d["u"] = det.u;
    d["v"] = det.v;
    d["confidence"] = det.confidence;
    list.push_back(std::move(d));
  }
  j["joints"] = std::move(list);
  return j;
}

Joints2D joints2d_from_json(const Json& j, const std::string& src) {
  Joints2D joints;
  for (const auto& d : require(j, "joints", src)) {
    Joints2D::Detection det;
    det.name = require(d, "name", src + ": joints").get<std::string>();
    det.u = require(d, "u", src + ": joints").get<double>();
    det.v = require(d, "v", src + ": joints").get<double>();
    det.confidence = require(d, "confidence", src + ": joints").get<double>();
    joints.detections.push_back(std::move(det));
  }
  return joints;
}

Json camera_to_json(const Camera& camera) {
  Json j;
  j["format"] = "camera/1";
  Json proj = Json::array();
  for (double v : camera.p) proj.push_back(v);
  j["projection"] = std::move(proj);
  j["width"] = camera.width;
  j["height"] = camera.height;
  return j;
}

Camera camera_from_json(const Json& j, const std::string& src) {
  Camera cam;
  const Json& proj = require(j, "projection", src);
  if (proj.size() != 12) throw ValidationError(src + ": projection must have 12 entries");
  for (int i = 0; i < 12; ++i) cam.p[i] = proj[i].get<double>();
  cam.width = require(j, "width", src).get<int>();
  cam.height = require(j, "height", src).get<int>();
  return cam;
}

Json observations_to_json(const std::vector<FrameObservation>& obs) {
  Json j;
  j["format"] = "obs/1";
  Json frames = Json::array();
  for (const auto& o : obs) {
    Json f;
    f["timestamp"] = o.timestamp;
    f["scan"] = scan_to_json(o.scan);
    f["joints2d"] = joints2d_to_json(o.joints2d);
    f["camera"] = camera_to_json(o.camera);
    frames.push_back(std::move(f));
  }
  j["frames"] = std::move(frames);
  return j;
}

std::vector<FrameObservation> observations_from_json(const Json& j, const std::string& src) {
  std::vector<FrameObservation> obs;
  int t = 0;
  for (const auto& f : require(j, "frames", src)) {
    const std::string where = src + ": frame " + std::to_string(t);
    FrameObservation o;
    o.timestamp = require(f, "timestamp", where).get<double>();
    o.scan = scan_from_json(require(f, "scan", where), where);
    o.joints2d = joints2d_from_json(require(f, "joints2d", where), where);
    o.camera = camera_from_json(require(f, "camera", where), where);
    obs.push_back(std::move(o));
    ++t;
  }
  return obs;
}

Json params_to_json(const std::vector<PoseParams>& poses, const ShapeParams& shape) {
  Json j;
  j["format"] = "params/1";
  Json pose_list = Json::array();
  for (const auto& p : poses) pose_list.push_back(pose_to_json(p));
  j["poses"] = std::move(pose_list);
  j["bone_scales"] = double_list(shape.bone_scales);
  j["displacements"] = double_list(shape.displacements);
  return j;
}

void params_from_json(const Json& j, const std::string& src, std::vector<PoseParams>& poses,
                      ShapeParams& shape) {
  poses.clear();
  for (const auto& p : require(j, "poses", src)) poses.push_back(pose_from_json(p, src));
  shape.bone_scales = double_list_from(require(j, "bone_scales", src), src + ": bone_scales");
  shape.displacements =
      double_list_from(require(j, "displacements", src), src + ": displacements");
}

Json gmm_to_json(const GmmPrior& gmm) {
  Json j;
  j["format"] = "gmm/1";
  j["dimension"] = gmm.dim;
  j["R"] = gmm.components();
  j["weights"] = double_list(gmm.weights);
  Json means = Json::array();
  for (const auto& m : gmm.means) means.push_back(double_list(m));
  j["means"] = std::move(means);
  Json factors = Json::array();
  for (const auto& f : gmm.chol_lower) factors.push_back(double_list(f));
  j["covariance_factors"] = std::move(factors);
  return j;
}

GmmPrior gmm_from_json(const Json& j, const std::string& src) {
  GmmPrior gmm;
  gmm.dim = require(j, "dimension", src).get<int>();
  const int R = require(j, "R", src).get<int>();
  gmm.weights = double_list_from(require(j, "weights", src), src + ": weights");
  for (const auto& m : require(j, "means", src))
    gmm.means.push_back(double_list_from(m, src + ": means"));
  for (const auto& f : require(j, "covariance_factors", src))
    gmm.chol_lower.push_back(double_list_from(f, src + ": covariance_factors"));
  if (static_cast<int>(gmm.weights.size()) != R)
    throw ValidationError(src + ": R does not match the number of weights");
  gmm.finalize();
  return gmm;
}

Json fit_config_to_json(const FitConfig& c) {
  Json j;
  j["format"] = "fitconfig/1";
  Json w;
  w["lambda_sim"] = c.weights.lambda_sim;
  w["lambda_joint"] = c.weights.lambda_joint;
  w["lambda_pose"] = c.weights.lambda_pose;
  w["lambda_bone"] = c.weights.lambda_bone;
  w["lambda_l2"] = c.weights.lambda_l2;
  w["lambda_lap"] = c.weights.lambda_lap;
  w["sigma"] = c.weights.sigma;
  j["weights"] = std::move(w);
  j["warmup_iters"] = c.warmup_iters;
  j["stage1_iters"] = c.stage1_iters;
  j["stage2_iters"] = c.stage2_iters;
  j["tolerance"] = c.tolerance;
  j["tolerance_window"] = c.tolerance_window;
  j["yaws"] = double_list(c.yaws);
  j["learning_rate"] = c.learning_rate;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["seed"] = c.seed;
  Json f;
  f["min_points"] = c.filter_min_points;
  f["joint_score"] = c.filter_joint_score;
  f["joint_score_fraction"] = c.filter_joint_score_fraction;
  f["e_sim_max"] = c.filter_e_sim_max;
  f["e_joint_max"] = c.filter_e_joint_max;
  f["e_pose_max"] = c.filter_e_pose_max;
  j["filters"] = std::move(f);
  return j;
}

FitConfig fit_config_from_json(const Json& j, const std::string& src) {
  FitConfig c;
  const Json& w = require(j, "weights", src);
  c.weights.lambda_sim = require(w, "lambda_sim", src).get<double>();
  c.weights.lambda_joint = require(w, "lambda_joint", src).get<double>();
  c.weights.lambda_pose = require(w, "lambda_pose", src).get<double>();
  c.weights.lambda_bone = require(w, "lambda_bone", src).get<double>();
  c.weights.lambda_l2 = require(w, "lambda_l2", src).get<double>();
  c.weights.lambda_lap = require(w, "lambda_lap", src).get<double>();
  c.weights.sigma = require(w, "sigma", src).get<double>();
  c.warmup_iters = require(j, "warmup_iters", src).get<int>();
  c.stage1_iters = require(j, "stage1_iters", src).get<int>();
  c.stage2_iters = require(j, "stage2_iters", src).get<int>();
  c.tolerance = require(j, "tolerance", src).get<double>();
  c.tolerance_window = require(j, "tolerance_window", src).get<int>();
  c.yaws = double_list_from(require(j, "yaws", src), src + ": yaws");
  c.learning_rate = require(j, "learning_rate", src).get<double>();
  c.adam_beta1 = require(j, "adam_beta1", src).get<double>();
  c.adam_beta2 = require(j, "adam_beta2", src).get<double>();
  c.adam_eps = require(j, "adam_eps", src).get<double>();
  c.seed = require(j, "seed", src).get<uint64_t>();
  const Json& f = require(j, "filters", src);
  c.filter_min_points = require(f, "min_points", src).get<int>();
  c.filter_joint_score = require(f, "joint_score", src).get<double>();
  c.filter_joint_score_fraction = require(f, "joint_score_fraction", src).get<double>();
  c.filter_e_sim_max = require(f, "e_sim_max", src).get<double>();
  c.filter_e_joint_max = require(f, "e_joint_max", src).get<double>();
  c.filter_e_pose_max = require(f, "e_pose_max", src).get<double>();
  c.validate();
  return c;
}

Json fit_result_to_json(const FitResult& r) {
  Json j;
  j["format"] = "fitresult/1";
  j["timestamps"] = double_list(r.timestamps);
  Json poses = Json::array();
  for (const auto& p : r.poses) poses.push_back(pose_to_json(p));
  j["poses"] = std::move(poses);
  j["bone_scales"] = double_list(r.shape.bone_scales);
  j["displacements"] = double_list(r.shape.displacements);
  j["chosen_yaw"] = r.chosen_yaw;
  j["initial_energy"] = r.initial_energy;
  j["final_energy"] = r.final_energy;
  j["warmup_energies"] = double_list(r.warmup_energies);
  j["stage1_trace"] = double_list(r.stage1_trace);
  j["stage2_trace"] = double_list(r.stage2_trace);
  Json b;
  b["sim"] = r.final_breakdown.sim;
  b["joint"] = r.final_breakdown.joint;
  b["pose"] = r.final_breakdown.pose;
  b["bone"] = r.final_breakdown.bone;
  b["lap"] = r.final_breakdown.lap;
  b["l2"] = r.final_breakdown.l2;
  j["breakdown"] = std::move(b);
  Json raw = Json::array();
  for (const auto& t : r.final_raw_terms) {
    Json rt;
    rt["sim"] = t.sim;
    rt["joint"] = t.joint;
    rt["gmm"] = t.gmm;
    rt["bone"] = t.bone;
    rt["lap"] = t.lap;
    rt["l2"] = t.l2;
    raw.push_back(std::move(rt));
  }
  j["raw_terms"] = std::move(raw);
  return j;
}

FitResult fit_result_from_json(const Json& j, const std::string& src) {
  FitResult r;
  r.timestamps = double_list_from(require(j, "timestamps", src), src + ": timestamps");
  for (const auto& p : require(j, "poses", src)) r.poses.push_back(pose_from_json(p, src));
  r.shape.bone_scales = double_list_from(require(j, "bone_scales", src), src);
  r.shape.displacements = double_list_from(require(j, "displacements", src), src);
  r.chosen_yaw = require(j, "chosen_yaw", src).get<double>();
  r.initial_energy = require(j, "initial_energy", src).get<double>();
  r.final_energy = require(j, "final_energy", src).get<double>();
  r.warmup_energies = double_list_from(require(j, "warmup_energies", src), src);
  r.stage1_trace = double_list_from(require(j, "stage1_trace", src), src);
  r.stage2_trace = double_list_from(require(j, "stage2_trace", src), src);
  const Json& b = require(j, "breakdown", src);
  r.final_breakdown.sim = require(b, "sim", src).get<double>();
  r.final_breakdown.joint = require(b, "joint", src).get<double>();
  r.final_breakdown.pose = require(b, "pose", src).get<double>();
  r.final_breakdown.bone = require(b, "bone", src).get<double>();
  r.final_breakdown.lap = require(b, "lap", src).get<double>();
  r.final_breakdown.l2 = require(b, "l2", src).get<double>();
  for (const auto& rt : require(j, "raw_terms", src)) {
    FrameTerms<double> t;
    t.sim = require(rt, "sim", src).get<double>();
    t.joint = require(rt, "joint", src).get<double>();
    t.gmm = require(rt, "gmm", src).get<double>();
    t.bone = require(rt, "bone", src).get<double>();
    t.lap = require(rt, "lap", src).get<double>();
    t.l2 = require(rt, "l2", src).get<double>();
    r.final_raw_terms.push_back(t);
  }
  return r;
}

Json asset_to_json(const AssetSequence& asset) {
  Json j;
  j["format"] = "asset/1";
  j["id"] = asset.id;
  j["root_joint"] = asset.root_joint;
  j["cyclic"] = asset.cyclic;
  j["bone_scales"] = double_list(asset.shape.bone_scales);
  j["displacements"] = double_list(asset.shape.displacements);
  Json frames = Json::array();
  for (size_t t = 0; t < asset.poses.size(); ++t) {
    Json f = pose_to_json(asset.poses[t]);
    f["t"] = asset.timestamps[t];
    frames.push_back(std::move(f));
  }
  j["frames"] = std::move(frames);
  Json bev = Json::array();
  for (const auto& p : asset.bev) bev.push_back(Json::array({p.x, p.y}));
  j["bev"] = std::move(bev);
  j["speed"] = double_list(asset.speed);
  return j;
}

AssetSequence asset_from_json(const Json& j, const std::string& src) {
  AssetSequence asset;
  asset.id = require(j, "id", src).get<std::string>();
  asset.root_joint = require(j, "root_joint", src).get<int>();
  asset.cyclic = require(j, "cyclic", src).get<bool>();
  asset.shape.bone_scales = double_list_from(require(j, "bone_scales", src), src);
  asset.shape.displacements = double_list_from(require(j, "displacements", src), src);
  for (const auto& f : require(j, "frames", src)) {
    asset.poses.push_back(pose_from_json(f, src));
    asset.timestamps.push_back(require(f, "t", src).get<double>());
  }
  asset.finalize();
  return asset;
}

Json query_to_json(const QueryTrajectory& query) {
  Json j;
  j["format"] = "query/1";
  Json wps = Json::array();
  for (size_t i = 0; i < query.waypoints.size(); ++i) {
    Json w;
    w["t"] = query.timestamps[i];
    w["x"] = query.waypoints[i].x;
    w["y"] = query.waypoints[i].y;
    wps.push_back(std::move(w));
  }
  j["waypoints"] = std::move(wps);
  return j;
}

QueryTrajectory query_from_json(const Json& j, const std::string& src) {
  QueryTrajectory query;
  for (const auto& w : require(j, "waypoints", src)) {
    query.timestamps.push_back(require(w, "t", src).get<double>());
    query.waypoints.push_back(
        {require(w, "x", src).get<double>(), require(w, "y", src).get<double>()});
  }
  query.finalize();
  return query;
}

Json obstacle_to_json(const ObstacleMesh& mesh) {
  Json j;
  j["format"] = "mesh/1";
  j["vertices"] = vec3_list(mesh.vertices);
  Json faces = Json::array();
  for (const auto& f : mesh.faces) faces.push_back(Json::array({f[0], f[1], f[2]}));
  j["faces"] = std::move(faces);
  return j;
}

ObstacleMesh obstacle_from_json(const Json& j, const std::string& src) {
  ObstacleMesh mesh;
  mesh.vertices = vec3_list_from(require(j, "vertices", src), src + ": vertices");
  for (const auto& f : require(j, "faces", src)) {
    const std::array<int, 3> face{f[0].get<int>(), f[1].get<int>(), f[2].get<int>()};
    for (int v : face)
      if (v < 0 || v >= static_cast<int>(mesh.vertices.size()))
        throw ValidationError(src + ": face references invalid vertex");
    mesh.faces.push_back(face);
  }
  return mesh;
}

Json scenario_to_json(const ScenarioScript& scenario) {
  Json j;
  j["format"] = "scenario/1";
  Json actors = Json::array();
  for (const auto& a : scenario.actors) {
    Json e;
    e["asset"] = a.asset_id;
    e["query"] = query_to_json(a.query);
    actors.push_back(std::move(e));
  }
  j["actors"] = std::move(actors);
  Json obstacles = Json::array();
  for (const auto& o : scenario.obstacle_files) obstacles.push_back(o);
  j["obstacles"] = std::move(obstacles);
  Json sensor;
  sensor["d_phi"] = scenario.azimuth_res;
  sensor["d_theta"] = scenario.elevation_res;
  j["sensor"] = std::move(sensor);
  Json sweeps = Json::array();
  for (const auto& s : scenario.sweeps) {
    Json e;
    e["t"] = s.time;
    e["origin"] = Json::array({s.origin.x, s.origin.y, s.origin.z});
    Json orient = Json::array();
    for (double m : s.orientation.m) orient.push_back(m);
    e["orientation"] = std::move(orient);
    sweeps.push_back(std::move(e));
  }
  j["sweeps"] = std::move(sweeps);
  return j;
}

ScenarioScript scenario_from_json(const Json& j, const std::string& src) {
  ScenarioScript scenario;
  for (const auto& a : require(j, "actors", src)) {
    ScenarioScript::ActorSpec spec;
    spec.asset_id = require(a, "asset", src).get<std::string>();
    spec.query = query_from_json(require(a, "query", src), src + ": query");
    scenario.actors.push_back(std::move(spec));
  }
  for (const auto& o : require(j, "obstacles", src))
    scenario.obstacle_files.push_back(o.get<std::string>());
  const Json& sensor = require(j, "sensor", src);
  scenario.azimuth_res = require(sensor, "d_phi", src).get<double>();
  scenario.elevation_res = require(sensor, "d_theta", src).get<double>();
  for (const auto& s : require(j, "sweeps", src)) {
    SweepPose sweep;
    sweep.time = require(s, "t", src).get<double>();
    const Json& origin = require(s, "origin", src);
    sweep.origin = Vec3d(origin[0].get<double>(), origin[1].get<double>(), origin[2].get<double>());
    if (s.contains("orientation")) {
      const Json& o = s.at("orientation");
      if (o.size() != 9) throw ValidationError(src + ": sweep orientation must have 9 entries");
      for (int i = 0; i < 9; ++i) sweep.orientation.m[i] = o[i].get<double>();
    }
    scenario.sweeps.push_back(sweep);
  }
  return scenario;
}

Json manifest_to_json(const RunManifest& m) {
  Json j;
  j["format"] = "manifest/1";
  j["command"] = m.command;
  j["config_digest"] = m.config_digest;
  Json inputs;
  for (const auto& [path, digest] : m.input_digests) inputs[path] = digest;
  j["input_digests"] = std::move(inputs);
  j["seed"] = m.seed;
  j["tool_version"] = m.tool_version;
  j["wall_clock_sec"] = m.wall_clock_sec;
  return j;
}

}  // namespace bodyfit::io
