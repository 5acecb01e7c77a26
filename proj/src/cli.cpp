#include "bodyfit/cli.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "bodyfit/gradcheck.hpp"
#include "bodyfit/io.hpp"

namespace bodyfit {

namespace fs = std::filesystem;
using io::Json;

namespace {

struct ManifestScope {
  io::RunManifest manifest;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  explicit ManifestScope(std::string command) { manifest.command = std::move(command); }
  void input(const std::string& path) { manifest.input_digests.push_back({path, io::digest_file(path)}); }
  void write(const std::string& out_path) {
    manifest.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    io::write_file(out_path + ".manifest.json", io::dump_document(io::manifest_to_json(manifest)));
  }
};

SkeletonTemplate load_template(const std::string& path) {
  if (path.empty()) return make_template();
  return io::template_from_json(io::parse_document(io::read_file(path), "template/1", path), path);
}

GmmPrior load_gmm(const std::string& path, const SkeletonTemplate& tmpl) {
  if (path.empty()) return default_pose_prior(tmpl);
  return io::gmm_from_json(io::parse_document(io::read_file(path), "gmm/1", path), path);
}

FitConfig load_fit_config(const std::string& path) {
  if (path.empty()) return FitConfig{};
  return io::fit_config_from_json(io::parse_document(io::read_file(path), "fitconfig/1", path),
                                  path);
}

AssetSequence load_asset(const std::string& path) {
  return io::asset_from_json(io::parse_document(io::read_file(path), "asset/1", path), path);
}

std::vector<AssetSequence> load_bank(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("asset bank is not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > 5 && name.ends_with(".json") &&
        !name.ends_with(".manifest.json"))
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<AssetSequence> bank;
  for (const auto& f : files) bank.push_back(load_asset(f));
  if (bank.empty()) throw ValidationError("asset bank is empty: " + dir);
  return bank;
}

int cmd_make_template(const std::string& config_path, const std::string& out) {
  TemplateConfig cfg;
  if (!config_path.empty()) {
    const Json j = io::parse_document(io::read_file(config_path), "templateconfig/1", config_path);
    const auto get = [&](const char* field, auto& slot) {
      if (j.contains(field)) slot = j.at(field).get<std::decay_t<decltype(slot)>>();
    };
    get("limb_segments", cfg.limb_segments);
    get("torso_segments", cfg.torso_segments);
    get("limb_rings", cfg.limb_rings);
    get("cap_rings", cfg.cap_rings);
    get("thigh_radius", cfg.thigh_radius);
    get("shin_radius", cfg.shin_radius);
    get("upper_arm_radius", cfg.upper_arm_radius);
    get("forearm_radius", cfg.forearm_radius);
    get("weight_influences", cfg.weight_influences);
    get("weight_smoothing", cfg.weight_smoothing);
  }
  const SkeletonTemplate tmpl = make_template(cfg);
  ManifestScope scope("make-template");
  if (!config_path.empty()) scope.input(config_path);
  io::write_file(out, io::dump_document(io::template_to_json(tmpl)));
  scope.write(out);
  std::cout << "template: " << tmpl.num_vertices() << " vertices, " << tmpl.faces.size()
            << " faces, " << tmpl.num_joints() << " joints -> " << out << "\n";
  return 0;
}

int cmd_synth(uint64_t seed, int frames, double yaw, double noise_px, int walls, double distance,
              double speed, double dphi, double dtheta, const std::string& template_path,
              const std::string& gmm_path, const std::string& out, const std::string& truth_out,
              const std::string& gmm_out) {
  const SkeletonTemplate tmpl = load_template(template_path);
  const GmmPrior gmm = load_gmm(gmm_path, tmpl);
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.frames = frames;
  cfg.yaw = yaw;
  cfg.pixel_noise = noise_px;
  cfg.obstacle_walls = walls;
  cfg.distance = distance;
  cfg.walk_speed = speed;
  cfg.azimuth_res = dphi;
  cfg.elevation_res = dtheta;
  const SynthScene scene = synth_ground_truth(tmpl, gmm, cfg);

  ManifestScope scope("synth");
  scope.manifest.seed = seed;
  if (!template_path.empty()) scope.input(template_path);
  if (!gmm_path.empty()) scope.input(gmm_path);
  io::write_file(out, io::dump_document(io::observations_to_json(scene.observations)));
  scope.write(out);
  if (!truth_out.empty())
    io::write_file(truth_out,
                   io::dump_document(io::params_to_json(scene.true_poses, scene.true_shape)));
  if (!gmm_out.empty()) io::write_file(gmm_out, io::dump_document(io::gmm_to_json(gmm)));
  int total_points = 0;
  for (const auto& o : scene.observations) total_points += o.scan.target_points.size();
  std::cout << "synth: " << scene.observations.size() << " frames, " << total_points
            << " target points -> " << out << "\n";
  return 0;
}

int cmd_fit(const std::string& obs_path, const std::string& template_path,
            const std::string& gmm_path, const std::string& config_path, const std::string& out) {
  const SkeletonTemplate tmpl = load_template(template_path);
  const GmmPrior gmm = load_gmm(gmm_path, tmpl);
  FitConfig config = load_fit_config(config_path);
  std::vector<FrameObservation> obs = io::observations_from_json(
      io::parse_document(io::read_file(obs_path), "obs/1", obs_path), obs_path);
  for (auto& o : obs) o.joints2d.bind(tmpl);

  const FitResult result = fit_sequence(obs, tmpl, gmm, config);

  ManifestScope scope("fit");
  scope.manifest.seed = config.seed;
  scope.input(obs_path);
  if (!template_path.empty()) scope.input(template_path);
  if (!gmm_path.empty()) scope.input(gmm_path);
  if (!config_path.empty()) scope.input(config_path);
  scope.manifest.config_digest = io::digest_bytes(io::dump_document(io::fit_config_to_json(config)));
  io::write_file(out, io::dump_document(io::fit_result_to_json(result)));
  scope.write(out);
  std::cout << "fit: yaw branch " << result.chosen_yaw << ", energy " << result.initial_energy
            << " -> " << result.final_energy << " (" << result.stage1_trace.size() << "+"
            << result.stage2_trace.size() << " iterations) -> " << out << "\n";
  return 0;
}

int cmd_metrics(const std::string& result_path, const std::string& truth_path,
                const std::string& template_path, const std::string& out) {
  const SkeletonTemplate tmpl = load_template(template_path);
  const FitResult result = io::fit_result_from_json(
      io::parse_document(io::read_file(result_path), "fitresult/1", result_path), result_path);
  std::vector<PoseParams> true_poses;
  ShapeParams true_shape;
  io::params_from_json(io::parse_document(io::read_file(truth_path), "params/1", truth_path),
                       truth_path, true_poses, true_shape);

  const Metrics m = metrics(tmpl, result.poses, result.shape, true_poses, true_shape);
  std::cout << "PVE: " << m.pve << " cm\nMPJPE: " << m.mpjpe << " cm\nCD: " << m.cd << " cm\n";
  if (!out.empty()) {
    Json j;
    j["format"] = "metrics/1";
    j["pve_cm"] = m.pve;
    j["mpjpe_cm"] = m.mpjpe;
    j["cd_cm"] = m.cd;
    io::write_file(out, io::dump_document(j));
  }
  return 0;
}

int cmd_bank_add(const std::string& result_path, const std::string& obs_path,
                 const std::string& bank_dir, const std::string& id,
                 const std::string& config_path, double tau_pose, double min_cycle) {
  const FitConfig config = load_fit_config(config_path);
  const FitResult result = io::fit_result_from_json(
      io::parse_document(io::read_file(result_path), "fitresult/1", result_path), result_path);
  const std::vector<FrameObservation> obs = io::observations_from_json(
      io::parse_document(io::read_file(obs_path), "obs/1", obs_path), obs_path);
  if (obs.size() != result.poses.size())
    throw ValidationError("bank-add: observation and result frame counts differ");

  // Admission filters (configurable; see the fit configuration file).
  for (size_t t = 0; t < obs.size(); ++t)
    if (static_cast<int>(obs[t].scan.target_points.size()) < config.filter_min_points)
      throw ValidationError("bank-add: frame " + std::to_string(t) + " has fewer than " +
                            std::to_string(config.filter_min_points) + " LiDAR points");
  int scored = 0, detections = 0;
  for (const auto& o : obs)
    for (const auto& d : o.joints2d.detections) {
      ++detections;
      if (d.confidence > config.filter_joint_score) ++scored;
    }
  if (detections > 0 &&
      scored < config.filter_joint_score_fraction * detections)
    throw ValidationError("bank-add: too few joint detections above score " +
                          std::to_string(config.filter_joint_score));
  double mean_sim_cm2 = 0, mean_joint = 0, mean_pose = 0;
  for (const auto& t : result.final_raw_terms) {
    mean_sim_cm2 += t.sim * 1e4;  // m^2 -> cm^2
    mean_joint += t.joint;
    mean_pose += t.gmm;
  }
  const double n = std::max<size_t>(1, result.final_raw_terms.size());
  mean_sim_cm2 /= n;
  mean_joint /= n;
  mean_pose /= n;
  if (mean_sim_cm2 >= config.filter_e_sim_max)
    throw ValidationError("bank-add: E_sim " + std::to_string(mean_sim_cm2) + " cm^2 exceeds " +
                          std::to_string(config.filter_e_sim_max));
  if (mean_joint >= config.filter_e_joint_max)
    throw ValidationError("bank-add: E_joint " + std::to_string(mean_joint) + " exceeds " +
                          std::to_string(config.filter_e_joint_max));
  if (mean_pose >= config.filter_e_pose_max)
    throw ValidationError("bank-add: E_pose " + std::to_string(mean_pose) + " exceeds " +
                          std::to_string(config.filter_e_pose_max));

  AssetSequence asset;
  asset.id = id;
  asset.shape = result.shape;
  asset.poses = result.poses;
  asset.timestamps = result.timestamps;
  asset.finalize();
  asset = clip_cycle(asset, tau_pose, min_cycle);

  fs::create_directories(bank_dir);
  const std::string out = (fs::path(bank_dir) / (id + ".json")).string();
  ManifestScope scope("bank-add");
  scope.input(result_path);
  scope.input(obs_path);
  io::write_file(out, io::dump_document(io::asset_to_json(asset)));
  scope.write(out);
  std::cout << "bank-add: asset '" << id << "' with " << asset.frames() << " frames ("
            << asset.timestamps.back() - asset.timestamps.front() << " s cycle) -> " << out
            << "\n";
  return 0;
}

int cmd_retarget(const std::string& bank_dir, const std::string& query_path,
                 const std::string& out) {
  const std::vector<AssetSequence> bank = load_bank(bank_dir);
  const QueryTrajectory query = io::query_from_json(
      io::parse_document(io::read_file(query_path), "query/1", query_path), query_path);
  const AssetSequence& asset = retrieve(bank, query);
  const std::vector<PoseParams> track = retarget_sequence(asset, query);

  Json j;
  j["format"] = "traj/1";
  j["asset"] = asset.id;
  Json frames = Json::array();
  for (size_t i = 0; i < track.size(); ++i) {
    Json f;
    f["t"] = query.timestamps[i];
    Json rot = Json::array();
    for (const auto& aa : track[i].joint_rotations) {
      const Vec3d w = wrap_axis_angle(aa);
      rot.push_back(Json::array({w.x, w.y, w.z}));
    }
    f["rotations"] = std::move(rot);
    f["offset"] = Json::array({track[i].root_offset.x, track[i].root_offset.y,
                               track[i].root_offset.z});
    frames.push_back(std::move(f));
  }
  j["frames"] = std::move(frames);
  ManifestScope scope("retarget");
  scope.input(query_path);
  io::write_file(out, io::dump_document(j));
  scope.write(out);
  std::cout << "retarget: asset '" << asset.id << "' onto " << track.size() << " waypoints -> "
            << out << "\n";
  return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& bank_dir,
                 const std::string& template_path, const std::string& out) {
  const SkeletonTemplate tmpl = load_template(template_path);
  const ScenarioScript scenario = io::scenario_from_json(
      io::parse_document(io::read_file(scenario_path), "scenario/1", scenario_path),
      scenario_path);

  Scene scene;
  scene.azimuth_res = scenario.azimuth_res;
  scene.elevation_res = scenario.elevation_res;
  scene.sweeps = scenario.sweeps;
  for (const auto& spec : scenario.actors) {
    const std::string asset_path = (fs::path(bank_dir) / (spec.asset_id + ".json")).string();
    const AssetSequence asset = load_asset(asset_path);
    Actor actor;
    actor.name = spec.asset_id;
    actor.tmpl = &tmpl;
    actor.shape = asset.shape;
    actor.poses = retarget_sequence(asset, spec.query);
    actor.timestamps = spec.query.timestamps;
    scene.actors.push_back(std::move(actor));
  }
  const fs::path base = fs::path(scenario_path).parent_path();
  for (const auto& file : scenario.obstacle_files) {
    const std::string path = (base / file).string();
    scene.obstacles.push_back(
        io::obstacle_from_json(io::parse_document(io::read_file(path), "mesh/1", path), path));
  }

  Json j;
  j["format"] = "simscan/1";
  Json sweeps = Json::array();
  for (const auto& sweep : scene.sweeps) {
    const SweepResult result = simulate_sweep(scene, sweep.time);
    Json e;
    e["t"] = result.time;
    Json pts = Json::array();
    for (const auto& p : result.points) pts.push_back(Json::array({p.x, p.y, p.z}));
    e["points"] = std::move(pts);
    Json labels = Json::array();
    for (int l : result.actor_labels) labels.push_back(l);
    e["labels"] = std::move(labels);
    sweeps.push_back(std::move(e));
  }
  j["sweeps"] = std::move(sweeps);

  ManifestScope scope("simulate");
  scope.input(scenario_path);
  io::write_file(out, io::dump_document(j));
  scope.write(out);
  std::cout << "simulate: " << scene.actors.size() << " actors, " << scene.sweeps.size()
            << " sweeps -> " << out << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, int trials) {
  const SkeletonTemplate tmpl = make_template();
  const GmmPrior& gmm = default_pose_prior(tmpl);
  const GradCheckReport report = run_gradcheck(tmpl, gmm, seed, trials);
  std::cout << "gradcheck over " << report.trials << " trials, " << report.coords_checked
            << " coordinates (max relative error):\n";
  std::cout << "  E_sim:   " << report.sim << "\n";
  std::cout << "  E_joint: " << report.joint << "\n";
  std::cout << "  E_pose:  " << report.pose << "\n";
  std::cout << "  E_shape: " << report.shape << "\n";
  std::cout << "  total:   " << report.total << "\n";
  if (!report.pass()) {
    std::cerr << "gradcheck FAILED (tolerance 1e-4)\n";
    return 2;
  }
  std::cout << "gradcheck passed (tolerance 1e-4)\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Articulated body reconstruction from LiDAR + 2D joints, with motion "
               "retargeting and LiDAR scene simulation"};
  app.set_version_flag("--version", std::string(io::kToolVersion));
  app.require_subcommand(1);

  std::string config_path, template_path, gmm_path, out, bank_dir;
  uint64_t seed = 0;

  auto* mk = app.add_subcommand("make-template", "Build the canonical humanoid template");
  std::string mk_out = "template.json";
  mk->add_option("--config", config_path, "templateconfig/1 file");
  mk->add_option("--out", mk_out, "output template file");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic ground-truth scene");
  int synth_frames = 10, synth_walls = 0;
  double synth_yaw = 0.0, synth_noise = 0.0, synth_distance = 9.0, synth_speed = 1.1;
  double synth_dphi = 0.0035, synth_dtheta = 0.0035;
  std::string synth_out = "obs.json", truth_out = "truth.json", gmm_out;
  synth->add_option("--seed", seed, "random seed")->required();
  synth->add_option("--frames", synth_frames);
  synth->add_option("--yaw", synth_yaw, "facing angle, radians");
  synth->add_option("--noise-px", synth_noise, "2D joint pixel noise");
  synth->add_option("--walls", synth_walls, "occluder slabs");
  synth->add_option("--distance", synth_distance, "body distance, meters");
  synth->add_option("--speed", synth_speed, "walk speed, m/s");
  synth->add_option("--dphi", synth_dphi, "azimuth resolution, radians");
  synth->add_option("--dtheta", synth_dtheta, "elevation resolution, radians");
  synth->add_option("--template", template_path);
  synth->add_option("--gmm", gmm_path);
  synth->add_option("--out", synth_out);
  synth->add_option("--truth-out", truth_out);
  synth->add_option("--gmm-out", gmm_out, "export the pose prior in use");

  auto* fit = app.add_subcommand("fit", "Fit the body model to an observation sequence");
  std::string obs_path, fit_out = "result.json";
  fit->add_option("--obs", obs_path)->required();
  fit->add_option("--template", template_path);
  fit->add_option("--gmm", gmm_path);
  fit->add_option("--config", config_path, "fitconfig/1 file");
  fit->add_option("--out", fit_out);

  auto* met = app.add_subcommand("metrics", "PVE / MPJPE / CD against ground truth");
  std::string result_path, truth_path, metrics_out;
  met->add_option("--result", result_path)->required();
  met->add_option("--truth", truth_path)->required();
  met->add_option("--template", template_path);
  met->add_option("--out", metrics_out);

  auto* bank = app.add_subcommand("bank-add", "Clip a fitted sequence and add it to the bank");
  std::string bank_id = "asset";
  double tau_pose = 0.15, min_cycle = 1.5;
  bank->add_option("--result", result_path)->required();
  bank->add_option("--obs", obs_path)->required();
  bank->add_option("--bank", bank_dir)->required();
  bank->add_option("--id", bank_id)->required();
  bank->add_option("--config", config_path, "fitconfig/1 file (admission filters)");
  bank->add_option("--tau-pose", tau_pose, "cycle closure threshold, radians");
  bank->add_option("--min-cycle", min_cycle, "minimum cycle length, seconds");

  auto* ret = app.add_subcommand("retarget", "Retrieve an asset and retarget it onto a query");
  std::string query_path, ret_out = "traj.json";
  ret->add_option("--bank", bank_dir)->required();
  ret->add_option("--query", query_path)->required();
  ret->add_option("--out", ret_out);

  auto* sim = app.add_subcommand("simulate", "Render LiDAR sweeps of a scripted scene");
  std::string scenario_path, sim_out = "sweeps.json";
  sim->add_option("--scenario", scenario_path)->required();
  sim->add_option("--bank", bank_dir)->required();
  sim->add_option("--template", template_path);
  sim->add_option("--out", sim_out);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of all energy gradients");
  int trials = 100;
  grad->add_option("--seed", seed, "random seed")->required();
  grad->add_option("--trials", trials);

  std::vector<std::string> argv_like = args;
  std::reverse(argv_like.begin(), argv_like.end());  // CLI11 consumes from the back
  try {
    app.parse(argv_like);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (mk->parsed()) return cmd_make_template(config_path, mk_out);
    if (synth->parsed())
      return cmd_synth(seed, synth_frames, synth_yaw, synth_noise, synth_walls, synth_distance,
                       synth_speed, synth_dphi, synth_dtheta, template_path, gmm_path, synth_out,
                       truth_out, gmm_out);
    if (fit->parsed()) return cmd_fit(obs_path, template_path, gmm_path, config_path, fit_out);
    if (met->parsed()) return cmd_metrics(result_path, truth_path, template_path, metrics_out);
    if (bank->parsed())
      return cmd_bank_add(result_path, obs_path, bank_dir, bank_id, config_path, tau_pose,
                          min_cycle);
    if (ret->parsed()) return cmd_retarget(bank_dir, query_path, ret_out);
    if (sim->parsed()) return cmd_simulate(scenario_path, bank_dir, template_path, sim_out);
    if (grad->parsed()) return cmd_gradcheck(seed, trials);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace bodyfit
