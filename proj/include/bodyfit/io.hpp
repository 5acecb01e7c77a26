#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bodyfit/body_model.hpp"
#include "bodyfit/energy.hpp"
#include "bodyfit/fitter.hpp"
#include "bodyfit/retarget.hpp"
#include "bodyfit/simulate.hpp"

namespace bodyfit::io {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "bodyfit 1.0.0";

// FNV-1a 64-bit, hex-encoded.
std::string digest_bytes(const std::string& bytes);
std::string digest_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Parses with a format/version gate; errors cite the file and field.
Json parse_document(const std::string& text, const std::string& expected_format,
                    const std::string& source_name);
const Json& require(const Json& j, const std::string& field, const std::string& source_name);

// Template
Json template_to_json(const SkeletonTemplate& tmpl);
SkeletonTemplate template_from_json(const Json& j, const std::string& source_name);

// Scans and observations
Json scan_to_json(const LidarScan& scan);
LidarScan scan_from_json(const Json& j, const std::string& source_name);
Json joints2d_to_json(const Joints2D& joints);
Joints2D joints2d_from_json(const Json& j, const std::string& source_name);
Json camera_to_json(const Camera& camera);
Camera camera_from_json(const Json& j, const std::string& source_name);
Json observations_to_json(const std::vector<FrameObservation>& obs);
std::vector<FrameObservation> observations_from_json(const Json& j,
                                                     const std::string& source_name);

// Parameters / ground truth
Json params_to_json(const std::vector<PoseParams>& poses, const ShapeParams& shape);
void params_from_json(const Json& j, const std::string& source_name,
                      std::vector<PoseParams>& poses, ShapeParams& shape);

// GMM prior
Json gmm_to_json(const GmmPrior& gmm);
GmmPrior gmm_from_json(const Json& j, const std::string& source_name);

// Fit configuration & result
Json fit_config_to_json(const FitConfig& config);
FitConfig fit_config_from_json(const Json& j, const std::string& source_name);
Json fit_result_to_json(const FitResult& result);
FitResult fit_result_from_json(const Json& j, const std::string& source_name);

// Assets, queries, scenarios
Json asset_to_json(const AssetSequence& asset);
AssetSequence asset_from_json(const Json& j, const std::string& source_name);
Json query_to_json(const QueryTrajectory& query);
QueryTrajectory query_from_json(const Json& j, const std::string& source_name);
Json obstacle_to_json(const ObstacleMesh& mesh);
ObstacleMesh obstacle_from_json(const Json& j, const std::string& source_name);
ScenarioScript scenario_from_json(const Json& j, const std::string& source_name);
Json scenario_to_json(const ScenarioScript& scenario);

// Serialized text of any document, canonical form (2-space indent, trailing
// newline). Writers always go through this.
std::string dump_document(const Json& j);

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::vector<std::pair<std::string, std::string>> input_digests;
  uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  double wall_clock_sec = 0;
};
Json manifest_to_json(const RunManifest& manifest);

}  // namespace bodyfit::io
