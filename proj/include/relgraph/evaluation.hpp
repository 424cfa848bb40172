#pragma once

// Detection dumps, ground-truth loading and AP tables for offline evaluation.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "relgraph/autodiff.hpp"
#include "relgraph/geometry.hpp"
#include "relgraph/proposal.hpp"

namespace relgraph {

/// {"config_hash", "scene", "detections": [{center, size, heading, class,
/// objectness, score}, ...]}.
nlohmann::json detections_to_json(const std::vector<proposal::Proposal>& dets, const std::string& config_hash,
                                  const std::string& scene_name);
/// Accepts the object above or a bare detection array.
std::vector<OrientedBox> detections_from_json(const nlohmann::json& doc);
/// Boxes of a scene JSON (or any object with a "boxes" array, or a bare array).
std::vector<OrientedBox> boxes_from_json(const nlohmann::json& doc);

nlohmann::json read_json(const std::filesystem::path& path);
/// A directory expands to its *.json files in name order.
std::vector<std::filesystem::path> expand_json_paths(const std::vector<std::filesystem::path>& paths);

/// "class,name,ap" rows followed by a "mean,,<mAP>" row.
std::string ap_table_csv(const geom::MapResult& result, const std::vector<std::string>& class_names);

/// Row-major CSV of a dense matrix with 17 significant digits.
std::string matrix_csv(const ad::Tensor& m);

}  // namespace relgraph
