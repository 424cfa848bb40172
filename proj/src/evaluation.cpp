#include "relgraph/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace relgraph {

using nlohmann::json;

namespace {

OrientedBox box_from(const json& j, const char* class_key) {
  OrientedBox b;
  b.center = j.at("center").get<Vec3>();
  b.size = j.at("size").get<Vec3>();
  b.heading = j.value("heading", 0.0);
  b.class_id = j.value(class_key, j.value("class_id", 0));
  b.score = j.value("score", 1.0);
  return b;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

json detections_to_json(const std::vector<proposal::Proposal>& dets, const std::string& config_hash,
                        const std::string& scene_name) {
  json arr = json::array();
  for (const auto& p : dets) {
    arr.push_back({{"center", p.box.center},
                   {"size", p.box.size},
                   {"heading", p.box.heading},
                   {"class", p.box.class_id},
                   {"objectness", p.objectness()},
                   {"score", p.box.score}});
  }
  return {{"config_hash", config_hash}, {"scene", scene_name}, {"detections", arr}};
}

std::vector<OrientedBox> detections_from_json(const json& doc) {
  const json& arr = doc.is_array() ? doc : doc.at("detections");
  std::vector<OrientedBox> out;
  try {
    for (const auto& j : arr) out.push_back(box_from(j, "class"));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("detection dump: ") + e.what());
  }
  return out;
}

std::vector<OrientedBox> boxes_from_json(const json& doc) {
  const json& arr = doc.is_array() ? doc : doc.at("boxes");
  std::vector<OrientedBox> out;
  try {
    for (const auto& j : arr) {
      OrientedBox b = box_from(j, "class_id");
      b.score = 1.0;
      out.push_back(b);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("ground truth: ") + e.what());
  }
  return out;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> expand_json_paths(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::filesystem::path> out;
  for (const auto& p : paths) {
    if (!std::filesystem::is_directory(p)) {
      out.push_back(p);
      continue;
    }
    std::vector<std::filesystem::path> found;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

std::string ap_table_csv(const geom::MapResult& result, const std::vector<std::string>& class_names) {
  std::string s = "class,name,ap\n";
  for (const auto& [cls, ap] : result.per_class) {
    const std::string name =
        cls >= 0 && static_cast<std::size_t>(cls) < class_names.size() ? class_names[static_cast<std::size_t>(cls)] : "";
    s += std::to_string(cls) + "," + name + "," + num(ap) + "\n";
  }
  s += "mean,," + num(result.mean) + "\n";
  return s;
}

std::string matrix_csv(const ad::Tensor& m) {
  std::string s;
  const auto v = m.values();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) s += ",";
      s += num(v[r * m.cols() + c]);
    }
    s += "\n";
  }
  return s;
}

}  // namespace relgraph
