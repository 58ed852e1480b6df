#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "proxhmr/body_model.hpp"
#include "proxhmr/json_eigen.hpp"

namespace proxhmr {

// Template file layout (JSON, "format": "proxhmr-template", "version": 1):
//   joints:      [{name, parent, rest_offset: [x,y,z]}...]   parent -1 for root
//   vertices:    [[x,y,z]...]                                meters
//   faces:       [[a,b,c]...]
//   skin_weights:[[(joint, weight)...]...]                   sparse rows
//   shape_dirs:  [[[dx,dy,dz]...]...]                        one list per coefficient
//   regressor:   [[(vertex, weight)...]...]                  sparse rows, one per joint
inline nlohmann::json template_to_json(const BodyTemplate& t) {
  using nlohmann::json;
  json j;
  j["format"] = "proxhmr-template";
  j["version"] = BodyTemplate::kFormatVersion;
  json joints = json::array();
  for (int k = 0; k < t.joint_count(); ++k) {
    joints.push_back({{"name", t.skeleton.names.empty() ? std::to_string(k) : t.skeleton.names[k]},
                      {"parent", t.skeleton.parent[k]},
                      {"rest_offset", to_json_vec(t.skeleton.rest_offsets[k])}});
  }
  j["joints"] = joints;
  j["vertices"] = to_json_cols(t.vertices_rest);
  json faces = json::array();
  for (const auto& f : t.faces) faces.push_back({f[0], f[1], f[2]});
  j["faces"] = faces;
  json sw = json::array();
  for (Eigen::Index i = 0; i < t.skin_weights.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.skin_weights.cols(); ++c) {
      if (t.skin_weights(i, c) != 0.0) row.push_back({c, t.skin_weights(i, c)});
    }
    sw.push_back(row);
  }
  j["skin_weights"] = sw;
  json sd = json::array();
  for (const auto& d : t.shape_dirs) sd.push_back(to_json_cols(d));
  j["shape_dirs"] = sd;
  json reg = json::array();
  for (Eigen::Index r = 0; r < t.joint_regressor.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.joint_regressor.cols(); ++c) {
      if (t.joint_regressor(r, c) != 0.0) row.push_back({c, t.joint_regressor(r, c)});
    }
    reg.push_back(row);
  }
  j["regressor"] = reg;
  return j;
}

inline BodyTemplate template_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "proxhmr-template") throw FormatError("not a template file");
    if (j.at("version").get<int>() != BodyTemplate::kFormatVersion) throw FormatError("unsupported template version");
    BodyTemplate t;
    for (const auto& jj : j.at("joints")) {
      t.skeleton.names.push_back(jj.at("name").get<std::string>());
      t.skeleton.parent.push_back(jj.at("parent").get<int>());
      t.skeleton.rest_offsets.push_back(vec3_from_json(jj.at("rest_offset")));
    }
    t.vertices_rest = cols_from_json(j.at("vertices"));
    const auto nv = t.vertices_rest.cols();
    const auto nj = static_cast<Eigen::Index>(t.skeleton.parent.size());
    for (const auto& f : j.at("faces")) t.faces.emplace_back(f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>());
    t.skin_weights = Eigen::MatrixXd::Zero(nv, nj);
    const auto& sw = j.at("skin_weights");
    if (static_cast<Eigen::Index>(sw.size()) != nv) throw FormatError("skin_weights row count mismatch");
    for (Eigen::Index i = 0; i < nv; ++i) {
      for (const auto& e : sw[i]) t.skin_weights(i, e.at(0).get<int>()) = e.at(1).get<double>();
    }
    for (const auto& d : j.at("shape_dirs")) t.shape_dirs.push_back(cols_from_json(d));
    t.joint_regressor = Eigen::MatrixXd::Zero(nj, nv);
    const auto& reg = j.at("regressor");
    if (static_cast<Eigen::Index>(reg.size()) != nj) throw FormatError("regressor row count mismatch");
    for (Eigen::Index r = 0; r < nj; ++r) {
      for (const auto& e : reg[r]) t.joint_regressor(r, e.at(0).get<int>()) = e.at(1).get<double>();
    }
    t.validate();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("template parse error: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid template: ") + e.what());
  }
}

inline void save_template(const BodyTemplate& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << template_to_json(t).dump(1) << '\n';
}

inline BodyTemplate load_template(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("template parse error: ") + e.what());
  }
  return template_from_json(j);
}

}  // namespace proxhmr
