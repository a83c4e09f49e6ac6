#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "gcorn/errors.hpp"
#include "gcorn/nn.hpp"

namespace gcorn {

using Json = nlohmann::ordered_json;

inline constexpr const char* kModelFormat = "gcorn-model";
inline constexpr int kModelVersion = 1;

inline Json ortho_to_json(const OrthoConfig& o) {
  return Json{{"order", o.order},
              {"iterations", o.iterations},
              {"prescale", o.prescale},
              {"power_iters", o.power_iters},
              {"power_tol", o.power_tol}};
}

inline OrthoConfig ortho_from_json(const Json& j) {
  OrthoConfig o;
  o.order = j.at("order").get<int>();
  o.iterations = j.at("iterations").get<int>();
  o.prescale = j.at("prescale").get<bool>();
  o.power_iters = j.at("power_iters").get<int>();
  o.power_tol = j.at("power_tol").get<double>();
  return o;
}

// Doubles are written in shortest round-trip form, so reading back is bit-exact.
inline Json model_to_json(const Model& m) {
  Json layers = Json::array();
  for (const auto& w : m.layers)
    layers.push_back(Json{{"rows", w.rows()}, {"cols", w.cols()}, {"data", w.data()}});
  return Json{{"format", kModelFormat},
              {"version", kModelVersion},
              {"kind", to_string(m.kind)},
              {"activation", to_string(m.activation)},
              {"readout", m.readout},
              {"gin_zeta", m.gin_zeta},
              {"gcorn", m.gcorn},
              {"ortho", ortho_to_json(m.ortho)},
              {"layers", std::move(layers)}};
}

inline Model model_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat)
      throw ValidationError("not a gcorn model file");
    if (j.at("version").get<int>() != kModelVersion)
      throw ValidationError("unsupported model version " + j.at("version").dump());
    Model m;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "gcn") m.kind = ModelKind::gcn;
    else if (kind == "gin") m.kind = ModelKind::gin;
    else throw ValidationError("unknown model kind '" + kind + "'");
    const auto act = j.at("activation").get<std::string>();
    if (act == "relu") m.activation = Activation::relu;
    else if (act == "identity") m.activation = Activation::identity;
    else throw ValidationError("unknown activation '" + act + "'");
    m.readout = j.at("readout").get<bool>();
    m.gin_zeta = j.at("gin_zeta").get<double>();
    m.gcorn = j.at("gcorn").get<bool>();
    m.ortho = ortho_from_json(j.at("ortho"));
    for (const auto& l : j.at("layers")) {
      m.layers.emplace_back(l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>(),
                            l.at("data").get<std::vector<double>>());
    }
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed model JSON: ") + e.what());
  }
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << model_to_json(m).dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("cannot parse model file " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace gcorn
