#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fedmerge/dataio.hpp"  // format_double
#include "fedmerge/errors.hpp"
#include "fedmerge/merge.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/valuation.hpp"

namespace fedmerge {

constexpr int kFormatVersion = 1;

namespace detail {

inline void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

inline void append_tensor(std::string& out, const Tensor& t) {
  out += "{\"shape\": [";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(t.shape[i]);
  }
  out += "], \"data\": [";
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (i) out += ", ";
    out += format_double(t.data[i]);
  }
  out += "]}";
}

inline void append_layers(std::string& out, const std::vector<LayerParams>& layers,
                          const std::string& indent) {
  out += "[\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out += indent + "  {\"name\": ";
    append_json_string(out, layers[l].name);
    out += ", \"tensors\": {";
    bool first = true;
    for (const auto& [role, t] : layers[l].tensors) {
      if (!first) out += ", ";
      first = false;
      append_json_string(out, role);
      out += ": ";
      append_tensor(out, t);
    }
    out += "}}";
    if (l + 1 < layers.size()) out += ',';
    out += '\n';
  }
  out += indent + "]";
}

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.contains("shape") || !j.contains("data")) {
    throw std::runtime_error(where + ": tensor needs shape and data");
  }
  std::vector<std::size_t> shape;
  for (const auto& d : j.at("shape")) {
    const long long v = d.get<long long>();
    if (v <= 0) throw std::runtime_error(where + ": non-positive dimension");
    shape.push_back(static_cast<std::size_t>(v));
  }
  std::vector<double> data;
  data.reserve(j.at("data").size());
  for (const auto& v : j.at("data")) data.push_back(v.get<double>());
  return Tensor(std::move(shape), std::move(data));
}

inline std::vector<LayerParams> layers_from_json(const nlohmann::json& j,
                                                 const std::string& where) {
  std::vector<LayerParams> layers;
  for (const auto& jl : j) {
    LayerParams layer;
    layer.name = jl.at("name").get<std::string>();
    for (const auto& [role, jt] : jl.at("tensors").items()) {
      layer.tensors.emplace(role, tensor_from_json(jt, where + "/" + layer.name));
    }
    if (layer.tensors.empty()) {
      throw std::runtime_error(where + ": layer '" + layer.name + "' has no tensors");
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

inline nlohmann::json parse_document(const std::string& text, const std::string& where) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error(where + ": invalid JSON");
  if (!j.is_object()) throw std::runtime_error(where + ": expected an object");
  const int version = j.value("format_version", -1);
  if (version != kFormatVersion) {
    throw std::runtime_error(where + ": unsupported format_version");
  }
  return j;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out << text;
}

}  // namespace detail

/// Model document: {format_version, architecture_id, layers: [{name,
/// tensors: {role: {shape, data}}}]}. Numbers carry 17 significant digits so
/// a round trip is bit-faithful.
inline std::string model_to_json_text(const ModelParams& m) {
  std::string out = "{\n  \"format_version\": 1,\n  \"architecture_id\": ";
  detail::append_json_string(out, m.architecture_id);
  out += ",\n  \"layers\": ";
  detail::append_layers(out, m.layers, "  ");
  out += "\n}\n";
  return out;
}

inline ModelParams model_from_json_text(const std::string& text,
                                        const std::string& where = "model") {
  const auto j = detail::parse_document(text, where);
  ModelParams m;
  m.architecture_id = j.at("architecture_id").get<std::string>();
  m.layers = detail::layers_from_json(j.at("layers"), where);
  if (m.layers.empty()) throw std::runtime_error(where + ": model has no layers");
  validate_model(m, where);
  return m;
}

inline void save_model(const ModelParams& m, const std::filesystem::path& path) {
  detail::write_file(path, model_to_json_text(m));
}

inline ModelParams load_model(const std::filesystem::path& path) {
  return model_from_json_text(detail::read_file(path), path.string());
}

/// Coefficient document: the model format carrying the per-layer residuals,
/// plus top-level {theta: [[...]], rho}.
inline std::string coefficients_to_json_text(const MergeCoefficients& c,
                                             const std::string& architecture_id) {
  std::string out = "{\n  \"format_version\": 1,\n  \"architecture_id\": ";
  detail::append_json_string(out, architecture_id);
  out += ",\n  \"rho\": ";
  out += format_double(c.rho);
  out += ",\n  \"theta\": [";
  for (std::size_t l = 0; l < c.theta.size(); ++l) {
    if (l) out += ", ";
    out += '[';
    for (std::size_t i = 0; i < c.theta[l].size(); ++i) {
      if (i) out += ", ";
      out += format_double(c.theta[l][i]);
    }
    out += ']';
  }
  out += "],\n  \"layers\": ";
  detail::append_layers(out, c.delta, "  ");
  out += "\n}\n";
  return out;
}

struct StoredCoefficients {
  MergeCoefficients coeffs;
  std::string architecture_id;
};

inline StoredCoefficients coefficients_from_json_text(const std::string& text,
                                                      const std::string& where =
                                                          "coefficients") {
  const auto j = detail::parse_document(text, where);
  StoredCoefficients out;
  out.architecture_id = j.at("architecture_id").get<std::string>();
  out.coeffs.rho = j.at("rho").get<double>();
  for (const auto& row : j.at("theta")) {
    out.coeffs.theta.emplace_back();
    for (const auto& v : row) out.coeffs.theta.back().push_back(v.get<double>());
  }
  out.coeffs.delta = detail::layers_from_json(j.at("layers"), where);
  if (out.coeffs.theta.empty() || out.coeffs.theta.size() != out.coeffs.delta.size()) {
    throw std::runtime_error(where + ": theta and layers must align");
  }
  out.coeffs.n = out.coeffs.theta.front().size();
  for (const auto& row : out.coeffs.theta) {
    if (row.size() != out.coeffs.n) {
      throw std::runtime_error(where + ": ragged theta");
    }
  }
  return out;
}

inline void save_coefficients(const MergeCoefficients& c,
                              const std::string& architecture_id,
                              const std::filesystem::path& path) {
  detail::write_file(path, coefficients_to_json_text(c, architecture_id));
}

inline StoredCoefficients load_coefficients(const std::filesystem::path& path) {
  return coefficients_from_json_text(detail::read_file(path), path.string());
}

/// Report document: {n, T, epsilon, delta, estimates, exact|null,
/// residual_max, feasible}.
inline std::string shapley_report_to_json_text(const ShapleyReport& r) {
  auto array = [](const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ", ";
      s += format_double(v[i]);
    }
    return s + "]";
  };
  std::string out = "{\n  \"format_version\": 1,\n";
  out += "  \"n\": " + std::to_string(r.n) + ",\n";
  out += "  \"T\": " + std::to_string(r.tests) + ",\n";
  out += "  \"epsilon\": " + format_double(r.epsilon) + ",\n";
  out += "  \"delta\": " + format_double(r.delta) + ",\n";
  out += "  \"estimates\": " + array(r.estimates) + ",\n";
  out += "  \"exact\": " + (r.exact ? array(*r.exact) : std::string("null")) + ",\n";
  out += "  \"residual_max\": " + format_double(r.residual_max) + ",\n";
  out += std::string("  \"feasible\": ") + (r.feasible ? "true" : "false") + "\n}\n";
  return out;
}

inline ShapleyReport shapley_report_from_json_text(const std::string& text,
                                                   const std::string& where =
                                                       "report") {
  const auto j = detail::parse_document(text, where);
  ShapleyReport r;
  r.n = j.at("n").get<std::size_t>();
  r.tests = j.at("T").get<std::size_t>();
  r.epsilon = j.at("epsilon").get<double>();
  r.delta = j.at("delta").get<double>();
  for (const auto& v : j.at("estimates")) r.estimates.push_back(v.get<double>());
  if (!j.at("exact").is_null()) {
    std::vector<double> exact;
    for (const auto& v : j.at("exact")) exact.push_back(v.get<double>());
    r.exact = std::move(exact);
  }
  r.residual_max = j.at("residual_max").get<double>();
  r.feasible = j.at("feasible").get<bool>();
  return r;
}

inline void save_shapley_report(const ShapleyReport& r,
                                const std::filesystem::path& path) {
  detail::write_file(path, shapley_report_to_json_text(r));
}

inline ShapleyReport load_shapley_report(const std::filesystem::path& path) {
  return shapley_report_from_json_text(detail::read_file(path), path.string());
}

}  // namespace fedmerge
