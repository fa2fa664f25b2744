#include "hmmforget/model_io.hpp"

#include <fstream>

namespace hmmforget {

namespace {

Vector vector_from_json(const nlohmann::json& arr, const char* name) {
  if (!arr.is_array()) throw ModelError(std::string("model file: \"") + name + "\" must be an array");
  Vector v(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ModelError(std::string("model file: \"") + name + "\" must hold numbers");
    v[static_cast<Index>(i)] = arr[i].get<double>();
  }
  return v;
}

nlohmann::json vector_to_json(const Vector& v) {
  auto arr = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

HmmModel model_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ModelError("model file: top level must be an object");
  for (const char* key : {"transition", "means", "stds"})
    if (!doc.contains(key)) throw ModelError(std::string("model file: missing \"") + key + "\"");

  const auto& rows = doc.at("transition");
  if (!rows.is_array() || rows.empty()) throw ModelError("model file: \"transition\" must be a non-empty array");
  const auto k = static_cast<Index>(rows.size());
  Matrix transition(k, k);
  for (Index i = 0; i < k; ++i) {
    Vector row = vector_from_json(rows[static_cast<std::size_t>(i)], "transition");
    if (row.size() != k) throw ModelError("model file: transition must be square");
    transition.row(i) = row.transpose();
  }
  Vector initial;
  if (doc.contains("initial")) initial = vector_from_json(doc.at("initial"), "initial");
  return make_model(std::move(transition), vector_from_json(doc.at("means"), "means"),
                    vector_from_json(doc.at("stds"), "stds"), std::move(initial));
}

nlohmann::json model_to_json(const HmmModel& model) {
  nlohmann::json doc;
  auto rows = nlohmann::json::array();
  for (Index i = 0; i < model.states(); ++i) rows.push_back(vector_to_json(model.transition.row(i).transpose()));
  doc["transition"] = std::move(rows);
  doc["means"] = vector_to_json(model.means);
  doc["stds"] = vector_to_json(model.stds);
  doc["initial"] = vector_to_json(model.initial);
  return doc;
}

HmmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError("model file " + path.string() + ": " + e.what());
  }
  return model_from_json(doc);
}

void save_model(const HmmModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out << model_to_json(model).dump(2) << '\n';
}

}  // namespace hmmforget
