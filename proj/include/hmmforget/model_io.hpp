#ifndef HMMFORGET_MODEL_IO_HPP_
#define HMMFORGET_MODEL_IO_HPP_

#include <filesystem>

#include <nlohmann/json.hpp>

#include "hmmforget/model.hpp"

namespace hmmforget {

// Model file layout:
//   {"transition": [[...], ...], "means": [...], "stds": [...], "initial": [...]}
// "initial" is optional and defaults to uniform. Loading runs make_model, so
// a file that violates any model invariant raises ModelError.

HmmModel model_from_json(const nlohmann::json& doc);
nlohmann::json model_to_json(const HmmModel& model);

HmmModel load_model(const std::filesystem::path& path);
void save_model(const HmmModel& model, const std::filesystem::path& path);

}  // namespace hmmforget

#endif  // HMMFORGET_MODEL_IO_HPP_
