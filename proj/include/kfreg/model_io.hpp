#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "kfreg/data.hpp"
#include "kfreg/models.hpp"

namespace kfreg::io {

inline constexpr int kSchemaVersion = 1;

nlohmann::json kernel_spec_to_json(const kernels::KernelSpec& spec);
kernels::KernelSpec kernel_spec_from_json(const nlohmann::json& j);
void save_kernel_spec(const std::string& path, const kernels::KernelSpec& spec);
kernels::KernelSpec load_kernel_spec(const std::string& path);

/// On-disk model document: the trained model, the preprocessing scaler when
/// one was fitted, and the response column it was trained against. Floating
/// point values round-trip exactly through the JSON encoding.
struct ModelFile {
    models::TrainedModel model;
    std::optional<data::Scaler> scaler;
    std::string response_column = "y";
};

nlohmann::json model_to_json(const ModelFile& mf);
ModelFile model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const ModelFile& mf);
ModelFile load_model(const std::string& path);

nlohmann::json fit_report_to_json(const models::FitReport& report);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace kfreg::io
