#include "kfreg/model_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace kfreg::io {

using nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

json matrix_to_json(const MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd matrix_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw ConfigError(std::string(what) + ": expected a nested array");
    const auto n_rows = static_cast<Eigen::Index>(j.size());
    if (n_rows == 0) return MatrixXd(0, 0);
    const auto n_cols = static_cast<Eigen::Index>(j.front().size());
    MatrixXd m(n_rows, n_cols);
    for (Eigen::Index i = 0; i < n_rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n_cols)
            throw ConfigError(std::string(what) + ": ragged matrix rows");
        for (Eigen::Index c = 0; c < n_cols; ++c)
            m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

json vector_to_json(const VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

VectorXd vector_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw ConfigError(std::string(what) + ": expected an array");
    VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    return j;
}

}  // namespace

json kernel_spec_to_json(const kernels::KernelSpec& spec) {
    json terms = json::array();
    for (const auto& t : spec.terms)
        terms.push_back({{"family", kernels::family_name(t.family)},
                         {"log_width", t.log_width},
                         {"log_amplitude", t.log_amplitude}});
    return {{"schema_version", kSchemaVersion}, {"terms", std::move(terms)}};
}

kernels::KernelSpec kernel_spec_from_json(const json& j) {
    if (!j.contains("terms") || !j["terms"].is_array() || j["terms"].empty())
        throw ConfigError("kernel spec: needs a non-empty 'terms' array");
    kernels::KernelSpec spec;
    for (const auto& jt : j["terms"]) {
        kernels::KernelTerm term;
        term.family = kernels::family_from_name(jt.at("family").get<std::string>());
        term.log_width = jt.value("log_width", 0.0);
        term.log_amplitude = jt.value("log_amplitude", 0.0);
        spec.terms.push_back(term);
    }
    spec.validate();
    return spec;
}

void save_kernel_spec(const std::string& path, const kernels::KernelSpec& spec) {
    write_text_file(path, kernel_spec_to_json(spec).dump(2) + "\n");
}

kernels::KernelSpec load_kernel_spec(const std::string& path) {
    const json j = parse_file(path);
    if (j.value("schema_version", 0) != kSchemaVersion)
        throw ConfigError(path + ": unsupported kernel spec schema version");
    try {
        return kernel_spec_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

json model_to_json(const ModelFile& mf) {
    const auto& m = mf.model;
    // LinearPCR carries no kernel; an empty spec serializes as null
    json j{{"schema_version", kSchemaVersion},
           {"kind", models::model_kind_name(m.kind)},
           {"kernel", m.spec.terms.empty() ? json(nullptr) : kernel_spec_to_json(m.spec)},
           {"support_x", matrix_to_json(m.support_X)},
           {"dual_coef", vector_to_json(m.dual_coef)},
           {"bias", m.bias},
           {"response_mean", m.response_mean},
           {"n_components", m.n_components},
           {"eigenvalues", vector_to_json(m.eigenvalues)},
           {"scores_basis", matrix_to_json(m.scores_basis)},
           {"centering",
            {{"n_train", m.stats.n_train},
             {"train_kernel", matrix_to_json(m.stats.train_kernel)},
             {"train_row_mean", vector_to_json(m.stats.train_row_mean)}}},
           {"feature_mean", vector_to_json(m.feature_mean)},
           {"linear_coef", vector_to_json(m.linear_coef)},
           {"response_column", mf.response_column}};
    if (mf.scaler)
        j["scaler"] = {{"mean", vector_to_json(mf.scaler->mean)},
                       {"scale", vector_to_json(mf.scaler->scale)}};
    else
        j["scaler"] = nullptr;
    return j;
}

ModelFile model_from_json(const json& j) {
    try {
        ModelFile mf;
        auto& m = mf.model;
        m.kind = models::model_kind_from_name(j.at("kind").get<std::string>());
        if (!j.at("kernel").is_null()) m.spec = kernel_spec_from_json(j.at("kernel"));
        m.support_X = matrix_from_json(j.at("support_x"), "support_x");
        m.dual_coef = vector_from_json(j.at("dual_coef"), "dual_coef");
        m.bias = j.at("bias").get<double>();
        m.response_mean = j.at("response_mean").get<double>();
        m.n_components = j.at("n_components").get<int>();
        m.eigenvalues = vector_from_json(j.at("eigenvalues"), "eigenvalues");
        m.scores_basis = matrix_from_json(j.at("scores_basis"), "scores_basis");
        const auto& c = j.at("centering");
        m.stats.n_train = c.at("n_train").get<int>();
        m.stats.train_kernel = matrix_from_json(c.at("train_kernel"), "train_kernel");
        m.stats.train_row_mean = vector_from_json(c.at("train_row_mean"), "train_row_mean");
        m.feature_mean = vector_from_json(j.at("feature_mean"), "feature_mean");
        m.linear_coef = vector_from_json(j.at("linear_coef"), "linear_coef");
        mf.response_column = j.value("response_column", "y");
        if (j.contains("scaler") && !j["scaler"].is_null()) {
            data::Scaler s;
            s.mean = vector_from_json(j["scaler"].at("mean"), "scaler.mean");
            s.scale = vector_from_json(j["scaler"].at("scale"), "scaler.scale");
            mf.scaler = std::move(s);
        }
        return mf;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model file: ") + e.what());
    }
}

void save_model(const std::string& path, const ModelFile& mf) {
    write_text_file(path, model_to_json(mf).dump(2) + "\n");
}

ModelFile load_model(const std::string& path) {
    const json j = parse_file(path);
    const int version = j.value("schema_version", -1);
    if (version != kSchemaVersion) {
        std::ostringstream msg;
        msg << path << ": model schema version " << version << " is not supported (expected "
            << kSchemaVersion << ")";
        throw ConfigError(msg.str());
    }
    return model_from_json(j);
}

json fit_report_to_json(const models::FitReport& report) {
    json j{{"explained_variance_ratio", vector_to_json(report.explained_variance_ratio)},
           {"train_rmse", report.train_rmse},
           {"train_predictions", vector_to_json(report.train_predictions)}};
    if (std::isfinite(report.train_r2))
        j["train_r2"] = report.train_r2;
    else
        j["train_r2"] = nullptr;  // undefined for a constant training response
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
    if (!out) throw DataError("failed while writing " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace kfreg::io
