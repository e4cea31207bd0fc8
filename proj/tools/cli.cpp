#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "kfreg/data.hpp"
#include "kfreg/kflow.hpp"
#include "kfreg/model_io.hpp"
#include "kfreg/models.hpp"
#include "kfreg/parallel.hpp"
#include "svg.hpp"

namespace kfreg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Run configuration (JSON document; command-line flags override file values)
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string data_path;
    std::string response = "y";
    std::optional<data::SplitSpec> split;
    std::string standardize = "none";  // none | center | autoscale
    models::ModelKind model_kind = models::ModelKind::KPCR;
    int components = 1;
    kernels::KernelSpec kernel;
    kflow::KFConfig optimizer;
    std::string output_dir = "out";
};

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& context) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return it.key() == k; });
        if (!known) throw ConfigError(context + ": unknown key '" + it.key() + "'");
    }
}

data::SplitSpec parse_split(const json& j) {
    check_keys(j, {"test_fraction", "seed", "strategy", "bins"}, "split");
    data::SplitSpec spec;
    spec.test_fraction = j.value("test_fraction", 0.25);
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
        throw ConfigError("split.test_fraction must lie in (0, 1)");
    spec.seed = j.value("seed", 0ULL);
    const std::string strategy = j.value("strategy", "random");
    if (strategy == "random")
        spec.strategy = data::SplitStrategy::Random;
    else if (strategy == "stratified")
        spec.strategy = data::SplitStrategy::Stratified;
    else
        throw ConfigError("split.strategy must be 'random' or 'stratified'");
    spec.stratify_bins = j.value("bins", 4);
    if (spec.stratify_bins < 1) throw ConfigError("split.bins must be >= 1");
    return spec;
}

kernels::KernelSpec parse_kernel(const json& j) {
    if (!j.is_array() || j.empty())
        throw ConfigError("kernel: expected a non-empty array of terms");
    kernels::KernelSpec spec;
    for (const auto& jt : j) {
        check_keys(jt, {"family", "log_width", "log_amplitude"}, "kernel term");
        if (!jt.contains("family")) throw ConfigError("kernel term: missing 'family'");
        kernels::KernelTerm term;
        term.family = kernels::family_from_name(jt["family"].get<std::string>());
        term.log_width = jt.value("log_width", 0.0);
        term.log_amplitude = jt.value("log_amplitude", 0.0);
        spec.terms.push_back(term);
    }
    return spec;
}

kflow::KFConfig parse_optimizer(const json& j) {
    check_keys(j,
               {"loss", "model_kind", "iterations", "batch_size", "subbatch_count",
                "subbatch_fraction", "learning_rate", "momentum", "fd_step", "jitter", "seed",
                "widths_only"},
               "optimizer");
    kflow::KFConfig cfg;
    cfg.loss = kflow::loss_from_name(j.value("loss", "loo"));
    cfg.regressor = kflow::regressor_from_name(j.value("model_kind", "kpcr"));
    cfg.iterations = j.value("iterations", 100);
    cfg.batch_size = j.value("batch_size", 32);
    cfg.subbatch_count = j.value("subbatch_count", 4);
    cfg.subbatch_fraction = j.value("subbatch_fraction", 0.5);
    cfg.learning_rate = j.value("learning_rate", 0.05);
    if (j.contains("momentum")) {
        const auto& jm = j["momentum"];
        if (jm.is_string()) {
            cfg.momentum = kflow::momentum_from_name(jm.get<std::string>());
        } else {
            check_keys(jm, {"kind", "gamma"}, "optimizer.momentum");
            cfg.momentum = kflow::momentum_from_name(jm.value("kind", "none"));
            cfg.momentum_gamma = jm.value("gamma", 0.9);
        }
    }
    cfg.fd_step = j.value("fd_step", 1e-4);
    if (j.contains("jitter") && !j["jitter"].is_null())
        cfg.jitter = j["jitter"].get<double>();
    cfg.rng_seed = j.value("seed", 0ULL);
    cfg.widths_only = j.value("widths_only", false);
    return cfg;
}

RunConfig parse_run_config(const json& j) {
    check_keys(j, {"data", "split", "standardize", "model", "kernel", "optimizer", "output_dir"},
               "config");
    RunConfig cfg;

    if (!j.contains("data")) throw ConfigError("config: missing 'data' section");
    check_keys(j["data"], {"path", "response"}, "data");
    if (!j["data"].contains("path")) throw ConfigError("config: missing data.path");
    cfg.data_path = j["data"]["path"].get<std::string>();
    cfg.response = j["data"].value("response", "y");

    if (j.contains("split")) cfg.split = parse_split(j["split"]);

    cfg.standardize = j.value("standardize", "none");
    if (cfg.standardize != "none" && cfg.standardize != "center" &&
        cfg.standardize != "autoscale")
        throw ConfigError("config: standardize must be none, center or autoscale");

    if (j.contains("model")) {
        check_keys(j["model"], {"kind", "components"}, "model");
        cfg.model_kind = models::model_kind_from_name(j["model"].value("kind", "kpcr"));
        cfg.components = j["model"].value("components", 1);
        if (cfg.components < 1) throw ConfigError("model.components must be >= 1");
    }

    if (!j.contains("kernel")) throw ConfigError("config: missing 'kernel' section");
    cfg.kernel = parse_kernel(j["kernel"]);

    if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j["optimizer"]);
    cfg.optimizer.n_components = cfg.components;

    cfg.output_dir = j.value("output_dir", "out");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_run_config(j);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const InputError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

struct PreparedData {
    data::Dataset train;
    std::optional<data::Dataset> test;
    std::optional<data::Scaler> scaler;
};

PreparedData prepare(const RunConfig& cfg) {
    PreparedData out;
    data::Dataset full = data::load_csv(cfg.data_path, cfg.response);
    if (cfg.split) {
        auto [train, test] = data::split(full, *cfg.split);
        out.train = std::move(train);
        out.test = std::move(test);
    } else {
        out.train = std::move(full);
    }
    if (cfg.standardize != "none") {
        std::vector<data::Dataset> others;
        if (out.test) others.push_back(*out.test);
        auto std_result =
            data::standardize(out.train, others, cfg.standardize == "autoscale");
        out.train = std::move(std_result.train);
        if (out.test) *out.test = std::move(std_result.others.front());
        out.scaler = std::move(std_result.scaler);
    }
    return out;
}

std::string id_or_index(const std::vector<std::string>& ids, int row) {
    return ids.empty() ? std::to_string(row) : ids[static_cast<std::size_t>(row)];
}

void write_predictions_csv(const std::string& path, const std::vector<std::string>& ids,
                           const Eigen::VectorXd& y_pred,
                           const Eigen::VectorXd* y_true = nullptr) {
    std::ostringstream out;
    out << (y_true ? "id,y_true,y_pred\n" : "id,y_pred\n");
    for (int i = 0; i < y_pred.size(); ++i) {
        out << id_or_index(ids, i) << ',';
        if (y_true) out << format_full((*y_true)(i)) << ',';
        out << format_full(y_pred(i)) << '\n';
    }
    io::write_text_file(path, out.str());
}

std::string trajectory_csv(const kernels::KernelSpec& spec0,
                           const kflow::TrainingTrace& trace) {
    std::ostringstream out;
    out << "iter";
    for (std::size_t t = 0; t < spec0.terms.size(); ++t) {
        const char* fam = kernels::family_name(spec0.terms[t].family);
        out << ",width_" << t << '_' << fam << ",amplitude_" << t << '_' << fam;
    }
    out << '\n';
    for (const auto& rec : trace.records) {
        out << rec.iteration;
        for (Eigen::Index j = 0; j < rec.theta.size(); ++j)
            out << ',' << format_full(std::exp(rec.theta(j)));
        out << '\n';
    }
    return out.str();
}

void write_svg_charts(const std::string& dir, const kernels::KernelSpec& spec0,
                      const kflow::TrainingTrace& trace) {
    std::vector<double> iters;
    std::vector<double> losses;
    for (const auto& rec : trace.records) {
        iters.push_back(rec.iteration);
        losses.push_back(rec.loss);
    }
    io::write_text_file(dir + "/loss.svg",
                        svg_line_chart("loss per iteration", iters, {{"loss", losses}}));

    std::vector<std::pair<std::string, std::vector<double>>> series;
    for (std::size_t t = 0; t < spec0.terms.size(); ++t) {
        const char* fam = kernels::family_name(spec0.terms[t].family);
        std::vector<double> widths, amps;
        for (const auto& rec : trace.records) {
            widths.push_back(std::exp(rec.theta(2 * static_cast<Eigen::Index>(t))));
            amps.push_back(std::exp(rec.theta(2 * static_cast<Eigen::Index>(t) + 1)));
        }
        series.emplace_back(std::string("width ") + fam, std::move(widths));
        series.emplace_back(std::string("amplitude ") + fam, std::move(amps));
    }
    io::write_text_file(dir + "/parameters.svg",
                        svg_line_chart("kernel parameters per iteration", iters, series));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_optimize(const RunConfig& cfg, bool svg) {
    fs::create_directories(cfg.output_dir);
    const PreparedData prepared = prepare(cfg);

    try {
        cfg.optimizer.validate(prepared.train.n());
        cfg.kernel.validate();
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }

    const auto result =
        kflow::optimize(prepared.train.X, prepared.train.y, cfg.kernel, cfg.optimizer);

    io::save_kernel_spec(cfg.output_dir + "/optimized_kernel.json", result.spec);
    io::write_text_file(cfg.output_dir + "/trace.csv", result.trace.to_csv());
    io::write_text_file(cfg.output_dir + "/param_trajectory.csv",
                        trajectory_csv(cfg.kernel, result.trace));
    if (svg) write_svg_charts(cfg.output_dir, cfg.kernel, result.trace);

    if (result.trace.records.empty())
        std::cout << "final loss: n/a (0 iterations)\n";
    else
        std::cout << "final loss: " << format_full(result.trace.records.back().loss) << '\n';
    return kExitOk;
}

int cmd_fit(const RunConfig& cfg, const std::string& kernel_spec_path) {
    fs::create_directories(cfg.output_dir);
    const PreparedData prepared = prepare(cfg);

    kernels::KernelSpec spec = cfg.kernel;
    if (!kernel_spec_path.empty()) spec = io::load_kernel_spec(kernel_spec_path);

    std::pair<models::TrainedModel, models::FitReport> fitted =
        cfg.model_kind == models::ModelKind::KPCR
            ? models::fit_kpcr(prepared.train.X, prepared.train.y, spec, cfg.components)
        : cfg.model_kind == models::ModelKind::KPLS
            ? models::fit_kpls(prepared.train.X, prepared.train.y, spec, cfg.components)
            : models::fit_linear_pcr(prepared.train.X, prepared.train.y, cfg.components);

    io::ModelFile mf;
    mf.model = std::move(fitted.first);
    mf.scaler = prepared.scaler;
    mf.response_column = cfg.response;
    io::save_model(cfg.output_dir + "/model.json", mf);
    io::write_text_file(cfg.output_dir + "/fit_report.json",
                        io::fit_report_to_json(fitted.second).dump(2) + "\n");

    // keep the exact partitions next to the model so evaluation can reuse them
    if (cfg.split) {
        data::write_csv(prepared.train, cfg.output_dir + "/train.csv", cfg.response);
        data::write_csv(*prepared.test, cfg.output_dir + "/test.csv", cfg.response);
    }

    std::cout << "train rmse: " << format_full(fitted.second.train_rmse) << '\n';
    if (std::isfinite(fitted.second.train_r2))
        std::cout << "train r2: " << format_full(fitted.second.train_r2) << '\n';
    return kExitOk;
}

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out_path) {
    const io::ModelFile mf = io::load_model(model_path);
    const data::FeatureTable table = data::load_features_csv(data_path, mf.response_column);
    Eigen::MatrixXd X = table.X;
    if (mf.scaler) X = mf.scaler->apply(X);
    const Eigen::VectorXd y_pred = models::predict(mf.model, X);
    write_predictions_csv(out_path, table.ids, y_pred);
    std::cout << "wrote " << y_pred.size() << " predictions to " << out_path << '\n';
    return kExitOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& out_dir) {
    const io::ModelFile mf = io::load_model(model_path);
    const data::Dataset ds = data::load_csv(data_path, mf.response_column);
    Eigen::MatrixXd X = ds.X;
    if (mf.scaler) X = mf.scaler->apply(X);
    const Eigen::VectorXd y_pred = models::predict(mf.model, X);

    const double r2_value = models::r2(ds.y, y_pred);
    const double rmse_value = models::rmse(ds.y, y_pred);

    fs::create_directories(out_dir);
    write_predictions_csv(out_dir + "/predicted_vs_actual.csv", ds.ids, y_pred, &ds.y);

    std::cout << "r2: " << format_full(r2_value) << '\n';
    std::cout << "rmse: " << format_full(rmse_value) << '\n';
    return kExitOk;
}

int cmd_synth(const std::string& kind, int n, int p, double noise, std::uint64_t seed,
              const std::string& out_file) {
    data::Dataset ds;
    try {
        if (kind == "collinear")
            ds = data::synth_collinear(n, p, noise, seed);
        else if (kind == "nonlinear")
            ds = data::synth_nonlinear(n, p, noise, seed);
        else
            throw ConfigError("synth: kind must be 'collinear' or 'nonlinear'");
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    data::write_csv(ds, out_file, "y");
    std::cout << "wrote " << ds.n() << " x " << ds.p() << " dataset to " << out_file << '\n';
    return kExitOk;
}

int cmd_diag(const std::string& data_path, const std::string& response, int n_pcs,
             const std::string& out_dir) {
    const data::Dataset ds = data::load_csv(data_path, response);
    if (n_pcs < 1) throw ConfigError("diag: --n-pcs must be >= 1");

    Eigen::VectorXd corr;
    try {
        corr = data::pc_response_correlation(ds, n_pcs);
    } catch (const RankError& e) {
        throw ConfigError(e.what());
    }

    fs::create_directories(out_dir);
    std::ostringstream out;
    out << "pc,correlation\n";
    for (int k = 0; k < corr.size(); ++k)
        out << k + 1 << ',' << format_full(corr(k)) << '\n';
    io::write_text_file(out_dir + "/pc_correlation.csv", out.str());

    for (int k = 0; k < corr.size(); ++k)
        std::cout << "pc " << k + 1 << ": r = " << format_full(corr(k)) << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"kernel regression for spectra with kernel-flows parameter learning"};
    app.name("kfreg");
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    int threads = 1;
    app.add_option("--seed", seed_override, "override the optimizer / generator seed");
    app.add_option("--out", out_override, "override the output directory");
    app.add_option("--threads", threads, "worker threads for kernel assembly and loss folds")
        ->check(CLI::PositiveNumber);

    auto* optimize = app.add_subcommand("optimize", "learn kernel parameters on a dataset");
    bool svg = false;
    optimize->add_option("--config", config_path, "run configuration JSON")->required();
    optimize->add_flag("--svg", svg, "also render simple SVG charts");

    auto* fit = app.add_subcommand("fit", "fit a model with a fixed kernel spec");
    std::string kernel_spec_path;
    fit->add_option("--config", config_path, "run configuration JSON")->required();
    fit->add_option("--kernel-spec", kernel_spec_path,
                    "kernel spec JSON (e.g. the optimize output); overrides the config kernel");

    auto* predict = app.add_subcommand("predict", "predict responses for new spectra");
    std::string model_path, data_path, out_file;
    predict->add_option("--model", model_path, "model JSON path")->required();
    predict->add_option("--data", data_path, "input CSV")->required();
    predict->add_option("--out-file", out_file, "output CSV path")->required();

    auto* evaluate = app.add_subcommand("evaluate", "report R^2 / RMSE of a model on a dataset");
    evaluate->add_option("--model", model_path, "model JSON path")->required();
    evaluate->add_option("--data", data_path, "input CSV with the response column")->required();

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_kind = "nonlinear";
    int synth_n = 120, synth_p = 5;
    double synth_noise = 0.01;
    std::uint64_t synth_seed = 0;
    synth->add_option("--kind", synth_kind, "collinear | nonlinear");
    synth->add_option("--n", synth_n, "sample count");
    synth->add_option("--p", synth_p, "band count");
    synth->add_option("--noise", synth_noise, "noise standard deviation");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out-file", out_file, "output CSV path")->required();

    auto* diag = app.add_subcommand("diag", "PC-vs-response correlation table");
    std::string diag_response = "y";
    int n_pcs = 3;
    diag->add_option("--data", data_path, "input CSV")->required();
    diag->add_option("--response", diag_response, "response column name");
    diag->add_option("--n-pcs", n_pcs, "number of principal components");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help() << '\n';
            return kExitOk;
        }
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        set_thread_count(threads);

        if (*optimize || *fit) {
            RunConfig cfg = load_run_config(config_path);
            if (seed_override) cfg.optimizer.rng_seed = *seed_override;
            if (out_override) cfg.output_dir = *out_override;
            return *optimize ? cmd_optimize(cfg, svg) : cmd_fit(cfg, kernel_spec_path);
        }
        if (*predict) return cmd_predict(model_path, data_path, out_file);
        if (*evaluate) {
            return cmd_evaluate(model_path, data_path, out_override.value_or("out"));
        }
        if (*synth) {
            if (seed_override) synth_seed = *seed_override;
            return cmd_synth(synth_kind, synth_n, synth_p, synth_noise, synth_seed, out_file);
        }
        if (*diag) return cmd_diag(data_path, diag_response, n_pcs, out_override.value_or("out"));

        std::cerr << "error: no command given\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const RankError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const InputError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const kflow::OptimizeError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace kfreg::cli
