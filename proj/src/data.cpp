#include "kfreg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kfreg/rng.hpp"

namespace kfreg::data {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void Dataset::validate() const {
    if (n() < 3) throw DataError("dataset needs at least 3 samples");
    if (p() < 1) throw DataError("dataset needs at least one spectral column");
    if (y.size() != X.rows()) throw DataError("dataset: X and y disagree on the sample count");
    if (!X.allFinite() || !y.allFinite()) throw DataError("dataset contains non-finite values");
    if (!wavelengths.empty()) {
        if (static_cast<int>(wavelengths.size()) != p())
            throw DataError("dataset: wavelength count does not match the spectral columns");
        for (std::size_t j = 1; j < wavelengths.size(); ++j)
            if (!(wavelengths[j] > wavelengths[j - 1]))
                throw DataError("dataset: wavelengths must be strictly increasing");
    }
    if (!ids.empty() && static_cast<int>(ids.size()) != n())
        throw DataError("dataset: id count does not match the sample count");
}

Dataset load_csv(const std::string& path, const std::string& response_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    std::vector<std::string> header = split_line(line);
    for (auto& h : header) h = trim(h);

    int response_idx = -1;
    int id_idx = -1;
    std::vector<int> spectral_cols;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        if (header[static_cast<std::size_t>(c)] == response_column)
            response_idx = c;
        else if (header[static_cast<std::size_t>(c)] == "id")
            id_idx = c;
        else
            spectral_cols.push_back(c);
    }
    if (response_idx < 0)
        throw DataError(path + ": response column '" + response_column + "' not found");
    if (spectral_cols.empty()) throw DataError(path + ": no spectral columns");

    std::vector<std::vector<double>> rows;
    std::vector<double> y_values;
    std::vector<std::string> ids;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size()) {
            std::ostringstream msg;
            msg << path << ": row " << line_no << " has " << cells.size() << " cells, expected "
                << header.size();
            throw DataError(msg.str());
        }
        std::vector<double> row;
        row.reserve(spectral_cols.size());
        auto parse_cell = [&](int c) {
            double v = 0.0;
            if (!parse_double(cells[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
                std::ostringstream msg;
                msg << path << ": row " << line_no << ", column '"
                    << header[static_cast<std::size_t>(c)] << "': cannot use value '"
                    << trim(cells[static_cast<std::size_t>(c)]) << "'";
                throw DataError(msg.str());
            }
            return v;
        };
        for (int c : spectral_cols) row.push_back(parse_cell(c));
        y_values.push_back(parse_cell(response_idx));
        if (id_idx >= 0) ids.push_back(trim(cells[static_cast<std::size_t>(id_idx)]));
        rows.push_back(std::move(row));
    }

    Dataset ds;
    ds.X.resize(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(spectral_cols.size()));
    ds.y.resize(static_cast<Eigen::Index>(y_values.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            ds.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        ds.y(static_cast<Eigen::Index>(i)) = y_values[i];
    }
    ds.ids = std::move(ids);

    // numeric band headers become the wavelength axis
    std::vector<double> wl;
    wl.reserve(spectral_cols.size());
    bool all_numeric = true;
    for (int c : spectral_cols) {
        double v = 0.0;
        if (!parse_double(header[static_cast<std::size_t>(c)], v)) {
            all_numeric = false;
            break;
        }
        wl.push_back(v);
    }
    if (all_numeric) ds.wavelengths = std::move(wl);

    ds.validate();
    return ds;
}

void write_csv(const Dataset& ds, const std::string& path, const std::string& response_column) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write data file: " + path);

    const bool with_ids = !ds.ids.empty();
    if (with_ids) out << "id,";
    for (int j = 0; j < ds.p(); ++j) {
        if (!ds.wavelengths.empty())
            out << format_double(ds.wavelengths[static_cast<std::size_t>(j)]);
        else
            out << "band_" << j;
        out << ',';
    }
    out << response_column << '\n';

    for (int i = 0; i < ds.n(); ++i) {
        if (with_ids) out << ds.ids[static_cast<std::size_t>(i)] << ',';
        for (int j = 0; j < ds.p(); ++j) out << format_double(ds.X(i, j)) << ',';
        out << format_double(ds.y(i)) << '\n';
    }
    if (!out) throw DataError("failed while writing " + path);
}

FeatureTable load_features_csv(const std::string& path, const std::string& drop_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    std::vector<std::string> header = split_line(line);
    for (auto& h : header) h = trim(h);

    int id_idx = -1;
    std::vector<int> feature_cols;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const auto& name = header[static_cast<std::size_t>(c)];
        if (name == "id")
            id_idx = c;
        else if (!drop_column.empty() && name == drop_column)
            continue;
        else
            feature_cols.push_back(c);
    }
    if (feature_cols.empty()) throw DataError(path + ": no feature columns");

    std::vector<std::vector<double>> rows;
    std::vector<std::string> ids;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size()) {
            std::ostringstream msg;
            msg << path << ": row " << line_no << " has " << cells.size() << " cells, expected "
                << header.size();
            throw DataError(msg.str());
        }
        std::vector<double> row;
        for (int c : feature_cols) {
            double v = 0.0;
            if (!parse_double(cells[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
                std::ostringstream msg;
                msg << path << ": row " << line_no << ", column '"
                    << header[static_cast<std::size_t>(c)] << "': cannot use value '"
                    << trim(cells[static_cast<std::size_t>(c)]) << "'";
                throw DataError(msg.str());
            }
            row.push_back(v);
        }
        if (id_idx >= 0) ids.push_back(trim(cells[static_cast<std::size_t>(id_idx)]));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path + ": no data rows");

    FeatureTable table;
    table.X.resize(static_cast<Eigen::Index>(rows.size()),
                   static_cast<Eigen::Index>(feature_cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            table.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    table.ids = std::move(ids);
    return table;
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<int>& rows) {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), ds.X.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.X.row(static_cast<Eigen::Index>(i)) = ds.X.row(rows[i]);
        out.y(static_cast<Eigen::Index>(i)) = ds.y(rows[i]);
    }
    out.wavelengths = ds.wavelengths;
    if (!ds.ids.empty()) {
        out.ids.reserve(rows.size());
        for (int r : rows) out.ids.push_back(ds.ids[static_cast<std::size_t>(r)]);
    }
    return out;
}

}  // namespace

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
    ds.validate();
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
        throw InputError("split: test_fraction must lie in (0, 1)");
    const int n = ds.n();

    std::vector<int> test_rows;
    Rng rng(spec.seed);

    if (spec.strategy == SplitStrategy::Random) {
        int n_test = static_cast<int>(std::llround(spec.test_fraction * n));
        n_test = std::max(1, std::min(n - 1, n_test));
        auto perm = rng.permutation(n);
        test_rows.assign(perm.begin(), perm.begin() + n_test);
    } else {
        if (spec.stratify_bins < 1) throw InputError("split: stratify_bins must be >= 1");
        const double lo = ds.y.minCoeff();
        const double hi = ds.y.maxCoeff();
        const double width = hi - lo;
        std::vector<std::vector<int>> bins(static_cast<std::size_t>(spec.stratify_bins));
        for (int i = 0; i < n; ++i) {
            int b = width > 0.0 ? static_cast<int>((ds.y(i) - lo) / width * spec.stratify_bins)
                                : 0;
            b = std::max(0, std::min(spec.stratify_bins - 1, b));
            bins[static_cast<std::size_t>(b)].push_back(i);
        }
        for (auto& members : bins) {
            if (members.empty()) continue;
            // shuffle the bin, then take the proportional share
            const auto order = rng.permutation(static_cast<int>(members.size()));
            const int share =
                static_cast<int>(std::llround(spec.test_fraction * members.size()));
            for (int k = 0; k < share; ++k)
                test_rows.push_back(members[static_cast<std::size_t>(order[k])]);
        }
        // keep both partitions non-empty
        if (test_rows.empty()) {
            auto perm = rng.permutation(n);
            test_rows.push_back(perm.front());
        }
        if (static_cast<int>(test_rows.size()) == n) test_rows.pop_back();
    }

    std::sort(test_rows.begin(), test_rows.end());
    std::vector<char> is_test(static_cast<std::size_t>(n), 0);
    for (int r : test_rows) is_test[static_cast<std::size_t>(r)] = 1;
    std::vector<int> train_rows;
    train_rows.reserve(static_cast<std::size_t>(n) - test_rows.size());
    for (int i = 0; i < n; ++i)
        if (!is_test[static_cast<std::size_t>(i)]) train_rows.push_back(i);

    return {take_rows(ds, train_rows), take_rows(ds, test_rows)};
}

MatrixXd Scaler::apply(const MatrixXd& X) const {
    if (X.cols() != mean.size())
        throw InputError("scaler: column count does not match the fitted scaler");
    return (X.rowwise() - mean.transpose()).array().rowwise() /
           scale.transpose().array();
}

StandardizeResult standardize(const Dataset& train, const std::vector<Dataset>& others,
                              bool with_scale) {
    train.validate();
    const int p = train.p();

    Scaler scaler;
    scaler.mean = train.X.colwise().mean();
    scaler.scale = Eigen::VectorXd::Ones(p);
    if (with_scale) {
        const MatrixXd centered = train.X.rowwise() - scaler.mean.transpose();
        for (int j = 0; j < p; ++j) {
            const double sd =
                std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(train.n()));
            // near-constant columns are centered but not divided
            if (sd > 1e-12 * std::max(1.0, std::abs(scaler.mean(j)))) scaler.scale(j) = sd;
        }
    }

    StandardizeResult out;
    out.scaler = scaler;
    out.train = train;
    out.train.X = scaler.apply(train.X);
    out.others.reserve(others.size());
    for (const auto& ds : others) {
        Dataset t = ds;
        t.X = scaler.apply(ds.X);
        out.others.push_back(std::move(t));
    }
    return out;
}

VectorXd pc_response_correlation(const Dataset& ds, int n_pcs) {
    ds.validate();
    if (n_pcs < 1) throw InputError("pc_response_correlation: n_pcs must be >= 1");
    const double y_var = (ds.y.array() - ds.y.mean()).matrix().squaredNorm();
    if (y_var <= 0.0)
        throw UndefinedMetricError("pc correlation is undefined for a constant response");

    const VectorXd mu = ds.X.colwise().mean();
    const MatrixXd Xc = ds.X.rowwise() - mu.transpose();
    Eigen::BDCSVD<MatrixXd> svd(Xc, Eigen::ComputeThinU);
    const VectorXd& sv = svd.singularValues();
    const double s_max_sq = sv.size() > 0 ? sv(0) * sv(0) : 0.0;
    int rank = 0;
    while (rank < sv.size() && sv(rank) * sv(rank) > 1e-10 * s_max_sq) ++rank;
    if (s_max_sq <= 0.0) rank = 0;
    if (n_pcs > rank) {
        std::ostringstream msg;
        msg << "requested " << n_pcs << " principal components but the centered spectra have rank "
            << rank;
        throw RankError(msg.str(), rank);
    }

    const VectorXd yc = ds.y.array() - ds.y.mean();
    VectorXd corr(n_pcs);
    for (int k = 0; k < n_pcs; ++k) {
        const VectorXd score = svd.matrixU().col(k) * sv(k);
        const double sc = score.array().matrix().squaredNorm();  // scores are already centered
        corr(k) = score.dot(yc) / std::sqrt(sc * y_var);
    }
    return corr;
}

int centered_rank(const Dataset& ds) {
    ds.validate();
    const VectorXd mu = ds.X.colwise().mean();
    const MatrixXd Xc = ds.X.rowwise() - mu.transpose();
    Eigen::BDCSVD<MatrixXd> svd(Xc);
    const VectorXd& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= 0.0) return 0;
    const double s_max_sq = sv(0) * sv(0);
    int rank = 0;
    while (rank < sv.size() && sv(rank) * sv(rank) > 1e-10 * s_max_sq) ++rank;
    return rank;
}

Dataset synth_collinear(int n, int p, double noise, std::uint64_t seed) {
    if (n < 3 || p < 1) throw InputError("synth_collinear: need n >= 3 and p >= 1");
    if (noise < 0.0) throw InputError("synth_collinear: noise must be >= 0");
    Rng rng(seed);

    Dataset ds;
    ds.wavelengths.resize(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) ds.wavelengths[static_cast<std::size_t>(j)] = 450.0 + 4.0 * j;

    // smooth orthonormal directions from Gaussian bumps over the band axis
    const int n_dirs = std::min(p, 4);
    MatrixXd dirs(p, n_dirs);
    for (int m = 0; m < n_dirs; ++m) {
        const double center = 450.0 + 4.0 * (p - 1) * (0.15 + 0.7 * m / std::max(1, n_dirs - 1));
        const double width = 4.0 * p * (0.12 + 0.05 * m);
        for (int j = 0; j < p; ++j) {
            const double d = ds.wavelengths[static_cast<std::size_t>(j)] - center;
            dirs(j, m) = std::exp(-d * d / (2.0 * width * width));
        }
    }
    for (int m = 0; m < n_dirs; ++m) {  // Gram-Schmidt
        for (int l = 0; l < m; ++l) dirs.col(m) -= dirs.col(l).dot(dirs.col(m)) * dirs.col(l);
        const double norm = dirs.col(m).norm();
        if (norm > 0.0) dirs.col(m) /= norm;
    }

    MatrixXd scores(n, n_dirs);
    for (int i = 0; i < n; ++i)
        for (int m = 0; m < n_dirs; ++m)
            scores(i, m) = rng.normal() * 5.0 * std::pow(0.25, m);

    ds.X = scores * dirs.transpose();
    ds.X.rowwise() += 0.5 * Eigen::RowVectorXd::Ones(p);  // baseline reflectance level

    ds.y.resize(n);
    for (int i = 0; i < n; ++i) ds.y(i) = scores(i, 0) + noise * rng.normal();
    ds.validate();
    return ds;
}

Dataset synth_nonlinear(int n, int p, double noise, std::uint64_t seed, double width) {
    if (n < 3 || p < 1) throw InputError("synth_nonlinear: need n >= 3 and p >= 1");
    if (noise < 0.0 || width <= 0.0)
        throw InputError("synth_nonlinear: need noise >= 0 and width > 0");
    Rng rng(seed);

    Dataset ds;
    ds.X.resize(n, p);
    ds.y.resize(n);
    for (int i = 0; i < n; ++i) {
        double dist_sq = 0.0;
        for (int j = 0; j < p; ++j) {
            const double v = rng.uniform(-3.0, 3.0);
            ds.X(i, j) = v;
            dist_sq += v * v;  // bump centered at the origin
        }
        ds.y(i) = std::exp(-dist_sq / (2.0 * width * width)) + noise * rng.normal();
    }
    ds.validate();
    return ds;
}

}  // namespace kfreg::data
