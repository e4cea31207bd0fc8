#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kfreg/errors.hpp"

namespace kfreg::data {

/// Spectra matrix with response vector and optional per-band / per-sample
/// metadata. Rows are samples, columns are spectral bands.
struct Dataset {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<double> wavelengths;  // empty when band headers are not numeric
    std::vector<std::string> ids;     // empty when the file carries no id column

    int n() const { return static_cast<int>(X.rows()); }
    int p() const { return static_cast<int>(X.cols()); }
    void validate() const;
};

enum class SplitStrategy { Random, Stratified };

struct SplitSpec {
    double test_fraction = 0.25;
    std::uint64_t seed = 0;
    SplitStrategy strategy = SplitStrategy::Random;
    int stratify_bins = 4;  // Stratified only
};

/// Loads a comma-delimited file with a mandatory header row. All columns other
/// than the response and an optional "id" column are spectra; when every
/// spectral header parses as a number the headers become the wavelength axis.
Dataset load_csv(const std::string& path, const std::string& response_column);

/// Writes a dataset back to CSV with full double precision, so a reload is
/// value-exact.
void write_csv(const Dataset& ds, const std::string& path,
               const std::string& response_column = "y");

/// Feature-only view of a CSV (for prediction inputs that may lack the
/// response). drop_column, when non-empty and present, is removed.
struct FeatureTable {
    Eigen::MatrixXd X;
    std::vector<std::string> ids;
};
FeatureTable load_features_csv(const std::string& path, const std::string& drop_column = "");

/// Deterministic, disjoint, exhaustive train/test split.
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

/// Column-wise affine transform fitted on training data. scale is all ones in
/// center-only mode; zero-variance columns keep scale 1.
struct Scaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

struct StandardizeResult {
    Dataset train;
    std::vector<Dataset> others;
    Scaler scaler;
};

/// Fits the scaler on train only and applies it to train and every other
/// dataset. with_scale=false centers only (the default for reflectance
/// spectra, which share units across bands).
StandardizeResult standardize(const Dataset& train, const std::vector<Dataset>& others,
                              bool with_scale = false);

/// Pearson correlation between each leading principal-component score of
/// column-centered X and the response. Signs are reported as-is.
Eigen::VectorXd pc_response_correlation(const Dataset& ds, int n_pcs);

/// Rank of the column-centered spectra matrix under the SVD tolerance used by
/// pc_response_correlation.
int centered_rank(const Dataset& ds);

/// Smooth low-rank spectra whose response is a linear functional dominated by
/// the first principal direction.
Dataset synth_collinear(int n, int p, double noise, std::uint64_t seed);

/// Gaussian-bump response y = exp(-||x - c||^2 / (2 width^2)) + noise on
/// uniformly scattered inputs; width defaults to 2.
Dataset synth_nonlinear(int n, int p, double noise, std::uint64_t seed, double width = 2.0);

}  // namespace kfreg::data
