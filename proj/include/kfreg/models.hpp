#pragma once

#include <Eigen/Dense>
#include <utility>

#include "kfreg/errors.hpp"
#include "kfreg/kernels.hpp"

namespace kfreg::models {

enum class ModelKind { KPCR, KPLS, LinearPCR };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

/// Eigenvalues at or below this fraction of the largest are treated as rank
/// deficient; the inverse square-root scaling would amplify noise below it.
inline constexpr double kRankTolerance = 1e-10;

/// Fitted regression model in the centered kernel space. Prediction for the
/// kernel kinds is K~_new * dual_coef + bias, with K~_new centered against the
/// stored training statistics. LinearPCR keeps its own primal parameters so it
/// can serve as an independent reference path for the kernel models.
struct TrainedModel {
    ModelKind kind = ModelKind::KPCR;
    Eigen::MatrixXd support_X;  // N x P training spectra
    Eigen::VectorXd dual_coef;  // length N
    double bias = 0.0;          // units of the response
    double response_mean = 0.0;
    kernels::KernelSpec spec;
    kernels::CenteringStats stats;
    int n_components = 0;
    Eigen::VectorXd eigenvalues;   // KPCR only; strictly positive, descending
    Eigen::MatrixXd scores_basis;  // KPCR: U_H Lambda^{-1/2}; KPLS: dual directions
    Eigen::VectorXd feature_mean;  // LinearPCR: training column means
    Eigen::VectorXd linear_coef;   // LinearPCR: primal regression weights
};

struct FitReport {
    Eigen::VectorXd explained_variance_ratio;  // per retained component
    double train_rmse = 0.0;
    double train_r2 = 0.0;  // NaN when the training response is constant
    Eigen::VectorXd train_predictions;
};

/// Kernel principal component regression: eigendecompose the double-centered
/// train kernel, regress the centered response on the leading H score vectors
/// T = K~ U_H Lambda_H^{-1/2}, and fold the solution back into dual
/// coefficients b = U_H Lambda_H^{-1/2} v.
std::pair<TrainedModel, FitReport> fit_kpcr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            const kernels::KernelSpec& spec, int n_components);

/// Kernel PLS with H latent variables. Scores are extracted by the iterative
/// rotation t = K~ u (normalized), c = y~' t, u = y~ c (normalized), with
/// two-sided deflation of K~ and deflation of y~ after each component; the
/// dual coefficients are U (T' K~ U)^{-1} T' y~, so predict() shares the
/// kernel pathway with K-PCR.
std::pair<TrainedModel, FitReport> fit_kpls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            const kernels::KernelSpec& spec, int n_components);

/// Classical principal component regression on column-centered X (SVD route).
/// Reference implementation for the kernel models; prediction is primal.
std::pair<TrainedModel, FitReport> fit_linear_pcr(const Eigen::MatrixXd& X,
                                                  const Eigen::VectorXd& y, int n_components);

Eigen::VectorXd predict(const TrainedModel& model, const Eigen::MatrixXd& X_new);

double rmse(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);
double r2(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);

}  // namespace kfreg::models
