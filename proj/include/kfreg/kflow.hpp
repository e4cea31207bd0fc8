#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kfreg/errors.hpp"
#include "kfreg/kernels.hpp"

namespace kfreg::kflow {

enum class LossKind { NormRatio, LooPredictionError };
enum class RegressorKind { KPCR, KPLS, GPRWeights };
enum class MomentumKind { None, Polyak, Nesterov };

const char* loss_name(LossKind k);
LossKind loss_from_name(const std::string& name);
const char* regressor_name(RegressorKind k);
RegressorKind regressor_from_name(const std::string& name);
const char* momentum_name(MomentumKind k);
MomentumKind momentum_from_name(const std::string& name);

/// Optimizer settings. jitter is the ridge added to the norm-ratio linear
/// solves; empty means automatic (1e-8 * trace(K)/N per solve). Learnable
/// parameters are the log-widths and log-amplitudes; widths_only freezes the
/// amplitudes.
struct KFConfig {
    LossKind loss = LossKind::LooPredictionError;
    RegressorKind regressor = RegressorKind::KPCR;
    int iterations = 100;
    int batch_size = 32;
    int subbatch_count = 4;          // NormRatio only
    double subbatch_fraction = 0.5;  // NormRatio only
    double learning_rate = 0.05;
    MomentumKind momentum = MomentumKind::None;
    double momentum_gamma = 0.9;
    double fd_step = 1e-4;
    std::optional<double> jitter;
    std::uint64_t rng_seed = 0;
    int n_components = 1;
    bool widths_only = false;

    void validate(int n_samples) const;
    int subbatch_size() const;
};

struct TraceRecord {
    int iteration = 0;  // 1-based
    double loss = 0.0;
    Eigen::VectorXd theta;
    Eigen::VectorXd gradient;
    double wall_ms = 0.0;
};

struct TrainingTrace {
    int n_params = 0;
    std::vector<TraceRecord> records;

    /// Columns: iter,loss,theta_0..k,grad_0..k,ms. The timing column can be
    /// dropped for byte-for-byte comparable output.
    std::string to_csv(bool include_timing = true) const;
};

/// Aborted optimization carrying everything recorded up to the failure.
struct OptimizeError : NumericError {
    OptimizeError(const std::string& msg, TrainingTrace trace_so_far, int iter)
        : NumericError(msg), trace(std::move(trace_so_far)), iteration(iter) {}
    TrainingTrace trace;
    int iteration;
};

/// Leave-one-out prediction-error loss over the given samples: each sample is
/// held out once, the regressor is refitted on the rest with H components, and
/// the absolute held-out residuals are summed. jitter only affects the
/// GPRWeights regressor (plain kernel interpolation); the latent regressors
/// go through the eigendecomposition path and need none.
double loo_loss(const kernels::KernelSpec& spec, const Eigen::MatrixXd& X,
                const Eigen::VectorXd& y, int n_components, RegressorKind regressor,
                double jitter = 0.0);

/// Original batch/sub-batch norm-ratio loss: rho = 1 - n_sub / n_batch with
/// n = b' K b the squared RKHS norm of the fitted regressor, averaged over the
/// sub-batches. jitter < 0 selects the automatic ridge.
double norm_ratio_loss(const kernels::KernelSpec& spec, const Eigen::MatrixXd& X_batch,
                       const Eigen::VectorXd& y_batch,
                       const std::vector<std::vector<int>>& subbatch_indices,
                       RegressorKind regressor, double jitter, int n_components);

/// Central finite differences: g_j = (f(theta + h e_j) - f(theta - h e_j)) / 2h.
/// The loss callable must be deterministic; every evaluation of one gradient
/// reuses whatever batch the caller fixed.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& loss_fn,
                            const Eigen::VectorXd& theta, double step);

struct OptimizeResult {
    kernels::KernelSpec spec;
    TrainingTrace trace;
};

/// Stochastic kernel-parameter learning: per iteration draw a batch from a
/// seeded permutation, evaluate the configured loss, take a central-difference
/// gradient in log-parameter space, and update by SGD or the configured
/// momentum rule. Deterministic given the seed.
OptimizeResult optimize(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const kernels::KernelSpec& spec0, const KFConfig& config);

}  // namespace kfreg::kflow
