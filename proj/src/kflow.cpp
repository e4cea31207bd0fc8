#include "kfreg/kflow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "kfreg/parallel.hpp"
#include "kfreg/rng.hpp"

namespace kfreg::kflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kRankTol = 1e-10;

/// Dual coefficients of a kernel-PCA regression fitted directly on a centered
/// kernel: top-H eigenpairs, scores T = K~ U L^{-1/2}, least squares in score
/// space, folded back to b = U L^{-1/2} v.
VectorXd kpcr_dual(const MatrixXd& Kc, const VectorXd& y_centered, int H,
                   const std::string& label) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Kc);
    if (eig.info() != Eigen::Success)
        throw NumericError(label + ": eigendecomposition failed");
    const VectorXd& ev = eig.eigenvalues();  // ascending
    const auto n = Kc.rows();

    const double lambda_max = ev(n - 1);
    int usable = 0;
    while (usable < n && ev(n - 1 - usable) > kRankTol * lambda_max) ++usable;
    if (lambda_max <= 0.0) usable = 0;
    if (H > usable) {
        std::ostringstream msg;
        msg << label << ": requested " << H << " components but the rank supports at most "
            << usable;
        throw RankError(msg.str(), usable);
    }

    MatrixXd basis(n, H);
    for (int k = 0; k < H; ++k)
        basis.col(k) = eig.eigenvectors().col(n - 1 - k) / std::sqrt(ev(n - 1 - k));
    const MatrixXd T = Kc * basis;
    const VectorXd v = T.colPivHouseholderQr().solve(y_centered);
    return basis * v;
}

/// Dual coefficients of a kernel-PLS regression on a centered kernel, same
/// latent rotation as the model-fitting path but self-contained.
VectorXd kpls_dual(const MatrixXd& Kc, const VectorXd& y_centered, int H,
                   const std::string& label) {
    const auto n = Kc.rows();
    const double y_norm0 = y_centered.norm();
    if (y_norm0 == 0.0) return VectorXd::Zero(n);
    const double breakdown_tol = 1e-12 * std::max(Kc.trace(), 0.0);

    MatrixXd K_work = Kc;
    VectorXd y_work = y_centered;
    MatrixXd T(n, H), U(n, H);
    for (int h = 0; h < H; ++h) {
        if (!(y_work.norm() > 1e-14 * y_norm0)) {
            std::ostringstream msg;
            msg << label << ": response exhausted after " << h << " latent components";
            throw RankError(msg.str(), h);
        }
        VectorXd u = y_work / y_work.norm();
        VectorXd t_prev = VectorXd::Zero(n);
        bool converged = false;
        for (int it = 0; it < 500; ++it) {
            VectorXd t = K_work * u;
            const double t_norm = t.norm();
            if (!(t_norm > breakdown_tol)) {
                std::ostringstream msg;
                msg << label << ": kernel rank exhausted after " << h << " latent components";
                throw RankError(msg.str(), h);
            }
            t /= t_norm;
            if (t.dot(t_prev) < 0.0) t = -t;
            if (it > 0 && (t - t_prev).norm() < 1e-10) {
                converged = true;
                t_prev = t;
                break;
            }
            t_prev = t;
            const double c = y_work.dot(t);
            if (c == 0.0) {
                std::ostringstream msg;
                msg << label << ": score decorrelated from the response at component " << h + 1;
                throw RankError(msg.str(), h);
            }
            u = y_work * (c > 0.0 ? 1.0 : -1.0) / y_work.norm();
        }
        if (!converged)
            throw NumericError(label + ": latent iteration did not converge within 500 steps");
        const VectorXd t = t_prev;
        T.col(h) = t;
        U.col(h) = u;
        const VectorXd Kt = K_work * t;
        K_work -= t * Kt.transpose() + Kt * t.transpose() - (t.dot(Kt)) * (t * t.transpose());
        y_work -= t * t.dot(y_work);
    }
    const MatrixXd M = T.transpose() * Kc * U;
    const VectorXd z = M.colPivHouseholderQr().solve(T.transpose() * y_centered);
    return U * z;
}

/// Plain kernel interpolation weights b = (K + jitter I) \ y.
VectorXd gpr_weights(MatrixXd K, const VectorXd& y, double jitter, const std::string& label) {
    if (jitter > 0.0) K.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(K);
    if (llt.info() != Eigen::Success)
        throw NumericError(label + ": batch kernel is singular; increase the jitter");
    return llt.solve(y);
}

MatrixXd take_submatrix(const MatrixXd& K, const std::vector<int>& idx) {
    MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                K(idx[i], idx[j]);
    return out;
}

VectorXd take_subvector(const VectorXd& v, const std::vector<int>& idx) {
    VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        out(static_cast<Eigen::Index>(i)) = v(idx[i]);
    return out;
}

MatrixXd take_rows(const MatrixXd& X, const std::vector<int>& idx) {
    MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
    return out;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

const char* loss_name(LossKind k) {
    return k == LossKind::NormRatio ? "norm_ratio" : "loo";
}

LossKind loss_from_name(const std::string& name) {
    if (name == "norm_ratio") return LossKind::NormRatio;
    if (name == "loo") return LossKind::LooPredictionError;
    throw InputError("unknown loss '" + name + "' (expected norm_ratio or loo)");
}

const char* regressor_name(RegressorKind k) {
    switch (k) {
        case RegressorKind::KPCR: return "kpcr";
        case RegressorKind::KPLS: return "kpls";
        case RegressorKind::GPRWeights: return "gpr_weights";
    }
    throw InputError("unknown regressor kind");
}

RegressorKind regressor_from_name(const std::string& name) {
    if (name == "kpcr") return RegressorKind::KPCR;
    if (name == "kpls") return RegressorKind::KPLS;
    if (name == "gpr_weights") return RegressorKind::GPRWeights;
    throw InputError("unknown regressor '" + name + "' (expected kpcr, kpls or gpr_weights)");
}

const char* momentum_name(MomentumKind k) {
    switch (k) {
        case MomentumKind::None: return "none";
        case MomentumKind::Polyak: return "polyak";
        case MomentumKind::Nesterov: return "nesterov";
    }
    throw InputError("unknown momentum kind");
}

MomentumKind momentum_from_name(const std::string& name) {
    if (name == "none") return MomentumKind::None;
    if (name == "polyak") return MomentumKind::Polyak;
    if (name == "nesterov") return MomentumKind::Nesterov;
    throw InputError("unknown momentum '" + name + "' (expected none, polyak or nesterov)");
}

int KFConfig::subbatch_size() const {
    return static_cast<int>(std::llround(subbatch_fraction * batch_size));
}

void KFConfig::validate(int n_samples) const {
    if (iterations < 0) throw InputError("config: iterations must be >= 0");
    if (batch_size < 3) throw InputError("config: batch_size must be >= 3");
    if (batch_size > n_samples)
        throw InputError("config: batch_size exceeds the available samples");
    if (!(learning_rate >= 0.0)) throw InputError("config: learning_rate must be >= 0");
    if (!(fd_step > 0.0)) throw InputError("config: fd_step must be > 0");
    if (momentum != MomentumKind::None && !(momentum_gamma >= 0.0 && momentum_gamma < 1.0))
        throw InputError("config: momentum gamma must lie in [0, 1)");
    if (jitter && !(*jitter >= 0.0)) throw InputError("config: jitter must be >= 0");
    if (regressor != RegressorKind::GPRWeights && n_components < 1)
        throw InputError("config: n_components must be >= 1");
    if (loss == LossKind::NormRatio) {
        if (subbatch_count < 1) throw InputError("config: subbatch_count must be >= 1");
        if (!(subbatch_fraction > 0.0 && subbatch_fraction < 1.0))
            throw InputError("config: subbatch_fraction must lie in (0, 1)");
        if (subbatch_fraction * batch_size < 2.0)
            throw InputError("config: subbatch_fraction * batch_size must be >= 2");
        if (regressor != RegressorKind::GPRWeights && n_components > subbatch_size() - 1)
            throw InputError("config: n_components too large for the sub-batch size");
    } else {
        if (regressor != RegressorKind::GPRWeights && n_components > batch_size - 2)
            throw InputError("config: n_components must be <= batch_size - 2 for the LOO loss");
    }
}

std::string TrainingTrace::to_csv(bool include_timing) const {
    std::ostringstream out;
    out << "iter,loss";
    for (int j = 0; j < n_params; ++j) out << ",theta_" << j;
    for (int j = 0; j < n_params; ++j) out << ",grad_" << j;
    if (include_timing) out << ",ms";
    out << '\n';
    for (const auto& rec : records) {
        out << rec.iteration << ',' << format_full(rec.loss);
        for (int j = 0; j < n_params; ++j) out << ',' << format_full(rec.theta(j));
        for (int j = 0; j < n_params; ++j) out << ',' << format_full(rec.gradient(j));
        if (include_timing) out << ',' << format_full(rec.wall_ms);
        out << '\n';
    }
    return out.str();
}

double loo_loss(const kernels::KernelSpec& spec, const MatrixXd& X, const VectorXd& y,
                int n_components, RegressorKind regressor, double jitter) {
    const int n = static_cast<int>(X.rows());
    if (n < 3) throw InputError("loo_loss: need at least 3 samples");
    if (y.size() != n) throw InputError("loo_loss: X and y disagree on the sample count");
    if (regressor != RegressorKind::GPRWeights) {
        if (n_components < 1) throw InputError("loo_loss: n_components must be >= 1");
        if (n_components > n - 2)
            throw InputError("loo_loss: n_components must be <= N - 2");
    }

    const MatrixXd K = kernels::kernel_matrix(spec, X);
    VectorXd residuals(n);

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t fold) {
        const int held_out = static_cast<int>(fold);
        std::vector<int> rest;
        rest.reserve(static_cast<std::size_t>(n) - 1);
        for (int i = 0; i < n; ++i)
            if (i != held_out) rest.push_back(i);

        const MatrixXd K_fold = take_submatrix(K, rest);
        const VectorXd y_fold = take_subvector(y, rest);
        std::ostringstream label;
        label << "loo fold " << held_out;

        double prediction = 0.0;
        Eigen::RowVectorXd k_row(n - 1);
        for (std::size_t j = 0; j < rest.size(); ++j)
            k_row(static_cast<Eigen::Index>(j)) = K(held_out, rest[j]);

        if (regressor == RegressorKind::GPRWeights) {
            const VectorXd b = gpr_weights(K_fold, y_fold, jitter, label.str());
            prediction = k_row * b;
        } else {
            auto [Kc, stats] = kernels::center_train(K_fold);
            const double fold_mean = y_fold.mean();
            const VectorXd y_centered = y_fold.array() - fold_mean;
            const VectorXd b = regressor == RegressorKind::KPCR
                                   ? kpcr_dual(Kc, y_centered, n_components, label.str())
                                   : kpls_dual(Kc, y_centered, n_components, label.str());
            const MatrixXd kc = kernels::center_test(k_row, stats);
            prediction = (kc * b)(0) + fold_mean;
        }
        if (!std::isfinite(prediction))
            throw NumericError(label.str() + " produced a non-finite prediction");
        residuals(held_out) = std::abs(y(held_out) - prediction);
    });

    // fixed-order reduction keeps the sum identical for every thread count
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += residuals(i);
    return total;
}

double norm_ratio_loss(const kernels::KernelSpec& spec, const MatrixXd& X_batch,
                       const VectorXd& y_batch,
                       const std::vector<std::vector<int>>& subbatch_indices,
                       RegressorKind regressor, double jitter, int n_components) {
    const int n = static_cast<int>(X_batch.rows());
    if (n < 2) throw InputError("norm_ratio_loss: need at least 2 batch samples");
    if (y_batch.size() != n)
        throw InputError("norm_ratio_loss: X and y disagree on the sample count");
    if (subbatch_indices.empty())
        throw InputError("norm_ratio_loss: need at least one sub-batch");
    for (const auto& sub : subbatch_indices) {
        if (sub.size() < 2) throw InputError("norm_ratio_loss: sub-batches need >= 2 samples");
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        for (int i : sub) {
            if (i < 0 || i >= n)
                throw InputError("norm_ratio_loss: sub-batch index out of range");
            if (seen[static_cast<std::size_t>(i)]++)
                throw InputError("norm_ratio_loss: sub-batch repeats an index");
        }
    }

    const MatrixXd K = kernels::kernel_matrix(spec, X_batch);

    auto squared_norm = [&](const MatrixXd& Ksub, const VectorXd& ysub,
                            const std::string& label) {
        const double effective_jitter =
            jitter < 0.0 ? 1e-8 * Ksub.trace() / static_cast<double>(Ksub.rows()) : jitter;
        if (regressor == RegressorKind::GPRWeights) {
            const VectorXd b = gpr_weights(Ksub, ysub, effective_jitter, label);
            return static_cast<double>(b.dot(Ksub * b));
        }
        auto [Kc, stats] = kernels::center_train(Ksub);
        const VectorXd y_centered = ysub.array() - ysub.mean();
        const VectorXd b = regressor == RegressorKind::KPCR
                               ? kpcr_dual(Kc, y_centered, n_components, label)
                               : kpls_dual(Kc, y_centered, n_components, label);
        return static_cast<double>(b.dot(Kc * b));
    };

    const double n_batch = squared_norm(K, y_batch, "norm-ratio batch");
    if (!(n_batch > 0.0))
        throw NumericError("norm_ratio_loss: batch norm is not positive");

    double loss_sum = 0.0;
    for (std::size_t s = 0; s < subbatch_indices.size(); ++s) {
        const auto& sub = subbatch_indices[s];
        std::ostringstream label;
        label << "norm-ratio sub-batch " << s;
        const double n_sub =
            squared_norm(take_submatrix(K, sub), take_subvector(y_batch, sub), label.str());
        loss_sum += 1.0 - n_sub / n_batch;
    }
    return loss_sum / static_cast<double>(subbatch_indices.size());
}

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& loss_fn,
                     const VectorXd& theta, double step) {
    if (!(step > 0.0)) throw InputError("fd_gradient: step must be > 0");
    const auto k = theta.size();
    VectorXd plus(k), minus(k);

    parallel_for(static_cast<std::size_t>(2 * k), [&](std::size_t e) {
        const auto j = static_cast<Eigen::Index>(e / 2);
        const bool forward = (e % 2) == 0;
        VectorXd point = theta;
        point(j) += forward ? step : -step;
        const double value = loss_fn(point);
        if (!std::isfinite(value)) {
            std::ostringstream msg;
            msg << "fd_gradient: non-finite loss when perturbing coordinate " << j;
            throw NumericError(msg.str());
        }
        (forward ? plus : minus)(j) = value;
    });

    return (plus - minus) / (2.0 * step);
}

OptimizeResult optimize(const MatrixXd& X, const VectorXd& y, const kernels::KernelSpec& spec0,
                        const KFConfig& config) {
    spec0.validate();
    const int n = static_cast<int>(X.rows());
    if (y.size() != n) throw InputError("optimize: X and y disagree on the sample count");
    if (!X.allFinite() || !y.allFinite()) throw InputError("optimize: X and y must be finite");
    config.validate(n);

    kernels::KernelSpec spec = spec0;
    VectorXd theta = spec.parameters();
    const auto k = theta.size();
    VectorXd velocity = VectorXd::Zero(k);

    TrainingTrace trace;
    trace.n_params = static_cast<int>(k);
    trace.records.reserve(static_cast<std::size_t>(config.iterations));

    Rng rng(config.rng_seed);
    const double jitter = config.jitter ? *config.jitter : -1.0;  // -1 = automatic ridge

    for (int iter = 1; iter <= config.iterations; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const auto batch_idx = rng.sample_without_replacement(n, config.batch_size);
            const MatrixXd Xb = take_rows(X, batch_idx);
            const VectorXd yb = take_subvector(y, batch_idx);

            std::vector<std::vector<int>> subbatches;
            if (config.loss == LossKind::NormRatio) {
                subbatches.reserve(static_cast<std::size_t>(config.subbatch_count));
                for (int s = 0; s < config.subbatch_count; ++s)
                    subbatches.push_back(
                        rng.sample_without_replacement(config.batch_size, config.subbatch_size()));
            }

            auto loss_at = [&](const VectorXd& params) {
                kernels::KernelSpec candidate = spec;
                candidate.set_parameters(params);
                if (config.loss == LossKind::LooPredictionError)
                    return loo_loss(candidate, Xb, yb, config.n_components, config.regressor,
                                    jitter < 0.0 ? 0.0 : jitter);
                return norm_ratio_loss(candidate, Xb, yb, subbatches, config.regressor, jitter,
                                       config.n_components);
            };

            const double loss_value = loss_at(theta);
            if (!std::isfinite(loss_value)) {
                std::ostringstream msg;
                msg << "optimize: loss is not finite at iteration " << iter;
                throw NumericError(msg.str());
            }

            const VectorXd probe = config.momentum == MomentumKind::Nesterov
                                       ? VectorXd(theta + config.momentum_gamma * velocity)
                                       : theta;
            VectorXd gradient = fd_gradient(loss_at, probe, config.fd_step);
            if (config.widths_only)
                for (Eigen::Index j = 1; j < k; j += 2) gradient(j) = 0.0;

            TraceRecord rec;
            rec.iteration = iter;
            rec.loss = loss_value;
            rec.theta = theta;
            rec.gradient = gradient;

            if (config.momentum == MomentumKind::None) {
                theta -= config.learning_rate * gradient;
            } else {
                velocity = config.momentum_gamma * velocity - config.learning_rate * gradient;
                theta += velocity;
            }

            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            trace.records.push_back(std::move(rec));
        } catch (const OptimizeError&) {
            throw;
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "optimize aborted at iteration " << iter << ": " << e.what();
            throw OptimizeError(msg.str(), std::move(trace), iter);
        }
    }

    spec.set_parameters(theta);
    return {std::move(spec), std::move(trace)};
}

}  // namespace kfreg::kflow
