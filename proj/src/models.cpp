#include "kfreg/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

namespace kfreg::models {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void validate_fit_inputs(const MatrixXd& X, const VectorXd& y, int n_components) {
    if (X.rows() < 3) throw InputError("fit: need at least 3 samples");
    if (y.size() != X.rows()) throw InputError("fit: X and y disagree on the sample count");
    if (X.cols() < 1) throw InputError("fit: X needs at least one feature column");
    if (!X.allFinite() || !y.allFinite()) throw InputError("fit: X and y must be finite");
    if (n_components < 1) throw InputError("fit: n_components must be >= 1");
}

RankError rank_error(int requested, int usable) {
    std::ostringstream msg;
    msg << "requested " << requested << " components but the data supports at most " << usable;
    return RankError(msg.str(), usable);
}

/// Index order of eigenvalues, descending, stable for ties.
std::vector<int> descending_order(const VectorXd& values) {
    std::vector<int> idx(static_cast<std::size_t>(values.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return values(a) > values(b); });
    return idx;
}

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

void fill_metrics(FitReport& report, const VectorXd& y, const VectorXd& pred) {
    report.train_predictions = pred;
    report.train_rmse = rmse(y, pred);
    const double centered_norm = (y.array() - y.mean()).matrix().squaredNorm();
    report.train_r2 = centered_norm > 0.0 ? r2(y, pred) : nan_value();
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::KPCR: return "kpcr";
        case ModelKind::KPLS: return "kpls";
        case ModelKind::LinearPCR: return "linear_pcr";
    }
    throw InputError("unknown model kind");
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "kpcr") return ModelKind::KPCR;
    if (name == "kpls") return ModelKind::KPLS;
    if (name == "linear_pcr") return ModelKind::LinearPCR;
    throw InputError("unknown model kind '" + name + "' (expected kpcr, kpls or linear_pcr)");
}

std::pair<TrainedModel, FitReport> fit_kpcr(const MatrixXd& X, const VectorXd& y,
                                            const kernels::KernelSpec& spec, int n_components) {
    validate_fit_inputs(X, y, n_components);
    const auto n = X.rows();

    const MatrixXd K = kernels::kernel_matrix(spec, X);
    auto [Kc, stats] = kernels::center_train(K);

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Kc);
    if (eig.info() != Eigen::Success) throw NumericError("kpcr: eigendecomposition failed");
    const VectorXd& eigvals = eig.eigenvalues();
    const auto order = descending_order(eigvals);

    const double lambda_max = eigvals(order.front());
    int usable = 0;
    while (usable < n && eigvals(order[static_cast<std::size_t>(usable)]) >
                             kRankTolerance * lambda_max)
        ++usable;
    if (lambda_max <= 0.0) usable = 0;
    if (n_components > usable) throw rank_error(n_components, usable);

    const int H = n_components;
    VectorXd lambdas(H);
    MatrixXd U(n, H);
    for (int k = 0; k < H; ++k) {
        lambdas(k) = eigvals(order[static_cast<std::size_t>(k)]);
        U.col(k) = eig.eigenvectors().col(order[static_cast<std::size_t>(k)]);
    }

    // scores T = K~ U Lambda^{-1/2}; regress the centered response on them
    const MatrixXd basis = U * lambdas.cwiseSqrt().cwiseInverse().asDiagonal();
    const MatrixXd T = Kc * basis;
    const double y_mean = y.mean();
    const VectorXd y_centered = y.array() - y_mean;
    const VectorXd v = T.colPivHouseholderQr().solve(y_centered);

    TrainedModel model;
    model.kind = ModelKind::KPCR;
    model.support_X = X;
    model.dual_coef = basis * v;
    model.bias = y_mean;
    model.response_mean = y_mean;
    model.spec = spec;
    model.stats = std::move(stats);
    model.n_components = H;
    model.eigenvalues = lambdas;
    model.scores_basis = basis;

    FitReport report;
    double positive_sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k)
        if (eigvals(k) > 0.0) positive_sum += eigvals(k);
    report.explained_variance_ratio =
        positive_sum > 0.0 ? VectorXd(lambdas / positive_sum) : VectorXd::Zero(H);

    const VectorXd train_pred = (Kc * model.dual_coef).array() + model.bias;
    fill_metrics(report, y, train_pred);
    return {std::move(model), std::move(report)};
}

std::pair<TrainedModel, FitReport> fit_kpls(const MatrixXd& X, const VectorXd& y,
                                            const kernels::KernelSpec& spec, int n_components) {
    validate_fit_inputs(X, y, n_components);
    const auto n = X.rows();
    const int H = n_components;
    if (H > n - 1) throw rank_error(H, static_cast<int>(n) - 1);

    const MatrixXd K = kernels::kernel_matrix(spec, X);
    auto [Kc, stats] = kernels::center_train(K);

    const double y_mean = y.mean();
    const VectorXd y_centered = y.array() - y_mean;
    const double y_norm0_sq = y_centered.squaredNorm();

    TrainedModel model;
    model.kind = ModelKind::KPLS;
    model.support_X = X;
    model.bias = y_mean;
    model.response_mean = y_mean;
    model.spec = spec;
    model.n_components = H;

    FitReport report;

    if (y_norm0_sq == 0.0) {
        // constant response: nothing to regress on
        model.dual_coef = VectorXd::Zero(n);
        model.scores_basis = MatrixXd::Zero(n, H);
        model.stats = std::move(stats);
        report.explained_variance_ratio = VectorXd::Zero(H);
        fill_metrics(report, y, VectorXd::Constant(n, y_mean));
        return {std::move(model), std::move(report)};
    }

    constexpr int kMaxIterations = 500;
    constexpr double kScoreTol = 1e-10;
    const double breakdown_tol = 1e-12 * std::max(Kc.trace(), 0.0);

    MatrixXd K_work = Kc;
    VectorXd y_work = y_centered;
    MatrixXd T(n, H), U(n, H);
    VectorXd evr(H);

    for (int h = 0; h < H; ++h) {
        const double y_norm_before = y_work.squaredNorm();
        if (!(y_work.norm() > 1e-14 * std::sqrt(y_norm0_sq))) throw rank_error(H, h);

        VectorXd u = y_work / y_work.norm();
        VectorXd t_prev = VectorXd::Zero(n);
        bool converged = false;
        int used_iterations = 0;
        for (int it = 0; it < kMaxIterations; ++it) {
            VectorXd t = K_work * u;
            const double t_norm = t.norm();
            if (!(t_norm > breakdown_tol)) throw rank_error(H, h);
            t /= t_norm;
            if (t.dot(t_prev) < 0.0) t = -t;  // sign convention, predictions are invariant
            used_iterations = it + 1;
            if (it > 0 && (t - t_prev).norm() < kScoreTol) {
                t_prev = t;
                converged = true;
                break;
            }
            t_prev = t;
            const double c = y_work.dot(t);
            const double u_scale = std::abs(c) * y_work.norm();
            if (!(u_scale > 0.0)) throw rank_error(H, h);
            u = y_work * c / u_scale;
        }
        if (!converged) {
            std::ostringstream msg;
            msg << "kpls: latent iteration for component " << h + 1 << " did not converge within "
                << used_iterations << " iterations";
            throw NumericError(msg.str());
        }
        const VectorXd t = t_prev;
        T.col(h) = t;
        U.col(h) = u;

        // two-sided deflation of the working kernel, response deflated by the score
        const VectorXd Kt = K_work * t;
        K_work -= t * Kt.transpose() + Kt * t.transpose() - (t.dot(Kt)) * (t * t.transpose());
        y_work -= t * t.dot(y_work);
        evr(h) = (y_norm_before - y_work.squaredNorm()) / y_norm0_sq;
    }

    // dual coefficients: b = U (T' K~ U)^{-1} T' y~
    const MatrixXd M = T.transpose() * Kc * U;
    const VectorXd z = M.colPivHouseholderQr().solve(T.transpose() * y_centered);
    model.dual_coef = U * z;
    model.scores_basis = U;
    model.stats = std::move(stats);

    report.explained_variance_ratio = evr;
    const VectorXd train_pred = (Kc * model.dual_coef).array() + model.bias;
    fill_metrics(report, y, train_pred);
    return {std::move(model), std::move(report)};
}

std::pair<TrainedModel, FitReport> fit_linear_pcr(const MatrixXd& X, const VectorXd& y,
                                                  int n_components) {
    validate_fit_inputs(X, y, n_components);
    const auto n = X.rows();

    const VectorXd mu = X.colwise().mean();
    const MatrixXd Xc = X.rowwise() - mu.transpose();
    const double y_mean = y.mean();
    const VectorXd y_centered = y.array() - y_mean;

    Eigen::BDCSVD<MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    const double s_max_sq = sv.size() > 0 ? sv(0) * sv(0) : 0.0;
    int usable = 0;
    while (usable < sv.size() && sv(usable) * sv(usable) > kRankTolerance * s_max_sq) ++usable;
    if (s_max_sq <= 0.0) usable = 0;
    if (n_components > usable) throw rank_error(n_components, usable);

    const int H = n_components;
    const MatrixXd scores = svd.matrixU().leftCols(H) * sv.head(H).asDiagonal();
    const VectorXd v = scores.colPivHouseholderQr().solve(y_centered);

    TrainedModel model;
    model.kind = ModelKind::LinearPCR;
    model.support_X = X;
    model.bias = y_mean;
    model.response_mean = y_mean;
    model.n_components = H;
    model.feature_mean = mu;
    model.linear_coef = svd.matrixV().leftCols(H) * v;
    // dual view of the same coefficients (linear_coef = Xc' * dual_coef)
    model.dual_coef =
        svd.matrixU().leftCols(H) * sv.head(H).cwiseInverse().asDiagonal() * v;

    FitReport report;
    const double total_var = sv.squaredNorm();
    report.explained_variance_ratio =
        total_var > 0.0 ? VectorXd(sv.head(H).cwiseAbs2() / total_var) : VectorXd::Zero(H);

    const VectorXd train_pred = ((X.rowwise() - model.feature_mean.transpose()) *
                                 model.linear_coef)
                                    .array() +
                                model.bias;
    fill_metrics(report, y, train_pred);
    return {std::move(model), std::move(report)};
}

VectorXd predict(const TrainedModel& model, const MatrixXd& X_new) {
    if (X_new.cols() != model.support_X.cols()) {
        std::ostringstream msg;
        msg << "predict: data has " << X_new.cols() << " features but the model was trained with "
            << model.support_X.cols();
        throw InputError(msg.str());
    }
    if (model.kind == ModelKind::LinearPCR)
        return ((X_new.rowwise() - model.feature_mean.transpose()) * model.linear_coef).array() +
               model.bias;

    const MatrixXd K_new = kernels::kernel_matrix(model.spec, X_new, model.support_X);
    const MatrixXd Kc = kernels::center_test(K_new, model.stats);
    return (Kc * model.dual_coef).array() + model.bias;
}

double rmse(const VectorXd& y_true, const VectorXd& y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() < 2)
        throw InputError("rmse: vectors must share a length >= 2");
    return std::sqrt((y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size()));
}

double r2(const VectorXd& y_true, const VectorXd& y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() < 2)
        throw InputError("r2: vectors must share a length >= 2");
    const double ss_tot = (y_true.array() - y_true.mean()).matrix().squaredNorm();
    if (ss_tot <= 0.0)
        throw UndefinedMetricError("r2 is undefined for a constant truth vector");
    const double ss_res = (y_true - y_pred).squaredNorm();
    return 1.0 - ss_res / ss_tot;
}

}  // namespace kfreg::models
