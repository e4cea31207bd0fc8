#include "kfreg/kernels.hpp"

#include <cmath>
#include <sstream>

#include "kfreg/parallel.hpp"

namespace kfreg::kernels {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kSqrt5 = 2.23606797749979;

struct TermParams {
    KernelFamily family;
    double sigma;
    double amplitude;
};

std::vector<TermParams> unpack(const KernelSpec& spec) {
    spec.validate();
    std::vector<TermParams> out;
    out.reserve(spec.terms.size());
    for (const auto& t : spec.terms)
        out.push_back({t.family, std::exp(t.log_width), std::exp(t.log_amplitude)});
    return out;
}

bool has_linear_term(const std::vector<TermParams>& terms) {
    for (const auto& t : terms)
        if (t.family == KernelFamily::Linear) return true;
    return false;
}

double term_value(const TermParams& t, double dist_sq, double dot) {
    switch (t.family) {
        case KernelFamily::Gaussian:
            return t.amplitude * std::exp(-dist_sq / (2.0 * t.sigma * t.sigma));
        case KernelFamily::Cauchy:
            return t.amplitude / (1.0 + dist_sq / (t.sigma * t.sigma));
        case KernelFamily::Matern12:
            return t.amplitude * std::exp(-std::sqrt(dist_sq) / t.sigma);
        case KernelFamily::Matern32: {
            const double u = kSqrt3 * std::sqrt(dist_sq) / t.sigma;
            return t.amplitude * (1.0 + u) * std::exp(-u);
        }
        case KernelFamily::Matern52: {
            const double u = kSqrt5 * std::sqrt(dist_sq) / t.sigma;
            return t.amplitude * (1.0 + u + u * u / 3.0) * std::exp(-u);
        }
        case KernelFamily::Linear:
            return t.amplitude * dot;
    }
    throw InputError("unknown kernel family");
}

// sum over terms in declaration order; dot is only consumed by Linear terms
double eval_terms(const std::vector<TermParams>& terms, double dist_sq, double dot) {
    double sum = 0.0;
    for (const auto& t : terms) sum += term_value(t, dist_sq, dot);
    return sum;
}

// ||x - y||^2 as a plain sum of squared differences, clamped at zero
double pair_dist_sq(const Eigen::MatrixXd& A, Eigen::Index i, const Eigen::MatrixXd& B,
                    Eigen::Index j) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
        const double d = A(i, c) - B(j, c);
        sum += d * d;
    }
    return sum < 0.0 ? 0.0 : sum;
}

double pair_dot(const Eigen::MatrixXd& A, Eigen::Index i, const Eigen::MatrixXd& B,
                Eigen::Index j) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < A.cols(); ++c) sum += A(i, c) * B(j, c);
    return sum;
}

}  // namespace

const char* family_name(KernelFamily family) {
    switch (family) {
        case KernelFamily::Gaussian: return "gaussian";
        case KernelFamily::Cauchy: return "cauchy";
        case KernelFamily::Matern12: return "matern12";
        case KernelFamily::Matern32: return "matern32";
        case KernelFamily::Matern52: return "matern52";
        case KernelFamily::Linear: return "linear";
    }
    throw InputError("unknown kernel family");
}

KernelFamily family_from_name(const std::string& name) {
    if (name == "gaussian") return KernelFamily::Gaussian;
    if (name == "cauchy") return KernelFamily::Cauchy;
    if (name == "matern12") return KernelFamily::Matern12;
    if (name == "matern32") return KernelFamily::Matern32;
    if (name == "matern52") return KernelFamily::Matern52;
    if (name == "linear") return KernelFamily::Linear;
    throw InputError("unknown kernel family '" + name +
                     "' (expected gaussian, cauchy, matern12, matern32, matern52)");
}

const std::vector<KernelFamily>& radial_families() {
    static const std::vector<KernelFamily> families = {
        KernelFamily::Gaussian, KernelFamily::Cauchy, KernelFamily::Matern12,
        KernelFamily::Matern32, KernelFamily::Matern52};
    return families;
}

KernelSpec KernelSpec::single(KernelFamily family, double log_width, double log_amplitude) {
    return KernelSpec({KernelTerm{family, log_width, log_amplitude}});
}

Eigen::VectorXd KernelSpec::parameters() const {
    Eigen::VectorXd theta(parameter_count());
    for (std::size_t t = 0; t < terms.size(); ++t) {
        theta(2 * static_cast<Eigen::Index>(t)) = terms[t].log_width;
        theta(2 * static_cast<Eigen::Index>(t) + 1) = terms[t].log_amplitude;
    }
    return theta;
}

void KernelSpec::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != parameter_count())
        throw InputError("parameter vector length " + std::to_string(theta.size()) +
                         " does not match 2 x " + std::to_string(terms.size()) + " terms");
    for (std::size_t t = 0; t < terms.size(); ++t) {
        terms[t].log_width = theta(2 * static_cast<Eigen::Index>(t));
        terms[t].log_amplitude = theta(2 * static_cast<Eigen::Index>(t) + 1);
    }
}

void KernelSpec::validate() const {
    if (terms.empty()) throw InputError("kernel spec needs at least one term");
    for (const auto& t : terms)
        if (!std::isfinite(t.log_width) || !std::isfinite(t.log_amplitude))
            throw InputError("kernel spec has non-finite log-parameters");
}

double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size() || x.size() < 1)
        throw InputError("eval_kernel: x and y must share a dimension >= 1");
    const auto terms = unpack(spec);
    double dist_sq = 0.0;
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        const double d = x(c) - y(c);
        dist_sq += d * d;
    }
    if (dist_sq < 0.0) dist_sq = 0.0;
    const double dot = has_linear_term(terms) ? x.dot(y) : 0.0;
    return eval_terms(terms, dist_sq, dot);
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
    if (A.cols() != B.cols())
        throw InputError("kernel_matrix: A and B must share the feature dimension");
    if (A.rows() == B.rows() && A.data() == B.data()) return kernel_matrix(spec, A);

    const auto terms = unpack(spec);
    const bool linear = has_linear_term(terms);
    Eigen::MatrixXd K(A.rows(), B.rows());
    parallel_for(static_cast<std::size_t>(A.rows()), [&](std::size_t row) {
        const auto i = static_cast<Eigen::Index>(row);
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            const double dot = linear ? pair_dot(A, i, B, j) : 0.0;
            K(i, j) = eval_terms(terms, pair_dist_sq(A, i, B, j), dot);
        }
    });
    return K;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& A) {
    const auto terms = unpack(spec);
    const bool linear = has_linear_term(terms);
    const Eigen::Index n = A.rows();
    Eigen::MatrixXd K(n, n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t row) {
        const auto i = static_cast<Eigen::Index>(row);
        K(i, i) = eval_terms(terms, 0.0, linear ? pair_dot(A, i, A, i) : 0.0);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double dot = linear ? pair_dot(A, i, A, j) : 0.0;
            const double v = eval_terms(terms, pair_dist_sq(A, i, A, j), dot);
            K(i, j) = v;
            K(j, i) = v;
        }
    });
    return K;
}

namespace {

// Subtracts the train column means, then each row's own mean. Used by both
// centering paths so that center_test on the training kernel reproduces
// center_train exactly.
Eigen::MatrixXd double_center(const Eigen::MatrixXd& K_rows, const Eigen::VectorXd& col_mean) {
    Eigen::MatrixXd A = K_rows.rowwise() - col_mean.transpose();
    const Eigen::VectorXd row_mean = A.rowwise().mean();
    A.colwise() -= row_mean;
    return A;
}

}  // namespace

std::pair<Eigen::MatrixXd, CenteringStats> center_train(const Eigen::MatrixXd& K) {
    if (K.rows() != K.cols()) throw InputError("center_train: kernel matrix must be square");
    if (K.rows() == 0) throw InputError("center_train: kernel matrix is empty");
    const double scale = K.cwiseAbs().maxCoeff();
    const double asym = (K - K.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * (scale > 0.0 ? scale : 1.0))
        throw InputError("center_train: kernel matrix is not symmetric");

    CenteringStats stats;
    stats.n_train = static_cast<int>(K.rows());
    stats.train_kernel = K;
    stats.train_row_mean = K.colwise().mean();
    return {double_center(K, stats.train_row_mean), std::move(stats)};
}

Eigen::MatrixXd center_test(const Eigen::MatrixXd& K_new, const CenteringStats& stats) {
    if (K_new.cols() != stats.n_train) {
        std::ostringstream msg;
        msg << "center_test: kernel has " << K_new.cols() << " columns but the model was trained on "
            << stats.n_train << " samples";
        throw InputError(msg.str());
    }
    return double_center(K_new, stats.train_row_mean);
}

}  // namespace kfreg::kernels
