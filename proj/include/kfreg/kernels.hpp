#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "kfreg/errors.hpp"

namespace kfreg::kernels {

/// Radial kernel families. Each evaluates to 1 at distance zero and is
/// non-increasing in distance for a fixed width. Linear (plain inner product)
/// exists to back the kernel-PCA / linear-PCA equivalence checks; it is not
/// one of the radial families.
enum class KernelFamily { Gaussian, Cauchy, Matern12, Matern32, Matern52, Linear };

const char* family_name(KernelFamily family);
KernelFamily family_from_name(const std::string& name);

/// The five radial families, in declaration order.
const std::vector<KernelFamily>& radial_families();

struct KernelTerm {
    KernelFamily family = KernelFamily::Gaussian;
    double log_width = 0.0;      // sigma = exp(log_width)
    double log_amplitude = 0.0;  // amplitude = exp(log_amplitude)
};

/// Weighted sum of kernel terms. Widths and amplitudes live in log space so
/// they stay positive under unconstrained parameter updates; the parameter
/// vector is the flattened (log_width, log_amplitude) sequence in term order.
struct KernelSpec {
    std::vector<KernelTerm> terms;

    KernelSpec() = default;
    explicit KernelSpec(std::vector<KernelTerm> t) : terms(std::move(t)) {}
    static KernelSpec single(KernelFamily family, double log_width = 0.0,
                             double log_amplitude = 0.0);

    int parameter_count() const { return 2 * static_cast<int>(terms.size()); }
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& theta);
    void validate() const;
};

/// Sum over terms of amplitude * k(||x - y||; sigma).
double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Entry (i, j) = eval_kernel(spec, A.row(i), B.row(j)).
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B);

/// Symmetric train kernel; each unordered pair is evaluated once and mirrored,
/// so the result equals its transpose exactly. kernel_matrix(spec, A, A) with
/// the same object routes here.
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& A);

/// Raw train kernel bookkeeping needed to center test rows consistently.
struct CenteringStats {
    int n_train = 0;
    Eigen::MatrixXd train_kernel;    // raw (uncentered) train kernel
    Eigen::VectorXd train_row_mean;  // column means of the raw train kernel
};

/// Double centering K~ = (I - J/N) K (I - J/N) with J the all-ones matrix.
/// Every row and column of K~ sums to zero up to roundoff.
std::pair<Eigen::MatrixXd, CenteringStats> center_train(const Eigen::MatrixXd& K);

/// Centers cross-kernel rows against the training statistics:
/// (K_new - J/N * K_train) * (I - J/N). Feeding back the training kernel
/// reproduces the center_train output bit for bit.
Eigen::MatrixXd center_test(const Eigen::MatrixXd& K_new, const CenteringStats& stats);

}  // namespace kfreg::kernels
