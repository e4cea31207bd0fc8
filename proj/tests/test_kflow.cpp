#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "kfreg/data.hpp"
#include "kfreg/kflow.hpp"
#include "kfreg/models.hpp"
#include "kfreg/parallel.hpp"
#include "kfreg/rng.hpp"

using namespace kfreg;
using namespace kfreg::kflow;
using kernels::KernelFamily;
using kernels::KernelSpec;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Rng& rng, int n, int p, double scale = 1.0) {
    MatrixXd m(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) m(i, j) = scale * rng.normal();
    return m;
}

VectorXd random_vector(Rng& rng, int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

// Literal leave-one-out loop over the public model-fitting API; the
// reference each loo_loss result is checked against.
double brute_force_loo(const KernelSpec& spec, const MatrixXd& X, const VectorXd& y, int H,
                       RegressorKind kind) {
    const int n = static_cast<int>(X.rows());
    double total = 0.0;
    for (int held = 0; held < n; ++held) {
        MatrixXd X_fold(n - 1, X.cols());
        VectorXd y_fold(n - 1);
        int r = 0;
        for (int i = 0; i < n; ++i) {
            if (i == held) continue;
            X_fold.row(r) = X.row(i);
            y_fold(r) = y(i);
            ++r;
        }
        double prediction = 0.0;
        if (kind == RegressorKind::GPRWeights) {
            const MatrixXd K = kernels::kernel_matrix(spec, X_fold);
            const VectorXd b = Eigen::LLT<MatrixXd>(K).solve(y_fold);
            const MatrixXd k_new = kernels::kernel_matrix(spec, MatrixXd(X.row(held)), X_fold);
            prediction = (k_new * b)(0);
        } else {
            const auto fitted = kind == RegressorKind::KPCR
                                    ? models::fit_kpcr(X_fold, y_fold, spec, H)
                                    : models::fit_kpls(X_fold, y_fold, spec, H);
            prediction = models::predict(fitted.first, MatrixXd(X.row(held)))(0);
        }
        total += std::abs(y(held) - prediction);
    }
    return total;
}

}  // namespace

TEST_CASE("loo_loss matches the brute-force refit oracle") {
    Rng rng(101);
    for (int n : {4, 7, 10}) {
        for (int H : {1, 2}) {
            if (H > n - 2) continue;
            const MatrixXd X = random_matrix(rng, n, 3);
            const VectorXd y = random_vector(rng, n);
            for (KernelFamily f : kernels::radial_families()) {
                const auto spec = KernelSpec::single(f, 0.3, 0.1);
                const double got = loo_loss(spec, X, y, H, RegressorKind::KPCR);
                const double want = brute_force_loo(spec, X, y, H, RegressorKind::KPCR);
                CHECK(std::abs(got - want) < 1e-10);
            }
        }
    }
}

TEST_CASE("loo_loss kpls path matches the brute-force refit oracle") {
    Rng rng(102);
    const MatrixXd X = random_matrix(rng, 8, 2);
    const VectorXd y = random_vector(rng, 8);
    const auto spec = KernelSpec::single(KernelFamily::Gaussian, 0.2);
    for (int H : {1, 2}) {
        const double got = loo_loss(spec, X, y, H, RegressorKind::KPLS);
        const double want = brute_force_loo(spec, X, y, H, RegressorKind::KPLS);
        CHECK(std::abs(got - want) < 1e-10);
    }
}

TEST_CASE("loo_loss gpr path matches a plain interpolation loop") {
    Rng rng(103);
    const MatrixXd X = random_matrix(rng, 7, 2);
    const VectorXd y = random_vector(rng, 7);
    const auto spec = KernelSpec::single(KernelFamily::Matern32, 0.5);
    const double got = loo_loss(spec, X, y, 1, RegressorKind::GPRWeights);
    const double want = brute_force_loo(spec, X, y, 1, RegressorKind::GPRWeights);
    CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("loo_loss on a constant response is exactly zero") {
    Rng rng(104);
    const MatrixXd X = random_matrix(rng, 6, 2);
    const VectorXd y = VectorXd::Constant(6, 2.5);  // dyadic: fold means are exact
    const auto spec = KernelSpec::single(KernelFamily::Gaussian);
    CHECK(loo_loss(spec, X, y, 2, RegressorKind::KPCR) == 0.0);
}

TEST_CASE("loo_loss is exactly homogeneous in the response") {
    Rng rng(105);
    const MatrixXd X = random_matrix(rng, 7, 2);
    const VectorXd y = random_vector(rng, 7);
    const auto spec = KernelSpec::single(KernelFamily::Cauchy, 0.4);
    const double base = loo_loss(spec, X, y, 2, RegressorKind::KPCR);
    CHECK(loo_loss(spec, X, VectorXd(2.0 * y), 2, RegressorKind::KPCR) == 2.0 * base);
    CHECK(loo_loss(spec, X, VectorXd(-2.0 * y), 2, RegressorKind::KPCR) == 2.0 * base);
}

TEST_CASE("loo_loss rank failure identifies the offending fold") {
    MatrixXd X(4, 1);
    X << 0.0, 0.0, 1.0, 2.0;  // removing row 2 leaves {0, 0, 2}: centered rank 1
    VectorXd y(4);
    y << 0.5, 0.5, 1.0, -1.0;
    const auto spec = KernelSpec::single(KernelFamily::Gaussian);
    try {
        loo_loss(spec, X, y, 2, RegressorKind::KPCR);
        FAIL("expected RankError");
    } catch (const RankError& e) {
        CHECK(std::string(e.what()).find("fold 2") != std::string::npos);
    }
}

TEST_CASE("loo_loss input validation") {
    Rng rng(106);
    const MatrixXd X = random_matrix(rng, 5, 2);
    const VectorXd y = random_vector(rng, 5);
    const auto spec = KernelSpec::single(KernelFamily::Gaussian);
    CHECK_THROWS_AS(loo_loss(spec, X, y, 4, RegressorKind::KPCR), InputError);  // H > N-2
    CHECK_THROWS_AS(loo_loss(spec, X, y, 0, RegressorKind::KPCR), InputError);
    CHECK_THROWS_AS(loo_loss(spec, MatrixXd::Zero(2, 2), VectorXd::Zero(2), 1,
                             RegressorKind::KPCR),
                    InputError);
}

TEST_CASE("norm_ratio_loss is zero when the sub-batch is the whole batch") {
    Rng rng(111);
    const MatrixXd X = random_matrix(rng, 6, 2);
    const VectorXd y = random_vector(rng, 6);
    const auto spec = KernelSpec::single(KernelFamily::Gaussian, 0.3);
    std::vector<std::vector<int>> subs{{0, 1, 2, 3, 4, 5}};
    CHECK(norm_ratio_loss(spec, X, y, subs, RegressorKind::GPRWeights, 0.0, 1) == 0.0);
}

TEST_CASE("norm_ratio_loss matches a hand-coded 3x3 solve") {
    MatrixXd X(3, 1);
    X << 0.0, 1.0, 2.5;
    VectorXd y(3);
    y << 1.0, -0.5, 2.0;
    const auto spec = KernelSpec::single(KernelFamily::Gaussian);

    // explicit solves: batch via Cramer's rule on the 3x3 system, sub-batch 2x2
    auto k = [](double a, double b) { return std::exp(-(a - b) * (a - b) / 2.0); };
    const double K[3][3] = {{k(0, 0), k(0, 1), k(0, 2.5)},
                            {k(1, 0), k(1, 1), k(1, 2.5)},
                            {k(2.5, 0), k(2.5, 1), k(2.5, 2.5)}};
    auto det3 = [&](const double m[3][3]) {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    };
    const double det = det3(K);
    double b[3];
    for (int c = 0; c < 3; ++c) {
        double M[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) M[i][j] = j == c ? y(i) : K[i][j];
        b[c] = det3(M) / det;
    }
    double n_b = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) n_b += b[i] * K[i][j] * b[j];

    const double det2 = K[0][0] * K[1][1] - K[0][1] * K[1][0];
    const double bs0 = (y(0) * K[1][1] - K[0][1] * y(1)) / det2;
    const double bs1 = (K[0][0] * y(1) - y(0) * K[1][0]) / det2;
    const double n_s = bs0 * bs0 * K[0][0] + 2.0 * bs0 * bs1 * K[0][1] + bs1 * bs1 * K[1][1];
    const double expected = 1.0 - n_s / n_b;

    std::vector<std::vector<int>> subs{{0, 1}};
    const double got = norm_ratio_loss(spec, X, y, subs, RegressorKind::GPRWeights, 0.0, 1);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("norm_ratio_loss stays in [0, 1] for nested sub-batches") {
    Rng rng(112);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 6 + static_cast<int>(rng.below(8));
        const MatrixXd X = random_matrix(rng, n, 2);
        const VectorXd y = random_vector(rng, n);
        const auto spec =
            KernelSpec::single(kernels::radial_families()[rng.below(5)], rng.uniform(-0.5, 0.7));
        const int sub_n = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n) - 2));
        std::vector<std::vector<int>> subs{rng.sample_without_replacement(n, sub_n)};
        const double rho = norm_ratio_loss(spec, X, y, subs, RegressorKind::GPRWeights, 0.0, 1);
        CHECK(rho >= 0.0);
        CHECK(rho <= 1.0);
    }
}

TEST_CASE("norm_ratio_loss singular batch") {
    MatrixXd X(3, 1);
    X << 1.0, 1.0, 2.0;  // duplicated point: exactly singular kernel
    VectorXd y(3);
    y << 0.3, 0.9, -1.0;
    const auto spec = KernelSpec::single(KernelFamily::Gaussian);
    std::vector<std::vector<int>> subs{{0, 2}};

    CHECK_THROWS_WITH_AS(
        norm_ratio_loss(spec, X, y, subs, RegressorKind::GPRWeights, 0.0, 1),
        doctest::Contains("jitter"), NumericError);
    CHECK_NOTHROW(norm_ratio_loss(spec, X, y, subs, RegressorKind::GPRWeights, 1e-6, 1));
    // the automatic ridge also copes
    CHECK_NOTHROW(norm_ratio_loss(spec, X, y, subs, RegressorKind::GPRWeights, -1.0, 1));
}

TEST_CASE("norm_ratio_loss with latent regressors") {
    Rng rng(113);
    const MatrixXd X = random_matrix(rng, 8, 2);
    const VectorXd y = random_vector(rng, 8);
    const auto spec = KernelSpec::single(KernelFamily::Gaussian, 0.2);
    std::vector<std::vector<int>> subs{{0, 2, 4, 6}, {1, 3, 5, 7}};
    for (RegressorKind kind : {RegressorKind::KPCR, RegressorKind::KPLS}) {
        const double rho = norm_ratio_loss(spec, X, y, subs, kind, 0.0, 2);
        CHECK(std::isfinite(rho));
    }
}

TEST_CASE("norm_ratio_loss validates sub-batches") {
    Rng rng(114);
    const MatrixXd X = random_matrix(rng, 5, 2);
    const VectorXd y = random_vector(rng, 5);
    const auto spec = KernelSpec::single(KernelFamily::Gaussian);
    CHECK_THROWS_AS(norm_ratio_loss(spec, X, y, {}, RegressorKind::GPRWeights, 0.0, 1),
                    InputError);
    CHECK_THROWS_AS(
        norm_ratio_loss(spec, X, y, {{0}}, RegressorKind::GPRWeights, 0.0, 1), InputError);
    CHECK_THROWS_AS(
        norm_ratio_loss(spec, X, y, {{0, 7}}, RegressorKind::GPRWeights, 0.0, 1), InputError);
    CHECK_THROWS_AS(
        norm_ratio_loss(spec, X, y, {{1, 1}}, RegressorKind::GPRWeights, 0.0, 1), InputError);
}

TEST_CASE("fd_gradient on a quadratic recovers 2 theta") {
    auto quadratic = [](const VectorXd& t) { return t.squaredNorm(); };
    VectorXd theta(3);
    theta << 0.7, -1.2, 0.4;
    const VectorXd g = fd_gradient(quadratic, theta, 1e-4);
    CHECK((g - 2.0 * theta).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("fd_gradient halving the step shrinks the error like h^2") {
    auto smooth = [](const VectorXd& t) {
        return std::exp(0.3 * t(0)) * std::sin(t(1) + 0.5) + std::cos(t(0) * t(1));
    };
    VectorXd theta(2);
    theta << 0.8, -0.6;
    const double h = 0.05;
    const VectorXd g1 = fd_gradient(smooth, theta, h);
    const VectorXd g2 = fd_gradient(smooth, theta, h / 2);
    const VectorXd g3 = fd_gradient(smooth, theta, h / 4);
    const double ratio = (g1 - g2).norm() / (g2 - g3).norm();
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
}

TEST_CASE("fd_gradient is symmetric for exchangeable kernel terms") {
    Rng rng(121);
    const MatrixXd X = random_matrix(rng, 7, 2);
    const VectorXd y = random_vector(rng, 7);
    KernelSpec spec({{KernelFamily::Gaussian, 0.2, -0.1}, {KernelFamily::Gaussian, 0.2, -0.1}});
    auto loss = [&](const VectorXd& t) {
        KernelSpec s = spec;
        s.set_parameters(t);
        return loo_loss(s, X, y, 2, RegressorKind::KPCR);
    };
    const VectorXd g = fd_gradient(loss, spec.parameters(), 1e-4);
    CHECK(g(0) == g(2));
    CHECK(g(1) == g(3));
}

TEST_CASE("fd_gradient reports the bad coordinate") {
    auto partial = [](const VectorXd& t) {
        return t(1) > 0.5 ? std::numeric_limits<double>::infinity() : t.squaredNorm();
    };
    VectorXd theta = VectorXd::Zero(3);
    theta(1) = 0.5;  // +h crosses into the non-finite region
    CHECK_THROWS_WITH_AS(fd_gradient(partial, theta, 1e-3), doctest::Contains("coordinate 1"),
                         NumericError);
    CHECK_THROWS_AS(fd_gradient(partial, theta, 0.0), InputError);
}

namespace {

KFConfig small_loo_config(int iterations, std::uint64_t seed = 7) {
    KFConfig cfg;
    cfg.loss = LossKind::LooPredictionError;
    cfg.regressor = RegressorKind::KPCR;
    cfg.iterations = iterations;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    cfg.fd_step = 1e-4;
    cfg.rng_seed = seed;
    cfg.n_components = 3;
    return cfg;
}

}  // namespace

TEST_CASE("optimize with zero learning rate leaves parameters unchanged") {
    const auto ds = data::synth_nonlinear(40, 3, 0.05, 5);
    auto cfg = small_loo_config(5);
    cfg.learning_rate = 0.0;
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian, 0.4, 0.2);
    const auto result = optimize(ds.X, ds.y, spec0, cfg);
    REQUIRE(result.trace.records.size() == 5);
    CHECK(result.spec.terms[0].log_width == 0.4);
    CHECK(result.spec.terms[0].log_amplitude == 0.2);
    for (const auto& rec : result.trace.records) CHECK(rec.theta(0) == 0.4);
}

TEST_CASE("optimize is deterministic across runs and thread counts") {
    const auto ds = data::synth_nonlinear(50, 3, 0.05, 6);
    const auto spec0 = KernelSpec::single(KernelFamily::Matern52, -0.5);
    const auto cfg = small_loo_config(4);

    const auto a = optimize(ds.X, ds.y, spec0, cfg);
    const auto b = optimize(ds.X, ds.y, spec0, cfg);
    CHECK(a.trace.to_csv(false) == b.trace.to_csv(false));

    set_thread_count(3);
    const auto c = optimize(ds.X, ds.y, spec0, cfg);
    set_thread_count(1);
    CHECK(a.trace.to_csv(false) == c.trace.to_csv(false));
    CHECK((a.spec.parameters() - c.spec.parameters()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero-coefficient momentum reproduces plain sgd exactly") {
    const auto ds = data::synth_nonlinear(40, 2, 0.05, 8);
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian, -0.3);

    auto cfg = small_loo_config(4);
    const auto plain = optimize(ds.X, ds.y, spec0, cfg);

    cfg.momentum = MomentumKind::Polyak;
    cfg.momentum_gamma = 0.0;
    const auto polyak = optimize(ds.X, ds.y, spec0, cfg);
    CHECK(plain.trace.to_csv(false) == polyak.trace.to_csv(false));

    cfg.momentum = MomentumKind::Nesterov;
    const auto nesterov = optimize(ds.X, ds.y, spec0, cfg);
    CHECK(plain.trace.to_csv(false) == nesterov.trace.to_csv(false));

    cfg.momentum = MomentumKind::Polyak;
    cfg.momentum_gamma = 0.6;
    const auto heavy = optimize(ds.X, ds.y, spec0, cfg);
    CHECK(plain.trace.to_csv(false) != heavy.trace.to_csv(false));
}

TEST_CASE("a small step along the negative gradient decreases the loss") {
    const auto ds = data::synth_nonlinear(40, 3, 0.0, 9);
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian, std::log(0.5));
    auto loss = [&](const VectorXd& t) {
        KernelSpec s = spec0;
        s.set_parameters(t);
        return loo_loss(s, ds.X, ds.y, 3, RegressorKind::KPCR);
    };
    const VectorXd theta = spec0.parameters();
    const double base = loss(theta);
    const VectorXd g = fd_gradient(loss, theta, 1e-4);
    REQUIRE(g.norm() > 0.0);
    bool improved = false;
    for (double alpha : {1e-4, 1e-3, 1e-2, 1e-1})
        if (loss(theta - alpha * g) < base) improved = true;
    CHECK(improved);
}

TEST_CASE("optimize reduces the loss on nonlinear synthetic data") {
    const auto ds = data::synth_nonlinear(60, 3, 0.01, 10);
    auto cfg = small_loo_config(40);
    cfg.batch_size = 24;
    cfg.learning_rate = 0.15;
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian, std::log(0.4));
    const auto result = optimize(ds.X, ds.y, spec0, cfg);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& rec : result.trace.records) best = std::min(best, rec.loss);
    CHECK(best < result.trace.records.front().loss);
}

TEST_CASE("optimize aborts with the trace attached when the loss is not finite") {
    const auto ds = data::synth_nonlinear(30, 2, 0.05, 11);
    auto cfg = small_loo_config(3);
    // amplitude overflows to infinity at evaluation time
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian, 0.0, 1000.0);
    try {
        optimize(ds.X, ds.y, spec0, cfg);
        FAIL("expected OptimizeError");
    } catch (const OptimizeError& e) {
        CHECK(e.iteration == 1);
        CHECK(e.trace.records.empty());
    }
}

TEST_CASE("optimize config validation") {
    const auto ds = data::synth_nonlinear(20, 2, 0.05, 12);
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian);
    auto cfg = small_loo_config(1);
    cfg.batch_size = 50;  // larger than the dataset
    CHECK_THROWS_AS(optimize(ds.X, ds.y, spec0, cfg), InputError);

    cfg = small_loo_config(1);
    cfg.n_components = 15;  // batch_size 16 allows at most 14
    CHECK_THROWS_AS(optimize(ds.X, ds.y, spec0, cfg), InputError);

    cfg = small_loo_config(1);
    cfg.loss = LossKind::NormRatio;
    cfg.subbatch_fraction = 0.1;  // 0.1 * 16 < 2
    CHECK_THROWS_AS(optimize(ds.X, ds.y, spec0, cfg), InputError);
}

TEST_CASE("optimize with the norm-ratio loss runs and records sub-batch losses") {
    const auto ds = data::synth_nonlinear(50, 3, 0.05, 13);
    KFConfig cfg;
    cfg.loss = LossKind::NormRatio;
    cfg.regressor = RegressorKind::GPRWeights;
    cfg.iterations = 5;
    cfg.batch_size = 16;
    cfg.subbatch_count = 3;
    cfg.subbatch_fraction = 0.5;
    cfg.learning_rate = 0.05;
    cfg.rng_seed = 3;
    const auto result = optimize(ds.X, ds.y, KernelSpec::single(KernelFamily::Gaussian), cfg);
    REQUIRE(result.trace.records.size() == 5);
    for (const auto& rec : result.trace.records) {
        CHECK(std::isfinite(rec.loss));
        CHECK(rec.loss >= -1e-9);
        CHECK(rec.loss <= 1.0 + 1e-9);
    }
}

TEST_CASE("widths_only freezes the amplitude parameters") {
    const auto ds = data::synth_nonlinear(40, 2, 0.05, 14);
    auto cfg = small_loo_config(4);
    cfg.widths_only = true;
    const auto spec0 = KernelSpec::single(KernelFamily::Gaussian, -0.2, 0.3);
    const auto result = optimize(ds.X, ds.y, spec0, cfg);
    CHECK(result.spec.terms[0].log_amplitude == 0.3);
    CHECK(result.spec.terms[0].log_width != -0.2);
}

TEST_CASE("trace csv layout") {
    TrainingTrace trace;
    trace.n_params = 2;
    CHECK(trace.to_csv() == "iter,loss,theta_0,theta_1,grad_0,grad_1,ms\n");

    TraceRecord rec;
    rec.iteration = 1;
    rec.loss = 0.5;
    rec.theta = VectorXd::Zero(2);
    rec.gradient = VectorXd::Ones(2);
    rec.wall_ms = 1.25;
    trace.records.push_back(rec);
    CHECK(trace.to_csv() == "iter,loss,theta_0,theta_1,grad_0,grad_1,ms\n1,0.5,0,0,1,1,1.25\n");
    CHECK(trace.to_csv(false) == "iter,loss,theta_0,theta_1,grad_0,grad_1\n1,0.5,0,0,1,1\n");
}
