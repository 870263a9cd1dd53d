#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "hnll/error.hpp"
#include "hnll/rng.hpp"
#include "hnll/smallspd.hpp"

using namespace hnll;

namespace {

// Smaller root of det(S - x I) by bisection on [0, trace].
double min_eig_bisect(const Sym2& S) {
    auto f = [&](double x) { return (S.a - x) * (S.c - x) - S.b * S.b; };
    double lo = 0.0, hi = std::min(S.a, S.c);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("chol2_to_cov multiplies out L L^T") {
    const Sym2 S = chol2_to_cov(Chol2{2.0, -1.0, 3.0});
    CHECK(S.a == 4.0);
    CHECK(S.b == -2.0);
    CHECK(S.c == 10.0);
}

TEST_CASE("closed-form eigenvalues agree with bisection") {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        const Chol2 L{rng.uniform(0.01, 2.0), rng.normal(), rng.uniform(0.01, 2.0)};
        const Sym2 S = chol2_to_cov(L);
        const double lmin = cov_min_eig(S);
        const double lmax = cov_max_eig(S);
        CHECK(lmin == doctest::Approx(min_eig_bisect(S)).epsilon(1e-9));
        CHECK(lmin + lmax == doctest::Approx(S.trace()).epsilon(1e-12));
        CHECK(lmin * lmax == doctest::Approx(S.det()).epsilon(1e-9));
    }
}

TEST_CASE("eigenvalues of degenerate matrices") {
    CHECK(cov_min_eig(Sym2{}) == 0.0);
    CHECK(cov_max_eig(Sym2{}) == 0.0);
    CHECK(cov_min_eig(Sym2{3.0, 0.0, 3.0}) == doctest::Approx(3.0));
    CHECK(cov_min_eig(Sym2{1.0, 1.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("clamp_chol_diag floors only the diagonal") {
    const Chol2 c = clamp_chol_diag(Chol2{-1.0, -5.0, 0.5}, 0.1);
    CHECK(c.l11 == 0.1);
    CHECK(c.l21 == -5.0);
    CHECK(c.l22 == 0.5);
    CHECK_THROWS_AS(clamp_chol_diag(Chol2{}, 0.0), ConfigError);
}

TEST_CASE("chol_full matches Eigen LLT and reports the failing pivot") {
    Rng rng(3);
    Eigen::MatrixXd B(6, 6);
    for (int i = 0; i < 36; ++i) B.data()[i] = rng.normal();
    const Eigen::MatrixXd A = B * B.transpose() + Eigen::MatrixXd::Identity(6, 6);
    const auto r = chol_full(A);
    const Eigen::MatrixXd ref = A.llt().matrixL();
    CHECK((r.L - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.logdet == doctest::Approx(std::log(A.determinant())).epsilon(1e-12));

    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
    bad(2, 2) = -1.0;
    try {
        chol_full(bad);
        FAIL("expected NotPositiveDefinite");
    } catch (const NotPositiveDefinite& e) {
        CHECK(e.pivot() == 3);
    }
}
