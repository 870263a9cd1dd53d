#include "hnll/smallspd.hpp"

#include <algorithm>
#include <cmath>

#include "hnll/error.hpp"

namespace hnll {

Sym2 chol2_to_cov(const Chol2& L) {
    return Sym2{L.l11 * L.l11, L.l11 * L.l21, L.l21 * L.l21 + L.l22 * L.l22};
}

namespace {
double half_gap(const Sym2& S) {
    const double h = 0.5 * (S.a - S.c);
    return std::hypot(h, S.b);
}
}  // namespace

double cov_min_eig(const Sym2& S) { return 0.5 * (S.a + S.c) - half_gap(S); }

double cov_max_eig(const Sym2& S) { return 0.5 * (S.a + S.c) + half_gap(S); }

Chol2 clamp_chol_diag(const Chol2& L, double delta) {
    if (!(delta > 0.0)) throw ConfigError("clamp_chol_diag: delta must be > 0");
    return Chol2{std::max(L.l11, delta), L.l21, std::max(L.l22, delta)};
}

CholeskyResult chol_full(const Eigen::MatrixXd& A) {
    if (A.rows() != A.cols()) throw ShapeError("chol_full: matrix must be square");
    if (A.rows() > 64) throw ConfigError("chol_full: oracle limited to n <= 64");
    const Eigen::Index n = A.rows();

    // Work on the lower triangle in place, updating the trailing block after
    // each column.
    Eigen::MatrixXd W = A;
    double logdet = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double pivot = W(k, k);
        if (!(pivot > 0.0)) throw NotPositiveDefinite(static_cast<std::size_t>(k + 1));
        const double lkk = std::sqrt(pivot);
        W(k, k) = lkk;
        logdet += 2.0 * std::log(lkk);
        for (Eigen::Index i = k + 1; i < n; ++i) W(i, k) /= lkk;
        for (Eigen::Index j = k + 1; j < n; ++j) {
            const double ljk = W(j, k);
            for (Eigen::Index i = j; i < n; ++i) W(i, j) -= W(i, k) * ljk;
        }
    }
    CholeskyResult out;
    out.L = W.triangularView<Eigen::Lower>();
    out.logdet = logdet;
    return out;
}

}  // namespace hnll
