#pragma once

#include <Eigen/Core>

namespace hnll {

// Lower-triangular factor [[l11, 0], [l21, l22]] of one 2x2 covariance block.
struct Chol2 {
    double l11 = 1.0;
    double l21 = 0.0;
    double l22 = 1.0;

    friend bool operator==(const Chol2&, const Chol2&) = default;
};

// Symmetric 2x2 matrix [[a, b], [b, c]].
struct Sym2 {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;

    double trace() const { return a + c; }
    double det() const { return a * c - b * b; }

    friend bool operator==(const Sym2&, const Sym2&) = default;
};

// L * L^T.
Sym2 chol2_to_cov(const Chol2& L);

// Smaller eigenvalue, closed form. Zero for the zero matrix.
double cov_min_eig(const Sym2& S);
double cov_max_eig(const Sym2& S);

// Floors both diagonal entries at delta; l21 is left alone. Throws ConfigError
// for delta <= 0.
Chol2 clamp_chol_diag(const Chol2& L, double delta);

struct CholeskyResult {
    Eigen::MatrixXd L;
    double logdet = 0.0;
};

// Unpivoted right-looking Cholesky for small SPD matrices (test oracle scale,
// n <= 64). Throws NotPositiveDefinite with the 1-based failing pivot.
CholeskyResult chol_full(const Eigen::MatrixXd& A);

}  // namespace hnll
