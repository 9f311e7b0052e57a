#pragma once

// Dense linear algebra used across the library: symmetric eigendecomposition,
// pseudoinverse, spectral norm, and fixed-size 2x2 real/complex helpers.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace momentum_lab {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using cplx = std::complex<double>;

inline constexpr double kSymmetryTolerance = 1e-10;
inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kPsdClampTolerance = 1e-12;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
    if (m.size() == 0 || !m.allFinite()) {
        throw std::invalid_argument(std::string(what) + ": matrix is empty or has non-finite entries");
    }
}

/// Largest |M_ij - M_ji| together with its position.
struct AsymmetryReport {
    double worst = 0.0;
    Index row = 0;
    Index col = 0;
};

inline AsymmetryReport asymmetry(const Matrix& m) {
    AsymmetryReport rep;
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = i + 1; j < m.cols(); ++j) {
            const double d = std::abs(m(i, j) - m(j, i));
            if (d > rep.worst) rep = {d, i, j};
        }
    }
    return rep;
}

inline bool is_symmetric(const Matrix& m, double tol = kSymmetryTolerance) {
    return m.rows() == m.cols() && asymmetry(m).worst <= tol;
}

/// Eigenvalues sorted non-increasing, with matching orthonormal columns in
/// `basis`. `rank` counts eigenvalues above kRankTolerance * lambda_max.
struct SpectralDecomposition {
    Vector eigenvalues;
    Matrix basis;
    Index rank = 0;

    Matrix reconstruct() const {
        return basis * eigenvalues.asDiagonal() * basis.transpose();
    }
    /// Columns spanning the rank-r eigenspace.
    Matrix range_basis() const { return basis.leftCols(rank); }
    /// Smallest eigenvalue counted toward the rank.
    double lambda_min_positive() const { return rank > 0 ? eigenvalues(rank - 1) : 0.0; }
};

/// Symmetric eigendecomposition.
///
/// With `psd = true`, eigenvalues in [-1e-12, 0) are clamped to zero and
/// anything more negative is reported as an error.
inline SpectralDecomposition sym_eig(const Matrix& m, bool psd = false,
                                     double rank_tol = kRankTolerance) {
    require_finite(m, "sym_eig");
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("sym_eig: matrix is not square");
    }
    const auto asym = asymmetry(m);
    if (asym.worst > kSymmetryTolerance) {
        std::ostringstream os;
        os << "sym_eig: matrix is not symmetric; worst entry (" << asym.row << ", " << asym.col
           << ") differs from its transpose by " << asym.worst;
        throw std::invalid_argument(os.str());
    }
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("sym_eig: eigensolver did not converge");
    }
    const Index n = m.rows();
    SpectralDecomposition out;
    out.eigenvalues.resize(n);
    out.basis.resize(n, n);
    // Eigen returns ascending order.
    for (Index i = 0; i < n; ++i) {
        out.eigenvalues(i) = solver.eigenvalues()(n - 1 - i);
        out.basis.col(i) = solver.eigenvectors().col(n - 1 - i);
    }
    if (psd) {
        for (Index i = 0; i < n; ++i) {
            double& lam = out.eigenvalues(i);
            if (lam < 0.0) {
                if (lam < -kPsdClampTolerance) {
                    std::ostringstream os;
                    os << "sym_eig: PSD input has eigenvalue " << lam;
                    throw std::invalid_argument(os.str());
                }
                lam = 0.0;
            }
        }
    }
    const double top = std::max(out.eigenvalues(0), 0.0);
    out.rank = 0;
    if (top > 0.0) {
        for (Index i = 0; i < n; ++i) {
            if (out.eigenvalues(i) > rank_tol * top) ++out.rank;
        }
    }
    return out;
}

/// Moore-Penrose pseudoinverse; singular values at or below tol * sigma_max
/// are treated as zero.
inline Matrix pinv(const Matrix& m, double tol = kRankTolerance) {
    require_finite(m, "pinv");
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    Matrix out = Matrix::Zero(m.cols(), m.rows());
    if (s.size() == 0 || s(0) == 0.0) return out;
    const double cutoff = tol * s(0);
    for (Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff) {
            out.noalias() += (svd.matrixV().col(i) / s(i)) * svd.matrixU().col(i).transpose();
        }
    }
    return out;
}

/// Pseudoinverse of a symmetric PSD matrix through its eigendecomposition.
inline Matrix pinv_psd(const Matrix& m, double tol = kRankTolerance) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (m + m.transpose()));
    const Vector& lam = solver.eigenvalues();
    const double top = lam.cwiseAbs().maxCoeff();
    Matrix out = Matrix::Zero(m.rows(), m.cols());
    if (top == 0.0) return out;
    for (Index i = 0; i < lam.size(); ++i) {
        if (lam(i) > tol * top) {
            out.noalias() += (solver.eigenvectors().col(i) / lam(i)) *
                             solver.eigenvectors().col(i).transpose();
        }
    }
    return out;
}

inline double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

/// Symmetric square root of a PSD matrix.
inline Matrix psd_sqrt(const Matrix& m) {
    const auto eig = sym_eig(m, true);
    return eig.basis * eig.eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           eig.basis.transpose();
}

// ---------------------------------------------------------------------------
// 2x2 helpers

/// Real 2x2 matrix [[a, b], [c, d]].
struct Real2x2 {
    double a = 0, b = 0, c = 0, d = 0;

    static constexpr Real2x2 identity() { return {1, 0, 0, 1}; }

    friend constexpr Real2x2 operator*(const Real2x2& x, const Real2x2& y) {
        return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d,
                x.c * y.a + x.d * y.c, x.c * y.b + x.d * y.d};
    }
    constexpr Real2x2 transpose() const { return {a, c, b, d}; }
    constexpr double trace() const { return a + d; }
    constexpr double det() const { return a * d - b * c; }
    double frobenius() const { return std::sqrt(a * a + b * b + c * c + d * d); }

    /// Largest singular value, closed form:
    /// sigma_max = (sqrt((a+d)^2 + (c-b)^2) + sqrt((a-d)^2 + (b+c)^2)) / 2.
    double spectral_norm() const {
        return 0.5 * (std::hypot(a + d, c - b) + std::hypot(a - d, b + c));
    }
    double min_singular_value() const {
        return 0.5 * std::abs(std::hypot(a + d, c - b) - std::hypot(a - d, b + c));
    }
};

/// Complex 2x2 matrix stored row-major.
struct Complex2x2 {
    std::array<cplx, 4> e{};

    Complex2x2() = default;
    Complex2x2(cplx a, cplx b, cplx c, cplx d) : e{a, b, c, d} {}
    explicit Complex2x2(const Real2x2& r) : e{r.a, r.b, r.c, r.d} {}

    static Complex2x2 identity() { return {1.0, 0.0, 0.0, 1.0}; }

    cplx& operator()(int i, int j) { return e[static_cast<std::size_t>(2 * i + j)]; }
    const cplx& operator()(int i, int j) const { return e[static_cast<std::size_t>(2 * i + j)]; }

    friend Complex2x2 operator*(const Complex2x2& x, const Complex2x2& y) {
        return {x(0, 0) * y(0, 0) + x(0, 1) * y(1, 0), x(0, 0) * y(0, 1) + x(0, 1) * y(1, 1),
                x(1, 0) * y(0, 0) + x(1, 1) * y(1, 0), x(1, 0) * y(0, 1) + x(1, 1) * y(1, 1)};
    }
    friend Complex2x2 operator-(const Complex2x2& x, const Complex2x2& y) {
        return {x.e[0] - y.e[0], x.e[1] - y.e[1], x.e[2] - y.e[2], x.e[3] - y.e[3]};
    }
    Complex2x2 adjoint() const {
        return {std::conj(e[0]), std::conj(e[2]), std::conj(e[1]), std::conj(e[3])};
    }
    double frobenius() const {
        double s = 0.0;
        for (const auto& z : e) s += std::norm(z);
        return std::sqrt(s);
    }
    bool all_finite() const {
        return std::all_of(e.begin(), e.end(), [](const cplx& z) {
            return std::isfinite(z.real()) && std::isfinite(z.imag());
        });
    }
};

}  // namespace momentum_lab
