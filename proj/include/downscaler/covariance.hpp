#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "distance.hpp"
#include "errors.hpp"
#include "linalg.hpp"

namespace downscaler {

// ---------------------------------------------------------------------------
// Exponential kernel
// ---------------------------------------------------------------------------

inline double exp_cov(double d, double phi) { return std::exp(-phi * d); }

/// Effective range (distance at which correlation drops to e^-3). Reporting only.
inline double effective_range(double phi) { return 3.0 / phi; }

/// Unit-variance exponential correlation matrix from a distance matrix.
inline Mat exp_cov_matrix(const Mat& dist, double phi) { return (-phi * dist.array()).exp().matrix(); }

/// Correlation matrix of a latent process at the given sites (no ridge).
inline Mat latent_cov_matrix(std::span<const LonLat> sites, double phi, DistanceMetric metric = DistanceMetric::GreatCircle) {
    if (sites.empty()) throw DimensionMismatch("latent_cov_matrix needs at least one site");
    if (!(phi > 0.0)) throw DomainError("decay must be positive");
    return exp_cov_matrix(distance_matrix(sites, metric), phi);
}

// ---------------------------------------------------------------------------
// Coefficient indexing
// ---------------------------------------------------------------------------

/// Row of beta_ij in the stacked coefficient vector (i: 0-based pollutant,
/// j: 0 for the intercept, 1..p for the slope on x_j).
inline int coef_index(int p, int i, int j) { return i * (p + 1) + j; }

inline int n_processes(int p) { return p * (p + 1); }

// ---------------------------------------------------------------------------
// Variant patterns
// ---------------------------------------------------------------------------

enum class VariantPattern { IndependentPollutants, SharedIntercept, SharedInterceptDiagSlopes, WithinPollutantCorrelated, Full };

inline std::string to_string(VariantPattern v) {
    switch (v) {
        case VariantPattern::IndependentPollutants: return "IndependentPollutants";
        case VariantPattern::SharedIntercept: return "SharedIntercept";
        case VariantPattern::SharedInterceptDiagSlopes: return "SharedInterceptDiagSlopes";
        case VariantPattern::WithinPollutantCorrelated: return "WithinPollutantCorrelated";
        case VariantPattern::Full: return "Full";
    }
    return "Full";
}

inline VariantPattern variant_from_string(const std::string& s) {
    for (auto v : {VariantPattern::IndependentPollutants, VariantPattern::SharedIntercept, VariantPattern::SharedInterceptDiagSlopes,
                   VariantPattern::WithinPollutantCorrelated, VariantPattern::Full}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant '" + s + "'");
}

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Lower-triangular sparsity pattern of A for a p-variate downscaler.
/// For p = 2 this is exactly the set of non-null entries listed for each
/// model version; other p use the natural generalisation.
inline Mask variant_mask(VariantPattern v, int p) {
    const int n = n_processes(p);
    Mask m = Mask::Constant(n, n, false);
    for (int r = 0; r < n; ++r) {
        const int ri = r / (p + 1), rj = r % (p + 1);
        for (int c = 0; c <= r; ++c) {
            const int ci = c / (p + 1), cj = c % (p + 1);
            bool on = false;
            switch (v) {
                case VariantPattern::Full: on = true; break;
                case VariantPattern::IndependentPollutants:
                    on = ri == ci && (rj == 0 || rj == ri + 1) && (cj == 0 || cj == ci + 1);
                    break;
                case VariantPattern::SharedIntercept: on = rj == 0 && cj == 0; break;
                case VariantPattern::SharedInterceptDiagSlopes: on = (rj == 0 && cj == 0) || r == c; break;
                case VariantPattern::WithinPollutantCorrelated:
                    on = (ri == ci && (cj == rj || cj == 0)) || (ci < ri && cj == rj);
                    break;
            }
            m(r, c) = on;
        }
    }
    return m;
}

/// Which overall coefficients beta_ij are free. The independent-pollutants
/// version drops the cross-pollutant covariates (beta_ij == 0 for j != 0, i+1).
inline std::vector<bool> overall_mask(VariantPattern v, int p) {
    std::vector<bool> m(static_cast<std::size_t>(n_processes(p)), true);
    if (v == VariantPattern::IndependentPollutants) {
        for (int i = 0; i < p; ++i)
            for (int j = 1; j <= p; ++j)
                if (j != i + 1) m[static_cast<std::size_t>(coef_index(p, i, j))] = false;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Coregionalization matrix
// ---------------------------------------------------------------------------

class Coregionalization {
public:
    Coregionalization() = default;
    Coregionalization(int p, Mask mask) : p_(p), mask_(std::move(mask)), a_(Mat::Zero(n_processes(p), n_processes(p))) {
        if (mask_.rows() != n_processes(p) || mask_.cols() != n_processes(p)) throw DimensionMismatch("mask must be p(p+1) square");
    }
    Coregionalization(int p, VariantPattern v) : Coregionalization(p, variant_mask(v, p)) {}

    /// Build from a full matrix; entries outside the mask must be zero.
    static Coregionalization from_matrix(int p, Mask mask, const Mat& a) {
        Coregionalization c(p, std::move(mask));
        if (a.rows() != c.dim() || a.cols() != c.dim()) throw DimensionMismatch("A must be p(p+1) square");
        for (int r = 0; r < c.dim(); ++r)
            for (int k = 0; k < c.dim(); ++k)
                if (a(r, k) != 0.0) c.set(r, k, a(r, k));
        return c;
    }

    [[nodiscard]] int p() const { return p_; }
    [[nodiscard]] int dim() const { return n_processes(p_); }
    [[nodiscard]] const Mat& matrix() const { return a_; }
    [[nodiscard]] const Mask& mask() const { return mask_; }
    [[nodiscard]] double operator()(int r, int k) const { return a_(r, k); }

    void set(int r, int k, double value) {
        if (!mask_(r, k)) throw DomainError("A(" + std::to_string(r + 1) + "," + std::to_string(k + 1) + ") is masked out");
        a_(r, k) = value;
    }

    /// T = A A', the local covariance of the stacked coefficients.
    [[nodiscard]] Mat local_covariance() const { return a_ * a_.transpose(); }

    /// Unmasked (row, column) entries, row-major.
    [[nodiscard]] std::vector<std::pair<int, int>> free_entries() const {
        std::vector<std::pair<int, int>> out;
        for (int r = 0; r < dim(); ++r)
            for (int k = 0; k <= r; ++k)
                if (mask_(r, k)) out.emplace_back(r, k);
        return out;
    }

    /// Latent processes that load on at least one coefficient.
    [[nodiscard]] std::vector<int> active_processes() const {
        std::vector<int> out;
        for (int k = 0; k < dim(); ++k)
            if (mask_.col(k).any()) out.push_back(k);
        return out;
    }

    /// Masked entries exactly zero, unmasked diagonal strictly positive.
    [[nodiscard]] bool valid() const {
        for (int r = 0; r < dim(); ++r)
            for (int k = 0; k < dim(); ++k) {
                if (!mask_(r, k) && a_(r, k) != 0.0) return false;
                if (r == k && mask_(r, k) && !(a_(r, k) > 0.0)) return false;
            }
        return true;
    }

private:
    int p_ = 0;
    Mask mask_;
    Mat a_;
};

// ---------------------------------------------------------------------------
// Induced covariances
// ---------------------------------------------------------------------------

/// Design row block I_p (x) (1, x_1, ..., x_p): a p x p(p+1) matrix.
inline Mat coefficient_design(std::span<const double> x) {
    const int p = static_cast<int>(x.size());
    Mat d = Mat::Zero(p, n_processes(p));
    for (int i = 0; i < p; ++i) {
        d(i, coef_index(p, i, 0)) = 1.0;
        for (int j = 1; j <= p; ++j) d(i, coef_index(p, i, j)) = x[static_cast<std::size_t>(j - 1)];
    }
    return d;
}

/// Cov(Y(s), Y(s')) as a p x p matrix with entry (i, i') = Cov(Y_i(s), Y_i'(s')),
/// where s lies in a cell with outputs x_b and s' in a cell with outputs x_bp.
/// Nuggets enter only when s and s' coincide, on the diagonal.
inline Mat induced_joint_cov(const Coregionalization& coreg, std::span<const double> phi, std::span<const double> x_b,
                             std::span<const double> x_bp, double dist, std::span<const double> nuggets = {}, bool same_point = false) {
    const int p = coreg.p();
    if (static_cast<int>(x_b.size()) != p || static_cast<int>(x_bp.size()) != p) {
        throw DimensionMismatch("covariate vectors must have length p = " + std::to_string(p));
    }
    if (static_cast<int>(phi.size()) != coreg.dim()) throw DimensionMismatch("phi must have length p(p+1)");
    Vec sigma_w(coreg.dim());
    for (int k = 0; k < coreg.dim(); ++k) sigma_w(k) = exp_cov(dist, phi[static_cast<std::size_t>(k)]);
    const Mat& a = coreg.matrix();
    Mat cov = coefficient_design(x_b) * a * sigma_w.asDiagonal() * a.transpose() * coefficient_design(x_bp).transpose();
    if (same_point && !nuggets.empty()) {
        if (static_cast<int>(nuggets.size()) != p) throw DimensionMismatch("nuggets must have length p");
        for (int i = 0; i < p; ++i) cov(i, i) += nuggets[static_cast<std::size_t>(i)];
    }
    return cov;
}

struct BivariateCov {
    double cov11 = 0.0;  ///< Cov(Y1(s), Y1(s'))
    double cov22 = 0.0;  ///< Cov(Y2(s), Y2(s'))
    double cov12 = 0.0;  ///< Cov(Y1(s), Y2(s'))
};

/// Explicit scalar covariance formulas for the bivariate model versions with
/// three, seven and thirteen free A entries. Same quantities as
/// induced_joint_cov, written out term by term (A indices are 1-based in the
/// comments to match the usual A_kl naming).
inline BivariateCov closed_form_cov(VariantPattern variant, const Coregionalization& coreg, std::span<const double> phi,
                                    std::span<const double> x_b, std::span<const double> x_bp, double dist,
                                    std::span<const double> nugget, bool same_point) {
    if (coreg.p() != 2) throw DimensionMismatch("closed-form covariances are bivariate");
    if (phi.size() != 6 || x_b.size() != 2 || x_bp.size() != 2 || nugget.size() != 2) {
        throw DimensionMismatch("closed_form_cov needs phi[6], x_b[2], x_bp[2], nugget[2]");
    }
    auto A = [&](int r, int c) { return coreg(r - 1, c - 1); };
    auto rho = [&](int k) { return exp_cov(dist, phi[static_cast<std::size_t>(k - 1)]); };
    const double x1 = x_b[0], x2 = x_b[1], y1 = x_bp[0], y2 = x_bp[1];
    const double delta = same_point ? 1.0 : 0.0;

    BivariateCov out;
    switch (variant) {
        case VariantPattern::SharedIntercept:
            out.cov11 = A(1, 1) * A(1, 1) * rho(1) + nugget[0] * delta;
            out.cov22 = A(4, 1) * A(4, 1) * rho(1) + A(4, 4) * A(4, 4) * rho(4) + nugget[1] * delta;
            out.cov12 = A(1, 1) * A(4, 1) * rho(1);
            break;
        case VariantPattern::SharedInterceptDiagSlopes:
            out.cov11 = A(1, 1) * A(1, 1) * rho(1) + A(2, 2) * A(2, 2) * x1 * y1 * rho(2) + A(3, 3) * A(3, 3) * x2 * y2 * rho(3) +
                        nugget[0] * delta;
            out.cov22 = A(4, 1) * A(4, 1) * rho(1) + A(4, 4) * A(4, 4) * rho(4) + A(5, 5) * A(5, 5) * x1 * y1 * rho(5) +
                        A(6, 6) * A(6, 6) * x2 * y2 * rho(6) + nugget[1] * delta;
            out.cov12 = A(1, 1) * A(4, 1) * rho(1);
            break;
        case VariantPattern::WithinPollutantCorrelated: {
            // loadings of Y1 on w1 and of Y2 on w4 depend on the cell outputs
            const double g1 = A(1, 1) + A(2, 1) * x1 + A(3, 1) * x2;
            const double g1p = A(1, 1) + A(2, 1) * y1 + A(3, 1) * y2;
            const double g4 = A(4, 4) + A(5, 4) * x1 + A(6, 4) * x2;
            const double g4p = A(4, 4) + A(5, 4) * y1 + A(6, 4) * y2;
            out.cov11 = rho(1) * g1 * g1p + A(2, 2) * A(2, 2) * x1 * y1 * rho(2) + A(3, 3) * A(3, 3) * x2 * y2 * rho(3) + nugget[0] * delta;
            out.cov12 = rho(1) * g1 * A(4, 1) + A(2, 2) * A(5, 2) * x1 * y1 * rho(2) + A(3, 3) * A(6, 3) * x2 * y2 * rho(3);
            out.cov22 = A(4, 1) * A(4, 1) * rho(1) + A(5, 2) * A(5, 2) * x1 * y1 * rho(2) + A(6, 3) * A(6, 3) * x2 * y2 * rho(3) +
                        rho(4) * g4 * g4p + A(5, 5) * A(5, 5) * x1 * y1 * rho(5) + A(6, 6) * A(6, 6) * x2 * y2 * rho(6) +
                        nugget[1] * delta;
            break;
        }
        default:
            throw UnsupportedVariant("no closed-form covariance for variant " + to_string(variant));
    }
    return out;
}

}  // namespace downscaler
