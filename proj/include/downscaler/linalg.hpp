#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "errors.hpp"
#include "rng.hpp"

namespace downscaler {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Diagonal jitter added before every latent-covariance factorisation.
inline constexpr double kRidge = 1e-8;

/// Cholesky factor of `m + ridge * I`. Throws NotPositiveDefinite when the
/// factorisation fails even with the ridge.
inline Eigen::LLT<Mat> cholesky_ridge(const Mat& m, double ridge = kRidge, const std::string& what = "matrix") {
    Mat work = m;
    work.diagonal().array() += ridge;
    Eigen::LLT<Mat> llt(work);
    if (llt.info() != Eigen::Success) {
        throw NotPositiveDefinite(what + " is not positive definite after ridge " + std::to_string(ridge));
    }
    return llt;
}

/// Inverse of `m + ridge * I` through its Cholesky factor.
inline Mat inverse_spd(const Mat& m, double ridge = kRidge, const std::string& what = "matrix") {
    auto llt = cholesky_ridge(m, ridge, what);
    return llt.solve(Mat::Identity(m.rows(), m.cols()));
}

inline Vec standard_normal_vector(Rng& rng, Eigen::Index n) {
    Vec z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
    return z;
}

/// Draw from N(Q^{-1} b, Q^{-1}) given the precision Q and linear term b.
inline Vec sample_from_precision(const Mat& precision, const Vec& linear, Rng& rng, const std::string& what = "precision") {
    Eigen::LLT<Mat> llt(precision);
    if (llt.info() != Eigen::Success) {
        llt = cholesky_ridge(precision, kRidge, what);
    }
    Vec mean = llt.solve(linear);
    Vec z = standard_normal_vector(rng, precision.rows());
    return mean + llt.matrixU().solve(z);
}

/// Draw from N(mean, cov) via its Cholesky factor.
inline Vec sample_mvn(const Vec& mean, const Mat& cov, Rng& rng, const std::string& what = "covariance") {
    auto llt = cholesky_ridge(cov, kRidge, what);
    return mean + llt.matrixL() * standard_normal_vector(rng, mean.size());
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

}  // namespace downscaler
