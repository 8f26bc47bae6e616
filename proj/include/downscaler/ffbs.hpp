#pragma once

#include <utility>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace downscaler {

/// Gaussian state space with diagonal AR(1) transition
///   x_t = diag(rho) x_{t-1} + N(0, diag(q)),   t = 0..T-1,
///   x_{-1} ~ N(m0, C0),
///   y_t = H_t x_t + N(0, diag(obs_var_t)).
/// Index 0 of every returned path is the pre-sample state x_{-1}.
struct Ar1StateSpace {
    Vec rho;
    Vec q;
    Vec m0;
    Mat C0;
    std::vector<Mat> H;
    std::vector<Vec> y;
    std::vector<Vec> obs_var;

    [[nodiscard]] int dim() const { return static_cast<int>(rho.size()); }
    [[nodiscard]] int length() const { return static_cast<int>(H.size()); }

    struct Filtered {
        std::vector<Vec> a, m;  // predicted and filtered means
        std::vector<Mat> R, C;  // predicted and filtered covariances
    };

    void check() const {
        for (int k = 0; k < dim(); ++k)
            if (!(std::abs(rho(k)) < 1.0)) throw NonStationary("AR coefficient must satisfy |rho| < 1");
        if (y.size() != H.size() || obs_var.size() != H.size()) throw DimensionMismatch("state-space observation arrays differ in length");
    }

    [[nodiscard]] Filtered filter() const {
        check();
        Filtered f;
        Vec m = m0;
        Mat C = C0;
        const Mat Phi = rho.asDiagonal();
        for (int t = 0; t < length(); ++t) {
            Vec a = Phi * m;
            Mat R = Phi * C * Phi;
            R.diagonal() += q;
            R = symmetrize(R);
            if (H[t].rows() > 0) {
                Mat Rinv = inverse_spd(R, 0.0, "state prediction covariance");
                const Vec wts = obs_var[t].cwiseInverse();
                Mat prec = Rinv + H[t].transpose() * wts.asDiagonal() * H[t];
                C = symmetrize(inverse_spd(prec, 0.0, "state posterior precision"));
                m = C * (Rinv * a + H[t].transpose() * wts.asDiagonal() * y[t]);
            } else {
                m = a;
                C = R;
            }
            f.a.push_back(std::move(a));
            f.R.push_back(std::move(R));
            f.m.push_back(m);
            f.C.push_back(C);
        }
        return f;
    }

    /// Rauch-Tung-Striebel smoothed means and covariances of x_{-1..T-1}.
    [[nodiscard]] std::vector<std::pair<Vec, Mat>> smooth() const {
        const Filtered f = filter();
        const int T = length();
        std::vector<std::pair<Vec, Mat>> out(static_cast<std::size_t>(T + 1));
        const Mat Phi = rho.asDiagonal();
        if (T == 0) {
            out[0] = {m0, C0};
            return out;
        }
        out[static_cast<std::size_t>(T)] = {f.m[T - 1], f.C[T - 1]};
        for (int t = T - 2; t >= -1; --t) {
            const Vec& mt = t >= 0 ? f.m[t] : m0;
            const Mat& Ct = t >= 0 ? f.C[t] : C0;
            const auto& next = out[static_cast<std::size_t>(t + 2)];
            Mat G = Ct * Phi * inverse_spd(f.R[t + 1], 0.0, "state prediction covariance");
            Vec ms = mt + G * (next.first - f.a[t + 1]);
            Mat Cs = symmetrize(Ct + G * (next.second - f.R[t + 1]) * G.transpose());
            out[static_cast<std::size_t>(t + 1)] = {std::move(ms), std::move(Cs)};
        }
        return out;
    }

    /// Joint draw of the path by forward filtering, backward sampling.
    [[nodiscard]] std::vector<Vec> sample(Rng& rng) const {
        const Filtered f = filter();
        const int T = length();
        std::vector<Vec> path(static_cast<std::size_t>(T + 1));
        const Mat Phi = rho.asDiagonal();
        if (T == 0) {
            path[0] = sample_mvn(m0, C0, rng, "initial state covariance");
            return path;
        }
        path[static_cast<std::size_t>(T)] = sample_mvn(f.m[T - 1], f.C[T - 1], rng, "filtered covariance");
        for (int t = T - 2; t >= -1; --t) {
            const Vec& mt = t >= 0 ? f.m[t] : m0;
            const Mat& Ct = t >= 0 ? f.C[t] : C0;
            Mat G = Ct * Phi * inverse_spd(f.R[t + 1], 0.0, "state prediction covariance");
            Vec h = mt + G * (path[static_cast<std::size_t>(t + 2)] - f.a[t + 1]);
            Mat V = symmetrize(Ct - G * Phi * Ct);
            path[static_cast<std::size_t>(t + 1)] = sample_mvn(h, V, rng, "backward conditional covariance");
        }
        return path;
    }
};

}  // namespace downscaler
