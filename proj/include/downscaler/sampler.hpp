#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>
#include <vector>

#include "chain.hpp"
#include "covariance.hpp"
#include "data.hpp"
#include "ffbs.hpp"
#include "linalg.hpp"
#include "model_spec.hpp"
#include "rng.hpp"

namespace downscaler {

struct SamplerOptions {
    /// Non-reporting locations whose latent fields are sampled in-chain
    /// (the last step of each day's schedule). Empty means post-hoc prediction.
    std::vector<Site> extra_sites;
    bool adapt = true;
    int adapt_batch = 50;
    double initial_log_step = 0.1;
    /// Joint shift of a latent field and the overall coefficients it is
    /// confounded with (exact conditional draw along the shift).
    bool centering = true;
    /// Joint rescaling of a column of A and its latent field.
    bool column_scale = true;
};

struct RunLength {
    int n_iter = 20000;
    int burn_in = 10000;
    int thin = 10;
};

class Sampler {
public:
    Sampler(const AlignedDataset& ds, ModelSpec spec, SamplerOptions opt, Rng rng)
        : spec_(std::move(spec)), opt_(std::move(opt)), rng_(std::move(rng)) {
        require_valid(spec_);
        if (ds.p() != spec_.p) throw DimensionMismatch("dataset has " + std::to_string(ds.p()) + " pollutants, spec has " + std::to_string(spec_.p));
        if (!(ds.transform() == spec_.transform)) throw InvalidSpec("dataset transform differs from the spec transform");
        p_ = spec_.p;
        P1_ = p_ + 1;
        nproc_ = n_processes(p_);
        mask_ = spec_.mask();
        ofree_ = spec_.overall_free();
        kpos_.assign(static_cast<std::size_t>(nproc_), -1);
        for (int k = 0; k < nproc_; ++k)
            if (mask_.col(k).any()) {
                kpos_[static_cast<std::size_t>(k)] = static_cast<int>(active_.size());
                active_.push_back(k);
            }
        K_ = static_cast<int>(active_.size());
        days_ = ds.days();
        T_ = static_cast<int>(days_.size());
        build_observations(ds);
        build_slots(ds);
        build_touches();
        gpow_.assign(static_cast<std::size_t>(nproc_), std::vector<double>(static_cast<std::size_t>(std::max(T_, 1)), 1.0));
        if (spec_.temporal.local == LocalStructure::Dynamic) {
            for (int r = 0; r < nproc_; ++r)
                for (int l = 1; l < T_; ++l)
                    gpow_[static_cast<std::size_t>(r)][static_cast<std::size_t>(l)] =
                        gpow_[static_cast<std::size_t>(r)][static_cast<std::size_t>(l - 1)] * spec_.temporal.gamma[static_cast<std::size_t>(r)];
        }
        for (int r = 0; r < nproc_; ++r)
            for (int k = 0; k <= r; ++k)
                if (mask_(r, k)) entries_.emplace_back(r, k);
        log_step_.assign(entries_.size(), opt_.initial_log_step);
        col_log_step_.assign(static_cast<std::size_t>(K_), opt_.initial_log_step);
        acc_.assign(entries_.size(), 0);
        tries_.assign(entries_.size(), 0);
        col_acc_.assign(static_cast<std::size_t>(K_), 0);
        col_tries_.assign(static_cast<std::size_t>(K_), 0);
        batch_acc_.assign(entries_.size(), 0);
        col_batch_acc_.assign(static_cast<std::size_t>(K_), 0);
        initialise();
    }

    // --- accessors -------------------------------------------------------
    [[nodiscard]] const ChainState& state() const { return st_; }
    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] const std::vector<int>& active() const { return active_; }
    [[nodiscard]] const std::vector<LatentSlot>& slots() const { return layout_; }
    [[nodiscard]] const std::vector<int>& days() const { return days_; }
    [[nodiscard]] const Vec& y() const { return y_; }
    [[nodiscard]] const Vec& eta() const { return eta_; }
    [[nodiscard]] std::size_t n_obs() const { return static_cast<std::size_t>(y_.size()); }
    [[nodiscard]] int slot_of_day(int day_index) const { return day_slot_[static_cast<std::size_t>(day_index)]; }
    /// Block ranges (start, length) of a slot in update order.
    [[nodiscard]] const std::vector<std::pair<int, int>>& blocks(int slot) const { return slots_[static_cast<std::size_t>(slot)].blocks; }

    void set_y(const Vec& y) {
        if (y.size() != y_.size()) throw DimensionMismatch("observation vector length changed");
        y_ = y;
    }
    void set_state(const ChainState& s) {
        st_ = s;
        compute_eta();
    }
    Rng& rng() { return rng_; }

    /// Acceptance rates counted since the last reset.
    [[nodiscard]] std::map<std::string, double> acceptance() const {
        std::map<std::string, double> out;
        for (std::size_t e = 0; e < entries_.size(); ++e) {
            const auto [r, k] = entries_[e];
            if (r != k) continue;
            out["A_" + std::to_string(r + 1) + "_" + std::to_string(k + 1)] = tries_[e] ? static_cast<double>(acc_[e]) / tries_[e] : 0.0;
        }
        if (opt_.column_scale)
            for (int kk = 0; kk < K_; ++kk)
                out["scale_w_" + std::to_string(active_[static_cast<std::size_t>(kk)] + 1)] =
                    col_tries_[static_cast<std::size_t>(kk)] ? static_cast<double>(col_acc_[static_cast<std::size_t>(kk)]) / col_tries_[static_cast<std::size_t>(kk)] : 0.0;
        return out;
    }
    void reset_acceptance() {
        std::fill(acc_.begin(), acc_.end(), 0);
        std::fill(tries_.begin(), tries_.end(), 0);
        std::fill(col_acc_.begin(), col_acc_.end(), 0);
        std::fill(col_tries_.begin(), col_tries_.end(), 0);
    }

    // --- transitions -----------------------------------------------------

    /// One full sweep over every parameter block.
    void sweep(bool adapt) {
        compute_eta();
        update_overall();
        for (int u = 0; u < static_cast<int>(slots_.size()); ++u) update_slot(u);
        if (opt_.centering) centering_move();
        update_A();
        if (opt_.column_scale) column_scale_move();
        update_nuggets();
        if (adapt) adapt_steps();
    }

    /// The four-step latent update for one day (by index into days()):
    /// both-pollutant sites, pollutant-1-only, pollutant-2-only (more
    /// patterns for p > 2), then non-reporting sites with no likelihood term.
    void update_latent_w(int day_index) {
        if (spec_.temporal.local == LocalStructure::Static) {
            update_slot(0);
        } else {
            const int u = day_slot_[static_cast<std::size_t>(day_index)];
            if (u >= 0) update_slot(u);
        }
    }

    /// Full conditional of w_k over one block of a slot given everything else.
    [[nodiscard]] std::pair<Vec, Mat> latent_block_conditional(int u, int kk, int block) const {
        Mat Q;
        Vec lin;
        block_system(u, kk, slots_[static_cast<std::size_t>(u)].blocks[static_cast<std::size_t>(block)], Q, lin);
        Mat cov = inverse_spd(Q, 0.0, "latent block precision");
        return {cov * lin, cov};
    }

    /// Replace the state by a draw from the prior.
    void draw_from_prior() {
        const auto& pr = spec_.priors;
        const int n_os = static_cast<int>(st_.beta.cols());
        st_.beta.setZero();
        if (spec_.temporal.overall == OverallStructure::Dynamic) {
            for (int r = 0; r < nproc_; ++r) {
                if (!ofree_[static_cast<std::size_t>(r)]) continue;
                const double rho = spec_.temporal.rho[static_cast<std::size_t>(r)];
                st_.xi2(r) = rng_.inverse_gamma(pr.xi_shape, pr.xi_scale);
                st_.beta0(r) = pr.dyn_stationary_init ? rng_.normal(0.0, std::sqrt(st_.xi2(r) / (1.0 - rho * rho)))
                                                       : rng_.normal(pr.dyn_init_mean, std::sqrt(pr.dyn_init_var));
                double prev = st_.beta0(r);
                for (int t = 0; t < n_os; ++t) {
                    prev = rho * prev + rng_.normal(0.0, std::sqrt(st_.xi2(r)));
                    st_.beta(r, t) = prev;
                }
            }
        } else {
            for (int t = 0; t < n_os; ++t)
                for (int r = 0; r < nproc_; ++r)
                    if (ofree_[static_cast<std::size_t>(r)]) st_.beta(r, t) = rng_.normal(pr.beta_mean, std::sqrt(pr.beta_var));
        }
        st_.A.setZero();
        for (const auto& [r, k] : entries_) {
            st_.A(r, k) = r == k ? std::exp(rng_.normal(pr.diagA_logmean, pr.diagA_logsd)) : rng_.normal(pr.offdiagA_mean, std::sqrt(pr.offdiagA_var));
        }
        for (int i = 0; i < p_; ++i)
            st_.tau2(i) = rng_.inverse_gamma(pr.nugget_shape[static_cast<std::size_t>(i)], pr.nugget_scale[static_cast<std::size_t>(i)]);
        for (std::size_t u = 0; u < slots_.size(); ++u) {
            for (int kk = 0; kk < K_; ++kk) {
                const Mat& P = slots_[u].P[static_cast<std::size_t>(kk)];
                if (P.rows() == 0) continue;
                st_.w[u].col(kk) = sample_from_precision(P, Vec::Zero(P.rows()), rng_, "latent precision");
            }
        }
        compute_eta();
    }

    /// Replace the observations by a draw from the likelihood at the current state.
    void simulate_data() {
        compute_eta();
        for (Eigen::Index n = 0; n < y_.size(); ++n) y_(n) = eta_(n) + std::sqrt(st_.tau2(obs_i_[static_cast<std::size_t>(n)])) * rng_.normal();
    }

    /// Log-likelihood of the observations at the current state.
    [[nodiscard]] double log_likelihood() {
        compute_eta();
        double ll = 0.0;
        for (Eigen::Index n = 0; n < y_.size(); ++n) {
            const double t2 = st_.tau2(obs_i_[static_cast<std::size_t>(n)]);
            const double r = y_(n) - eta_(n);
            ll += -0.5 * std::log(2.0 * std::numbers::pi * t2) - 0.5 * r * r / t2;
        }
        if (!std::isfinite(ll)) throw NonFiniteLikelihood("log-likelihood is not finite");
        return ll;
    }

private:
    struct Touch {
        int slot;
        int pos;
        int lag;
    };
    struct Slot {
        std::vector<int> loc;                        // indices into loc_
        std::vector<std::pair<int, int>> blocks;     // (start, length)
        std::vector<Mat> P;                          // per active process: inverse correlation
        std::vector<Vec> P1;                         // P * 1
        std::vector<double> oneP1;                   // 1' P 1
        std::vector<std::vector<std::pair<int, int>>> touch;  // per position: (obs, lag)
    };

    // --- construction ----------------------------------------------------

    void build_observations(const AlignedDataset& ds) {
        const auto& sites = ds.sites();
        for (const auto& s : sites) {
            site_ids_.push_back(s.id);
            loc_.push_back(s.location());
        }
        n_fit_sites_ = static_cast<int>(sites.size());
        for (const auto& s : opt_.extra_sites) {
            validate_site(s);
            site_ids_.push_back(s.id);
            loc_.push_back(s.location());
        }
        const auto& obs = ds.observations();
        const auto N = static_cast<Eigen::Index>(obs.size());
        y_.resize(N);
        X_.resize(N, P1_);
        obs_by_poll_.assign(static_cast<std::size_t>(p_), {});
        const int n_os = spec_.temporal.overall == OverallStructure::Static ? 1 : T_;
        ogroup_.assign(static_cast<std::size_t>(n_os * p_), {});
        for (Eigen::Index n = 0; n < N; ++n) {
            const auto& o = obs[static_cast<std::size_t>(n)];
            const int s = static_cast<int>(*ds.site_index(o.site_id));
            const int t = static_cast<int>(std::lower_bound(days_.begin(), days_.end(), o.t) - days_.begin());
            const int i = o.pollutant - 1;
            obs_site_.push_back(s);
            obs_day_.push_back(t);
            obs_i_.push_back(i);
            y_(n) = ds.transformed(o);
            const std::size_t cell = ds.cell_of_site(static_cast<std::size_t>(s));
            X_(n, 0) = 1.0;
            for (int j = 1; j <= p_; ++j) X_(n, j) = ds.grid_value(cell, o.t, j);
            const int os = n_os == 1 ? 0 : t;
            obs_os_.push_back(os);
            ogroup_[static_cast<std::size_t>(os * p_ + i)].push_back(static_cast<int>(n));
            obs_by_poll_[static_cast<std::size_t>(i)].push_back(static_cast<int>(n));
        }
    }

    void build_slots(const AlignedDataset& ds) {
        std::vector<int> extras;
        for (int e = n_fit_sites_; e < static_cast<int>(loc_.size()); ++e) extras.push_back(e);
        std::vector<int> all(static_cast<std::size_t>(n_fit_sites_));
        std::iota(all.begin(), all.end(), 0);
        auto add_slot = [&](int day, std::vector<std::vector<int>> groups) {
            Slot slot;
            for (auto& g : groups) {
                if (g.empty()) continue;
                slot.blocks.emplace_back(static_cast<int>(slot.loc.size()), static_cast<int>(g.size()));
                slot.loc.insert(slot.loc.end(), g.begin(), g.end());
            }
            LatentSlot info;
            info.day = day;
            for (int l : slot.loc) {
                info.site_ids.push_back(site_ids_[static_cast<std::size_t>(l)]);
                info.locations.push_back(loc_[static_cast<std::size_t>(l)]);
                info.extra.push_back(l >= n_fit_sites_);
            }
            std::vector<LonLat> pts(info.locations);
            const Mat dist = pts.empty() ? Mat() : distance_matrix(std::span<const LonLat>(pts), spec_.metric);
            std::map<double, std::size_t> cache;
            for (int kk = 0; kk < K_; ++kk) {
                const double phi = spec_.phi[static_cast<std::size_t>(active_[static_cast<std::size_t>(kk)])];
                if (auto it = cache.find(phi); it != cache.end()) {
                    slot.P.push_back(slot.P[it->second]);
                    slot.P1.push_back(slot.P1[it->second]);
                    slot.oneP1.push_back(slot.oneP1[it->second]);
                    continue;
                }
                cache[phi] = slot.P.size();
                if (pts.empty()) {
                    slot.P.emplace_back();
                    slot.P1.emplace_back();
                    slot.oneP1.push_back(0.0);
                    continue;
                }
                Mat P = symmetrize(inverse_spd(exp_cov_matrix(dist, phi), kRidge, "latent correlation matrix"));
                Vec P1 = P.rowwise().sum();
                slot.oneP1.push_back(P1.sum());
                slot.P1.push_back(std::move(P1));
                slot.P.push_back(std::move(P));
            }
            slot.touch.assign(slot.loc.size(), {});
            slots_.push_back(std::move(slot));
            layout_.push_back(std::move(info));
        };

        day_slot_.assign(static_cast<std::size_t>(T_), -1);
        switch (spec_.temporal.local) {
            case LocalStructure::Static:
                add_slot(-1, {all, extras});
                break;
            case LocalStructure::IndependentReplicates:
                for (int t = 0; t < T_; ++t) {
                    std::vector<std::vector<int>> groups;
                    if (const DayPartition* part = ds.partition(days_[static_cast<std::size_t>(t)])) {
                        for (const auto& [m, ids] : part->patterns) {
                            std::vector<int> g;
                            for (const auto& id : ids) g.push_back(static_cast<int>(*ds.site_index(id)));
                            groups.push_back(std::move(g));
                        }
                    }
                    groups.push_back(extras);
                    day_slot_[static_cast<std::size_t>(t)] = static_cast<int>(slots_.size());
                    add_slot(t, std::move(groups));
                }
                break;
            case LocalStructure::Dynamic:
                for (int t = 0; t < T_; ++t) {
                    day_slot_[static_cast<std::size_t>(t)] = static_cast<int>(slots_.size());
                    add_slot(t, {all, extras});
                }
                break;
        }
    }

    void build_touches() {
        // position of each location within each slot
        std::vector<std::map<int, int>> pos(slots_.size());
        for (std::size_t u = 0; u < slots_.size(); ++u)
            for (std::size_t v = 0; v < slots_[u].loc.size(); ++v) pos[u][slots_[u].loc[v]] = static_cast<int>(v);
        obs_touch_.assign(obs_site_.size(), {});
        for (std::size_t n = 0; n < obs_site_.size(); ++n) {
            const int s = obs_site_[n];
            const int t = obs_day_[n];
            auto add = [&](int u, int lag) {
                const int v = pos[static_cast<std::size_t>(u)].at(s);
                obs_touch_[n].push_back({u, v, lag});
                slots_[static_cast<std::size_t>(u)].touch[static_cast<std::size_t>(v)].emplace_back(static_cast<int>(n), lag);
            };
            switch (spec_.temporal.local) {
                case LocalStructure::Static: add(0, 0); break;
                case LocalStructure::IndependentReplicates: add(day_slot_[static_cast<std::size_t>(t)], 0); break;
                case LocalStructure::Dynamic:
                    for (int u = 0; u <= t; ++u) add(day_slot_[static_cast<std::size_t>(u)], t - u);
                    break;
            }
        }
    }

    void initialise() {
        const int n_os = static_cast<int>(ogroup_.size()) / p_;
        st_.beta = Mat::Zero(nproc_, n_os);
        const bool dyn = spec_.temporal.overall == OverallStructure::Dynamic;
        st_.beta0 = Vec::Zero(dyn ? nproc_ : 0);
        st_.xi2 = Vec::Constant(dyn ? nproc_ : 0, 0.1);
        st_.A = Mat::Zero(nproc_, nproc_);
        st_.tau2 = Vec::Ones(p_);
        st_.w.clear();
        for (const auto& slot : slots_) st_.w.push_back(Mat::Zero(static_cast<Eigen::Index>(slot.loc.size()), K_));
        std::vector<double> mean(static_cast<std::size_t>(p_), 0.0), var(static_cast<std::size_t>(p_), 1.0);
        for (int i = 0; i < p_; ++i) {
            const auto& idx = obs_by_poll_[static_cast<std::size_t>(i)];
            if (idx.size() < 2) continue;
            double m = 0.0, v = 0.0;
            for (int n : idx) m += y_(n);
            m /= static_cast<double>(idx.size());
            for (int n : idx) v += (y_(n) - m) * (y_(n) - m);
            v /= static_cast<double>(idx.size() - 1);
            mean[static_cast<std::size_t>(i)] = m;
            var[static_cast<std::size_t>(i)] = std::max(v, 1e-4);
        }
        for (int i = 0; i < p_; ++i) {
            const double sd = std::sqrt(var[static_cast<std::size_t>(i)]);
            st_.tau2(i) = 0.5 * var[static_cast<std::size_t>(i)] * std::exp(0.1 * rng_.normal());
            const int r0 = i * P1_;
            for (int c = 0; c < n_os; ++c) st_.beta(r0, c) = mean[static_cast<std::size_t>(i)] + 0.1 * sd * rng_.normal();
            if (dyn) st_.beta0(r0) = mean[static_cast<std::size_t>(i)];
            for (int j = 0; j < P1_; ++j) {
                const int r = r0 + j;
                if (mask_(r, r)) st_.A(r, r) = (j == 0 ? 0.5 * sd : 0.1) * std::exp(0.1 * rng_.normal());
            }
        }
        compute_eta();
    }

    // --- helpers ---------------------------------------------------------

    [[nodiscard]] double coef(int n, int kk, int lag) const {
        const int k = active_[static_cast<std::size_t>(kk)];
        const int r0 = obs_i_[static_cast<std::size_t>(n)] * P1_;
        double c = 0.0;
        for (int j = 0; j < P1_; ++j) {
            const double a = st_.A(r0 + j, k);
            if (a != 0.0) c += X_(n, j) * a * gpow_[static_cast<std::size_t>(r0 + j)][static_cast<std::size_t>(lag)];
        }
        return c;
    }

    void compute_eta() {
        const auto N = y_.size();
        eta_.resize(N);
        for (Eigen::Index n = 0; n < N; ++n) {
            const int r0 = obs_i_[static_cast<std::size_t>(n)] * P1_;
            const int os = obs_os_[static_cast<std::size_t>(n)];
            double e = 0.0;
            for (int j = 0; j < P1_; ++j) e += X_(n, j) * st_.beta(r0 + j, os);
            for (const auto& tc : obs_touch_[static_cast<std::size_t>(n)])
                for (int kk = 0; kk < K_; ++kk) e += coef(static_cast<int>(n), kk, tc.lag) * st_.w[static_cast<std::size_t>(tc.slot)](tc.pos, kk);
            eta_(n) = e;
        }
    }

    void block_system(int u, int kk, std::pair<int, int> block, Mat& Q, Vec& lin) const {
        const Slot& slot = slots_[static_cast<std::size_t>(u)];
        const auto [b0, L] = block;
        const Mat& P = slot.P[static_cast<std::size_t>(kk)];
        const auto w = st_.w[static_cast<std::size_t>(u)].col(kk);
        Q = P.block(b0, b0, L, L);
        lin = -(P.middleRows(b0, L) * w) + Q * w.segment(b0, L);
        for (int v = 0; v < L; ++v) {
            double d = 0.0, h = 0.0;
            for (const auto& [n, lag] : slot.touch[static_cast<std::size_t>(b0 + v)]) {
                const double c = coef(n, kk, lag);
                if (c == 0.0) continue;
                const double t2 = st_.tau2(obs_i_[static_cast<std::size_t>(n)]);
                const double r = y_(n) - eta_(n) + c * w(b0 + v);
                d += c * c / t2;
                h += c * r / t2;
            }
            Q(v, v) += d;
            lin(v) += h;
        }
    }

    void update_slot(int u) {
        const Slot& slot = slots_[static_cast<std::size_t>(u)];
        for (int kk = 0; kk < K_; ++kk) {
            for (const auto& block : slot.blocks) {
                Mat Q;
                Vec lin;
                block_system(u, kk, block, Q, lin);
                const Vec w_new = sample_from_precision(Q, lin, rng_, "latent block precision");
                auto w = st_.w[static_cast<std::size_t>(u)].col(kk);
                for (int v = 0; v < block.second; ++v) {
                    const int pos = block.first + v;
                    const double diff = w_new(v) - w(pos);
                    if (diff == 0.0) continue;
                    for (const auto& [n, lag] : slot.touch[static_cast<std::size_t>(pos)]) eta_(n) += coef(n, kk, lag) * diff;
                    w(pos) = w_new(v);
                }
            }
        }
    }

    void update_overall() {
        const auto& pr = spec_.priors;
        if (spec_.temporal.overall == OverallStructure::Dynamic) {
            update_overall_dynamic();
            return;
        }
        const int n_os = static_cast<int>(st_.beta.cols());
        for (int os = 0; os < n_os; ++os) {
            for (int i = 0; i < p_; ++i) {
                std::vector<int> J;
                for (int j = 0; j < P1_; ++j)
                    if (ofree_[static_cast<std::size_t>(i * P1_ + j)]) J.push_back(j);
                const auto q = static_cast<Eigen::Index>(J.size());
                Mat Q = Mat::Identity(q, q) / pr.beta_var;
                Vec lin = Vec::Constant(q, pr.beta_mean / pr.beta_var);
                Vec old(q);
                for (Eigen::Index a = 0; a < q; ++a) old(a) = st_.beta(i * P1_ + J[static_cast<std::size_t>(a)], os);
                const double t2 = st_.tau2(i);
                const auto& group = ogroup_[static_cast<std::size_t>(os * p_ + i)];
                Vec x(q);
                for (int n : group) {
                    for (Eigen::Index a = 0; a < q; ++a) x(a) = X_(n, J[static_cast<std::size_t>(a)]);
                    const double r = y_(n) - eta_(n) + x.dot(old);
                    Q.noalias() += x * x.transpose() / t2;
                    lin.noalias() += x * (r / t2);
                }
                const Vec b = sample_from_precision(Q, lin, rng_, "overall coefficient precision");
                const Vec diff = b - old;
                for (int n : group) {
                    for (Eigen::Index a = 0; a < q; ++a) x(a) = X_(n, J[static_cast<std::size_t>(a)]);
                    eta_(n) += x.dot(diff);
                }
                for (Eigen::Index a = 0; a < q; ++a) st_.beta(i * P1_ + J[static_cast<std::size_t>(a)], os) = b(a);
            }
        }
    }

    void update_overall_dynamic() {
        const auto& pr = spec_.priors;
        for (int i = 0; i < p_; ++i) {
            std::vector<int> R;  // free stacked rows for pollutant i
            for (int j = 0; j < P1_; ++j)
                if (ofree_[static_cast<std::size_t>(i * P1_ + j)]) R.push_back(i * P1_ + j);
            const auto q = static_cast<Eigen::Index>(R.size());
            Ar1StateSpace ss;
            ss.rho.resize(q);
            ss.q.resize(q);
            for (Eigen::Index a = 0; a < q; ++a) {
                ss.rho(a) = spec_.temporal.rho[static_cast<std::size_t>(R[static_cast<std::size_t>(a)])];
                ss.q(a) = st_.xi2(R[static_cast<std::size_t>(a)]);
            }
            if (pr.dyn_stationary_init) {
                ss.m0 = Vec::Zero(q);
                ss.C0 = (ss.q.array() / (1.0 - ss.rho.array().square())).matrix().asDiagonal();
            } else {
                ss.m0 = Vec::Constant(q, pr.dyn_init_mean);
                ss.C0 = Mat::Identity(q, q) * pr.dyn_init_var;
            }
            for (int t = 0; t < T_; ++t) {
                const auto& group = ogroup_[static_cast<std::size_t>(t * p_ + i)];
                const auto m = static_cast<Eigen::Index>(group.size());
                Mat H(m, q);
                Vec yy(m);
                for (Eigen::Index g = 0; g < m; ++g) {
                    const int n = group[static_cast<std::size_t>(g)];
                    double overall = 0.0;
                    for (Eigen::Index a = 0; a < q; ++a) {
                        H(g, a) = X_(n, R[static_cast<std::size_t>(a)] - i * P1_);
                        overall += H(g, a) * st_.beta(R[static_cast<std::size_t>(a)], t);
                    }
                    yy(g) = y_(n) - eta_(n) + overall;
                }
                ss.H.push_back(std::move(H));
                ss.y.push_back(std::move(yy));
                ss.obs_var.push_back(Vec::Constant(m, st_.tau2(i)));
            }
            const auto path = ss.sample(rng_);
            for (Eigen::Index a = 0; a < q; ++a) st_.beta0(R[static_cast<std::size_t>(a)]) = path[0](a);
            for (int t = 0; t < T_; ++t) {
                const auto& group = ogroup_[static_cast<std::size_t>(t * p_ + i)];
                for (int n : group) {
                    double diff = 0.0;
                    for (Eigen::Index a = 0; a < q; ++a) {
                        const int r = R[static_cast<std::size_t>(a)];
                        diff += X_(n, r - i * P1_) * (path[static_cast<std::size_t>(t + 1)](a) - st_.beta(r, t));
                    }
                    eta_(n) += diff;
                }
                for (Eigen::Index a = 0; a < q; ++a) st_.beta(R[static_cast<std::size_t>(a)], t) = path[static_cast<std::size_t>(t + 1)](a);
            }
            // innovation variances
            for (int r : R) {
                const double rho = spec_.temporal.rho[static_cast<std::size_t>(r)];
                double ss2 = 0.0;
                double prev = st_.beta0(r);
                for (int t = 0; t < T_; ++t) {
                    const double e = st_.beta(r, t) - rho * prev;
                    ss2 += e * e;
                    prev = st_.beta(r, t);
                }
                double shape = pr.xi_shape + 0.5 * T_;
                if (pr.dyn_stationary_init) {
                    ss2 += (1.0 - rho * rho) * st_.beta0(r) * st_.beta0(r);
                    shape += 0.5;
                }
                st_.xi2(r) = std::max(rng_.inverse_gamma(shape, pr.xi_scale + 0.5 * ss2), 1e-10);
            }
        }
    }

    [[nodiscard]] bool centering_aligned() const {
        return (spec_.temporal.overall == OverallStructure::IndependentAcrossTime && spec_.temporal.local == LocalStructure::IndependentReplicates) ||
               (spec_.temporal.overall == OverallStructure::Static && spec_.temporal.local == LocalStructure::Static);
    }

    void centering_move() {
        if (!centering_aligned()) return;
        const auto& pr = spec_.priors;
        for (std::size_t u = 0; u < slots_.size(); ++u) {
            if (slots_[u].loc.empty()) continue;
            const int os = spec_.temporal.overall == OverallStructure::Static ? 0 : layout_[u].day;
            for (int kk = 0; kk < K_; ++kk) {
                const int k = active_[static_cast<std::size_t>(kk)];
                bool ok = true;
                double prec = slots_[u].oneP1[static_cast<std::size_t>(kk)];
                auto w = st_.w[u].col(kk);
                double lin = -slots_[u].P1[static_cast<std::size_t>(kk)].dot(w);
                for (int r = 0; r < nproc_; ++r) {
                    const double a = st_.A(r, k);
                    if (a == 0.0) continue;
                    if (!ofree_[static_cast<std::size_t>(r)]) {
                        ok = false;
                        break;
                    }
                    prec += a * a / pr.beta_var;
                    lin += a * (st_.beta(r, os) - pr.beta_mean) / pr.beta_var;
                }
                if (!ok || !(prec > 0.0)) continue;
                const double delta = rng_.normal(lin / prec, 1.0 / std::sqrt(prec));
                w.array() += delta;
                for (int r = 0; r < nproc_; ++r) st_.beta(r, os) -= st_.A(r, k) * delta;
            }
        }
    }

    /// Cached z-values for entry (r, k): the derivative of eta with respect to A(r, k).
    void entry_design(int r, int k, std::vector<double>& z) const {
        const int i = r / P1_;
        const int j = r % P1_;
        const int kk = kpos_[static_cast<std::size_t>(k)];
        const auto& idx = obs_by_poll_[static_cast<std::size_t>(i)];
        z.assign(idx.size(), 0.0);
        for (std::size_t g = 0; g < idx.size(); ++g) {
            const int n = idx[g];
            double L = 0.0;
            for (const auto& tc : obs_touch_[static_cast<std::size_t>(n)])
                L += gpow_[static_cast<std::size_t>(r)][static_cast<std::size_t>(tc.lag)] * st_.w[static_cast<std::size_t>(tc.slot)](tc.pos, kk);
            z[g] = X_(n, j) * L;
        }
    }

    void update_A() {
        const auto& pr = spec_.priors;
        std::vector<double> z;
        for (std::size_t e = 0; e < entries_.size(); ++e) {
            const auto [r, k] = entries_[e];
            const int i = r / P1_;
            const auto& idx = obs_by_poll_[static_cast<std::size_t>(i)];
            entry_design(r, k, z);
            const double t2 = st_.tau2(i);
            double szr = 0.0, szz = 0.0;
            for (std::size_t g = 0; g < idx.size(); ++g) {
                szr += z[g] * (y_(idx[g]) - eta_(idx[g])) / t2;
                szz += z[g] * z[g] / t2;
            }
            const double a = st_.A(r, k);
            double a_new = a;
            if (r != k) {
                const double prec = 1.0 / pr.offdiagA_var + szz;
                const double mean = (pr.offdiagA_mean / pr.offdiagA_var + szz * a + szr) / prec;
                a_new = rng_.normal(mean, 1.0 / std::sqrt(prec));
            } else {
                const double prop = a * std::exp(log_step_[e] * rng_.normal());
                const double delta = prop - a;
                const double la = std::log(a) - pr.diagA_logmean, lp = std::log(prop) - pr.diagA_logmean;
                const double log_ratio = delta * szr - 0.5 * delta * delta * szz - (lp * lp - la * la) / (2.0 * pr.diagA_logsd * pr.diagA_logsd);
                ++tries_[e];
                if (std::log(rng_.uniform()) < log_ratio) {
                    a_new = prop;
                    ++acc_[e];
                    batch_acc_[e]++;
                }
            }
            if (a_new != a) {
                const double delta = a_new - a;
                for (std::size_t g = 0; g < idx.size(); ++g) eta_(idx[g]) += delta * z[g];
                st_.A(r, k) = a_new;
            }
        }
    }

    [[nodiscard]] double log_prior_entry(int r, int k, double a) const {
        const auto& pr = spec_.priors;
        if (r == k) {
            if (!(a > 0.0)) return -std::numeric_limits<double>::infinity();
            const double l = std::log(a) - pr.diagA_logmean;
            return -std::log(a) - l * l / (2.0 * pr.diagA_logsd * pr.diagA_logsd);
        }
        const double d = a - pr.offdiagA_mean;
        return -d * d / (2.0 * pr.offdiagA_var);
    }

    void column_scale_move() {
        for (int kk = 0; kk < K_; ++kk) {
            const int k = active_[static_cast<std::size_t>(kk)];
            double quad = 0.0;
            double n_w = 0.0;
            for (std::size_t u = 0; u < slots_.size(); ++u) {
                if (slots_[u].loc.empty()) continue;
                const auto w = st_.w[u].col(kk);
                quad += w.dot(slots_[u].P[static_cast<std::size_t>(kk)] * w);
                n_w += static_cast<double>(w.size());
            }
            const double eps = col_log_step_[static_cast<std::size_t>(kk)] * rng_.normal();
            const double c = std::exp(eps);
            double log_ratio = -0.5 * quad * (1.0 / (c * c) - 1.0);
            int m = 0;
            for (int r = k; r < nproc_; ++r) {
                if (!mask_(r, k)) continue;
                ++m;
                log_ratio += log_prior_entry(r, k, c * st_.A(r, k)) - log_prior_entry(r, k, st_.A(r, k));
            }
            log_ratio += (static_cast<double>(m) - n_w) * eps;
            ++col_tries_[static_cast<std::size_t>(kk)];
            if (std::log(rng_.uniform()) < log_ratio) {
                ++col_acc_[static_cast<std::size_t>(kk)];
                ++col_batch_acc_[static_cast<std::size_t>(kk)];
                for (int r = k; r < nproc_; ++r) st_.A(r, k) *= c;
                for (auto& w : st_.w) w.col(kk) /= c;
            }
        }
    }

    void update_nuggets() {
        const auto& pr = spec_.priors;
        for (int i = 0; i < p_; ++i) {
            double sse = 0.0;
            const auto& idx = obs_by_poll_[static_cast<std::size_t>(i)];
            for (int n : idx) sse += (y_(n) - eta_(n)) * (y_(n) - eta_(n));
            const double shape = pr.nugget_shape[static_cast<std::size_t>(i)] + 0.5 * static_cast<double>(idx.size());
            const double scale = pr.nugget_scale[static_cast<std::size_t>(i)] + 0.5 * sse;
            st_.tau2(i) = std::max(rng_.inverse_gamma(shape, scale), 1e-10);
        }
    }

    void adapt_steps() {
        if (++batch_iter_ < opt_.adapt_batch) return;
        ++n_batches_;
        const double gain = std::min(1.0, 10.0 / std::sqrt(static_cast<double>(n_batches_)));
        const double target = 0.375;
        for (std::size_t e = 0; e < entries_.size(); ++e) {
            if (entries_[e].first != entries_[e].second) continue;
            const double rate = static_cast<double>(batch_acc_[e]) / opt_.adapt_batch;
            log_step_[e] *= std::exp(gain * (rate - target));
            batch_acc_[e] = 0;
        }
        if (opt_.column_scale)
            for (int kk = 0; kk < K_; ++kk) {
                const double rate = static_cast<double>(col_batch_acc_[static_cast<std::size_t>(kk)]) / opt_.adapt_batch;
                col_log_step_[static_cast<std::size_t>(kk)] *= std::exp(gain * (rate - target));
                col_batch_acc_[static_cast<std::size_t>(kk)] = 0;
            }
        batch_iter_ = 0;
    }

    ModelSpec spec_;
    SamplerOptions opt_;
    Rng rng_;
    int p_ = 0, P1_ = 0, nproc_ = 0, K_ = 0, T_ = 0, n_fit_sites_ = 0;
    Mask mask_;
    std::vector<bool> ofree_;
    std::vector<int> active_, kpos_;
    std::vector<int> days_;
    std::vector<std::string> site_ids_;
    std::vector<LonLat> loc_;

    Vec y_, eta_;
    Mat X_;
    std::vector<int> obs_site_, obs_day_, obs_i_, obs_os_;
    std::vector<std::vector<int>> ogroup_, obs_by_poll_;
    std::vector<std::vector<Touch>> obs_touch_;

    std::vector<Slot> slots_;
    std::vector<LatentSlot> layout_;
    std::vector<int> day_slot_;
    std::vector<std::vector<double>> gpow_;

    std::vector<std::pair<int, int>> entries_;
    std::vector<double> log_step_, col_log_step_;
    std::vector<long> acc_, tries_, col_acc_, col_tries_;
    std::vector<long> batch_acc_, col_batch_acc_;
    int batch_iter_ = 0;
    long n_batches_ = 0;

    ChainState st_;
};

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

/// One chain. `chain` selects the RNG sub-stream of `seed`.
inline ChainSamples run_chain(const AlignedDataset& ds, const ModelSpec& spec, const RunLength& run, std::uint64_t seed, int chain = 0,
                              const SamplerOptions& opt = {}) {
    if (run.n_iter < 1 || run.burn_in < 0 || run.burn_in > run.n_iter || run.thin < 1) {
        throw ConfigError("run length needs n_iter >= 1, 0 <= burn_in <= n_iter, thin >= 1");
    }
    Sampler s(ds, spec, opt, Rng::stream(seed, {static_cast<std::uint64_t>(chain)}));
    ChainSamples out;
    out.spec = spec;
    out.days = s.days();
    out.active = s.active();
    out.slots = s.slots();
    out.seed = seed;
    out.chain = chain;
    out.n_iter = run.n_iter;
    out.burn_in = run.burn_in;
    out.thin = run.thin;
    out.draws.reserve(static_cast<std::size_t>((run.n_iter - run.burn_in) / run.thin));
    for (int it = 0; it < run.n_iter; ++it) {
        if (it == run.burn_in) s.reset_acceptance();
        s.sweep(opt.adapt && it < run.burn_in);
        if (it >= run.burn_in && (it - run.burn_in + 1) % run.thin == 0) {
            out.draws.push_back(s.state());
            out.iterations.push_back(it + 1);
        }
    }
    out.acceptance = s.acceptance();
    return out;
}

/// Several chains on independent sub-streams, spread over `threads` workers.
/// The result does not depend on the number of workers.
inline std::vector<ChainSamples> run_chains(const AlignedDataset& ds, const ModelSpec& spec, const RunLength& run, std::uint64_t seed, int n_chains,
                                            int threads = 1, const SamplerOptions& opt = {}) {
    if (n_chains < 1) throw ConfigError("need at least one chain");
    std::vector<ChainSamples> out(static_cast<std::size_t>(n_chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int c = next++; c < n_chains; c = next++) {
            try {
                out[static_cast<std::size_t>(c)] = run_chain(ds, spec, run, seed, c, opt);
            } catch (...) {
                errors[static_cast<std::size_t>(c)] = std::current_exception();
            }
        }
    };
    const int n_workers = std::max(1, std::min(threads, n_chains));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace downscaler
