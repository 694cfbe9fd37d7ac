#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "followme/errors.hpp"

namespace followme {

using Point2 = std::array<double, 2>;

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;

    double det() const { return xx * yy - xy * xy; }
    double trace() const { return xx + yy; }
    /// Largest eigenvalue in closed form.
    double max_eigenvalue() const {
        const double h = 0.5 * (xx - yy);
        return 0.5 * (xx + yy) + std::sqrt(h * h + xy * xy);
    }
    Sym2 operator+(const Sym2& o) const { return {xx + o.xx, xy + o.xy, yy + o.yy}; }
    Sym2 operator*(double s) const { return {xx * s, xy * s, yy * s}; }
};

struct GmmComponent {
    double weight = 1.0;
    Point2 mean{};
    Sym2 cov;
};

/// Fitted mixture at one timestep together with its total mean and covariance.
struct GmmSummary {
    std::vector<GmmComponent> components;
    Point2 mean{};  // sum_k pi_k mu_k
    Sym2 cov;       // law of total covariance
};

/// Summarizes an explicit mixture by its first two moments.
inline GmmSummary summarize_mixture(std::vector<GmmComponent> comps) {
    GmmSummary s;
    for (const auto& c : comps) {
        s.mean[0] += c.weight * c.mean[0];
        s.mean[1] += c.weight * c.mean[1];
    }
    for (const auto& c : comps) {
        const double dx = c.mean[0] - s.mean[0], dy = c.mean[1] - s.mean[1];
        s.cov = s.cov + (c.cov + Sym2{dx * dx, dx * dy, dy * dy}) * c.weight;
    }
    s.components = std::move(comps);
    return s;
}

inline GmmSummary gaussian_summary(Point2 mean, Sym2 cov) { return summarize_mixture({{1.0, mean, cov}}); }

/// sqrt((p - mu)^T G^-1 (p - mu)); throws NumericalError if G is not invertible.
inline double mahalanobis(Point2 p, const GmmSummary& s) {
    const double det = s.cov.det();
    if (!(det > 0.0) || !std::isfinite(det)) throw NumericalError("singular mixture covariance");
    const double dx = p[0] - s.mean[0], dy = p[1] - s.mean[1];
    const double q = (s.cov.yy * dx * dx - 2.0 * s.cov.xy * dx * dy + s.cov.xx * dy * dy) / det;
    return std::sqrt(std::max(0.0, q));
}

struct GmmOptions {
    std::vector<int> k_candidates{1, 2, 3};
    double eps = 1e-6;
    std::uint64_t seed = 0;
    int max_iter = 200;
    double tol = 1e-10;
    double min_effective_points = 3.0;
};

namespace gmm_detail {

inline double log_gauss(const Point2& p, const GmmComponent& c) {
    const double det = c.cov.det();
    const double dx = p[0] - c.mean[0], dy = p[1] - c.mean[1];
    const double q = (c.cov.yy * dx * dx - 2.0 * c.cov.xy * dx * dy + c.cov.xx * dy * dy) / det;
    return -0.5 * q - 0.5 * std::log(det) - std::log(2.0 * std::numbers::pi);
}

inline std::size_t distinct_count(const std::vector<Point2>& pts) {
    std::vector<Point2> s = pts;
    std::sort(s.begin(), s.end());
    return static_cast<std::size_t>(std::unique(s.begin(), s.end()) - s.begin());
}

struct Fit {
    std::vector<GmmComponent> comps;
    double loglik = -std::numeric_limits<double>::infinity();
    bool ok = false;
};

inline Fit fit_k(const std::vector<Point2>& pts, int k, const GmmOptions& opt) {
    const std::size_t M = pts.size();
    const std::size_t K = static_cast<std::size_t>(k);
    // k-means++ seeding
    std::mt19937_64 rng(opt.seed * 0x9E3779B97F4A7C15ull + std::uint64_t(k));
    std::vector<Point2> centers;
    centers.push_back(pts[std::uniform_int_distribution<std::size_t>(0, M - 1)(rng)]);
    std::vector<double> d2(M);
    while (centers.size() < K) {
        double total = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) {
                const double dx = pts[i][0] - c[0], dy = pts[i][1] - c[1];
                best = std::min(best, dx * dx + dy * dy);
            }
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) return {};
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        std::size_t pick = M - 1;
        for (std::size_t i = 0; i < M; ++i) {
            if (r < d2[i]) {
                pick = i;
                break;
            }
            r -= d2[i];
        }
        centers.push_back(pts[pick]);
    }

    // hard assignment to the nearest center for the initial responsibilities
    std::vector<double> resp(M * K, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < K; ++j) {
            const double dx = pts[i][0] - centers[j][0], dy = pts[i][1] - centers[j][1];
            if (dx * dx + dy * dy < bd) bd = dx * dx + dy * dy, best = j;
        }
        resp[i * K + best] = 1.0;
    }

    Fit fit;
    fit.comps.resize(K);
    double prev = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        // M step
        for (std::size_t j = 0; j < K; ++j) {
            double nk = 0.0, mx = 0.0, my = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
                const double r = resp[i * K + j];
                nk += r;
                mx += r * pts[i][0];
                my += r * pts[i][1];
            }
            if (nk < opt.min_effective_points && K > 1) return {};
            if (nk <= 0.0) return {};
            mx /= nk;
            my /= nk;
            Sym2 c;
            for (std::size_t i = 0; i < M; ++i) {
                const double r = resp[i * K + j];
                const double dx = pts[i][0] - mx, dy = pts[i][1] - my;
                c.xx += r * dx * dx;
                c.xy += r * dx * dy;
                c.yy += r * dy * dy;
            }
            c = c * (1.0 / nk);
            c.xx += opt.eps;
            c.yy += opt.eps;
            fit.comps[j] = {nk / double(M), {mx, my}, c};
        }
        // E step
        double ll = 0.0;
        std::vector<double> lp(K);
        for (std::size_t i = 0; i < M; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < K; ++j) {
                lp[j] = std::log(fit.comps[j].weight) + log_gauss(pts[i], fit.comps[j]);
                mx = std::max(mx, lp[j]);
            }
            double s = 0.0;
            for (std::size_t j = 0; j < K; ++j) s += std::exp(lp[j] - mx);
            const double lse = mx + std::log(s);
            ll += lse;
            for (std::size_t j = 0; j < K; ++j) resp[i * K + j] = std::exp(lp[j] - lse);
        }
        if (!std::isfinite(ll)) return {};
        fit.loglik = ll;
        if (ll - prev < opt.tol * std::max(1.0, std::abs(ll))) break;
        prev = ll;
    }
    fit.ok = true;
    return fit;
}

}  // namespace gmm_detail

/// EM fit per candidate k with BIC selection. Identical points give a single
/// component with covariance eps * I.
inline GmmSummary fit_gmm(const std::vector<Point2>& pts, const GmmOptions& opt = {}) {
    if (pts.size() < 2) throw ConfigError("fit_gmm needs at least 2 points");
    const std::size_t distinct = gmm_detail::distinct_count(pts);
    if (distinct == 1) return gaussian_summary(pts[0], Sym2{opt.eps, 0.0, opt.eps});

    const double n = double(pts.size());
    double best_bic = std::numeric_limits<double>::infinity();
    std::vector<GmmComponent> best;
    for (int k : opt.k_candidates) {
        if (k < 1 || std::size_t(k) > distinct) continue;
        auto fit = gmm_detail::fit_k(pts, k, opt);
        if (!fit.ok) continue;
        const double p = 6.0 * k - 1.0;
        const double bic = -2.0 * fit.loglik + p * std::log(n);
        if (bic < best_bic) {
            best_bic = bic;
            best = std::move(fit.comps);
        }
    }
    if (best.empty()) throw NumericalError("no mixture candidate could be fitted");
    return summarize_mixture(std::move(best));
}

}  // namespace followme
