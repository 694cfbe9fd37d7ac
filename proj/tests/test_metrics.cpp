#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "followme/metrics.hpp"
#include "test_support.hpp"

using namespace followme;

namespace {

Tensor track(std::vector<std::pair<double, double>> pts) {
    Tensor t({2, pts.size()});
    for (std::size_t i = 0; i < pts.size(); ++i) t.at(0, i) = pts[i].first, t.at(1, i) = pts[i].second;
    return t;
}

PredictionSet set_of(const std::vector<Tensor>& trajs) {
    const std::size_t T = trajs.front().dim(1);
    PredictionSet s{Tensor({trajs.size(), 2, T})};
    for (std::size_t m = 0; m < trajs.size(); ++m) std::copy_n(trajs[m].data(), 2 * T, s.samples.data() + m * 2 * T);
    return s;
}

std::vector<Point2> gaussian_points(std::size_t n, Point2 mu, double sx, double sy, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<Point2> pts(n);
    for (auto& p : pts) p = {mu[0] + sx * g(rng), mu[1] + sy * g(rng)};
    return pts;
}

// Sample mean and biased sample covariance.
std::pair<Point2, Sym2> moments(const std::vector<Point2>& pts) {
    Point2 m{};
    for (const auto& p : pts) m[0] += p[0], m[1] += p[1];
    m[0] /= double(pts.size()), m[1] /= double(pts.size());
    Sym2 c;
    for (const auto& p : pts) {
        const double dx = p[0] - m[0], dy = p[1] - m[1];
        c = c + Sym2{dx * dx, dx * dy, dy * dy};
    }
    return {m, c * (1.0 / double(pts.size()))};
}

}  // namespace

TEST(Displacement, HandCases) {
    const Tensor gt = track({{0, 0}, {1, 0}, {2, 0}});
    EXPECT_EQ(ade(gt, gt), 0.0);
    const Tensor shifted = track({{3, 4}, {4, 4}, {5, 4}});
    EXPECT_DOUBLE_EQ(ade(shifted, gt), 5.0);
    EXPECT_DOUBLE_EQ(fde(shifted, gt), 5.0);
    const Tensor drifting = track({{0, 0}, {1, 1}, {2, 2}});
    EXPECT_DOUBLE_EQ(ade(drifting, gt), 1.0);
    EXPECT_DOUBLE_EQ(fde(drifting, gt), 2.0);
    const Tensor two = track({{0, 0}, {1, 0}});
    const Tensor lifted = track({{0, 1}, {1, 2}});
    EXPECT_NEAR(ade(lifted, two), 1.5, 1e-9);
    EXPECT_NEAR(fde(lifted, two), 2.0, 1e-9);
    EXPECT_THROW(ade(Tensor({2, 3}), Tensor({2, 4})), ShapeError);
    EXPECT_THROW(fde(Tensor({2, 0}), Tensor({2, 0})), ShapeError);
}

TEST(BestOfN, PicksMinimumAdeAndLowestIndexOnTies) {
    const Tensor gt = track({{0, 0}, {0, 0}});
    const auto set = set_of({track({{2, 0}, {2, 0}}), track({{0, 1}, {0, 3}}), track({{0, 2}, {0, 2}}),
                             track({{1, 0}, {1, 0}})});
    const auto b = best_of_n(set, gt);
    EXPECT_EQ(b.best_index, 3u);
    EXPECT_DOUBLE_EQ(b.ade, 1.0);
    EXPECT_DOUBLE_EQ(b.fde, 1.0);
    const auto tie = best_of_n(set_of({track({{0, 2}, {0, 2}}), track({{2, 0}, {2, 0}})}), gt);
    EXPECT_EQ(tie.best_index, 0u);
}

TEST(Gmm, SingleComponentEqualsMaximumLikelihoodPlusEps) {
    const auto pts = gaussian_points(50, {1.0, -2.0}, 2.0, 0.5, 1);
    GmmOptions opt;
    opt.k_candidates = {1};
    const auto fit = fit_gmm(pts, opt);
    const auto [m, c] = moments(pts);
    ASSERT_EQ(fit.components.size(), 1u);
    EXPECT_NEAR(fit.mean[0], m[0], 1e-12);
    EXPECT_NEAR(fit.mean[1], m[1], 1e-12);
    EXPECT_NEAR(fit.cov.xx, c.xx + 1e-6, 1e-12);
    EXPECT_NEAR(fit.cov.xy, c.xy, 1e-12);
    EXPECT_NEAR(fit.cov.yy, c.yy + 1e-6, 1e-12);
}

TEST(Gmm, IdenticalPointsGiveEpsIdentity) {
    const std::vector<Point2> pts(20, Point2{3.0, 4.0});
    const auto fit = fit_gmm(pts);
    EXPECT_EQ(fit.mean, (Point2{3.0, 4.0}));
    EXPECT_EQ(fit.cov.xx, 1e-6);
    EXPECT_EQ(fit.cov.yy, 1e-6);
    EXPECT_EQ(fit.cov.xy, 0.0);
    EXPECT_THROW(fit_gmm({{0.0, 0.0}}), ConfigError);
}

TEST(Gmm, TightClusterSelectsOneComponent) {
    const auto fit = fit_gmm(gaussian_points(20, {5.0, 5.0}, 0.01, 0.01, 2));
    EXPECT_EQ(fit.components.size(), 1u);
}

TEST(Gmm, SeparatedClustersSelectTwoAndTotalMomentsMatchTheSample) {
    auto pts = gaussian_points(30, {0.0, 0.0}, 0.2, 0.2, 3);
    const auto far = gaussian_points(30, {10.0, 4.0}, 0.2, 0.2, 4);
    pts.insert(pts.end(), far.begin(), far.end());
    const auto fit = fit_gmm(pts);
    EXPECT_EQ(fit.components.size(), 2u);
    const auto [m, c] = moments(pts);
    EXPECT_NEAR(fit.mean[0], m[0], 1e-9);
    EXPECT_NEAR(fit.mean[1], m[1], 1e-9);
    EXPECT_NEAR(fit.cov.xx, c.xx + 1e-6, 1e-8);
    EXPECT_NEAR(fit.cov.xy, c.xy, 1e-8);
    EXPECT_NEAR(fit.cov.yy, c.yy + 1e-6, 1e-8);
}

TEST(Gmm, TotalCovarianceMatchesResampledMixture) {
    auto pts = gaussian_points(40, {0.0, 0.0}, 1.0, 0.3, 12);
    const auto far = gaussian_points(20, {4.0, 3.0}, 0.5, 0.5, 13);
    pts.insert(pts.end(), far.begin(), far.end());
    const auto fit = fit_gmm(pts);
    ASSERT_GE(fit.components.size(), 2u);
    std::mt19937_64 rng(14);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u;
    std::vector<Point2> draws;
    for (std::size_t i = 0; i < 200000; ++i) {
        double r = u(rng);
        std::size_t k = 0;
        while (k + 1 < fit.components.size() && r > fit.components[k].weight) r -= fit.components[k].weight, ++k;
        const auto& c = fit.components[k];
        const double l11 = std::sqrt(c.cov.xx), l21 = c.cov.xy / l11, l22 = std::sqrt(c.cov.yy - l21 * l21);
        const double z1 = g(rng), z2 = g(rng);
        draws.push_back({c.mean[0] + l11 * z1, c.mean[1] + l21 * z1 + l22 * z2});
    }
    const auto [m, c] = moments(draws);
    const double scale = fit.cov.max_eigenvalue();
    EXPECT_NEAR(c.xx, fit.cov.xx, 0.02 * scale);
    EXPECT_NEAR(c.xy, fit.cov.xy, 0.02 * scale);
    EXPECT_NEAR(c.yy, fit.cov.yy, 0.02 * scale);
}

TEST(Gmm, DeterministicInSeed) {
    auto pts = gaussian_points(40, {0.0, 0.0}, 1.0, 1.0, 5);
    GmmOptions opt;
    opt.seed = 11;
    const auto a = fit_gmm(pts, opt);
    const auto b = fit_gmm(pts, opt);
    EXPECT_EQ(a.components.size(), b.components.size());
    EXPECT_EQ(a.cov.xx, b.cov.xx);
    EXPECT_EQ(a.mean, b.mean);
}

TEST(Mahalanobis, AgreesWithExplicitInverse) {
    const GmmSummary s = gaussian_summary({1.0, 2.0}, Sym2{3.0, 0.5, 2.0});
    const double det = 3.0 * 2.0 - 0.25;
    const double ixx = 2.0 / det, ixy = -0.5 / det, iyy = 3.0 / det;
    for (Point2 p : {Point2{0, 0}, Point2{4, -1}, Point2{1, 2}}) {
        const double dx = p[0] - 1.0, dy = p[1] - 2.0;
        EXPECT_NEAR(mahalanobis(p, s), std::sqrt(dx * dx * ixx + 2 * dx * dy * ixy + dy * dy * iyy), 1e-12);
    }
    EXPECT_THROW(mahalanobis({0, 0}, gaussian_summary({0, 0}, Sym2{1.0, 1.0, 1.0})), NumericalError);
}

TEST(Mahalanobis, InvariantUnderAffineMaps) {
    const Sym2 g{2.0, 0.3, 1.0};
    const double a = 1.5, b = -0.7, c = 0.4, d = 2.0;  // A = [[a, b], [c, d]]
    const Sym2 ag{a * a * g.xx + 2 * a * b * g.xy + b * b * g.yy,
                  a * c * g.xx + (a * d + b * c) * g.xy + b * d * g.yy,
                  c * c * g.xx + 2 * c * d * g.xy + d * d * g.yy};
    const Point2 mu{0.5, -1.0}, shift{3.0, 7.0}, p{2.0, 1.0};
    auto map = [&](Point2 q) { return Point2{a * q[0] + b * q[1] + shift[0], c * q[0] + d * q[1] + shift[1]}; };
    EXPECT_NEAR(mahalanobis(p, gaussian_summary(mu, g)), mahalanobis(map(p), gaussian_summary(map(mu), ag)), 1e-12);
}

TEST(Amd, MonteCarloOfStandardNormalMatchesExpectedDistance) {
    // For a bivariate standard normal, E[sqrt(chi^2_2)] = sqrt(pi / 2).
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g;
    const std::size_t n = 40000;
    Distribution d(n, gaussian_summary({0, 0}, Sym2{1.0, 0.0, 1.0}));
    Tensor gt({2, n});
    for (auto& v : gt.values()) v = g(rng);
    EXPECT_NEAR(amd({d}, {gt}), std::sqrt(std::numbers::pi / 2.0), 0.02 * std::sqrt(std::numbers::pi / 2.0));
}

TEST(Amd, FittedMixtureStaysCloseToGeneratingGaussian) {
    const auto pts = gaussian_points(2000, {0, 0}, 2.0, 1.0, 7);
    const auto fit = fit_gmm(pts);
    EXPECT_NEAR(fit.cov.xx, 4.0, 0.08 * 4.0);
    EXPECT_NEAR(fit.cov.yy, 1.0, 0.08);
}

TEST(Amv, AxisVariancesGiveLargestEigenvalue) {
    const std::size_t M = 2000;
    const auto pts = gaussian_points(M, {0, 0}, 2.0, 1.0, 8);
    PredictionSet set{Tensor({M, 2, 1})};
    for (std::size_t m = 0; m < M; ++m) set.samples.at(m, 0, 0) = pts[m][0], set.samples.at(m, 1, 0) = pts[m][1];
    EXPECT_NEAR(amv({fit_distribution(set)}), 4.0, 0.05 * 4.0);
    EXPECT_DOUBLE_EQ(amv({{gaussian_summary({0, 0}, Sym2{1.0, 0.0, 3.0})}}), 3.0);
}

TEST(Summarize, PointMassPredictor) {
    const Scene s = testing_support::straight_scene(60, 10.0, {0, 0}, {10.0, 0.0}, 1);
    const auto windows = extract_windows(s, 2.0, 10);
    ASSERT_FALSE(windows.empty());
    std::vector<PredictionSet> sets;
    std::vector<Distribution> dists;
    for (const auto& w : windows) {
        sets.push_back(set_of(std::vector<Tensor>(5, w.target.positions)));
        dists.push_back(fit_distribution(sets.back()));
    }
    const auto r = summarize("oracle", 2, windows, sets, dists);
    EXPECT_EQ(r.ade, 0.0);
    EXPECT_EQ(r.fde, 0.0);
    EXPECT_EQ(r.amd, 0.0);
    EXPECT_NEAR(r.amv, 1e-6, 1e-18);
    EXPECT_EQ(r.samples, 5u);
    EXPECT_THROW(summarize("x", 2, {}, {}, {}), EmptySplit);
}

TEST(Evaluate, DeterministicAcrossJobsAndSerializes) {
    const Scene s = testing_support::random_scene(80, 3, 9);
    const auto windows = extract_windows(s, 3.0, 10);
    const FollowMeModel model(ModelConfig{}, 3);
    const auto a = evaluate(model, windows, 3, 20, 5);
    const auto b = evaluate(model, windows, 3, 20, 5, 3);
    EXPECT_EQ(report_to_string({a}), report_to_string({b}));
    EXPECT_EQ(a.windows.size(), windows.size());
    EXPECT_GT(a.amv, 0.0);

    const auto path = std::filesystem::temp_directory_path() / "followme_report.txt";
    save_report({a}, path);
    const auto kv = load_report(path);
    EXPECT_EQ(kv.at("model.h3.samples"), "20");
    EXPECT_EQ(std::stod(kv.at("model.h3.ade")), a.ade);
    EXPECT_EQ(std::stod(kv.at("model.h3.amd")), a.amd);
    EXPECT_TRUE(kv.count("model.h3.window.0"));
    EXPECT_EQ(report_to_string({a}).rfind("model.h3.ade=", 0), 0u);
}
