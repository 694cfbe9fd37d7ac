// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <Eigen/Dense>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "followme/analysis.hpp"
#include "followme/kalman.hpp"
#include "followme/pipeline.hpp"

using namespace followme;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

Tensor track(std::initializer_list<std::pair<double, double>> pts) {
    Tensor t({2, pts.size()});
    std::size_t i = 0;
    for (auto [x, y] : pts) t.at(0, i) = x, t.at(1, i) = y, ++i;
    return t;
}

// ---- 1: metric oracles --------------------------------------------------------

Outcome metric_oracles() {
    double worst = 0.0;
    auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
    const Tensor gt = track({{0, 0}, {1, 0}});
    check(ade(gt, gt), 0.0);
    check(ade(track({{3, 4}, {4, 4}}), gt), 5.0);
    check(ade(track({{0, 1}, {1, 2}}), gt), 1.5);
    check(fde(track({{0, 1}, {1, 2}}), gt), 2.0);
    check(fde(track({{5, 5}, {1, 2}}), gt), 2.0);
    check(fde(track({{5, 5}, {1, 0}}), gt), 0.0);
    const bool displacement_ok = worst <= 1e-9;

    std::mt19937_64 rng(2718);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    double amd_err = 0.0, amv_err = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t M = 20;
        const double a = 0.3 + std::abs(g(rng)), b = g(rng), c = 0.3 + std::abs(g(rng));
        const Point2 mu{u(rng), u(rng)};
        PredictionSet set{Tensor({M, 2, 1})};
        Eigen::MatrixXd pts(M, 2);
        for (std::size_t m = 0; m < M; ++m) {
            const double z1 = g(rng), z2 = g(rng);
            pts(m, 0) = set.samples.at(m, 0, 0) = mu[0] + a * z1;
            pts(m, 1) = set.samples.at(m, 1, 0) = mu[1] + b * z1 + c * z2;
        }
        GmmOptions opt;
        opt.k_candidates = {1};
        const Distribution dist = fit_distribution(set, opt);
        const Tensor truth = track({{u(rng), u(rng)}});

        const Eigen::RowVector2d mean = pts.colwise().mean();
        const Eigen::MatrixXd centred = pts.rowwise() - mean;
        const Eigen::Matrix2d cov = centred.transpose() * centred / double(M) + 1e-6 * Eigen::Matrix2d::Identity();
        const Eigen::Vector2d d(truth.at(0, 0) - mean(0), truth.at(1, 0) - mean(1));
        const double oracle_amd = std::sqrt(d.dot(cov.inverse() * d));
        const double oracle_amv = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvalues().maxCoeff();
        amd_err = std::max(amd_err, std::abs(amd({dist}, {truth}) - oracle_amd));
        amv_err = std::max(amv_err, std::abs(amv({dist}) - oracle_amv));
    }
    return {displacement_ok && amd_err <= 1e-8 && amv_err <= 1e-8,
            "ade/fde err " + fmt(worst) + ", amd err " + fmt(amd_err) + ", amv err " + fmt(amv_err)};
}

// ---- 2: stage shapes -------------------------------------------------------------

Outcome shape_contract() {
    std::size_t checked = 0, bad = 0;
    auto expect = [&](const Tensor& t, std::vector<std::size_t> shape) {
        ++checked;
        bad += t.shape() != shape;
    };
    for (std::size_t tp : {30u, 50u, 80u})
        for (std::size_t n = 2; n <= 8; ++n) {
            ModelConfig c;
            c.t_pred = tp;
            c.n_max = n;
            const FollowMeModel m(c, 1);
            Scene s;
            s.scene_id = "shape";
            s.driver_id = "d";
            std::mt19937_64 rng(n * 100 + tp);
            std::normal_distribution<double> g;
            for (std::size_t a = 0; a < n; ++a) {
                AgentTrack tr{"a" + std::to_string(a), a == 0 ? AgentClass::Ego : a == 1 ? AgentClass::Lead : AgentClass::Other, {}};
                double x = 10.0 * g(rng), y = 10.0 * g(rng);
                for (std::size_t f = 0; f < 10 + tp; ++f) tr.points.push_back({f / 10.0, x += 1.0 + 0.1 * g(rng), y += 0.1 * g(rng)});
                s.tracks.push_back(tr);
            }
            const auto w = normalize_window(s, 9, tp, n).first;
            const Tensor nodes = m.per_node_process(w);
            const Tensor sc = m.spatial_class_process(w);
            const Tensor cat = FollowMeModel::fuse_concat(sc, nodes);
            const Tensor weights = m.fusion_weighting(cat, w.ego_index, w.mask);
            const Tensor attn = FollowMeModel::attention(weights, nodes, w.ego_index);
            expect(nodes, {2, tp, n});
            expect(sc, {2, 10, n});
            expect(cat, {10 + tp, 2, n});
            expect(weights, {2, tp, n - 1});
            expect(attn, {2, tp});
            expect(m.predict(w).first, {2, tp});
        }
    return {bad == 0, std::to_string(checked - bad) + "/" + std::to_string(checked) + " shapes match"};
}

// ---- 3: gradient checks --------------------------------------------------------------

Outcome gradient_checks() {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g;
    Tensor s({6, 2, 4}), gt({2, 4});
    for (auto& v : s.values()) v = g(rng);
    for (auto& v : gt.values()) v = g(rng);
    const double alpha = 0.1;
    const auto loss = imle_loss(s, gt, alpha);
    double loss_rel = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        Tensor up = s, down = s;
        const double h = 1e-6;
        up[i] += h;
        down[i] -= h;
        const double fd = (imle_loss(up, gt, alpha).value - imle_loss(down, gt, alpha).value) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(loss.grad[i]), 1e-8});
        loss_rel = std::max(loss_rel, std::abs(fd - loss.grad[i]) / scale);
    }

    ModelConfig c;
    c.t_obs = 4;
    c.t_pred = 5;
    c.n_max = 4;
    c.hidden_channels = 4;
    FollowMeModel m(c, 77);
    Scene sc;
    sc.scene_id = "grad";
    sc.driver_id = "d";
    for (std::size_t a = 0; a < 4; ++a) {
        AgentTrack tr{"a" + std::to_string(a), a == 0 ? AgentClass::Ego : a == 1 ? AgentClass::Lead : AgentClass::Other, {}};
        double x = 5.0 * g(rng), y = 5.0 * g(rng);
        for (std::size_t f = 0; f < 12; ++f) tr.points.push_back({f / 10.0, x += 1.0 + 0.2 * g(rng), y += 0.2 * g(rng)});
        sc.tracks.push_back(tr);
    }
    const auto w = normalize_window(sc, 5, 5, 4, 4).first;
    Tensor z({2, 4}), gp({2, 5});
    for (auto& v : z.values()) v = g(rng);
    for (auto& v : gp.values()) v = g(rng);
    auto objective = [&] {
        const Tensor p = m.forward(w, z).pred;
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) acc += gp[i] * p[i];
        return acc;
    };
    auto grads = m.parameters().zeros_like();
    m.backward(m.forward(w, z), gp, grads);
    double model_rel = 0.0;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& param = m.parameters().values[i];
        const std::size_t step = std::max<std::size_t>(1, param.size() / 8);
        for (std::size_t j = 0; j < param.size(); j += step, ++checked) {
            const double keep = param[j], h = 1e-4;
            param[j] = keep + h;
            const double up = objective();
            param[j] = keep - h;
            const double down = objective();
            param[j] = keep;
            const double fd = (up - down) / (2 * h);
            const double scale = std::max({std::abs(fd), std::abs(grads[i][j]), 1e-6});
            model_rel = std::max(model_rel, std::abs(fd - grads[i][j]) / scale);
        }
    }
    return {loss_rel < 1e-4 && model_rel < 1e-3,
            "imle max rel " + fmt(loss_rel) + ", model max rel " + fmt(model_rel) + " over " +
                std::to_string(checked) + " parameters"};
}

// ---- 4: loss algebra ---------------------------------------------------------------------

Outcome loss_algebra() {
    Tensor gt({2, 1});
    Tensor s({3, 2, 1});
    s.at(1, 0, 0) = 1.0;
    s.at(2, 0, 0) = 3.0;
    const double triplet = imle_loss(s, gt, 1e-4).value;

    std::mt19937_64 rng(41);
    std::normal_distribution<double> g;
    Tensor r({7, 2, 6}), target({2, 6});
    for (auto& v : r.values()) v = g(rng);
    for (auto& v : target.values()) v = g(rng);
    const auto plain = imle_loss(r, target, 0.0);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < 7; ++m) {
        double d = 0.0;
        for (std::size_t k = 0; k < 12; ++k) d += (r[m * 12 + k] - target[k]) * (r[m * 12 + k] - target[k]);
        best = std::min(best, d);
    }
    const bool reduction = plain.value == best;

    const auto full = imle_loss(r, target, 1e-4);
    bool silent = true;
    for (std::size_t m = 0; m < 7; ++m) {
        if (m == full.ranking.closest() || m == full.ranking.second() || m == full.ranking.furthest()) continue;
        for (std::size_t k = 0; k < 12; ++k) silent = silent && full.grad[m * 12 + k] == 0.0;
    }
    return {triplet == -8e-4 && reduction && silent,
            "triplet case " + fmt(triplet) + ", alpha=0 reduction " + (reduction ? "exact" : "off") +
                ", non-participating gradients " + (silent ? "zero" : "nonzero")};
}

// ---- 5: fusion ablation ------------------------------------------------------------------

Outcome fusion_ablation() {
    ModelConfig with;
    ModelConfig without;
    without.use_fusion = false;
    FollowMeModel fused(with, 5);
    FollowMeModel plain(without, 6);
    for (std::size_t i = 0; i < plain.parameters().values.size(); ++i)
        plain.parameters().values[i] = fused.parameters().values[fused.parameters().find(plain.parameters().names[i])];
    const std::size_t f = fused.parameters().find("fusion.conv.weight");
    fused.parameters().values[f].fill(0.0);
    fused.parameters().values[f + 1].fill(-1e4);

    std::size_t windows = 0, mismatched = 0;
    double max_weight = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Scene s = simulate_scene(all_scenarios()[seed + 6], sample_driver(seed, 0), seed, "abl", "d");
        for (const auto& ws : extract_windows(resample(s, 10.0), 3.0, 100)) {
            ++windows;
            const auto tape = plain.forward(ws.window);
            const auto [p_plain, tr_plain] = plain.predict(ws.window);
            const auto [p_fused, tr_fused] = fused.predict(ws.window);
            for (double v : tr_fused.weights.values()) max_weight = std::max(max_weight, v);
            for (std::size_t t = 0; t < p_plain.dim(1); ++t)
                for (std::size_t p = 0; p < 2; ++p)
                    mismatched += p_plain.at(p, t) != tape.nodes.at(p, t, tape.ego) ||
                                  p_plain.at(p, t) != p_fused.at(p, t);
            mismatched += plain.sample(ws.window, 4, seed).samples != fused.sample(ws.window, 4, seed).samples;
        }
    }
    return {windows > 0 && mismatched == 0 && max_weight == 0.0,
            std::to_string(windows) + " windows, " + std::to_string(mismatched) + " mismatches, max forced weight " +
                fmt(max_weight)};
}

// ---- 6: Kalman exactness -------------------------------------------------------------------

Outcome kalman_exactness() {
    std::vector<Vec2> obs;
    for (std::size_t k = 0; k < 10; ++k) obs.push_back({0.1 * double(k), 0.0});
    double worst_fde = 0.0;
    bool monotone = true;
    for (std::size_t T : {30u, 50u, 80u}) {
        const auto p = kalman_predict(obs, T);
        Tensor truth({2, T});
        for (std::size_t t = 0; t < T; ++t) truth.at(0, t) = 0.1 * double(10 + t);
        worst_fde = std::max(worst_fde, fde(p.mean, truth));
        for (std::size_t t = 1; t < T; ++t) monotone = monotone && p.cov[t].trace() >= p.cov[t - 1].trace();
        const auto still = kalman_predict(std::vector<Vec2>(10, Vec2{2.0, -1.0}), T);
        Tensor at_rest({2, T});
        for (std::size_t t = 0; t < T; ++t) at_rest.at(0, t) = 2.0, at_rest.at(1, t) = -1.0;
        worst_fde = std::max(worst_fde, fde(still.mean, at_rest));
    }
    return {worst_fde < 1e-6 && monotone,
            "max FDE " + fmt(worst_fde) + " m, trace " + (monotone ? "non-decreasing" : "decreases")};
}

// ---- 7-9: toy training and directional replication ------------------------------------------

struct ToyRun {
    PreparedSplits data;
    std::optional<TrainResult> result;
    double seconds = 0.0;
    std::string error;
};

ToyRun& toy_run() {
    static ToyRun run = [] {
        ToyRun r;
        const auto t0 = Clock::now();
        try {
            const fs::path root = fs::temp_directory_path() / "followme_acceptance_toy";
            fs::remove_all(root);
            generate_dataset(4, root / "raw", 2024);
            PrepareOptions opt;
            opt.horizon_s = 3.0;
            opt.rate_hz = 10.0;
            opt.stride = 20;
            opt.split = {0.5, 0.25, 0.25};
            opt.seed = 2024;
            prepare_dataset(root / "raw", root / "prepared", opt);
            r.data = load_prepared(root / "prepared");
            TrainConfig cfg;
            cfg.seed = 2024;
            std::cout << "  toy dataset: " << r.data.train.size() << " train / " << r.data.val.size() << " val / "
                      << r.data.test.size() << " test windows" << std::endl;
            r.result = train(FollowMeModel(ModelConfig{}, 2024), r.data.train, r.data.val, cfg,
                             [&](const EpochRecord& e) {
                                 if (e.epoch % 10 == 0)
                                     std::cout << "  epoch " << e.epoch << " lr " << fmt(e.lr) << " loss "
                                               << fmt(e.train_loss) << " val BoN-ADE " << fmt(e.val_bon_ade)
                                               << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;
                             });
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        r.seconds = seconds_since(t0);
        return r;
    }();
    return run;
}

Outcome toy_training() {
    auto& run = toy_run();
    if (!run.result) return {false, "training failed: " + run.error};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& h : run.result->history) best = std::min(best, h.val_bon_ade);
    const double initial = run.result->initial_val_bon_ade;
    const double reduction = 1.0 - best / initial;
    return {reduction >= 0.5 && run.seconds < 1800.0,
            "val BoN-ADE " + fmt(initial) + " -> " + fmt(best) + " (" + fmt(100.0 * reduction) + "% lower, best epoch " +
                std::to_string(run.result->best_epoch) + "), " + fmt(run.seconds) + " s"};
}

Outcome turn_scenes_beat_kalman() {
    auto& run = toy_run();
    if (!run.result) return {false, "no trained model: " + run.error};
    std::vector<WindowSample> turns;
    for (const auto& w : run.data.test)
        if (w.window.source.scenario.is_turn()) turns.push_back(w);
    if (turns.empty()) return {false, "no turn windows in the test split"};
    const auto model = evaluate(run.result->model, turns, 3, 20, 2024);
    const auto kalman = evaluate_kalman(turns, 3);
    return {model.ade < kalman.ade, std::to_string(turns.size()) + " turn windows: model BoN-ADE " + fmt(model.ade) +
                                        " vs Kalman ADE " + fmt(kalman.ade)};
}

Outcome lead_dominates_fusion() {
    auto& run = toy_run();
    if (!run.result) return {false, "no trained model: " + run.error};
    std::vector<FusionTrace> quiet, busy;
    for (const auto& w : run.data.test) {
        auto trace = run.result->model.predict(w.window).second;
        (w.window.source.scenario.density == TrafficDensity::NoTraffic ? quiet : busy).push_back(std::move(trace));
    }
    if (quiet.empty() || busy.empty()) return {false, "test split lacks NO_TRAFFIC or WITH_TRAFFIC windows"};
    const auto hq = contribution_histogram(quiet);
    const auto hb = contribution_histogram(busy);
    // NO_TRAFFIC scenes carry no other vehicles, so their lead is compared with
    // the other vehicles of the traffic scenes as well as within those scenes.
    const bool pass = hq.lead_count > 0 && hb.other_count > 0 && hq.lead_mean > hb.other_mean &&
                      hb.lead_mean > hb.other_mean;
    return {pass, "NO_TRAFFIC lead mean " + fmt(hq.lead_mean) + " (" + std::to_string(hq.lead_count) +
                      "), NO_TRAFFIC others " + std::to_string(hq.other_count) + "; WITH_TRAFFIC lead " +
                      fmt(hb.lead_mean) + " vs other " + fmt(hb.other_mean) + " (" + std::to_string(hb.other_count) +
                      ")"};
}

// ---- 10: end-to-end determinism ---------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(FOLLOWME_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome pipeline_determinism() {
    const fs::path root = fs::temp_directory_path() / "followme_acceptance_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "train.cfg") << "epochs=2\nm_samples=6\n";
    std::vector<std::string> reports;
    for (const char* tag : {"a", "b"}) {
        const fs::path d = root / tag;
        const std::string common = " --seed 99 --jobs 1";
        const std::vector<std::string> steps{
            "generate --drivers 3 --out " + (d / "raw").string() + common,
            "prepare --data " + (d / "raw").string() + " --stride 40 --out " + (d / "prep").string() + common,
            "train --data " + (d / "prep").string() + " --config " + (root / "train.cfg").string() + " --out " +
                (d / "model.ckpt").string() + common,
            "evaluate --ckpt " + (d / "model.ckpt").string() + " --data " + (d / "prep").string() +
                " --baseline kalman --out " + (d / "report.txt").string() + common};
        for (const auto& step : steps)
            if (const int rc = run_cli(step, d.string() + ".log"); rc != 0)
                return {false, std::string("run ") + tag + " failed (exit " + std::to_string(rc) + "): " + step};
        reports.push_back(slurp(d / "report.txt"));
    }
    const bool same = !reports[0].empty() && reports[0] == reports[1];
    return {same, std::to_string(reports[0].size()) + "-byte reports " + (same ? "identical" : "differ")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"metric oracles", metric_oracles},
        {"shape contract", shape_contract},
        {"gradient checks", gradient_checks},
        {"loss algebra", loss_algebra},
        {"fusion ablation", fusion_ablation},
        {"Kalman exactness", kalman_exactness},
        {"toy training", toy_training},
        {"turn scenes vs Kalman", turn_scenes_beat_kalman},
        {"lead dominates fusion", lead_dominates_fusion},
        {"pipeline determinism", pipeline_determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": "
                  << o.detail << " [" << fmt(seconds_since(t0)) << " s]" << std::endl;
    }
    std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
              << std::endl;
    return failures ? 1 : 0;
}
