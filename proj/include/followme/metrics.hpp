#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "followme/dataset_io.hpp"
#include "followme/gmm.hpp"
#include "followme/model.hpp"
#include "followme/parallel.hpp"

namespace followme {

namespace metrics_detail {
inline void check_pair(const Tensor& pred, const Tensor& gt) {
    if (pred.rank() != 2 || pred.dim(0) != 2 || pred.shape() != gt.shape() || gt.dim(1) == 0)
        throw ShapeError("expected matching [2, T] trajectories, got " + shape_string(pred.shape()) + " and " +
                         shape_string(gt.shape()));
}
}  // namespace metrics_detail

/// Mean pointwise Euclidean distance.
inline double ade(const Tensor& pred, const Tensor& gt) {
    metrics_detail::check_pair(pred, gt);
    const std::size_t T = gt.dim(1);
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) sum += std::hypot(pred.at(0, t) - gt.at(0, t), pred.at(1, t) - gt.at(1, t));
    return sum / double(T);
}

/// Euclidean distance at the last step.
inline double fde(const Tensor& pred, const Tensor& gt) {
    metrics_detail::check_pair(pred, gt);
    const std::size_t t = gt.dim(1) - 1;
    return std::hypot(pred.at(0, t) - gt.at(0, t), pred.at(1, t) - gt.at(1, t));
}

struct BestOfN {
    double ade = 0.0;
    double fde = 0.0;
    std::size_t best_index = 0;
};

inline BestOfN best_of_n(const PredictionSet& set, const Tensor& gt) {
    if (set.size() == 0) throw ConfigError("best_of_n needs at least one sample");
    BestOfN best{std::numeric_limits<double>::infinity(), 0.0, 0};
    for (std::size_t m = 0; m < set.size(); ++m) {
        const Tensor s = set.sample(m);
        const double a = ade(s, gt);
        if (a < best.ade) best = {a, fde(s, gt), m};
    }
    return best;
}

/// Per-timestep predictive distribution of one window.
using Distribution = std::vector<GmmSummary>;

/// Fits a mixture at every predicted step of a sample set.
inline Distribution fit_distribution(const PredictionSet& set, GmmOptions opt = {}) {
    const std::size_t T = set.frames();
    Distribution out;
    out.reserve(T);
    const std::uint64_t base = opt.seed;
    std::vector<Point2> pts(set.size());
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t m = 0; m < set.size(); ++m) pts[m] = {set.samples.at(m, 0, t), set.samples.at(m, 1, t)};
        opt.seed = base * 1000003u + t;
        out.push_back(fit_gmm(pts, opt));
    }
    return out;
}

/// Mean Mahalanobis distance of the ground truth over windows and timesteps.
inline double amd(const std::vector<Distribution>& dists, const std::vector<Tensor>& gts) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t w = 0; w < dists.size(); ++w)
        for (std::size_t t = 0; t < dists[w].size(); ++t, ++n)
            sum += mahalanobis({gts[w].at(0, t), gts[w].at(1, t)}, dists[w][t]);
    return n ? sum / double(n) : 0.0;
}

/// Mean largest eigenvalue of the total covariance.
inline double amv(const std::vector<Distribution>& dists) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& d : dists)
        for (const auto& s : d) sum += s.cov.max_eigenvalue(), ++n;
    return n ? sum / double(n) : 0.0;
}

struct WindowMetrics {
    std::string scene_id;
    std::size_t obs_end_frame = 0;
    double ade = 0.0;
    double fde = 0.0;
    std::size_t best_index = 0;
    double amd = 0.0;
    double amv = 0.0;
};

struct MetricReport {
    std::string predictor;
    int horizon_s = 0;
    std::size_t samples = 0;
    double ade = 0.0;
    double fde = 0.0;
    double amd = 0.0;
    double amv = 0.0;
    std::vector<WindowMetrics> windows;
};

/// Aggregates Best-of-N ADE/FDE and AMD/AMV from per-window sample sets and
/// their fitted distributions.
inline MetricReport summarize(std::string predictor, int horizon_s, const std::vector<WindowSample>& windows,
                              const std::vector<PredictionSet>& sets, const std::vector<Distribution>& dists) {
    if (windows.empty()) throw EmptySplit("no windows to evaluate");
    MetricReport r;
    r.predictor = std::move(predictor);
    r.horizon_s = horizon_s;
    r.samples = sets.front().size();
    std::vector<Tensor> gts;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto& gt = windows[w].target.positions;
        gts.push_back(gt);
        const auto bon = best_of_n(sets[w], gt);
        WindowMetrics wm{windows[w].window.source.scene_id, windows[w].window.source.obs_end_frame, bon.ade, bon.fde,
                         bon.best_index, amd({dists[w]}, {gt}), amv({dists[w]})};
        r.ade += wm.ade;
        r.fde += wm.fde;
        r.windows.push_back(std::move(wm));
    }
    r.ade /= double(windows.size());
    r.fde /= double(windows.size());
    r.amd = amd(dists, gts);
    r.amv = amv(dists);
    return r;
}

/// Model evaluation: m samples per window, Best-of-m ADE/FDE, and AMD/AMV
/// from a mixture fitted to the same samples.
inline MetricReport evaluate(const FollowMeModel& model, const std::vector<WindowSample>& windows, int horizon_s,
                             std::size_t m = 20, std::uint64_t seed = 0, std::size_t jobs = 1,
                             std::string predictor = "model") {
    if (windows.empty()) throw EmptySplit("no windows to evaluate");
    std::vector<PredictionSet> sets(windows.size());
    std::vector<Distribution> dists(windows.size());
    parallel_for(windows.size(), jobs, [&](std::size_t i) {
        const std::uint64_t ws = sim::make_rng(seed, {0x6576616c, i})();
        sets[i] = model.sample(windows[i].window, m, ws);
        GmmOptions opt;
        opt.seed = ws;
        dists[i] = fit_distribution(sets[i], opt);
    });
    return summarize(std::move(predictor), horizon_s, windows, sets, dists);
}

// ---- serialization -----------------------------------------------------------
//
// One `key=value` per line. Aggregates use `<predictor>.h<horizon>.<metric>`;
// per-window rows use `<predictor>.h<horizon>.window.<index>` with the value
// `scene_id,obs_end_frame,ade,fde,best_index,amd,amv`.

inline std::string report_to_string(const std::vector<MetricReport>& reports) {
    using io_detail::format_double;
    std::ostringstream os;
    for (const auto& r : reports) {
        const std::string p = r.predictor + ".h" + std::to_string(r.horizon_s) + ".";
        os << p << "ade=" << format_double(r.ade) << "\n";
        os << p << "fde=" << format_double(r.fde) << "\n";
        os << p << "amd=" << format_double(r.amd) << "\n";
        os << p << "amv=" << format_double(r.amv) << "\n";
    }
    for (const auto& r : reports) {
        const std::string p = r.predictor + ".h" + std::to_string(r.horizon_s) + ".";
        os << p << "samples=" << r.samples << "\n";
        for (std::size_t i = 0; i < r.windows.size(); ++i) {
            const auto& w = r.windows[i];
            os << p << "window." << i << "=" << w.scene_id << "," << w.obs_end_frame << "," << format_double(w.ade)
               << "," << format_double(w.fde) << "," << w.best_index << "," << format_double(w.amd) << ","
               << format_double(w.amv) << "\n";
        }
    }
    return os.str();
}

inline void save_report(const std::vector<MetricReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open report " + path.string());
    out << report_to_string(reports);
    if (!out) throw DatasetWriteError("write failed for " + path.string());
}

/// Reads a report back as a flat key/value map.
inline std::map<std::string, std::string> load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open report");
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(path.string(), n, "expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace followme
