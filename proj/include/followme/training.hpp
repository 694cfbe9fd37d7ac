#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "followme/dataset_io.hpp"
#include "followme/metrics.hpp"
#include "followme/model.hpp"
#include "followme/parallel.hpp"

namespace followme {

struct TrainConfig {
    std::size_t epochs = 120;
    double lr = 1e-3;
    double lr_decay = 0.1;
    std::size_t lr_step_epochs = 40;
    std::size_t m_samples = 20;
    double alpha = 1e-4;
    std::size_t batch_size = 16;
    double grad_clip_norm = 5.0;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void validate() const {
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (m_samples < 3) throw ConfigError("m_samples must be at least 3");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(lr > 0.0) || !(lr_decay > 0.0) || lr_step_epochs == 0) throw ConfigError("invalid learning-rate schedule");
        if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
        if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
    }
};

/// Learning rate for a 1-based epoch.
inline double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
    return cfg.lr * std::pow(cfg.lr_decay, double((epoch - 1) / cfg.lr_step_epochs));
}

/// Samples ordered by squared distance to ground truth, nearest first.
struct SampleRanking {
    std::vector<std::size_t> order;
    std::vector<double> distances;
    std::size_t closest() const { return order.front(); }
    std::size_t second() const { return order[1]; }
    std::size_t furthest() const { return order.back(); }
};

struct ImleLoss {
    double value = 0.0;
    SampleRanking ranking;
    Tensor grad;  // dL/dsamples, [M, 2, T_p]
};

/// Closest-sample reconstruction plus an alpha-weighted triplet term anchored on
/// the closest sample, pulling the second-closest in and pushing the furthest out.
inline ImleLoss imle_loss(const Tensor& samples, const Tensor& gt, double alpha, bool triplet = true) {
    if (samples.rank() != 3 || samples.dim(1) != 2 || gt.rank() != 2 || gt.dim(0) != 2 || samples.dim(2) != gt.dim(1))
        throw ShapeError("imle_loss expects [M,2,T] samples and [2,T] target, got " + shape_string(samples.shape()) +
                         " and " + shape_string(gt.shape()));
    const std::size_t M = samples.dim(0), K = 2 * gt.dim(1);
    if (M < 3) throw ConfigError("imle_loss needs at least 3 samples");
    auto row = [&](std::size_t m) { return samples.data() + m * K; };
    auto sqdist = [K](const double* a, const double* b) {
        double s = 0.0;
        for (std::size_t i = 0; i < K; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return s;
    };

    ImleLoss out;
    auto& rk = out.ranking;
    rk.distances.resize(M);
    for (std::size_t m = 0; m < M; ++m) rk.distances[m] = sqdist(row(m), gt.data());
    rk.order.resize(M);
    std::iota(rk.order.begin(), rk.order.end(), std::size_t{0});
    std::stable_sort(rk.order.begin(), rk.order.end(),
                     [&](std::size_t a, std::size_t b) { return rk.distances[a] < rk.distances[b]; });

    const std::size_t i1 = rk.closest(), i2 = rk.second(), il = rk.furthest();
    out.grad = Tensor(samples.shape());
    const double* s1 = row(i1);
    double* g1 = out.grad.data() + i1 * K;
    for (std::size_t k = 0; k < K; ++k) g1[k] += 2.0 * (s1[k] - gt[k]);
    out.value = rk.distances[i1];
    if (triplet && alpha != 0.0) {
        const double* s2 = row(i2);
        const double* sl = row(il);
        out.value += alpha * (sqdist(s1, s2) - sqdist(s1, sl));
        double* g2 = out.grad.data() + i2 * K;
        double* gl = out.grad.data() + il * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double a = 2.0 * alpha * (s1[k] - s2[k]);
            const double b = 2.0 * alpha * (s1[k] - sl[k]);
            g1[k] += a - b;
            g2[k] -= a;
            gl[k] += b;
        }
    }
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_bon_ade = 0.0;  // NaN when there is no validation split
};

struct TrainResult {
    FollowMeModel model;  // best-validation parameters
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double initial_val_bon_ade = 0.0;
};

/// Mean Best-of-m ADE over windows; the sampling seed of window i depends only
/// on (seed, i).
inline double mean_bon_ade(const FollowMeModel& model, const std::vector<WindowSample>& windows, std::size_t m,
                           std::uint64_t seed, std::size_t jobs = 1) {
    if (windows.empty()) throw EmptySplit("no windows to evaluate");
    std::vector<double> per(windows.size());
    parallel_for(windows.size(), jobs, [&](std::size_t i) {
        const auto set = model.sample(windows[i].window, m, sim::make_rng(seed, {0x76616c, i})());
        per[i] = best_of_n(set, windows[i].target.positions).ade;
    });
    double s = 0.0;
    for (double v : per) s += v;
    return s / double(per.size());
}

inline std::string history_to_string(const std::vector<EpochRecord>& h) {
    using io_detail::format_double;
    std::ostringstream os;
    os << "#epoch,lr,train_loss,val_bon_ade\n";
    for (const auto& r : h)
        os << r.epoch << "," << format_double(r.lr) << "," << format_double(r.train_loss) << ","
           << (std::isnan(r.val_bon_ade) ? std::string("nan") : format_double(r.val_bon_ade)) << "\n";
    return os.str();
}

inline void save_history(const std::vector<EpochRecord>& h, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open history " + path.string());
    out << history_to_string(h);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// IMLE training with Adam, global-norm clipping and a step schedule. Keeps the
/// parameters of the epoch with the lowest validation Best-of-m ADE.
inline TrainResult train(FollowMeModel model, const std::vector<WindowSample>& train_set,
                         const std::vector<WindowSample>& val_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw EmptySplit("training split is empty");
    const bool triplet = model.config().use_triplet;
    const std::uint64_t val_seed = sim::make_rng(cfg.seed, {0x76616c})();
    auto validate = [&](const FollowMeModel& m) {
        return val_set.empty() ? std::nan("") : mean_bon_ade(m, val_set, cfg.m_samples, val_seed, cfg.jobs);
    };

    TrainResult result{model, {}, 0, validate(model)};
    double best_val = std::numeric_limits<double>::infinity();
    nn::Adam adam(model.parameters());
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    struct Slot {
        nn::Gradients grads;
        double loss = 0.0;
    };
    std::vector<Slot> slots(std::min(cfg.batch_size, train_set.size()));
    for (auto& s : slots) s.grads = model.parameters().zeros_like();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg, epoch);
        auto rng = sim::make_rng(cfg.seed, {0x65706f6368, epoch});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
            parallel_for(nb, cfg.jobs, [&](std::size_t k) {
                const std::size_t wi = order[b0 + k];
                const auto& ws = train_set[wi];
                auto& slot = slots[k];
                for (auto& g : slot.grads) g.fill(0.0);
                std::vector<ForwardTape> tapes;
                const auto set = model.sample(ws.window, cfg.m_samples, sim::make_rng(cfg.seed, {epoch, wi})(), &tapes);
                const auto loss = imle_loss(set.samples, ws.target.positions, cfg.alpha, triplet);
                slot.loss = loss.value;
                std::vector<std::size_t> used{loss.ranking.closest()};
                if (triplet && cfg.alpha != 0.0) used.insert(used.end(), {loss.ranking.second(), loss.ranking.furthest()});
                std::sort(used.begin(), used.end());
                used.erase(std::unique(used.begin(), used.end()), used.end());
                const std::size_t K = 2 * ws.target.frames();
                for (std::size_t i : used) {
                    Tensor g({2, ws.target.frames()});
                    std::copy_n(loss.grad.data() + i * K, K, g.data());
                    model.backward(tapes[i], g, slot.grads);
                }
            });
            auto grads = model.parameters().zeros_like();
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < nb; ++k) {
                nn::add_into(grads, slots[k].grads, 1.0 / double(nb));
                batch_loss += slots[k].loss;
            }
            if (!std::isfinite(batch_loss) || !std::isfinite(nn::global_norm(grads)))
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                       std::to_string(b0) + " (loss " + std::to_string(batch_loss) + ")");
            const double norm = nn::global_norm(grads);
            if (norm > cfg.grad_clip_norm)
                for (auto& g : grads)
                    for (auto& v : g.values()) v *= cfg.grad_clip_norm / norm;
            adam.step(model.parameters(), grads, lr);
            epoch_loss += batch_loss;
        }
        EpochRecord rec{epoch, lr, epoch_loss / double(order.size()), validate(model)};
        result.history.push_back(rec);
        const bool improved = val_set.empty() ? true : rec.val_bon_ade < best_val;
        if (improved) {
            if (!val_set.empty()) best_val = rec.val_bon_ade;
            result.model = model;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

/// Evaluation of a trained model on one split.
inline MetricReport evaluate_checkpoint(const FollowMeModel& model, const std::vector<WindowSample>& windows,
                                        int horizon_s, std::size_t m = 20, std::uint64_t seed = 0,
                                        std::size_t jobs = 1) {
    if (windows.empty()) throw EmptySplit("evaluation split is empty");
    return evaluate(model, windows, horizon_s, m, seed, jobs);
}

}  // namespace followme
