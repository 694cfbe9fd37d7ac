#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "followme/core.hpp"
#include "followme/nn.hpp"
#include "followme/simgen.hpp"

namespace followme {

struct ModelConfig {
    std::size_t t_obs = 10;
    std::size_t t_pred = 30;
    std::size_t n_max = 8;
    std::size_t feature_channels = kFeatureChannels;
    std::size_t embed_channels = 2;
    std::size_t per_node_spatial_kernel = 3;
    std::size_t per_node_temporal_kernel = 3;
    std::array<std::size_t, 2> spatial_class_kernel{3, 1};  // (time, agents)
    std::array<std::size_t, 2> fusion_kernel{3, 3};         // (position, agents)
    std::size_t hidden_channels = 32;
    std::string activation = "prelu";
    std::size_t noise_channels = 2;
    double noise_init = 0.05;
    bool use_fusion = true;
    bool use_triplet = true;

    void validate() const {
        auto odd = [](std::size_t k) { return k % 2 == 1; };
        if (!odd(per_node_spatial_kernel) || !odd(per_node_temporal_kernel) || !odd(spatial_class_kernel[0]) ||
            !odd(spatial_class_kernel[1]) || !odd(fusion_kernel[0]) || !odd(fusion_kernel[1]))
            throw ConfigError("kernel sizes must be odd");
        if (embed_channels != 2) throw ConfigError("embed_channels must equal the 2 position dims");
        if (feature_channels != kFeatureChannels) throw ConfigError("feature_channels must be 5");
        if (noise_channels != 2) throw ConfigError("noise_channels must be 2");
        if (activation != "prelu") throw ConfigError("only prelu activation is supported");
        if (t_obs < 1 || t_pred < 1 || hidden_channels < 1) throw ConfigError("sizes must be positive");
        if (n_max < 2) throw ConfigError("n_max must be at least 2");
    }
};

/// Diagnostics captured on a forward pass.
struct FusionTrace {
    Tensor weights;                       // [2, T_p, N-1]
    std::vector<double> attn_norm;        // per predicted step
    std::vector<double> ego_embed_norm;   // per predicted step
    std::vector<AgentClass> labels;       // per N-1 slot
    std::vector<bool> valid;              // per N-1 slot
    WindowSource source;
};

/// M generated ego trajectories [M, 2, T_p] for one window.
struct PredictionSet {
    Tensor samples;

    std::size_t size() const { return samples.empty() ? 0 : samples.dim(0); }
    std::size_t frames() const { return samples.dim(2); }
    Tensor sample(std::size_t m) const {
        Tensor out({2, samples.dim(2)});
        std::copy_n(samples.data() + m * out.size(), out.size(), out.data());
        return out;
    }
};

/// Every intermediate of one forward pass, kept for backpropagation.
struct ForwardTape {
    Tensor x;                 // [5, T_o, N] input after noise
    Tensor noise;             // [2, T_o] or empty
    Tensor a1, h1, s;         // per-node spatial stack
    Tensor tin, b1, hb, b2;   // per-node temporal stack ([T, 2, N])
    Tensor nodes;             // [2, T_p, N]
    Tensor c1, hc, sc;        // spatial-class stack
    Tensor cat;               // [T_o + T_p, 2, N]
    Tensor f;                 // [T_p, 2, N] fusion logits
    Tensor weights;           // [2, T_p, N-1]
    Tensor attn;              // [2, T_p]
    Tensor pred;              // [2, T_p]
    std::vector<std::size_t> others;  // agent slot behind each N-1 entry
    std::vector<bool> mask;
    std::size_t ego = 0;
    std::size_t lead = 1;
};

/// Ego trajectory predictor: per-node embedding, spatial-class embedding,
/// sigmoid fusion weights over non-ego agents and a residual attention sum
/// onto the ego's own embedding.
class FollowMeModel {
public:
    explicit FollowMeModel(ModelConfig cfg = {}, std::uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::size_t H = cfg_.hidden_channels, F = cfg_.feature_channels, To = cfg_.t_obs, Tp = cfg_.t_pred;
        const std::size_t ks = cfg_.per_node_spatial_kernel, kt = cfg_.per_node_temporal_kernel;
        const auto [sch, scw] = cfg_.spatial_class_kernel;
        const auto [fh, fw] = cfg_.fusion_kernel;
        auto rng = sim::make_rng(init_seed, {0x6d6f64656c});
        auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw) {
            const double bound = 1.0 / std::sqrt(double(cin * kh * kw));
            std::uniform_real_distribution<double> u(-bound, bound);
            Tensor w({cout, cin, kh, kw});
            for (auto& v : w.values()) v = u(rng);
            Tensor b({cout});
            for (auto& v : b.values()) v = u(rng);
            const std::size_t wi = params_.add(name + ".weight", std::move(w));
            params_.add(name + ".bias", std::move(b));
            return wi;
        };
        auto slope = [&](const std::string& name) { return params_.add(name, Tensor({1}, 0.25)); };
        node1_ = conv("node.spatial1", H, F, ks, 1);
        node_act1_ = slope("node.act1");
        node2_ = conv("node.spatial2", 2, H, ks, 1);
        temp1_ = conv("node.temporal1", Tp, To, kt, 1);
        temp_act_ = slope("node.act2");
        temp2_ = conv("node.temporal2", Tp, Tp, kt, 1);
        sc1_ = conv("spatial_class.conv1", H, F, sch, scw);
        sc_act_ = slope("spatial_class.act");
        sc2_ = conv("spatial_class.conv2", 2, H, sch, scw);
        fusion_ = conv("fusion.conv", Tp, To + Tp, fh, fw);
        noise_ = params_.add("noise.scale", Tensor({2}, cfg_.noise_init));
    }

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }
    nn::ParameterSet& parameters() { return params_; }
    const nn::ParameterSet& parameters() const { return params_; }
    Tensor& noise_scale() { return params_.values[noise_]; }

    // ---- individual stages -------------------------------------------------

    /// Emb_N [2, T_p, N]: every agent through the same spatial and temporal CNNs.
    Tensor per_node_process(const ObservationWindow& w) const {
        check_window(w);
        ForwardTape tape = init_tape(w);
        tape.x = w.features;
        run_nodes(tape, {0, tape.x.dim(2)});
        return tape.nodes;
    }

    /// Emb_SpatialClass [2, T_o, N].
    Tensor spatial_class_process(const ObservationWindow& w) const {
        check_window(w);
        ForwardTape tape = init_tape(w);
        tape.x = w.features;
        run_spatial_class(tape, {0, tape.x.dim(2)});
        return tape.sc;
    }

    /// Emb_Cat [T_o + T_p, 2, N]: time-major concatenation.
    static Tensor fuse_concat(const Tensor& sc, const Tensor& nodes) {
        if (sc.rank() != 3 || nodes.rank() != 3 || sc.dim(0) != 2 || nodes.dim(0) != 2 || sc.dim(2) != nodes.dim(2))
            throw ShapeError("fuse_concat expects [2,T_o,N] and [2,T_p,N], got " + shape_string(sc.shape()) + " and " +
                             shape_string(nodes.shape()));
        const std::size_t To = sc.dim(1), Tp = nodes.dim(1), N = sc.dim(2);
        Tensor cat({To + Tp, 2, N});
        write_concat(sc, nodes, cat, {0, N});
        return cat;
    }

    /// Sigmoid fusion weights [2, T_p, N-1] with the ego slice removed and
    /// invalid agents zeroed.
    Tensor fusion_weighting(const Tensor& cat, std::size_t ego_index, const std::vector<bool>& mask) const;

    /// ATTN[p, t] = sum over non-ego agents of weight * embedding.
    static Tensor attention(const Tensor& weights, const Tensor& nodes, std::size_t ego_index) {
        if (weights.rank() != 3 || nodes.rank() != 3 || weights.dim(0) != 2 || nodes.dim(0) != 2 ||
            weights.dim(1) != nodes.dim(1) || weights.dim(2) + 1 != nodes.dim(2) || ego_index >= nodes.dim(2))
            throw ShapeError("attention expects [2,T_p,N-1] weights and [2,T_p,N] embeddings, got " +
                             shape_string(weights.shape()) + " and " + shape_string(nodes.shape()));
        Tensor out({2, nodes.dim(1)});
        accumulate_attention(weights, nodes, others_of(nodes.dim(2), ego_index), out);
        return out;
    }

    // ---- full passes -------------------------------------------------------

    /// Full forward pass; `noise` is [2, T_o] standard-normal draws or empty.
    ForwardTape forward(const ObservationWindow& w, const Tensor& noise = {}) const {
        check_window(w);
        ForwardTape tape = init_tape(w);
        tape.x = w.features;
        apply_noise(tape, noise);
        const nn::ColumnRange all{0, tape.x.dim(2)};
        run_nodes(tape, all);
        if (cfg_.use_fusion) {
            run_spatial_class(tape, all);
            write_concat(tape.sc, tape.nodes, tape.cat, all);
            run_fusion(tape, all);
        }
        finish(tape);
        return tape;
    }

    /// Re-runs only what the lead-agent noise can reach, starting from a
    /// noise-free tape of the same window. Bit-identical to `forward`.
    ForwardTape forward_from(const ForwardTape& base, const Tensor& noise) const {
        ForwardTape tape = base;
        apply_noise(tape, noise);
        const std::size_t N = tape.x.dim(2);
        const nn::ColumnRange lead{tape.lead, tape.lead + 1};
        run_nodes(tape, lead);
        if (cfg_.use_fusion) {
            const auto r1 = lead.widen(cfg_.spatial_class_kernel[1], N);
            const auto r2 = r1.widen(cfg_.spatial_class_kernel[1], N);
            run_spatial_class(tape, r2, r1);
            const auto changed = lead.unite(r2);
            write_concat(tape.sc, tape.nodes, tape.cat, changed);
            run_fusion(tape, changed.widen(cfg_.fusion_kernel[1], N));
        }
        finish(tape);
        return tape;
    }

    std::pair<Tensor, FusionTrace> predict(const ObservationWindow& w, const Tensor& noise = {}) const {
        ForwardTape tape = forward(w, noise);
        FusionTrace trace = make_trace(tape, w);
        return {std::move(tape.pred), std::move(trace)};
    }

    /// m forward passes with fresh standard-normal lead noise; deterministic in `seed`.
    PredictionSet sample(const ObservationWindow& w, std::size_t m, std::uint64_t seed,
                         std::vector<ForwardTape>* tapes = nullptr) const {
        if (m < 1) throw ConfigError("sample count must be at least 1");
        const ForwardTape base = forward(w);
        auto rng = sim::make_rng(seed, {0x6e6f697365});
        std::normal_distribution<double> g(0.0, 1.0);
        const std::size_t Tp = cfg_.t_pred;
        PredictionSet set{Tensor({m, 2, Tp})};
        if (tapes) tapes->clear();
        for (std::size_t i = 0; i < m; ++i) {
            Tensor z({2, cfg_.t_obs});
            for (auto& v : z.values()) v = g(rng);
            ForwardTape tape = forward_from(base, z);
            std::copy_n(tape.pred.data(), 2 * Tp, set.samples.data() + i * 2 * Tp);
            if (tapes) tapes->push_back(std::move(tape));
        }
        return set;
    }

    FusionTrace make_trace(const ForwardTape& tape, const ObservationWindow& w) const {
        const std::size_t Tp = cfg_.t_pred;
        FusionTrace tr;
        tr.weights = tape.weights;
        tr.attn_norm.resize(Tp);
        tr.ego_embed_norm.resize(Tp);
        for (std::size_t t = 0; t < Tp; ++t) {
            tr.attn_norm[t] = std::hypot(tape.attn.at(0, t), tape.attn.at(1, t));
            tr.ego_embed_norm[t] = std::hypot(tape.nodes.at(0, t, tape.ego), tape.nodes.at(1, t, tape.ego));
        }
        for (std::size_t n : tape.others) {
            tr.labels.push_back(w.classes[n]);
            tr.valid.push_back(w.mask[n]);
        }
        tr.source = w.source;
        return tr;
    }

    /// Backpropagates dL/dpred through `tape`, accumulating into `grads`
    /// (shaped like parameters()).
    void backward(const ForwardTape& tape, const Tensor& grad_pred, nn::Gradients& grads) const {
        const std::size_t Tp = cfg_.t_pred, N = tape.x.dim(2);
        require_shape(grad_pred, {2, Tp}, "grad_pred");
        Tensor d_nodes({2, Tp, N});
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t t = 0; t < Tp; ++t) d_nodes.at(p, t, tape.ego) += grad_pred.at(p, t);

        Tensor d_x(tape.x.shape());
        const bool want_noise = !tape.noise.empty();
        const nn::ColumnRange lead_col{tape.lead, tape.lead + 1};
        const nn::ColumnRange no_cols{0, 0};

        if (cfg_.use_fusion) {
            // attention and gating
            Tensor d_f(tape.f.shape());
            for (std::size_t j = 0; j < tape.others.size(); ++j) {
                const std::size_t n = tape.others[j];
                if (!tape.mask[n]) continue;
                for (std::size_t p = 0; p < 2; ++p)
                    for (std::size_t t = 0; t < Tp; ++t) {
                        const double w = tape.weights.at(p, t, j);
                        const double g = grad_pred.at(p, t);
                        d_nodes.at(p, t, n) += g * w;
                        d_f.at(t, p, n) = g * tape.nodes.at(p, t, n) * w * (1.0 - w);
                    }
            }
            Tensor d_cat(tape.cat.shape());
            nn::conv2d_backward(tape.cat, params_.values[fusion_], d_f, &d_cat, {0, N}, grads[fusion_],
                                grads[fusion_ + 1]);
            const std::size_t To = cfg_.t_obs;
            Tensor d_sc(tape.sc.shape());
            for (std::size_t t = 0; t < To + Tp; ++t)
                for (std::size_t p = 0; p < 2; ++p)
                    for (std::size_t n = 0; n < N; ++n) {
                        if (t < To)
                            d_sc.at(p, t, n) = d_cat.at(t, p, n);
                        else
                            d_nodes.at(p, t - To, n) += d_cat.at(t, p, n);
                    }
            Tensor d_hc(tape.hc.shape());
            nn::conv2d_backward(tape.hc, params_.values[sc2_], d_sc, &d_hc, {0, N}, grads[sc2_], grads[sc2_ + 1]);
            Tensor d_c1(tape.c1.shape());
            nn::prelu_backward(tape.c1, params_.values[sc_act_][0], d_hc, d_c1, grads[sc_act_][0]);
            nn::conv2d_backward(tape.x, params_.values[sc1_], d_c1, want_noise ? &d_x : nullptr,
                                want_noise ? lead_col : no_cols, grads[sc1_], grads[sc1_ + 1]);
        }

        // per-node temporal stack; emb = b1 + temporal2(prelu(b1))
        Tensor d_e({Tp, 2, N});
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t t = 0; t < Tp; ++t)
                for (std::size_t n = 0; n < N; ++n) d_e.at(t, p, n) = d_nodes.at(p, t, n);
        Tensor d_hb(tape.hb.shape());
        nn::conv2d_backward(tape.hb, params_.values[temp2_], d_e, &d_hb, {0, N}, grads[temp2_], grads[temp2_ + 1]);
        Tensor d_b1(tape.b1.shape());
        nn::prelu_backward(tape.b1, params_.values[temp_act_][0], d_hb, d_b1, grads[temp_act_][0]);
        for (std::size_t i = 0; i < d_b1.size(); ++i) d_b1[i] += d_e[i];
        Tensor d_tin(tape.tin.shape());
        nn::conv2d_backward(tape.tin, params_.values[temp1_], d_b1, &d_tin, {0, N}, grads[temp1_], grads[temp1_ + 1]);
        const std::size_t To = cfg_.t_obs;
        Tensor d_s(tape.s.shape());
        for (std::size_t t = 0; t < To; ++t)
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t n = 0; n < N; ++n) d_s.at(p, t, n) = d_tin.at(t, p, n);
        Tensor d_h1(tape.h1.shape());
        nn::conv2d_backward(tape.h1, params_.values[node2_], d_s, &d_h1, {0, N}, grads[node2_], grads[node2_ + 1]);
        Tensor d_a1(tape.a1.shape());
        nn::prelu_backward(tape.a1, params_.values[node_act1_][0], d_h1, d_a1, grads[node_act1_][0]);
        nn::conv2d_backward(tape.x, params_.values[node1_], d_a1, want_noise ? &d_x : nullptr,
                            want_noise ? lead_col : no_cols, grads[node1_], grads[node1_ + 1]);

        if (want_noise)
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t t = 0; t < To; ++t)
                    grads[noise_][p] += d_x.at(p, t, tape.lead) * tape.noise.at(p, t);
    }

    // ---- persistence -------------------------------------------------------

    void save(const std::filesystem::path& path) const;
    static FollowMeModel load(const std::filesystem::path& path);

private:

    void check_window(const ObservationWindow& w) const {
        require_shape(w.features, {cfg_.feature_channels, cfg_.t_obs, cfg_.n_max}, "window features");
        if (w.mask.size() != cfg_.n_max) throw ShapeError("window mask length does not match n_max");
        if (w.ego_index >= cfg_.n_max || w.lead_index >= cfg_.n_max || w.ego_index == w.lead_index)
            throw ShapeError("invalid ego/lead index");
        if (w.horizon_frames != 0 && w.horizon_frames != cfg_.t_pred)
            throw ShapeError("window horizon " + std::to_string(w.horizon_frames) + " != model t_pred " +
                             std::to_string(cfg_.t_pred));
    }

    static std::vector<std::size_t> others_of(std::size_t n, std::size_t ego) {
        std::vector<std::size_t> o;
        for (std::size_t i = 0; i < n; ++i)
            if (i != ego) o.push_back(i);
        return o;
    }

    ForwardTape init_tape(const ObservationWindow& w) const {
        const std::size_t H = cfg_.hidden_channels, To = cfg_.t_obs, Tp = cfg_.t_pred, N = cfg_.n_max;
        ForwardTape t;
        t.ego = w.ego_index;
        t.lead = w.lead_index;
        t.mask = w.mask;
        t.others = others_of(N, w.ego_index);
        t.a1 = Tensor({H, To, N});
        t.h1 = Tensor({H, To, N});
        t.s = Tensor({2, To, N});
        t.tin = Tensor({To, 2, N});
        t.b1 = Tensor({Tp, 2, N});
        t.hb = Tensor({Tp, 2, N});
        t.b2 = Tensor({Tp, 2, N});
        t.nodes = Tensor({2, Tp, N});
        if (cfg_.use_fusion) {
            t.c1 = Tensor({H, To, N});
            t.hc = Tensor({H, To, N});
            t.sc = Tensor({2, To, N});
            t.cat = Tensor({To + Tp, 2, N});
            t.f = Tensor({Tp, 2, N});
        }
        t.weights = Tensor({2, Tp, N - 1});
        t.attn = Tensor({2, Tp});
        t.pred = Tensor({2, Tp});
        return t;
    }

    void apply_noise(ForwardTape& tape, const Tensor& noise) const {
        tape.noise = noise;
        if (noise.empty()) return;
        require_shape(noise, {2, cfg_.t_obs}, "noise");
        const auto& scale = params_.values[noise_];
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t t = 0; t < cfg_.t_obs; ++t) tape.x.at(p, t, tape.lead) += scale[p] * noise.at(p, t);
    }

    void run_nodes(ForwardTape& tp, nn::ColumnRange cols) const {
        const auto& P = params_.values;
        const std::size_t To = cfg_.t_obs, Tp = cfg_.t_pred;
        nn::conv2d_forward(tp.x, P[node1_], P[node1_ + 1], tp.a1, cols);
        nn::prelu_forward(tp.a1, P[node_act1_][0], tp.h1, cols);
        nn::conv2d_forward(tp.h1, P[node2_], P[node2_ + 1], tp.s, cols);
        for (std::size_t t = 0; t < To; ++t)
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t n = cols.begin; n < cols.end; ++n) tp.tin.at(t, p, n) = tp.s.at(p, t, n);
        nn::conv2d_forward(tp.tin, P[temp1_], P[temp1_ + 1], tp.b1, cols);
        nn::prelu_forward(tp.b1, P[temp_act_][0], tp.hb, cols);
        nn::conv2d_forward(tp.hb, P[temp2_], P[temp2_ + 1], tp.b2, cols);
        for (std::size_t t = 0; t < Tp; ++t)
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t n = cols.begin; n < cols.end; ++n)
                    tp.nodes.at(p, t, n) = tp.b1.at(t, p, n) + tp.b2.at(t, p, n);
    }

    void run_spatial_class(ForwardTape& tp, nn::ColumnRange out_cols) const {
        run_spatial_class(tp, out_cols, out_cols);
    }
    void run_spatial_class(ForwardTape& tp, nn::ColumnRange out_cols, nn::ColumnRange hidden_cols) const {
        const auto& P = params_.values;
        nn::conv2d_forward(tp.x, P[sc1_], P[sc1_ + 1], tp.c1, hidden_cols);
        nn::prelu_forward(tp.c1, P[sc_act_][0], tp.hc, hidden_cols);
        nn::conv2d_forward(tp.hc, P[sc2_], P[sc2_ + 1], tp.sc, out_cols);
    }

    static void write_concat(const Tensor& sc, const Tensor& nodes, Tensor& cat, nn::ColumnRange cols) {
        const std::size_t To = sc.dim(1), Tp = nodes.dim(1);
        for (std::size_t t = 0; t < To + Tp; ++t)
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t n = cols.begin; n < cols.end; ++n)
                    cat.at(t, p, n) = t < To ? sc.at(p, t, n) : nodes.at(p, t - To, n);
    }

    void run_fusion(ForwardTape& tp, nn::ColumnRange cols) const {
        nn::conv2d_forward(tp.cat, params_.values[fusion_], params_.values[fusion_ + 1], tp.f, cols);
    }

    static void gate(const Tensor& logits, const std::vector<std::size_t>& others, const std::vector<bool>& mask,
                     Tensor& weights) {
        const std::size_t Tp = logits.dim(0);
        for (std::size_t j = 0; j < others.size(); ++j) {
            const std::size_t n = others[j];
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t t = 0; t < Tp; ++t)
                    weights.at(p, t, j) = mask[n] ? nn::sigmoid(logits.at(t, p, n)) : 0.0;
        }
    }

    static void accumulate_attention(const Tensor& weights, const Tensor& nodes, const std::vector<std::size_t>& others,
                                     Tensor& out) {
        const std::size_t Tp = nodes.dim(1);
        out.fill(0.0);
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t t = 0; t < Tp; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < others.size(); ++j) acc += weights.at(p, t, j) * nodes.at(p, t, others[j]);
                out.at(p, t) = acc;
            }
    }

    void finish(ForwardTape& tp) const {
        const std::size_t Tp = cfg_.t_pred;
        if (cfg_.use_fusion) {
            gate(tp.f, tp.others, tp.mask, tp.weights);
            accumulate_attention(tp.weights, tp.nodes, tp.others, tp.attn);
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t t = 0; t < Tp; ++t) tp.pred.at(p, t) = tp.attn.at(p, t) + tp.nodes.at(p, t, tp.ego);
        } else {
            tp.weights.fill(0.0);
            tp.attn.fill(0.0);
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t t = 0; t < Tp; ++t) tp.pred.at(p, t) = tp.nodes.at(p, t, tp.ego);
        }
    }

    ModelConfig cfg_;
    nn::ParameterSet params_;
    std::size_t node1_ = 0, node_act1_ = 0, node2_ = 0, temp1_ = 0, temp_act_ = 0, temp2_ = 0;
    std::size_t sc1_ = 0, sc_act_ = 0, sc2_ = 0, fusion_ = 0, noise_ = 0;
};

inline Tensor FollowMeModel::fusion_weighting(const Tensor& cat, std::size_t ego_index,
                                              const std::vector<bool>& mask) const {
    const std::size_t Tp = cfg_.t_pred;
    if (cat.rank() != 3 || cat.dim(0) != cfg_.t_obs + Tp || cat.dim(1) != 2 || mask.size() != cat.dim(2) ||
        ego_index >= cat.dim(2))
        throw ShapeError("fusion_weighting expects [T_o+T_p,2,N], got " + shape_string(cat.shape()));
    const std::size_t N = cat.dim(2);
    Tensor f({Tp, 2, N});
    nn::conv2d_forward(cat, params_.values[fusion_], params_.values[fusion_ + 1], f, {0, N});
    Tensor w({2, Tp, N - 1});
    gate(f, others_of(N, ego_index), mask, w);
    return w;
}

// ---- checkpoint format -----------------------------------------------------
//
//   followme-checkpoint 1
//   config <key>=<value>        (one line per ModelConfig field)
//   param <name> <rank> <d0> ... <dk>
//   <values, whitespace separated, 17 significant digits>
//   end

namespace ckpt_detail {

inline std::map<std::string, std::string> config_to_map(const ModelConfig& c) {
    auto s = [](std::size_t v) { return std::to_string(v); };
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", c.noise_init);
    return {{"t_obs", s(c.t_obs)},
            {"t_pred", s(c.t_pred)},
            {"n_max", s(c.n_max)},
            {"feature_channels", s(c.feature_channels)},
            {"embed_channels", s(c.embed_channels)},
            {"per_node_spatial_kernel", s(c.per_node_spatial_kernel)},
            {"per_node_temporal_kernel", s(c.per_node_temporal_kernel)},
            {"spatial_class_kernel", s(c.spatial_class_kernel[0]) + "x" + s(c.spatial_class_kernel[1])},
            {"fusion_kernel", s(c.fusion_kernel[0]) + "x" + s(c.fusion_kernel[1])},
            {"hidden_channels", s(c.hidden_channels)},
            {"activation", c.activation},
            {"noise_channels", s(c.noise_channels)},
            {"noise_init", buf},
            {"use_fusion", c.use_fusion ? "true" : "false"},
            {"use_triplet", c.use_triplet ? "true" : "false"}};
}

inline bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1") return out = true, true;
    if (v == "false" || v == "0") return out = false, true;
    return false;
}

/// Applies one `key=value` to a ModelConfig; returns false for unknown keys.
inline bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
    auto size = [&](std::size_t& dst) {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw ConfigError("bad integer for " + key + ": " + value);
        dst = static_cast<std::size_t>(v);
    };
    auto pair = [&](std::array<std::size_t, 2>& dst) {
        const auto x = value.find('x');
        if (x == std::string::npos) throw ConfigError("expected AxB for " + key);
        dst = {std::stoul(value.substr(0, x)), std::stoul(value.substr(x + 1))};
    };
    try {
        if (key == "t_obs") size(c.t_obs);
        else if (key == "t_pred") size(c.t_pred);
        else if (key == "n_max") size(c.n_max);
        else if (key == "feature_channels") size(c.feature_channels);
        else if (key == "embed_channels") size(c.embed_channels);
        else if (key == "per_node_spatial_kernel") size(c.per_node_spatial_kernel);
        else if (key == "per_node_temporal_kernel") size(c.per_node_temporal_kernel);
        else if (key == "spatial_class_kernel") pair(c.spatial_class_kernel);
        else if (key == "fusion_kernel") pair(c.fusion_kernel);
        else if (key == "hidden_channels") size(c.hidden_channels);
        else if (key == "activation") c.activation = value;
        else if (key == "noise_channels") size(c.noise_channels);
        else if (key == "noise_init") c.noise_init = std::stod(value);
        else if (key == "use_fusion") { if (!parse_bool(value, c.use_fusion)) throw ConfigError("bad bool " + value); }
        else if (key == "use_triplet") { if (!parse_bool(value, c.use_triplet)) throw ConfigError("bad bool " + value); }
        else return false;
    } catch (const std::logic_error&) {
        throw ConfigError("bad value for " + key + ": " + value);
    }
    return true;
}

}  // namespace ckpt_detail

inline void FollowMeModel::save(const std::filesystem::path& path) const {
    std::ostringstream os;
    os << "followme-checkpoint 1\n";
    for (const auto& [k, v] : ckpt_detail::config_to_map(cfg_)) os << "config " << k << "=" << v << "\n";
    char buf[40];
    for (std::size_t i = 0; i < params_.values.size(); ++i) {
        const auto& t = params_.values[i];
        os << "param " << params_.names[i] << " " << t.rank();
        for (auto d : t.shape()) os << " " << d;
        os << "\n";
        for (std::size_t j = 0; j < t.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", t[j]);
            os << buf << ((j + 1) % 8 == 0 || j + 1 == t.size() ? "\n" : " ");
        }
    }
    os << "end\n";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open checkpoint " + path.string());
    const auto data = os.str();
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DatasetWriteError("write failed for " + path.string());
}

inline FollowMeModel FollowMeModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open checkpoint");
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "followme-checkpoint" || version != 1) throw ParseError(path.string(), 1, "not a version-1 checkpoint");
    ModelConfig cfg;
    std::string tok;
    std::vector<std::pair<std::string, Tensor>> loaded;
    while (in >> tok) {
        if (tok == "config") {
            std::string kv;
            in >> kv;
            const auto eq = kv.find('=');
            if (eq == std::string::npos || !ckpt_detail::apply_model_key(cfg, kv.substr(0, eq), kv.substr(eq + 1)))
                throw ParseError(path.string(), 0, "bad config entry " + kv);
        } else if (tok == "param") {
            std::string name;
            std::size_t rank = 0;
            in >> name >> rank;
            std::vector<std::size_t> shape(rank);
            for (auto& d : shape) in >> d;
            Tensor t(shape);
            for (auto& v : t.values()) in >> v;
            if (!in) throw ParseError(path.string(), 0, "truncated parameter " + name);
            loaded.emplace_back(name, std::move(t));
        } else if (tok == "end") {
            break;
        } else {
            throw ParseError(path.string(), 0, "unexpected token " + tok);
        }
    }
    FollowMeModel model(cfg);
    auto& params = model.parameters();
    if (loaded.size() != params.values.size()) throw ParseError(path.string(), 0, "parameter count mismatch");
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        if (loaded[i].first != params.names[i] || loaded[i].second.shape() != params.values[i].shape())
            throw ParseError(path.string(), 0, "parameter " + loaded[i].first + " does not match the config");
        params.values[i] = std::move(loaded[i].second);
    }
    return model;
}

}  // namespace followme
