#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "followme/dataset_io.hpp"
#include "followme/model.hpp"

namespace followme {

inline constexpr std::size_t kHistogramBins = 20;

/// Mean fusion weight of slot j over both channels and all predicted steps.
inline double contribution_strength(const FusionTrace& tr, std::size_t j) {
    const std::size_t Tp = tr.weights.dim(1);
    double s = 0.0;
    for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t t = 0; t < Tp; ++t) s += tr.weights.at(p, t, j);
    return s / double(2 * Tp);
}

inline std::size_t histogram_bin(double c) {
    return std::min<std::size_t>(kHistogramBins - 1, static_cast<std::size_t>(std::max(0.0, c) * kHistogramBins));
}

struct ContributionHistogram {
    std::array<std::size_t, kHistogramBins> lead{};
    std::array<std::size_t, kHistogramBins> other{};
    std::size_t lead_count = 0;
    std::size_t other_count = 0;
    double lead_mean = 0.0;
    double other_mean = 0.0;
    std::optional<std::size_t> max_lead_trace;  // index of the trace with the strongest lead
    std::optional<std::size_t> min_lead_trace;
};

inline ContributionHistogram contribution_histogram(const std::vector<FusionTrace>& traces) {
    if (traces.empty()) throw ConfigError("contribution_histogram needs at least one trace");
    ContributionHistogram h;
    double best = -1.0, worst = 2.0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& tr = traces[i];
        for (std::size_t j = 0; j < tr.labels.size(); ++j) {
            if (!tr.valid[j]) continue;
            const double c = contribution_strength(tr, j);
            if (tr.labels[j] == AgentClass::Lead) {
                ++h.lead[histogram_bin(c)];
                ++h.lead_count;
                h.lead_mean += c;
                if (c > best) best = c, h.max_lead_trace = i;
                if (c < worst) worst = c, h.min_lead_trace = i;
            } else if (tr.labels[j] == AgentClass::Other) {
                ++h.other[histogram_bin(c)];
                ++h.other_count;
                h.other_mean += c;
            }
        }
    }
    if (h.lead_count) h.lead_mean /= double(h.lead_count);
    if (h.other_count) h.other_mean /= double(h.other_count);
    return h;
}

struct MagnitudeCurves {
    std::vector<double> attn;  // mean ||ATTN_t||
    std::vector<double> ego;   // mean ||Emb_ego,t||
};

inline MagnitudeCurves contribution_magnitude_curve(const std::vector<FusionTrace>& traces) {
    if (traces.empty()) throw ConfigError("contribution_magnitude_curve needs at least one trace");
    const std::size_t Tp = traces.front().attn_norm.size();
    MagnitudeCurves c{std::vector<double>(Tp, 0.0), std::vector<double>(Tp, 0.0)};
    for (const auto& tr : traces) {
        if (tr.attn_norm.size() != Tp) throw ShapeError("traces disagree on the prediction length");
        for (std::size_t t = 0; t < Tp; ++t) {
            c.attn[t] += tr.attn_norm[t];
            c.ego[t] += tr.ego_embed_norm[t];
        }
    }
    for (std::size_t t = 0; t < Tp; ++t) {
        c.attn[t] /= double(traces.size());
        c.ego[t] /= double(traces.size());
    }
    return c;
}

// ---- trace files -------------------------------------------------------------
//
//   followme-traces 1 <count>
//   trace <scene_id> <driver_id> <obs_end_frame> <density> <operation> <lead_speed> <t_pred> <slots>
//   labels <EGO|LEAD|OTHER per slot>
//   valid <0|1 per slot>
//   weights <2*t_pred*slots values, row-major [2, t_pred, slots]>
//   attn <t_pred values>
//   ego <t_pred values>

inline void save_traces(const std::vector<FusionTrace>& traces, const std::filesystem::path& path) {
    using io_detail::format_double;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open " + path.string());
    out << "followme-traces 1 " << traces.size() << "\n";
    for (const auto& tr : traces) {
        const auto& s = tr.source;
        out << "trace " << (s.scene_id.empty() ? "-" : s.scene_id) << " " << (s.driver_id.empty() ? "-" : s.driver_id)
            << " " << s.obs_end_frame << " " << to_string(s.scenario.density) << " " << to_string(s.scenario.operation)
            << " " << format_double(s.scenario.lead_speed_mps) << " " << tr.weights.dim(1) << " " << tr.weights.dim(2)
            << "\nlabels";
        for (auto l : tr.labels) out << " " << to_string(l);
        out << "\nvalid";
        for (bool v : tr.valid) out << " " << (v ? 1 : 0);
        out << "\nweights";
        for (double v : tr.weights.values()) out << " " << format_double(v);
        out << "\nattn";
        for (double v : tr.attn_norm) out << " " << format_double(v);
        out << "\nego";
        for (double v : tr.ego_embed_norm) out << " " << format_double(v);
        out << "\n";
    }
    if (!out) throw DatasetWriteError("write failed for " + path.string());
}

inline std::vector<FusionTrace> load_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open trace file");
    std::string magic;
    int version = 0;
    std::size_t count = 0;
    in >> magic >> version >> count;
    if (magic != "followme-traces" || version != 1) throw ParseError(path.string(), 1, "not a version-1 trace file");
    std::vector<FusionTrace> traces;
    auto expect = [&](const char* tag, std::size_t line) {
        std::string t;
        in >> t;
        if (t != tag) throw ParseError(path.string(), line, std::string("expected ") + tag);
    };
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t line = 2 + i * 6;
        expect("trace", line);
        FusionTrace tr;
        std::string density, op, speed;
        std::size_t tp = 0, slots = 0;
        in >> tr.source.scene_id >> tr.source.driver_id >> tr.source.obs_end_frame >> density >> op >> speed >> tp >> slots;
        if (tr.source.scene_id == "-") tr.source.scene_id.clear();
        if (tr.source.driver_id == "-") tr.source.driver_id.clear();
        auto d = parse_density(density);
        auto o = parse_operation(op);
        if (!in || !d || !o || !io_detail::parse_double(speed, tr.source.scenario.lead_speed_mps))
            throw ParseError(path.string(), line, "bad trace header");
        tr.source.scenario.density = *d;
        tr.source.scenario.operation = *o;
        expect("labels", line + 1);
        for (std::size_t j = 0; j < slots; ++j) {
            std::string l;
            in >> l;
            auto c = parse_agent_class(l);
            if (!c) throw ParseError(path.string(), line + 1, "bad agent label " + l);
            tr.labels.push_back(*c);
        }
        expect("valid", line + 2);
        for (std::size_t j = 0; j < slots; ++j) {
            int v = 0;
            in >> v;
            tr.valid.push_back(v != 0);
        }
        expect("weights", line + 3);
        tr.weights = Tensor({2, tp, slots});
        for (auto& v : tr.weights.values()) in >> v;
        expect("attn", line + 4);
        tr.attn_norm.resize(tp);
        for (auto& v : tr.attn_norm) in >> v;
        expect("ego", line + 5);
        tr.ego_embed_norm.resize(tp);
        for (auto& v : tr.ego_embed_norm) in >> v;
        if (!in) throw ParseError(path.string(), line, "truncated trace");
        traces.push_back(std::move(tr));
    }
    return traces;
}

// ---- raster output -----------------------------------------------------------

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

/// Minimal RGB raster with world-to-pixel mapping.
class Canvas {
public:
    Canvas(int width, int height, Rgb background = {255, 255, 255})
        : w_(width), h_(height), px_(std::size_t(width) * std::size_t(height), background) {}

    int width() const { return w_; }
    int height() const { return h_; }
    Rgb pixel(int x, int y) const { return px_[std::size_t(y) * std::size_t(w_) + std::size_t(x)]; }

    /// Maps world [x0,x1]x[y0,y1] onto the canvas with a margin, y up.
    void set_view(double x0, double x1, double y0, double y1, int margin = 20) {
        const double sx = (w_ - 2 * margin) / std::max(1e-9, x1 - x0);
        const double sy = (h_ - 2 * margin) / std::max(1e-9, y1 - y0);
        scale_ = std::min(sx, sy);
        cx_ = 0.5 * (x0 + x1);
        cy_ = 0.5 * (y0 + y1);
    }

    std::pair<double, double> to_pixel(double x, double y) const {
        return {0.5 * w_ + (x - cx_) * scale_, 0.5 * h_ - (y - cy_) * scale_};
    }

    void set(int x, int y, Rgb c) {
        if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[std::size_t(y) * std::size_t(w_) + std::size_t(x)] = c;
    }

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = std::max(0, y0); y < std::min(h_, y1); ++y)
            for (int x = std::max(0, x0); x < std::min(w_, x1); ++x) set(x, y, c);
    }

    void line_px(double ax, double ay, double bx, double by, Rgb c) {
        const int n = std::max(1, int(std::ceil(std::max(std::abs(bx - ax), std::abs(by - ay)))));
        for (int i = 0; i <= n; ++i) {
            const double u = double(i) / n;
            set(int(std::lround(ax + u * (bx - ax))), int(std::lround(ay + u * (by - ay))), c);
        }
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, Rgb c) {
        for (std::size_t i = 1; i < pts.size(); ++i) {
            const auto [ax, ay] = to_pixel(pts[i - 1].first, pts[i - 1].second);
            const auto [bx, by] = to_pixel(pts[i].first, pts[i].second);
            line_px(ax, ay, bx, by, c);
        }
    }

    void dot(double x, double y, int radius, Rgb c) {
        const auto [px, py] = to_pixel(x, y);
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy <= radius * radius) set(int(std::lround(px)) + dx, int(std::lround(py)) + dy, c);
    }

    void write_png(const std::filesystem::path& path) const {
        FILE* fp = std::fopen(path.string().c_str(), "wb");
        if (!fp) throw PlotWriteError("cannot open " + path.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info || setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            std::fclose(fp);
            throw PlotWriteError("libpng failed writing " + path.string());
        }
        png_init_io(png, fp);
        png_set_IHDR(png, info, png_uint_32(w_), png_uint_32(h_), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<std::uint8_t> row(std::size_t(w_) * 3);
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < w_; ++x) {
                const Rgb c = pixel(x, y);
                row[std::size_t(x) * 3] = c.r;
                row[std::size_t(x) * 3 + 1] = c.g;
                row[std::size_t(x) * 3 + 2] = c.b;
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
        if (std::fclose(fp) != 0) throw PlotWriteError("close failed for " + path.string());
    }

private:
    int w_, h_;
    std::vector<Rgb> px_;
    double scale_ = 1.0, cx_ = 0.0, cy_ = 0.0;
};

namespace plot_colors {
inline constexpr Rgb kObserved{40, 40, 40};
inline constexpr Rgb kTruth{20, 150, 40};
inline constexpr Rgb kLead{30, 90, 220};
inline constexpr Rgb kOther{150, 150, 150};
inline constexpr std::array<Rgb, 4> kModels{{{220, 50, 40}, {230, 140, 20}, {150, 60, 190}, {0, 160, 170}}};
}  // namespace plot_colors

struct PlotModel {
    std::string name;
    PredictionSet samples;
};

struct PlotCase {
    std::string name;
    WindowSample sample;
    std::vector<PlotModel> models;
};

/// One top-down PNG per case: observed agents, ground truth and every
/// model's samples in the ego-anchored frame. Returns the written paths.
inline std::vector<std::filesystem::path> plot_predictions(const std::vector<PlotCase>& cases, int horizon_s,
                                                           const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw PlotWriteError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (const auto& pc : cases) {
        const auto& w = pc.sample.window;
        const auto& gt = pc.sample.target.positions;
        using Poly = std::vector<std::pair<double, double>>;
        auto agent_poly = [&](std::size_t n) {
            Poly p;
            for (std::size_t t = 0; t < w.t_obs(); ++t)
                p.emplace_back(w.features.at(kChannelX, t, n), w.features.at(kChannelY, t, n));
            return p;
        };
        Poly truth{{0.0, 0.0}};
        for (std::size_t t = 0; t < gt.dim(1); ++t) truth.emplace_back(gt.at(0, t), gt.at(1, t));

        double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
        auto grow = [&](double x, double y) {
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        };
        for (auto [x, y] : truth) grow(x, y);
        for (std::size_t n = 0; n < w.n_agents(); ++n)
            if (w.mask[n])
                for (auto [x, y] : agent_poly(n)) grow(x, y);
        for (const auto& m : pc.models)
            for (std::size_t i = 0; i < m.samples.size(); ++i)
                for (std::size_t t = 0; t < m.samples.frames(); ++t)
                    grow(m.samples.samples.at(i, 0, t), m.samples.samples.at(i, 1, t));

        Canvas cv(640, 640);
        cv.set_view(x0 - 2, x1 + 2, y0 - 2, y1 + 2);
        for (std::size_t n = 0; n < w.n_agents(); ++n) {
            if (!w.mask[n] || n == w.ego_index) continue;
            const Rgb c = n == w.lead_index ? plot_colors::kLead : plot_colors::kOther;
            const auto poly = agent_poly(n);
            cv.polyline(poly, c);
            cv.dot(poly.back().first, poly.back().second, 3, c);
        }
        for (std::size_t k = 0; k < pc.models.size(); ++k) {
            const auto& m = pc.models[k];
            const Rgb c = plot_colors::kModels[k % plot_colors::kModels.size()];
            for (std::size_t i = 0; i < m.samples.size(); ++i) {
                Poly p{{0.0, 0.0}};
                for (std::size_t t = 0; t < m.samples.frames(); ++t)
                    p.emplace_back(m.samples.samples.at(i, 0, t), m.samples.samples.at(i, 1, t));
                cv.polyline(p, c);
            }
            cv.fill_rect(10, 10 + 14 * int(k), 20, 20 + 14 * int(k), c);
        }
        cv.polyline(truth, plot_colors::kTruth);
        cv.polyline(agent_poly(w.ego_index), plot_colors::kObserved);
        cv.dot(0.0, 0.0, 4, plot_colors::kObserved);

        const auto path = out_dir / (pc.name + "_h" + std::to_string(horizon_s) + ".png");
        cv.write_png(path);
        written.push_back(path);
    }
    return written;
}

/// Side-by-side bar chart of the lead (blue) and other (grey) histograms.
inline void plot_histogram(const ContributionHistogram& h, const std::filesystem::path& path) {
    Canvas cv(640, 320);
    const std::size_t peak = std::max<std::size_t>(
        1, std::max(*std::max_element(h.lead.begin(), h.lead.end()), *std::max_element(h.other.begin(), h.other.end())));
    const int bw = 600 / int(kHistogramBins);
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
        const int x = 20 + int(b) * bw;
        const int hl = int(280.0 * double(h.lead[b]) / double(peak));
        const int ho = int(280.0 * double(h.other[b]) / double(peak));
        cv.fill_rect(x + 2, 300 - hl, x + bw / 2, 300, plot_colors::kLead);
        cv.fill_rect(x + bw / 2, 300 - ho, x + bw - 2, 300, plot_colors::kOther);
    }
    cv.fill_rect(20, 300, 620, 301, plot_colors::kObserved);
    cv.write_png(path);
}

/// Line chart of the attention (red) and ego embedding (black) magnitudes.
inline void plot_curves(const MagnitudeCurves& c, const std::filesystem::path& path) {
    Canvas cv(640, 320);
    double top = 1e-9;
    for (double v : c.attn) top = std::max(top, v);
    for (double v : c.ego) top = std::max(top, v);
    cv.set_view(0.0, double(std::max<std::size_t>(1, c.attn.size() - 1)), 0.0, top);
    std::vector<std::pair<double, double>> a, e;
    for (std::size_t t = 0; t < c.attn.size(); ++t) {
        a.emplace_back(double(t), c.attn[t]);
        e.emplace_back(double(t), c.ego[t]);
    }
    cv.polyline(a, plot_colors::kModels[0]);
    cv.polyline(e, plot_colors::kObserved);
    cv.write_png(path);
}

/// Histogram and curve values as plain text, one row per bin or step.
inline void save_fusion_summary(const ContributionHistogram& h, const MagnitudeCurves& c,
                                const std::filesystem::path& dir) {
    using io_detail::format_double;
    std::ofstream hist(dir / "contribution_histogram.csv");
    hist << "#bin_low,bin_high,lead,other\n";
    for (std::size_t b = 0; b < kHistogramBins; ++b)
        hist << format_double(double(b) / kHistogramBins) << "," << format_double(double(b + 1) / kHistogramBins)
             << "," << h.lead[b] << "," << h.other[b] << "\n";
    hist << "#lead_mean=" << format_double(h.lead_mean) << "\n#other_mean=" << format_double(h.other_mean) << "\n";
    std::ofstream curve(dir / "magnitude_curve.csv");
    curve << "#step,attn_norm,ego_embed_norm\n";
    for (std::size_t t = 0; t < c.attn.size(); ++t)
        curve << t << "," << format_double(c.attn[t]) << "," << format_double(c.ego[t]) << "\n";
    if (!hist || !curve) throw DatasetWriteError("cannot write fusion summary in " + dir.string());
}

}  // namespace followme
