#include <gtest/gtest.h>
#include <png.h>

#include <filesystem>
#include <fstream>

#include "followme/analysis.hpp"
#include "test_support.hpp"

using namespace followme;
namespace fs = std::filesystem;

namespace {

FusionTrace uniform_trace(std::vector<AgentClass> labels, std::vector<double> weight, std::vector<bool> valid,
                          std::size_t tp = 4) {
    FusionTrace tr;
    tr.weights = Tensor({2, tp, labels.size()});
    for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t t = 0; t < tp; ++t)
            for (std::size_t j = 0; j < labels.size(); ++j) tr.weights.at(p, t, j) = valid[j] ? weight[j] : 0.0;
    tr.labels = std::move(labels);
    tr.valid = std::move(valid);
    tr.attn_norm.assign(tp, 1.0);
    tr.ego_embed_norm.assign(tp, 2.0);
    tr.source.scene_id = "s";
    tr.source.driver_id = "d";
    return tr;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("followme_an_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct Decoded {
    png_uint_32 width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};

Decoded read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    Decoded d;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) return d;
    img.format = PNG_FORMAT_RGB;
    d.rgb.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, d.rgb.data(), 0, nullptr)) return {};
    d.width = img.width;
    d.height = img.height;
    return d;
}

}  // namespace

TEST(Contribution, StrengthIsMeanWeight) {
    auto tr = uniform_trace({AgentClass::Lead, AgentClass::Other}, {0.75, 0.25}, {true, true});
    tr.weights.at(1, 3, 0) = 0.35;
    EXPECT_DOUBLE_EQ(contribution_strength(tr, 0), (7 * 0.75 + 0.35) / 8.0);
    EXPECT_DOUBLE_EQ(contribution_strength(tr, 1), 0.25);
}

TEST(Contribution, BinsAreClampedAtTheEnds) {
    EXPECT_EQ(histogram_bin(0.0), 0u);
    EXPECT_EQ(histogram_bin(0.049), 0u);
    EXPECT_EQ(histogram_bin(0.05), 1u);
    EXPECT_EQ(histogram_bin(1.0), 19u);
    EXPECT_EQ(histogram_bin(-0.1), 0u);
}

TEST(Contribution, HistogramSeparatesLeadFromOthersAndSkipsPadding) {
    std::vector<FusionTrace> traces{
        uniform_trace({AgentClass::Lead, AgentClass::Other, AgentClass::Other}, {0.925, 0.125, 0.5}, {true, true, false}),
        uniform_trace({AgentClass::Lead, AgentClass::Other, AgentClass::Other}, {0.625, 0.225, 0.225}, {true, true, true})};
    const auto h = contribution_histogram(traces);
    EXPECT_EQ(h.lead_count, 2u);
    EXPECT_EQ(h.other_count, 3u);
    EXPECT_EQ(h.lead[18], 1u);
    EXPECT_EQ(h.lead[12], 1u);
    EXPECT_EQ(h.other[2], 1u);
    EXPECT_EQ(h.other[4], 2u);
    EXPECT_NEAR(h.lead_mean, 0.775, 1e-15);
    EXPECT_NEAR(h.other_mean, 0.575 / 3.0, 1e-15);
    EXPECT_EQ(h.max_lead_trace, 0u);
    EXPECT_EQ(h.min_lead_trace, 1u);
    EXPECT_THROW(contribution_histogram({}), ConfigError);
}

TEST(Contribution, NoOthersLeavesOtherHistogramEmpty) {
    const auto h = contribution_histogram({uniform_trace({AgentClass::Lead, AgentClass::Other}, {0.4, 0}, {true, false})});
    EXPECT_EQ(h.other_count, 0u);
    EXPECT_EQ(h.other_mean, 0.0);
}

TEST(MagnitudeCurve, AveragesOverTraces) {
    auto a = uniform_trace({AgentClass::Lead}, {0.5}, {true}, 3);
    auto b = a;
    b.attn_norm = {3.0, 5.0, 7.0};
    const auto c = contribution_magnitude_curve({a, b});
    EXPECT_EQ(c.attn, (std::vector<double>{2.0, 3.0, 4.0}));
    EXPECT_EQ(c.ego, (std::vector<double>{2.0, 2.0, 2.0}));
    auto short_trace = uniform_trace({AgentClass::Lead}, {0.5}, {true}, 2);
    EXPECT_THROW(contribution_magnitude_curve({a, short_trace}), ShapeError);
}

TEST(MagnitudeCurve, ModelTraceNormsMatchTheForwardPass) {
    const FollowMeModel m(ModelConfig{}, 5);
    const auto w = normalize_window(testing_support::random_scene(60, 3, 4), 20, 30).first;
    const auto tape = m.forward(w);
    const auto [pred, tr] = m.predict(w);
    for (std::size_t t = 0; t < 30; ++t) {
        EXPECT_NEAR(tr.ego_embed_norm[t], std::hypot(tape.nodes.at(0, t, 0), tape.nodes.at(1, t, 0)), 1e-12);
        EXPECT_NEAR(tr.attn_norm[t], std::hypot(pred.at(0, t) - tape.nodes.at(0, t, 0), pred.at(1, t) - tape.nodes.at(1, t, 0)),
                    1e-9);
    }
    EXPECT_EQ(tr.labels[0], AgentClass::Lead);
}

TEST(TraceFile, RoundTrip) {
    const auto dir = scratch("traces");
    const FollowMeModel m(ModelConfig{}, 6);
    std::vector<FusionTrace> traces;
    for (std::uint64_t s = 0; s < 3; ++s)
        traces.push_back(m.predict(normalize_window(testing_support::random_scene(60, s, s), 20, 30).first).second);
    save_traces(traces, dir / "t.txt");
    const auto back = load_traces(dir / "t.txt");
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].labels, traces[i].labels);
        EXPECT_EQ(back[i].valid, traces[i].valid);
        EXPECT_EQ(back[i].source.scene_id, traces[i].source.scene_id);
        EXPECT_EQ(back[i].weights, traces[i].weights);
        EXPECT_EQ(back[i].attn_norm, traces[i].attn_norm);
    }
    std::ofstream(dir / "bad.txt") << "followme-traces 2 0\n";
    EXPECT_THROW(load_traces(dir / "bad.txt"), ParseError);
}

TEST(Canvas, DrawsAndWritesDecodablePng) {
    const auto dir = scratch("canvas");
    Canvas cv(64, 32);
    cv.set_view(0, 10, 0, 10, 0);
    cv.fill_rect(0, 0, 4, 4, {255, 0, 0});
    cv.dot(5, 5, 1, {0, 0, 255});
    cv.write_png(dir / "c.png");
    const auto d = read_png(dir / "c.png");
    ASSERT_EQ(d.width, 64u);
    ASSERT_EQ(d.height, 32u);
    EXPECT_EQ(d.rgb[0], 255);
    EXPECT_EQ(d.rgb[1], 0);
    const std::size_t centre = (16 * 64 + 32) * 3;
    EXPECT_EQ(d.rgb[centre + 2], 255);
    EXPECT_EQ(d.rgb[centre], 0);
    EXPECT_THROW(cv.write_png(dir / "missing" / "x.png"), PlotWriteError);
}

TEST(Plots, PredictionHistogramAndCurveFiles) {
    const auto dir = scratch("plots");
    const FollowMeModel m(ModelConfig{}, 7);
    const auto ws = extract_windows(testing_support::random_scene(60, 2, 8), 3.0, 100);
    ASSERT_FALSE(ws.empty());
    std::vector<PlotCase> cases{{"case0", ws[0], {{"model", m.sample(ws[0].window, 5, 1)}}}};
    const auto paths = plot_predictions(cases, 3, dir);
    ASSERT_EQ(paths.size(), 1u);
    EXPECT_EQ(paths[0].filename(), "case0_h3.png");
    EXPECT_GT(read_png(paths[0]).width, 0u);

    const auto tr = uniform_trace({AgentClass::Lead, AgentClass::Other}, {0.8, 0.2}, {true, true});
    const auto h = contribution_histogram({tr});
    const auto c = contribution_magnitude_curve({tr});
    plot_histogram(h, dir / "h.png");
    plot_curves(c, dir / "c.png");
    save_fusion_summary(h, c, dir);
    EXPECT_GT(read_png(dir / "h.png").width, 0u);
    EXPECT_GT(read_png(dir / "c.png").width, 0u);
    std::ifstream csv(dir / "contribution_histogram.csv");
    std::string header, first;
    std::getline(csv, header);
    std::getline(csv, first);
    EXPECT_EQ(header, "#bin_low,bin_high,lead,other");
    EXPECT_EQ(first, "0,0.05,0,0");
    EXPECT_TRUE(fs::exists(dir / "magnitude_curve.csv"));
}
