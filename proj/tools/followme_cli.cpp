// followme: dataset generation, training, evaluation and fusion analysis.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "followme/analysis.hpp"
#include "followme/kalman.hpp"
#include "followme/pipeline.hpp"

namespace fs = std::filesystem;
using namespace followme;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("FOLLOWME_SEED")) {
        std::uint64_t v = 0;
        if (!io_detail::parse_int(std::string_view(env), v)) throw UsageError("FOLLOWME_SEED is not an integer");
        return v;
    }
    return 0;
}

std::vector<WindowSample> pick_split(const PreparedSplits& ps, const std::string& name) {
    if (name == "train") return ps.train;
    if (name == "val") return ps.val;
    if (name == "test") return ps.test;
    throw UsageError("unknown split " + name);
}

int horizon_seconds(const PreparedSplits& ps) { return static_cast<int>(std::lround(ps.options.horizon_s)); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FollowMe ego-trajectory prediction toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<std::uint64_t> seed_flag;
    std::size_t jobs = 1;
    app.add_option("--seed", seed_flag, "Seed for all randomness (falls back to FOLLOWME_SEED)");
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

    // generate
    auto* gen = app.add_subcommand("generate", "Simulate raw driving scenes");
    std::string gen_config, gen_out;
    std::optional<std::size_t> gen_drivers;
    gen->add_option("--config", gen_config, "Config file")->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--drivers", gen_drivers, "Number of drivers (overrides n_drivers)")->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed_flag, "Seed");

    // prepare
    auto* prep = app.add_subcommand("prepare", "Resample, window and split a generated dataset");
    std::string prep_data, prep_out;
    PrepareOptions popt;
    std::vector<double> prep_split;
    prep->add_option("--data", prep_data, "Raw dataset directory")->required()->check(CLI::ExistingDirectory);
    prep->add_option("--horizon", popt.horizon_s, "Prediction horizon in seconds")->check(CLI::IsMember({3, 5, 8}));
    prep->add_option("--rate", popt.rate_hz, "Model rate in Hz")->check(CLI::PositiveNumber);
    prep->add_option("--stride", popt.stride, "Window stride in frames")->check(CLI::PositiveNumber);
    prep->add_option("--split", prep_split, "Train,val,test driver ratios")->delimiter(',')->expected(3);
    prep->add_option("--out", prep_out, "Prepared dataset directory")->required();
    prep->add_option("--seed", seed_flag, "Seed");

    // train
    auto* tr = app.add_subcommand("train", "Train a model on a prepared dataset");
    std::string tr_data, tr_config, tr_out;
    bool no_fusion = false, no_triplet = false;
    std::optional<std::size_t> tr_epochs;
    tr->add_option("--data", tr_data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--config", tr_config, "Config file")->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Checkpoint path")->required();
    tr->add_flag("--no-fusion", no_fusion, "Drop the fusion block");
    tr->add_flag("--no-triplet", no_triplet, "Drop the triplet term");
    tr->add_option("--epochs", tr_epochs, "Override the epoch count")->check(CLI::PositiveNumber);
    tr->add_option("--seed", seed_flag, "Seed");
    tr->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Write a metric report");
    std::string ev_ckpt, ev_data, ev_out = "report.txt", ev_baseline = "none", ev_split = "test";
    std::size_t ev_samples = 20;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--baseline", ev_baseline, "Also report a baseline")->check(CLI::IsMember({"none", "kalman"}));
    ev->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--samples", ev_samples, "Samples per window")->check(CLI::PositiveNumber);
    ev->add_option("--out", ev_out, "Report path");
    ev->add_option("--seed", seed_flag, "Seed");
    ev->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

    // analyze-fusion
    auto* af = app.add_subcommand("analyze-fusion", "Fusion-weight histogram and magnitude curves");
    std::string af_ckpt, af_data, af_out;
    af->add_option("--ckpt", af_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    af->add_option("--data", af_data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    af->add_option("--out", af_out, "Output directory")->required();

    // plot
    auto* pl = app.add_subcommand("plot", "Top-down prediction plots, one per scenario");
    std::string pl_ckpt, pl_data, pl_out;
    pl->add_option("--ckpt", pl_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    pl->add_option("--data", pl_data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    pl->add_option("--out", pl_out, "Output directory")->required();
    pl->add_option("--seed", seed_flag, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        const std::uint64_t seed = resolve_seed(seed_flag);

        if (*gen) {
            RunConfig rc = gen_config.empty() ? RunConfig{} : load_run_config(gen_config);
            const std::size_t drivers = gen_drivers.value_or(rc.n_drivers);
            const auto m = generate_dataset(drivers, gen_out, seed, rc.sim_rate_hz);
            std::cout << "wrote " << m.entries.size() << " scenes to " << gen_out << "\n";
        } else if (*prep) {
            if (!prep_split.empty()) popt.split = {prep_split[0], prep_split[1], prep_split[2]};
            popt.seed = seed;
            const auto m = prepare_dataset(prep_data, prep_out, popt);
            std::cout << "prepared " << m.entries.size() << " scenes in " << prep_out << "\n";
        } else if (*tr) {
            RunConfig rc = tr_config.empty() ? RunConfig{} : load_run_config(tr_config);
            const auto ps = load_prepared(tr_data, rc.model.t_obs, rc.model.n_max);
            if (ps.train.empty()) throw EmptySplit("training split has no windows");
            rc.model.t_pred = ps.train.front().target.frames();
            if (no_fusion) rc.model.use_fusion = false;
            if (no_triplet) rc.model.use_triplet = false;
            if (tr_epochs) rc.train.epochs = *tr_epochs;
            rc.train.seed = seed;
            rc.train.jobs = jobs;
            const FollowMeModel init(rc.model, seed);
            const auto result = train(init, ps.train, ps.val, rc.train, [](const EpochRecord& r) {
                std::cout << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss << " val_bon_ade "
                          << r.val_bon_ade << std::endl;
            });
            result.model.save(tr_out);
            save_history(result.history, fs::path(tr_out).string() + ".history.csv");
            std::cout << "best epoch " << result.best_epoch << ", checkpoint " << tr_out << "\n";
        } else if (*ev) {
            const auto model = FollowMeModel::load(ev_ckpt);
            const auto ps = load_prepared(ev_data, model.config().t_obs, model.config().n_max);
            const auto windows = pick_split(ps, ev_split);
            std::vector<MetricReport> reports{
                evaluate_checkpoint(model, windows, horizon_seconds(ps), ev_samples, seed, jobs)};
            if (ev_baseline == "kalman") {
                KalmanConfig kc;
                kc.dt = 1.0 / ps.options.rate_hz;
                reports.push_back(evaluate_kalman(windows, horizon_seconds(ps), kc));
            }
            save_report(reports, ev_out);
            for (const auto& r : reports)
                std::cout << r.predictor << " h" << r.horizon_s << ": ade " << r.ade << " fde " << r.fde << " amd "
                          << r.amd << " amv " << r.amv << "\n";
        } else if (*af) {
            const auto model = FollowMeModel::load(af_ckpt);
            const auto ps = load_prepared(af_data, model.config().t_obs, model.config().n_max);
            if (ps.test.empty()) throw EmptySplit("test split has no windows");
            std::vector<FusionTrace> traces;
            for (const auto& w : ps.test) traces.push_back(model.predict(w.window).second);
            std::error_code ec;
            fs::create_directories(af_out, ec);
            if (ec) throw DatasetWriteError("cannot create " + af_out);
            save_traces(traces, fs::path(af_out) / "traces.txt");
            const auto hist = contribution_histogram(traces);
            const auto curves = contribution_magnitude_curve(traces);
            save_fusion_summary(hist, curves, af_out);
            plot_histogram(hist, fs::path(af_out) / "contribution_histogram.png");
            plot_curves(curves, fs::path(af_out) / "magnitude_curve.png");
            std::cout << "lead mean " << hist.lead_mean << " (" << hist.lead_count << " agents), other mean "
                      << hist.other_mean << " (" << hist.other_count << " agents)\n";
        } else if (*pl) {
            const auto model = FollowMeModel::load(pl_ckpt);
            const auto ps = load_prepared(pl_data, model.config().t_obs, model.config().n_max);
            if (ps.test.empty()) throw EmptySplit("test split has no windows");
            std::vector<PlotCase> cases;
            std::vector<std::string> seen;
            for (const auto& w : ps.test) {
                const auto& sc = w.window.source.scenario;
                const std::string name = std::string(to_string(sc.density)) + "_" +
                                         std::to_string(std::lround(sc.lead_speed_mps)) + "mps_" +
                                         std::string(to_string(sc.operation));
                if (std::find(seen.begin(), seen.end(), name) != seen.end()) continue;
                seen.push_back(name);
                KalmanConfig kc;
                kc.dt = 1.0 / ps.options.rate_hz;
                const auto k = kalman_predict(w.window, w.target.frames(), kc);
                PredictionSet ks{Tensor({1, 2, w.target.frames()})};
                std::copy_n(k.mean.data(), k.mean.size(), ks.samples.data());
                cases.push_back({name, w, {{"model", model.sample(w.window, 20, seed)}, {"kalman", ks}}});
            }
            const auto files = plot_predictions(cases, horizon_seconds(ps), pl_out);
            std::cout << "wrote " << files.size() << " plots to " << pl_out << "\n";
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
