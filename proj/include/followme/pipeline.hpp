#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "followme/dataset_io.hpp"
#include "followme/model.hpp"
#include "followme/training.hpp"

namespace followme {

// ---- flat key=value configuration -------------------------------------------

/// Reads `key=value` lines; blank lines and lines starting with '#' are skipped.
inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto sv = io_detail::trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const auto eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key=value");
        kv[std::string(io_detail::trim(sv.substr(0, eq)))] = std::string(io_detail::trim(sv.substr(eq + 1)));
    }
    return kv;
}

/// Everything a config file can set.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::size_t n_drivers = 32;
    double sim_rate_hz = 60.0;
    double horizon_s = 3.0;
    std::size_t stride = 10;
    std::array<double, 3> split{0.7, 0.1, 0.2};
};

inline bool apply_train_key(TrainConfig& c, const std::string& key, const std::string& value) {
    try {
        auto u = [&] { return static_cast<std::size_t>(std::stoull(value)); };
        if (key == "epochs") c.epochs = u();
        else if (key == "lr") c.lr = std::stod(value);
        else if (key == "lr_decay") c.lr_decay = std::stod(value);
        else if (key == "lr_step_epochs") c.lr_step_epochs = u();
        else if (key == "m_samples") c.m_samples = u();
        else if (key == "alpha") c.alpha = std::stod(value);
        else if (key == "batch_size") c.batch_size = u();
        else if (key == "grad_clip_norm") c.grad_clip_norm = std::stod(value);
        else if (key == "seed") c.seed = std::stoull(value);
        else return false;
    } catch (const std::logic_error&) {
        throw ConfigError("bad value for " + key + ": " + value);
    }
    return true;
}

inline RunConfig parse_run_config(const std::map<std::string, std::string>& kv) {
    RunConfig rc;
    for (const auto& [k, v] : kv) {
        if (ckpt_detail::apply_model_key(rc.model, k, v) || apply_train_key(rc.train, k, v)) continue;
        try {
            if (k == "n_drivers") rc.n_drivers = std::stoul(v);
            else if (k == "sim_rate_hz") rc.sim_rate_hz = std::stod(v);
            else if (k == "horizon_s") rc.horizon_s = std::stod(v);
            else if (k == "stride") rc.stride = std::stoul(v);
            else if (k == "split") {
                const auto parts = io_detail::split(v, ',');
                if (parts.size() != 3) throw ConfigError("split needs three ratios");
                for (std::size_t i = 0; i < 3; ++i)
                    if (!io_detail::parse_double(io_detail::trim(parts[i]), rc.split[i]))
                        throw ConfigError("bad split ratio " + std::string(parts[i]));
            } else {
                throw ConfigError("unknown config key " + k);
            }
        } catch (const std::logic_error&) {
            throw ConfigError("bad value for " + k + ": " + v);
        }
    }
    rc.model.validate();
    rc.train.validate();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_key_values(path)); }

// ---- prepared datasets --------------------------------------------------------
//
// A prepared directory holds resampled scenes, `manifest.txt`, `split.txt` and
// `prepare.txt` (horizon_s, rate_hz, stride).

struct PrepareOptions {
    double horizon_s = 3.0;
    double rate_hz = 10.0;
    std::size_t stride = 10;
    std::array<double, 3> split{0.7, 0.1, 0.2};
    std::uint64_t seed = 0;
};

struct PreparedSplits {
    PrepareOptions options;
    SplitSpec split;
    std::vector<WindowSample> train, val, test;
};

inline Manifest prepare_dataset(const std::filesystem::path& raw_dir, const std::filesystem::path& out_dir,
                                const PrepareOptions& opt) {
    if (opt.horizon_s != 3.0 && opt.horizon_s != 5.0 && opt.horizon_s != 8.0)
        throw ConfigError("horizon must be 3, 5 or 8 seconds");
    const Manifest raw = load_manifest(raw_dir / "manifest.txt");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "scenes", ec);
    if (ec) throw DatasetWriteError("cannot create " + out_dir.string() + ": " + ec.message());
    Manifest out;
    for (const auto& e : raw.entries) {
        const Scene scene = resample(load_scene(raw_dir / e.path), opt.rate_hz);
        const std::string rel = "scenes/" + e.scene_id + ".csv";
        save_scene(scene, out_dir / rel);
        out.entries.push_back({rel, e.scene_id, e.driver_id, e.scenario});
    }
    save_manifest(out, out_dir / "manifest.txt");
    save_split(split_by_driver(out.driver_ids(), opt.split, opt.seed), out_dir / "split.txt");
    std::ofstream p(out_dir / "prepare.txt", std::ios::binary | std::ios::trunc);
    p << "horizon_s=" << io_detail::format_double(opt.horizon_s) << "\nrate_hz=" << io_detail::format_double(opt.rate_hz)
      << "\nstride=" << opt.stride << "\n";
    if (!p) throw DatasetWriteError("cannot write prepare.txt");
    return out;
}

/// Loads a prepared directory and cuts windows for every split.
inline PreparedSplits load_prepared(const std::filesystem::path& dir, std::size_t t_obs = kDefaultObsFrames,
                                    std::size_t n_max = kDefaultMaxAgents) {
    PreparedSplits ps;
    const auto kv = read_key_values(dir / "prepare.txt");
    try {
        ps.options.horizon_s = std::stod(kv.at("horizon_s"));
        ps.options.rate_hz = std::stod(kv.at("rate_hz"));
        ps.options.stride = std::stoul(kv.at("stride"));
    } catch (const std::exception&) {
        throw ConfigError("incomplete prepare.txt in " + dir.string());
    }
    ps.split = load_split(dir / "split.txt");
    const Manifest m = load_manifest(dir / "manifest.txt");
    auto contains = [](const std::vector<std::string>& v, const std::string& s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    };
    for (const auto& e : m.entries) {
        std::vector<WindowSample>* dst = contains(ps.split.train_driver_ids, e.driver_id) ? &ps.train
                                         : contains(ps.split.val_driver_ids, e.driver_id) ? &ps.val
                                         : contains(ps.split.test_driver_ids, e.driver_id) ? &ps.test
                                                                                            : nullptr;
        if (!dst) continue;
        const Scene scene = load_scene(dir / e.path);
        for (auto& w : extract_windows(scene, ps.options.horizon_s, ps.options.stride, t_obs, n_max))
            dst->push_back(std::move(w));
    }
    return ps;
}

}  // namespace followme
