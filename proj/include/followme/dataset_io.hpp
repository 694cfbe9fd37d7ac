#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "followme/core.hpp"
#include "followme/simgen.hpp"

namespace followme {

namespace io_detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Shortest round-trip representation.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s(buf);
    if (s == "-0.000000") s = "0.000000";
    return s;
}

}  // namespace io_detail

/// Writes a scene in the `#key=value` header + `frame,agent_id,class,x,y` CSV format.
inline void save_scene(const Scene& scene, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "#scene_id=" << scene.scene_id << "\n"
       << "#driver_id=" << scene.driver_id << "\n"
       << "#density=" << to_string(scene.scenario.density) << "\n"
       << "#lead_speed_mps=" << io_detail::format_double(scene.scenario.lead_speed_mps) << "\n"
       << "#operation=" << to_string(scene.scenario.operation) << "\n"
       << "#sample_rate_hz=" << io_detail::format_double(scene.sample_rate_hz) << "\n";
    for (const auto& track : scene.tracks) {
        for (std::size_t f = 0; f < track.points.size(); ++f) {
            const auto& p = track.points[f];
            os << f << ',' << track.agent_id << ',' << to_string(track.cls) << ','
               << io_detail::format_fixed6(p.x) << ',' << io_detail::format_fixed6(p.y) << '\n';
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open " + path.string() + " for writing");
    const std::string data = os.str();
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DatasetWriteError("write failed for " + path.string());
}

inline Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    const std::string where = path.string();

    std::map<std::string, std::string, std::less<>> header;
    Scene scene;
    std::map<std::string, std::size_t, std::less<>> track_of;
    std::vector<long long> last_frame;
    bool in_data = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = io_detail::trim(line);
        if (sv.empty()) continue;
        if (sv.front() == '#') {
            if (in_data) throw ParseError(where, lineno, "header line after data rows");
            const auto eq = sv.find('=');
            if (eq == std::string_view::npos) throw ParseError(where, lineno, "header line without '='");
            header[std::string(sv.substr(1, eq - 1))] = std::string(sv.substr(eq + 1));
            continue;
        }
        if (!in_data) {
            in_data = true;
            for (const char* key : {"scene_id", "driver_id", "density", "lead_speed_mps", "operation", "sample_rate_hz"})
                if (!header.count(key)) throw ParseError(where, lineno, std::string("missing header key ") + key);
            scene.scene_id = header["scene_id"];
            scene.driver_id = header["driver_id"];
            const auto dens = parse_density(header["density"]);
            const auto op = parse_operation(header["operation"]);
            if (!dens) throw ParseError(where, lineno, "bad density " + header["density"]);
            if (!op) throw ParseError(where, lineno, "bad operation " + header["operation"]);
            scene.scenario.density = *dens;
            scene.scenario.operation = *op;
            if (!io_detail::parse_double(header["lead_speed_mps"], scene.scenario.lead_speed_mps))
                throw ParseError(where, lineno, "bad lead_speed_mps");
            if (!io_detail::parse_double(header["sample_rate_hz"], scene.sample_rate_hz) || !(scene.sample_rate_hz > 0))
                throw ParseError(where, lineno, "bad sample_rate_hz");
        }
        const auto fields = io_detail::split(sv, ',');
        if (fields.size() != 5) throw ParseError(where, lineno, "expected 5 fields");
        long long frame = 0;
        double x = 0, y = 0;
        if (!io_detail::parse_int(fields[0], frame) || frame < 0) throw ParseError(where, lineno, "bad frame index");
        const auto cls = parse_agent_class(io_detail::trim(fields[2]));
        if (!cls) throw ParseError(where, lineno, "bad class");
        if (!io_detail::parse_double(fields[3], x) || !io_detail::parse_double(fields[4], y))
            throw ParseError(where, lineno, "bad coordinate");
        const std::string id(io_detail::trim(fields[1]));
        auto it = track_of.find(id);
        if (it == track_of.end()) {
            it = track_of.emplace(id, scene.tracks.size()).first;
            scene.tracks.push_back({id, *cls, {}});
            last_frame.push_back(frame - 1);
        }
        auto& track = scene.tracks[it->second];
        if (track.cls != *cls) throw ParseError(where, lineno, "agent " + id + " changes class");
        if (frame != last_frame[it->second] + 1)
            throw ParseError(where, lineno, "non-contiguous or non-monotone frames for " + id);
        last_frame[it->second] = frame;
        track.points.push_back({double(frame) / scene.sample_rate_hz, x, y});
    }
    if (!in_data) throw ParseError(where, lineno, "empty data section");
    for (std::size_t i = 0; i < scene.tracks.size(); ++i) {
        const long long first = last_frame[i] + 1 - static_cast<long long>(scene.tracks[i].points.size());
        if (first != 0 || last_frame[i] != last_frame[0])
            throw ParseError(where, lineno, "track " + scene.tracks[i].agent_id + " does not cover the common span");
    }
    try {
        validate_scene(scene);
    } catch (const MalformedScene& e) {
        throw ParseError(where, lineno, e.what());
    }
    return scene;
}

/// Linear interpolation of every track onto a `target_hz` grid starting at the
/// first timestamp.
inline Scene resample(const Scene& scene, double target_hz = 10.0) {
    if (!(target_hz > 0)) throw ConfigError("target_hz must be positive");
    validate_scene(scene);
    if (target_hz == scene.sample_rate_hz) return scene;
    const auto& ref = scene.tracks.front().points;
    const double t0 = ref.front().t;
    const double span = ref.back().t - t0;
    const auto n = static_cast<std::size_t>(std::floor(span * target_hz + 1e-9)) + 1;

    Scene out = scene;
    out.sample_rate_hz = target_hz;
    for (auto& track : out.tracks) {
        const auto& src = scene.tracks[static_cast<std::size_t>(&track - out.tracks.data())].points;
        track.points.clear();
        track.points.reserve(n);
        std::size_t j = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const double t = t0 + double(k) / target_hz;
            while (j + 2 < src.size() && src[j + 1].t <= t) ++j;
            const double w = std::clamp((t - src[j].t) / (src[j + 1].t - src[j].t), 0.0, 1.0);
            track.points.push_back({t, src[j].x + w * (src[j + 1].x - src[j].x), src[j].y + w * (src[j + 1].y - src[j].y)});
        }
    }
    return out;
}

struct WindowSample {
    ObservationWindow window;
    EgoTarget target;
};

/// Frames per prediction horizon at the scene's rate.
inline std::size_t horizon_frames(double horizon_s, double rate_hz) {
    return static_cast<std::size_t>(std::llround(horizon_s * rate_hz));
}

/// Sliding windows over one scene; a scene too short for a single window
/// yields an empty list.
inline std::vector<WindowSample> extract_windows(const Scene& scene, double horizon_s, std::size_t stride_frames,
                                                 std::size_t t_obs = kDefaultObsFrames,
                                                 std::size_t n_max = kDefaultMaxAgents) {
    if (stride_frames == 0) throw ConfigError("stride must be positive");
    if (!(horizon_s > 0)) throw ConfigError("horizon must be positive");
    const std::size_t t_pred = horizon_frames(horizon_s, scene.sample_rate_hz);
    const std::size_t frames = scene.frame_count();
    std::vector<WindowSample> out;
    if (frames < t_obs + t_pred) return out;
    for (std::size_t end = t_obs - 1; end + t_pred < frames; end += stride_frames) {
        auto [w, gt] = normalize_window(scene, end, t_pred, n_max, t_obs);
        out.push_back({std::move(w), std::move(gt)});
    }
    return out;
}

struct SplitSpec {
    std::vector<std::string> train_driver_ids;
    std::vector<std::string> val_driver_ids;
    std::vector<std::string> test_driver_ids;
};

/// Deterministic driver-level partition: train = floor(n*r0), val = floor(n*r1),
/// test gets the remainder.
inline SplitSpec split_by_driver(std::vector<std::string> driver_ids, std::array<double, 3> ratios = {0.7, 0.1, 0.2},
                                 std::uint64_t rng_seed = 0) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    for (double r : ratios)
        if (r < 0) throw ConfigError("split ratios must be non-negative");
    std::sort(driver_ids.begin(), driver_ids.end());
    driver_ids.erase(std::unique(driver_ids.begin(), driver_ids.end()), driver_ids.end());
    if (driver_ids.size() < 3) throw ConfigError("need at least 3 drivers to split");
    auto rng = sim::make_rng(rng_seed, {0x73706c6974});
    std::shuffle(driver_ids.begin(), driver_ids.end(), rng);
    const double n = double(driver_ids.size());
    const auto n_train = static_cast<std::size_t>(std::floor(n * ratios[0] + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios[1] + 1e-9));
    SplitSpec s;
    s.train_driver_ids.assign(driver_ids.begin(), driver_ids.begin() + n_train);
    s.val_driver_ids.assign(driver_ids.begin() + n_train, driver_ids.begin() + n_train + n_val);
    s.test_driver_ids.assign(driver_ids.begin() + n_train + n_val, driver_ids.end());
    return s;
}

inline void save_split(const SplitSpec& split, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open " + path.string());
    auto line = [&](const char* key, const std::vector<std::string>& ids) {
        out << key << '=';
        for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? "," : "") << ids[i];
        out << '\n';
    };
    line("train", split.train_driver_ids);
    line("val", split.val_driver_ids);
    line("test", split.test_driver_ids);
    if (!out) throw DatasetWriteError("write failed for " + path.string());
}

inline SplitSpec load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    SplitSpec s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto sv = io_detail::trim(line);
        if (sv.empty()) continue;
        const auto eq = sv.find('=');
        if (eq == std::string_view::npos) throw ParseError(path.string(), lineno, "expected key=ids");
        const auto key = sv.substr(0, eq);
        std::vector<std::string>* dst = key == "train" ? &s.train_driver_ids
                                        : key == "val" ? &s.val_driver_ids
                                        : key == "test" ? &s.test_driver_ids
                                                        : nullptr;
        if (!dst) throw ParseError(path.string(), lineno, "unknown split key");
        const auto rest = sv.substr(eq + 1);
        if (rest.empty()) continue;
        for (auto id : io_detail::split(rest, ',')) dst->emplace_back(io_detail::trim(id));
    }
    return s;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetWriteError("cannot open " + path.string());
    out << "#path,scene_id,driver_id,density,lead_speed_mps,operation\n";
    for (const auto& e : m.entries)
        out << e.path << ',' << e.scene_id << ',' << e.driver_id << ',' << to_string(e.scenario.density) << ','
            << io_detail::format_double(e.scenario.lead_speed_mps) << ',' << to_string(e.scenario.operation) << '\n';
    if (!out) throw DatasetWriteError("write failed for " + path.string());
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto sv = io_detail::trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const auto f = io_detail::split(sv, ',');
        if (f.size() != 6) throw ParseError(path.string(), lineno, "expected 6 manifest columns");
        ManifestEntry e{std::string(f[0]), std::string(f[1]), std::string(f[2]), {}};
        const auto d = parse_density(f[3]);
        const auto op = parse_operation(f[5]);
        if (!d || !op || !io_detail::parse_double(f[4], e.scenario.lead_speed_mps))
            throw ParseError(path.string(), lineno, "bad scenario columns");
        e.scenario.density = *d;
        e.scenario.operation = *op;
        m.entries.push_back(std::move(e));
    }
    return m;
}

/// Writes n_drivers x 12 scenes under `out_dir/scenes/` plus `out_dir/manifest.txt`.
inline Manifest generate_dataset(std::size_t n_drivers, const std::filesystem::path& out_dir, std::uint64_t rng_seed,
                                 double rate_hz = 60.0) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "scenes", ec);
    if (ec) throw DatasetWriteError("cannot create " + (out_dir / "scenes").string() + ": " + ec.message());
    const auto specs = all_scenarios();
    Manifest manifest;
    for (std::size_t d = 0; d < n_drivers; ++d) {
        const DriverParams driver = sample_driver(rng_seed, d);
        char did[32];
        std::snprintf(did, sizeof did, "d%02zu", d);
        for (std::size_t s = 0; s < specs.size(); ++s) {
            char sid[64];
            std::snprintf(sid, sizeof sid, "%.31s_s%02zu", did, s);
            const std::uint64_t scene_seed = sim::make_rng(rng_seed, {0x7363656e65, d, s})();
            const Scene scene = simulate_scene(specs[s], driver, scene_seed, sid, did, rate_hz);
            const std::string rel = std::string("scenes/") + sid + ".csv";
            save_scene(scene, out_dir / rel);
            manifest.entries.push_back({rel, sid, did, specs[s]});
        }
    }
    save_manifest(manifest, out_dir / "manifest.txt");
    return manifest;
}

}  // namespace followme
