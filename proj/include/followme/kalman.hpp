#pragma once

#include <Eigen/Dense>
#include <vector>

#include "followme/core.hpp"
#include "followme/metrics.hpp"

namespace followme {

struct KalmanConfig {
    double q = 0.5;    // white-noise acceleration intensity, m^2/s^3
    double r = 0.05;   // measurement noise std, m
    double dt = 0.1;   // 1 / model rate

    void validate() const {
        if (!(q > 0.0) || !(r > 0.0) || !(dt > 0.0)) throw ConfigError("Kalman q, r and dt must be positive");
    }
};

struct KalmanPrediction {
    Tensor mean;             // [2, T_p]
    std::vector<Sym2> cov;   // marginal position covariance per step
};

namespace kalman_detail {

struct Model {
    Eigen::Matrix4d F, Q;
    Eigen::Matrix<double, 2, 4> H;
    Eigen::Matrix2d R;

    explicit Model(const KalmanConfig& c) {
        const double dt = c.dt;
        F.setIdentity();
        F(0, 2) = F(1, 3) = dt;
        const double a = c.q * dt * dt * dt / 3.0, b = c.q * dt * dt / 2.0, d = c.q * dt;
        Q << a, 0, b, 0,  //
            0, a, 0, b,   //
            b, 0, d, 0,   //
            0, b, 0, d;
        H.setZero();
        H(0, 0) = H(1, 1) = 1.0;
        R = Eigen::Matrix2d::Identity() * c.r * c.r;
    }
};

}  // namespace kalman_detail

/// Constant-velocity Kalman filter over a sequence of 2-D measurements, then
/// open-loop propagation for `horizon` steps.
inline KalmanPrediction kalman_predict(const std::vector<Vec2>& obs, std::size_t horizon, const KalmanConfig& cfg = {}) {
    cfg.validate();
    if (obs.size() < 2) throw InsufficientObservation("Kalman filter needs at least 2 observed frames");
    const kalman_detail::Model m(cfg);
    const double r2 = cfg.r * cfg.r, dt = cfg.dt;

    // Two-point initialization: position from the second frame, velocity by differencing.
    Eigen::Vector4d x(obs[1].x, obs[1].y, (obs[1].x - obs[0].x) / dt, (obs[1].y - obs[0].y) / dt);
    Eigen::Matrix4d P = Eigen::Matrix4d::Zero();
    P(0, 0) = P(1, 1) = r2;
    P(0, 2) = P(2, 0) = P(1, 3) = P(3, 1) = r2 / dt;
    P(2, 2) = P(3, 3) = 2.0 * r2 / (dt * dt);

    for (std::size_t k = 2; k < obs.size(); ++k) {
        x = m.F * x;
        P = m.F * P * m.F.transpose() + m.Q;
        const Eigen::Vector2d z(obs[k].x, obs[k].y);
        const Eigen::Vector2d y = z - m.H * x;
        const Eigen::Matrix2d S = m.H * P * m.H.transpose() + m.R;
        const Eigen::Matrix<double, 4, 2> K = P * m.H.transpose() * S.inverse();
        x += K * y;
        P = (Eigen::Matrix4d::Identity() - K * m.H) * P;
        P = 0.5 * (P + P.transpose());
    }

    KalmanPrediction out{Tensor({2, horizon}), {}};
    out.cov.reserve(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        x = m.F * x;
        P = m.F * P * m.F.transpose() + m.Q;
        out.mean.at(0, t) = x(0);
        out.mean.at(1, t) = x(1);
        out.cov.push_back({P(0, 0), 0.5 * (P(0, 1) + P(1, 0)), P(1, 1)});
    }
    return out;
}

/// Filters the ego track of a normalized window.
inline KalmanPrediction kalman_predict(const ObservationWindow& w, std::size_t horizon, const KalmanConfig& cfg = {}) {
    std::vector<Vec2> obs;
    if (w.features.rank() == 3 && w.ego_index < w.features.dim(2))
        for (std::size_t t = 0; t < w.features.dim(1); ++t)
            obs.push_back({w.features.at(kChannelX, t, w.ego_index), w.features.at(kChannelY, t, w.ego_index)});
    return kalman_predict(obs, horizon, cfg);
}

/// Kalman baseline through the metric pipeline: the mean is the single
/// sample for ADE/FDE and the Gaussian is used directly for AMD/AMV.
inline MetricReport evaluate_kalman(const std::vector<WindowSample>& windows, int horizon_s,
                                    const KalmanConfig& cfg = {}, std::string predictor = "kalman") {
    if (windows.empty()) throw EmptySplit("no windows to evaluate");
    std::vector<PredictionSet> sets;
    std::vector<Distribution> dists;
    for (const auto& ws : windows) {
        const std::size_t T = ws.target.frames();
        auto pred = kalman_predict(ws.window, T, cfg);
        PredictionSet set{Tensor({1, 2, T})};
        std::copy_n(pred.mean.data(), 2 * T, set.samples.data());
        Distribution d;
        for (std::size_t t = 0; t < T; ++t) d.push_back(gaussian_summary({pred.mean.at(0, t), pred.mean.at(1, t)}, pred.cov[t]));
        sets.push_back(std::move(set));
        dists.push_back(std::move(d));
    }
    return summarize(std::move(predictor), horizon_s, windows, sets, dists);
}

}  // namespace followme
