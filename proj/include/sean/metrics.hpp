#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sean/common.hpp"
#include "sean/policy.hpp"
#include "sean/simworld.hpp"

namespace sean {

// Per-channel view of a trigger log: just the (t, action) sequences.
struct TriggerLogView {
    std::vector<std::pair<double, int>> track;
    std::vector<std::pair<double, int>> map;

    static TriggerLogView from(const TriggerLog& log) {
        TriggerLogView v;
        for (const auto& r : log.records) {
            (r.channel == Channel::Track ? v.track : v.map).emplace_back(r.t, r.action);
        }
        return v;
    }

    TriggerLogView after(double t_min) const {
        TriggerLogView v;
        for (const auto& p : track)
            if (p.first >= t_min) v.track.push_back(p);
        for (const auto& p : map)
            if (p.first >= t_min) v.map.push_back(p);
        return v;
    }
};

// Per-trigger operation counts, in millions of operations (MOPs).
struct EnergyModel {
    double e_track = 1800.0;  // MOPs per tracking trigger
    double e_map = 2600.0;    // MOPs per mapping trigger

    void validate() const {
        if (e_track <= 0.0 || e_map <= 0.0) throw ConfigError("energy costs must be positive");
    }
};

struct ApeResult {
    double rms_cm = 0.0;
    double std_cm = 0.0;
    int pairs = 0;
};

using TimedPose = std::pair<double, PoseSE2>;

// Absolute positioning error between matched pose pairs (nearest timestamps
// within match_tol). Per-pair error is the translation norm of gt^-1 * est in
// centimeters; no trajectory alignment is applied.
inline ApeResult ape(const std::vector<TimedPose>& est, const std::vector<TimedPose>& gt,
                     double match_tol = 0.005) {
    if (est.empty() || gt.empty()) throw RangeError("ape: empty trajectory");
    std::vector<double> errors;
    errors.reserve(est.size());
    std::size_t j = 0;
    for (const auto& [t, pose] : est) {
        while (j + 1 < gt.size() &&
               std::abs(gt[j + 1].first - t) <= std::abs(gt[j].first - t)) {
            ++j;
        }
        if (std::abs(gt[j].first - t) > match_tol) continue;
        PoseSE2 rel = gt[j].second.inverse().compose(pose);
        errors.push_back(std::sqrt(rel.x * rel.x + rel.y * rel.y) * 100.0);
    }
    if (errors.size() < 2) throw RangeError("ape: fewer than two matched pose pairs");
    double mean_sq = 0.0, mean = 0.0;
    for (double e : errors) {
        mean_sq += e * e;
        mean += e;
    }
    mean_sq /= static_cast<double>(errors.size());
    mean /= static_cast<double>(errors.size());
    ApeResult r;
    r.rms_cm = std::sqrt(mean_sq);
    r.std_cm = std::sqrt(std::max(0.0, mean_sq - mean * mean));
    r.pairs = static_cast<int>(errors.size());
    return r;
}

struct RateResult {
    double fraction = 0.0;
    double rate_hz = 0.0;
};

inline RateResult triggering_rate(const std::vector<std::pair<double, int>>& channel,
                                  double decision_hz) {
    if (channel.empty()) throw RangeError("triggering rate: empty decision channel");
    double sum = 0.0;
    for (const auto& p : channel) sum += p.second;
    RateResult r;
    r.fraction = sum / static_cast<double>(channel.size());
    r.rate_hz = r.fraction * decision_hz;
    return r;
}

// Tracking triggering rate: mean of the binary tracking actions, also
// reported in Hz against the decision schedule.
inline RateResult ttr(const TriggerLogView& log, double decision_hz = 100.0) {
    return triggering_rate(log.track, decision_hz);
}

// Mapping triggering rate.
inline RateResult mtr(const TriggerLogView& log, double decision_hz = 20.0) {
    return triggering_rate(log.map, decision_hz);
}

// Total operation count: sum over decisions of a_map*E_map + a_track*E_track.
inline double energy(const TriggerLogView& log, const EnergyModel& model) {
    double total = 0.0;
    for (const auto& p : log.track) total += p.second * model.e_track;
    for (const auto& p : log.map) total += p.second * model.e_map;
    return total;
}

// Scalar policy objective: weighted mean energy per decision plus weighted
// mean pose error (translation norm of gt^-1 * est, in cm).
inline double objective(const TriggerLogView& log, const std::vector<TimedPose>& est,
                        const std::vector<TimedPose>& gt, const EnergyModel& model,
                        double lambda_e, double lambda_p, double match_tol = 0.005) {
    double n_decisions = static_cast<double>(log.track.size() + log.map.size());
    double energy_term = n_decisions > 0.0 ? energy(log, model) / n_decisions : 0.0;

    double pose_term = 0.0;
    if (lambda_p != 0.0) {
        std::vector<double> errors;
        std::size_t j = 0;
        for (const auto& [t, pose] : est) {
            while (j + 1 < gt.size() &&
                   std::abs(gt[j + 1].first - t) <= std::abs(gt[j].first - t)) {
                ++j;
            }
            if (std::abs(gt[j].first - t) > match_tol) continue;
            PoseSE2 rel = gt[j].second.inverse().compose(pose);
            errors.push_back(std::sqrt(rel.x * rel.x + rel.y * rel.y) * 100.0);
        }
        if (errors.empty()) throw RangeError("objective: no matched pose pairs");
        pose_term = std::accumulate(errors.begin(), errors.end(), 0.0) /
                    static_cast<double>(errors.size());
    }
    return lambda_e * energy_term + lambda_p * pose_term;
}

// Spearman rank correlation with average ranks for ties. A series with zero
// variance has no defined ranks spread; returns 0 by convention.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DimensionError("spearman: size mismatch");
    const std::size_t n = xs.size();
    if (n < 2) return 0.0;

    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };

    std::vector<double> rx = ranks(xs), ry = ranks(ys);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if (vx == 0.0 || vy == 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

// "(↓ x%)" style delta against a baseline value, mirroring how triggering
// rate comparisons are usually tabulated.
inline std::string format_delta(double baseline, double value) {
    if (baseline == 0.0) return "(n/a)";
    double pct = (value - baseline) / baseline * 100.0;
    double mag = std::abs(pct);
    char buf[48];
    if (mag < 0.05) return "(== 0%)";
    const char* arrow = pct < 0.0 ? "\xE2\x86\x93" : "\xE2\x86\x91";  // ↓ / ↑
    if (mag < 10.0) {
        std::snprintf(buf, sizeof(buf), "(%s%.1f%%)", arrow, mag);
    } else {
        std::snprintf(buf, sizeof(buf), "(%s%.0f%%)", arrow, mag);
    }
    return std::string(buf);
}

}  // namespace sean
