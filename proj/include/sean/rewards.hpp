#pragma once

#include <cmath>

#include "sean/common.hpp"

namespace sean {

struct RewardConfig {
    double alpha = 5.0;          // punishment for delaying initialization
    double gamma_map = 0.9;      // information decay while mapping idles
    double gamma_track = 0.9;    // information decay while tracking idles
    double lambda_e = 0.01;      // event-count balance ratio
    double r_idle_map = 0.0;
    double r_idle_track = 0.0;
    double n_e_interval = 0.030; // seconds over which N_e is counted
    bool compound_idle_decay = false;  // apply gamma^(idle count) instead of gamma

    void validate() const {
        if (alpha <= 0.0) throw ConfigError("reward alpha must be positive");
        if (gamma_map <= 0.0 || gamma_map >= 1.0 || gamma_track <= 0.0 || gamma_track >= 1.0) {
            throw ConfigError("reward decay factors must lie strictly inside (0,1)");
        }
        if (lambda_e <= 0.0) throw ConfigError("lambda_e must be positive");
        if (n_e_interval <= 0.0) throw ConfigError("n_e interval must be positive");
    }
};

// Remembers, per channel, when the last valid trigger happened and the
// information it produced. Idle rewards reference these stale values.
struct RewardLedger {
    double t_last_map = 0.0;
    double t_last_track = 0.0;
    double last_n_bm = 0.0;
    double last_i_track = 0.0;
    int idle_count_map = 0;
    int idle_count_track = 0;
};

// Initialization-phase mapping reward: the gain in initialized depth points
// on a trigger, a flat penalty on idle. Counts are cumulative.
inline double reward_init(double n_sgm_now, double n_sgm_prev, int action,
                          const RewardConfig& cfg) {
    if (action == 1) return n_sgm_now - n_sgm_prev;
    return -cfg.alpha;
}

// Mapping-update reward. On a valid trigger the ledger records the fusion
// count and the trigger time; on idle the stale count decays by gamma and
// event activity is a penalty. Triggers that produced no usable estimator
// output (valid_trigger=false) are rewarded but leave the ledger untouched.
inline double reward_map(double n_bm_now, RewardLedger& ledger, double n_e, int action,
                         const RewardConfig& cfg, double t, bool valid_trigger = true) {
    if (action == 1) {
        if (valid_trigger) {
            ledger.last_n_bm = n_bm_now;
            ledger.t_last_map = t;
            ledger.idle_count_map = 0;
        }
        return n_bm_now + cfg.lambda_e * n_e;
    }
    ledger.idle_count_map += 1;
    double decay = cfg.compound_idle_decay
                       ? std::pow(cfg.gamma_map, static_cast<double>(ledger.idle_count_map))
                       : cfg.gamma_map;
    return decay * ledger.last_n_bm - cfg.lambda_e * n_e + cfg.r_idle_map;
}

// Tracking reward on the information gain of the pose solve; same idle
// structure as reward_map.
inline double reward_track(double i_track_now, RewardLedger& ledger, double n_e, int action,
                           const RewardConfig& cfg, double t, bool valid_trigger = true) {
    if (action == 1) {
        if (valid_trigger) {
            ledger.last_i_track = i_track_now;
            ledger.t_last_track = t;
            ledger.idle_count_track = 0;
        }
        return i_track_now + cfg.lambda_e * n_e;
    }
    ledger.idle_count_track += 1;
    double decay = cfg.compound_idle_decay
                       ? std::pow(cfg.gamma_track, static_cast<double>(ledger.idle_count_track))
                       : cfg.gamma_track;
    return decay * ledger.last_i_track - cfg.lambda_e * n_e + cfg.r_idle_track;
}

}  // namespace sean
