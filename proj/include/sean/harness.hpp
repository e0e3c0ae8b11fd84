#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sean/common.hpp"
#include "sean/config.hpp"
#include "sean/estimator.hpp"
#include "sean/event_io.hpp"
#include "sean/metrics.hpp"
#include "sean/policy.hpp"
#include "sean/rewards.hpp"
#include "sean/simworld.hpp"
#include "sean/snn.hpp"

namespace sean {

// ---------------------------------------------------------------------------
// Experiment configuration, resolved from the flat key-value file.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    // scene
    int landmark_count = 56;
    double scene_x0 = 0.0, scene_x1 = 10.0, scene_y0 = 1.5, scene_y1 = 5.5;
    double scene_h0 = 0.4, scene_h1 = 1.6;
    std::uint64_t landmark_seed = 12345;
    // trajectory: straight pass alternating fast and near-rest segments,
    // fast first so the depth map initializes under motion
    double traj_x0 = 1.0, traj_y = 0.0;
    double traj_heading = 1.5707963267948966;  // looking at the landmark field
    int traj_segments = 14;
    double slow_speed = 0.01, fast_speed = 0.45;
    double slow_length = 0.05, fast_length = 0.7;  // meters per segment
    // rig
    StereoRig rig;
    // simulation
    double sim_step = 0.001;
    double timestamp_jitter = 0.0;
    // encoder
    EncoderConfig encoder;
    std::string encoder_source = "left";  // left | right | both
    // network
    SeanConfig net;
    // trainers (shared settings for both channels)
    TrainerConfig trainer;
    int track_updates_per_decision = 1;
    int map_updates_per_decision = 4;
    // rewards
    RewardConfig rewards_track;
    RewardConfig rewards_map;
    double lambda_e_track = 0.0;  // 0 = calibrate automatically
    double lambda_e_map = 0.0;
    double balance_ratio = 0.2;   // lambda_e scaling target from calibration
    double signal_cap_ratio = 1.5;  // cap I/N_BM at this multiple of their medians
    double reward_scale_track = 0.0;  // 0 = calibrate automatically
    double reward_scale_map = 0.0;
    // estimator
    int init_threshold = 10;
    MatchConfig match;
    TrackConfig track_cfg;
    double i_max = 1e6;
    double residual_floor_px = 0.3;  // information floor; sub-quantization fits are luck
    double map_window = 0.05;      // seconds of events a mapping trigger consumes
    double track_window = 0.02;     // seconds of events a tracking trigger consumes
    bool map_use_tracked_pose = false;
    // energy / objective
    EnergyModel energy_model;
    double objective_lambda_e = 1.0, objective_lambda_p = 1.0;
    // loop
    LoopConfig loop;
    std::string track_policy = "learned";
    std::string map_policy = "learned";
    // run
    std::uint64_t seed = 1;
    double duration = 0.0;            // 0 = full trajectory span
    double calibration_duration = 0.0;  // 0 = full-length calibration pass
    double freeze_fraction = 0.0;     // 0 = train for the whole run
    double speed_bin = 1.5;           // seconds per speed-vs-MTR bin

    KeyValueConfig raw;  // holds the source key-values and the echo
};

inline ChannelPolicy parse_channel_policy(const std::string& s) {
    ChannelPolicy p;
    if (s == "learned") p.mode = ChannelPolicy::Mode::Learned;
    else if (s == "always") p.mode = ChannelPolicy::Mode::Always;
    else if (s == "never") p.mode = ChannelPolicy::Mode::Never;
    else if (s.rfind("random:", 0) == 0) {
        p.mode = ChannelPolicy::Mode::Random;
        p.random_p = std::strtod(s.c_str() + 7, nullptr);
        if (p.random_p < 0.0 || p.random_p > 1.0) {
            throw ConfigError("random policy probability must be in [0,1]: " + s);
        }
    } else {
        throw ConfigError("unknown policy `" + s + "` (learned|always|never|random:p)");
    }
    return p;
}

inline ExperimentConfig resolve_config(const KeyValueConfig& kv) {
    ExperimentConfig c;
    c.raw = kv;
    const KeyValueConfig& r = c.raw;

    c.landmark_count = static_cast<int>(r.get_int("scene.landmark_count", 56));
    c.scene_x0 = r.get_double("scene.x0", 0.0);
    c.scene_x1 = r.get_double("scene.x1", 10.0);
    c.scene_y0 = r.get_double("scene.y0", 1.5);
    c.scene_y1 = r.get_double("scene.y1", 5.5);
    c.scene_h0 = r.get_double("scene.h0", 0.4);
    c.scene_h1 = r.get_double("scene.h1", 1.6);
    c.landmark_seed = static_cast<std::uint64_t>(r.get_int("scene.landmark_seed", 12345));

    c.traj_x0 = r.get_double("traj.x0", 1.0);
    c.traj_y = r.get_double("traj.y", 0.0);
    c.traj_heading = r.get_double("traj.heading", 1.5707963267948966);
    c.traj_segments = static_cast<int>(r.get_int("traj.segments", 14));
    c.slow_speed = r.get_double("traj.slow_speed", 0.01);
    c.fast_speed = r.get_double("traj.fast_speed", 0.45);
    c.slow_length = r.get_double("traj.slow_length", 0.05);
    c.fast_length = r.get_double("traj.fast_length", 0.7);

    c.rig.baseline = r.get_double("rig.baseline", 0.2);
    c.rig.focal = r.get_double("rig.focal", 200.0);
    c.rig.image_width = static_cast<int>(r.get_int("rig.image_width", 320));
    c.rig.image_height = static_cast<int>(r.get_int("rig.image_height", 200));
    c.rig.cam_height = r.get_double("rig.cam_height", 1.0);
    c.rig.event_threshold = r.get_double("rig.event_threshold", 0.5);
    c.rig.z_min = r.get_double("rig.z_min", 0.2);

    c.sim_step = r.get_double("sim.step", 0.001);
    c.timestamp_jitter = r.get_double("sim.timestamp_jitter", 0.0);

    c.encoder.sensor_width = c.rig.image_width;
    c.encoder.sensor_height = c.rig.image_height;
    c.encoder.grid_w = static_cast<int>(r.get_int("encoder.grid_w", 32));
    c.encoder.grid_h = static_cast<int>(r.get_int("encoder.grid_h", 4));
    c.encoder.polarity_split = r.get_bool("encoder.polarity_split", false);
    c.encoder_source = r.get_string("encoder.source", "left");
    if (c.encoder_source != "left" && c.encoder_source != "right" &&
        c.encoder_source != "both") {
        throw ConfigError("encoder.source must be left|right|both");
    }

    c.net.input_size = c.encoder.input_size();
    c.net.hidden_size = static_cast<int>(r.get_int("snn.hidden", 32));
    c.net.lif.v_rest = r.get_double("snn.lif_v_rest", 0.0);
    c.net.lif.v_th = r.get_double("snn.lif_v_th", 0.5);
    c.net.lif.tau = r.get_double("snn.lif_tau", 2.0);
    c.net.li.v_rest = r.get_double("snn.li_v_rest", 0.0);
    c.net.li.tau = r.get_double("snn.li_tau", 2.0);
    c.net.surrogate_k = r.get_double("snn.surrogate_k", 10.0);
    std::string act = r.get_string("snn.activation", "identity");
    if (act == "identity") c.net.activation = Activation::Identity;
    else if (act == "sigmoid") c.net.activation = Activation::Sigmoid;
    else throw ConfigError("snn.activation must be identity|sigmoid");
    c.net.shared_row = r.get_bool("snn.shared_row", false);

    c.trainer.batch_size = static_cast<int>(r.get_int("trainer.batch_size", 32));
    c.trainer.learning_rate = r.get_double("trainer.learning_rate", 0.1);
    c.trainer.epsilon_init = r.get_double("trainer.epsilon_init", 0.8);
    c.trainer.epsilon_decay = r.get_double("trainer.epsilon_decay", 0.001);
    c.trainer.epsilon_min = r.get_double("trainer.epsilon_min", 0.01);
    c.trainer.gamma = r.get_double("trainer.gamma", 0.2);
    c.trainer.target_sync_interval = static_cast<int>(r.get_int("trainer.target_sync", 50));
    c.trainer.replay_capacity =
        static_cast<std::size_t>(r.get_int("trainer.replay_capacity", 2000));
    c.trainer.grad_clip_norm = r.get_double("trainer.grad_clip", 1.0);
    c.track_updates_per_decision =
        static_cast<int>(r.get_int("trainer.track_updates_per_decision", 1));
    c.map_updates_per_decision =
        static_cast<int>(r.get_int("trainer.map_updates_per_decision", 4));

    c.rewards_track.alpha = c.rewards_map.alpha = r.get_double("rewards.alpha", 5.0);
    c.rewards_track.gamma_map = c.rewards_map.gamma_map = r.get_double("rewards.gamma_map", 0.5);
    c.rewards_track.gamma_track = c.rewards_map.gamma_track =
        r.get_double("rewards.gamma_track", 0.5);
    c.rewards_track.r_idle_map = c.rewards_map.r_idle_map = r.get_double("rewards.r_idle_map", 0.0);
    c.rewards_track.r_idle_track = c.rewards_map.r_idle_track =
        r.get_double("rewards.r_idle_track", 0.0);
    c.rewards_track.n_e_interval = c.rewards_map.n_e_interval =
        r.get_double("rewards.n_e_interval", 0.030);
    c.rewards_track.compound_idle_decay = c.rewards_map.compound_idle_decay =
        r.get_bool("rewards.compound_idle_decay", false);
    c.lambda_e_track = r.get_double("rewards.lambda_e_track", 0.0);
    c.lambda_e_map = r.get_double("rewards.lambda_e_map", 0.0);
    c.balance_ratio = r.get_double("rewards.balance_ratio", 0.2);
    c.signal_cap_ratio = r.get_double("rewards.signal_cap_ratio", 1.5);
    c.reward_scale_track = r.get_double("rewards.reward_scale_track", 0.0);
    c.reward_scale_map = r.get_double("rewards.reward_scale_map", 0.0);
    // lambda placeholders keep validate() happy before calibration fills them
    c.rewards_track.lambda_e = c.lambda_e_track > 0.0 ? c.lambda_e_track : 1.0;
    c.rewards_map.lambda_e = c.lambda_e_map > 0.0 ? c.lambda_e_map : 1.0;
    c.rewards_track.validate();
    c.rewards_map.validate();

    c.init_threshold = static_cast<int>(r.get_int("estimator.init_threshold", 10));
    c.match.disparity_min = r.get_double("estimator.disparity_min", 6.0);
    c.match.disparity_max = r.get_double("estimator.disparity_max", 45.0);
    c.match.row_tolerance = r.get_double("estimator.row_tolerance", 1.5);
    c.match.pair_max_dt = r.get_double("estimator.pair_max_dt", 0.012);
    c.match.confirm_baseline = r.get_double("estimator.confirm_baseline", 0.12);
    c.match.fusion_distance = r.get_double("estimator.fusion_distance", 0.25);
    c.track_cfg.gate_px = r.get_double("estimator.gate_px", 5.0);
    c.track_cfg.row_gate_px = r.get_double("estimator.row_gate_px", 3.0);
    c.track_cfg.max_iterations = static_cast<int>(r.get_int("estimator.max_iterations", 10));
    c.track_cfg.min_measurements = static_cast<int>(r.get_int("estimator.min_measurements", 5));
    c.track_cfg.min_fusion_count = static_cast<int>(r.get_int("estimator.min_fusion_count", 2));
    c.track_cfg.reassociation_rounds =
        static_cast<int>(r.get_int("estimator.reassociation_rounds", 3));
    c.i_max = r.get_double("estimator.i_max", 1e6);
    c.residual_floor_px = r.get_double("estimator.residual_floor_px", 0.3);
    c.map_window = r.get_double("estimator.map_window", 0.05);
    c.track_window = r.get_double("estimator.track_window", 0.02);
    c.map_use_tracked_pose = r.get_bool("estimator.map_use_tracked_pose", false);

    c.energy_model.e_track = r.get_double("energy.e_track_mops", 1800.0);
    c.energy_model.e_map = r.get_double("energy.e_map_mops", 2600.0);
    c.energy_model.validate();
    c.objective_lambda_e = r.get_double("objective.lambda_e", 1.0);
    c.objective_lambda_p = r.get_double("objective.lambda_p", 1.0);

    c.loop.track_period_steps = static_cast<int>(r.get_int("loop.track_period", 10));
    c.loop.map_period_steps = static_cast<int>(r.get_int("loop.map_period", 50));
    c.loop.window_cap = static_cast<int>(r.get_int("loop.window_cap", 32));
    c.track_policy = r.get_string("run.track_policy", "learned");
    c.map_policy = r.get_string("run.map_policy", "learned");
    parse_channel_policy(c.track_policy);
    parse_channel_policy(c.map_policy);

    c.seed = static_cast<std::uint64_t>(r.get_int("run.seed", 1));
    c.duration = r.get_double("run.duration", 0.0);
    c.calibration_duration = r.get_double("run.calibration_duration", 0.0);
    c.freeze_fraction = r.get_double("run.freeze_fraction", 0.0);
    c.speed_bin = r.get_double("run.speed_bin", 1.5);
    return c;
}

inline ExperimentConfig default_config() { return resolve_config(KeyValueConfig()); }

// ---------------------------------------------------------------------------
// Scene construction and event synthesis.
// ---------------------------------------------------------------------------

struct Scene {
    StereoRig rig;
    Trajectory trajectory;
    std::vector<Landmark> landmarks;
};

inline Scene build_scene(const ExperimentConfig& cfg) {
    Scene scene;
    scene.rig = cfg.rig;
    scene.landmarks =
        make_uniform_landmarks(cfg.landmark_count, cfg.scene_x0, cfg.scene_x1, cfg.scene_y0,
                               cfg.scene_y1, cfg.landmark_seed, cfg.scene_h0, cfg.scene_h1);
    if (cfg.traj_segments < 1) throw ConfigError("traj.segments must be >= 1");
    std::vector<std::pair<double, double>> waypoints;
    std::vector<double> speeds;
    double x = cfg.traj_x0;
    waypoints.emplace_back(x, cfg.traj_y);
    for (int i = 0; i < cfg.traj_segments; ++i) {
        bool fast = i % 2 == 0;
        x += fast ? cfg.fast_length : cfg.slow_length;
        waypoints.emplace_back(x, cfg.traj_y);
        speeds.push_back(fast ? cfg.fast_speed : cfg.slow_speed);
    }
    scene.trajectory = make_waypoint_trajectory(waypoints, speeds, cfg.traj_heading);
    return scene;
}

struct EventData {
    std::vector<Event> left;
    std::vector<Event> right;
    std::string hash;
};

inline EventData synthesize_scene_events(const Scene& scene, const ExperimentConfig& cfg,
                                         double duration) {
    SynthesisOptions opt;
    opt.step = cfg.sim_step;
    opt.timestamp_jitter = cfg.timestamp_jitter;
    opt.jitter_seed = cfg.landmark_seed ^ 0xABCDEFull;
    EventData data;
    auto streams = synthesize_events(scene.rig, scene.trajectory, scene.landmarks, 0.0, duration,
                                     opt);
    data.left = std::move(streams.first);
    data.right = std::move(streams.second);
    Fnv1a h;
    for (const auto* stream : {&data.left, &data.right}) {
        for (const Event& e : *stream) {
            h.update(&e.t, sizeof e.t);
            h.update(&e.x, sizeof e.x);
            h.update(&e.y, sizeof e.y);
            h.update(&e.p, sizeof e.p);
        }
    }
    data.hash = h.hex();
    return data;
}

inline std::vector<SpikeFrame> encode_input_frames(const EventData& data,
                                                   const ExperimentConfig& cfg, double duration) {
    SpikeEncoder enc(cfg.encoder);
    if (cfg.encoder_source == "left") {
        return encode_stream(data.left, enc, 0.0, duration, 0.001);
    }
    if (cfg.encoder_source == "right") {
        return encode_stream(data.right, enc, 0.0, duration, 0.001);
    }
    std::vector<Event> merged;
    merged.reserve(data.left.size() + data.right.size());
    merged.insert(merged.end(), data.left.begin(), data.left.end());
    merged.insert(merged.end(), data.right.begin(), data.right.end());
    std::stable_sort(merged.begin(), merged.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    return encode_stream(merged, enc, 0.0, duration, 0.001);
}

// ---------------------------------------------------------------------------
// Reward source backed by the toy estimator.
// ---------------------------------------------------------------------------

class ToyRewardSource : public RewardSource {
public:
    ToyRewardSource(const Scene& scene, const EventData& events, const ExperimentConfig& cfg,
                    double lambda_e_track, double lambda_e_map, double info_cap = 0.0,
                    double n_bm_cap = 0.0)
        : scene_(scene), events_(events), cfg_(cfg), info_cap_(info_cap), n_bm_cap_(n_bm_cap) {
        rc_track_ = cfg.rewards_track;
        rc_track_.lambda_e = lambda_e_track;
        rc_map_ = cfg.rewards_map;
        rc_map_.lambda_e = lambda_e_map;
        map_state_.init_threshold = cfg.init_threshold;
        est_pose_ = sample_pose(scene.trajectory, 0.0);
        est_pose_t_ = 0.0;
    }

    // --- RewardSource ---

    double map_reward(double t, int action) override {
        double n_e = event_activity(t);
        if (action == 0) {
            if (!map_state_.initialized) return reward_init(0.0, 0.0, 0, rc_map_);
            return reward_map(0.0, ledger_, n_e, 0, rc_map_, t);
        }
        EventWindow lw = window_events(events_.left, t, cfg_.map_window);
        EventWindow rw = window_events(events_.right, t, cfg_.map_window);
        bool was_initialized = map_state_.initialized;
        PoseSampler pose_at = [this](double ts) { return pose_for_mapping(ts); };
        MapUpdateResult res = map_update(map_state_, lw, rw, pose_at, scene_.rig, cfg_.match);
        if (calibrating_ && map_state_.initialized && res.n_fused + res.n_new > 0) {
            calib_n_bm_.push_back(res.n_fused);
            calib_n_e_map_.push_back(n_e);
        }
        if (!was_initialized) {
            double now = static_cast<double>(map_state_.total_new);
            double r = reward_init(now, n_sgm_prev_, 1, rc_map_);
            n_sgm_prev_ = now;
            return r;
        }
        bool valid = res.n_fused + res.n_new > 0;
        double n_bm = res.n_fused;
        if (n_bm_cap_ > 0.0) n_bm = std::min(n_bm, n_bm_cap_);
        return reward_map(n_bm, ledger_, n_e, 1, rc_map_, t, valid);
    }

    double track_reward(double t, int action) override {
        double n_e = event_activity(t);
        double reward = 0.0;
        if (action == 0) {
            reward = reward_track(0.0, ledger_, n_e, 0, rc_track_, t);
        } else if (!map_state_.initialized) {
            reward = reward_track(0.0, ledger_, n_e, 1, rc_track_, t, /*valid=*/false);
        } else {
            EventWindow w = window_events(events_.left, t, cfg_.track_window);
            TrackConfig tc = cfg_.track_cfg;
            tc.vx = vel_x_;
            tc.vy = vel_y_;
            tc.vtheta = vel_theta_;
            // constant-velocity prediction carries the pose across the gap
            // since the last adopted solve
            double gap = t - est_pose_t_;
            PoseSE2 pred = est_pose_;
            if (gap > 0.0 && gap <= 0.3) {
                pred = PoseSE2(est_pose_.x + vel_x_ * gap, est_pose_.y + vel_y_ * gap,
                               est_pose_.theta + vel_theta_ * gap);
            }
            bool valid = true;
            double info = 0.0;
            int dbg_status = 0;
            int dbg_m = 0;
            double dbg_jump = 0.0;
            double dbg_res_rms = 0.0;
            auto solve_rms = [](const TrackResult& res) {
                return res.residuals.size() > 0
                           ? std::sqrt(res.residuals.squaredNorm() /
                                       static_cast<double>(res.residuals.size()))
                           : 0.0;
            };
            auto attempt = [&](const TrackConfig& config, double scale) {
                TrackResult res = track(map_state_, w, pred, scene_.rig, config);
                double rms = solve_rms(res);
                if (rms > 1.0) {
                    // residuals far above the quantization floor: the solve is
                    // likely locked onto a shifted association; re-register by
                    // scanning the camera-lateral offset and keep the best fit
                    TrackResult best = res;
                    double best_rms = rms;
                    for (double off = -0.45; off <= 0.45 + 1e-9; off += 0.03) {
                        if (std::abs(off) < 1e-9) continue;
                        PoseSE2 shifted(pred.x - std::sin(pred.theta) * off,
                                        pred.y + std::cos(pred.theta) * off, pred.theta);
                        try {
                            TrackResult cand = track(map_state_, w, shifted, scene_.rig, config);
                            double cand_rms = solve_rms(cand);
                            if (static_cast<int>(cand.residuals.size()) >=
                                    static_cast<int>(best.residuals.size()) &&
                                cand_rms < 0.8 * best_rms) {
                                best = cand;
                                best_rms = cand_rms;
                            }
                        } catch (const RangeError&) {
                        }
                    }
                    res = best;
                }
                dbg_m = static_cast<int>(res.residuals.size()) / 2;
                auto [fwd, lat] = pred.to_local(res.pose.x, res.pose.y);
                double turn = std::abs(normalize_angle(res.pose.theta - pred.theta));
                dbg_jump = std::hypot(res.pose.x - pred.x, res.pose.y - pred.y);
                double allow_fwd = 0.06 * scale, allow_lat = 0.1 * scale;
                if (solve_rms(res) < 0.9) {
                    // clean re-registration may legitimately move far
                    allow_fwd = std::max(allow_fwd, 0.2);
                    allow_lat = std::max(allow_lat, 0.5);
                }
                if (std::abs(fwd) > allow_fwd || std::abs(lat) > allow_lat || turn > 0.06) {
                    dbg_status = 2;
                    return false;
                }
                info = bounded_info(res);
                dbg_res_rms = solve_rms(res);
                adopt_pose(res.pose, t);
                return true;
            };
            try {
                valid = attempt(tc, 1.0);
            } catch (const RangeError&) {
                valid = false;  // empty or under-constrained window; pose holds
                dbg_status = 1;
            }
            if (!valid && static_cast<int>(w.events.size()) >= 3 * tc.min_measurements) {
                // rich window but association starved or rejected: the pose has
                // likely drifted beyond the gate; retry with a wide net
                TrackConfig wide = tc;
                wide.gate_px = 3.0 * tc.gate_px;
                wide.row_gate_px = 2.0 * tc.row_gate_px;
                wide.prior_sigma_lateral = 3.0 * tc.prior_sigma_lateral;
                wide.prior_sigma_theta = 2.0 * tc.prior_sigma_theta;
                wide.min_measurements = 2 * tc.min_measurements;
                try {
                    valid = attempt(wide, 3.0);
                    if (valid) dbg_status = 3;
                } catch (const RangeError&) {
                    valid = false;
                }
                if (!valid) {
                    // full relocalization: scan the camera-lateral offset for
                    // any pose whose solve reaches the quantization floor
                    TrackResult best;
                    double best_rms = 0.9;
                    for (double off = -0.6; off <= 0.6 + 1e-9; off += 0.03) {
                        PoseSE2 shifted(pred.x - std::sin(pred.theta) * off,
                                        pred.y + std::cos(pred.theta) * off, pred.theta);
                        try {
                            TrackResult cand = track(map_state_, w, shifted, scene_.rig, wide);
                            double rms = solve_rms(cand);
                            if (static_cast<int>(cand.residuals.size()) / 2 >=
                                    2 * tc.min_measurements &&
                                rms < best_rms) {
                                best = cand;
                                best_rms = rms;
                            }
                        } catch (const RangeError&) {
                        }
                    }
                    if (best.residuals.size() > 0) {
                        info = bounded_info(best);
                        dbg_m = static_cast<int>(best.residuals.size()) / 2;
                        dbg_res_rms = best_rms;
                        adopt_pose(best.pose, t);
                        valid = true;
                        dbg_status = 3;
                    }
                }
            }
            if (!valid) {
                // wrong velocity must not persist through dead stretches
                vel_x_ *= 0.8;
                vel_y_ *= 0.8;
                vel_theta_ *= 0.8;
            }
            if (collect_debug) {
                debug_track.push_back(
                    TrackDebugRecord{t, valid ? dbg_status : std::max(dbg_status, 1), dbg_m,
                                     info, dbg_jump, dbg_res_rms, est_pose_});
            }
            if (calibrating_ && valid) {
                calib_i_track_.push_back(info);
                calib_n_e_track_.push_back(n_e);
            }
            reward = reward_track(info, ledger_, n_e, 1, rc_track_, t, valid);
        }
        est_trajectory_.emplace_back(t, est_pose_);
        return reward;
    }

    // --- estimator state and collected series ---

    const DepthMapState& map_state() const { return map_state_; }
    const std::vector<TimedPose>& estimated_trajectory() const { return est_trajectory_; }
    const RewardLedger& ledger() const { return ledger_; }

    void set_calibrating(bool on) { calibrating_ = on; }

    // optional per-decision introspection for tuning and tests
    struct TrackDebugRecord {
        double t;
        int status;  // 0 valid, 1 under-constrained, 2 rejected, 3 recovered, 4 pre-init
        int measurements;
        double info;
        double pose_err_hint;  // distance from prediction, meters
        double residual_rms = 0.0;
        PoseSE2 pose;
    };
    bool collect_debug = false;
    std::vector<TrackDebugRecord> debug_track;
    const std::vector<double>& calib_n_bm() const { return calib_n_bm_; }
    const std::vector<double>& calib_i_track() const { return calib_i_track_; }
    const std::vector<double>& calib_n_e_map() const { return calib_n_e_map_; }
    const std::vector<double>& calib_n_e_track() const { return calib_n_e_track_; }

private:
    // trace(J^T J) / sum(res^2) with a per-measurement residual floor; the
    // event quantization puts a physical floor under honest residuals, so
    // luckier fits do not explode the information value
    double bounded_info(const TrackResult& res) const {
        double n = static_cast<double>(res.residuals.size());
        double floor_ss = n * cfg_.residual_floor_px * cfg_.residual_floor_px;
        double ss = std::max(res.residuals.squaredNorm(), floor_ss);
        if (ss <= 0.0) return cfg_.i_max;
        double info = std::min(res.jacobian.squaredNorm() / ss, cfg_.i_max);
        if (info_cap_ > 0.0) info = std::min(info, info_cap_);
        return info;
    }

    double event_activity(double t) const {
        double n = 0.0;
        for (const auto* stream : {&events_.left, &events_.right}) {
            auto lo = std::lower_bound(stream->begin(), stream->end(), t - rc_track_.n_e_interval,
                                       [](const Event& e, double v) { return e.t < v; });
            auto hi = std::upper_bound(stream->begin(), stream->end(), t,
                                       [](double v, const Event& e) { return v < e.t; });
            n += static_cast<double>(hi - lo);
        }
        return n;
    }

    PoseSE2 pose_for_mapping(double ts) const {
        if (cfg_.map_use_tracked_pose) return est_pose_;
        double t = std::min(std::max(ts, scene_.trajectory.t_begin()), scene_.trajectory.t_end());
        return sample_pose(scene_.trajectory, t);
    }

    // Pose velocity from the adopted-pose history, differenced over at least
    // 40 ms to keep the estimate out of the per-solve noise. Stale history
    // (gaps beyond 250 ms) resets the velocity to zero.
    void adopt_pose(const PoseSE2& pose, double t) {
        pose_history_.emplace_back(t, pose);
        while (pose_history_.size() > 2 && t - pose_history_.front().first > 0.25) {
            pose_history_.pop_front();
        }
        const TimedPose* ref = nullptr;
        for (const auto& entry : pose_history_) {
            if (t - entry.first >= 0.04) ref = &entry;
        }
        if (ref && t - ref->first > 1e-9) {
            double dt = t - ref->first;
            auto clamp = [](double v, double lim) { return std::max(-lim, std::min(lim, v)); };
            vel_x_ = clamp((pose.x - ref->second.x) / dt, 1.5);
            vel_y_ = clamp((pose.y - ref->second.y) / dt, 1.5);
            vel_theta_ = clamp(normalize_angle(pose.theta - ref->second.theta) / dt, 1.0);
        } else {
            vel_x_ = vel_y_ = vel_theta_ = 0.0;
        }
        est_pose_ = pose;
        est_pose_t_ = t;
    }

    const Scene& scene_;
    const EventData& events_;
    const ExperimentConfig& cfg_;
    RewardConfig rc_track_, rc_map_;

    double info_cap_ = 0.0;
    double n_bm_cap_ = 0.0;

    DepthMapState map_state_;
    RewardLedger ledger_;
    double n_sgm_prev_ = 0.0;

    PoseSE2 est_pose_;
    double est_pose_t_ = 0.0;
    std::deque<TimedPose> pose_history_;
    double vel_x_ = 0.0, vel_y_ = 0.0, vel_theta_ = 0.0;
    std::vector<TimedPose> est_trajectory_;

    bool calibrating_ = false;
    std::vector<double> calib_n_bm_, calib_i_track_, calib_n_e_map_, calib_n_e_track_;
};

// ---------------------------------------------------------------------------
// Episode runner.
// ---------------------------------------------------------------------------

struct CalibrationResult {
    double lambda_e_track = 0.0;
    double lambda_e_map = 0.0;
    double reward_scale_track = 1.0;
    double reward_scale_map = 1.0;
    double info_cap = 0.0;  // absolute caps derived from medians; 0 = none
    double n_bm_cap = 0.0;
};

// Always-trigger pass over a short prefix; medians of the raw estimator
// signals pin the lambda_e balance ratios and the trainer reward scales.
inline CalibrationResult calibrate(const Scene& scene, const EventData& events,
                                   const std::vector<SpikeFrame>& frames,
                                   const ExperimentConfig& cfg) {
    CalibrationResult out;
    double calib_t = cfg.calibration_duration > 0.0
                         ? std::min(cfg.calibration_duration,
                                    static_cast<double>(frames.size()) * 0.001)
                         : static_cast<double>(frames.size()) * 0.001;
    std::size_t n_frames = static_cast<std::size_t>(calib_t * 1000.0);
    std::vector<SpikeFrame> prefix(frames.begin(),
                                   frames.begin() + static_cast<std::ptrdiff_t>(n_frames));

    ToyRewardSource source(scene, events, cfg, 1.0, 1.0);
    source.set_calibrating(true);
    DualPolicy policy(cfg.net, cfg.trainer, cfg.trainer, cfg.seed ^ 0xCA11Bull);
    LoopConfig loop = cfg.loop;
    loop.train = false;
    loop.track_policy.mode = ChannelPolicy::Mode::Always;
    loop.map_policy.mode = ChannelPolicy::Mode::Always;
    run_decision_loop(policy, prefix, source, loop);

    double med_i = median_of(source.calib_i_track());
    double med_ne_t = median_of(source.calib_n_e_track());
    double med_bm = median_of(source.calib_n_bm());
    double med_ne_m = median_of(source.calib_n_e_map());

    out.lambda_e_track = cfg.lambda_e_track > 0.0
                             ? cfg.lambda_e_track
                             : cfg.balance_ratio * std::max(med_i, 1.0) / std::max(med_ne_t, 1.0);
    out.lambda_e_map = cfg.lambda_e_map > 0.0
                           ? cfg.lambda_e_map
                           : cfg.balance_ratio * std::max(med_bm, 1.0) / std::max(med_ne_m, 1.0);
    double med_trigger_track = med_i + out.lambda_e_track * med_ne_t;
    double med_trigger_map = med_bm + out.lambda_e_map * med_ne_m;
    out.reward_scale_track = cfg.reward_scale_track > 0.0
                                 ? cfg.reward_scale_track
                                 : 1.0 / std::max(med_trigger_track, 1e-9);
    out.reward_scale_map = cfg.reward_scale_map > 0.0 ? cfg.reward_scale_map
                                                      : 1.0 / std::max(med_trigger_map, 1e-9);
    if (cfg.signal_cap_ratio > 0.0) {
        out.info_cap = cfg.signal_cap_ratio * med_i;
        out.n_bm_cap = cfg.signal_cap_ratio * med_bm;
    }
    return out;
}

struct EpisodeMetrics {
    ApeResult ape_full;
    ApeResult ape_final_third;
    RateResult ttr;
    RateResult mtr;
    double energy_mops = 0.0;
    double objective_value = 0.0;
};

struct SpeedMtrSeries {
    std::vector<double> t_mid;
    std::vector<double> mean_speed;
    std::vector<double> mtr_hz;
    double mtr_cov = 0.0;  // coefficient of variation of the MTR series

    void to_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write speed series: " + path);
        out << "t,mean_speed,mtr_hz\n";
        for (std::size_t i = 0; i < t_mid.size(); ++i) {
            out << format_double(t_mid[i]) << ',' << format_double(mean_speed[i]) << ','
                << format_double(mtr_hz[i]) << '\n';
        }
    }
};

struct EpisodeResult {
    TriggerLog log;
    std::vector<TimedPose> est_trajectory;
    std::vector<TimedPose> gt_trajectory;
    EpisodeMetrics metrics;
    CalibrationResult calibration;
    SpeedMtrSeries speed_mtr;
    std::string stream_hash;
    double duration = 0.0;
    double wall_seconds = 0.0;
    long n_track_decisions = 0;
    long n_map_decisions = 0;
    std::map<std::string, std::string> config_echo;
    std::shared_ptr<DualPolicy> policy;  // trained networks, for checkpointing
};

// Per time-bin mapping trigger rate against the mean ground-truth speed.
inline SpeedMtrSeries emit_speed_vs_mtr(const TriggerLog& log, const Trajectory& traj,
                                        double duration, double bin, double t_min = 0.0) {
    if (bin <= 0.0) throw RangeError("speed bin must be positive");
    if (bin > duration) throw RangeError("speed bin larger than the run duration");
    TriggerLogView view = TriggerLogView::from(log);
    if (view.map.empty()) throw RangeError("no mapping decisions in the trigger log");

    SpeedMtrSeries series;
    for (double t0 = t_min; t0 + bin <= duration + 1e-9; t0 += bin) {
        double t1 = t0 + bin;
        int triggers = 0, decisions = 0;
        for (const auto& [t, a] : view.map) {
            if (t > t0 + 1e-12 && t <= t1 + 1e-12) {
                ++decisions;
                triggers += a;
            }
        }
        if (decisions == 0) continue;
        // mean speed over the bin from the trajectory generator
        int n_samples = 20;
        double speed = 0.0;
        for (int i = 0; i < n_samples; ++i) {
            double ts = t0 + (i + 0.5) * bin / n_samples;
            speed += trajectory_speed(traj, std::min(ts, traj.t_end()));
        }
        speed /= n_samples;
        series.t_mid.push_back(0.5 * (t0 + t1));
        series.mean_speed.push_back(speed);
        series.mtr_hz.push_back(static_cast<double>(triggers) / bin);
    }
    if (!series.mtr_hz.empty()) {
        double mean = std::accumulate(series.mtr_hz.begin(), series.mtr_hz.end(), 0.0) /
                      static_cast<double>(series.mtr_hz.size());
        double var = 0.0;
        for (double v : series.mtr_hz) var += (v - mean) * (v - mean);
        var /= static_cast<double>(series.mtr_hz.size());
        series.mtr_cov = mean != 0.0 ? std::sqrt(var) / mean : 0.0;
    }
    return series;
}

inline EpisodeResult run_episode(const ExperimentConfig& cfg) {
    auto wall_start = std::chrono::steady_clock::now();

    Scene scene = build_scene(cfg);
    double duration = cfg.duration > 0.0 ? cfg.duration : scene.trajectory.t_end();
    if (duration <= 0.0) throw ConfigError("run duration must be positive");
    duration = std::min(duration, scene.trajectory.t_end());

    EventData events = synthesize_scene_events(scene, cfg, duration);
    std::vector<SpikeFrame> frames = encode_input_frames(events, cfg, duration);

    ChannelPolicy track_policy = parse_channel_policy(cfg.track_policy);
    ChannelPolicy map_policy = parse_channel_policy(cfg.map_policy);
    bool any_learned = track_policy.mode == ChannelPolicy::Mode::Learned ||
                       map_policy.mode == ChannelPolicy::Mode::Learned;

    CalibrationResult calib;
    if (any_learned) {
        calib = calibrate(scene, events, frames, cfg);
    } else {
        calib.lambda_e_track = cfg.lambda_e_track > 0.0 ? cfg.lambda_e_track : 1.0;
        calib.lambda_e_map = cfg.lambda_e_map > 0.0 ? cfg.lambda_e_map : 1.0;
    }

    TrainerConfig track_trainer = cfg.trainer;
    track_trainer.reward_scale = calib.reward_scale_track;
    track_trainer.updates_per_decision = cfg.track_updates_per_decision;
    TrainerConfig map_trainer = cfg.trainer;
    map_trainer.reward_scale = calib.reward_scale_map;
    map_trainer.updates_per_decision = cfg.map_updates_per_decision;
    auto policy_ptr = std::make_shared<DualPolicy>(cfg.net, track_trainer, map_trainer, cfg.seed);
    DualPolicy& policy = *policy_ptr;

    ToyRewardSource source(scene, events, cfg, calib.lambda_e_track, calib.lambda_e_map,
                           calib.info_cap, calib.n_bm_cap);

    LoopConfig loop = cfg.loop;
    loop.track_policy = track_policy;
    loop.map_policy = map_policy;

    EpisodeResult result;
    if (cfg.freeze_fraction > 0.0 && cfg.freeze_fraction < 1.0 && any_learned) {
        long split = static_cast<long>(static_cast<double>(frames.size()) * cfg.freeze_fraction);
        split -= split % std::max(cfg.loop.track_period_steps, cfg.loop.map_period_steps);
        std::vector<SpikeFrame> head(frames.begin(), frames.begin() + split);
        std::vector<SpikeFrame> tail(frames.begin() + split, frames.end());
        loop.train = true;
        result.log = run_decision_loop(policy, head, source, loop);
        LoopConfig frozen = loop;
        frozen.train = false;
        frozen.force_greedy = true;
        frozen.t0 = static_cast<double>(split) * 0.001;
        TriggerLog tail_log = run_decision_loop(policy, tail, source, frozen);
        result.log.records.insert(result.log.records.end(), tail_log.records.begin(),
                                  tail_log.records.end());
    } else {
        result.log = run_decision_loop(policy, frames, source, loop);
    }

    result.est_trajectory = source.estimated_trajectory();
    for (const auto& [t, pose] : result.est_trajectory) {
        (void)pose;
        result.gt_trajectory.emplace_back(
            t, sample_pose(scene.trajectory, std::min(t, scene.trajectory.t_end())));
    }

    TriggerLogView view = TriggerLogView::from(result.log);
    result.n_track_decisions = static_cast<long>(view.track.size());
    result.n_map_decisions = static_cast<long>(view.map.size());
    double track_hz = 1000.0 / cfg.loop.track_period_steps;
    double map_hz = 1000.0 / cfg.loop.map_period_steps;
    result.metrics.ttr = ttr(view, track_hz);
    result.metrics.mtr = mtr(view, map_hz);
    result.metrics.energy_mops = energy(view, cfg.energy_model);
    result.metrics.ape_full = ape(result.est_trajectory, result.gt_trajectory);
    double final_third_begin = duration * 2.0 / 3.0;
    std::vector<TimedPose> est_tail, gt_tail;
    for (std::size_t i = 0; i < result.est_trajectory.size(); ++i) {
        if (result.est_trajectory[i].first >= final_third_begin) {
            est_tail.push_back(result.est_trajectory[i]);
            gt_tail.push_back(result.gt_trajectory[i]);
        }
    }
    result.metrics.ape_final_third = ape(est_tail, gt_tail);
    result.metrics.objective_value =
        objective(view, result.est_trajectory, result.gt_trajectory, cfg.energy_model,
                  cfg.objective_lambda_e, cfg.objective_lambda_p);
    result.speed_mtr = emit_speed_vs_mtr(result.log, scene.trajectory, duration, cfg.speed_bin);

    result.calibration = calib;
    result.policy = policy_ptr;
    result.stream_hash = events.hash;
    result.duration = duration;
    result.config_echo = cfg.raw.used();
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// Policy comparison on a shared scene and seed.
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string policy;
    EpisodeMetrics metrics;
    std::string stream_hash;
    std::string ape_delta, ttr_delta, mtr_delta, energy_delta;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;

    std::string to_text() const {
        std::ostringstream out;
        out << "policy        ape_rms_cm  ape_std_cm  ttr_hz      mtr_hz      energy_mops\n";
        for (const auto& r : rows) {
            char line[256];
            std::snprintf(line, sizeof(line), "%-12s  %-7.3f %s  %-7.3f  %-6.2f %s  %-6.2f %s  %.0f %s\n",
                          r.policy.c_str(), r.metrics.ape_full.rms_cm, r.ape_delta.c_str(),
                          r.metrics.ape_full.std_cm, r.metrics.ttr.rate_hz, r.ttr_delta.c_str(),
                          r.metrics.mtr.rate_hz, r.mtr_delta.c_str(), r.metrics.energy_mops,
                          r.energy_delta.c_str());
            out << line;
        }
        return out.str();
    }

    void to_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write comparison: " + path);
        out << "policy,ape_rms_cm,ape_std_cm,ttr_fraction,ttr_hz,mtr_fraction,mtr_hz,"
               "energy_mops,objective,ape_delta,ttr_delta,mtr_delta,energy_delta\n";
        for (const auto& r : rows) {
            out << r.policy << ',' << format_double(r.metrics.ape_full.rms_cm) << ','
                << format_double(r.metrics.ape_full.std_cm) << ','
                << format_double(r.metrics.ttr.fraction) << ','
                << format_double(r.metrics.ttr.rate_hz) << ','
                << format_double(r.metrics.mtr.fraction) << ','
                << format_double(r.metrics.mtr.rate_hz) << ','
                << format_double(r.metrics.energy_mops) << ','
                << format_double(r.metrics.objective_value) << ',' << r.ape_delta << ','
                << r.ttr_delta << ',' << r.mtr_delta << ',' << r.energy_delta << '\n';
        }
    }
};

// Runs each policy on the identical scene, events and seed; deltas are
// reported against the first (baseline) policy.
inline ComparisonTable compare(const ExperimentConfig& base_cfg,
                               const std::vector<std::string>& policies) {
    if (policies.size() < 2) throw ConfigError("compare needs at least two policies");
    ComparisonTable table;
    for (const auto& policy : policies) {
        ExperimentConfig cfg = base_cfg;
        cfg.track_policy = policy;
        cfg.map_policy = policy;
        EpisodeResult res = run_episode(cfg);
        ComparisonRow row;
        row.policy = policy;
        row.metrics = res.metrics;
        row.stream_hash = res.stream_hash;
        table.rows.push_back(std::move(row));
    }
    const auto& base = table.rows.front().metrics;
    for (auto& row : table.rows) {
        if (row.stream_hash != table.rows.front().stream_hash) {
            throw std::runtime_error("compare: event streams diverged between policies");
        }
        row.ape_delta = format_delta(base.ape_full.rms_cm, row.metrics.ape_full.rms_cm);
        row.ttr_delta = format_delta(base.ttr.rate_hz, row.metrics.ttr.rate_hz);
        row.mtr_delta = format_delta(base.mtr.rate_hz, row.metrics.mtr.rate_hz);
        row.energy_delta = format_delta(base.energy_mops, row.metrics.energy_mops);
    }
    return table;
}

// ---------------------------------------------------------------------------
// Trajectory CSV helpers.
// ---------------------------------------------------------------------------

inline void write_trajectory_csv(const std::string& path, const std::vector<TimedPose>& traj) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trajectory: " + path);
    out << "t,x,y,theta\n";
    for (const auto& [t, pose] : traj) {
        out << format_double(t) << ',' << format_double(pose.x) << ',' << format_double(pose.y)
            << ',' << format_double(pose.theta) << '\n';
    }
}

inline std::vector<TimedPose> read_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trajectory: " + path);
    std::vector<TimedPose> traj;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty trajectory file: " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f;
        double vals[4];
        for (double& v : vals) {
            if (!std::getline(ls, f, ',')) throw ParseError("bad trajectory row: " + line);
            v = std::strtod(f.c_str(), nullptr);
        }
        traj.emplace_back(vals[0], PoseSE2(vals[1], vals[2], vals[3]));
    }
    return traj;
}

}  // namespace sean
