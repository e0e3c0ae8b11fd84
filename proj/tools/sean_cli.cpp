// Command line front end: run experiments, compare trigger policies,
// generate scenes, replay recorded event files, and recompute metric reports.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sean/harness.hpp"

using json = nlohmann::json;
using namespace sean;

namespace {

KeyValueConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    KeyValueConfig kv = path.empty() ? KeyValueConfig() : KeyValueConfig::from_file(path);
    for (const auto& kvpair : overrides) {
        auto eq = kvpair.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got: " + kvpair);
        }
        kv.set(kvpair.substr(0, eq), kvpair.substr(eq + 1));
    }
    return kv;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory: " + dir);
}

json metrics_json(const EpisodeMetrics& m) {
    return json{{"ape_rms_cm", m.ape_full.rms_cm},
                {"ape_std_cm", m.ape_full.std_cm},
                {"ape_final_third_rms_cm", m.ape_final_third.rms_cm},
                {"ape_final_third_std_cm", m.ape_final_third.std_cm},
                {"ttr_fraction", m.ttr.fraction},
                {"ttr_hz", m.ttr.rate_hz},
                {"mtr_fraction", m.mtr.fraction},
                {"mtr_hz", m.mtr.rate_hz},
                {"energy_mops", m.energy_mops},
                {"objective", m.objective_value}};
}

void write_metrics_csv(const std::string& path, const EpisodeMetrics& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics: " + path);
    out << "metric,value\n";
    out << "ape_rms_cm," << format_double(m.ape_full.rms_cm) << '\n';
    out << "ape_std_cm," << format_double(m.ape_full.std_cm) << '\n';
    out << "ape_final_third_rms_cm," << format_double(m.ape_final_third.rms_cm) << '\n';
    out << "ttr_fraction," << format_double(m.ttr.fraction) << '\n';
    out << "ttr_hz," << format_double(m.ttr.rate_hz) << '\n';
    out << "mtr_fraction," << format_double(m.mtr.fraction) << '\n';
    out << "mtr_hz," << format_double(m.mtr.rate_hz) << '\n';
    out << "energy_mops," << format_double(m.energy_mops) << '\n';
    out << "objective," << format_double(m.objective_value) << '\n';
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(load_config(config_path, overrides));
    EpisodeResult res = run_episode(cfg);
    ensure_dir(out_dir);
    std::filesystem::path out(out_dir);

    res.log.to_csv((out / "trigger_log.csv").string());
    write_trajectory_csv((out / "est_traj.csv").string(), res.est_trajectory);
    write_trajectory_csv((out / "gt_traj.csv").string(), res.gt_trajectory);
    res.speed_mtr.to_csv((out / "speed_vs_mtr.csv").string());
    write_metrics_csv((out / "metrics.csv").string(), res.metrics);
    if (res.policy) {
        res.policy->track.net().save((out / "track_net.ckpt").string());
        res.policy->map.net().save((out / "map_net.ckpt").string());
    }

    json report;
    report["metrics"] = metrics_json(res.metrics);
    report["duration_s"] = res.duration;
    report["n_track_decisions"] = res.n_track_decisions;
    report["n_map_decisions"] = res.n_map_decisions;
    report["stream_hash"] = res.stream_hash;
    report["wall_seconds"] = res.wall_seconds;
    report["calibration"] = json{{"lambda_e_track", res.calibration.lambda_e_track},
                                 {"lambda_e_map", res.calibration.lambda_e_map},
                                 {"reward_scale_track", res.calibration.reward_scale_track},
                                 {"reward_scale_map", res.calibration.reward_scale_map},
                                 {"info_cap", res.calibration.info_cap},
                                 {"n_bm_cap", res.calibration.n_bm_cap}};
    report["speed_mtr_cov"] = res.speed_mtr.mtr_cov;
    report["config"] = res.config_echo;
    report["files"] = json{{"trigger_log", "trigger_log.csv"},
                           {"est_traj", "est_traj.csv"},
                           {"gt_traj", "gt_traj.csv"},
                           {"speed_vs_mtr", "speed_vs_mtr.csv"},
                           {"metrics", "metrics.csv"}};
    std::ofstream rep(out / "report.json");
    rep << report.dump(2) << '\n';

    std::printf("run complete: %.1f s simulated in %.1f s wall\n", res.duration,
                res.wall_seconds);
    std::printf("  TTR %.2f Hz (%.3f)   MTR %.2f Hz (%.3f)\n", res.metrics.ttr.rate_hz,
                res.metrics.ttr.fraction, res.metrics.mtr.rate_hz, res.metrics.mtr.fraction);
    std::printf("  APE %.3f cm rms / %.3f cm std (final third %.3f cm)\n",
                res.metrics.ape_full.rms_cm, res.metrics.ape_full.std_cm,
                res.metrics.ape_final_third.rms_cm);
    std::printf("  energy %.0f MOPs   objective %.4g\n", res.metrics.energy_mops,
                res.metrics.objective_value);
    std::printf("  report: %s\n", (out / "report.json").c_str());
    return 0;
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& overrides,
                const std::string& policies_arg, const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(load_config(config_path, overrides));
    std::vector<std::string> policies;
    std::stringstream ss(policies_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) policies.push_back(item);
    }
    ComparisonTable table = compare(cfg, policies);
    std::cout << table.to_text();
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        table.to_csv((std::filesystem::path(out_dir) / "comparison.csv").string());
        std::printf("comparison written to %s/comparison.csv\n", out_dir.c_str());
    }
    return 0;
}

int cmd_gen_scene(const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(load_config(config_path, overrides));
    Scene scene = build_scene(cfg);
    double duration = cfg.duration > 0.0 ? std::min(cfg.duration, scene.trajectory.t_end())
                                         : scene.trajectory.t_end();
    EventData events = synthesize_scene_events(scene, cfg, duration);

    ensure_dir(out_dir);
    std::filesystem::path out(out_dir);
    write_event_file((out / "events_left.txt").string(), events.left);
    write_event_file((out / "events_right.txt").string(), events.right);
    std::vector<TimedPose> gt;
    for (double t = 0.0; t <= duration + 1e-9; t += 0.01) {
        gt.emplace_back(t, sample_pose(scene.trajectory, std::min(t, scene.trajectory.t_end())));
    }
    write_trajectory_csv((out / "gt_traj.csv").string(), gt);
    cfg.raw.to_file((out / "scene_config.txt").string());
    std::printf("scene: %zu + %zu events over %.2f s, hash %s\n", events.left.size(),
                events.right.size(), duration, events.hash.c_str());
    return 0;
}

// Re-runs greedy trigger decisions over a recorded event file. No estimator
// and no ground truth: rewards are unavailable, networks stay frozen.
int cmd_replay(const std::string& events_path, const std::string& config_path,
               const std::vector<std::string>& overrides, const std::string& track_ckpt,
               const std::string& map_ckpt, const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(load_config(config_path, overrides));
    auto events = parse_event_file(events_path, cfg.encoder.sensor_width,
                                   cfg.encoder.sensor_height, OrderPolicy::Sort);
    if (events.empty()) throw RangeError("event file is empty: " + events_path);
    double duration = events.back().t;
    SpikeEncoder enc(cfg.encoder);
    auto frames = encode_stream(events, enc, 0.0, duration, 0.001);

    DualPolicy policy(cfg.net, cfg.trainer, cfg.trainer, cfg.seed);
    if (!track_ckpt.empty()) policy.track.net() = SeanNetwork::load(track_ckpt);
    if (!map_ckpt.empty()) policy.map.net() = SeanNetwork::load(map_ckpt);

    class NoRewards : public RewardSource {
        double track_reward(double, int) override { return 0.0; }
        double map_reward(double, int) override { return 0.0; }
    } rewards;

    LoopConfig loop = cfg.loop;
    loop.train = false;
    loop.force_greedy = true;
    TriggerLog log = run_decision_loop(policy, frames, rewards, loop);

    TriggerLogView view = TriggerLogView::from(log);
    double track_hz = 1000.0 / cfg.loop.track_period_steps;
    double map_hz = 1000.0 / cfg.loop.map_period_steps;
    RateResult t = view.track.empty() ? RateResult{} : ttr(view, track_hz);
    RateResult m = view.map.empty() ? RateResult{} : mtr(view, map_hz);
    std::printf("replayed %zu events over %.2f s: TTR %.2f Hz (%.3f), MTR %.2f Hz (%.3f)\n",
                events.size(), duration, t.rate_hz, t.fraction, m.rate_hz, m.fraction);
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        log.to_csv((std::filesystem::path(out_dir) / "trigger_log.csv").string());
    }
    return 0;
}

int cmd_report(const std::string& log_path, const std::string& est_path,
               const std::string& gt_path, const std::string& out_dir,
               const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = resolve_config(load_config("", overrides));
    TriggerLog log = TriggerLog::from_csv(log_path);
    TriggerLogView view = TriggerLogView::from(log);

    EpisodeMetrics m;
    double track_hz = 1000.0 / cfg.loop.track_period_steps;
    double map_hz = 1000.0 / cfg.loop.map_period_steps;
    if (!view.track.empty()) m.ttr = ttr(view, track_hz);
    if (!view.map.empty()) m.mtr = mtr(view, map_hz);
    m.energy_mops = energy(view, cfg.energy_model);
    if (!est_path.empty() && !gt_path.empty()) {
        auto est = read_trajectory_csv(est_path);
        auto gt = read_trajectory_csv(gt_path);
        m.ape_full = ape(est, gt);
        double t_end = est.empty() ? 0.0 : est.back().first;
        std::vector<TimedPose> est_tail, gt_tail;
        for (std::size_t i = 0; i < est.size(); ++i) {
            if (est[i].first >= t_end * 2.0 / 3.0) {
                est_tail.push_back(est[i]);
                gt_tail.push_back(gt[std::min(i, gt.size() - 1)]);
            }
        }
        if (est_tail.size() >= 2) m.ape_final_third = ape(est_tail, gt_tail);
        m.objective_value = objective(view, est, gt, cfg.energy_model, cfg.objective_lambda_e,
                                      cfg.objective_lambda_p);
    }

    json report = metrics_json(m);
    std::cout << report.dump(2) << '\n';
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::ofstream out(std::filesystem::path(out_dir) / "metrics.json");
        out << report.dump(2) << '\n';
        write_metrics_csv((std::filesystem::path(out_dir) / "metrics.csv").string(), m);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spiking event-accumulation trigger scheduling testbed"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key-value experiment config file");
        sub->add_option("--set", overrides, "override config entries (key=value)");
    };

    auto* run = app.add_subcommand("run", "run one seeded episode and write its reports");
    add_common(run);
    run->add_option("--out", out_dir, "output directory");

    auto* cmp = app.add_subcommand("compare", "run several trigger policies on one scene");
    add_common(cmp);
    std::string policies = "always,learned";
    cmp->add_option("--policies", policies, "comma-separated policy list (first = baseline)");
    std::string cmp_out;
    cmp->add_option("--out", cmp_out, "output directory for comparison.csv");

    auto* gen = app.add_subcommand("gen-scene", "synthesize a scene's event streams and truth");
    add_common(gen);
    gen->add_option("--out", out_dir, "output directory");

    auto* rep = app.add_subcommand("replay", "re-run greedy decisions over a recorded event file");
    add_common(rep);
    std::string events_path, track_ckpt, map_ckpt, replay_out;
    rep->add_option("--events", events_path, "event text file (t x y p)")->required();
    rep->add_option("--track-checkpoint", track_ckpt, "tracking network checkpoint");
    rep->add_option("--map-checkpoint", map_ckpt, "mapping network checkpoint");
    rep->add_option("--out", replay_out, "output directory");

    auto* report = app.add_subcommand("report", "recompute metrics from recorded outputs");
    std::string log_path, est_path, gt_path, report_out;
    report->add_option("--log", log_path, "trigger log CSV")->required();
    report->add_option("--est", est_path, "estimated trajectory CSV");
    report->add_option("--gt", gt_path, "ground-truth trajectory CSV");
    report->add_option("--out", report_out, "output directory");
    report->add_option("--set", overrides, "override config entries (key=value)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, overrides, out_dir);
        if (cmp->parsed()) return cmd_compare(config_path, overrides, policies, cmp_out);
        if (gen->parsed()) return cmd_gen_scene(config_path, overrides, out_dir);
        if (rep->parsed()) {
            return cmd_replay(events_path, config_path, overrides, track_ckpt, map_ckpt,
                              replay_out);
        }
        if (report->parsed()) return cmd_report(log_path, est_path, gt_path, report_out,
                                                overrides);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const RangeError& e) {
        std::cerr << "range error: " << e.what() << '\n';
        return 4;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
