#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "sean/common.hpp"
#include "sean/event_io.hpp"
#include "sean/simworld.hpp"

namespace sean {

// ---------------------------------------------------------------------------
// Depth map: fused landmark estimates from stereo event matching.
// ---------------------------------------------------------------------------

struct LandmarkEstimate {
    int id = 0;
    double x = 0.0;
    double y = 0.0;
    double h = 0.0;        // height above the datum, meters
    int fusion_count = 0;  // triangulated points fused into this landmark
    // parallax confirmation: where the rig stood at insertion, and whether a
    // later fusion happened from a sufficiently displaced position (static
    // world points keep fusing under parallax, stereo ghosts drift away)
    double born_rig_x = 0.0;
    double born_rig_y = 0.0;
    bool confirmed = false;
};

struct DepthMapState {
    std::vector<LandmarkEstimate> landmarks;
    bool initialized = false;
    int init_threshold = 10;  // landmark count that flips `initialized`
    int next_id = 0;
    long total_new = 0;  // cumulative count of inserted landmarks
};

struct MatchConfig {
    double disparity_min = 6.0;    // px
    double disparity_max = 45.0;   // px
    double row_tolerance = 1.5;    // max |row_left - row_right| of a pair, px
    double pair_max_dt = 0.012;    // max |t_left - t_right| of a stereo pair, s
    double fusion_distance = 0.25; // meters; covers the disparity quantization noise
    double confirm_baseline = 0.12; // rig displacement that confirms a landmark, meters
};

struct MapUpdateResult {
    int n_new = 0;
    int n_fused = 0;
};

using PoseSampler = std::function<PoseSE2(double)>;

// Stereo depth update from a pair of event windows. Left and right events
// pair when they lie on the same image row (the rectified epipolar
// constraint), share polarity, fall inside the disparity gate and are close
// in time. Each triangulated point within fusion_distance of an existing
// landmark updates it (n_fused); points in the ambiguous ring around a
// landmark are dropped; clear outliers become new landmarks (n_new).
// `pose_at` supplies the camera pose at a pair's timestamp.
inline MapUpdateResult map_update(DepthMapState& state, const EventWindow& left,
                                  const EventWindow& right, const PoseSampler& pose_at,
                                  const StereoRig& rig, const MatchConfig& mc = {}) {
    MapUpdateResult res;
    auto refresh_initialized = [&] {
        if (!state.initialized &&
            static_cast<int>(state.landmarks.size()) >= state.init_threshold) {
            state.initialized = true;
        }
    };
    if (left.events.empty() || right.events.empty()) {
        refresh_initialized();
        return res;
    }

    const int w = rig.image_width;
    std::vector<std::vector<const Event*>> right_by_col(static_cast<std::size_t>(w));
    for (const Event& e : right.events) {
        right_by_col[static_cast<std::size_t>(e.x)].push_back(&e);
    }

    const int d_lo = static_cast<int>(std::ceil(mc.disparity_min));
    const int d_hi = static_cast<int>(std::floor(mc.disparity_max));
    const double fuse_r2 = mc.fusion_distance * mc.fusion_distance;

    for (const Event& el : left.events) {
        // best partner: same row and polarity, nearest in time
        const Event* best = nullptr;
        double best_dt = mc.pair_max_dt;
        for (int d = d_lo; d <= d_hi; ++d) {
            int xr = el.x - d;
            if (xr < 0) break;
            for (const Event* er : right_by_col[static_cast<std::size_t>(xr)]) {
                if (er->p != el.p) continue;
                if (std::abs(er->y - el.y) > mc.row_tolerance) continue;
                double dt = std::abs(el.t - er->t);
                if (dt < best_dt || (dt == best_dt && best == nullptr)) {
                    best_dt = dt;
                    best = er;
                }
            }
        }
        if (!best) continue;

        double disparity = static_cast<double>(el.x - best->x);
        double depth = rig.focal * rig.baseline / disparity;
        PoseSE2 pose = pose_at(el.t);
        // back-project from the left camera: u = cx + f*(lat - ly)/lx
        double x_c = (static_cast<double>(el.x) - rig.cx()) * depth / rig.focal;
        double ly = 0.5 * rig.baseline - x_c;
        double c = std::cos(pose.theta), s = std::sin(pose.theta);
        double wx = pose.x + c * depth - s * ly;
        double wy = pose.y + s * depth + c * ly;
        double wh = rig.cam_height - (static_cast<double>(el.y) - rig.cy()) * depth / rig.focal;

        int best_lm = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < state.landmarks.size(); ++i) {
            double dx = state.landmarks[i].x - wx;
            double dy = state.landmarks[i].y - wy;
            double dh = state.landmarks[i].h - wh;
            double d2 = dx * dx + dy * dy + dh * dh;
            if (d2 < best_d2) {
                best_d2 = d2;
                best_lm = static_cast<int>(i);
            }
        }
        if (best_lm >= 0 && best_d2 <= fuse_r2) {
            LandmarkEstimate& lm = state.landmarks[static_cast<std::size_t>(best_lm)];
            double n = static_cast<double>(lm.fusion_count + 1);
            lm.x += (wx - lm.x) / (n + 1.0);
            lm.y += (wy - lm.y) / (n + 1.0);
            lm.h += (wh - lm.h) / (n + 1.0);
            lm.fusion_count += 1;
            res.n_fused += 1;
            if (!lm.confirmed &&
                std::hypot(pose.x - lm.born_rig_x, pose.y - lm.born_rig_y) >=
                    mc.confirm_baseline) {
                lm.confirmed = true;
            }
        } else if (best_lm < 0 || best_d2 > 4.0 * fuse_r2) {
            state.landmarks.push_back(
                LandmarkEstimate{state.next_id++, wx, wy, wh, 0, pose.x, pose.y, false});
            state.total_new += 1;
            res.n_new += 1;
        }
    }

    refresh_initialized();
    return res;
}

inline MapUpdateResult map_update(DepthMapState& state, const EventWindow& left,
                                  const EventWindow& right, const PoseSE2& pose,
                                  const StereoRig& rig, const MatchConfig& mc = {}) {
    return map_update(state, left, right, [&](double) { return pose; }, rig, mc);
}

inline void export_map_csv(const DepthMapState& state, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open map export: " + path);
    out << "id,x,y,fusion_count\n";
    for (const auto& lm : state.landmarks) {
        out << lm.id << ',' << format_double(lm.x) << ',' << format_double(lm.y) << ','
            << lm.fusion_count << '\n';
    }
}

// ---------------------------------------------------------------------------
// Tracking: Gauss-Newton pose refinement on reprojected landmark observations.
// ---------------------------------------------------------------------------

struct TrackConfig {
    double gate_px = 5.0;          // column association gate around the prediction
    double row_gate_px = 3.0;      // row association gate
    int max_iterations = 10;
    int max_damping_halvings = 5;  // step halvings when the cost increases
    double step_tolerance = 1e-7;  // convergence on the inf-norm of the update
    int min_measurements = 3;      // associated landmarks required
    int reassociation_rounds = 3;  // outer association/solve rounds
    int min_fusion_count = 2;      // only landmarks confirmed by depth fusion are tracked
    // pose velocity prior (dx/dt, dy/dt, dtheta/dt) used to motion-compensate
    // event timestamps to the window end
    double vx = 0.0, vy = 0.0, vtheta = 0.0;
    // weak prior around the initial pose, expressed in the camera frame of
    // that pose. Zero sigma disables the prior.
    double prior_sigma_forward = 0.05;  // meters, along the optical axis
    double prior_sigma_lateral = 0.05;  // meters, across it
    double prior_sigma_theta = 0.02;    // radians
    double meas_sigma = 0.4;            // pixel noise scale for the prior weighting
};

struct TrackResult {
    PoseSE2 pose;
    Eigen::MatrixXd jacobian;   // residual count x 3 (two rows per landmark)
    Eigen::VectorXd residuals;
    bool converged = false;
    int iterations = 0;
};

struct ProjectionJacobian {
    double u = 0.0;
    double v = 0.0;
    Eigen::RowVector3d du;  // d u / d (x, y, theta)
    Eigen::RowVector3d dv;  // d v / d (x, y, theta)
};

// Left-camera projection of a world point with pose jacobians, or nullopt
// when not visible.
inline std::optional<ProjectionJacobian> left_projection_jacobian(const StereoRig& rig,
                                                                  const PoseSE2& pose, double mx,
                                                                  double my, double mh) {
    double c = std::cos(pose.theta), s = std::sin(pose.theta);
    double dx = mx - pose.x, dy = my - pose.y;
    double lx = c * dx + s * dy;
    double ly = -s * dx + c * dy;
    if (lx < rig.z_min) return std::nullopt;
    double lat = 0.5 * rig.baseline;
    ProjectionJacobian out;
    out.u = rig.cx() + rig.focal * (lat - ly) / lx;
    out.v = rig.cy() + rig.focal * (rig.cam_height - mh) / lx;
    if (out.u < 0.0 || out.u >= rig.image_width) return std::nullopt;
    if (out.v < 0.0 || out.v >= rig.image_height) return std::nullopt;

    // dlx/d(x,y,theta) = (-c, -s, ly); dly/d(x,y,theta) = (s, -c, -lx)
    double inv_lx2 = 1.0 / (lx * lx);
    double a = lat - ly;
    out.du[0] = rig.focal * (-s * lx + a * c) * inv_lx2;
    out.du[1] = rig.focal * (c * lx + a * s) * inv_lx2;
    out.du[2] = rig.focal * (lx * lx - a * ly) * inv_lx2;
    double hv = rig.focal * (rig.cam_height - mh) * inv_lx2;
    out.dv[0] = hv * c;
    out.dv[1] = hv * s;
    out.dv[2] = -hv * ly;
    return out;
}

namespace detail {

struct TrackObservation {
    const LandmarkEstimate* lm;
    double u;  // compensated mean column observation
    double v;  // mean row observation
};

// Landmark-to-event association at `pose`: each event goes to the nearest
// predicted landmark within the row and column gates; the observation per
// landmark is the mean of its events, columns motion-compensated to the
// window end.
inline std::vector<TrackObservation> associate(const DepthMapState& map, const EventWindow& left,
                                               const PoseSE2& pose, const StereoRig& rig,
                                               const TrackConfig& tc) {
    struct Candidate {
        const LandmarkEstimate* lm;
        double u_pred;
        double v_pred;
        double px_vel;
        double sum_u = 0.0;
        double sum_v = 0.0;
        int n = 0;
    };
    std::vector<Candidate> candidates;
    for (const auto& lm : map.landmarks) {
        if (!lm.confirmed || lm.fusion_count < tc.min_fusion_count) continue;
        auto proj = left_projection_jacobian(rig, pose, lm.x, lm.y, lm.h);
        if (!proj) continue;
        double px_vel = proj->du[0] * tc.vx + proj->du[1] * tc.vy + proj->du[2] * tc.vtheta;
        candidates.push_back(Candidate{&lm, proj->u, proj->v, px_vel, 0.0, 0.0, 0});
    }

    for (const Event& e : left.events) {
        Candidate* best = nullptr;
        double best_d = std::numeric_limits<double>::infinity();
        for (auto& c : candidates) {
            if (std::abs(e.y - c.v_pred) > tc.row_gate_px) continue;
            double u_comp = static_cast<double>(e.x) + c.px_vel * (left.t_end - e.t);
            double du = std::abs(u_comp - c.u_pred);
            if (du > tc.gate_px) continue;
            if (du < best_d) {
                best_d = du;
                best = &c;
            }
        }
        if (best) {
            best->sum_u += static_cast<double>(e.x) + best->px_vel * (left.t_end - e.t);
            best->sum_v += e.y;
            best->n += 1;
        }
    }

    std::vector<TrackObservation> obs;
    for (const Candidate& c : candidates) {
        if (c.n > 0) obs.push_back(TrackObservation{c.lm, c.sum_u / c.n, c.sum_v / c.n});
    }
    return obs;
}

}  // namespace detail

// Associates window events to map landmarks by reprojected proximity and
// minimizes the squared pixel residual (column and row per landmark) over the
// SE(2) pose by Gauss-Newton with step halving and re-association rounds. A
// weak camera-frame prior around the initial pose regularizes the solve; it
// never enters the returned jacobian or residuals.
inline TrackResult track(const DepthMapState& map, const EventWindow& left,
                         const PoseSE2& init_pose, const StereoRig& rig,
                         const TrackConfig& tc = {}) {
    if (!map.initialized) throw RangeError("track: depth map not initialized");
    if (left.events.empty()) throw RangeError("track: empty event window");

    Eigen::Vector3d prior_w = Eigen::Vector3d::Zero();
    if (tc.prior_sigma_forward > 0.0 && tc.prior_sigma_lateral > 0.0 &&
        tc.prior_sigma_theta > 0.0) {
        prior_w[0] = tc.meas_sigma / tc.prior_sigma_forward;
        prior_w[1] = tc.meas_sigma / tc.prior_sigma_lateral;
        prior_w[2] = tc.meas_sigma / tc.prior_sigma_theta;
    }
    const double c0 = std::cos(init_pose.theta), s0 = std::sin(init_pose.theta);
    // offset in the init-pose camera frame: (forward, lateral, dtheta)
    auto pose_offset = [&](const PoseSE2& pose) {
        double dx = pose.x - init_pose.x, dy = pose.y - init_pose.y;
        return Eigen::Vector3d(c0 * dx + s0 * dy, -s0 * dx + c0 * dy,
                               normalize_angle(pose.theta - init_pose.theta));
    };
    auto total_cost = [&](const Eigen::VectorXd& res, const PoseSE2& pose) {
        return res.squaredNorm() + (prior_w.asDiagonal() * pose_offset(pose)).squaredNorm();
    };
    Eigen::Matrix3d offset_jac;
    offset_jac << c0, s0, 0.0, -s0, c0, 0.0, 0.0, 0.0, 1.0;

    TrackResult result;
    result.pose = init_pose;
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    bool had_valid_round = false;

    for (int round = 0; round < tc.reassociation_rounds; ++round) {
        std::vector<detail::TrackObservation> obs =
            detail::associate(map, left, result.pose, rig, tc);
        const int m = static_cast<int>(obs.size());
        if (m < tc.min_measurements) {
            if (had_valid_round) break;  // keep the earlier solution
            throw RangeError("track: under-constrained (" + std::to_string(m) +
                             " measurements)");
        }

        auto evaluate = [&](const PoseSE2& pose, Eigen::VectorXd& res,
                            Eigen::MatrixXd* jmat) -> bool {
            res.resize(2 * m);
            if (jmat) jmat->resize(2 * m, 3);
            for (int i = 0; i < m; ++i) {
                const auto& ob = obs[static_cast<std::size_t>(i)];
                auto proj = left_projection_jacobian(rig, pose, ob.lm->x, ob.lm->y, ob.lm->h);
                if (!proj) return false;  // landmark left the view at this iterate
                res[2 * i] = ob.u - proj->u;
                res[2 * i + 1] = ob.v - proj->v;
                if (jmat) {
                    jmat->row(2 * i) = -proj->du;
                    jmat->row(2 * i + 1) = -proj->dv;
                }
            }
            return true;
        };

        if (!evaluate(result.pose, r, &jac)) {
            if (had_valid_round) break;
            throw RangeError("track: landmarks not visible at the initial pose");
        }
        had_valid_round = true;
        double cost = total_cost(r, result.pose);
        PoseSE2 round_start = result.pose;
        bool round_converged = false;

        for (int iter = 0; iter < tc.max_iterations; ++iter) {
            ++result.iterations;
            Eigen::Matrix3d h = jac.transpose() * jac;
            Eigen::Vector3d g = jac.transpose() * r;
            Eigen::Vector3d off = pose_offset(result.pose);
            Eigen::Matrix3d pw2 = offset_jac.transpose() *
                                  prior_w.array().square().matrix().asDiagonal() * offset_jac;
            h += pw2;
            g += offset_jac.transpose() * (prior_w.array().square() * off.array()).matrix();
            Eigen::Vector3d delta = h.ldlt().solve(-g);
            if (!delta.allFinite()) break;

            bool accepted = false;
            Eigen::Vector3d step = delta;
            for (int halving = 0; halving <= tc.max_damping_halvings; ++halving) {
                PoseSE2 candidate(result.pose.x + step[0], result.pose.y + step[1],
                                  result.pose.theta + step[2]);
                Eigen::VectorXd r_new;
                Eigen::MatrixXd jac_new;
                if (evaluate(candidate, r_new, &jac_new) &&
                    total_cost(r_new, candidate) <= cost) {
                    result.pose = candidate;
                    r = std::move(r_new);
                    jac = std::move(jac_new);
                    cost = total_cost(r, result.pose);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            if (step.lpNorm<Eigen::Infinity>() < tc.step_tolerance) {
                round_converged = true;
                break;
            }
        }
        result.converged = round_converged;

        // re-associate only when the pose moved enough to change the gating
        double moved = std::hypot(result.pose.x - round_start.x, result.pose.y - round_start.y);
        if (moved * rig.focal / std::max(rig.z_min, 1.0) < 0.5 * tc.gate_px &&
            std::abs(normalize_angle(result.pose.theta - round_start.theta)) < 0.01) {
            break;
        }
    }

    result.jacobian = jac;
    result.residuals = r;
    return result;
}

// Information gain of a tracking solve: trace(J^T J) / sum(res^2), capped at
// i_max for exact fits.
inline double fim_trace(const TrackResult& result, double i_max = 1e6) {
    if (result.residuals.size() < 1) throw RangeError("fim_trace: no residuals");
    double ss = result.residuals.squaredNorm();
    if (ss == 0.0) return i_max;
    return result.jacobian.squaredNorm() / ss;
}

inline int count_events(const EventWindow& window) {
    return static_cast<int>(window.events.size());
}

}  // namespace sean
