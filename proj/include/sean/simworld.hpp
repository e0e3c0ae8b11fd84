#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "sean/common.hpp"
#include "sean/event_io.hpp"

namespace sean {

constexpr double kPi = 3.14159265358979323846;

inline double normalize_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    if (a > kPi) a -= 2.0 * kPi;
    return a;
}

// Planar rigid pose; theta normalized to (-pi, pi].
struct PoseSE2 {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    PoseSE2() = default;
    PoseSE2(double x_, double y_, double theta_) : x(x_), y(y_), theta(normalize_angle(theta_)) {}

    PoseSE2 inverse() const {
        double c = std::cos(theta), s = std::sin(theta);
        return PoseSE2(-(c * x + s * y), -(-s * x + c * y), -theta);
    }

    // this ∘ other (apply other in this frame)
    PoseSE2 compose(const PoseSE2& o) const {
        double c = std::cos(theta), s = std::sin(theta);
        return PoseSE2(x + c * o.x - s * o.y, y + s * o.x + c * o.y, theta + o.theta);
    }

    // world point -> this frame
    std::pair<double, double> to_local(double wx, double wy) const {
        double c = std::cos(theta), s = std::sin(theta);
        double dx = wx - x, dy = wy - y;
        return {c * dx + s * dy, -s * dx + c * dy};
    }
};

struct Landmark {
    int id = 0;
    double x = 0.0;
    double y = 0.0;
    double h = 1.0;  // height above the camera plane datum, meters
};

// Piecewise-linear trajectory: time-stamped pose samples, linear position and
// shortest-arc heading interpolation between neighbours.
struct Trajectory {
    std::vector<std::pair<double, PoseSE2>> samples;

    double t_begin() const { return samples.empty() ? 0.0 : samples.front().first; }
    double t_end() const { return samples.empty() ? 0.0 : samples.back().first; }
};

inline PoseSE2 sample_pose(const Trajectory& traj, double t) {
    if (traj.samples.empty()) throw RangeError("empty trajectory");
    const auto& s = traj.samples;
    if (t < s.front().first - 1e-12 || t > s.back().first + 1e-12) {
        throw RangeError("trajectory query time out of range");
    }
    if (t <= s.front().first) return s.front().second;
    if (t >= s.back().first) return s.back().second;
    auto hi = std::upper_bound(s.begin(), s.end(), t,
                               [](double v, const auto& p) { return v < p.first; });
    auto lo = hi - 1;
    if (hi == s.end()) return s.back().second;
    double u = (t - lo->first) / (hi->first - lo->first);
    const PoseSE2& a = lo->second;
    const PoseSE2& b = hi->second;
    double dtheta = normalize_angle(b.theta - a.theta);
    return PoseSE2(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), a.theta + u * dtheta);
}

// Rig-centred speed at t from the bracketing segment (0 at exact rest).
inline double trajectory_speed(const Trajectory& traj, double t) {
    const auto& s = traj.samples;
    if (s.size() < 2) return 0.0;
    t = std::min(std::max(t, s.front().first), s.back().first);
    auto hi = std::upper_bound(s.begin(), s.end(), t,
                               [](double v, const auto& p) { return v < p.first; });
    if (hi == s.begin()) ++hi;
    if (hi == s.end()) --hi;
    auto lo = hi - 1;
    double dt = hi->first - lo->first;
    if (dt <= 0.0) return 0.0;
    double dx = hi->second.x - lo->second.x;
    double dy = hi->second.y - lo->second.y;
    return std::sqrt(dx * dx + dy * dy) / dt;
}

// Builds a trajectory from 2-D waypoints with one constant speed per segment.
// Heading is fixed (the camera looks in one direction while translating).
inline Trajectory make_waypoint_trajectory(const std::vector<std::pair<double, double>>& waypoints,
                                           const std::vector<double>& segment_speeds,
                                           double heading, double t0 = 0.0) {
    if (waypoints.size() < 2) throw ConfigError("need at least two waypoints");
    if (segment_speeds.size() != waypoints.size() - 1) {
        throw ConfigError("need one speed per trajectory segment");
    }
    Trajectory traj;
    double t = t0;
    traj.samples.emplace_back(t, PoseSE2(waypoints[0].first, waypoints[0].second, heading));
    for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
        double dx = waypoints[i + 1].first - waypoints[i].first;
        double dy = waypoints[i + 1].second - waypoints[i].second;
        double len = std::sqrt(dx * dx + dy * dy);
        double v = segment_speeds[i];
        if (v <= 0.0) throw ConfigError("segment speeds must be positive");
        t += len / v;
        traj.samples.emplace_back(t, PoseSE2(waypoints[i + 1].first, waypoints[i + 1].second,
                                             heading));
    }
    return traj;
}

inline Trajectory reverse_trajectory(const Trajectory& traj) {
    Trajectory r;
    if (traj.samples.empty()) return r;
    double t0 = traj.t_begin(), t1 = traj.t_end();
    for (auto it = traj.samples.rbegin(); it != traj.samples.rend(); ++it) {
        r.samples.emplace_back(t0 + (t1 - it->first), it->second);
    }
    return r;
}

// Rectified stereo rig of two pinhole cameras looking along the pose heading,
// optical centres offset laterally by ±baseline/2 (left at -b/2 so that
// disparity u_left - u_right = focal * baseline / depth is positive). The rig
// moves in the plane; the vertical image axis sees the landmark heights, and
// a world point lands on the same row in both cameras.
struct StereoRig {
    double baseline = 0.2;        // meters
    double focal = 200.0;         // pixels
    int image_width = 320;        // pixels
    int image_height = 200;       // pixels
    double cam_height = 1.0;      // optical axis height above the datum, meters
    double event_threshold = 0.5; // projected horizontal displacement (px) per event
    double z_min = 0.2;           // meters, near clipping plane

    double cx() const { return 0.5 * image_width; }
    double cy() const { return 0.5 * image_height; }
};

enum class CameraSide { Left, Right };

struct PixelCoord {
    double u = 0.0;  // column
    double v = 0.0;  // row (identical across cameras for the same point)
};

// Continuous pixel coordinates of a landmark in one camera, or nullopt when
// behind the camera or outside the image.
inline std::optional<PixelCoord> project_pixel(const StereoRig& rig, const PoseSE2& pose,
                                               const Landmark& lm, CameraSide side) {
    auto [lx, ly] = pose.to_local(lm.x, lm.y);
    // local frame: x forward (optical axis), y lateral-left; image u grows to
    // the camera's right, so u = cx + f * (cam_offset - ly) / depth
    double z_c = lx;
    double lat = (side == CameraSide::Left ? 0.5 : -0.5) * rig.baseline;
    double x_c = lat - ly;
    if (z_c < rig.z_min) return std::nullopt;
    PixelCoord p;
    p.u = rig.cx() + rig.focal * x_c / z_c;
    p.v = rig.cy() + rig.focal * (rig.cam_height - lm.h) / z_c;
    if (p.u < 0.0 || p.u >= rig.image_width) return std::nullopt;
    if (p.v < 0.0 || p.v >= rig.image_height) return std::nullopt;
    return p;
}

inline std::optional<double> project_camera(const StereoRig& rig, const PoseSE2& pose,
                                            const Landmark& lm, CameraSide side) {
    auto p = project_pixel(rig, pose, lm, side);
    if (!p) return std::nullopt;
    return p->u;
}

struct StereoProjection {
    double u_left = 0.0;
    double u_right = 0.0;
    double row = 0.0;
};

inline std::optional<StereoProjection> project(const StereoRig& rig, const PoseSE2& pose,
                                               const Landmark& lm) {
    auto pl = project_pixel(rig, pose, lm, CameraSide::Left);
    auto pr = project_pixel(rig, pose, lm, CameraSide::Right);
    if (!pl || !pr) return std::nullopt;
    return StereoProjection{pl->u, pr->u, pl->v};
}

struct SynthesisOptions {
    double step = 0.001;        // seconds; event generator sampling period
    double timestamp_jitter = 0.0;  // +- uniform jitter applied per event
    std::uint64_t jitter_seed = 0;
};

// Threshold event generator: per camera and landmark, an event fires each
// time the projected column accumulates >= event_threshold pixels of
// displacement since the previous event. Polarity 1 for increasing u. The
// event row is the landmark's current image row.
inline std::pair<std::vector<Event>, std::vector<Event>> synthesize_events(
    const StereoRig& rig, const Trajectory& traj, const std::vector<Landmark>& landmarks,
    double t0, double t1, const SynthesisOptions& opt = {}) {
    if (opt.step <= 0.0 || opt.step > 0.001 + 1e-12) {
        throw RangeError("synthesis step must be in (0, 0.001] seconds");
    }
    std::pair<std::vector<Event>, std::vector<Event>> out;
    long n_steps = static_cast<long>(std::ceil((t1 - t0) / opt.step - 1e-9));

    struct Track {
        bool armed = false;
        double u_ref = 0.0;
    };
    std::vector<Track> ref_left(landmarks.size()), ref_right(landmarks.size());

    auto emit = [&](std::vector<Event>& stream, Track& tr, const PixelCoord& p, double t) {
        if (!tr.armed) {
            tr.armed = true;
            // reference on the absolute threshold grid, so the displacement
            // accounting is phase-consistent across cameras and re-sightings
            tr.u_ref = std::floor(p.u / rig.event_threshold) * rig.event_threshold;
            return;
        }
        while (std::abs(p.u - tr.u_ref) >= rig.event_threshold) {
            int dir = p.u > tr.u_ref ? 1 : -1;
            tr.u_ref += dir * rig.event_threshold;
            int px = static_cast<int>(std::lround(tr.u_ref));
            int py = static_cast<int>(std::lround(p.v));
            if (px >= 0 && px < rig.image_width && py >= 0 && py < rig.image_height) {
                stream.push_back(Event{t, px, py, dir > 0 ? 1 : 0});
            }
        }
    };

    for (long k = 0; k <= n_steps; ++k) {
        double t = std::min(t0 + k * opt.step, t1);
        PoseSE2 pose = sample_pose(traj, t);
        for (std::size_t i = 0; i < landmarks.size(); ++i) {
            auto pl = project_pixel(rig, pose, landmarks[i], CameraSide::Left);
            if (pl) emit(out.first, ref_left[i], *pl, t);
            else ref_left[i].armed = false;
            auto pr = project_pixel(rig, pose, landmarks[i], CameraSide::Right);
            if (pr) emit(out.second, ref_right[i], *pr, t);
            else ref_right[i].armed = false;
        }
    }

    if (opt.timestamp_jitter > 0.0) {
        Rng rng(opt.jitter_seed);
        for (auto* stream : {&out.first, &out.second}) {
            for (Event& e : *stream) {
                e.t = std::max(0.0, e.t + rng.uniform(-opt.timestamp_jitter,
                                                      opt.timestamp_jitter));
            }
        }
    }
    for (auto* stream : {&out.first, &out.second}) {
        std::stable_sort(stream->begin(), stream->end(),
                         [](const Event& a, const Event& b) { return a.t < b.t; });
    }
    return out;
}

inline std::vector<Landmark> make_uniform_landmarks(int count, double x0, double x1, double y0,
                                                    double y1, std::uint64_t seed,
                                                    double h0 = 0.4, double h1 = 1.6) {
    Rng rng(seed);
    std::vector<Landmark> lms;
    lms.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        lms.push_back(Landmark{i, rng.uniform(x0, x1), rng.uniform(y0, y1),
                               rng.uniform(h0, h1)});
    }
    return lms;
}

}  // namespace sean
