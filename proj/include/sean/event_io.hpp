#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sean/common.hpp"

namespace sean {

// One asynchronous camera event. Streams are kept sorted by t (non-decreasing).
struct Event {
    double t = 0.0;  // seconds
    int x = 0;       // pixel column
    int y = 0;       // pixel row
    int p = 0;       // polarity, 0 or 1

    bool operator==(const Event&) const = default;
};

// Events with timestamps in the closed interval [t_start, t_end].
struct EventWindow {
    std::vector<Event> events;
    double t_start = 0.0;
    double t_end = 0.0;

    double length() const { return t_end - t_start; }
};

// Binary spike vector for one network time step.
struct SpikeFrame {
    std::vector<std::uint8_t> bits;
    long step_index = 0;

    int count() const {
        int n = 0;
        for (auto b : bits) n += b;
        return n;
    }
};

enum class OrderPolicy { Strict, Sort };

// Parses `t x y p` text files (one event per line, '#' lines are comments).
// Coordinates are validated against the sensor dimensions; out-of-order
// timestamps are an error in Strict mode and are sorted (stable) otherwise.
inline std::vector<Event> parse_event_file(const std::string& path, int sensor_width,
                                           int sensor_height,
                                           OrderPolicy order = OrderPolicy::Strict) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open event file: " + path);

    std::vector<Event> events;
    std::string line;
    long line_no = 0;
    bool sorted = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        Event e;
        if (!(ls >> e.t >> e.x >> e.y >> e.p)) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed event line");
        }
        if (e.p != 0 && e.p != 1) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": polarity out of range");
        }
        if (e.t < 0.0) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": negative timestamp");
        }
        if (e.x < 0 || e.x >= sensor_width || e.y < 0 || e.y >= sensor_height) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": pixel out of sensor bounds");
        }
        if (!events.empty() && e.t < events.back().t) {
            if (order == OrderPolicy::Strict) {
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": non-monotone timestamp");
            }
            sorted = false;
        }
        events.push_back(e);
    }
    if (!sorted) {
        std::stable_sort(events.begin(), events.end(),
                         [](const Event& a, const Event& b) { return a.t < b.t; });
    }
    return events;
}

inline void write_event_file(const std::string& path, const std::vector<Event>& events) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open event file for writing: " + path);
    for (const Event& e : events) {
        out << format_double(e.t) << ' ' << e.x << ' ' << e.y << ' ' << e.p << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

// Events of a sorted stream with t in [t - t_w, t]. Empty result is valid.
inline EventWindow window_events(const std::vector<Event>& stream, double t, double t_w) {
    if (t_w <= 0.0) throw RangeError("window length must be positive");
    EventWindow w;
    w.t_start = t - t_w;
    w.t_end = t;
    auto lo = std::lower_bound(stream.begin(), stream.end(), w.t_start,
                               [](const Event& e, double v) { return e.t < v; });
    auto hi = std::upper_bound(stream.begin(), stream.end(), w.t_end,
                               [](double v, const Event& e) { return v < e.t; });
    w.events.assign(lo, hi);
    return w;
}

// Spatial downsampling of events into per-step binary spike frames.
struct EncoderConfig {
    int sensor_width = 320;
    int sensor_height = 1;
    int grid_w = 32;
    int grid_h = 24;
    bool polarity_split = false;  // when true, separate bit plane per polarity

    int input_size() const { return grid_w * grid_h * (polarity_split ? 2 : 1); }
};

class SpikeEncoder {
public:
    explicit SpikeEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
        if (cfg.grid_w <= 0 || cfg.grid_h <= 0 || cfg.sensor_width <= 0 ||
            cfg.sensor_height <= 0) {
            throw ConfigError("encoder dimensions must be positive");
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    int input_size() const { return cfg_.input_size(); }

    // Bit i is 1 iff at least one event fell in grid cell i during the step.
    template <typename Iter>
    SpikeFrame encode(Iter first, Iter last, long step_index) const {
        SpikeFrame f;
        f.step_index = step_index;
        f.bits.assign(static_cast<std::size_t>(input_size()), 0);
        for (Iter it = first; it != last; ++it) {
            const Event& e = *it;
            if (e.x < 0 || e.x >= cfg_.sensor_width || e.y < 0 || e.y >= cfg_.sensor_height) {
                throw RangeError("event outside sensor bounds during encoding");
            }
            int cx = static_cast<int>(static_cast<long>(e.x) * cfg_.grid_w / cfg_.sensor_width);
            int cy = static_cast<int>(static_cast<long>(e.y) * cfg_.grid_h / cfg_.sensor_height);
            int cell = cy * cfg_.grid_w + cx;
            if (cfg_.polarity_split && e.p == 1) cell += cfg_.grid_w * cfg_.grid_h;
            f.bits[static_cast<std::size_t>(cell)] = 1;
        }
        return f;
    }

    SpikeFrame encode(const std::vector<Event>& step_events, long step_index) const {
        return encode(step_events.begin(), step_events.end(), step_index);
    }

private:
    EncoderConfig cfg_;
};

// Slices a sorted stream into consecutive per-step frames of `step` seconds,
// frame k covering (t0 + k*step, t0 + (k+1)*step].
inline std::vector<SpikeFrame> encode_stream(const std::vector<Event>& stream,
                                             const SpikeEncoder& enc, double t0, double t1,
                                             double step = 0.001) {
    if (step <= 0.0) throw RangeError("step must be positive");
    long n_steps = static_cast<long>(std::llround((t1 - t0) / step));
    std::vector<SpikeFrame> frames;
    frames.reserve(static_cast<std::size_t>(n_steps));
    auto it = std::lower_bound(stream.begin(), stream.end(), t0,
                               [](const Event& e, double v) { return e.t < v; });
    // events exactly at t0 belong to no frame (frames are left-open)
    while (it != stream.end() && it->t <= t0) ++it;
    for (long k = 0; k < n_steps; ++k) {
        double t_end = t0 + (k + 1) * step;
        auto hi = it;
        while (hi != stream.end() && hi->t <= t_end) ++hi;
        frames.push_back(enc.encode(it, hi, k));
        it = hi;
    }
    return frames;
}

}  // namespace sean
