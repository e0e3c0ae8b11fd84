#pragma once

#include <deque>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sean/common.hpp"
#include "sean/snn.hpp"

namespace sean {

// One replay record: the frame window the network saw, the action taken, the
// reward received, and the window at the next decision of the same channel.
struct Transition {
    std::vector<SpikeFrame> state_frames;
    int action = 0;
    double reward = 0.0;
    std::vector<SpikeFrame> next_state_frames;
    bool terminal = false;
};

// Bounded FIFO; eviction is strictly oldest-first.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(Transition tr) {
        storage_.push_back(std::move(tr));
        if (storage_.size() > capacity_) storage_.pop_front();
    }

    std::size_t size() const { return storage_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& at(std::size_t i) const { return storage_[i]; }

    // Uniform sampling with replacement (required when capacity < batch).
    std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
        std::vector<const Transition*> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(&storage_[rng.uniform_index(storage_.size())]);
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<Transition> storage_;
};

inline void push_transition(ReplayBuffer& buffer, Transition tr) { buffer.push(std::move(tr)); }

struct TrainerConfig {
    int batch_size = 32;
    double learning_rate = 0.2;
    double epsilon_init = 0.8;
    double epsilon_decay = 0.001;  // per training step
    double epsilon_min = 0.01;
    double gamma = 0.9;
    int target_sync_interval = 50;  // training steps between target syncs
    int updates_per_decision = 1;   // train_step calls after each decision
    std::size_t replay_capacity = 100;
    double grad_clip_norm = 1.0;    // global L2 clip on batch gradients; 0 disables
    double reward_scale = 1.0;      // rewards are multiplied by this inside the trainer
};

// Epsilon-greedy action on a frame window. Resets the network to rest first:
// a decision window is a self-contained state, so Q-values are evaluated from
// V_0 = V_rest.
inline int act(SeanNetwork& net, const std::vector<SpikeFrame>& frames, double epsilon, Rng& rng,
               QPair* q_out = nullptr) {
    net.reset_state();
    QPair q = net.forward_window(frames, ForwardMode::Inference);
    if (q_out) *q_out = q;
    if (epsilon > 0.0 && rng.coin(epsilon)) {
        return rng.coin(0.5) ? 1 : 0;
    }
    return select_action(q);
}

// Discrete Q-learning around one SEAN network: replay buffer, TD(0) targets
// against a periodically synced target network, SGD on the squared TD error.
class QTrainer {
public:
    QTrainer() = default;
    QTrainer(const SeanConfig& net_cfg, const TrainerConfig& cfg, std::uint64_t seed)
        : cfg_(cfg),
          net_(net_cfg, seed),
          target_(net_),
          buffer_(cfg.replay_capacity) {}

    SeanNetwork& net() { return net_; }
    const SeanNetwork& net() const { return net_; }
    const SeanNetwork& target() const { return target_; }
    ReplayBuffer& buffer() { return buffer_; }
    const TrainerConfig& config() const { return cfg_; }
    long train_steps() const { return train_steps_; }

    // Exact decay schedule: eps(n) = clamp(eps_init - decay * n).
    double epsilon() const {
        double e = cfg_.epsilon_init - cfg_.epsilon_decay * static_cast<double>(train_steps_);
        return std::max(cfg_.epsilon_min, std::min(1.0, e));
    }

    int act(const std::vector<SpikeFrame>& frames, Rng& rng, QPair* q_out = nullptr) {
        return sean::act(net_, frames, epsilon(), rng, q_out);
    }

    int act_greedy(const std::vector<SpikeFrame>& frames, QPair* q_out = nullptr) {
        return sean::act(net_, frames, 0.0, rng_unused_, q_out);
    }

    void push(Transition tr) { buffer_.push(std::move(tr)); }

    // One TD(0) update over a uniformly sampled batch. No-op (nullopt) until
    // the buffer holds min(batch, capacity) transitions. Returns the batch
    // mean squared TD error.
    std::optional<double> train_step(Rng& rng) {
        std::size_t need = std::min(static_cast<std::size_t>(cfg_.batch_size), buffer_.capacity());
        if (buffer_.size() < need || buffer_.size() == 0) return std::nullopt;

        auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng);
        Gradients total;
        bool first = true;
        double loss = 0.0;
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        for (const Transition* tr : batch) {
            double y = tr->reward * cfg_.reward_scale;
            if (!tr->terminal) {
                target_.reset_state();
                QPair qn = target_.forward_window(tr->next_state_frames, ForwardMode::Training);
                y += cfg_.gamma * std::max(qn.q_on, qn.q_off);
            }
            net_.reset_state();
            WindowTrace trace;
            QPair q = net_.forward_window(tr->state_frames, ForwardMode::Training, &trace);
            double q_a = tr->action == 1 ? q.q_on : q.q_off;
            double err = q_a - y;
            loss += err * err * inv_b;
            double g = 2.0 * err * inv_b;
            Gradients gr = net_.backward_window(trace, tr->action == 1 ? g : 0.0,
                                                tr->action == 1 ? 0.0 : g);
            if (first) {
                total = std::move(gr);
                first = false;
            } else {
                total.w_lif += gr.w_lif;
                total.w_on += gr.w_on;
                total.b_on += gr.b_on;
                total.w_off += gr.w_off;
                total.b_off += gr.b_off;
            }
        }
        if (cfg_.grad_clip_norm > 0.0) {
            double norm = std::sqrt(total.squared_norm());
            if (norm > cfg_.grad_clip_norm) total.scale(cfg_.grad_clip_norm / norm);
        }
        net_.apply_gradients(total, cfg_.learning_rate);
        ++train_steps_;
        if (cfg_.target_sync_interval > 0 && train_steps_ % cfg_.target_sync_interval == 0) {
            sync_target();
        }
        return loss;
    }

    void sync_target() { target_ = net_; }

private:
    TrainerConfig cfg_;
    SeanNetwork net_;
    SeanNetwork target_;
    ReplayBuffer buffer_{100};
    long train_steps_ = 0;
    Rng rng_unused_;  // greedy path consumes no randomness
};

// ---------------------------------------------------------------------------
// Dual-network policy and the clocked decision loop.
// ---------------------------------------------------------------------------

enum class Channel { Track, Map };

inline const char* channel_name(Channel c) { return c == Channel::Track ? "track" : "map"; }

struct TriggerRecord {
    double t = 0.0;
    Channel channel = Channel::Track;
    int action = 0;
    double epsilon = 0.0;
    double q_on = 0.0;
    double q_off = 0.0;
    double reward = 0.0;
};

struct TriggerLog {
    std::vector<TriggerRecord> records;

    void to_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open trigger log for writing: " + path);
        out << "t,channel,action,epsilon,q_on,q_off,reward\n";
        for (const auto& r : records) {
            out << format_double(r.t) << ',' << channel_name(r.channel) << ',' << r.action << ','
                << format_double(r.epsilon) << ',' << format_double(r.q_on) << ','
                << format_double(r.q_off) << ',' << format_double(r.reward) << '\n';
        }
        if (!out) throw IoError("trigger log write failed: " + path);
    }

    static TriggerLog from_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open trigger log: " + path);
        TriggerLog log;
        std::string line;
        if (!std::getline(in, line)) throw ParseError("empty trigger log: " + path);
        long line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::istringstream ls(line);
            TriggerRecord r;
            std::string field;
            auto next = [&](const char* what) {
                if (!std::getline(ls, field, ',')) {
                    throw ParseError(path + ":" + std::to_string(line_no) + ": missing " + what);
                }
                return field;
            };
            r.t = std::strtod(next("t").c_str(), nullptr);
            std::string ch = next("channel");
            if (ch == "track") r.channel = Channel::Track;
            else if (ch == "map") r.channel = Channel::Map;
            else throw ParseError(path + ":" + std::to_string(line_no) + ": bad channel");
            r.action = std::stoi(next("action"));
            r.epsilon = std::strtod(next("epsilon").c_str(), nullptr);
            r.q_on = std::strtod(next("q_on").c_str(), nullptr);
            r.q_off = std::strtod(next("q_off").c_str(), nullptr);
            r.reward = std::strtod(next("reward").c_str(), nullptr);
            log.records.push_back(r);
        }
        return log;
    }
};

// Supplies the per-decision rewards; implemented by the experiment harness on
// top of the estimator, or by synthetic sources in tests. Called exactly once
// per decision, after the action is chosen.
class RewardSource {
public:
    virtual ~RewardSource() = default;
    virtual double track_reward(double t, int action) = 0;
    virtual double map_reward(double t, int action) = 0;
};

// How a channel picks actions in the loop.
struct ChannelPolicy {
    enum class Mode { Learned, Always, Never, Random };
    Mode mode = Mode::Learned;
    double random_p = 0.5;
};

struct DualPolicy {
    QTrainer track;
    QTrainer map;
    Rng track_rng;
    Rng map_rng;

    DualPolicy(const SeanConfig& net_cfg, const TrainerConfig& track_cfg,
               const TrainerConfig& map_cfg, std::uint64_t seed)
        : track(net_cfg, track_cfg, Rng(seed).split(1).raw()),
          map(net_cfg, map_cfg, Rng(seed).split(2).raw()),
          track_rng(Rng(seed).split(3)),
          map_rng(Rng(seed).split(4)) {}
};

struct LoopConfig {
    int track_period_steps = 10;  // decisions every N network steps (100 Hz at 1 kHz)
    int map_period_steps = 50;    // 20 Hz at 1 kHz
    int window_cap = 32;          // BPTT window cap, frames
    bool train = true;
    bool force_greedy = false;    // evaluate learned channels with epsilon = 0
    ChannelPolicy track_policy;
    ChannelPolicy map_policy;
    double t0 = 0.0;
    double step = 0.001;
};

// Runs the clocked dual-channel decision loop over a 1 kHz frame sequence.
// Each channel acts on the frames since its previous decision (capped), gets
// its reward from the callback, stores the transition, and trains.
inline TriggerLog run_decision_loop(DualPolicy& policy, const std::vector<SpikeFrame>& frames,
                                    RewardSource& rewards, const LoopConfig& cfg) {
    if (cfg.track_period_steps <= 0 || cfg.map_period_steps <= 0) {
        throw ConfigError("decision periods must be positive");
    }
    TriggerLog log;

    struct ChannelState {
        std::vector<SpikeFrame> window;
        std::optional<Transition> pending;
    };
    ChannelState track_st, map_st;

    auto take_window = [&](const std::vector<SpikeFrame>& all, long end_idx, int period) {
        int len = std::min(period, cfg.window_cap);
        std::vector<SpikeFrame> w;
        w.reserve(static_cast<std::size_t>(len));
        for (long i = end_idx - len + 1; i <= end_idx; ++i) {
            w.push_back(all[static_cast<std::size_t>(i)]);
        }
        return w;
    };

    auto decide = [&](Channel ch, QTrainer& trainer, Rng& rng, const ChannelPolicy& cp,
                      ChannelState& st, std::vector<SpikeFrame> window, double t) {
        // finish the previous transition now that its successor state is known
        if (st.pending) {
            st.pending->next_state_frames = window;
            trainer.push(std::move(*st.pending));
            st.pending.reset();
        }
        QPair q{};
        int action = 0;
        double eps = 0.0;
        switch (cp.mode) {
            case ChannelPolicy::Mode::Learned:
                eps = cfg.force_greedy ? 0.0 : trainer.epsilon();
                action = sean::act(trainer.net(), window, eps, rng, &q);
                break;
            case ChannelPolicy::Mode::Always: action = 1; break;
            case ChannelPolicy::Mode::Never: action = 0; break;
            case ChannelPolicy::Mode::Random: action = rng.coin(cp.random_p) ? 1 : 0; break;
        }
        double reward = 0.0;
        try {
            reward = ch == Channel::Track ? rewards.track_reward(t, action)
                                          : rewards.map_reward(t, action);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("reward callback failed at t=") +
                                     format_double(t) + " (" + channel_name(ch) + "): " +
                                     e.what());
        }
        log.records.push_back(TriggerRecord{t, ch, action, eps, q.q_on, q.q_off, reward});
        if (cp.mode == ChannelPolicy::Mode::Learned) {
            Transition tr;
            tr.state_frames = std::move(window);
            tr.action = action;
            tr.reward = reward;
            st.pending = std::move(tr);
            if (cfg.train) {
                for (int u = 0; u < trainer.config().updates_per_decision; ++u) {
                    trainer.train_step(rng);
                }
            }
        }
    };

    for (long k = 0; k < static_cast<long>(frames.size()); ++k) {
        long step_no = k + 1;
        double t = cfg.t0 + static_cast<double>(step_no) * cfg.step;
        if (step_no % cfg.map_period_steps == 0) {
            decide(Channel::Map, policy.map, policy.map_rng, cfg.map_policy, map_st,
                   take_window(frames, k, cfg.map_period_steps), t);
        }
        if (step_no % cfg.track_period_steps == 0) {
            decide(Channel::Track, policy.track, policy.track_rng, cfg.track_policy, track_st,
                   take_window(frames, k, cfg.track_period_steps), t);
        }
    }

    // close out trailing transitions at the stream boundary
    auto flush = [&](QTrainer& trainer, ChannelState& st) {
        if (st.pending) {
            st.pending->terminal = true;
            trainer.push(std::move(*st.pending));
            st.pending.reset();
        }
    };
    flush(policy.map, map_st);
    flush(policy.track, track_st);
    return log;
}

}  // namespace sean
