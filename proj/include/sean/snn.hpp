#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sean/common.hpp"
#include "sean/event_io.hpp"

namespace sean {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Leaky integrate-and-fire layer (input layer, one neuron per spike bit).
// ---------------------------------------------------------------------------

struct LifParams {
    double v_rest = 0.0;
    double v_th = 1.0;
    double tau = 2.0;  // membrane time constant, in steps
};

struct LifLayerState {
    VectorXd v;
    LifParams params;
};

// Membrane update: H = V + (1/tau) * (-(V - V_rest) + E).
inline VectorXd lif_membrane(const LifLayerState& state, const VectorXd& input) {
    const auto& p = state.params;
    return state.v + (1.0 / p.tau) * ((p.v_rest - state.v.array()).matrix() + input);
}

// One hard step. Spike rule is the Heaviside with Theta(0) = 1; every neuron
// that spikes is reset to exactly v_rest.
inline VectorXd lif_step(LifLayerState& state, const VectorXd& input) {
    if (input.size() != state.v.size()) {
        throw DimensionError("lif_step: input size does not match layer size");
    }
    VectorXd h = lif_membrane(state, input);
    VectorXd spikes(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        bool fired = h[i] - state.params.v_th >= 0.0;
        spikes[i] = fired ? 1.0 : 0.0;
        state.v[i] = fired ? state.params.v_rest : h[i];
    }
    return spikes;
}

// ---------------------------------------------------------------------------
// Leaky integrate layer (no spiking, no reset); voltages feed the Q heads.
// ---------------------------------------------------------------------------

struct LiParams {
    double v_rest = 0.0;
    double tau = 2.0;
};

struct LiLayerState {
    VectorXd v;       // M
    MatrixXd w_lif;   // M x IN, weights on the LIF spike outputs
    LiParams params;
};

inline void li_step(LiLayerState& state, const VectorXd& spikes) {
    if (spikes.size() != state.w_lif.cols()) {
        throw DimensionError("li_step: spike vector does not match weight columns");
    }
    const auto& p = state.params;
    VectorXd drive = state.w_lif * spikes;
    state.v += (1.0 / p.tau) * ((p.v_rest - state.v.array()).matrix() + drive);
}

// ---------------------------------------------------------------------------
// ON/OFF Q-value regression head.
// ---------------------------------------------------------------------------

enum class Activation { Identity, Sigmoid };

inline double activate(Activation a, double z) {
    return a == Activation::Identity ? z : 1.0 / (1.0 + std::exp(-z));
}
inline double activate_deriv(Activation a, double z) {
    if (a == Activation::Identity) return 1.0;
    double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 - s);
}

struct QHead {
    VectorXd w_on, b_on, w_off, b_off;
    Activation activation = Activation::Identity;
};

struct QPair {
    double q_on = 0.0;
    double q_off = 0.0;
};

// Q = sum_j sigma(w_j * V_j + b_j), separately for the ON and OFF heads.
inline QPair q_values(const QHead& head, const VectorXd& li_voltages) {
    if (li_voltages.size() != head.w_on.size()) {
        throw DimensionError("q_values: voltage size does not match head size");
    }
    QPair q;
    for (Eigen::Index j = 0; j < li_voltages.size(); ++j) {
        q.q_on += activate(head.activation, head.w_on[j] * li_voltages[j] + head.b_on[j]);
        q.q_off += activate(head.activation, head.w_off[j] * li_voltages[j] + head.b_off[j]);
    }
    return q;
}

// Trigger iff Q_ON >= Q_OFF (ties fire).
inline int select_action(const QPair& q) { return q.q_on - q.q_off >= 0.0 ? 1 : 0; }

// ---------------------------------------------------------------------------
// The SEAN network: LIF -> LI -> (Q_ON, Q_OFF).
// ---------------------------------------------------------------------------

struct SeanConfig {
    int input_size = 768;
    int hidden_size = 128;
    LifParams lif;
    LiParams li;
    double surrogate_k = 4.0;  // slope of the sigmoid spike surrogate
    Activation activation = Activation::Identity;
    bool shared_row = false;   // tie all rows of w_lif together
};

enum class ForwardMode {
    Inference,  // hard Heaviside spikes, hard reset
    Training    // sigmoid-smoothed spikes and reset; differentiable end to end
};

struct Gradients {
    MatrixXd w_lif;
    VectorXd w_on, b_on, w_off, b_off;

    double squared_norm() const {
        return w_lif.squaredNorm() + w_on.squaredNorm() + b_on.squaredNorm() +
               w_off.squaredNorm() + b_off.squaredNorm();
    }
    void scale(double s) {
        w_lif *= s;
        w_on *= s;
        b_on *= s;
        w_off *= s;
        b_off *= s;
    }
};

class SeanNetwork {
public:
    SeanNetwork() = default;

    SeanNetwork(const SeanConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        lif.params = cfg.lif;
        li.params = cfg.li;
        lif.v = VectorXd::Constant(cfg.input_size, cfg.lif.v_rest);
        li.v = VectorXd::Constant(cfg.hidden_size, cfg.li.v_rest);
        li.w_lif = MatrixXd::Zero(cfg.hidden_size, cfg.input_size);
        Rng rng(seed);
        double ws = 1.0 / std::sqrt(static_cast<double>(cfg.input_size));
        if (cfg.shared_row) {
            Eigen::RowVectorXd row(cfg.input_size);
            for (int i = 0; i < cfg.input_size; ++i) row[i] = rng.uniform(-ws, ws);
            li.w_lif.rowwise() = row;
        } else {
            for (int j = 0; j < cfg.hidden_size; ++j)
                for (int i = 0; i < cfg.input_size; ++i) li.w_lif(j, i) = rng.uniform(-ws, ws);
        }
        double hs = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
        head.w_on = VectorXd::Zero(cfg.hidden_size);
        head.w_off = VectorXd::Zero(cfg.hidden_size);
        for (int j = 0; j < cfg.hidden_size; ++j) head.w_on[j] = rng.uniform(-hs, hs);
        for (int j = 0; j < cfg.hidden_size; ++j) head.w_off[j] = rng.uniform(-hs, hs);
        head.b_on = VectorXd::Zero(cfg.hidden_size);
        head.b_off = VectorXd::Zero(cfg.hidden_size);
        head.activation = cfg.activation;
    }

    const SeanConfig& config() const { return cfg_; }
    int input_size() const { return cfg_.input_size; }
    int hidden_size() const { return cfg_.hidden_size; }

    void reset_state() {
        lif.v.setConstant(cfg_.lif.v_rest);
        li.v.setConstant(cfg_.li.v_rest);
    }

    QPair forward_window(const std::vector<SpikeFrame>& frames,
                         ForwardMode mode = ForwardMode::Inference,
                         struct WindowTrace* trace = nullptr);

    Gradients backward_window(const struct WindowTrace& trace, double g_on, double g_off,
                              std::vector<VectorXd>* input_grads = nullptr) const;

    void apply_gradients(const Gradients& g, double learning_rate);

    void save(const std::string& path) const;
    static SeanNetwork load(const std::string& path);

    LifLayerState lif;
    LiLayerState li;
    QHead head;
    long step_count = 0;

private:
    SeanConfig cfg_;
};

// Per-step record of a training-mode forward pass, consumed by
// backward_window. Holds the smoothed LIF trajectory and the final LI state.
struct WindowTrace {
    std::vector<VectorXd> lif_h;    // membrane voltage after dynamics, per step
    std::vector<VectorXd> spikes;   // smoothed spike values, per step
    VectorXd li_v_final;
    VectorXd pre_on, pre_off;       // head pre-activations
    int steps = 0;
};

inline VectorXd frame_to_vector(const SpikeFrame& f) {
    VectorXd v(static_cast<Eigen::Index>(f.bits.size()));
    for (std::size_t i = 0; i < f.bits.size(); ++i) v[static_cast<Eigen::Index>(i)] = f.bits[i];
    return v;
}

inline QPair SeanNetwork::forward_window(const std::vector<SpikeFrame>& frames, ForwardMode mode,
                                         WindowTrace* trace) {
    const double k = cfg_.surrogate_k;
    if (trace) {
        trace->lif_h.clear();
        trace->spikes.clear();
        trace->steps = 0;
    }
    for (const SpikeFrame& f : frames) {
        if (static_cast<Eigen::Index>(f.bits.size()) != lif.v.size()) {
            throw DimensionError("forward_window: frame size does not match input layer");
        }
        VectorXd input = frame_to_vector(f);
        VectorXd spikes;
        if (mode == ForwardMode::Inference) {
            spikes = lif_step(lif, input);
        } else {
            VectorXd h = lif_membrane(lif, input);
            spikes.resize(h.size());
            for (Eigen::Index i = 0; i < h.size(); ++i) {
                spikes[i] = 1.0 / (1.0 + std::exp(-k * (h[i] - lif.params.v_th)));
                lif.v[i] = h[i] * (1.0 - spikes[i]) + lif.params.v_rest * spikes[i];
            }
            if (trace) trace->lif_h.push_back(h);
        }
        li_step(li, spikes);
        if (trace) {
            trace->spikes.push_back(spikes);
            ++trace->steps;
        }
        ++step_count;
    }
    QPair q = q_values(head, li.v);
    if (trace) {
        trace->li_v_final = li.v;
        trace->pre_on = (head.w_on.array() * li.v.array()).matrix() + head.b_on;
        trace->pre_off = (head.w_off.array() * li.v.array()).matrix() + head.b_off;
    }
    return q;
}

inline Gradients SeanNetwork::backward_window(const WindowTrace& trace, double g_on, double g_off,
                                              std::vector<VectorXd>* input_grads) const {
    const int m = cfg_.hidden_size;
    const int in = cfg_.input_size;
    if (trace.li_v_final.size() != m) {
        throw DimensionError("backward_window: trace does not match network dimensions");
    }
    Gradients g;
    g.w_lif = MatrixXd::Zero(m, in);
    g.w_on = VectorXd::Zero(m);
    g.b_on = VectorXd::Zero(m);
    g.w_off = VectorXd::Zero(m);
    g.b_off = VectorXd::Zero(m);

    // head
    VectorXd g_v = VectorXd::Zero(m);  // dL/d(final LI voltage)
    for (int j = 0; j < m; ++j) {
        double d_on = activate_deriv(head.activation, trace.pre_on[j]);
        double d_off = activate_deriv(head.activation, trace.pre_off[j]);
        g.w_on[j] = g_on * d_on * trace.li_v_final[j];
        g.b_on[j] = g_on * d_on;
        g.w_off[j] = g_off * d_off * trace.li_v_final[j];
        g.b_off[j] = g_off * d_off;
        g_v[j] = g_on * d_on * head.w_on[j] + g_off * d_off * head.w_off[j];
    }

    // BPTT through the LI layer: V_t = lambda * V_{t-1} + (1/tau)(V_rest + W s_t)
    const double inv_tau_li = 1.0 / li.params.tau;
    const double lambda_li = 1.0 - inv_tau_li;
    std::vector<VectorXd> g_spikes;  // dL/d(spike vector), per step, reverse order
    if (input_grads) g_spikes.resize(static_cast<std::size_t>(trace.steps));
    VectorXd g_v_t = g_v;
    for (int t = trace.steps - 1; t >= 0; --t) {
        const VectorXd& s_t = trace.spikes[static_cast<std::size_t>(t)];
        g.w_lif.noalias() += (inv_tau_li * g_v_t) * s_t.transpose();
        if (input_grads) {
            g_spikes[static_cast<std::size_t>(t)] = li.w_lif.transpose() * (inv_tau_li * g_v_t);
        }
        g_v_t *= lambda_li;
    }

    // BPTT through the smoothed LIF layer; only feeds the input gradients
    // (there are no trainable parameters upstream of the spikes). The spike
    // surrogate derivative k*s*(1-s) enters here.
    if (input_grads) {
        if (static_cast<int>(trace.lif_h.size()) != trace.steps) {
            throw DimensionError("backward_window: trace lacks membrane records");
        }
        input_grads->assign(static_cast<std::size_t>(trace.steps), VectorXd::Zero(in));
        const double k = cfg_.surrogate_k;
        const double inv_tau = 1.0 / lif.params.tau;
        const double lambda = 1.0 - inv_tau;
        VectorXd g_v_lif = VectorXd::Zero(in);
        for (int t = trace.steps - 1; t >= 0; --t) {
            const VectorXd& h = trace.lif_h[static_cast<std::size_t>(t)];
            const VectorXd& s = trace.spikes[static_cast<std::size_t>(t)];
            VectorXd g_h(in);
            for (int i = 0; i < in; ++i) {
                double gs = g_spikes[static_cast<std::size_t>(t)][i] +
                            g_v_lif[i] * (lif.params.v_rest - h[i]);
                double surrogate = k * s[i] * (1.0 - s[i]);
                g_h[i] = g_v_lif[i] * (1.0 - s[i]) + gs * surrogate;
            }
            (*input_grads)[static_cast<std::size_t>(t)] = inv_tau * g_h;
            g_v_lif = lambda * g_h;
        }
    }
    return g;
}

inline void SeanNetwork::apply_gradients(const Gradients& g, double learning_rate) {
    if (cfg_.shared_row) {
        Eigen::RowVectorXd row_g = g.w_lif.colwise().sum();
        li.w_lif.rowwise() -= learning_rate * row_g;
    } else {
        li.w_lif -= learning_rate * g.w_lif;
    }
    head.w_on -= learning_rate * g.w_on;
    head.b_on -= learning_rate * g.b_on;
    head.w_off -= learning_rate * g.w_off;
    head.b_off -= learning_rate * g.b_off;
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian binary, exact round trip.
// ---------------------------------------------------------------------------

namespace detail {
inline void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void get_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError("checkpoint truncated");
}
inline void put_vec(std::ostream& out, const VectorXd& v) {
    std::uint64_t n = static_cast<std::uint64_t>(v.size());
    put_bytes(out, &n, sizeof n);
    put_bytes(out, v.data(), sizeof(double) * n);
}
inline VectorXd get_vec(std::istream& in) {
    std::uint64_t n = 0;
    get_bytes(in, &n, sizeof n);
    VectorXd v(static_cast<Eigen::Index>(n));
    get_bytes(in, v.data(), sizeof(double) * n);
    return v;
}
}  // namespace detail

inline void SeanNetwork::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    const char magic[8] = {'S', 'E', 'A', 'N', 'N', 'E', 'T', '1'};
    detail::put_bytes(out, magic, sizeof magic);
    std::uint32_t in_sz = static_cast<std::uint32_t>(cfg_.input_size);
    std::uint32_t m_sz = static_cast<std::uint32_t>(cfg_.hidden_size);
    std::uint8_t act = head.activation == Activation::Identity ? 0 : 1;
    std::uint8_t shared = cfg_.shared_row ? 1 : 0;
    detail::put_bytes(out, &in_sz, sizeof in_sz);
    detail::put_bytes(out, &m_sz, sizeof m_sz);
    detail::put_bytes(out, &act, sizeof act);
    detail::put_bytes(out, &shared, sizeof shared);
    double hyper[6] = {cfg_.lif.v_rest, cfg_.lif.v_th,  cfg_.lif.tau,
                       cfg_.li.v_rest,  cfg_.li.tau,    cfg_.surrogate_k};
    detail::put_bytes(out, hyper, sizeof hyper);
    std::int64_t steps = step_count;
    detail::put_bytes(out, &steps, sizeof steps);
    std::uint64_t wn = static_cast<std::uint64_t>(li.w_lif.size());
    detail::put_bytes(out, &wn, sizeof wn);
    detail::put_bytes(out, li.w_lif.data(), sizeof(double) * wn);
    detail::put_vec(out, head.w_on);
    detail::put_vec(out, head.b_on);
    detail::put_vec(out, head.w_off);
    detail::put_vec(out, head.b_off);
    detail::put_vec(out, lif.v);
    detail::put_vec(out, li.v);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

inline SeanNetwork SeanNetwork::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    detail::get_bytes(in, magic, sizeof magic);
    if (std::memcmp(magic, "SEANNET1", 8) != 0) throw ParseError("bad checkpoint magic");
    std::uint32_t in_sz = 0, m_sz = 0;
    std::uint8_t act = 0, shared = 0;
    detail::get_bytes(in, &in_sz, sizeof in_sz);
    detail::get_bytes(in, &m_sz, sizeof m_sz);
    detail::get_bytes(in, &act, sizeof act);
    detail::get_bytes(in, &shared, sizeof shared);
    double hyper[6];
    detail::get_bytes(in, hyper, sizeof hyper);
    std::int64_t steps = 0;
    detail::get_bytes(in, &steps, sizeof steps);

    SeanConfig cfg;
    cfg.input_size = static_cast<int>(in_sz);
    cfg.hidden_size = static_cast<int>(m_sz);
    cfg.lif = LifParams{hyper[0], hyper[1], hyper[2]};
    cfg.li = LiParams{hyper[3], hyper[4]};
    cfg.surrogate_k = hyper[5];
    cfg.activation = act == 0 ? Activation::Identity : Activation::Sigmoid;
    cfg.shared_row = shared != 0;

    SeanNetwork net(cfg, 0);
    net.step_count = steps;
    std::uint64_t wn = 0;
    detail::get_bytes(in, &wn, sizeof wn);
    if (wn != static_cast<std::uint64_t>(net.li.w_lif.size())) {
        throw ParseError("checkpoint weight size mismatch");
    }
    detail::get_bytes(in, net.li.w_lif.data(), sizeof(double) * wn);
    net.head.w_on = detail::get_vec(in);
    net.head.b_on = detail::get_vec(in);
    net.head.w_off = detail::get_vec(in);
    net.head.b_off = detail::get_vec(in);
    net.lif.v = detail::get_vec(in);
    net.li.v = detail::get_vec(in);
    if (net.head.w_on.size() != m_sz || net.lif.v.size() != in_sz) {
        throw ParseError("checkpoint vector size mismatch");
    }
    return net;
}

}  // namespace sean
