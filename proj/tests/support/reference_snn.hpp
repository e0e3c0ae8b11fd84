#pragma once

// Plain-loop reference implementations of the neuron dynamics and of the
// surrogate-smoothed window forward pass. Written independently of the
// library code paths (no Eigen, scalar arithmetic only) so they can serve as
// oracles for equivalence and finite-difference checks.

#include <cmath>
#include <utility>
#include <vector>

namespace refsnn {

inline double lif_membrane(double v, double input, double v_rest, double tau) {
    return v + (1.0 / tau) * (-(v - v_rest) + input);
}

// hard step; returns (new_v, spike)
inline std::pair<double, int> lif_step(double v, double input, double v_rest, double v_th,
                                       double tau) {
    double h = lif_membrane(v, input, v_rest, tau);
    int spike = h - v_th >= 0.0 ? 1 : 0;
    double v_new = spike ? v_rest : h;
    return {v_new, spike};
}

inline double li_step(double v, double drive, double v_rest, double tau) {
    return v + (1.0 / tau) * (-(v - v_rest) + drive);
}

struct SmallNet {
    int in = 0;
    int m = 0;
    std::vector<double> w;  // m x in, row-major
    std::vector<double> w_on, b_on, w_off, b_off;
    double lif_v_rest = 0.0, lif_v_th = 1.0, lif_tau = 2.0;
    double li_v_rest = 0.0, li_tau = 2.0;
    double k = 4.0;
    bool sigmoid_head = false;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Window forward pass with the Heaviside replaced by the sigmoid surrogate
// everywhere (spikes and resets), starting from rest voltages.
inline std::pair<double, double> smoothed_forward(const SmallNet& net,
                                                  const std::vector<std::vector<double>>& frames) {
    std::vector<double> v_lif(static_cast<std::size_t>(net.in), net.lif_v_rest);
    std::vector<double> v_li(static_cast<std::size_t>(net.m), net.li_v_rest);
    for (const auto& frame : frames) {
        std::vector<double> s(static_cast<std::size_t>(net.in));
        for (int i = 0; i < net.in; ++i) {
            double h = lif_membrane(v_lif[i], frame[static_cast<std::size_t>(i)], net.lif_v_rest,
                                    net.lif_tau);
            double soft = sigmoid(net.k * (h - net.lif_v_th));
            s[static_cast<std::size_t>(i)] = soft;
            v_lif[static_cast<std::size_t>(i)] = h * (1.0 - soft) + net.lif_v_rest * soft;
        }
        for (int j = 0; j < net.m; ++j) {
            double drive = 0.0;
            for (int i = 0; i < net.in; ++i) {
                drive += net.w[static_cast<std::size_t>(j * net.in + i)] *
                         s[static_cast<std::size_t>(i)];
            }
            v_li[static_cast<std::size_t>(j)] =
                li_step(v_li[static_cast<std::size_t>(j)], drive, net.li_v_rest, net.li_tau);
        }
    }
    double q_on = 0.0, q_off = 0.0;
    for (int j = 0; j < net.m; ++j) {
        double z_on = net.w_on[static_cast<std::size_t>(j)] * v_li[static_cast<std::size_t>(j)] +
                      net.b_on[static_cast<std::size_t>(j)];
        double z_off = net.w_off[static_cast<std::size_t>(j)] * v_li[static_cast<std::size_t>(j)] +
                       net.b_off[static_cast<std::size_t>(j)];
        q_on += net.sigmoid_head ? sigmoid(z_on) : z_on;
        q_off += net.sigmoid_head ? sigmoid(z_off) : z_off;
    }
    return {q_on, q_off};
}

}  // namespace refsnn
