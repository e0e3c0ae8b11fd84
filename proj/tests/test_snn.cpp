#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "sean/snn.hpp"
#include "support/reference_snn.hpp"

using namespace sean;
using Catch::Matchers::WithinAbs;

namespace {

SpikeFrame make_frame(std::initializer_list<int> bits, long idx = 0) {
    SpikeFrame f;
    f.step_index = idx;
    for (int b : bits) f.bits.push_back(static_cast<std::uint8_t>(b));
    return f;
}

SeanNetwork small_net(int in, int m, std::uint64_t seed, double v_th = 1.0) {
    SeanConfig cfg;
    cfg.input_size = in;
    cfg.hidden_size = m;
    cfg.lif.v_th = v_th;
    return SeanNetwork(cfg, seed);
}

refsnn::SmallNet to_reference(const SeanNetwork& net) {
    refsnn::SmallNet r;
    r.in = net.input_size();
    r.m = net.hidden_size();
    for (int j = 0; j < r.m; ++j)
        for (int i = 0; i < r.in; ++i) r.w.push_back(net.li.w_lif(j, i));
    for (int j = 0; j < r.m; ++j) {
        r.w_on.push_back(net.head.w_on[j]);
        r.b_on.push_back(net.head.b_on[j]);
        r.w_off.push_back(net.head.w_off[j]);
        r.b_off.push_back(net.head.b_off[j]);
    }
    r.lif_v_rest = net.lif.params.v_rest;
    r.lif_v_th = net.lif.params.v_th;
    r.lif_tau = net.lif.params.tau;
    r.li_v_rest = net.li.params.v_rest;
    r.li_tau = net.li.params.tau;
    r.k = net.config().surrogate_k;
    r.sigmoid_head = net.head.activation == Activation::Sigmoid;
    return r;
}

}  // namespace

TEST_CASE("lif_step scalar behaviour", "[snn]") {
    SECTION("rest is a fixed point") {
        LifLayerState s{VectorXd::Zero(1), LifParams{0.0, 1.0, 2.0}};
        VectorXd sp = lif_step(s, VectorXd::Zero(1));
        CHECK(sp[0] == 0.0);
        CHECK(s.v[0] == 0.0);
    }
    SECTION("exact threshold fires: Theta(0) = 1") {
        LifLayerState s{VectorXd::Zero(1), LifParams{0.0, 1.0, 1.0}};
        VectorXd input(1);
        input << 1.0;
        VectorXd sp = lif_step(s, input);
        CHECK(sp[0] == 1.0);
        CHECK(s.v[0] == 0.0);  // reset to rest, exactly
    }
    SECTION("reference scalar evaluation of the membrane update") {
        LifLayerState s{VectorXd::Zero(1), LifParams{0.0, 1.0, 2.0}};
        s.v[0] = 0.5;
        VectorXd input(1);
        input << 0.4;
        VectorXd sp = lif_step(s, input);
        CHECK(sp[0] == 0.0);
        CHECK_THAT(s.v[0], WithinAbs(0.45, 1e-15));
    }
    SECTION("dimension mismatch throws") {
        LifLayerState s{VectorXd::Zero(2), LifParams{}};
        CHECK_THROWS_AS(lif_step(s, VectorXd::Zero(3)), DimensionError);
    }
}

TEST_CASE("lif/li match the scalar reference on random pairs", "[snn]") {
    Rng rng(1234);
    LifParams lp{0.0, 1.0, 2.0};
    for (int trial = 0; trial < 2000; ++trial) {
        double v = rng.uniform(-2.0, 2.0);
        double e = rng.uniform(-1.0, 2.0);
        LifLayerState s{VectorXd::Constant(1, v), lp};
        VectorXd input(1);
        input << e;
        VectorXd sp = lif_step(s, input);
        auto [rv, rspike] = refsnn::lif_step(v, e, lp.v_rest, lp.v_th, lp.tau);
        REQUIRE(sp[0] == rspike);
        REQUIRE_THAT(s.v[0], WithinAbs(rv, 1e-12));
        if (rspike) REQUIRE(s.v[0] == lp.v_rest);

        // li on the same draw
        LiLayerState li{VectorXd::Constant(1, v), MatrixXd::Constant(1, 1, 0.7), LiParams{0.0, 2.0}};
        VectorXd spikes(1);
        spikes << (rspike ? 1.0 : 0.0);
        li_step(li, spikes);
        double want = refsnn::li_step(v, 0.7 * rspike, 0.0, 2.0);
        REQUIRE_THAT(li.v[0], WithinAbs(want, 1e-12));
    }
}

TEST_CASE("li_step leak and convergence", "[snn]") {
    SECTION("rest with zero drive is a fixed point") {
        LiLayerState s{VectorXd::Zero(3), MatrixXd::Zero(3, 2), LiParams{0.0, 2.0}};
        li_step(s, VectorXd::Zero(2));
        CHECK(s.v.isZero());
    }
    SECTION("pure leak halves the voltage at tau = 2") {
        LiLayerState s{VectorXd::Constant(1, 1.0), MatrixXd::Zero(1, 1), LiParams{0.0, 2.0}};
        li_step(s, VectorXd::Zero(1));
        CHECK_THAT(s.v[0], WithinAbs(0.5, 1e-15));
    }
    SECTION("constant drive converges geometrically to v_rest + c") {
        const double c = 1.7, v_rest = 0.3, tau = 3.0;
        LiLayerState s{VectorXd::Constant(1, v_rest), MatrixXd::Constant(1, 1, c),
                       LiParams{v_rest, tau}};
        VectorXd one = VectorXd::Ones(1);
        double target = v_rest + c;
        double gap0 = std::abs(s.v[0] - target);
        for (int n = 1; n <= 40; ++n) {
            li_step(s, one);
            double expected_gap = gap0 * std::pow(1.0 - 1.0 / tau, n);
            REQUIRE_THAT(std::abs(s.v[0] - target), WithinAbs(expected_gap, 1e-12));
        }
        CHECK_THAT(s.v[0], WithinAbs(target, 1e-5));
    }
}

TEST_CASE("q_values", "[snn]") {
    SECTION("all zeros give (0, 0) under identity") {
        QHead head;
        head.w_on = head.b_on = head.w_off = head.b_off = VectorXd::Zero(4);
        QPair q = q_values(head, VectorXd::Constant(4, 2.0));
        CHECK(q.q_on == 0.0);
        CHECK(q.q_off == 0.0);
    }
    SECTION("single-term arithmetic") {
        QHead head;
        head.w_on = VectorXd::Constant(1, 2.0);
        head.b_on = VectorXd::Constant(1, 1.0);
        head.w_off = VectorXd::Zero(1);
        head.b_off = VectorXd::Zero(1);
        QPair q = q_values(head, VectorXd::Constant(1, 3.0));
        CHECK_THAT(q.q_on, WithinAbs(7.0, 1e-15));
    }
    SECTION("identity head is linear in the voltages") {
        Rng rng(5);
        const int m = 8;
        QHead head;
        head.w_on = head.w_off = VectorXd::Zero(m);
        head.b_on = head.b_off = VectorXd::Zero(m);
        for (int j = 0; j < m; ++j) {
            head.w_on[j] = rng.uniform(-1, 1);
            head.w_off[j] = rng.uniform(-1, 1);
            head.b_on[j] = rng.uniform(-1, 1);
            head.b_off[j] = rng.uniform(-1, 1);
        }
        for (int trial = 0; trial < 50; ++trial) {
            VectorXd a(m), b(m);
            for (int j = 0; j < m; ++j) {
                a[j] = rng.uniform(-2, 2);
                b[j] = rng.uniform(-2, 2);
            }
            double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
            QPair qa = q_values(head, a);
            QPair qb = q_values(head, b);
            QPair qc = q_values(head, alpha * a + beta * b);
            // the bias sum is affine, so compare after removing it
            double bias_on = head.b_on.sum(), bias_off = head.b_off.sum();
            CHECK_THAT(qc.q_on - bias_on,
                       WithinAbs(alpha * (qa.q_on - bias_on) + beta * (qb.q_on - bias_on), 1e-9));
            CHECK_THAT(qc.q_off - bias_off,
                       WithinAbs(alpha * (qa.q_off - bias_off) + beta * (qb.q_off - bias_off),
                                 1e-9));
        }
    }
}

TEST_CASE("select_action", "[snn]") {
    CHECK(select_action(QPair{1.0, 0.5}) == 1);
    CHECK(select_action(QPair{0.5, 1.0}) == 0);
    CHECK(select_action(QPair{0.7, 0.7}) == 1);  // ties fire

    SECTION("invariant under adding a constant to both values") {
        Rng rng(17);
        for (int i = 0; i < 200; ++i) {
            QPair q{rng.uniform(-5, 5), rng.uniform(-5, 5)};
            double c = rng.uniform(-100, 100);
            CHECK(select_action(q) == select_action(QPair{q.q_on + c, q.q_off + c}));
        }
    }
}

TEST_CASE("forward_window semantics", "[snn]") {
    SeanNetwork net = small_net(4, 3, 42);

    SECTION("empty frame sequence reads the current LI voltages") {
        net.li.v << 0.5, -0.2, 1.0;
        QPair direct = q_values(net.head, net.li.v);
        QPair q = net.forward_window({});
        CHECK(q.q_on == direct.q_on);
        CHECK(q.q_off == direct.q_off);
    }

    SECTION("all-zero frames from rest keep Q at the rest value") {
        net.reset_state();
        QPair rest_q = q_values(net.head, net.li.v);
        std::vector<SpikeFrame> frames(5, make_frame({0, 0, 0, 0}));
        QPair q = net.forward_window(frames);
        CHECK_THAT(q.q_on, WithinAbs(rest_q.q_on, 1e-12));
        CHECK_THAT(q.q_off, WithinAbs(rest_q.q_off, 1e-12));
    }

    SECTION("matches the manual composition of per-step ops") {
        Rng rng(9);
        std::vector<SpikeFrame> frames;
        for (int t = 0; t < 12; ++t) {
            SpikeFrame f;
            f.step_index = t;
            for (int i = 0; i < 4; ++i) f.bits.push_back(rng.coin(0.4) ? 1 : 0);
            frames.push_back(f);
        }
        SeanNetwork manual = net;
        for (const auto& f : frames) {
            VectorXd spikes = lif_step(manual.lif, frame_to_vector(f));
            li_step(manual.li, spikes);
        }
        QPair expected = q_values(manual.head, manual.li.v);
        QPair q = net.forward_window(frames);
        CHECK_THAT(q.q_on, WithinAbs(expected.q_on, 1e-14));
        CHECK_THAT(q.q_off, WithinAbs(expected.q_off, 1e-14));
    }

    SECTION("deterministic: same state and frames give the same Q") {
        std::vector<SpikeFrame> frames(7, make_frame({1, 0, 1, 0}));
        SeanNetwork a = small_net(4, 3, 7, 0.5);
        SeanNetwork b = small_net(4, 3, 7, 0.5);
        QPair qa = a.forward_window(frames);
        QPair qb = b.forward_window(frames);
        CHECK(qa.q_on == qb.q_on);
        CHECK(qa.q_off == qb.q_off);
    }

    SECTION("frame size mismatch throws") {
        CHECK_THROWS_AS(net.forward_window({make_frame({1, 0})}), DimensionError);
    }
}

TEST_CASE("spiked neurons reset exactly to the rest voltage", "[snn]") {
    Rng rng(21);
    LifParams lp{0.25, 0.6, 2.0};
    LifLayerState s{VectorXd::Zero(16), lp};
    for (Eigen::Index i = 0; i < 16; ++i) s.v[i] = rng.uniform(-1, 1);
    for (int step = 0; step < 50; ++step) {
        VectorXd input(16);
        for (Eigen::Index i = 0; i < 16; ++i) input[i] = rng.coin(0.5) ? 1.0 : 0.0;
        VectorXd sp = lif_step(s, input);
        for (Eigen::Index i = 0; i < 16; ++i) {
            if (sp[i] == 1.0) REQUIRE(s.v[i] == lp.v_rest);
        }
    }
}

TEST_CASE("zero input contracts voltages by (1 - 1/tau) per step", "[snn]") {
    LifParams lp{0.5, 10.0, 4.0};
    LifLayerState lif{VectorXd::Constant(3, 2.0), lp};
    LiLayerState li{VectorXd::Constant(3, -1.0), MatrixXd::Zero(3, 3), LiParams{0.5, 4.0}};
    double gap_lif = std::abs(2.0 - lp.v_rest);
    double gap_li = std::abs(-1.0 - 0.5);
    for (int n = 0; n < 30; ++n) {
        double prev_lif = gap_lif, prev_li = gap_li;
        lif_step(lif, VectorXd::Zero(3));
        li_step(li, VectorXd::Zero(3));
        gap_lif = std::abs(lif.v[0] - lp.v_rest);
        gap_li = std::abs(li.v[0] - 0.5);
        REQUIRE(gap_lif <= prev_lif);
        REQUIRE_THAT(gap_lif, WithinAbs(prev_lif * 0.75, 1e-12));
        REQUIRE_THAT(gap_li, WithinAbs(prev_li * 0.75, 1e-12));
    }
}

TEST_CASE("backward_window gradients", "[snn]") {
    SECTION("zero target gradient gives zero parameter gradients") {
        SeanNetwork net = small_net(4, 3, 3, 0.5);
        WindowTrace trace;
        net.reset_state();
        net.forward_window({make_frame({1, 0, 1, 1}), make_frame({0, 1, 0, 0})},
                           ForwardMode::Training, &trace);
        Gradients g = net.backward_window(trace, 0.0, 0.0);
        CHECK(g.w_lif.isZero());
        CHECK(g.w_on.isZero());
        CHECK(g.b_on.isZero());
        CHECK(g.w_off.isZero());
        CHECK(g.b_off.isZero());
    }

    SECTION("single step, identity head: dQ_on/dw_on[j] equals V_j") {
        SeanNetwork net = small_net(4, 3, 8, 0.5);
        WindowTrace trace;
        net.reset_state();
        net.forward_window({make_frame({1, 1, 0, 1})}, ForwardMode::Training, &trace);
        Gradients g = net.backward_window(trace, 1.0, 0.0);
        for (int j = 0; j < 3; ++j) {
            CHECK_THAT(g.w_on[j], WithinAbs(net.li.v[j], 1e-14));
            CHECK_THAT(g.b_on[j], WithinAbs(1.0, 1e-14));
        }
        CHECK(g.w_off.isZero());
    }

    SECTION("matches central finite differences of the smoothed forward") {
        // IN=4, M=3, 5-step windows over many seeds; relative error <= 1e-4
        for (std::uint64_t seed = 1; seed <= 25; ++seed) {
            SeanConfig cfg;
            cfg.input_size = 4;
            cfg.hidden_size = 3;
            cfg.lif = LifParams{0.1, 0.6, 2.5};
            cfg.li = LiParams{0.05, 3.0};
            cfg.surrogate_k = 4.0;
            SeanNetwork net(cfg, seed);

            Rng rng(seed * 77 + 1);
            std::vector<SpikeFrame> frames;
            std::vector<std::vector<double>> raw_frames;
            for (int t = 0; t < 5; ++t) {
                SpikeFrame f;
                f.step_index = t;
                std::vector<double> raw;
                for (int i = 0; i < 4; ++i) {
                    int bit = rng.coin(0.5) ? 1 : 0;
                    f.bits.push_back(static_cast<std::uint8_t>(bit));
                    raw.push_back(bit);
                }
                frames.push_back(f);
                raw_frames.push_back(raw);
            }

            net.reset_state();
            WindowTrace trace;
            net.forward_window(frames, ForwardMode::Training, &trace);
            double g_on = rng.uniform(-1, 1);
            double g_off = rng.uniform(-1, 1);
            Gradients g = net.backward_window(trace, g_on, g_off);

            refsnn::SmallNet ref = to_reference(net);
            const double h = 1e-6;
            auto fd = [&](double* param) {
                double saved = *param;
                *param = saved + h;
                auto [on_p, off_p] = refsnn::smoothed_forward(ref, raw_frames);
                *param = saved - h;
                auto [on_m, off_m] = refsnn::smoothed_forward(ref, raw_frames);
                *param = saved;
                return (g_on * (on_p - on_m) + g_off * (off_p - off_m)) / (2 * h);
            };
            auto check = [&](double got, double want) {
                double scale = std::max({std::abs(want), std::abs(got), 1e-6});
                REQUIRE(std::abs(got - want) / scale <= 1e-4);
            };
            for (int j = 0; j < 3; ++j) {
                for (int i = 0; i < 4; ++i) {
                    check(g.w_lif(j, i), fd(&ref.w[static_cast<std::size_t>(j * 4 + i)]));
                }
                check(g.w_on[j], fd(&ref.w_on[static_cast<std::size_t>(j)]));
                check(g.b_on[j], fd(&ref.b_on[static_cast<std::size_t>(j)]));
                check(g.w_off[j], fd(&ref.w_off[static_cast<std::size_t>(j)]));
                check(g.b_off[j], fd(&ref.b_off[static_cast<std::size_t>(j)]));
            }
        }
    }

    SECTION("input gradients carry the spike surrogate") {
        SeanConfig cfg;
        cfg.input_size = 3;
        cfg.hidden_size = 2;
        cfg.lif = LifParams{0.0, 0.5, 2.0};
        cfg.surrogate_k = 4.0;
        SeanNetwork net(cfg, 5);
        std::vector<SpikeFrame> frames = {make_frame({1, 0, 1}), make_frame({0, 1, 0}),
                                          make_frame({1, 1, 0})};
        net.reset_state();
        WindowTrace trace;
        net.forward_window(frames, ForwardMode::Training, &trace);
        std::vector<VectorXd> input_grads;
        net.backward_window(trace, 0.7, -0.3, &input_grads);
        REQUIRE(input_grads.size() == 3);

        // finite differences on the smoothed forward w.r.t. one input entry
        refsnn::SmallNet ref = to_reference(net);
        std::vector<std::vector<double>> raw = {{1, 0, 1}, {0, 1, 0}, {1, 1, 0}};
        const double h = 1e-6;
        for (std::size_t t = 0; t < raw.size(); ++t) {
            for (std::size_t i = 0; i < 3; ++i) {
                double saved = raw[t][i];
                raw[t][i] = saved + h;
                auto [on_p, off_p] = refsnn::smoothed_forward(ref, raw);
                raw[t][i] = saved - h;
                auto [on_m, off_m] = refsnn::smoothed_forward(ref, raw);
                raw[t][i] = saved;
                double want = (0.7 * (on_p - on_m) + (-0.3) * (off_p - off_m)) / (2 * h);
                REQUIRE_THAT(input_grads[t][static_cast<Eigen::Index>(i)],
                             WithinAbs(want, 1e-6 + 1e-4 * std::abs(want)));
            }
        }
    }
}

TEST_CASE("checkpoint round trip is exact", "[snn]") {
    SeanConfig cfg;
    cfg.input_size = 6;
    cfg.hidden_size = 4;
    cfg.lif = LifParams{0.1, 0.7, 2.5};
    cfg.li = LiParams{0.2, 3.5};
    cfg.surrogate_k = 7.0;
    cfg.activation = Activation::Sigmoid;
    SeanNetwork net(cfg, 1001);
    net.step_count = 12345;
    net.lif.v[2] = 0.123456789012345;
    net.li.v[1] = -5.4321;

    auto path = (std::filesystem::temp_directory_path() / "sean_ckpt_test.bin").string();
    net.save(path);
    SeanNetwork loaded = SeanNetwork::load(path);

    CHECK(loaded.config().input_size == 6);
    CHECK(loaded.config().hidden_size == 4);
    CHECK(loaded.config().surrogate_k == 7.0);
    CHECK(loaded.head.activation == Activation::Sigmoid);
    CHECK(loaded.step_count == 12345);
    CHECK(loaded.li.w_lif == net.li.w_lif);
    CHECK(loaded.head.w_on == net.head.w_on);
    CHECK(loaded.head.b_on == net.head.b_on);
    CHECK(loaded.head.w_off == net.head.w_off);
    CHECK(loaded.head.b_off == net.head.b_off);
    CHECK(loaded.lif.v == net.lif.v);
    CHECK(loaded.li.v == net.li.v);
}

TEST_CASE("shared-row mode keeps all weight rows identical", "[snn]") {
    SeanConfig cfg;
    cfg.input_size = 5;
    cfg.hidden_size = 3;
    cfg.shared_row = true;
    cfg.lif.v_th = 0.5;
    SeanNetwork net(cfg, 4);
    for (int j = 1; j < 3; ++j) {
        CHECK(net.li.w_lif.row(j) == net.li.w_lif.row(0));
    }
    // gradients keep the rows tied
    net.reset_state();
    WindowTrace trace;
    net.forward_window({make_frame({1, 0, 1, 0, 1}), make_frame({0, 1, 0, 1, 0})},
                       ForwardMode::Training, &trace);
    Gradients g = net.backward_window(trace, 1.0, -0.5);
    net.apply_gradients(g, 0.1);
    for (int j = 1; j < 3; ++j) {
        CHECK(net.li.w_lif.row(j) == net.li.w_lif.row(0));
    }
}
