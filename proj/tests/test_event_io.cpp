#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sean/event_io.hpp"

using namespace sean;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

}  // namespace

TEST_CASE("parse maps fields directly", "[event_io]") {
    auto path = temp_path("events_basic.txt");
    write_text(path, "0.001 5 7 1\n");
    auto events = parse_event_file(path, 640, 480);
    REQUIRE(events.size() == 1);
    CHECK(events[0].t == 0.001);
    CHECK(events[0].x == 5);
    CHECK(events[0].y == 7);
    CHECK(events[0].p == 1);
}

TEST_CASE("parse rejects bad polarity with line number", "[event_io]") {
    auto path = temp_path("events_badpol.txt");
    write_text(path, "0.001 5 7 2\n");
    REQUIRE_THROWS_MATCHES(parse_event_file(path, 640, 480), ParseError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring(":1:")));
}

TEST_CASE("parse rejects malformed lines and bounds", "[event_io]") {
    auto path = temp_path("events_malformed.txt");
    write_text(path, "0.001 5\n");
    CHECK_THROWS_AS(parse_event_file(path, 640, 480), ParseError);
    write_text(path, "0.001 640 0 1\n");
    CHECK_THROWS_AS(parse_event_file(path, 640, 480), ParseError);
    write_text(path, "-0.5 5 7 1\n");
    CHECK_THROWS_AS(parse_event_file(path, 640, 480), ParseError);
}

TEST_CASE("strict ordering rejects non-monotone timestamps", "[event_io]") {
    auto path = temp_path("events_order.txt");
    write_text(path, "0.002 1 1 0\n0.001 2 2 1\n");
    CHECK_THROWS_AS(parse_event_file(path, 640, 480, OrderPolicy::Strict), ParseError);
    auto sorted = parse_event_file(path, 640, 480, OrderPolicy::Sort);
    REQUIRE(sorted.size() == 2);
    CHECK(sorted[0].t == 0.001);
    CHECK(sorted[1].t == 0.002);
}

TEST_CASE("write/parse round trip is identical", "[event_io]") {
    Rng rng(99);
    std::vector<Event> events;
    double t = 0.0;
    for (int i = 0; i < 500; ++i) {
        t += rng.uniform01() * 0.01;
        events.push_back(Event{t, static_cast<int>(rng.uniform_index(320)),
                               static_cast<int>(rng.uniform_index(200)),
                               rng.coin(0.5) ? 1 : 0});
    }
    auto path = temp_path("events_roundtrip.txt");
    write_event_file(path, events);
    auto parsed = parse_event_file(path, 320, 200);
    REQUIRE(parsed == events);
}

TEST_CASE("window selection is a closed interval", "[event_io]") {
    std::vector<Event> stream = {{0.5, 0, 0, 0}, {1.0, 1, 0, 1}, {1.5, 2, 0, 0}};
    auto w = window_events(stream, 1.2, 0.5);
    REQUIRE(w.events.size() == 1);
    CHECK(w.events[0].t == 1.0);

    auto empty = window_events({}, 1.0, 0.5);
    CHECK(empty.events.empty());

    // boundary inclusion on both ends
    std::vector<Event> one = {{1.0, 0, 0, 0}};
    CHECK(window_events(one, 1.0, 0.001).events.size() == 1);
    CHECK(window_events(one, 1.001, 0.001).events.size() == 1);

    CHECK_THROWS_AS(window_events(stream, 1.0, 0.0), RangeError);
}

TEST_CASE("windows partition a stream against their complement", "[event_io]") {
    Rng rng(7);
    std::vector<Event> stream;
    double t = 0.0;
    for (int i = 0; i < 300; ++i) {
        t += rng.uniform01() * 0.02;
        stream.push_back(Event{t, 0, 0, 1});
    }
    for (double query : {0.3, 1.0, 2.5}) {
        for (double t_w : {0.05, 0.7}) {
            auto w = window_events(stream, query, t_w);
            std::size_t outside = 0;
            for (const auto& e : stream) {
                if (e.t > query) continue;
                if (e.t < query - t_w) ++outside;
            }
            std::size_t inside_up_to_query = 0;
            for (const auto& e : w.events) {
                REQUIRE(e.t >= query - t_w);
                REQUIRE(e.t <= query);
                ++inside_up_to_query;
            }
            std::size_t total_up_to_query = 0;
            for (const auto& e : stream)
                if (e.t <= query) ++total_up_to_query;
            CHECK(inside_up_to_query + outside == total_up_to_query);
        }
    }
}

TEST_CASE("encoder produces expected bits", "[event_io]") {
    EncoderConfig cfg;
    cfg.sensor_width = 64;
    cfg.sensor_height = 64;
    cfg.grid_w = 4;
    cfg.grid_h = 4;
    SpikeEncoder enc(cfg);

    SECTION("no events give an all-zero frame") {
        auto f = enc.encode(std::vector<Event>{}, 0);
        CHECK(f.count() == 0);
        CHECK(f.bits.size() == 16);
    }

    SECTION("one centred event sets exactly the centre cell") {
        std::vector<Event> ev = {{0.0005, 32, 32, 1}};
        auto f = enc.encode(ev, 0);
        CHECK(f.count() == 1);
        // cell (2,2) of the 4x4 grid
        CHECK(f.bits[2 * 4 + 2] == 1);
    }

    SECTION("bits saturate: three events in one cell set one bit") {
        std::vector<Event> ev = {{0.0001, 1, 1, 0}, {0.0005, 2, 2, 1}, {0.0009, 3, 3, 0}};
        auto f = enc.encode(ev, 0);
        CHECK(f.count() == 1);
        CHECK(f.bits[0] == 1);
    }

    SECTION("duplicating events leaves the frame unchanged") {
        Rng rng(3);
        std::vector<Event> ev;
        for (int i = 0; i < 40; ++i) {
            ev.push_back(Event{0.0005, static_cast<int>(rng.uniform_index(64)),
                               static_cast<int>(rng.uniform_index(64)), rng.coin(0.5) ? 1 : 0});
        }
        auto base = enc.encode(ev, 0);
        auto doubled = ev;
        doubled.insert(doubled.end(), ev.begin(), ev.end());
        auto f2 = enc.encode(doubled, 0);
        CHECK(f2.bits == base.bits);
    }

    SECTION("out-of-bounds event raises") {
        std::vector<Event> ev = {{0.0, 64, 0, 1}};
        CHECK_THROWS_AS(enc.encode(ev, 0), RangeError);
    }
}

TEST_CASE("polarity split doubles the bit planes", "[event_io]") {
    EncoderConfig cfg;
    cfg.sensor_width = 8;
    cfg.sensor_height = 1;
    cfg.grid_w = 8;
    cfg.grid_h = 1;
    cfg.polarity_split = true;
    SpikeEncoder enc(cfg);
    CHECK(enc.input_size() == 16);
    std::vector<Event> ev = {{0.0, 3, 0, 0}, {0.0, 3, 0, 1}};
    auto f = enc.encode(ev, 0);
    CHECK(f.bits[3] == 1);
    CHECK(f.bits[8 + 3] == 1);
    CHECK(f.count() == 2);
}

TEST_CASE("encode_stream slices frames at millisecond boundaries", "[event_io]") {
    EncoderConfig cfg;
    cfg.sensor_width = 8;
    cfg.sensor_height = 1;
    cfg.grid_w = 8;
    cfg.grid_h = 1;
    SpikeEncoder enc(cfg);
    std::vector<Event> stream = {{0.0004, 0, 0, 1}, {0.0010, 1, 0, 1}, {0.0011, 2, 0, 1}};
    auto frames = encode_stream(stream, enc, 0.0, 0.003);
    REQUIRE(frames.size() == 3);
    CHECK(frames[0].count() == 2);  // (0, 1ms] holds t=0.0004 and t=0.0010
    CHECK(frames[1].count() == 1);
    CHECK(frames[2].count() == 0);
}
