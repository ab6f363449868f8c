#include <doctest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "gridcast/codec.hpp"
#include "temp_dir.hpp"

using namespace gridcast;

TEST_SUITE("codec") {

TEST_CASE("heading_bin matches the quadrant oracle on every integer degree") {
    for (int deg = 0; deg < 360; ++deg) {
        const std::uint8_t codes_by_quadrant[4] = {85, 255, 170, 1};
        const std::uint8_t want = codes_by_quadrant[deg / 90];
        CHECK(heading_bin(static_cast<double>(deg)) == want);
    }
    CHECK(heading_bin(45.0) == 85);
    CHECK(heading_bin(0.0) == 85);
    CHECK(heading_bin(300.0) == 1);
    CHECK(heading_bin(90.0) == 255);
    CHECK(heading_bin(359.999) == 1);
    CHECK_THROWS_AS(heading_bin(360.0), DomainError);
    CHECK_THROWS_AS(heading_bin(-0.001), DomainError);
}

TEST_CASE("aggregate_heading is zero exactly on non-unique argmax") {
    const std::uint8_t codes[4] = {85, 255, 170, 1};
    for (std::int64_t a = 0; a <= 4; ++a)
        for (std::int64_t b = 0; b <= 4; ++b)
            for (std::int64_t c = 0; c <= 4; ++c)
                for (std::int64_t d = 0; d <= 4; ++d) {
                    const std::int64_t counts[4] = {a, b, c, d};
                    if (a + b + c + d == 0) {
                        CHECK_THROWS_AS(aggregate_heading(counts), DomainError);
                        continue;
                    }
                    std::int64_t mx = std::max({a, b, c, d});
                    int winners = 0, winner = -1;
                    for (int i = 0; i < 4; ++i)
                        if (counts[i] == mx) {
                            ++winners;
                            winner = i;
                        }
                    const std::uint8_t want = winners == 1 ? codes[winner] : 0;
                    CHECK(aggregate_heading(counts) == want);
                }
    const std::int64_t ne[4] = {5, 1, 0, 0};
    CHECK(aggregate_heading(ne) == 85);
    const std::int64_t tie2[4] = {2, 2, 0, 0};
    CHECK(aggregate_heading(tie2) == 0);
    const std::int64_t tie_sw_nw[4] = {0, 0, 3, 3};
    CHECK(aggregate_heading(tie_sw_nw) == 0);
}

TEST_CASE("encode_volume endpoints, midpoint, monotonicity") {
    CodecParams p;
    CHECK(encode_volume(0, p) == 0);
    CHECK(encode_volume(p.volume_cap_min, p) == 1);
    CHECK(encode_volume(p.volume_cap_max, p) == 255);
    CHECK(encode_volume(p.volume_cap_max + 100, p) == 255);

    CodecParams wide;
    wide.volume_cap_min = 1;
    wide.volume_cap_max = 65;
    CHECK(encode_volume(33, wide) == 128);  // midpoint of [1,65]

    std::uint8_t prev = 0;
    for (std::int64_t n = 0; n <= 300; ++n) {
        const std::uint8_t v = encode_volume(n, p);
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("encode_speed endpoints, midpoint, monotonicity") {
    CodecParams p;
    CHECK(encode_speed(0.0, p) == 0);
    CHECK(encode_speed(p.speed_cap_max, p) == 255);
    CHECK(encode_speed(p.speed_cap_max * 3, p) == 255);
    CHECK(encode_speed(60.0, p) == 128);  // 127.5 rounds half away from zero

    std::uint8_t prev = 0;
    for (double s = 0.0; s <= 200.0; s += 0.5) {
        const std::uint8_t v = encode_speed(s, p);
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("rasterize_probes aggregates per cell") {
    GridSpec spec;
    spec.height = 6;
    spec.width = 5;
    spec.bins_per_day = 4;
    CodecParams params;

    SUBCASE("empty list gives the all-zero movie") {
        TrafficMovie m = rasterize_probes({}, spec, params);
        for (auto b : m.data) CHECK(b == 0);
        CHECK(m.day_index == 0);
    }

    SUBCASE("one probe fills exactly one cell") {
        TrafficMovie m = rasterize_probes({{2, 1, 3, 4, 60.0, 45.0}}, spec, params);
        CHECK(m.day_index == 2);
        CHECK(m.at(1, 3, 4, 0) == encode_speed(60.0, params));
        CHECK(m.at(1, 3, 4, 1) == encode_volume(1, params));
        CHECK(m.at(1, 3, 4, 2) == 85);
        std::int64_t nonzero = 0;
        for (auto b : m.data) nonzero += b != 0;
        CHECK(nonzero == 3);
        validate_movie(m);
    }

    SUBCASE("heading tie in one cell resolves to zero") {
        TrafficMovie m = rasterize_probes(
            {{0, 0, 2, 2, 30.0, 45.0}, {0, 0, 2, 2, 50.0, 135.0}}, spec, params);
        CHECK(m.at(0, 2, 2, 2) == 0);
        CHECK(m.at(0, 2, 2, 1) == encode_volume(2, params));
        CHECK(m.at(0, 2, 2, 0) == encode_speed(40.0, params));
        validate_movie(m);
    }

    SUBCASE("mixed days are rejected") {
        CHECK_THROWS_AS(
            rasterize_probes({{0, 0, 0, 0, 1.0, 1.0}, {1, 0, 0, 0, 1.0, 1.0}}, spec, params),
            DomainError);
    }

    SUBCASE("out-of-grid probe is rejected") {
        CHECK_THROWS_AS(rasterize_probes({{0, 4, 0, 0, 1.0, 1.0}}, spec, params), DomainError);
        CHECK_THROWS_AS(rasterize_probes({{0, 0, 6, 0, 1.0, 1.0}}, spec, params), DomainError);
    }

    SUBCASE("random probe soup keeps the no-data invariant") {
        Rng rng(99);
        std::vector<ProbePoint> probes;
        for (int i = 0; i < 500; ++i)
            probes.push_back({7, static_cast<std::int64_t>(rng.next_below(4)),
                              static_cast<std::int64_t>(rng.next_below(6)),
                              static_cast<std::int64_t>(rng.next_below(5)),
                              rng.next_range(0.0, 150.0), rng.next_range(0.0, 359.99)});
        validate_movie(rasterize_probes(probes, spec, params));
    }
}

TEST_CASE("normalize and denormalize invert each other on every byte value") {
    GridSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.bins_per_day = 1;
    TrafficMovie m = TrafficMovie::zeros(spec, 3);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        m.data[i] = static_cast<std::uint8_t>(i % 256);

    Tensor t = normalize_movie(m);
    CHECK(t.shape() == std::vector<std::int64_t>{1, 16, 16, 3});
    CHECK(t[0] == 0.0);
    CHECK(t[255] == 1.0);
    TrafficMovie back = denormalize_movie(t, spec, 3);
    CHECK(back.data == m.data);
    CHECK(back.day_index == 3);
}

TEST_CASE("snap_heading picks the nearest level with ties toward the smaller") {
    CHECK(snap_heading_level(0.0) == 0);
    CHECK(snap_heading_level(84.0 / 255.0) == 85);
    CHECK(snap_heading_level(0.5) == 85);  // 127.5 is equidistant to 85 and 170
    CHECK(snap_heading_level(1.0) == 255);
    CHECK(snap_heading_level(0.5 / 255.0) == 0);  // midpoint of {0,1} goes down

    // sweep oracle
    for (int i = 0; i <= 1000; ++i) {
        const double v = static_cast<double>(i) / 1000.0;
        const double raw = v * 255.0;
        std::uint8_t want = 0;
        double best = 1e18;
        for (std::uint8_t level : kHeadingLevels)
            if (std::abs(raw - level) < best) {
                best = std::abs(raw - level);
                want = level;
            }
        CHECK(snap_heading_level(v) == want);
    }
    CHECK_THROWS_AS(snap_heading_level(1.5), DomainError);
}

TEST_CASE("movie files round trip bit-exactly") {
    testutil::TempDir tmp("codec");
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        GridSpec spec;
        spec.bins_per_day = 1 + static_cast<std::int64_t>(rng.next_below(5));
        spec.height = 1 + static_cast<std::int64_t>(rng.next_below(6));
        spec.width = 1 + static_cast<std::int64_t>(rng.next_below(6));
        TrafficMovie m = TrafficMovie::zeros(spec, trial);
        for (auto& b : m.data) b = static_cast<std::uint8_t>(rng.next_below(256));

        const std::string path = tmp.file("movie_" + std::to_string(trial) + ".bin");
        MovieMeta meta;
        meta.city = "synthtown";
        write_movie(m, path, meta);
        TrafficMovie r = read_movie(path);
        CHECK(r.spec.bins_per_day == spec.bins_per_day);
        CHECK(r.spec.height == spec.height);
        CHECK(r.spec.width == spec.width);
        CHECK(r.day_index == trial);
        CHECK(r.data == m.data);

        MovieMeta got;
        REQUIRE(read_movie_meta(path, got));
        CHECK(got.city == "synthtown");
        CHECK(got.day_index == trial);
    }
}

TEST_CASE("movie reader names the offending header field") {
    testutil::TempDir tmp("codec_err");
    GridSpec spec;
    spec.bins_per_day = 2;
    spec.height = 4;
    spec.width = 4;
    TrafficMovie m = TrafficMovie::zeros(spec, 0);
    const std::string good = tmp.file("good.bin");
    write_movie(m, good);

    auto mutate = [&](const std::string& name, auto fn) {
        std::ifstream in(good, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        fn(bytes);
        const std::string path = tmp.file(name);
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        return path;
    };

    const std::string bad_magic =
        mutate("bad_magic.bin", [](std::vector<char>& b) { b[0] = 'X'; });
    CHECK_THROWS_WITH_AS(read_movie(bad_magic), doctest::Contains("magic"), FormatError);

    const std::string bad_version =
        mutate("bad_version.bin", [](std::vector<char>& b) { b[4] = 9; });
    CHECK_THROWS_WITH_AS(read_movie(bad_version), doctest::Contains("version"), FormatError);

    const std::string bad_channels = mutate("bad_channels.bin", [](std::vector<char>& b) {
        b[20] = 4;  // channels u32 starts at offset 20
    });
    CHECK_THROWS_WITH_AS(read_movie(bad_channels), doctest::Contains("channels"), FormatError);

    // header says 2*4*4*3 = 96 payload bytes; drop one
    const std::string truncated =
        mutate("truncated.bin", [](std::vector<char>& b) { b.pop_back(); });
    CHECK_THROWS_WITH_AS(read_movie(truncated), doctest::Contains("payload"), FormatError);

    const std::string oversized =
        mutate("oversized.bin", [](std::vector<char>& b) { b.push_back(0); });
    CHECK_THROWS_WITH_AS(read_movie(oversized), doctest::Contains("payload"), FormatError);
}

TEST_CASE("validate_movie rejects bad headings and no-data violations") {
    GridSpec spec;
    spec.bins_per_day = 1;
    spec.height = 2;
    spec.width = 2;
    TrafficMovie m = TrafficMovie::zeros(spec, 0);
    validate_movie(m);

    TrafficMovie bad_heading = m;
    bad_heading.at(0, 0, 0, 1) = 10;  // volume present
    bad_heading.at(0, 0, 0, 2) = 7;   // not a legal level
    CHECK_THROWS_AS(validate_movie(bad_heading), DataError);

    TrafficMovie ghost_speed = m;
    ghost_speed.at(0, 1, 1, 0) = 50;  // speed with volume = 0
    CHECK_THROWS_AS(validate_movie(ghost_speed), DataError);
}

}  // TEST_SUITE
