#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "gridcast/sampler.hpp"
#include "gridcast/synth.hpp"
#include "temp_dir.hpp"

using namespace gridcast;

namespace {

// Independent re-derivation of the window start bins for one day.
std::vector<std::int64_t> brute_force_starts(std::int64_t bins, std::int64_t q,
                                             Strategy strategy) {
    std::vector<std::int64_t> out;
    if (strategy == Strategy::non_overlapping) {
        std::int64_t cursor = 0;  // greedy packing of [cursor, cursor+q+3)
        while (cursor + q + 3 <= bins) {
            out.push_back(cursor + q);
            cursor += q + 3;
        }
    } else {
        for (std::int64_t s = 0; s <= bins; ++s)
            if (s - q >= 0 && s + 3 <= bins) out.push_back(s);
    }
    return out;
}

struct TinyDataset {
    testutil::TempDir dir{"sampler"};
    Manifest manifest;
    WeatherTable weather{1, 1};
    ExoScaling scaling;

    TinyDataset(std::int64_t num_days, std::int64_t size, std::int64_t bins,
                std::uint64_t seed = 7) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.num_days = num_days;
        cfg.rush_hours = {{bins / 2, 4}};
        cfg.noise_level = 0.2;
        GridSpec spec;
        spec.height = size;
        spec.width = size;
        spec.bins_per_day = bins;
        CityTemplate city = generate_city(cfg.seed, spec);
        CodecParams codec;

        manifest.city = "tinytown";
        manifest.grid = spec;
        manifest.codec = codec;
        manifest.week_offset = 2;
        weather = generate_weather(cfg.seed, num_days, spec.bins_per_day);
        const std::string weather_path = dir.file("weather.csv");
        write_weather(weather, weather_path);
        manifest.weather_path = weather_path;
        for (std::int64_t d = 0; d < num_days; ++d) {
            TrafficMovie movie = simulate_day(city, cfg, d, codec);
            const std::string path = dir.file("day" + std::to_string(d) + ".t4cm");
            write_movie(movie, path, {manifest.city, d, codec});
            manifest.days.push_back({d, path, d + 1 == num_days ? "val" : "train"});
        }
    }
};

}  // namespace

TEST_CASE("strategy names round trip and reject junk") {
    for (Strategy s :
         {Strategy::non_overlapping, Strategy::all_slots, Strategy::like_test})
        CHECK(strategy_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(strategy_from_string("every_other"), ConfigError);
}

TEST_CASE("sequence counts match the reference figures") {
    // one year minus the held-out week, five-minute bins, three input frames
    CHECK(count_sequences(288, 3, Strategy::non_overlapping, 285) == 13680);
    CHECK(count_sequences(288, 3, Strategy::all_slots, 285) == 80655);
    CHECK(count_sequences(288, 3, Strategy::like_test, 285, 5) == 1425);

    CHECK(count_sequences(6, 3, Strategy::all_slots, 1) == 1);
    CHECK(count_sequences(288, 9, Strategy::non_overlapping, 1) == 24);
    CHECK(count_sequences(288, 12, Strategy::all_slots, 1) == 274);

    CHECK_THROWS_AS(count_sequences(288, 0, Strategy::all_slots, 1), DomainError);
    CHECK_THROWS_AS(count_sequences(288, 13, Strategy::all_slots, 1), DomainError);
    CHECK_THROWS_AS(count_sequences(5, 3, Strategy::all_slots, 1), DomainError);
    CHECK_THROWS_AS(count_sequences(288, 3, Strategy::all_slots, -1), DomainError);
}

TEST_CASE("non-overlapping windows tile the day") {
    auto windows = enumerate_windows({0}, 12, 3, Strategy::non_overlapping);
    REQUIRE(windows.size() == 2);
    CHECK(windows[0].start_bin == 3);
    CHECK(windows[1].start_bin == 9);
    for (const auto& w : windows) {
        CHECK(w.day_index == 0);
        CHECK(w.input_len == 3);
    }
}

TEST_CASE("window enumeration agrees with brute force") {
    for (std::int64_t bins = 4; bins <= 50; ++bins) {
        for (std::int64_t q = 1; q <= 6; ++q) {
            if (bins < q + 3) continue;
            for (Strategy strategy : {Strategy::non_overlapping, Strategy::all_slots}) {
                const auto want = brute_force_starts(bins, q, strategy);
                const auto got = enumerate_windows({0, 4}, bins, q, strategy);
                REQUIRE(got.size() == 2 * want.size());
                CHECK(static_cast<std::int64_t>(got.size()) ==
                      count_sequences(bins, q, strategy, 2));
                for (std::size_t i = 0; i < want.size(); ++i) {
                    CHECK(got[i].day_index == 0);
                    CHECK(got[want.size() + i].day_index == 4);
                    CHECK(got[i].start_bin == want[i]);
                    CHECK(got[want.size() + i].start_bin == want[i]);
                }
                // every window fits inside the day
                for (const auto& w : got) {
                    CHECK(w.start_bin - q >= 0);
                    CHECK(w.start_bin + 3 <= bins);
                }
                if (strategy == Strategy::non_overlapping) {
                    // spans [s-q, s+3) must be pairwise disjoint within a day
                    std::int64_t prev_end = -1;
                    for (std::size_t i = 0; i < want.size(); ++i) {
                        CHECK(want[i] - q >= prev_end);
                        prev_end = want[i] + 3;
                    }
                }
            }
        }
    }
}

TEST_CASE("test-aligned windows use the city's start bins") {
    const std::vector<std::int64_t> moscow = {57, 114, 174, 222, 258};
    auto windows = enumerate_windows({10, 11}, 288, 12, Strategy::like_test, moscow);
    REQUIRE(windows.size() == 10);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(windows[i].day_index == 10);
        CHECK(windows[i].start_bin == moscow[i]);
        CHECK(windows[5 + i].day_index == 11);
    }

    SUBCASE("starts too early for q are skipped and reported") {
        std::vector<std::int64_t> skipped;
        auto early = enumerate_windows({0}, 288, 12, Strategy::like_test, {5, 30, 57},
                                       &skipped);
        REQUIRE(early.size() == 2);
        CHECK(early[0].start_bin == 30);
        REQUIRE(skipped.size() == 1);
        CHECK(skipped[0] == 5);
    }
    SUBCASE("a start bin past the day is an error") {
        CHECK_THROWS_AS(enumerate_windows({0}, 288, 3, Strategy::like_test, {286}),
                        DomainError);
    }
    SUBCASE("the bin list is required") {
        CHECK_THROWS_AS(enumerate_windows({0}, 288, 3, Strategy::like_test), DomainError);
    }
}

TEST_CASE("epoch shuffling permutes deterministically") {
    auto windows = enumerate_windows({0, 1, 2}, 48, 3, Strategy::all_slots);
    auto a = build_epoch_index(windows, 0, 99);
    auto b = build_epoch_index(windows, 0, 99);
    CHECK(a.windows == b.windows);

    auto later = build_epoch_index(windows, 1, 99);
    auto other_seed = build_epoch_index(windows, 0, 100);
    CHECK(a.windows != later.windows);
    CHECK(a.windows != other_seed.windows);

    // same multiset in every ordering
    auto sorted = [](std::vector<SequenceWindow> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(a.windows) == sorted(windows));
    CHECK(sorted(later.windows) == sorted(windows));

    CHECK_THROWS_AS(build_epoch_index({}, 0, 1), DomainError);
}

TEST_CASE("manifests round trip through disk") {
    TinyDataset data(3, 16, 24);
    const std::string path = data.dir.file("manifest.json");
    write_manifest(data.manifest, path);
    Manifest loaded = read_manifest(path);

    CHECK(loaded.city == "tinytown");
    CHECK(loaded.grid.height == 16);
    CHECK(loaded.grid.bins_per_day == 24);
    CHECK(loaded.codec.volume_cap_max == data.manifest.codec.volume_cap_max);
    CHECK(loaded.week_offset == 2);
    REQUIRE(loaded.days.size() == 3);
    CHECK(loaded.days[0].role == "train");
    CHECK(loaded.days[2].role == "val");
    CHECK(loaded.day_indices("train") == std::vector<std::int64_t>{0, 1});
    CHECK(loaded.day_indices("val") == std::vector<std::int64_t>{2});
    CHECK(loaded.day_indices("") == std::vector<std::int64_t>{0, 1, 2});

    SUBCASE("relative paths resolve against the manifest directory") {
        Manifest rel = data.manifest;
        for (auto& d : rel.days)
            d.movie_path = std::filesystem::path(d.movie_path).filename().string();
        rel.weather_path = "weather.csv";
        const std::string rel_path = data.dir.file("rel_manifest.json");
        write_manifest(rel, rel_path);
        Manifest back = read_manifest(rel_path);
        for (const auto& d : back.days) CHECK(std::filesystem::exists(d.movie_path));
        CHECK(std::filesystem::exists(back.weather_path));
    }
    SUBCASE("unknown roles are rejected") {
        Manifest bad = data.manifest;
        bad.days[1].role = "test";
        const std::string bad_path = data.dir.file("bad_manifest.json");
        write_manifest(bad, bad_path);
        CHECK_THROWS_AS(read_manifest(bad_path), FormatError);
    }
    SUBCASE("a manifest without days is rejected") {
        Manifest bad = data.manifest;
        bad.days.clear();
        const std::string bad_path = data.dir.file("empty_manifest.json");
        CHECK_THROWS_AS(write_manifest(bad, bad_path), FormatError);
    }
    SUBCASE("junk json is a format error") {
        const std::string junk_path = data.dir.file("junk.json");
        std::ofstream(junk_path) << "{ not json";
        CHECK_THROWS_AS(read_manifest(junk_path), FormatError);
    }
    CHECK_THROWS_AS(read_manifest(data.dir.file("nope.json")), IoError);
}

TEST_CASE("the movie store caches days and names failures") {
    TinyDataset data(2, 16, 24);
    MovieStore store(data.manifest);

    const TrafficMovie& first = store.movie(0);
    const TrafficMovie& again = store.movie(0);
    CHECK(&first == &again);  // cached, not re-read
    CHECK(first.day_index == 0);
    CHECK(store.movie(1).day_index == 1);

    SUBCASE("a day outside the manifest is a data error naming the city") {
        try {
            store.movie(9);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("tinytown") != std::string::npos);
            CHECK(msg.find("9") != std::string::npos);
        }
    }
    SUBCASE("an unreadable movie file is a data error") {
        Manifest broken = data.manifest;
        broken.days[0].movie_path = data.dir.file("missing.t4cm");
        MovieStore bad(broken);
        CHECK_THROWS_AS(bad.movie(0), DataError);
    }
    SUBCASE("dims that disagree with the manifest are rejected") {
        Manifest lying = data.manifest;
        lying.grid.height = 32;
        MovieStore bad(lying);
        CHECK_THROWS_AS(bad.movie(0), DataError);
    }
}

TEST_CASE("batch assembly slices frames and anchors the context vector") {
    TinyDataset data(2, 16, 24);
    MovieStore store(data.manifest);
    const std::int64_t q = 3;
    std::vector<SequenceWindow> windows = {{0, 5, q}, {1, 21, q}, {0, 12, q}};
    Batch batch = assemble_batch(windows, store, data.weather, data.scaling,
                                 data.manifest.week_offset);

    CHECK(batch.size() == 3);
    CHECK(batch.inputs.shape() == std::vector<std::int64_t>{3, q, 16, 16, 3});
    CHECK(batch.targets.shape() == std::vector<std::int64_t>{3, 3, 16, 16, 3});
    CHECK(batch.exo.shape() == std::vector<std::int64_t>{3, kExoDim});
    CHECK(batch.window_refs == windows);

    // spot-check the scaling against the raw movie bytes
    const TrafficMovie& movie = store.movie(0);
    const std::int64_t frame = movie.spec.frame_elems();
    bool saw_nonzero = false;
    for (std::int64_t e = 0; e < q * frame; ++e) {
        const double want =
            static_cast<double>(movie.data[static_cast<std::size_t>((5 - q) * frame + e)]) /
            255.0;
        CHECK(batch.inputs[e] == want);
        saw_nonzero = saw_nonzero || want > 0.0;
    }
    CHECK(saw_nonzero);
    for (std::int64_t e = 0; e < 3 * frame; ++e)
        CHECK(batch.targets[e] ==
              static_cast<double>(movie.data[static_cast<std::size_t>(5 * frame + e)]) / 255.0);
    for (std::int64_t e = 0; e < batch.inputs.numel(); ++e) {
        CHECK(batch.inputs[e] >= 0.0);
        CHECK(batch.inputs[e] <= 1.0);
    }

    // the context row equals a direct encoding at bin s-1
    const auto direct = assemble_exo(make_calendar_stamp(1, 20, data.manifest.week_offset),
                                     data.weather, data.scaling);
    for (std::int64_t k = 0; k < kExoDim; ++k)
        CHECK(batch.exo[kExoDim + k] == direct[static_cast<std::size_t>(k)]);

    SUBCASE("mixed q in one batch is rejected") {
        std::vector<SequenceWindow> mixed = {{0, 5, 3}, {0, 9, 4}};
        CHECK_THROWS_AS(
            assemble_batch(mixed, store, data.weather, data.scaling, 0), DomainError);
    }
    SUBCASE("windows poking outside the day are rejected") {
        CHECK_THROWS_AS(assemble_batch({{0, 2, 3}}, store, data.weather, data.scaling, 0),
                        DomainError);
        CHECK_THROWS_AS(assemble_batch({{0, 22, 3}}, store, data.weather, data.scaling, 0),
                        DomainError);
    }
    SUBCASE("an empty batch is rejected") {
        CHECK_THROWS_AS(assemble_batch({}, store, data.weather, data.scaling, 0), DomainError);
    }
}

TEST_CASE("the prefetch pipeline emits the same ordered batches at any worker count") {
    TinyDataset data(3, 16, 24);
    MovieStore store(data.manifest);
    auto windows = enumerate_windows(data.manifest.day_indices("train"), 24, 3,
                                     Strategy::all_slots);
    auto index = build_epoch_index(windows, 2, 1234);
    const std::int64_t batch_size = 5;
    const std::int64_t n = static_cast<std::int64_t>(windows.size());

    struct Fingerprint {
        std::vector<SequenceWindow> refs;
        std::uint64_t inputs, targets, exo;
        bool operator==(const Fingerprint&) const = default;
    };
    auto drain = [&](int workers) {
        MovieStore fresh(data.manifest);  // separate cache per run
        BatchPipeline pipe(index, batch_size, fresh, data.weather, data.scaling,
                           data.manifest.week_offset, workers);
        CHECK(pipe.batch_count() == (n + batch_size - 1) / batch_size);
        std::vector<Fingerprint> out;
        while (auto batch = pipe.next())
            out.push_back({batch->window_refs, tensor_checksum(batch->inputs),
                           tensor_checksum(batch->targets), tensor_checksum(batch->exo)});
        CHECK(!pipe.next().has_value());  // stays exhausted
        return out;
    };

    const auto serial = drain(0);
    REQUIRE(static_cast<std::int64_t>(serial.size()) == (n + batch_size - 1) / batch_size);

    // every window appears exactly once, and the tail batch is the remainder
    std::vector<SequenceWindow> seen;
    for (const auto& f : serial) seen.insert(seen.end(), f.refs.begin(), f.refs.end());
    CHECK(static_cast<std::int64_t>(seen.size()) == n);
    CHECK(serial.back().refs.size() == static_cast<std::size_t>(n % batch_size == 0
                                                                    ? batch_size
                                                                    : n % batch_size));
    std::sort(seen.begin(), seen.end());
    auto want = windows;
    std::sort(want.begin(), want.end());
    CHECK(seen == want);

    for (int workers : {1, 2, 4}) CHECK(drain(workers) == serial);
}

TEST_CASE("pipeline failures surface on the consumer thread") {
    TinyDataset data(2, 16, 24);
    Manifest broken = data.manifest;
    broken.days[1].movie_path = data.dir.file("gone.t4cm");
    MovieStore store(broken);
    auto windows = enumerate_windows({0, 1}, 24, 3, Strategy::non_overlapping);
    auto index = build_epoch_index(windows, 0, 7);

    for (int workers : {0, 2}) {
        MovieStore fresh(broken);
        BatchPipeline pipe(index, 4, fresh, data.weather, data.scaling, 0, workers);
        CHECK_THROWS_AS(
            [&] {
                while (pipe.next()) {
                }
            }(),
            DataError);
    }
}
