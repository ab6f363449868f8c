#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gridcast/codec.hpp"
#include "gridcast/exogenous.hpp"
#include "gridcast/synth.hpp"
#include "gridcast/tensor.hpp"

namespace gridcast {

enum class Strategy { non_overlapping, all_slots, like_test };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy s);

// One training sample: q input frames [s-q, s), three target frames [s, s+3).
struct SequenceWindow {
    std::int64_t day_index = 0;
    std::int64_t start_bin = 0;  // s, the first predicted bin
    std::int64_t input_len = 0;  // q

    static constexpr std::int64_t output_len = 3;

    auto operator<=>(const SequenceWindow&) const = default;
};

std::int64_t count_sequences(std::int64_t bins_per_day, std::int64_t q, Strategy strategy,
                             std::int64_t num_days, std::int64_t starts_per_day_like_test = 0);

// days lists the day_index values to cover; test_bins are the per-city output
// start bins (like_test only). like_test bins with s - q < 0 are skipped; pass
// `skipped` to collect them.
std::vector<SequenceWindow> enumerate_windows(const std::vector<std::int64_t>& days,
                                              std::int64_t bins_per_day, std::int64_t q,
                                              Strategy strategy,
                                              const std::vector<std::int64_t>& test_bins = {},
                                              std::vector<std::int64_t>* skipped = nullptr);

struct EpochIndex {
    std::vector<SequenceWindow> windows;
    std::int64_t epoch = 0;
    std::uint64_t seed = 0;
};

// Deterministic permutation of the windows as a function of (seed, epoch).
EpochIndex build_epoch_index(std::vector<SequenceWindow> windows, std::int64_t epoch,
                             std::uint64_t seed);

// --- dataset manifest -------------------------------------------------------

struct ManifestDay {
    std::int64_t day_index = 0;
    std::string movie_path;
    std::string role = "train";  // train | val
};

struct Manifest {
    std::string city;
    GridSpec grid;
    CodecParams codec;
    std::string weather_path;
    std::int64_t week_offset = 0;
    std::vector<ManifestDay> days;

    std::vector<std::int64_t> day_indices(const std::string& role) const;
};

void write_manifest(const Manifest& m, const std::string& path);
// Relative movie/weather paths are resolved against the manifest's directory.
Manifest read_manifest(const std::string& path);

// Thread-safe day -> movie cache over manifest entries.
class MovieStore {
  public:
    explicit MovieStore(Manifest manifest);

    const Manifest& manifest() const { return manifest_; }
    const TrafficMovie& movie(std::int64_t day_index);

  private:
    Manifest manifest_;
    std::map<std::int64_t, std::string> path_by_day_;
    std::mutex mu_;
    std::map<std::int64_t, std::unique_ptr<TrafficMovie>> cache_;
};

// --- batches ----------------------------------------------------------------

struct Batch {
    Tensor inputs;   // (B, q, H, W, 3) in [0,1]
    Tensor targets;  // (B, 3, H, W, 3) in [0,1]
    Tensor exo;      // (B, 21), anchored at the last input bin
    std::vector<SequenceWindow> window_refs;

    std::int64_t size() const { return static_cast<std::int64_t>(window_refs.size()); }
};

Batch assemble_batch(const std::vector<SequenceWindow>& windows, MovieStore& store,
                     const WeatherTable& weather, const ExoScaling& scaling,
                     std::int64_t week_offset);

// Hands out the epoch's batches in index order whatever the worker count.
// workers = 0 assembles synchronously on the consumer thread (the reference
// path); workers >= 1 prefetch up to `depth` batches ahead.
class BatchPipeline {
  public:
    BatchPipeline(EpochIndex index, std::int64_t batch_size, MovieStore& store,
                  const WeatherTable& weather, ExoScaling scaling, std::int64_t week_offset,
                  int workers, std::int64_t depth = 4);
    ~BatchPipeline();

    BatchPipeline(const BatchPipeline&) = delete;
    BatchPipeline& operator=(const BatchPipeline&) = delete;

    std::int64_t batch_count() const { return batch_count_; }
    // Next batch in order; empty when the epoch is exhausted.
    std::optional<Batch> next();

  private:
    std::vector<SequenceWindow> batch_windows(std::int64_t batch_index) const;
    void worker_loop();

    EpochIndex index_;
    std::int64_t batch_size_;
    MovieStore& store_;
    const WeatherTable& weather_;
    ExoScaling scaling_;
    std::int64_t week_offset_;
    std::int64_t batch_count_;
    std::int64_t depth_;

    std::mutex mu_;
    std::condition_variable ready_cv_;   // consumer waits for next_to_emit_
    std::condition_variable space_cv_;   // producers wait for buffer room
    std::map<std::int64_t, Batch> done_;
    std::int64_t next_to_claim_ = 0;
    std::int64_t next_to_emit_ = 0;
    bool stop_ = false;
    std::exception_ptr failure_;
    std::vector<std::thread> threads_;
};

}  // namespace gridcast
