#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridcast/models.hpp"
#include "gridcast/objectives.hpp"
#include "gridcast/sampler.hpp"

namespace gridcast {

// --- optimizer --------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adaptive-moment descent over every parameter in a store; the moment tensors
// are owned here and round trip through checkpoints.
class AdamOptimizer {
  public:
    AdamOptimizer(ParamStore& store, AdamConfig config);

    // apply the gradients recorded in g (after backward) to the store
    void step(nn::Graph& g, const BoundParams& bound);

    std::int64_t steps() const { return steps_; }
    const AdamConfig& config() const { return config_; }
    const std::map<std::string, Tensor>& moment1() const { return m_; }
    const std::map<std::string, Tensor>& moment2() const { return v_; }
    void restore(std::int64_t steps, std::map<std::string, Tensor> m,
                 std::map<std::string, Tensor> v);

  private:
    ParamStore& store_;
    AdamConfig config_;
    std::int64_t steps_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

// --- checkpoints ------------------------------------------------------------

struct EpochMetrics {
    std::int64_t epoch = 0;  // 1-based, the epoch just finished
    double train_mse = 0.0;
    double val_mse = 0.0;
    double val_heading_acc = 0.0;
};

struct Checkpoint {
    std::string config_echo;  // the run's effective config document
    std::int64_t epoch = 0;
    std::int64_t adam_steps = 0;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
    std::vector<EpochMetrics> history;
};

// Binary container, atomically replaced (write-temp-then-rename).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_checkpoint(const Model& model, const AdamOptimizer& opt, std::int64_t epoch,
                               const std::vector<EpochMetrics>& history,
                               const std::string& config_echo);
// Exact restore: every model tensor must appear with a matching shape.
void restore_model(Model& model, const Checkpoint& ckpt);
// Warm start: overlapping slices copied by name, the rest keeps fresh init.
void warm_start_model(Model& model, const Checkpoint& ckpt);

// --- training ---------------------------------------------------------------

struct TrainSettings {
    Strategy strategy = Strategy::all_slots;
    std::vector<std::int64_t> like_test_bins;  // required for like_test
    std::int64_t batch_size = 8;
    std::int64_t epochs = 1;  // total target; resuming continues toward it
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    LossWeights weights;
    double target_train_mse = 0.0;  // > 0 stops early once reached
    int workers = 0;                // sampler producers; 0 = serial reference path
    std::int64_t depth = 4;
};

struct TrainHooks {
    // called after each finished epoch; return false to stop early
    std::function<bool(const EpochMetrics&)> after_epoch;
};

// Runs the loop: shuffled prefetched batches, per-epoch validation on the
// manifest's val days, a checkpoint per epoch, metrics.tsv refreshed as it
// goes. run_dir may be empty to keep everything in memory. Non-finite loss
// aborts with epoch/batch/learning-rate diagnostics.
std::vector<EpochMetrics> train(Model& model, AdamOptimizer& opt, MovieStore& store,
                                const WeatherTable& weather, const ExoScaling& scaling,
                                const TrainSettings& settings, const std::string& run_dir,
                                const std::string& config_echo,
                                std::vector<EpochMetrics> history = {},
                                const TrainHooks& hooks = {});

void write_metrics_tsv(const std::vector<EpochMetrics>& history, const std::string& path);
std::vector<EpochMetrics> read_metrics_tsv(const std::string& path);

// --- evaluation -------------------------------------------------------------

// Anything that maps a batch to (B, 3, H, W, 3) frames on the [0,1] scale.
using Predictor = std::function<Tensor(const Batch&)>;

Predictor model_predictor(Model& model);   // inference mode, running statistics
Predictor persistence_predictor();         // repeats the last input frame

// The last input frame three times, as a frames-only bundle.
PredictionBundle persistence_baseline(nn::Graph& g, const Batch& batch);

// Batched scoring of explicit windows; the workhorse under evaluate_challenge
// and the per-epoch validation pass.
MetricReport evaluate_windows(const Predictor& predict, const std::vector<SequenceWindow>& windows,
                              MovieStore& store, const WeatherTable& weather,
                              const ExoScaling& scaling, std::int64_t week_offset,
                              std::int64_t batch_size = 8);

struct EvalProtocol {
    std::vector<std::int64_t> block_start_bins;  // output start bins, 5 per city
    std::int64_t input_len = 12;                 // one hour of context
    static constexpr std::int64_t output_len = 3;

    // every start must leave room for the hour before and the 3 bins after
    void validate(std::int64_t bins_per_day) const;
};

// moscow and istanbul share their test bins; berlin differs
EvalProtocol protocol_for_profile(const std::string& name);

// For each manifest day and each protocol block, feed the most recent q of the
// block's 12 input bins, predict 3, and score. Days too short for the window
// are skipped with a warning on stderr.
MetricReport evaluate_challenge(const Predictor& predict, MovieStore& store,
                                const WeatherTable& weather, const ExoScaling& scaling,
                                std::int64_t week_offset, const EvalProtocol& protocol,
                                std::int64_t q, std::int64_t* blocks_visited = nullptr);

// --- report artifacts ---------------------------------------------------------

struct RunSummary {
    std::string label;  // typically the variant name
    std::string city;
    std::int64_t epochs = 0;
    MetricReport report;
    std::vector<EpochMetrics> history;
};

// Emits overview.tsv (run x headline metrics), comparison.tsv (metric rows x
// run columns), breakdown_<label>.tsv (channel x horizon), and an SVG loss
// curve per run with history.
void report_tables(const std::vector<RunSummary>& runs, const std::string& out_dir);

void write_history_plot(const std::vector<EpochMetrics>& history, const std::string& path);

}  // namespace gridcast
