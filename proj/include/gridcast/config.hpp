#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridcast/codec.hpp"
#include "gridcast/exogenous.hpp"
#include "gridcast/models.hpp"
#include "gridcast/objectives.hpp"
#include "gridcast/synth.hpp"

namespace gridcast {

// The whole experiment definition as one JSON document. Every field has a
// default; unknown keys are rejected so typos cannot silently fall back.
struct RunConfig {
    struct Data {
        std::string city = "synthville";
        std::int64_t num_days = 4;
        std::int64_t height = 32;
        std::int64_t width = 32;
        std::int64_t bins_per_day = 288;
        std::uint64_t seed = 42;
        std::int64_t week_offset = 0;
        std::vector<RushHour> rush_hours{{96, 18.0}, {204, 24.0}};
        double drift_cells_per_bin = 0.4;
        double noise_level = 0.35;
        std::int64_t val_days = -1;  // -1: proportional trailing split
    } data;

    CodecParams codec;

    struct Sampler {
        std::string strategy = "all_slots";
        std::int64_t batch_size = 8;
        std::int64_t depth = 4;  // prefetch bound when workers > 0
    } sampler;

    ExoScaling exogenous;

    // grid_h/grid_w are not config keys; they follow data.height/width here and
    // the manifest grid when training on existing data.
    ModelConfig model;
    std::uint64_t model_init_seed = 7;

    LossWeights loss;

    struct Train {
        std::int64_t epochs = 1;
        double learning_rate = 1e-3;
        std::uint64_t seed = 1;
        double target_train_mse = 0.0;  // > 0: stop once the epoch mean drops below
    } train;

    struct Eval {
        std::string profile = "moscow";
        std::vector<std::int64_t> test_bins;  // non-empty overrides the profile
    } eval;

    void validate() const;
};

// Trailing days reserved for validation when data.val_days is -1, scaled from
// the 285-train/7-val convention.
std::int64_t default_val_days(std::int64_t num_days);

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Effective (post-default) document; parse(run_config_json(c)) reproduces c.
std::string run_config_json(const RunConfig& config);

}  // namespace gridcast
