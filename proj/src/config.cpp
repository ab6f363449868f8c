#include "gridcast/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gridcast {

namespace {

using nlohmann::json;

void expect_keys(const json& j, const std::string& section, std::set<std::string> allowed) {
    for (const auto& item : j.items())
        if (allowed.find(item.key()) == allowed.end())
            throw ConfigError("config: unknown key '" +
                              (section.empty() ? item.key() : section + "." + item.key()) + "'");
}

const json* find(const json& j, const std::string& key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

std::int64_t as_i64(const json& v, const std::string& path) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ConfigError("config: '" + path + "' must be an integer");
    return v.get<std::int64_t>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError("config: '" + path + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

double as_f64(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError("config: '" + path + "' must be a number");
    return v.get<double>();
}

std::string as_str(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError("config: '" + path + "' must be a string");
    return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError("config: '" + path + "' must be a boolean");
    return v.get<bool>();
}

std::vector<std::int64_t> as_i64_list(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("config: '" + path + "' must be an array of integers");
    std::vector<std::int64_t> out;
    for (const auto& e : v) out.push_back(as_i64(e, path));
    return out;
}

void read_data(const json& j, RunConfig::Data& d) {
    expect_keys(j, "data",
                {"city", "num_days", "height", "width", "bins_per_day", "seed", "week_offset",
                 "rush_hours", "drift_cells_per_bin", "noise_level", "val_days"});
    if (const json* v = find(j, "city")) d.city = as_str(*v, "data.city");
    if (const json* v = find(j, "num_days")) d.num_days = as_i64(*v, "data.num_days");
    if (const json* v = find(j, "height")) d.height = as_i64(*v, "data.height");
    if (const json* v = find(j, "width")) d.width = as_i64(*v, "data.width");
    if (const json* v = find(j, "bins_per_day")) d.bins_per_day = as_i64(*v, "data.bins_per_day");
    if (const json* v = find(j, "seed")) d.seed = as_u64(*v, "data.seed");
    if (const json* v = find(j, "week_offset")) d.week_offset = as_i64(*v, "data.week_offset");
    if (const json* v = find(j, "rush_hours")) {
        if (!v->is_array()) throw ConfigError("config: 'data.rush_hours' must be an array");
        d.rush_hours.clear();
        for (const auto& e : *v) {
            if (!e.is_object())
                throw ConfigError("config: 'data.rush_hours' entries must be objects");
            expect_keys(e, "data.rush_hours", {"peak_bin", "width"});
            RushHour rh;
            if (const json* p = find(e, "peak_bin"))
                rh.peak_bin = as_i64(*p, "data.rush_hours.peak_bin");
            if (const json* w = find(e, "width")) rh.width = as_f64(*w, "data.rush_hours.width");
            d.rush_hours.push_back(rh);
        }
    }
    if (const json* v = find(j, "drift_cells_per_bin"))
        d.drift_cells_per_bin = as_f64(*v, "data.drift_cells_per_bin");
    if (const json* v = find(j, "noise_level")) d.noise_level = as_f64(*v, "data.noise_level");
    if (const json* v = find(j, "val_days")) d.val_days = as_i64(*v, "data.val_days");
}

void read_codec(const json& j, CodecParams& c) {
    expect_keys(j, "codec", {"volume_cap_min", "volume_cap_max", "speed_cap_max"});
    if (const json* v = find(j, "volume_cap_min"))
        c.volume_cap_min = as_i64(*v, "codec.volume_cap_min");
    if (const json* v = find(j, "volume_cap_max"))
        c.volume_cap_max = as_i64(*v, "codec.volume_cap_max");
    if (const json* v = find(j, "speed_cap_max"))
        c.speed_cap_max = as_f64(*v, "codec.speed_cap_max");
}

void read_sampler(const json& j, RunConfig::Sampler& s) {
    expect_keys(j, "sampler", {"strategy", "batch_size", "depth"});
    if (const json* v = find(j, "strategy")) s.strategy = as_str(*v, "sampler.strategy");
    if (const json* v = find(j, "batch_size")) s.batch_size = as_i64(*v, "sampler.batch_size");
    if (const json* v = find(j, "depth")) s.depth = as_i64(*v, "sampler.depth");
}

void read_exogenous(const json& j, ExoScaling& e) {
    expect_keys(j, "exogenous",
                {"temp_min", "temp_max", "precip_min", "precip_max", "wind_min", "wind_max"});
    if (const json* v = find(j, "temp_min")) e.temp_min = as_f64(*v, "exogenous.temp_min");
    if (const json* v = find(j, "temp_max")) e.temp_max = as_f64(*v, "exogenous.temp_max");
    if (const json* v = find(j, "precip_min")) e.precip_min = as_f64(*v, "exogenous.precip_min");
    if (const json* v = find(j, "precip_max")) e.precip_max = as_f64(*v, "exogenous.precip_max");
    if (const json* v = find(j, "wind_min")) e.wind_min = as_f64(*v, "exogenous.wind_min");
    if (const json* v = find(j, "wind_max")) e.wind_max = as_f64(*v, "exogenous.wind_max");
}

void read_model(const json& j, ModelConfig& m, std::uint64_t& init_seed) {
    expect_keys(j, "model",
                {"variant", "canvas_size", "num_blocks", "base_channels", "block_multipliers",
                 "dropout_rate", "gru_encoder_units", "gru_decoder_units", "convlstm_units", "q",
                 "init_seed"});
    if (const json* v = find(j, "variant")) m.variant = as_str(*v, "model.variant");
    if (const json* v = find(j, "canvas_size")) m.canvas_size = as_i64(*v, "model.canvas_size");
    if (const json* v = find(j, "num_blocks")) m.num_blocks = as_i64(*v, "model.num_blocks");
    if (const json* v = find(j, "base_channels"))
        m.base_channels = as_i64(*v, "model.base_channels");
    if (const json* v = find(j, "block_multipliers"))
        m.block_multipliers = as_i64_list(*v, "model.block_multipliers");
    if (const json* v = find(j, "dropout_rate")) m.dropout_rate = as_f64(*v, "model.dropout_rate");
    if (const json* v = find(j, "gru_encoder_units"))
        m.gru_encoder_units = as_i64_list(*v, "model.gru_encoder_units");
    if (const json* v = find(j, "gru_decoder_units"))
        m.gru_decoder_units = as_i64_list(*v, "model.gru_decoder_units");
    if (const json* v = find(j, "convlstm_units"))
        m.convlstm_units = as_i64_list(*v, "model.convlstm_units");
    if (const json* v = find(j, "q")) m.q = as_i64(*v, "model.q");
    if (const json* v = find(j, "init_seed")) init_seed = as_u64(*v, "model.init_seed");
    m.apply_variant();
}

void read_loss(const json& j, LossWeights& w) {
    expect_keys(j, "loss", {"alpha", "beta", "clf_weight", "stop_target_gradients"});
    if (const json* v = find(j, "alpha")) w.alpha = as_f64(*v, "loss.alpha");
    if (const json* v = find(j, "beta")) w.beta = as_f64(*v, "loss.beta");
    if (const json* v = find(j, "clf_weight")) w.clf_weight = as_f64(*v, "loss.clf_weight");
    if (const json* v = find(j, "stop_target_gradients"))
        w.stop_target_gradients = as_bool(*v, "loss.stop_target_gradients");
}

void read_train(const json& j, RunConfig::Train& t) {
    expect_keys(j, "train", {"epochs", "learning_rate", "seed", "target_train_mse"});
    if (const json* v = find(j, "epochs")) t.epochs = as_i64(*v, "train.epochs");
    if (const json* v = find(j, "learning_rate"))
        t.learning_rate = as_f64(*v, "train.learning_rate");
    if (const json* v = find(j, "seed")) t.seed = as_u64(*v, "train.seed");
    if (const json* v = find(j, "target_train_mse"))
        t.target_train_mse = as_f64(*v, "train.target_train_mse");
}

void read_eval(const json& j, RunConfig::Eval& e) {
    expect_keys(j, "eval", {"profile", "test_bins"});
    if (const json* v = find(j, "profile")) e.profile = as_str(*v, "eval.profile");
    if (const json* v = find(j, "test_bins")) e.test_bins = as_i64_list(*v, "eval.test_bins");
}

}  // namespace

std::int64_t default_val_days(std::int64_t num_days) {
    if (num_days < 2) return 0;  // nothing to spare
    // the 285/7 train/validation proportions, scaled to this dataset
    const double share = 7.0 / 292.0;
    const std::int64_t v = static_cast<std::int64_t>(
        round_half_away(static_cast<double>(num_days) * share));
    return std::max<std::int64_t>(1, std::min(v, num_days - 1));
}

void RunConfig::validate() const {
    if (data.num_days < 1) throw ConfigError("config: data.num_days must be >= 1");
    if (data.height < 1 || data.width < 1 || data.bins_per_day < 1)
        throw ConfigError("config: data grid extents must be positive");
    if (data.noise_level < 0.0 || data.noise_level > 1.0)
        throw ConfigError("config: data.noise_level must lie in [0,1]");
    if (data.drift_cells_per_bin < 0.0)
        throw ConfigError("config: data.drift_cells_per_bin must be >= 0");
    if (data.val_days != -1 && (data.val_days < 0 || data.val_days >= data.num_days))
        throw ConfigError("config: data.val_days must be -1 or in [0, num_days)");
    for (const RushHour& rh : data.rush_hours) {
        if (rh.peak_bin < 0 || rh.peak_bin >= data.bins_per_day)
            throw ConfigError("config: rush hour peak bin " + std::to_string(rh.peak_bin) +
                              " outside the day");
        if (rh.width <= 0.0) throw ConfigError("config: rush hour width must be > 0");
    }
    codec.validate();
    strategy_from_string(sampler.strategy);
    if (sampler.batch_size < 1) throw ConfigError("config: sampler.batch_size must be >= 1");
    if (sampler.depth < 1) throw ConfigError("config: sampler.depth must be >= 1");
    exogenous.validate();
    ModelConfig sized = model;
    sized.grid_h = data.height;
    sized.grid_w = data.width;
    sized.validate();
    loss.validate();
    if (train.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
    if (train.learning_rate <= 0.0) throw ConfigError("config: train.learning_rate must be > 0");
    if (eval.profile.empty() && eval.test_bins.empty())
        throw ConfigError("config: eval needs a profile name or explicit test_bins");
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: the document must be a JSON object");
    expect_keys(j, "",
                {"data", "codec", "sampler", "exogenous", "model", "loss", "train", "eval"});
    RunConfig c;
    try {
        auto section = [&](const char* name) -> const json* {
            const json* v = find(j, name);
            if (v && !v->is_object())
                throw ConfigError("config: '" + std::string(name) + "' must be an object");
            return v;
        };
        if (const json* v = section("data")) read_data(*v, c.data);
        if (const json* v = section("codec")) read_codec(*v, c.codec);
        if (const json* v = section("sampler")) read_sampler(*v, c.sampler);
        if (const json* v = section("exogenous")) read_exogenous(*v, c.exogenous);
        if (const json* v = section("model")) read_model(*v, c.model, c.model_init_seed);
        if (const json* v = section("loss")) read_loss(*v, c.loss);
        if (const json* v = section("train")) read_train(*v, c.train);
        if (const json* v = section("eval")) read_eval(*v, c.eval);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: malformed value: ") + e.what());
    }
    c.model.apply_variant();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

std::string run_config_json(const RunConfig& c) {
    json j;
    json rush = json::array();
    for (const RushHour& rh : c.data.rush_hours)
        rush.push_back({{"peak_bin", rh.peak_bin}, {"width", rh.width}});
    j["data"] = {{"city", c.data.city},
                 {"num_days", c.data.num_days},
                 {"height", c.data.height},
                 {"width", c.data.width},
                 {"bins_per_day", c.data.bins_per_day},
                 {"seed", c.data.seed},
                 {"week_offset", c.data.week_offset},
                 {"rush_hours", rush},
                 {"drift_cells_per_bin", c.data.drift_cells_per_bin},
                 {"noise_level", c.data.noise_level},
                 {"val_days", c.data.val_days}};
    j["codec"] = {{"volume_cap_min", c.codec.volume_cap_min},
                  {"volume_cap_max", c.codec.volume_cap_max},
                  {"speed_cap_max", c.codec.speed_cap_max}};
    j["sampler"] = {{"strategy", c.sampler.strategy},
                    {"batch_size", c.sampler.batch_size},
                    {"depth", c.sampler.depth}};
    j["exogenous"] = {{"temp_min", c.exogenous.temp_min},   {"temp_max", c.exogenous.temp_max},
                      {"precip_min", c.exogenous.precip_min}, {"precip_max", c.exogenous.precip_max},
                      {"wind_min", c.exogenous.wind_min},   {"wind_max", c.exogenous.wind_max}};
    j["model"] = {{"variant", c.model.variant},
                  {"canvas_size", c.model.canvas_size},
                  {"num_blocks", c.model.num_blocks},
                  {"base_channels", c.model.base_channels},
                  {"block_multipliers", c.model.block_multipliers},
                  {"dropout_rate", c.model.dropout_rate},
                  {"gru_encoder_units", c.model.gru_encoder_units},
                  {"gru_decoder_units", c.model.gru_decoder_units},
                  {"convlstm_units", c.model.convlstm_units},
                  {"q", c.model.q},
                  {"init_seed", c.model_init_seed}};
    j["loss"] = {{"alpha", c.loss.alpha},
                 {"beta", c.loss.beta},
                 {"clf_weight", c.loss.clf_weight},
                 {"stop_target_gradients", c.loss.stop_target_gradients}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"learning_rate", c.train.learning_rate},
                  {"seed", c.train.seed},
                  {"target_train_mse", c.train.target_train_mse}};
    j["eval"] = {{"profile", c.eval.profile}, {"test_bins", c.eval.test_bins}};
    return j.dump(2) + "\n";
}

}  // namespace gridcast
