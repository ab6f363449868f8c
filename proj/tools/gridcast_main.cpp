#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridcast/config.hpp"
#include "gridcast/train.hpp"

namespace fs = std::filesystem;
using namespace gridcast;

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// --run-dir / --out fall back to a subdirectory of $GRIDCAST_RUN_ROOT
std::string resolve_dir(const std::string& flag, const char* fallback_name) {
    if (!flag.empty()) return flag;
    if (const char* root = std::getenv("GRIDCAST_RUN_ROOT"))
        if (*root) return std::string(root) + "/" + fallback_name;
    throw ConfigError(std::string("no directory given: pass the flag or set GRIDCAST_RUN_ROOT"));
}

RunConfig resolve_config(const std::string& path) {
    return path.empty() ? parse_run_config("{}") : load_run_config(path);
}

void echo_config(const RunConfig& config, const std::string& dir) {
    fs::create_directories(dir);
    const std::string text = run_config_json(config);
    std::ofstream out(dir + "/config.json", std::ios::trunc);
    if (!out) throw IoError("cannot write '" + dir + "/config.json'");
    out << text;
}

ModelConfig sized_model_config(const RunConfig& config, const Manifest& manifest) {
    ModelConfig mc = config.model;
    mc.grid_h = manifest.grid.height;
    mc.grid_w = manifest.grid.width;
    mc.validate();
    return mc;
}

EvalProtocol resolve_protocol(const RunConfig& config) {
    if (!config.eval.test_bins.empty()) {
        EvalProtocol protocol;
        protocol.block_start_bins = config.eval.test_bins;
        return protocol;
    }
    return protocol_for_profile(config.eval.profile);
}

std::vector<std::int64_t> like_test_bins(const RunConfig& config) {
    return config.sampler.strategy == "like_test" ? resolve_protocol(config).block_start_bins
                                                  : std::vector<std::int64_t>{};
}

// --- subcommands ------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, const std::string& out_flag, bool force) {
    const RunConfig config = resolve_config(config_path);
    const std::string out = resolve_dir(out_flag, "data");

    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw IoError("output directory '" + out + "' is not empty; pass --force to overwrite");
    fs::create_directories(out);

    GridSpec spec;
    spec.height = config.data.height;
    spec.width = config.data.width;
    spec.bins_per_day = config.data.bins_per_day;
    SynthConfig synth;
    synth.seed = config.data.seed;
    synth.num_days = config.data.num_days;
    synth.rush_hours = config.data.rush_hours;
    synth.drift_cells_per_bin = config.data.drift_cells_per_bin;
    synth.noise_level = config.data.noise_level;
    synth.week_offset = config.data.week_offset;
    synth.validate();

    const CityTemplate city = generate_city(synth.seed, spec);
    const WeatherTable weather = generate_weather(synth.seed, synth.num_days, spec.bins_per_day);
    write_weather(weather, out + "/weather.csv");

    const std::int64_t val_days = config.data.val_days >= 0 ? config.data.val_days
                                                            : default_val_days(synth.num_days);
    Manifest manifest;
    manifest.city = config.data.city;
    manifest.grid = spec;
    manifest.codec = config.codec;
    manifest.weather_path = "weather.csv";
    manifest.week_offset = synth.week_offset;
    for (std::int64_t d = 0; d < synth.num_days; ++d) {
        const TrafficMovie movie = simulate_day(city, synth, d, config.codec);
        char name[32];
        std::snprintf(name, sizeof name, "day_%04lld.t4cm", static_cast<long long>(d));
        write_movie(movie, out + "/" + name, {manifest.city, d, config.codec});
        manifest.days.push_back(
            {d, name, d >= synth.num_days - val_days ? "val" : "train"});
    }
    write_manifest(manifest, out + "/manifest.json");
    echo_config(config, out);

    std::cout << "generated " << synth.num_days << " days of " << spec.height << "x" << spec.width
              << " traffic for '" << manifest.city << "' in " << out << "\n"
              << "manifest: " << out << "/manifest.json (" << val_days << " validation day"
              << (val_days == 1 ? "" : "s") << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& run_flag, int workers, const std::string& resume_path,
              const std::string& init_path) {
    const RunConfig config = resolve_config(config_path);
    const std::string run_dir = resolve_dir(run_flag, "train");
    if (!resume_path.empty() && !init_path.empty())
        throw ConfigError("--resume and --init-checkpoint are mutually exclusive");

    const Manifest manifest = read_manifest(manifest_path);
    MovieStore store(manifest);
    const WeatherTable weather = read_weather(manifest.weather_path);

    Model model(sized_model_config(config, manifest), config.model_init_seed);
    AdamOptimizer opt(model.store(), {config.train.learning_rate});
    std::vector<EpochMetrics> history;

    if (!resume_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(resume_path);
        restore_model(model, ckpt);
        opt.restore(ckpt.adam_steps, ckpt.adam_m, ckpt.adam_v);
        history = ckpt.history;
        std::cout << "resuming from " << resume_path << " after epoch " << ckpt.epoch << "\n";
    } else if (!init_path.empty()) {
        warm_start_model(model, load_checkpoint(init_path));
        std::cout << "fine-tune mode: warm start from " << init_path << "\n";
    }

    TrainSettings settings;
    settings.strategy = strategy_from_string(config.sampler.strategy);
    settings.like_test_bins = like_test_bins(config);
    settings.batch_size = config.sampler.batch_size;
    settings.epochs = config.train.epochs;
    settings.learning_rate = config.train.learning_rate;
    settings.seed = config.train.seed;
    settings.weights = config.loss;
    settings.target_train_mse = config.train.target_train_mse;
    settings.workers = workers;
    settings.depth = config.sampler.depth;

    echo_config(config, run_dir);
    TrainHooks hooks;
    hooks.after_epoch = [](const EpochMetrics& em) {
        std::cout << "epoch " << em.epoch << ": train_mse " << fmt17(em.train_mse) << ", val_mse "
                  << fmt17(em.val_mse) << ", heading_acc " << fmt17(em.val_heading_acc) << "\n";
        return true;
    };
    const auto full = train(model, opt, store, weather, config.exogenous, settings, run_dir,
                            run_config_json(config), std::move(history), hooks);
    std::cout << "finished after epoch " << full.back().epoch << "; artifacts in " << run_dir
              << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& manifest_path,
             const std::string& run_flag, const std::string& checkpoint_path,
             const std::string& baseline) {
    const std::string run_dir = resolve_dir(run_flag, "eval");
    if (!baseline.empty() && baseline != "persistence")
        throw ConfigError("unknown baseline '" + baseline + "' (only: persistence)");
    if (baseline.empty() == checkpoint_path.empty())
        throw ConfigError("pass exactly one of --checkpoint or --model persistence");

    const Manifest manifest = read_manifest(manifest_path);
    MovieStore store(manifest);
    const WeatherTable weather = read_weather(manifest.weather_path);

    std::optional<Checkpoint> ckpt;
    if (!checkpoint_path.empty()) ckpt = load_checkpoint(checkpoint_path);
    // precedence: explicit --config, then the checkpoint's own echo, then defaults
    const RunConfig config = !config_path.empty()
                                 ? load_run_config(config_path)
                                 : (ckpt ? parse_run_config(ckpt->config_echo)
                                         : parse_run_config("{}"));

    std::optional<Model> model;
    Predictor predict;
    std::string label;
    if (ckpt) {
        model.emplace(sized_model_config(config, manifest), config.model_init_seed);
        restore_model(*model, *ckpt);
        predict = model_predictor(*model);
        label = config.model.variant;
    } else {
        predict = persistence_predictor();
        label = "persistence";
    }

    const EvalProtocol protocol = resolve_protocol(config);
    std::int64_t blocks = 0;
    const MetricReport report =
        evaluate_challenge(predict, store, weather, config.exogenous, manifest.week_offset,
                           protocol, config.model.q, &blocks);

    echo_config(config, run_dir);
    write_metric_report(report, run_dir + "/report.tsv");
    {
        // persistence has no config identity of its own; record what was scored
        std::ofstream lf(run_dir + "/label.txt", std::ios::trunc);
        lf << label << "\n";
    }
    std::cout << label << " on " << manifest.city << ": " << blocks << " blocks, mse_total "
              << fmt17(report.mse_total) << ", heading_acc " << fmt17(report.heading_accuracy_data)
              << "\nreport: " << run_dir << "/report.tsv\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_flag) {
    const std::string out = resolve_dir(out_flag, "report");
    std::vector<RunSummary> runs;
    for (const std::string& dir : run_dirs) {
        try {
            RunSummary run;
            const RunConfig config = load_run_config(dir + "/config.json");
            run.label = config.model.variant;
            run.city = config.data.city;
            if (std::ifstream lf(dir + "/label.txt"); lf) std::getline(lf, run.label);
            run.report = read_metric_report(dir + "/report.tsv");
            if (fs::exists(dir + "/metrics.tsv")) {
                run.history = read_metrics_tsv(dir + "/metrics.tsv");
                run.epochs = static_cast<std::int64_t>(run.history.size());
            }
            runs.push_back(std::move(run));
        } catch (const Error& e) {
            std::cerr << "warning: skipping '" << dir << "': " << e.what() << "\n";
        }
    }
    if (runs.empty()) throw DataError("report: no run directory had usable metrics");
    report_tables(runs, out);
    std::cout << "compared " << runs.size() << " run" << (runs.size() == 1 ? "" : "s") << " into "
              << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"traffic-movie forecasting toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, manifest_path, run_dir, resume_path, init_path;
    std::string checkpoint_path, baseline;
    std::vector<std::string> run_dirs;
    bool force = false;
    int workers = 0;

    CLI::App* gen = app.add_subcommand("gen-data", "synthesize a city dataset");
    gen->add_option("--config", config_path, "run configuration file (JSON)");
    gen->add_option("--out", out_dir, "output directory");
    gen->add_flag("--force", force, "write into a non-empty directory");

    CLI::App* tr = app.add_subcommand("train", "train a forecasting model");
    tr->add_option("--config", config_path, "run configuration file (JSON)");
    tr->add_option("--manifest", manifest_path, "dataset manifest")->required();
    tr->add_option("--run-dir", run_dir, "run directory for checkpoints and metrics");
    tr->add_option("--workers", workers, "sampler producer threads (0 = serial)");
    tr->add_option("--resume", resume_path, "continue from this checkpoint");
    tr->add_option("--init-checkpoint", init_path, "warm start weights from this checkpoint");

    CLI::App* ev = app.add_subcommand("eval", "score a model on the challenge protocol");
    ev->add_option("--config", config_path, "run configuration file (JSON)");
    ev->add_option("--manifest", manifest_path, "dataset manifest")->required();
    ev->add_option("--run-dir", run_dir, "output directory for the report");
    ev->add_option("--checkpoint", checkpoint_path, "trained checkpoint to evaluate");
    ev->add_option("--model", baseline, "evaluate a baseline instead (persistence)");

    CLI::App* rep = app.add_subcommand("report", "merge run directories into comparison tables");
    rep->add_option("--out", out_dir, "output directory for the tables");
    rep->add_option("dirs", run_dirs, "run directories to compare")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir, force);
        if (tr->parsed())
            return cmd_train(config_path, manifest_path, run_dir, workers, resume_path,
                             init_path);
        if (ev->parsed())
            return cmd_eval(config_path, manifest_path, run_dir, checkpoint_path, baseline);
        if (rep->parsed()) return cmd_report(run_dirs, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
