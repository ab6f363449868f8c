#include "gridcast/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace gridcast {

namespace fs = std::filesystem;
using nlohmann::json;

// --- optimizer --------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(ParamStore& store, AdamConfig config)
    : store_(store), config_(config) {
    if (config_.learning_rate <= 0.0) throw ConfigError("optimizer: learning rate must be > 0");
    for (const auto& name : store_.names()) {
        m_.emplace(name, Tensor(store_.at(name).shape()));
        v_.emplace(name, Tensor(store_.at(name).shape()));
    }
}

void AdamOptimizer::step(nn::Graph& g, const BoundParams& bound) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (const auto& name : store_.names()) {
        Tensor& p = store_.at(name);
        Tensor& m = m_.at(name);
        Tensor& v = v_.at(name);
        const Tensor& grad = g.grad_of(bound.at(name));
#pragma omp parallel for
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
            p[i] -= config_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
        }
    }
}

void AdamOptimizer::restore(std::int64_t steps, std::map<std::string, Tensor> m,
                            std::map<std::string, Tensor> v) {
    if (steps < 0) throw FormatError("optimizer: negative step count");
    for (const auto& name : store_.names()) {
        auto mi = m.find(name);
        auto vi = v.find(name);
        if (mi == m.end() || vi == v.end())
            throw FormatError("optimizer: checkpoint misses moments for '" + name + "'");
        if (mi->second.shape() != store_.at(name).shape() ||
            vi->second.shape() != store_.at(name).shape())
            throw FormatError("optimizer: moment shape mismatch for '" + name + "'");
    }
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

// --- checkpoint container --------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'G', 'C', 'K', 'P'};
constexpr std::uint32_t kCkptVersion = 1;

void append_directory(json& dir, const char* space, const std::map<std::string, Tensor>& tensors) {
    for (const auto& [name, t] : tensors)
        dir.push_back({{"name", std::string(space) + "/" + name}, {"shape", t.shape()}});
}

const std::map<std::string, Tensor>* pick_space(const Checkpoint& ckpt, const std::string& space) {
    if (space == "param") return &ckpt.params;
    if (space == "buffer") return &ckpt.buffers;
    if (space == "adam_m") return &ckpt.adam_m;
    if (space == "adam_v") return &ckpt.adam_v;
    return nullptr;
}

std::map<std::string, Tensor>* pick_space(Checkpoint& ckpt, const std::string& space) {
    return const_cast<std::map<std::string, Tensor>*>(
        pick_space(static_cast<const Checkpoint&>(ckpt), space));
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["config"] = ckpt.config_echo;
    header["epoch"] = ckpt.epoch;
    header["adam_steps"] = ckpt.adam_steps;
    json hist = json::array();
    for (const EpochMetrics& em : ckpt.history)
        hist.push_back({{"epoch", em.epoch},
                        {"train_mse", em.train_mse},
                        {"val_mse", em.val_mse},
                        {"val_heading_acc", em.val_heading_acc}});
    header["history"] = hist;
    json dir = json::array();
    append_directory(dir, "param", ckpt.params);
    append_directory(dir, "buffer", ckpt.buffers);
    append_directory(dir, "adam_m", ckpt.adam_m);
    append_directory(dir, "adam_v", ckpt.adam_v);
    header["tensors"] = dir;
    const std::string head = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("checkpoint: cannot open '" + tmp + "'");
        out.write(kCkptMagic, 4);
        const std::uint32_t version = kCkptVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        const std::uint64_t head_len = head.size();
        out.write(reinterpret_cast<const char*>(&head_len), sizeof head_len);
        out.write(head.data(), static_cast<std::streamsize>(head.size()));
        for (const char* space : {"param", "buffer", "adam_m", "adam_v"})
            for (const auto& [name, t] : *pick_space(ckpt, space))
                out.write(reinterpret_cast<const char*>(t.data()),
                          static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!out) throw IoError("checkpoint: short write to '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw FormatError("checkpoint: '" + path + "' is not a checkpoint file");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kCkptVersion)
        throw FormatError("checkpoint: unsupported version in '" + path + "'");
    std::uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof head_len);
    if (!in || head_len > (1ull << 30))
        throw FormatError("checkpoint: implausible header length in '" + path + "'");
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw FormatError("checkpoint: truncated header in '" + path + "'");

    Checkpoint ckpt;
    try {
        const json header = json::parse(head);
        ckpt.config_echo = header.at("config").get<std::string>();
        ckpt.epoch = header.at("epoch").get<std::int64_t>();
        ckpt.adam_steps = header.at("adam_steps").get<std::int64_t>();
        for (const auto& em : header.at("history"))
            ckpt.history.push_back({em.at("epoch").get<std::int64_t>(),
                                    em.at("train_mse").get<double>(),
                                    em.at("val_mse").get<double>(),
                                    em.at("val_heading_acc").get<double>()});
        for (const auto& entry : header.at("tensors")) {
            const std::string full = entry.at("name").get<std::string>();
            const auto cut = full.find('/');
            if (cut == std::string::npos)
                throw FormatError("checkpoint: tensor name without a namespace");
            std::map<std::string, Tensor>* space = pick_space(ckpt, full.substr(0, cut));
            if (!space) throw FormatError("checkpoint: unknown namespace in '" + full + "'");
            const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
            Tensor t(shape);
            in.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(t.numel() * sizeof(double)));
            if (!in) throw FormatError("checkpoint: truncated payload in '" + path + "'");
            space->emplace(full.substr(cut + 1), std::move(t));
        }
    } catch (const json::exception& e) {
        throw FormatError("checkpoint: malformed header in '" + path + "': " + e.what());
    }
    return ckpt;
}

Checkpoint snapshot_checkpoint(const Model& model, const AdamOptimizer& opt, std::int64_t epoch,
                               const std::vector<EpochMetrics>& history,
                               const std::string& config_echo) {
    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    ckpt.epoch = epoch;
    ckpt.adam_steps = opt.steps();
    ckpt.history = history;
    const ParamStore& store = model.store();
    for (const auto& name : store.names()) ckpt.params.emplace(name, store.at(name));
    for (const auto& name : store.buffer_names()) ckpt.buffers.emplace(name, store.buffer(name));
    ckpt.adam_m = opt.moment1();
    ckpt.adam_v = opt.moment2();
    return ckpt;
}

void restore_model(Model& model, const Checkpoint& ckpt) {
    ParamStore& store = model.store();
    auto take = [&](const std::map<std::string, Tensor>& from, const std::string& name,
                    Tensor& into) {
        auto it = from.find(name);
        if (it == from.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != into.shape())
            throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        into = it->second;
    };
    for (const auto& name : store.names()) take(ckpt.params, name, store.at(name));
    for (const auto& name : store.buffer_names()) take(ckpt.buffers, name, store.buffer(name));
}

void warm_start_model(Model& model, const Checkpoint& ckpt) {
    ParamStore donor;
    for (const auto& [name, t] : ckpt.params) donor.add(name, t);
    for (const auto& [name, t] : ckpt.buffers) donor.add_buffer(name, t);
    copy_overlapping_params(model.store(), donor);
}

// --- training loop -----------------------------------------------------------------

void write_metrics_tsv(const std::vector<EpochMetrics>& history, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("metrics: cannot open '" + path + "'");
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "epoch\ttrain_mse\tval_mse\theading_acc\n";
    for (const EpochMetrics& em : history)
        out << em.epoch << "\t" << fmt(em.train_mse) << "\t" << fmt(em.val_mse) << "\t"
            << fmt(em.val_heading_acc) << "\n";
    if (!out) throw IoError("metrics: short write to '" + path + "'");
}

std::vector<EpochMetrics> read_metrics_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("metrics: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "epoch\ttrain_mse\tval_mse\theading_acc")
        throw FormatError("metrics: '" + path + "' has a malformed header");
    std::vector<EpochMetrics> history;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string epoch_field, train_field, val_field, acc_field;
        if (!(row >> epoch_field >> train_field >> val_field >> acc_field))
            throw FormatError("metrics: '" + path + "' has a malformed row");
        // strtod over streams: the columns may legitimately hold "nan"
        auto num = [&](const std::string& field) {
            char* end = nullptr;
            const double v = std::strtod(field.c_str(), &end);
            if (end == field.c_str() || *end != '\0')
                throw FormatError("metrics: '" + path + "' has a malformed number '" + field +
                                  "'");
            return v;
        };
        EpochMetrics em;
        em.epoch = static_cast<std::int64_t>(num(epoch_field));
        em.train_mse = num(train_field);
        em.val_mse = num(val_field);
        em.val_heading_acc = num(acc_field);
        history.push_back(em);
    }
    return history;
}

namespace {

std::string checkpoint_name(std::int64_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_epoch_%04lld.gckp", static_cast<long long>(epoch));
    return buf;
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, AdamOptimizer& opt, MovieStore& store,
                                const WeatherTable& weather, const ExoScaling& scaling,
                                const TrainSettings& settings, const std::string& run_dir,
                                const std::string& config_echo, std::vector<EpochMetrics> history,
                                const TrainHooks& hooks) {
    if (settings.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (settings.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    const Manifest& manifest = store.manifest();
    const std::int64_t bins = manifest.grid.bins_per_day;
    const std::int64_t q = model.config().q;

    const std::vector<std::int64_t> train_days = manifest.day_indices("train");
    if (train_days.empty()) throw DataError("train: the manifest has no train days");
    const std::vector<SequenceWindow> train_windows =
        enumerate_windows(train_days, bins, q, settings.strategy, settings.like_test_bins);
    if (train_windows.empty()) throw DataError("train: no training windows under this strategy");

    const std::vector<std::int64_t> val_days = manifest.day_indices("val");
    const std::vector<SequenceWindow> val_windows =
        enumerate_windows(val_days, bins, q, Strategy::non_overlapping);

    if (!run_dir.empty()) fs::create_directories(run_dir);

    const std::int64_t done = history.empty() ? 0 : history.back().epoch;
    for (std::int64_t epoch = done; epoch < settings.epochs; ++epoch) {
        BatchPipeline pipeline(build_epoch_index(train_windows, epoch, settings.seed),
                               settings.batch_size, store, weather, scaling,
                               manifest.week_offset, settings.workers, settings.depth);
        double sse = 0.0;
        std::int64_t elements = 0;
        std::int64_t batch_index = 0;
        while (std::optional<Batch> batch = pipeline.next()) {
            nn::Graph g(true, hash_mix(settings.seed, static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(batch_index), 0x64726f70ULL));
            BoundParams bound = model.bind(g);
            TargetBundle target;
            PredictionBundle pred = model.forward(g, bound, *batch, &target);
            nn::Value loss = training_loss(g, pred, target, settings.weights);
            const double loss_value = g.val(loss)[0];
            if (!std::isfinite(loss_value))
                throw NumericalError(
                    "training aborted on non-finite loss at epoch " + std::to_string(epoch + 1) +
                    ", batch " + std::to_string(batch_index) + ", learning rate " +
                    std::to_string(settings.learning_rate));
            const Tensor& frames = g.val(pred.frames);
            sse += l2_value(frames, batch->targets) * static_cast<double>(frames.numel());
            elements += frames.numel();
            g.backward(loss);
            opt.step(g, bound);
            ++batch_index;
        }

        EpochMetrics metrics;
        metrics.epoch = epoch + 1;
        metrics.train_mse = sse / static_cast<double>(elements);
        if (val_windows.empty()) {
            metrics.val_mse = std::numeric_limits<double>::quiet_NaN();
            metrics.val_heading_acc = std::numeric_limits<double>::quiet_NaN();
        } else {
            const MetricReport val = evaluate_windows(model_predictor(model), val_windows, store,
                                                      weather, scaling, manifest.week_offset,
                                                      settings.batch_size);
            metrics.val_mse = val.mse_total;
            metrics.val_heading_acc = val.heading_accuracy_data;
        }
        history.push_back(metrics);

        if (!run_dir.empty()) {
            save_checkpoint(
                snapshot_checkpoint(model, opt, metrics.epoch, history, config_echo),
                run_dir + "/" + checkpoint_name(metrics.epoch));
            write_metrics_tsv(history, run_dir + "/metrics.tsv");
        }
        if (hooks.after_epoch && !hooks.after_epoch(metrics)) break;
        if (settings.target_train_mse > 0.0 && metrics.train_mse <= settings.target_train_mse)
            break;
    }
    return history;
}

// --- evaluation ---------------------------------------------------------------------

Predictor model_predictor(Model& model) {
    return [&model](const Batch& batch) {
        nn::Graph g(false, 0);
        BoundParams bound = model.bind(g);
        PredictionBundle pred = model.forward(g, bound, batch);
        return g.val(pred.frames);
    };
}

Predictor persistence_predictor() {
    return [](const Batch& batch) { return persistence_prediction(batch.inputs); };
}

PredictionBundle persistence_baseline(nn::Graph& g, const Batch& batch) {
    PredictionBundle bundle;
    bundle.frames = g.leaf(persistence_prediction(batch.inputs), false);
    return bundle;
}

MetricReport evaluate_windows(const Predictor& predict, const std::vector<SequenceWindow>& windows,
                              MovieStore& store, const WeatherTable& weather,
                              const ExoScaling& scaling, std::int64_t week_offset,
                              std::int64_t batch_size) {
    if (windows.empty()) throw DomainError("evaluate_windows: no windows to score");
    if (batch_size < 1) throw DomainError("evaluate_windows: batch_size must be >= 1");
    MetricAccumulator acc;
    for (std::size_t at = 0; at < windows.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(windows.size(), at + static_cast<std::size_t>(batch_size));
        const std::vector<SequenceWindow> chunk(windows.begin() + static_cast<std::ptrdiff_t>(at),
                                                windows.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch batch = assemble_batch(chunk, store, weather, scaling, week_offset);
        acc.add(predict(batch), batch.targets);
    }
    return acc.report();
}

void EvalProtocol::validate(std::int64_t bins_per_day) const {
    if (block_start_bins.empty()) throw ConfigError("eval: no block start bins");
    if (input_len < 1) throw ConfigError("eval: input_len must be >= 1");
    for (std::int64_t s : block_start_bins)
        if (s - input_len < 0 || s + output_len > bins_per_day)
            throw ConfigError("eval: block start bin " + std::to_string(s) + " needs " +
                              std::to_string(input_len) + " bins before and " +
                              std::to_string(output_len) + " after inside a " +
                              std::to_string(bins_per_day) + "-bin day");
}

EvalProtocol protocol_for_profile(const std::string& name) {
    EvalProtocol protocol;
    if (name == "moscow" || name == "istanbul")
        protocol.block_start_bins = {57, 114, 174, 222, 258};
    else if (name == "berlin")
        protocol.block_start_bins = {30, 69, 126, 186, 234};
    else
        throw ConfigError("unknown city profile '" + name + "'");
    return protocol;
}

MetricReport evaluate_challenge(const Predictor& predict, MovieStore& store,
                                const WeatherTable& weather, const ExoScaling& scaling,
                                std::int64_t week_offset, const EvalProtocol& protocol,
                                std::int64_t q, std::int64_t* blocks_visited) {
    const Manifest& manifest = store.manifest();
    protocol.validate(manifest.grid.bins_per_day);
    if (q < 1 || q > protocol.input_len)
        throw ConfigError("eval: q must lie in [1," + std::to_string(protocol.input_len) + "]");

    const std::int64_t tail = *std::max_element(protocol.block_start_bins.begin(),
                                                protocol.block_start_bins.end()) +
                              EvalProtocol::output_len;
    MetricAccumulator acc;
    std::int64_t visited = 0;
    for (const ManifestDay& day : manifest.days) {
        if (store.movie(day.day_index).spec.bins_per_day < tail) {
            std::cerr << "warning: day " << day.day_index
                      << " is shorter than the evaluation window; skipped\n";
            continue;
        }
        // the most recent q bins of each 12-bin input block
        std::vector<SequenceWindow> windows;
        for (std::int64_t s : protocol.block_start_bins)
            windows.push_back({day.day_index, s, q});
        const Batch batch = assemble_batch(windows, store, weather, scaling, week_offset);
        acc.add(predict(batch), batch.targets);
        visited += static_cast<std::int64_t>(windows.size());
    }
    if (blocks_visited) *blocks_visited = visited;
    return acc.report();
}

// --- report artifacts ----------------------------------------------------------------

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string safe_label(const std::string& label) {
    std::string out = label;
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return out.empty() ? "run" : out;
}

void write_breakdown(const MetricReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("report: cannot open '" + path + "'");
    out << "horizon_min\tspeed\tvolume\theading\n";
    for (int t = 0; t < 3; ++t) {
        out << (t + 1) * 5;
        for (int c = 0; c < 3; ++c) out << "\t" << fmt17(report.mse_breakdown[c][t]);
        out << "\n";
    }
}

}  // namespace

void write_history_plot(const std::vector<EpochMetrics>& history, const std::string& path) {
    if (history.empty()) return;  // nothing to draw
    const double width = 640, height = 400, ml = 60, mr = 20, mt = 20, mb = 40;
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const EpochMetrics& em : history)
        for (double v : {em.train_mse, em.val_mse})
            if (std::isfinite(v)) {
                hi = any ? std::max(hi, v) : v;
                lo = any ? std::min(lo, v) : v;
                any = true;
            }
    if (!any) return;
    if (hi == lo) hi = lo + 1.0;
    const double x0 = static_cast<double>(history.front().epoch);
    const double x1 = static_cast<double>(history.back().epoch);
    const double span = x1 > x0 ? x1 - x0 : 1.0;
    auto px = [&](double epoch) { return ml + (epoch - x0) / span * (width - ml - mr); };
    auto py = [&](double v) { return height - mb - (v - lo) / (hi - lo) * (height - mt - mb); };
    auto polyline = [&](auto select) {
        std::string pts;
        for (const EpochMetrics& em : history) {
            const double v = select(em);
            if (!std::isfinite(v)) continue;
            pts += fmt6(px(static_cast<double>(em.epoch))) + "," + fmt6(py(v)) + " ";
        }
        return pts;
    };

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("report: cannot open '" + path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << (width / 2) << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
    out << "<text x=\"14\" y=\"" << (height / 2)
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
        << (height / 2) << ")\">mse</text>\n";
    out << "<text x=\"" << ml - 6 << "\" y=\"" << py(hi) + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt6(hi) << "</text>\n";
    out << "<text x=\"" << ml - 6 << "\" y=\"" << py(lo) + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt6(lo) << "</text>\n";
    out << "<text x=\"" << px(x0) << "\" y=\"" << height - mb + 14
        << "\" text-anchor=\"middle\" font-size=\"10\">" << history.front().epoch << "</text>\n";
    out << "<text x=\"" << px(x1) << "\" y=\"" << height - mb + 14
        << "\" text-anchor=\"middle\" font-size=\"10\">" << history.back().epoch << "</text>\n";
    const std::string train_pts = polyline([](const EpochMetrics& em) { return em.train_mse; });
    const std::string val_pts = polyline([](const EpochMetrics& em) { return em.val_mse; });
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\""
        << train_pts << "\"/>\n";
    if (!val_pts.empty())
        out << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\""
            << val_pts << "\"/>\n";
    out << "<text x=\"" << width - mr - 4 << "\" y=\"" << mt + 12
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"#1f77b4\">train</text>\n";
    if (!val_pts.empty())
        out << "<text x=\"" << width - mr - 4 << "\" y=\"" << mt + 26
            << "\" text-anchor=\"end\" font-size=\"11\" fill=\"#d62728\">val</text>\n";
    out << "</svg>\n";
    if (!out) throw IoError("report: short write to '" + path + "'");
}

void report_tables(const std::vector<RunSummary>& runs, const std::string& out_dir) {
    if (runs.empty()) throw DomainError("report_tables: need at least one run");
    fs::create_directories(out_dir);

    {
        std::ofstream out(out_dir + "/overview.tsv", std::ios::trunc);
        if (!out) throw IoError("report: cannot open '" + out_dir + "/overview.tsv'");
        out << "run\tcity\tmse_total\theading_accuracy_data\tepochs\n";
        for (const RunSummary& run : runs)
            out << run.label << "\t" << run.city << "\t" << fmt17(run.report.mse_total) << "\t"
                << fmt17(run.report.heading_accuracy_data) << "\t" << run.epochs << "\n";
    }
    {
        std::ofstream out(out_dir + "/comparison.tsv", std::ios::trunc);
        if (!out) throw IoError("report: cannot open '" + out_dir + "/comparison.tsv'");
        out << "metric";
        for (const RunSummary& run : runs) out << "\t" << run.label;
        out << "\n";
        auto row = [&](const char* name, auto select) {
            out << name;
            for (const RunSummary& run : runs) out << "\t" << fmt17(select(run.report));
            out << "\n";
        };
        row("mse_total", [](const MetricReport& r) { return r.mse_total; });
        row("heading_accuracy_all", [](const MetricReport& r) { return r.heading_accuracy_all; });
        row("heading_accuracy_data",
            [](const MetricReport& r) { return r.heading_accuracy_data; });
    }
    for (const RunSummary& run : runs) {
        const std::string label = safe_label(run.label);
        write_breakdown(run.report, out_dir + "/breakdown_" + label + ".tsv");
        if (!run.history.empty())
            write_history_plot(run.history, out_dir + "/history_" + label + ".svg");
    }
}

}  // namespace gridcast
