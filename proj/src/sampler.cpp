#include "gridcast/sampler.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace gridcast {

Strategy strategy_from_string(const std::string& name) {
    if (name == "non_overlapping") return Strategy::non_overlapping;
    if (name == "all_slots") return Strategy::all_slots;
    if (name == "like_test") return Strategy::like_test;
    throw ConfigError("unknown sampling strategy '" + name + "'");
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::non_overlapping: return "non_overlapping";
        case Strategy::all_slots: return "all_slots";
        case Strategy::like_test: return "like_test";
    }
    throw DomainError("invalid strategy value");
}

namespace {

void check_window_params(std::int64_t bins_per_day, std::int64_t q) {
    if (q < 1 || q > 12) throw DomainError("sampler: q must lie in [1,12]");
    if (bins_per_day < q + 3)
        throw DomainError("sampler: bins_per_day must be at least q + 3");
}

}  // namespace

std::int64_t count_sequences(std::int64_t bins_per_day, std::int64_t q, Strategy strategy,
                             std::int64_t num_days, std::int64_t starts_per_day_like_test) {
    check_window_params(bins_per_day, q);
    if (num_days < 0) throw DomainError("count_sequences: negative num_days");
    switch (strategy) {
        case Strategy::non_overlapping:
            return num_days * (bins_per_day / (q + 3));
        case Strategy::all_slots:
            return num_days * (bins_per_day - (q + 3) + 1);
        case Strategy::like_test:
            return num_days * starts_per_day_like_test;
    }
    throw DomainError("invalid strategy value");
}

std::vector<SequenceWindow> enumerate_windows(const std::vector<std::int64_t>& days,
                                              std::int64_t bins_per_day, std::int64_t q,
                                              Strategy strategy,
                                              const std::vector<std::int64_t>& test_bins,
                                              std::vector<std::int64_t>* skipped) {
    check_window_params(bins_per_day, q);
    if (strategy == Strategy::like_test && test_bins.empty())
        throw DomainError("enumerate_windows: like_test needs the per-city test bins");

    std::vector<SequenceWindow> out;
    for (std::int64_t day : days) {
        switch (strategy) {
            case Strategy::non_overlapping: {
                const std::int64_t per_day = bins_per_day / (q + 3);
                for (std::int64_t k = 0; k < per_day; ++k)
                    out.push_back({day, k * (q + 3) + q, q});
                break;
            }
            case Strategy::all_slots: {
                for (std::int64_t s = q; s + 3 <= bins_per_day; ++s) out.push_back({day, s, q});
                break;
            }
            case Strategy::like_test: {
                for (std::int64_t s : test_bins) {
                    if (s + 3 > bins_per_day)
                        throw DomainError("enumerate_windows: test bin " + std::to_string(s) +
                                          " does not fit a day of " +
                                          std::to_string(bins_per_day) + " bins");
                    if (s - q < 0) {
                        if (skipped) skipped->push_back(s);
                        continue;
                    }
                    out.push_back({day, s, q});
                }
                break;
            }
        }
    }
    return out;
}

EpochIndex build_epoch_index(std::vector<SequenceWindow> windows, std::int64_t epoch,
                             std::uint64_t seed) {
    if (windows.empty()) throw DomainError("build_epoch_index: no windows to schedule");
    Rng rng(hash_mix(seed, static_cast<std::uint64_t>(epoch), 0x73687566ULL));
    for (std::size_t i = windows.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(windows[i], windows[j]);
    }
    return {std::move(windows), epoch, seed};
}

// --- manifest ----------------------------------------------------------------

std::vector<std::int64_t> Manifest::day_indices(const std::string& role) const {
    std::vector<std::int64_t> out;
    for (const auto& d : days)
        if (role.empty() || d.role == role) out.push_back(d.day_index);
    return out;
}

void write_manifest(const Manifest& m, const std::string& path) {
    if (m.days.empty()) throw FormatError("write_manifest: a manifest must list days");
    nlohmann::json j;
    j["city"] = m.city;
    j["grid"] = {{"height", m.grid.height},
                 {"width", m.grid.width},
                 {"bins_per_day", m.grid.bins_per_day},
                 {"cell_size_m", m.grid.cell_size_m},
                 {"bin_minutes", m.grid.bin_minutes}};
    j["codec"] = {{"volume_cap_min", m.codec.volume_cap_min},
                  {"volume_cap_max", m.codec.volume_cap_max},
                  {"speed_cap_max", m.codec.speed_cap_max}};
    j["weather_path"] = m.weather_path;
    j["week_offset"] = m.week_offset;
    j["days"] = nlohmann::json::array();
    for (const auto& d : m.days)
        j["days"].push_back(
            {{"day_index", d.day_index}, {"movie_path", d.movie_path}, {"role", d.role}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_manifest: cannot open '" + path + "'");
    out << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_manifest: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_manifest: '" + path + "' is not valid JSON: " + e.what());
    }
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (base / p).string();
    };
    Manifest m;
    try {
        m.city = j.value("city", std::string());
        if (j.contains("grid")) {
            m.grid.height = j["grid"].value("height", m.grid.height);
            m.grid.width = j["grid"].value("width", m.grid.width);
            m.grid.bins_per_day = j["grid"].value("bins_per_day", m.grid.bins_per_day);
            m.grid.cell_size_m = j["grid"].value("cell_size_m", m.grid.cell_size_m);
            m.grid.bin_minutes = j["grid"].value("bin_minutes", m.grid.bin_minutes);
        }
        if (j.contains("codec")) {
            m.codec.volume_cap_min = j["codec"].value("volume_cap_min", m.codec.volume_cap_min);
            m.codec.volume_cap_max = j["codec"].value("volume_cap_max", m.codec.volume_cap_max);
            m.codec.speed_cap_max = j["codec"].value("speed_cap_max", m.codec.speed_cap_max);
        }
        m.weather_path = resolve(j.value("weather_path", std::string()));
        m.week_offset = j.value("week_offset", std::int64_t{0});
        if (!j.contains("days") || !j["days"].is_array() || j["days"].empty())
            throw FormatError("read_manifest: '" + path + "' lists no days");
        for (const auto& d : j["days"]) {
            ManifestDay day;
            day.day_index = d.at("day_index").get<std::int64_t>();
            day.movie_path = resolve(d.at("movie_path").get<std::string>());
            day.role = d.value("role", std::string("train"));
            if (day.role != "train" && day.role != "val")
                throw FormatError("read_manifest: day role '" + day.role +
                                  "' is neither 'train' nor 'val'");
            m.days.push_back(std::move(day));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_manifest: '" + path + "' missing field: " + e.what());
    }
    m.grid.validate();
    m.codec.validate();
    return m;
}

// --- movie store ---------------------------------------------------------------

MovieStore::MovieStore(Manifest manifest) : manifest_(std::move(manifest)) {
    for (const auto& d : manifest_.days) path_by_day_[d.day_index] = d.movie_path;
}

const TrafficMovie& MovieStore::movie(std::int64_t day_index) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(day_index);
    if (it != cache_.end()) return *it->second;
    auto path = path_by_day_.find(day_index);
    if (path == path_by_day_.end())
        throw DataError("movie store: city '" + manifest_.city + "' has no day " +
                        std::to_string(day_index) + " in its manifest");
    std::unique_ptr<TrafficMovie> loaded;
    try {
        loaded = std::make_unique<TrafficMovie>(read_movie(path->second));
    } catch (const Error& e) {
        throw DataError("movie store: city '" + manifest_.city + "' day " +
                        std::to_string(day_index) + ": " + e.what());
    }
    loaded->day_index = day_index;
    if (loaded->spec.height != manifest_.grid.height ||
        loaded->spec.width != manifest_.grid.width ||
        loaded->spec.bins_per_day != manifest_.grid.bins_per_day)
        throw DataError("movie store: day " + std::to_string(day_index) +
                        " dims disagree with the manifest grid");
    auto [pos, inserted] = cache_.emplace(day_index, std::move(loaded));
    (void)inserted;
    return *pos->second;
}

// --- batch assembly -------------------------------------------------------------

Batch assemble_batch(const std::vector<SequenceWindow>& windows, MovieStore& store,
                     const WeatherTable& weather, const ExoScaling& scaling,
                     std::int64_t week_offset) {
    if (windows.empty()) throw DomainError("assemble_batch: empty window list");
    const GridSpec& grid = store.manifest().grid;
    const std::int64_t b = static_cast<std::int64_t>(windows.size());
    const std::int64_t q = windows.front().input_len;
    for (const auto& w : windows)
        if (w.input_len != q) throw DomainError("assemble_batch: mixed q in one batch");

    Batch batch;
    batch.inputs = Tensor({b, q, grid.height, grid.width, 3});
    batch.targets = Tensor({b, SequenceWindow::output_len, grid.height, grid.width, 3});
    batch.exo = Tensor({b, kExoDim});
    batch.window_refs = windows;

    const std::int64_t frame = grid.frame_elems();
    for (std::int64_t i = 0; i < b; ++i) {
        const SequenceWindow& w = windows[static_cast<std::size_t>(i)];
        if (w.start_bin - q < 0 || w.start_bin + 3 > grid.bins_per_day)
            throw DomainError("assemble_batch: window outside the day");
        const TrafficMovie& movie = store.movie(w.day_index);
        const std::uint8_t* base = movie.data.data();
        double* in = batch.inputs.data() + i * q * frame;
        const std::uint8_t* src = base + (w.start_bin - q) * frame;
        for (std::int64_t e = 0; e < q * frame; ++e)
            in[e] = static_cast<double>(src[e]) / 255.0;
        double* tg = batch.targets.data() + i * 3 * frame;
        src = base + w.start_bin * frame;
        for (std::int64_t e = 0; e < 3 * frame; ++e)
            tg[e] = static_cast<double>(src[e]) / 255.0;

        const auto exo = assemble_exo(make_calendar_stamp(w.day_index, w.start_bin - 1, week_offset),
                                      weather, scaling);
        std::copy(exo.begin(), exo.end(), batch.exo.data() + i * kExoDim);
    }
    return batch;
}

// --- prefetch pipeline -----------------------------------------------------------

BatchPipeline::BatchPipeline(EpochIndex index, std::int64_t batch_size, MovieStore& store,
                             const WeatherTable& weather, ExoScaling scaling,
                             std::int64_t week_offset, int workers, std::int64_t depth)
    : index_(std::move(index)),
      batch_size_(batch_size),
      store_(store),
      weather_(weather),
      scaling_(scaling),
      week_offset_(week_offset),
      depth_(std::max<std::int64_t>(1, depth)) {
    if (batch_size_ < 1) throw ConfigError("BatchPipeline: batch_size must be >= 1");
    const std::int64_t n = static_cast<std::int64_t>(index_.windows.size());
    batch_count_ = (n + batch_size_ - 1) / batch_size_;  // partial final batch kept
    for (int i = 0; i < workers; ++i)
        threads_.emplace_back([this] { worker_loop(); });
}

BatchPipeline::~BatchPipeline() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        stop_ = true;
    }
    space_cv_.notify_all();
    for (auto& t : threads_) t.join();
}

std::vector<SequenceWindow> BatchPipeline::batch_windows(std::int64_t batch_index) const {
    const std::int64_t n = static_cast<std::int64_t>(index_.windows.size());
    const std::int64_t from = batch_index * batch_size_;
    const std::int64_t to = std::min(n, from + batch_size_);
    return {index_.windows.begin() + from, index_.windows.begin() + to};
}

void BatchPipeline::worker_loop() {
    for (;;) {
        std::int64_t claimed;
        {
            std::unique_lock<std::mutex> lock(mu_);
            space_cv_.wait(lock, [this] {
                return stop_ || (next_to_claim_ < batch_count_ &&
                                 next_to_claim_ < next_to_emit_ + depth_);
            });
            if (stop_ || next_to_claim_ >= batch_count_) return;
            claimed = next_to_claim_++;
        }
        try {
            Batch batch =
                assemble_batch(batch_windows(claimed), store_, weather_, scaling_, week_offset_);
            std::lock_guard<std::mutex> lock(mu_);
            done_.emplace(claimed, std::move(batch));
            ready_cv_.notify_all();
        } catch (...) {
            std::lock_guard<std::mutex> lock(mu_);
            if (!failure_) failure_ = std::current_exception();
            stop_ = true;
            ready_cv_.notify_all();
            space_cv_.notify_all();
            return;
        }
    }
}

std::optional<Batch> BatchPipeline::next() {
    if (next_to_emit_ >= batch_count_) return std::nullopt;
    if (threads_.empty()) {
        // serial reference path: assemble on demand, no queue involved
        Batch batch = assemble_batch(batch_windows(next_to_emit_), store_, weather_, scaling_,
                                     week_offset_);
        ++next_to_emit_;
        return batch;
    }
    std::unique_lock<std::mutex> lock(mu_);
    ready_cv_.wait(lock, [this] { return failure_ || done_.count(next_to_emit_) > 0; });
    if (failure_) std::rethrow_exception(failure_);
    auto it = done_.find(next_to_emit_);
    Batch batch = std::move(it->second);
    done_.erase(it);
    ++next_to_emit_;
    space_cv_.notify_all();
    return batch;
}

}  // namespace gridcast
