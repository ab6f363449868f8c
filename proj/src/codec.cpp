#include "gridcast/codec.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace gridcast {

std::uint8_t heading_bin(double degrees) {
    if (!(degrees >= 0.0 && degrees < 360.0))
        throw DomainError("heading_bin: degrees must lie in [0, 360)");
    if (degrees < 90.0) return 85;    // NE
    if (degrees < 180.0) return 255;  // SE
    if (degrees < 270.0) return 170;  // SW
    return 1;                         // NW
}

std::uint8_t aggregate_heading(const std::int64_t counts[4]) {
    static constexpr std::uint8_t codes[4] = {85, 255, 170, 1};  // NE, SE, SW, NW
    std::int64_t best = -1;
    int best_i = -1;
    bool unique = false;
    for (int i = 0; i < 4; ++i) {
        if (counts[i] < 0) throw DomainError("aggregate_heading: negative count");
        if (counts[i] > best) {
            best = counts[i];
            best_i = i;
            unique = true;
        } else if (counts[i] == best) {
            unique = false;
        }
    }
    if (best <= 0) throw DomainError("aggregate_heading: all counts zero");
    return unique ? codes[best_i] : 0;
}

std::uint8_t encode_volume(std::int64_t count, const CodecParams& params) {
    params.validate();
    if (count < 0) throw DomainError("encode_volume: negative count");
    if (count == 0) return 0;
    const std::int64_t clamped = std::clamp(count, params.volume_cap_min, params.volume_cap_max);
    const double span = static_cast<double>(params.volume_cap_max - params.volume_cap_min);
    const double v = 1.0 + 254.0 * static_cast<double>(clamped - params.volume_cap_min) / span;
    return static_cast<std::uint8_t>(round_half_away(v));
}

std::uint8_t encode_speed(double avg_kmh, const CodecParams& params) {
    params.validate();
    if (avg_kmh < 0.0) throw DomainError("encode_speed: negative speed");
    const double v = 255.0 * std::min(avg_kmh, params.speed_cap_max) / params.speed_cap_max;
    return static_cast<std::uint8_t>(round_half_away(v));
}

TrafficMovie rasterize_probes(const std::vector<ProbePoint>& probes, const GridSpec& spec,
                              const CodecParams& params, std::int64_t day_index) {
    spec.validate();
    params.validate();
    if (day_index < 0) day_index = probes.empty() ? 0 : probes.front().day_index;

    struct CellAcc {
        std::int64_t count = 0;
        double speed_sum = 0.0;
        std::int64_t quad[4] = {0, 0, 0, 0};
    };
    std::unordered_map<std::int64_t, CellAcc> cells;
    cells.reserve(probes.size());
    for (const auto& p : probes) {
        if (p.day_index != day_index)
            throw DomainError("rasterize_probes: probes span more than one day");
        if (p.time_bin < 0 || p.time_bin >= spec.bins_per_day || p.row < 0 ||
            p.row >= spec.height || p.col < 0 || p.col >= spec.width)
            throw DomainError("rasterize_probes: probe outside the grid");
        if (p.speed_kmh < 0.0) throw DomainError("rasterize_probes: negative speed");
        const std::uint8_t code = heading_bin(p.heading_deg);
        auto& acc = cells[(p.time_bin * spec.height + p.row) * spec.width + p.col];
        acc.count += 1;
        acc.speed_sum += p.speed_kmh;
        acc.quad[code == 85 ? 0 : code == 255 ? 1 : code == 170 ? 2 : 3] += 1;
    }

    TrafficMovie movie = TrafficMovie::zeros(spec, day_index);
    for (const auto& [key, acc] : cells) {
        const std::size_t base = static_cast<std::size_t>(key) * 3;
        movie.data[base + 0] = encode_speed(acc.speed_sum / static_cast<double>(acc.count), params);
        movie.data[base + 1] = encode_volume(acc.count, params);
        movie.data[base + 2] = aggregate_heading(acc.quad);
    }
    return movie;
}

Tensor normalize_movie(const TrafficMovie& movie) {
    Tensor t({movie.spec.bins_per_day, movie.spec.height, movie.spec.width, 3});
    const std::int64_t n = t.numel();
    if (static_cast<std::int64_t>(movie.data.size()) != n)
        throw DomainError("normalize_movie: data size does not match spec");
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i)
        t[i] = static_cast<double>(movie.data[static_cast<std::size_t>(i)]) / 255.0;
    return t;
}

TrafficMovie denormalize_movie(const Tensor& values, const GridSpec& spec,
                               std::int64_t day_index) {
    TrafficMovie movie = TrafficMovie::zeros(spec, day_index);
    if (values.numel() != static_cast<std::int64_t>(movie.data.size()))
        throw DomainError("denormalize_movie: element count does not match spec");
    const std::int64_t n = values.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = std::clamp(values[i] * 255.0, 0.0, 255.0);
        movie.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(round_half_away(v));
    }
    return movie;
}

std::uint8_t snap_heading_level(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw DomainError("snap_heading: value outside [0,1]");
    const double raw = value * 255.0;
    std::uint8_t best = kHeadingLevels[0];
    double best_dist = std::abs(raw - kHeadingLevels[0]);
    for (std::uint8_t level : kHeadingLevels) {
        const double dist = std::abs(raw - level);
        if (dist < best_dist) {  // strict: ties keep the smaller (earlier) level
            best_dist = dist;
            best = level;
        }
    }
    return best;
}

namespace {

constexpr char kMagic[4] = {'T', '4', 'C', 'M'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const char* field) {
    std::uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("movie file truncated in header field '") + field + "'");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_movie(const TrafficMovie& movie, const std::string& path, const MovieMeta& meta) {
    movie.spec.validate();
    if (static_cast<std::int64_t>(movie.data.size()) != movie.spec.movie_elems())
        throw DomainError("write_movie: data size does not match spec");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_movie: cannot open '" + path + "'");
    out.write(kMagic, 4);
    const std::uint8_t version_and_reserved[4] = {1, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(version_and_reserved), 4);
    put_u32(out, static_cast<std::uint32_t>(movie.spec.bins_per_day));
    put_u32(out, static_cast<std::uint32_t>(movie.spec.height));
    put_u32(out, static_cast<std::uint32_t>(movie.spec.width));
    put_u32(out, 3);
    out.write(reinterpret_cast<const char*>(movie.data.data()),
              static_cast<std::streamsize>(movie.data.size()));
    if (!out) throw IoError("write_movie: short write to '" + path + "'");
    out.close();

    nlohmann::json j;
    j["city"] = meta.city;
    j["day_index"] = movie.day_index;
    j["codec"] = {{"volume_cap_min", meta.codec.volume_cap_min},
                  {"volume_cap_max", meta.codec.volume_cap_max},
                  {"speed_cap_max", meta.codec.speed_cap_max}};
    std::ofstream ms(path + ".meta", std::ios::trunc);
    if (!ms) throw IoError("write_movie: cannot open '" + path + ".meta'");
    ms << j.dump(2) << "\n";
}

TrafficMovie read_movie(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_movie: cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("read_movie: bad header field 'magic' in '" + path + "'");
    std::uint8_t vr[4];
    if (!in.read(reinterpret_cast<char*>(vr), 4))
        throw FormatError("movie file truncated in header field 'version'");
    if (vr[0] != 1)
        throw FormatError("read_movie: unsupported header field 'version' = " +
                          std::to_string(vr[0]));
    TrafficMovie movie;
    movie.spec.bins_per_day = get_u32(in, "bins");
    movie.spec.height = get_u32(in, "height");
    movie.spec.width = get_u32(in, "width");
    const std::uint32_t channels = get_u32(in, "channels");
    if (channels != 3)
        throw FormatError("read_movie: bad header field 'channels' = " + std::to_string(channels));
    movie.spec.validate();
    movie.data.resize(static_cast<std::size_t>(movie.spec.movie_elems()));
    if (!in.read(reinterpret_cast<char*>(movie.data.data()),
                 static_cast<std::streamsize>(movie.data.size())))
        throw FormatError("read_movie: field 'payload' shorter than header dims imply in '" +
                          path + "'");
    char extra;
    if (in.read(&extra, 1))
        throw FormatError("read_movie: field 'payload' longer than header dims imply in '" +
                          path + "'");

    MovieMeta meta;
    if (read_movie_meta(path, meta)) movie.day_index = meta.day_index;
    return movie;
}

bool read_movie_meta(const std::string& movie_path, MovieMeta& out) {
    std::ifstream ms(movie_path + ".meta");
    if (!ms) return false;
    nlohmann::json j;
    try {
        ms >> j;
        out.city = j.value("city", std::string());
        out.day_index = j.value("day_index", std::int64_t{0});
        if (j.contains("codec")) {
            out.codec.volume_cap_min = j["codec"].value("volume_cap_min", std::int64_t{1});
            out.codec.volume_cap_max = j["codec"].value("volume_cap_max", std::int64_t{64});
            out.codec.speed_cap_max = j["codec"].value("speed_cap_max", 120.0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_movie_meta: malformed sidecar '" + movie_path +
                          ".meta': " + e.what());
    }
    return true;
}

void validate_movie(const TrafficMovie& movie) {
    if (static_cast<std::int64_t>(movie.data.size()) != movie.spec.movie_elems())
        throw DataError("movie data size does not match its spec");
    const std::size_t cells = movie.data.size() / 3;
    for (std::size_t i = 0; i < cells; ++i) {
        const std::uint8_t speed = movie.data[i * 3 + 0];
        const std::uint8_t volume = movie.data[i * 3 + 1];
        const std::uint8_t heading = movie.data[i * 3 + 2];
        if (heading != 0 && heading != 1 && heading != 85 && heading != 170 && heading != 255)
            throw DataError("movie heading value " + std::to_string(heading) +
                            " outside {0,1,85,170,255} at cell " + std::to_string(i));
        if (volume == 0 && (speed != 0 || heading != 0))
            throw DataError("movie no-data violation at cell " + std::to_string(i) +
                            ": volume=0 with speed=" + std::to_string(speed) +
                            " heading=" + std::to_string(heading));
    }
}

}  // namespace gridcast
