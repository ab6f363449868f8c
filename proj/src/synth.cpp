#include "gridcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace gridcast {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// Quadrant-center headings; corridors flow along one of these.
constexpr double kEastish = 45.0;    // NE
constexpr double kSouthish = 135.0;  // SE
constexpr double kWestish = 225.0;   // SW
constexpr double kNorthish = 315.0;  // NW

double wrap_degrees(double deg) {
    deg = std::fmod(deg, 360.0);
    return deg < 0.0 ? deg + 360.0 : deg;
}

// Reflects an unbounded coordinate into [0, limit] (triangle wave).
double reflect_into(double u, double limit) {
    if (limit <= 0.0) return 0.0;
    const double period = 2.0 * limit;
    double m = std::fmod(u, period);
    if (m < 0.0) m += period;
    return m <= limit ? m : period - m;
}

struct Blob {
    double row0 = 0.0, col0 = 0.0;  // start position
    double vrow = 0.0, vcol = 0.0;  // unit direction
    double radius = 3.0;
    double amplitude = 1.0;
};

}  // namespace

CityTemplate generate_city(std::uint64_t seed, const GridSpec& spec) {
    spec.validate();
    CityTemplate city;
    city.spec = spec;
    const std::size_t cells = static_cast<std::size_t>(spec.height * spec.width);
    city.road_mask.assign(cells, 0);
    city.flow_field.assign(cells, 0.0);
    city.base_intensity.assign(cells, 0.0);

    Rng rng(hash_mix(seed, 0x63697479ULL));  // city stream

    auto paint_row = [&](std::int64_t row, double heading) {
        for (std::int64_t col = 0; col < spec.width; ++col) {
            const std::size_t i = static_cast<std::size_t>(row * spec.width + col);
            city.road_mask[i] = 1;
            city.flow_field[i] = wrap_degrees(heading + rng.next_range(-20.0, 20.0));
        }
    };
    auto paint_col = [&](std::int64_t col, double heading) {
        for (std::int64_t row = 0; row < spec.height; ++row) {
            const std::size_t i = static_cast<std::size_t>(row * spec.width + col);
            city.road_mask[i] = 1;
            city.flow_field[i] = wrap_degrees(heading + rng.next_range(-20.0, 20.0));
        }
    };

    // guaranteed central corridors
    paint_row(spec.height / 2, rng.next_unit() < 0.5 ? kEastish : kWestish);
    paint_col(spec.width / 2, rng.next_unit() < 0.5 ? kSouthish : kNorthish);

    // seeded extras, roughly one per 8 rows/columns
    const std::int64_t extra_rows = std::max<std::int64_t>(1, spec.height / 8);
    const std::int64_t extra_cols = std::max<std::int64_t>(1, spec.width / 8);
    for (std::int64_t i = 0; i < extra_rows; ++i)
        paint_row(static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(spec.height))),
                  rng.next_unit() < 0.5 ? kEastish : kWestish);
    for (std::int64_t i = 0; i < extra_cols; ++i)
        paint_col(static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(spec.width))),
                  rng.next_unit() < 0.5 ? kSouthish : kNorthish);

    for (std::size_t i = 0; i < cells; ++i)
        if (city.road_mask[i]) city.base_intensity[i] = rng.next_range(0.3, 1.0);
    return city;
}

namespace {

std::vector<Blob> day_blobs(const CityTemplate& city, const SynthConfig& config,
                            std::int64_t day_index) {
    Rng rng(hash_mix(config.seed, static_cast<std::uint64_t>(day_index), 0x626c6f62ULL));
    std::vector<Blob> blobs(2);
    for (auto& b : blobs) {
        b.row0 = rng.next_range(0.0, static_cast<double>(city.spec.height - 1));
        b.col0 = rng.next_range(0.0, static_cast<double>(city.spec.width - 1));
        const double angle = rng.next_range(0.0, kTau);
        b.vrow = std::sin(angle);
        b.vcol = std::cos(angle);
        b.radius = rng.next_range(2.5, 4.0);
        b.amplitude = rng.next_range(0.6, 1.0);
    }
    return blobs;
}

double blob_congestion(const std::vector<Blob>& blobs, const CityTemplate& city, double row,
                       double col, double t, double drift) {
    double total = 0.0;
    for (const auto& b : blobs) {
        const double brow = reflect_into(b.row0 + b.vrow * drift * t,
                                         static_cast<double>(city.spec.height - 1));
        const double bcol = reflect_into(b.col0 + b.vcol * drift * t,
                                         static_cast<double>(city.spec.width - 1));
        const double d2 = (row - brow) * (row - brow) + (col - bcol) * (col - bcol);
        total += b.amplitude * std::exp(-d2 / (2.0 * b.radius * b.radius));
    }
    return total;
}

double rush_envelope(const SynthConfig& config, std::int64_t t) {
    if (config.rush_hours.empty()) return 1.0;
    double peaks = 0.0;
    for (const auto& r : config.rush_hours) {
        const double dt = static_cast<double>(t - r.peak_bin);
        const double sigma = std::max(1.0, r.width);
        peaks += std::exp(-dt * dt / (2.0 * sigma * sigma));
    }
    return 0.25 + 0.75 * std::min(1.0, peaks);
}

}  // namespace

TrafficMovie simulate_day(const CityTemplate& city, const SynthConfig& config,
                          std::int64_t day_index, const CodecParams& params) {
    config.validate();
    if (day_index < 0 || day_index >= config.num_days)
        throw DomainError("simulate_day: day_index outside config.num_days");

    const GridSpec& spec = city.spec;
    const auto blobs = day_blobs(city, config, day_index);
    const std::int64_t dow = ((day_index + config.week_offset) % 7 + 7) % 7;
    const double dow_factor = (dow == 5 || dow == 6) ? 0.6 : 1.0;
    const double noise = config.noise_level;

    std::vector<ProbePoint> probes;
    probes.reserve(static_cast<std::size_t>(city.road_cell_count() * spec.bins_per_day * 3));

    for (std::int64_t t = 0; t < spec.bins_per_day; ++t) {
        const double envelope = rush_envelope(config, t);
        for (std::int64_t row = 0; row < spec.height; ++row) {
            for (std::int64_t col = 0; col < spec.width; ++col) {
                const std::size_t cell = static_cast<std::size_t>(row * spec.width + col);
                if (!city.road_mask[cell]) continue;
                Rng rng(hash_mix(config.seed, static_cast<std::uint64_t>(day_index),
                                 static_cast<std::uint64_t>(t),
                                 static_cast<std::uint64_t>(cell)));

                const double cong =
                    std::min(1.0, blob_congestion(blobs, city, static_cast<double>(row),
                                                  static_cast<double>(col),
                                                  static_cast<double>(t),
                                                  config.drift_cells_per_bin));
                const double lambda = city.base_intensity[cell] * envelope * dow_factor *
                                      (1.0 + 0.8 * cong);
                const double count_jitter = noise * rng.next_range(-2.0, 2.0);
                const std::int64_t count = std::max<std::int64_t>(
                    0, round_half_away(4.0 * lambda + count_jitter));
                if (count == 0) continue;

                const double free_speed = 100.0 - 50.0 * city.base_intensity[cell];
                const double cell_speed =
                    std::max(2.0, free_speed * (1.0 - 0.65 * cong) *
                                          (1.0 - 0.2 * (envelope - 0.25)) +
                                      noise * rng.next_range(-8.0, 8.0));

                for (std::int64_t i = 0; i < count; ++i) {
                    ProbePoint p;
                    p.day_index = day_index;
                    p.time_bin = t;
                    p.row = row;
                    p.col = col;
                    p.speed_kmh = std::max(0.0, cell_speed + noise * rng.next_range(-3.0, 3.0));
                    p.heading_deg =
                        wrap_degrees(city.flow_field[cell] + noise * rng.next_range(-25.0, 25.0));
                    probes.push_back(p);
                }
            }
        }
    }
    return rasterize_probes(probes, spec, params, day_index);
}

WeatherTable generate_weather(std::uint64_t seed, std::int64_t num_days,
                              std::int64_t bins_per_day) {
    if (num_days < 1 || bins_per_day < 1)
        throw DomainError("generate_weather: counts must be positive");
    WeatherTable table(num_days, bins_per_day);
    Rng rng(hash_mix(seed, 0x77656174ULL));  // weather stream

    // amplitude small enough that the diurnal slope alone stays well under the
    // 1 degree/bin budget, leaving room for the <= 0.5 day-to-day base walk
    const double amp = std::min(6.0, 0.45 * static_cast<double>(bins_per_day) / kTau);
    double base_temp = rng.next_range(4.0, 18.0);

    for (std::int64_t day = 0; day < num_days; ++day) {
        const double rain_level = std::max(0.0, rng.next_range(-2.0, 2.5));
        const double rain_phase = rng.next_range(0.0, kTau);
        const double wind_base = rng.next_range(3.0, 14.0);
        const double wind_phase = rng.next_range(0.0, kTau);
        for (std::int64_t bin = 0; bin < bins_per_day; ++bin) {
            const double theta = kTau * static_cast<double>(bin) / static_cast<double>(bins_per_day);
            WeatherRecord& r = table.at(day, bin);
            r.day_index = day;
            r.time_bin = bin;
            r.temperature_c = base_temp - amp * std::cos(theta);
            const double rain_shape = std::max(0.0, std::sin(theta + rain_phase));
            r.precipitation_mm = rain_level * rain_shape * rain_shape;
            r.wind_kmh = std::max(0.0, wind_base + 6.0 * std::sin(theta + wind_phase));
        }
        base_temp += rng.next_range(-0.5, 0.5);
    }
    return table;
}

void write_weather(const WeatherTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_weather: cannot open '" + path + "'");
    out << "day,bin,temp_c,precip_mm,wind_kmh\n";
    char line[160];
    for (const auto& r : table.records()) {
        std::snprintf(line, sizeof line, "%lld,%lld,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.day_index), static_cast<long long>(r.time_bin),
                      r.temperature_c, r.precipitation_mm, r.wind_kmh);
        out << line;
    }
    if (!out) throw IoError("write_weather: short write to '" + path + "'");
}

WeatherTable read_weather(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_weather: cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header) || header != "day,bin,temp_c,precip_mm,wind_kmh")
        throw FormatError("read_weather: bad header in '" + path + "'");

    std::vector<WeatherRecord> rows;
    std::string line;
    std::int64_t max_day = -1, max_bin = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        WeatherRecord r;
        long long day = 0, bin = 0;
        if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf", &day, &bin, &r.temperature_c,
                        &r.precipitation_mm, &r.wind_kmh) != 5)
            throw FormatError("read_weather: malformed line '" + line + "'");
        r.day_index = day;
        r.time_bin = bin;
        max_day = std::max(max_day, r.day_index);
        max_bin = std::max(max_bin, r.time_bin);
        rows.push_back(r);
    }
    if (rows.empty()) throw FormatError("read_weather: no records in '" + path + "'");

    WeatherTable table(max_day + 1, max_bin + 1);
    std::vector<char> seen(rows.size(), 0);
    if (static_cast<std::int64_t>(rows.size()) != (max_day + 1) * (max_bin + 1))
        throw DataError("read_weather: table is not dense over days x bins");
    for (const auto& r : rows) {
        const std::size_t idx = static_cast<std::size_t>(r.day_index * (max_bin + 1) + r.time_bin);
        if (seen[idx]) throw DataError("read_weather: duplicate record for day " +
                                       std::to_string(r.day_index) + " bin " +
                                       std::to_string(r.time_bin));
        seen[idx] = 1;
        table.at(r.day_index, r.time_bin) = r;
    }
    return table;
}

}  // namespace gridcast
