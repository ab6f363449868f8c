#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridcast/codec.hpp"
#include "gridcast/common.hpp"

namespace gridcast {

// Static description of a synthetic city: which cells are road, the dominant
// flow direction on each road cell, and how busy each cell is at baseline.
struct CityTemplate {
    GridSpec spec;
    std::vector<std::uint8_t> road_mask;   // height*width, 0/1
    std::vector<double> flow_field;        // heading degrees, meaningful on road cells
    std::vector<double> base_intensity;    // >= 0, zero off-road

    bool is_road(std::int64_t row, std::int64_t col) const {
        return road_mask[static_cast<std::size_t>(row * spec.width + col)] != 0;
    }
    std::int64_t road_cell_count() const {
        std::int64_t n = 0;
        for (auto m : road_mask) n += m != 0;
        return n;
    }
};

struct RushHour {
    std::int64_t peak_bin = 0;
    double width = 12.0;  // gaussian sigma, in bins
};

struct SynthConfig {
    std::uint64_t seed = 42;
    std::int64_t num_days = 1;
    std::vector<RushHour> rush_hours;
    double drift_cells_per_bin = 0.0;  // congestion blob speed
    double noise_level = 0.0;          // in [0,1]
    std::int64_t week_offset = 0;      // day_index 0 falls on this weekday

    void validate() const {
        if (num_days < 1) throw ConfigError("SynthConfig: num_days must be >= 1");
        if (noise_level < 0.0 || noise_level > 1.0)
            throw ConfigError("SynthConfig: noise_level must lie in [0,1]");
        if (drift_cells_per_bin < 0.0)
            throw ConfigError("SynthConfig: drift_cells_per_bin must be >= 0");
    }
};

struct WeatherRecord {
    std::int64_t day_index = 0;
    std::int64_t time_bin = 0;
    double temperature_c = 0.0;
    double precipitation_mm = 0.0;
    double wind_kmh = 0.0;
};

// Dense (day, bin) table; lookups never miss inside the advertised range.
class WeatherTable {
  public:
    WeatherTable() = default;
    WeatherTable(std::int64_t num_days, std::int64_t bins_per_day)
        : num_days_(num_days), bins_per_day_(bins_per_day),
          records_(static_cast<std::size_t>(num_days * bins_per_day)) {}

    std::int64_t num_days() const { return num_days_; }
    std::int64_t bins_per_day() const { return bins_per_day_; }

    WeatherRecord& at(std::int64_t day, std::int64_t bin) {
        return records_[index(day, bin)];
    }
    const WeatherRecord& at(std::int64_t day, std::int64_t bin) const {
        return records_[index(day, bin)];
    }
    const std::vector<WeatherRecord>& records() const { return records_; }

  private:
    std::size_t index(std::int64_t day, std::int64_t bin) const {
        if (day < 0 || day >= num_days_ || bin < 0 || bin >= bins_per_day_)
            throw DataError("weather record missing for day " + std::to_string(day) + " bin " +
                            std::to_string(bin));
        return static_cast<std::size_t>(day * bins_per_day_ + bin);
    }

    std::int64_t num_days_ = 0;
    std::int64_t bins_per_day_ = 0;
    std::vector<WeatherRecord> records_;
};

// Deterministic corridor city: the central row and column are always road, plus
// seeded extra corridors with consistent per-corridor flow directions.
CityTemplate generate_city(std::uint64_t seed, const GridSpec& spec);

// One day of traffic: per-corridor flows with rush-hour envelopes, weekday/weekend
// modulation, and congestion blobs drifting at drift_cells_per_bin. Probes are
// generated cell by cell and rasterized through the codec, so every movie satisfies
// the TrafficMovie invariants by construction.
TrafficMovie simulate_day(const CityTemplate& city, const SynthConfig& config,
                          std::int64_t day_index, const CodecParams& params = {});

// Smooth diurnal weather; consecutive temperature deltas stay below 1 degree C.
WeatherTable generate_weather(std::uint64_t seed, std::int64_t num_days,
                              std::int64_t bins_per_day);

void write_weather(const WeatherTable& table, const std::string& path);
WeatherTable read_weather(const std::string& path);

}  // namespace gridcast
