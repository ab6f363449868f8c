#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridcast/common.hpp"
#include "gridcast/tensor.hpp"

namespace gridcast {

// Grid geometry of one city. Channels are fixed: 0 = speed, 1 = volume, 2 = heading.
struct GridSpec {
    std::int64_t height = 495;
    std::int64_t width = 436;
    std::int64_t bins_per_day = 288;
    double cell_size_m = 100.0;  // informational
    double bin_minutes = 5.0;    // informational

    static constexpr std::int64_t channels = 3;

    void validate() const {
        if (height < 1 || width < 1 || bins_per_day < 1)
            throw DomainError("GridSpec: extents must be positive");
    }
    std::int64_t frame_elems() const { return height * width * channels; }
    std::int64_t movie_elems() const { return bins_per_day * frame_elems(); }
};

// One raw GPS reading, already snapped to a grid cell.
struct ProbePoint {
    std::int64_t day_index = 0;
    std::int64_t time_bin = 0;
    std::int64_t row = 0;
    std::int64_t col = 0;
    double speed_kmh = 0.0;
    double heading_deg = 0.0;
};

// Channel-value transform parameters.
struct CodecParams {
    std::int64_t volume_cap_min = 1;
    std::int64_t volume_cap_max = 64;
    double speed_cap_max = 120.0;

    void validate() const {
        if (volume_cap_min < 1 || volume_cap_min >= volume_cap_max)
            throw DomainError("CodecParams: need 1 <= volume_cap_min < volume_cap_max");
        if (speed_cap_max <= 0.0) throw DomainError("CodecParams: speed_cap_max must be > 0");
    }
};

// One city-day as the (bins, height, width, 3) uint8 tensor.
struct TrafficMovie {
    GridSpec spec;
    std::int64_t day_index = 0;
    std::vector<std::uint8_t> data;  // row-major (t, h, w, c)

    std::uint8_t& at(std::int64_t t, std::int64_t h, std::int64_t w, std::int64_t c) {
        return data[static_cast<std::size_t>(((t * spec.height + h) * spec.width + w) * 3 + c)];
    }
    std::uint8_t at(std::int64_t t, std::int64_t h, std::int64_t w, std::int64_t c) const {
        return data[static_cast<std::size_t>(((t * spec.height + h) * spec.width + w) * 3 + c)];
    }
    static TrafficMovie zeros(const GridSpec& spec, std::int64_t day_index) {
        spec.validate();
        TrafficMovie m;
        m.spec = spec;
        m.day_index = day_index;
        m.data.assign(static_cast<std::size_t>(spec.movie_elems()), 0);
        return m;
    }
};

// Sidecar metadata written next to each movie file.
struct MovieMeta {
    std::string city;
    std::int64_t day_index = 0;
    CodecParams codec;
};

inline constexpr std::uint8_t kHeadingLevels[5] = {0, 1, 85, 170, 255};

// Quadrant code for a heading in [0,360): NE/SE/SW/NW half-open quarters.
std::uint8_t heading_bin(double degrees);

// Majority vote over quadrant counts ordered (NE, SE, SW, NW); 0 on ties.
std::uint8_t aggregate_heading(const std::int64_t counts[4]);

std::uint8_t encode_volume(std::int64_t count, const CodecParams& params);
std::uint8_t encode_speed(double avg_kmh, const CodecParams& params);

// Aggregates probes into a movie. day_index < 0 means "take it from the probes"
// (0 for an empty list); probes disagreeing on the day are a domain error.
TrafficMovie rasterize_probes(const std::vector<ProbePoint>& probes, const GridSpec& spec,
                              const CodecParams& params, std::int64_t day_index = -1);

// uint8 movie -> real tensor in [0,1] of shape (T,H,W,3), and back.
Tensor normalize_movie(const TrafficMovie& movie);
TrafficMovie denormalize_movie(const Tensor& values, const GridSpec& spec,
                               std::int64_t day_index);

// Nearest valid heading level for a normalized prediction; ties pick the smaller level.
std::uint8_t snap_heading_level(double value);
inline double snap_heading(double value) { return snap_heading_level(value) / 255.0; }

// Binary container plus ".meta" sidecar (always written; optional on read).
void write_movie(const TrafficMovie& movie, const std::string& path,
                 const MovieMeta& meta = {});
TrafficMovie read_movie(const std::string& path);
bool read_movie_meta(const std::string& movie_path, MovieMeta& out);

// Throws DataError when the heading domain or no-data consistency is violated.
void validate_movie(const TrafficMovie& movie);

}  // namespace gridcast
