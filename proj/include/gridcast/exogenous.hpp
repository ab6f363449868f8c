#pragma once

#include <array>
#include <cstdint>

#include "gridcast/common.hpp"
#include "gridcast/synth.hpp"

namespace gridcast {

// Layout: (sin_tod, cos_tod, one-hot weekday x7, weather now x3, forecast x3 bins x3).
inline constexpr std::int64_t kExoDim = 21;

struct CalendarStamp {
    std::int64_t day_index = 0;
    std::int64_t time_bin = 0;
    std::int64_t day_of_week = 0;  // 0..6
};

CalendarStamp make_calendar_stamp(std::int64_t day_index, std::int64_t time_bin,
                                  std::int64_t week_offset);

// Min-max bounds used to squeeze raw weather into [0,1] (clamped).
struct ExoScaling {
    double temp_min = -10.0, temp_max = 35.0;
    double precip_min = 0.0, precip_max = 10.0;
    double wind_min = 0.0, wind_max = 60.0;

    void validate() const {
        if (temp_min >= temp_max || precip_min >= precip_max || wind_min >= wind_max)
            throw ConfigError("ExoScaling: each min must be below its max");
    }
};

std::pair<double, double> encode_time_of_day(std::int64_t time_bin, std::int64_t bins_per_day);
std::array<double, 7> encode_day_of_week(std::int64_t dow);

// Full 21-feature vector for a sequence anchored at the stamp's bin; the three
// forecast blocks read bins t+1..t+3, clipped at the day's last bin.
std::array<double, kExoDim> assemble_exo(const CalendarStamp& stamp, const WeatherTable& weather,
                                         const ExoScaling& scaling);

}  // namespace gridcast
