#include "gridcast/exogenous.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gridcast {

CalendarStamp make_calendar_stamp(std::int64_t day_index, std::int64_t time_bin,
                                  std::int64_t week_offset) {
    if (day_index < 0) throw DomainError("make_calendar_stamp: negative day_index");
    CalendarStamp s;
    s.day_index = day_index;
    s.time_bin = time_bin;
    s.day_of_week = ((day_index + week_offset) % 7 + 7) % 7;
    return s;
}

std::pair<double, double> encode_time_of_day(std::int64_t time_bin, std::int64_t bins_per_day) {
    if (time_bin < 0 || time_bin >= bins_per_day)
        throw DomainError("encode_time_of_day: time_bin outside [0, bins_per_day)");
    const double angle =
        2.0 * std::numbers::pi * static_cast<double>(time_bin) / static_cast<double>(bins_per_day);
    return {std::sin(angle), std::cos(angle)};
}

std::array<double, 7> encode_day_of_week(std::int64_t dow) {
    if (dow < 0 || dow > 6) throw DomainError("encode_day_of_week: dow outside [0,6]");
    std::array<double, 7> out{};
    out[static_cast<std::size_t>(dow)] = 1.0;
    return out;
}

namespace {

double scale_unit(double v, double lo, double hi) {
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

}  // namespace

std::array<double, kExoDim> assemble_exo(const CalendarStamp& stamp, const WeatherTable& weather,
                                         const ExoScaling& scaling) {
    scaling.validate();
    std::array<double, kExoDim> out{};
    const auto [sin_tod, cos_tod] = encode_time_of_day(stamp.time_bin, weather.bins_per_day());
    out[0] = sin_tod;
    out[1] = cos_tod;
    const auto dow = encode_day_of_week(stamp.day_of_week);
    std::copy(dow.begin(), dow.end(), out.begin() + 2);

    std::size_t at = 9;
    for (std::int64_t step = 0; step <= 3; ++step) {  // now plus the 3-bin forecast
        const std::int64_t bin =
            std::min(stamp.time_bin + step, weather.bins_per_day() - 1);  // clip at day end
        const WeatherRecord& r = weather.at(stamp.day_index, bin);
        out[at++] = scale_unit(r.temperature_c, scaling.temp_min, scaling.temp_max);
        out[at++] = scale_unit(r.precipitation_mm, scaling.precip_min, scaling.precip_max);
        out[at++] = scale_unit(r.wind_kmh, scaling.wind_min, scaling.wind_max);
    }
    return out;
}

}  // namespace gridcast
