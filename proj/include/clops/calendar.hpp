#pragma once

#include <chrono>
#include <cstdint>

namespace clops {

/// Broken-down UTC time of an epoch-seconds timestamp.
struct CivilTime {
    int year = 1970;
    unsigned month = 1;        // 1..12
    unsigned day = 1;          // 1..31
    unsigned hour = 0;         // 0..23
    unsigned minute = 0;       // 0..59
    unsigned second = 0;       // 0..59
    unsigned weekday = 3;      // Monday = 0
    unsigned day_of_year = 1;  // 1..366
};

inline CivilTime civil_time(std::int64_t epoch_seconds) {
    using namespace std::chrono;
    const sys_seconds tp{seconds{epoch_seconds}};
    const auto day_start = floor<days>(tp);
    const year_month_day ymd{day_start};
    const hh_mm_ss hms{tp - day_start};
    CivilTime c;
    c.year = static_cast<int>(ymd.year());
    c.month = static_cast<unsigned>(ymd.month());
    c.day = static_cast<unsigned>(ymd.day());
    c.hour = static_cast<unsigned>(hms.hours().count());
    c.minute = static_cast<unsigned>(hms.minutes().count());
    c.second = static_cast<unsigned>(hms.seconds().count());
    c.weekday = (weekday{day_start}.iso_encoding() + 6) % 7;
    const sys_days jan1{ymd.year() / January / 1};
    c.day_of_year = static_cast<unsigned>((day_start - jan1).count()) + 1;
    return c;
}

inline std::int64_t epoch_from_civil(int year, unsigned month, unsigned day, unsigned hour = 0, unsigned minute = 0,
                                     unsigned second = 0) {
    using namespace std::chrono;
    const sys_days d{std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day}};
    return d.time_since_epoch().count() * 86400LL + hour * 3600LL + minute * 60LL + second;
}

}  // namespace clops
