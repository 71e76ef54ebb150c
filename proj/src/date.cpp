#include "crisp/date.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace crisp {

namespace {

int parse_int(std::string_view s, std::string_view whole) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("malformed date '" + std::string(whole) + "'");
    }
    return v;
}

}  // namespace

Date Date::parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        throw std::invalid_argument("malformed date '" + std::string(text) + "', expected YYYY-MM-DD");
    }
    using namespace std::chrono;
    year_month_day ymd{year{parse_int(text.substr(0, 4), text)},
                       month{static_cast<unsigned>(parse_int(text.substr(5, 2), text))},
                       day{static_cast<unsigned>(parse_int(text.substr(8, 2), text))}};
    if (!ymd.ok()) throw std::invalid_argument("invalid calendar date '" + std::string(text) + "'");
    return Date(std::chrono::sys_days{ymd});
}

std::string Date::to_string() const {
    using namespace std::chrono;
    year_month_day ymd{sys_days()};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

bool Date::is_weekend() const {
    std::chrono::weekday wd{sys_days()};
    return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

}  // namespace crisp
