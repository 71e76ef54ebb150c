#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace crisp {

/// Calendar day (ISO-8601 on the wire).
class Date {
public:
    Date() = default;
    explicit Date(std::chrono::sys_days d) : days_(d.time_since_epoch().count()) {}

    /// Parses YYYY-MM-DD; throws std::invalid_argument on malformed input.
    static Date parse(std::string_view text);

    std::string to_string() const;
    std::chrono::sys_days sys_days() const {
        return std::chrono::sys_days{std::chrono::days{days_}};
    }
    std::int32_t serial() const { return days_; }
    Date plus_days(int n) const { return Date(sys_days() + std::chrono::days{n}); }
    bool is_weekend() const;

    auto operator<=>(const Date&) const = default;

private:
    std::int32_t days_ = 0;
};

}  // namespace crisp
