#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace paregta {

// Error taxonomy. Every failure surfaces as one of these so the CLI can
// report a precise diagnostic and exit nonzero.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct OrderingError : Error { using Error::Error; };
struct DegenerateError : Error { using Error::Error; };
struct MissingArtifactError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Calendar date backed by std::chrono::sys_days. All day arithmetic is
// exact civil-calendar arithmetic (leap years included).
class Date {
public:
    Date() : days_{std::chrono::sys_days{std::chrono::year{1970} / 1 / 1}} {}

    explicit Date(std::chrono::sys_days d) : days_{d} {}

    Date(int year, unsigned month, unsigned day) {
        const std::chrono::year_month_day ymd{std::chrono::year{year},
                                              std::chrono::month{month},
                                              std::chrono::day{day}};
        if (!ymd.ok())
            throw ParseError("invalid calendar date: " + std::to_string(year) + "-" +
                             std::to_string(month) + "-" + std::to_string(day));
        days_ = std::chrono::sys_days{ymd};
    }

    /// Parses strict ISO-8601 "YYYY-MM-DD". Throws ParseError otherwise.
    static Date parse(std::string_view s) {
        auto d = try_parse(s);
        if (!d) throw ParseError("invalid ISO-8601 date: '" + std::string(s) + "'");
        return *d;
    }

    static std::optional<Date> try_parse(std::string_view s) {
        if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
        auto digits = [](std::string_view v) {
            return std::all_of(v.begin(), v.end(),
                               [](unsigned char c) { return std::isdigit(c); });
        };
        if (!digits(s.substr(0, 4)) || !digits(s.substr(5, 2)) || !digits(s.substr(8, 2)))
            return std::nullopt;
        const int y = std::stoi(std::string(s.substr(0, 4)));
        const unsigned m = static_cast<unsigned>(std::stoi(std::string(s.substr(5, 2))));
        const unsigned d = static_cast<unsigned>(std::stoi(std::string(s.substr(8, 2))));
        const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                              std::chrono::day{d}};
        if (!ymd.ok()) return std::nullopt;
        return Date{std::chrono::sys_days{ymd}};
    }

    std::string to_string() const {
        const std::chrono::year_month_day ymd{days_};
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
        return buf;
    }

    long days_since_epoch() const { return days_.time_since_epoch().count(); }

    int year() const { return static_cast<int>(std::chrono::year_month_day{days_}.year()); }
    unsigned month() const {
        return static_cast<unsigned>(std::chrono::year_month_day{days_}.month());
    }
    unsigned day() const {
        return static_cast<unsigned>(std::chrono::year_month_day{days_}.day());
    }

    Date plus_days(long n) const { return Date{days_ + std::chrono::days{n}}; }

    friend long operator-(Date a, Date b) { return (a.days_ - b.days_).count(); }
    auto operator<=>(const Date&) const = default;

private:
    std::chrono::sys_days days_;
};

/// FNV-1a 64-bit. Stable across platforms; used for token hashing, stage
/// seeds, and artifact fingerprints.
constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Per-stage RNG seed derived from the one global seed.
inline std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage) {
    return global_seed ^ fnv1a64(stage);
}

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

/// Case-insensitive substring test (ASCII).
inline bool icontains(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    const std::string h = to_lower(haystack), n = to_lower(needle);
    return h.find(n) != std::string::npos;
}

inline std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace paregta
