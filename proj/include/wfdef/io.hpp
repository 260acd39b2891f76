// io.hpp
//
// Small output helpers shared by every artifact writer: shortest
// round-trip number formatting, a stable content hash and file writes.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "trace.hpp"

namespace wfdef {

/// shortest representation that parses back to the same double
inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string{buf, ptr};
}

/// 64-bit FNV-1a
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string read_file(const std::filesystem::path &path) {
    std::ifstream in{path, std::ios::binary};
    if (!in) {
        throw DataError{"cannot open " + path.string()};
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path &path, std::string_view content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out{path, std::ios::binary | std::ios::trunc};
    if (!out) {
        throw DataError{"cannot write " + path.string()};
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline nlohmann::json read_json(const std::filesystem::path &path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error &e) {
        throw DataError{path.string() + ": " + e.what()};
    }
}

inline void write_json(const std::filesystem::path &path, const nlohmann::json &doc) {
    write_file(path, doc.dump(2) + "\n");
}

/// JSON has no infinity; unbounded values are written as null
inline nlohmann::json json_number(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

inline double json_to_double(const nlohmann::json &j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace wfdef
