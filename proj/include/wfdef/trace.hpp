// trace.hpp
//
// Trace and dataset representation: packet sequences, the traffic
// aggregation matrix (TAM), prefix truncation, trace-file parsing and the
// dataset manifest.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "random.hpp"

namespace wfdef {

/// absolute tolerance used for every timestamp comparison, in seconds
inline constexpr double time_tolerance = 1e-9;

/// thrown for malformed input data (trace files, manifests, artifacts)
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string &what, std::size_t line)
        : DataError{"line " + std::to_string(line) + ": " + what}, line_{line} {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

enum class Direction : int { out = 1, in = -1 };

inline int sign(Direction d) { return static_cast<int>(d); }

struct Packet {
    double time;          /// seconds since the start of the page load
    Direction direction;

    bool operator==(const Packet &) const = default;
};

struct Trace {
    std::vector<Packet> packets;
    int site_id = -1;         /// -1 for unlabeled traces
    int instance_id = 0;

    std::size_t size() const { return packets.size(); }
    bool empty() const { return packets.empty(); }
    double last_time() const { return packets.empty() ? 0.0 : packets.back().time; }

    std::size_t count(Direction d) const {
        return static_cast<std::size_t>(std::count_if(
            packets.begin(), packets.end(), [d](const Packet &p) { return p.direction == d; }));
    }

    bool operator==(const Trace &) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

inline bool parse_double(std::string_view s, double &out) {
    // from_chars for double is available in libstdc++ >= 11
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view s, long &out) {
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/// Parses the `time<TAB>direction` trace format, one packet per line.
/// Blank lines are skipped. Timestamps must be non-decreasing (within
/// time_tolerance) and non-negative.
inline Trace parse_trace(std::string_view content, int site_id, int instance_id) {
    Trace trace;
    trace.site_id = site_id;
    trace.instance_id = instance_id;

    std::size_t line_no = 0;
    while (!content.empty()) {
        ++line_no;
        auto eol = content.find('\n');
        std::string_view line = content.substr(0, eol);
        content.remove_prefix(eol == std::string_view::npos ? content.size() : eol + 1);

        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw ParseError{"expected <time>\\t<direction>", line_no};
        }
        double t = 0.0;
        long d = 0;
        if (!detail::parse_double(detail::trim(line.substr(0, tab)), t)) {
            throw ParseError{"malformed timestamp", line_no};
        }
        if (!detail::parse_int(detail::trim(line.substr(tab + 1)), d)) {
            throw ParseError{"malformed direction", line_no};
        }
        if (d != 1 && d != -1) {
            throw ParseError{"direction must be +1 or -1, got " + std::to_string(d), line_no};
        }
        if (t < -time_tolerance) {
            throw ParseError{"negative timestamp", line_no};
        }
        if (!trace.packets.empty() && t < trace.packets.back().time - time_tolerance) {
            throw ParseError{"out-of-order timestamp", line_no};
        }
        // clamp tolerated jitter so the sorted invariant holds exactly
        if (!trace.packets.empty()) {
            t = std::max(t, trace.packets.back().time);
        }
        trace.packets.push_back({std::max(t, 0.0), d > 0 ? Direction::out : Direction::in});
    }
    if (trace.packets.empty()) {
        throw DataError{"empty trace file"};
    }
    return trace;
}

/// Writes a trace in the format accepted by parse_trace. Timestamps are
/// printed with round-trip precision.
inline std::string serialize_trace(const Trace &trace) {
    std::string out;
    char buf[64];
    for (const auto &p : trace.packets) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), p.time);
        out.append(buf, ptr);
        out += p.direction == Direction::out ? "\t1\n" : "\t-1\n";
    }
    return out;
}

inline Trace load_trace_file(const std::filesystem::path &path, int site_id, int instance_id) {
    std::ifstream in{path, std::ios::binary};
    if (!in) {
        throw DataError{"cannot open trace file " + path.string()};
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_trace(ss.str(), site_id, instance_id);
    } catch (const ParseError &e) {
        throw DataError{path.string() + ": " + e.what()};
    } catch (const DataError &e) {
        throw DataError{path.string() + ": " + e.what()};
    }
}

inline void save_trace_file(const std::filesystem::path &path, const Trace &trace) {
    std::ofstream out{path, std::ios::binary};
    if (!out) {
        throw DataError{"cannot write trace file " + path.string()};
    }
    out << serialize_trace(trace);
}

/// Packets with time <= horizon. The result may be empty.
inline Trace truncate_prefix(const Trace &trace, double horizon) {
    Trace out;
    out.site_id = trace.site_id;
    out.instance_id = trace.instance_id;
    auto end = std::upper_bound(trace.packets.begin(), trace.packets.end(), horizon + time_tolerance,
                                [](double h, const Packet &p) { return h < p.time; });
    out.packets.assign(trace.packets.begin(), end);
    return out;
}

// ---------------------------------------------------------------------------
// TAM

inline constexpr double default_slot_width = 0.080;
inline constexpr std::size_t default_slot_count = 1000;

struct TamShape {
    double slot_width = default_slot_width;
    std::size_t slots = default_slot_count;
};

/// 2 x slots matrix of per-slot packet counts
struct Tam {
    std::vector<std::uint32_t> out_counts;
    std::vector<std::uint32_t> in_counts;
    double slot_width = default_slot_width;

    std::size_t slots() const { return out_counts.size(); }

    /// out row followed by in row, the layout every distance computation uses
    std::vector<double> flatten() const {
        std::vector<double> v;
        v.reserve(2 * slots());
        for (auto c : out_counts) v.push_back(c);
        for (auto c : in_counts) v.push_back(c);
        return v;
    }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto c : out_counts) s += c;
        for (auto c : in_counts) s += c;
        return s;
    }
};

/// Slot index of a timestamp: floor(t / width), so a packet lying exactly on
/// a boundary goes to the later slot. The tolerance absorbs representation
/// error such as 0.16 / 0.08 = 1.9999999999999998.
inline std::size_t slot_of(double t, double width) {
    return static_cast<std::size_t>(std::floor(t / width + time_tolerance));
}

inline Tam compute_tam(const Trace &trace, TamShape shape = {}) {
    if (trace.empty()) {
        throw DataError{"compute_tam: empty trace"};
    }
    if (!(shape.slot_width > 0.0) || shape.slots == 0) {
        throw std::invalid_argument{"compute_tam: slot width and slot count must be positive"};
    }
    Tam tam;
    tam.slot_width = shape.slot_width;
    tam.out_counts.assign(shape.slots, 0);
    tam.in_counts.assign(shape.slots, 0);
    for (const auto &p : trace.packets) {
        auto slot = slot_of(p.time, shape.slot_width);
        if (slot >= shape.slots) {
            continue;
        }
        (p.direction == Direction::out ? tam.out_counts : tam.in_counts)[slot]++;
    }
    return tam;
}

/// Same as compute_tam but returns the zero matrix for an empty trace, which
/// is what prefix classifiers see before the first packet.
inline Tam compute_prefix_tam(const Trace &prefix, TamShape shape = {}) {
    if (prefix.empty()) {
        Tam tam;
        tam.slot_width = shape.slot_width;
        tam.out_counts.assign(shape.slots, 0);
        tam.in_counts.assign(shape.slots, 0);
        return tam;
    }
    return compute_tam(prefix, shape);
}

// ---------------------------------------------------------------------------
// Dataset

enum class Split { train, validation, test };

inline const char *to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    }
    return "?";
}

inline Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw DataError{"unknown split '" + std::string{s} + "'"};
}

struct SplitRatio {
    unsigned train = 8;
    unsigned validation = 1;
    unsigned test = 1;
};

struct DatasetEntry {
    Trace trace;
    Split split = Split::train;
    std::string path;     /// source file, relative to the manifest; may be empty
};

struct Dataset {
    std::vector<DatasetEntry> entries;

    std::vector<const Trace *> traces(Split s) const {
        std::vector<const Trace *> out;
        for (const auto &e : entries) {
            if (e.split == s) out.push_back(&e.trace);
        }
        return out;
    }

    std::vector<int> sites() const {
        std::vector<int> ids;
        for (const auto &e : entries) ids.push_back(e.trace.site_id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return ids;
    }

    void sort_entries() {
        std::sort(entries.begin(), entries.end(), [](const DatasetEntry &a, const DatasetEntry &b) {
            return std::pair{a.trace.site_id, a.trace.instance_id} <
                   std::pair{b.trace.site_id, b.trace.instance_id};
        });
    }
};

/// Per-site stratified split. Within each site, instances are shuffled with a
/// seeded generator and cut by the ratio; the validation and test shares are
/// rounded down but each gets at least one trace when the site has enough
/// traces for all three splits.
inline void assign_splits(Dataset &data, SplitRatio ratio, std::uint64_t seed) {
    data.sort_entries();
    std::map<int, std::vector<std::size_t>> by_site;
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
        by_site[data.entries[i].trace.site_id].push_back(i);
    }
    const double total = ratio.train + ratio.validation + ratio.test;
    if (total <= 0) {
        throw std::invalid_argument{"split ratio must be positive"};
    }
    for (auto &[site, idx] : by_site) {
        Rng rng{seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(site + 1))};
        rng.shuffle(idx.begin(), idx.end());
        const std::size_t n = idx.size();
        auto n_val = static_cast<std::size_t>(std::floor(n * ratio.validation / total));
        auto n_test = static_cast<std::size_t>(std::floor(n * ratio.test / total));
        if (n >= 3) {
            if (ratio.validation > 0) n_val = std::max<std::size_t>(n_val, 1);
            if (ratio.test > 0) n_test = std::max<std::size_t>(n_test, 1);
        }
        for (std::size_t j = 0; j < n; ++j) {
            Split s = Split::train;
            if (j < n_test) s = Split::test;
            else if (j < n_test + n_val) s = Split::validation;
            data.entries[idx[j]].split = s;
        }
    }
}

/// Parses `<site>-<instance>` (labeled) or `<instance>` (unlabeled) file names.
/// Returns false when the name follows neither form.
inline bool parse_trace_filename(std::string_view name, int &site, int &instance) {
    auto dot = name.find('.');
    if (dot != std::string_view::npos) name = name.substr(0, dot);
    long a = 0, b = 0;
    auto dash = name.find('-');
    if (dash == std::string_view::npos) {
        if (!detail::parse_int(name, a)) return false;
        site = -1;
        instance = static_cast<int>(a);
        return true;
    }
    if (!detail::parse_int(name.substr(0, dash), a) || !detail::parse_int(name.substr(dash + 1), b)) {
        return false;
    }
    site = static_cast<int>(a);
    instance = static_cast<int>(b);
    return true;
}

/// Loads every trace file in a directory whose name parses as a trace name.
inline Dataset load_directory(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw DataError{"not a directory: " + dir.string()};
    }
    std::vector<std::filesystem::path> files;
    for (const auto &e : std::filesystem::directory_iterator{dir}) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    Dataset data;
    for (const auto &f : files) {
        int site = 0, inst = 0;
        if (!parse_trace_filename(f.filename().string(), site, inst)) continue;
        data.entries.push_back({load_trace_file(f, site, inst), Split::train, f.filename().string()});
    }
    if (data.entries.empty()) {
        throw DataError{"no trace files found in " + dir.string()};
    }
    data.sort_entries();
    return data;
}

// ---------------------------------------------------------------------------
// Manifest: {"version":1,"traces":[{"path","site","instance","split"}]}

namespace detail {

inline void reject_unknown_fields(const nlohmann::json &obj, std::initializer_list<std::string_view> known,
                                  std::string_view where) {
    if (!obj.is_object()) {
        throw DataError{std::string{where} + ": expected an object"};
    }
    for (const auto &item : obj.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw DataError{std::string{where} + ": unknown field '" + item.key() + "'"};
        }
    }
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const Dataset &data) {
    nlohmann::json traces = nlohmann::json::array();
    for (const auto &e : data.entries) {
        traces.push_back({{"path", e.path},
                          {"site", e.trace.site_id},
                          {"instance", e.trace.instance_id},
                          {"split", to_string(e.split)}});
    }
    return {{"version", 1}, {"traces", traces}};
}

/// Reads a manifest and the trace files it lists, resolved against base_dir.
inline Dataset load_manifest(const nlohmann::json &doc, const std::filesystem::path &base_dir) {
    detail::reject_unknown_fields(doc, {"version", "traces"}, "manifest");
    if (doc.value("version", 0) != 1) {
        throw DataError{"manifest: unsupported version"};
    }
    Dataset data;
    for (const auto &t : doc.at("traces")) {
        detail::reject_unknown_fields(t, {"path", "site", "instance", "split"}, "manifest entry");
        const std::string path = t.at("path").get<std::string>();
        DatasetEntry e{load_trace_file(base_dir / path, t.at("site").get<int>(), t.at("instance").get<int>()),
                       split_from_string(t.at("split").get<std::string>()), path};
        data.entries.push_back(std::move(e));
    }
    data.sort_entries();
    return data;
}

}  // namespace wfdef
