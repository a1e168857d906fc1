#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "paregta/common.hpp"

namespace paregta {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Row-major float matrix; the in-memory mirror of the PRGT file layout.
using MatrixRXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// CSV (RFC-4180-ish: quoted fields, doubled-quote escapes)

inline std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

// ---------------------------------------------------------------------------
// JSON lines

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<json> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : rows) out << r.dump() << '\n';
}

/// Strict config parsing: any key outside `allowed` is a ConfigError.
inline void strict_keys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& context) {
    if (!j.is_object())
        throw ConfigError("config section '" + context + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) { ok = true; break; }
        if (!ok) throw ConfigError("unknown config key '" + context + "." + key + "'");
    }
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// PRGT embedding file: magic "PRGT", u32 version=1, u32 dim, u64 count,
// then count*dim little-endian float32, row-major.

namespace detail {
static_assert(std::endian::native == std::endian::little,
              "PRGT writer assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& s, const T& v) {
    s.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& s, T& v) {
    s.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace detail

inline void write_prgt(const std::filesystem::path& path, const MatrixRXf& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write("PRGT", 4);
    detail::write_pod(out, std::uint32_t{1});
    detail::write_pod(out, static_cast<std::uint32_t>(m.cols()));
    detail::write_pod(out, static_cast<std::uint64_t>(m.rows()));
    if (m.size() > 0)
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline MatrixRXf read_prgt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PRGT", 4) != 0)
        throw ParseError(path.string() + ": bad magic, not a PRGT file");
    std::uint32_t version = 0, dim = 0;
    std::uint64_t count = 0;
    detail::read_pod(in, version);
    detail::read_pod(in, dim);
    detail::read_pod(in, count);
    if (version != 1)
        throw ParseError(path.string() + ": unsupported PRGT version " +
                         std::to_string(version));
    MatrixRXf m(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
    if (m.size() > 0)
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (!in) throw ParseError(path.string() + ": truncated PRGT payload");
    return m;
}

// Sidecar row metadata: one JSON object per matrix row.
struct RowRef {
    std::string patient_id;
    std::string visit_date;  // ISO date, or "" for non-visit rows
    std::string concept_tag;  // "meds" | "comorb" | ""

    bool operator==(const RowRef&) const = default;
};

inline void write_sidecar(const std::filesystem::path& path, const std::vector<RowRef>& refs) {
    std::vector<json> rows;
    rows.reserve(refs.size());
    for (const auto& r : refs)
        rows.push_back(json{{"patient_id", r.patient_id},
                            {"visit_date", r.visit_date},
                            {"concept", r.concept_tag}});
    write_jsonl(path, rows);
}

inline std::vector<RowRef> read_sidecar(const std::filesystem::path& path) {
    std::vector<RowRef> refs;
    for (const auto& j : read_jsonl(path))
        refs.push_back(RowRef{j.at("patient_id").get<std::string>(),
                              j.value("visit_date", ""), j.value("concept", "")});
    return refs;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& prgt) {
    auto p = prgt;
    p += ".sidecar.jsonl";
    return p;
}

/// FNV-1a fingerprint of a file's bytes, as fixed-width hex.
inline std::string file_fingerprint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const auto n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace paregta
