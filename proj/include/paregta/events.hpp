#pragma once

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "paregta/common.hpp"
#include "paregta/io.hpp"

namespace paregta {

// One long-format event row: exactly one of {medication, diagnosis} is set.
struct EventRecord {
    std::string patient_id;
    std::optional<int> age;
    std::string sex;
    std::string race;
    Date visit_date;
    std::optional<std::string> medication;
    std::optional<std::string> diagnosis;

    bool operator==(const EventRecord&) const = default;
};

struct DiagnosisTaxonomy {
    std::set<std::string> anchor_terms;
    std::set<std::string> positive_label_terms;
    std::set<std::string> comorbidity_terms;

    void validate() const {
        if (anchor_terms.empty())
            throw ConfigError("taxonomy: anchor_terms must be non-empty");
        for (const auto& t : positive_label_terms)
            if (!anchor_terms.count(t))
                throw ConfigError("taxonomy: positive term '" + t +
                                  "' is not an anchor term");
        for (const auto& t : comorbidity_terms)
            if (anchor_terms.count(t))
                throw ConfigError("taxonomy: '" + t +
                                  "' cannot be both anchor and comorbidity");
    }

    static DiagnosisTaxonomy from_json(const json& j) {
        strict_keys(j, {"anchor_terms", "positive_label_terms", "comorbidity_terms"},
                    "taxonomy");
        DiagnosisTaxonomy t;
        for (const auto& s : j.at("anchor_terms")) t.anchor_terms.insert(s.get<std::string>());
        for (const auto& s : j.at("positive_label_terms"))
            t.positive_label_terms.insert(s.get<std::string>());
        for (const auto& s : j.at("comorbidity_terms"))
            t.comorbidity_terms.insert(s.get<std::string>());
        t.validate();
        return t;
    }

    json to_json() const {
        return json{{"anchor_terms", anchor_terms},
                    {"positive_label_terms", positive_label_terms},
                    {"comorbidity_terms", comorbidity_terms}};
    }
};

// Maps the logical field names onto the input file's column headers.
struct ColumnSchema {
    std::string patient_id = "ID";
    std::string age = "Age";
    std::string sex = "Sex";
    std::string race = "Race";
    std::string visit_date = "Visit date";
    std::string medication = "Medication";
    std::string diagnosis = "Diagnosis";

    static ColumnSchema from_json(const json& j) {
        strict_keys(j, {"patient_id", "age", "sex", "race", "visit_date", "medication",
                        "diagnosis"},
                    "schema");
        ColumnSchema s;
        s.patient_id = j.value("patient_id", s.patient_id);
        s.age = j.value("age", s.age);
        s.sex = j.value("sex", s.sex);
        s.race = j.value("race", s.race);
        s.visit_date = j.value("visit_date", s.visit_date);
        s.medication = j.value("medication", s.medication);
        s.diagnosis = j.value("diagnosis", s.diagnosis);
        return s;
    }
};

struct ParseDiagnostic {
    size_t row;  // 1-based data-row index (header excluded)
    std::string reason;
};

struct ParseResult {
    std::vector<EventRecord> records;
    std::vector<ParseDiagnostic> rejected;
};

namespace detail {

// Empty field and the literal "-" both mean null.
inline bool is_null_field(const std::string& trimmed) {
    return trimmed.empty() || trimmed == "-";
}

}  // namespace detail

/// Parses delimited tabular text (header row required) into event records.
/// Rows violating record invariants are rejected with row-indexed
/// diagnostics rather than aborting the whole parse. A missing required
/// column is a schema error and aborts.
inline ParseResult parse_events(std::istream& in, const ColumnSchema& schema = {}) {
    std::string header_line;
    if (!std::getline(in, header_line))
        throw SchemaError("input is empty: no header row");
    const auto header = parse_csv_line(header_line);

    std::map<std::string, size_t> col_index;
    for (size_t i = 0; i < header.size(); ++i) col_index[trim(header[i])] = i;

    auto require = [&](const std::string& name) -> size_t {
        auto it = col_index.find(name);
        if (it == col_index.end())
            throw SchemaError("missing required column '" + name + "'");
        return it->second;
    };
    const size_t c_id = require(schema.patient_id);
    const size_t c_age = require(schema.age);
    const size_t c_sex = require(schema.sex);
    const size_t c_race = require(schema.race);
    const size_t c_date = require(schema.visit_date);
    const size_t c_med = require(schema.medication);
    const size_t c_diag = require(schema.diagnosis);

    ParseResult result;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto fields = parse_csv_line(line);
        auto field = [&](size_t c) -> std::string {
            return c < fields.size() ? trim(fields[c]) : std::string{};
        };

        EventRecord rec;
        rec.patient_id = field(c_id);
        if (rec.patient_id.empty()) {
            result.rejected.push_back({row, "row " + std::to_string(row) + ": empty patient id"});
            continue;
        }

        const std::string age_s = field(c_age);
        if (!detail::is_null_field(age_s)) {
            try {
                rec.age = std::stoi(age_s);
            } catch (const std::exception&) {
                result.rejected.push_back(
                    {row, "row " + std::to_string(row) + ": invalid age '" + age_s + "'"});
                continue;
            }
        }
        rec.sex = field(c_sex);
        rec.race = field(c_race);

        const std::string date_s = field(c_date);
        auto date = Date::try_parse(date_s);
        if (!date) {
            result.rejected.push_back(
                {row, "row " + std::to_string(row) + ": invalid date '" + date_s + "'"});
            continue;
        }
        rec.visit_date = *date;

        const std::string med = field(c_med);
        const std::string diag = field(c_diag);
        const bool has_med = !detail::is_null_field(med);
        const bool has_diag = !detail::is_null_field(diag);
        if (has_med == has_diag) {
            result.rejected.push_back(
                {row, "row " + std::to_string(row) +
                          ": exactly one of medication/diagnosis must be present"});
            continue;
        }
        if (has_med) rec.medication = med;
        if (has_diag) rec.diagnosis = diag;

        result.records.push_back(std::move(rec));
    }
    return result;
}

/// Writes records back to the same delimited format; parse(serialize(r)) == r.
inline void serialize_events(const std::vector<EventRecord>& records, std::ostream& out,
                             const ColumnSchema& schema = {}) {
    out << csv_escape(schema.patient_id) << ',' << csv_escape(schema.age) << ','
        << csv_escape(schema.sex) << ',' << csv_escape(schema.race) << ','
        << csv_escape(schema.visit_date) << ',' << csv_escape(schema.medication) << ','
        << csv_escape(schema.diagnosis) << '\n';
    for (const auto& r : records) {
        out << csv_escape(r.patient_id) << ','
            << (r.age ? std::to_string(*r.age) : std::string{}) << ','
            << csv_escape(r.sex) << ',' << csv_escape(r.race) << ','
            << r.visit_date.to_string() << ','
            << (r.medication ? csv_escape(*r.medication) : std::string{}) << ','
            << (r.diagnosis ? csv_escape(*r.diagnosis) : std::string{}) << '\n';
    }
}

inline json event_to_json(const EventRecord& r) {
    json j{{"patient_id", r.patient_id},
           {"sex", r.sex},
           {"race", r.race},
           {"visit_date", r.visit_date.to_string()}};
    j["age"] = r.age ? json(*r.age) : json(nullptr);
    j["medication"] = r.medication ? json(*r.medication) : json(nullptr);
    j["diagnosis"] = r.diagnosis ? json(*r.diagnosis) : json(nullptr);
    return j;
}

inline EventRecord event_from_json(const json& j) {
    EventRecord r;
    r.patient_id = j.at("patient_id").get<std::string>();
    if (!j.at("age").is_null()) r.age = j.at("age").get<int>();
    r.sex = j.at("sex").get<std::string>();
    r.race = j.at("race").get<std::string>();
    r.visit_date = Date::parse(j.at("visit_date").get<std::string>());
    if (!j.at("medication").is_null()) r.medication = j.at("medication").get<std::string>();
    if (!j.at("diagnosis").is_null()) r.diagnosis = j.at("diagnosis").get<std::string>();
    return r;
}

inline void write_events_jsonl(const std::filesystem::path& path,
                               const std::vector<EventRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(event_to_json(r));
    write_jsonl(path, rows);
}

inline std::vector<EventRecord> read_events_jsonl(const std::filesystem::path& path) {
    std::vector<EventRecord> records;
    for (const auto& j : read_jsonl(path)) records.push_back(event_from_json(j));
    return records;
}

}  // namespace paregta
