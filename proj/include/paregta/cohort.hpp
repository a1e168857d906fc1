#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paregta/events.hpp"

namespace paregta {

// Per-visit row after anchor-window collapse: dated at the anchor diagnosis
// date, carrying every medication/comorbidity recorded within the window.
struct VisitRow {
    Date visit_date;
    std::vector<std::string> medications;
    std::vector<std::string> comorbidities;
    std::vector<std::string> anchor_diagnoses;

    bool operator==(const VisitRow&) const = default;
};

struct PatientRecord {
    std::string patient_id;
    std::optional<int> age;  // from the most recent record
    std::string sex;
    std::string race;
    std::vector<VisitRow> visits;  // strictly ascending by date
    bool chronic = false;

    Date first_visit() const { return visits.front().visit_date; }
    Date last_visit() const { return visits.back().visit_date; }
    long span_days() const { return last_visit() - first_visit(); }

    bool operator==(const PatientRecord&) const = default;
};

struct Cohort {
    std::vector<PatientRecord> patients;
    DiagnosisTaxonomy taxonomy;
    int window_radius_days = 3;
    size_t dropped_no_anchor = 0;
};

namespace detail {

inline void push_unique(std::vector<std::string>& list, const std::string& item) {
    if (std::find(list.begin(), list.end(), item) == list.end()) list.push_back(item);
}

}  // namespace detail

/// Collapses raw events into anchor-centered visit rows. Events within
/// ±window of multiple anchors attach to the nearest one (ties break to the
/// earlier anchor). Patients without any anchor diagnosis are dropped and
/// counted.
inline Cohort build_cohort(const std::vector<EventRecord>& events,
                           const DiagnosisTaxonomy& taxonomy, int window_radius_days) {
    taxonomy.validate();
    if (window_radius_days < 0)
        throw ConfigError("window_radius_days must be >= 0");

    // Group by patient, preserving first-occurrence patient order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<const EventRecord*>> grouped;
    for (const auto& e : events) {
        auto [it, inserted] = grouped.try_emplace(e.patient_id);
        if (inserted) order.push_back(e.patient_id);
        it->second.push_back(&e);
    }

    Cohort cohort;
    cohort.taxonomy = taxonomy;
    cohort.window_radius_days = window_radius_days;

    for (const auto& pid : order) {
        auto recs = grouped.at(pid);
        // Stable sort keeps input order among same-date events, so list
        // order is first occurrence by (date, input order).
        std::stable_sort(recs.begin(), recs.end(),
                         [](const EventRecord* a, const EventRecord* b) {
                             return a->visit_date < b->visit_date;
                         });

        std::map<Date, VisitRow> visits;
        for (const auto* r : recs) {
            if (r->diagnosis && taxonomy.anchor_terms.count(*r->diagnosis)) {
                auto& v = visits[r->visit_date];
                v.visit_date = r->visit_date;
                detail::push_unique(v.anchor_diagnoses, *r->diagnosis);
            }
        }
        if (visits.empty()) {
            ++cohort.dropped_no_anchor;
            continue;
        }

        std::vector<Date> anchor_dates;
        for (const auto& [d, _] : visits) anchor_dates.push_back(d);

        auto nearest_anchor = [&](Date d) -> std::optional<Date> {
            std::optional<Date> best;
            long best_dist = window_radius_days + 1;
            for (Date a : anchor_dates) {
                const long dist = std::labs(d - a);
                if (dist < best_dist) {  // strict: ties keep the earlier anchor
                    best_dist = dist;
                    best = a;
                }
            }
            return best;
        };

        for (const auto* r : recs) {
            if (r->medication) {
                if (auto a = nearest_anchor(r->visit_date))
                    detail::push_unique(visits.at(*a).medications, *r->medication);
            } else if (r->diagnosis && taxonomy.comorbidity_terms.count(*r->diagnosis)) {
                if (auto a = nearest_anchor(r->visit_date))
                    detail::push_unique(visits.at(*a).comorbidities, *r->diagnosis);
            }
        }

        PatientRecord patient;
        patient.patient_id = pid;
        // Demographics taken from the most recent record.
        const EventRecord* latest = recs.back();
        patient.age = latest->age;
        patient.sex = latest->sex;
        patient.race = latest->race;
        for (auto& [d, v] : visits) {
            for (const auto& a : v.anchor_diagnoses)
                if (taxonomy.positive_label_terms.count(a)) patient.chronic = true;
            patient.visits.push_back(std::move(v));
        }
        cohort.patients.push_back(std::move(patient));
    }
    return cohort;
}

/// Counts and proportions over a cohort; proportions per categorical field
/// sum to 1 within rounding.
inline json cohort_summary(const Cohort& cohort) {
    if (cohort.patients.empty()) throw ValidationError("cohort is empty");
    const double n = static_cast<double>(cohort.patients.size());

    size_t positives = 0, age_null = 0;
    double age_sum = 0;
    int age_min = 0, age_max = 0;
    bool age_seen = false;
    std::map<std::string, size_t> sex_counts, race_counts;
    for (const auto& p : cohort.patients) {
        if (p.chronic) ++positives;
        ++sex_counts[p.sex];
        ++race_counts[p.race];
        if (p.age) {
            age_sum += *p.age;
            age_min = age_seen ? std::min(age_min, *p.age) : *p.age;
            age_max = age_seen ? std::max(age_max, *p.age) : *p.age;
            age_seen = true;
        } else {
            ++age_null;
        }
    }

    auto proportions = [&](const std::map<std::string, size_t>& counts) {
        json j = json::object();
        for (const auto& [k, v] : counts) j[k] = static_cast<double>(v) / n;
        return j;
    };

    json summary{{"n_patients", cohort.patients.size()},
                 {"n_dropped_no_anchor", cohort.dropped_no_anchor},
                 {"label_prevalence", static_cast<double>(positives) / n},
                 {"sex", proportions(sex_counts)},
                 {"race", proportions(race_counts)}};
    json age{{"null_count", age_null}};
    if (age_seen) {
        age["mean"] = age_sum / (n - static_cast<double>(age_null));
        age["min"] = age_min;
        age["max"] = age_max;
    }
    summary["age"] = age;
    return summary;
}

// --------------------------------------------------------------------------
// Persistence: one JSON object per patient per line, plus a sidecar meta
// file for the taxonomy and window radius.

inline json patient_to_json(const PatientRecord& p) {
    json visits = json::array();
    for (const auto& v : p.visits)
        visits.push_back(json{{"visit_date", v.visit_date.to_string()},
                              {"medications", v.medications},
                              {"comorbidities", v.comorbidities},
                              {"anchor_diagnoses", v.anchor_diagnoses}});
    json j{{"patient_id", p.patient_id},
           {"sex", p.sex},
           {"race", p.race},
           {"label", p.chronic ? "chronic" : "episodic"},
           {"visits", visits}};
    j["age"] = p.age ? json(*p.age) : json(nullptr);
    return j;
}

inline PatientRecord patient_from_json(const json& j) {
    PatientRecord p;
    p.patient_id = j.at("patient_id").get<std::string>();
    if (!j.at("age").is_null()) p.age = j.at("age").get<int>();
    p.sex = j.at("sex").get<std::string>();
    p.race = j.at("race").get<std::string>();
    p.chronic = j.at("label").get<std::string>() == "chronic";
    for (const auto& vj : j.at("visits")) {
        VisitRow v;
        v.visit_date = Date::parse(vj.at("visit_date").get<std::string>());
        v.medications = vj.at("medications").get<std::vector<std::string>>();
        v.comorbidities = vj.at("comorbidities").get<std::vector<std::string>>();
        v.anchor_diagnoses = vj.at("anchor_diagnoses").get<std::vector<std::string>>();
        p.visits.push_back(std::move(v));
    }
    return p;
}

inline std::filesystem::path cohort_meta_path(const std::filesystem::path& cohort_path) {
    auto p = cohort_path;
    p += ".meta.json";
    return p;
}

inline void write_cohort(const std::filesystem::path& path, const Cohort& cohort) {
    std::vector<json> rows;
    rows.reserve(cohort.patients.size());
    for (const auto& p : cohort.patients) rows.push_back(patient_to_json(p));
    write_jsonl(path, rows);
    write_json(cohort_meta_path(path),
               json{{"taxonomy", cohort.taxonomy.to_json()},
                    {"window_radius_days", cohort.window_radius_days},
                    {"dropped_no_anchor", cohort.dropped_no_anchor}});
}

inline Cohort read_cohort(const std::filesystem::path& path) {
    Cohort cohort;
    for (const auto& j : read_jsonl(path)) cohort.patients.push_back(patient_from_json(j));
    const auto meta = read_json(cohort_meta_path(path));
    cohort.taxonomy = DiagnosisTaxonomy::from_json(meta.at("taxonomy"));
    cohort.window_radius_days = meta.at("window_radius_days").get<int>();
    cohort.dropped_no_anchor = meta.value("dropped_no_anchor", 0);
    return cohort;
}

}  // namespace paregta
