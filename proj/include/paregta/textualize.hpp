#pragma once

#include <optional>
#include <string>
#include <vector>

#include "paregta/cohort.hpp"
#include "paregta/factors.hpp"

namespace paregta {

// The five temporal tokenization schemes.
enum class TemporalScheme { Date, Gap, Month, Last, Without };

inline std::string scheme_name(TemporalScheme s) {
    switch (s) {
        case TemporalScheme::Date: return "date";
        case TemporalScheme::Gap: return "gap";
        case TemporalScheme::Month: return "month";
        case TemporalScheme::Last: return "last";
        case TemporalScheme::Without: return "without";
    }
    throw ConfigError("bad scheme enum value");
}

inline TemporalScheme scheme_from_name(const std::string& s) {
    if (s == "date") return TemporalScheme::Date;
    if (s == "gap") return TemporalScheme::Gap;
    if (s == "month") return TemporalScheme::Month;
    if (s == "last") return TemporalScheme::Last;
    if (s == "without") return TemporalScheme::Without;
    throw ConfigError("unknown scheme '" + s + "' (expected gap|date|month|last|without)");
}

struct VisitText {
    std::string patient_id;
    Date visit_date;
    ClinicalConcept concept_kind = ClinicalConcept::Medication;
    std::string text;
    TemporalScheme scheme = TemporalScheme::Gap;

    bool operator==(const VisitText&) const = default;
};

/// Exact calendar-day difference; later must not precede earlier.
inline long gap_days(Date earlier, Date later) {
    if (later < earlier)
        throw OrderingError("gap_days: later date " + later.to_string() +
                            " precedes " + earlier.to_string());
    return later - earlier;
}

/// Calendar-month difference: month boundaries crossed, minus one when the
/// later day-of-month has not yet reached the earlier day-of-month.
inline long gap_months(Date earlier, Date later) {
    if (later < earlier)
        throw OrderingError("gap_months: later date " + later.to_string() +
                            " precedes " + earlier.to_string());
    long months = (later.year() - earlier.year()) * 12L +
                  (static_cast<long>(later.month()) - static_cast<long>(earlier.month()));
    if (later.day() < earlier.day()) --months;
    return months;
}

namespace detail {

inline std::string temporal_prefix(TemporalScheme scheme, Date visit,
                                   std::optional<Date> prev, Date latest) {
    switch (scheme) {
        case TemporalScheme::Gap:
            return prev ? std::to_string(gap_days(*prev, visit)) + " days after previous"
                        : std::string("First visit");
        case TemporalScheme::Month:
            return prev ? std::to_string(gap_months(*prev, visit)) + " months after previous"
                        : std::string("First visit");
        case TemporalScheme::Date:
            return visit.to_string();
        case TemporalScheme::Last: {
            const long k = gap_days(visit, latest);
            return k == 0 ? std::string("Latest visit")
                          : std::to_string(k) + " days before the latest visit";
        }
        case TemporalScheme::Without:
            return {};
    }
    throw ConfigError("bad scheme enum value");
}

}  // namespace detail

/// Renders one (visit, concept) pair into its templated sentence. Items
/// matching exclude_terms (case-insensitive substring) are dropped wholly;
/// an empty list renders the sentinel "none" so perturbed and clean
/// sequences stay aligned per visit.
inline VisitText render(const VisitRow& visit, std::optional<Date> prev_date,
                        Date latest_date, ClinicalConcept concept_kind, TemporalScheme scheme,
                        const std::vector<std::string>& exclude_terms = {},
                        const std::string& patient_id = {}) {
    if (latest_date < visit.visit_date)
        throw OrderingError("render: latest date precedes visit date");

    const auto& items = concept_kind == ClinicalConcept::Medication ? visit.medications
                                                               : visit.comorbidities;
    std::vector<std::string> kept;
    for (const auto& item : items)
        if (exclude_terms.empty() || !item_matches_terms(item, exclude_terms))
            kept.push_back(item);

    const std::string word =
        concept_kind == ClinicalConcept::Medication ? "meds" : "comorbidities";
    const std::string list = kept.empty() ? "none" : join(kept, ", ");
    const std::string prefix =
        detail::temporal_prefix(scheme, visit.visit_date, prev_date, latest_date);

    VisitText vt;
    vt.patient_id = patient_id;
    vt.visit_date = visit.visit_date;
    vt.concept_kind = concept_kind;
    vt.scheme = scheme;
    vt.text = prefix.empty() ? word + ": " + list : prefix + ", " + word + ": " + list;
    return vt;
}

/// Renders every (visit, concept) pair of one patient, visits ascending,
/// medication sentence before comorbidity sentence. `latest_override`
/// pins the Last-scheme reference date (used when visits were removed but
/// the original latest visit must stay the anchor).
inline std::vector<VisitText> render_patient(const PatientRecord& patient,
                                             TemporalScheme scheme,
                                             const FactorSpec* exclude = nullptr,
                                             std::optional<Date> latest_override = {}) {
    if (exclude && exclude->kind != FactorKind::TermSet)
        throw ConfigError("textualizer exclusion requires a term_set factor; "
                          "recency factors remove whole visits upstream");
    const Date latest = latest_override.value_or(patient.last_visit());
    std::vector<VisitText> out;
    out.reserve(patient.visits.size() * 2);
    std::optional<Date> prev;
    static const std::vector<std::string> kNoTerms;
    for (const auto& v : patient.visits) {
        for (ClinicalConcept c : {ClinicalConcept::Medication, ClinicalConcept::Comorbidity}) {
            const auto& terms =
                (exclude && exclude->applies_to(c)) ? exclude->terms : kNoTerms;
            out.push_back(render(v, prev, latest, c, scheme, terms, patient.patient_id));
        }
        prev = v.visit_date;
    }
    return out;
}

/// Whole-cohort rendering in deterministic (patient, date, concept) order.
inline std::vector<VisitText> render_cohort(const Cohort& cohort, TemporalScheme scheme,
                                            const FactorSpec* exclude = nullptr) {
    std::vector<VisitText> out;
    for (const auto& p : cohort.patients) {
        auto texts = render_patient(p, scheme, exclude);
        out.insert(out.end(), std::make_move_iterator(texts.begin()),
                   std::make_move_iterator(texts.end()));
    }
    return out;
}

inline json visit_text_to_json(const VisitText& vt) {
    return json{{"patient_id", vt.patient_id},
                {"visit_date", vt.visit_date.to_string()},
                {"concept", concept_name(vt.concept_kind)},
                {"text", vt.text},
                {"scheme", scheme_name(vt.scheme)}};
}

inline VisitText visit_text_from_json(const json& j) {
    VisitText vt;
    vt.patient_id = j.at("patient_id").get<std::string>();
    vt.visit_date = Date::parse(j.at("visit_date").get<std::string>());
    vt.concept_kind = concept_from_name(j.at("concept").get<std::string>());
    vt.text = j.at("text").get<std::string>();
    vt.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    return vt;
}

inline void write_visit_texts(const std::filesystem::path& path,
                              const std::vector<VisitText>& texts) {
    std::vector<json> rows;
    rows.reserve(texts.size());
    for (const auto& t : texts) rows.push_back(visit_text_to_json(t));
    write_jsonl(path, rows);
}

inline std::vector<VisitText> read_visit_texts(const std::filesystem::path& path) {
    std::vector<VisitText> out;
    for (const auto& j : read_jsonl(path)) out.push_back(visit_text_from_json(j));
    return out;
}

}  // namespace paregta
