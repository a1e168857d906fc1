#pragma once

#include <string>
#include <vector>

#include "paregta/common.hpp"
#include "paregta/io.hpp"

namespace paregta {

enum class ClinicalConcept { Medication, Comorbidity };

inline std::string concept_name(ClinicalConcept c) {
    return c == ClinicalConcept::Medication ? "meds" : "comorb";
}

inline ClinicalConcept concept_from_name(const std::string& s) {
    if (s == "meds") return ClinicalConcept::Medication;
    if (s == "comorb") return ClinicalConcept::Comorbidity;
    throw ConfigError("unknown concept '" + s + "' (expected meds|comorb)");
}

enum class FactorKind { TermSet, RecencyWindow };
enum class ConceptScope { Medication, Comorbidity, Both };

// A removable clinical factor: either a named term set (medication class,
// comorbidity) or a recency window of whole visits.
struct FactorSpec {
    std::string name;
    FactorKind kind = FactorKind::TermSet;
    std::vector<std::string> terms;  // TermSet only
    int window_days = 0;             // RecencyWindow only
    ConceptScope scope = ConceptScope::Both;

    void validate() const {
        if (name.empty()) throw ConfigError("factor: name must be non-empty");
        if (kind == FactorKind::TermSet) {
            if (terms.empty())
                throw ConfigError("factor '" + name + "': term_set needs terms");
            if (window_days != 0)
                throw ConfigError("factor '" + name + "': term_set must not set window_days");
        } else {
            if (window_days <= 0)
                throw ConfigError("factor '" + name + "': recency_window needs window_days > 0");
            if (!terms.empty())
                throw ConfigError("factor '" + name + "': recency_window must not set terms");
        }
    }

    bool applies_to(ClinicalConcept c) const {
        if (scope == ConceptScope::Both) return true;
        return (scope == ConceptScope::Medication) == (c == ClinicalConcept::Medication);
    }

    static FactorSpec from_json(const json& j) {
        strict_keys(j, {"name", "kind", "terms", "window_days", "concept_scope"}, "factor");
        FactorSpec f;
        f.name = j.at("name").get<std::string>();
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "term_set") f.kind = FactorKind::TermSet;
        else if (kind == "recency_window") f.kind = FactorKind::RecencyWindow;
        else throw ConfigError("factor '" + f.name + "': unknown kind '" + kind + "'");
        if (j.contains("terms")) f.terms = j.at("terms").get<std::vector<std::string>>();
        if (j.contains("window_days")) f.window_days = j.at("window_days").get<int>();
        const std::string scope = j.value("concept_scope", "both");
        if (scope == "meds") f.scope = ConceptScope::Medication;
        else if (scope == "comorb") f.scope = ConceptScope::Comorbidity;
        else if (scope == "both") f.scope = ConceptScope::Both;
        else throw ConfigError("factor '" + f.name + "': unknown concept_scope '" + scope + "'");
        f.validate();
        return f;
    }

    json to_json() const {
        json j{{"name", name},
               {"kind", kind == FactorKind::TermSet ? "term_set" : "recency_window"}};
        if (kind == FactorKind::TermSet) j["terms"] = terms;
        else j["window_days"] = window_days;
        j["concept_scope"] = scope == ConceptScope::Both
                                 ? "both"
                                 : (scope == ConceptScope::Medication ? "meds" : "comorb");
        return j;
    }
};

/// Case-insensitive substring match of any factor term against a list item.
/// A matched item is dropped wholly by the renderer.
inline bool item_matches_terms(const std::string& item,
                               const std::vector<std::string>& terms) {
    for (const auto& t : terms)
        if (icontains(item, t)) return true;
    return false;
}

inline std::vector<FactorSpec> factors_from_json(const json& j) {
    std::vector<FactorSpec> out;
    for (const auto& fj : j) out.push_back(FactorSpec::from_json(fj));
    return out;
}

}  // namespace paregta
