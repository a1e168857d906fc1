#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paregta/downstream.hpp"
#include "paregta/pooling.hpp"
#include "paregta/representation.hpp"
#include "paregta/textualize.hpp"

namespace paregta {

// Everything the attribution pass needs, frozen from training. Perturbation
// never refits any of it. The encode functions own whatever backend they
// wrap (reference params or an external client).
struct FrozenPipeline {
    std::function<VectorXd(const std::string&)> encode_meds;
    std::function<VectorXd(const std::string&)> encode_comorb;
    TemporalScheme scheme = TemporalScheme::Gap;
    PoolingConfig pooling;
    std::optional<AttentionScorerParams> scorer;
    FittedTransform transform;
    ProbeModel probe;

    const AttentionScorerParams* scorer_ptr() const {
        return scorer ? &*scorer : nullptr;
    }
};

namespace detail {

inline VectorXd pool_concept(const FrozenPipeline& pipe, const PatientRecord& patient,
                             ClinicalConcept concept_kind, const FactorSpec* exclude,
                             std::optional<Date> latest_override) {
    const auto texts = render_patient(patient, pipe.scheme, exclude, latest_override);
    const auto& encode_fn = concept_kind == ClinicalConcept::Medication
                                ? pipe.encode_meds
                                : pipe.encode_comorb;
    VisitSequence seq;
    seq.times.reserve(patient.visits.size());
    std::vector<VectorXd> rows;
    for (const auto& vt : texts) {
        if (vt.concept_kind != concept_kind) continue;
        rows.push_back(encode_fn(vt.text));
        seq.times.push_back(vt.visit_date);
    }
    seq.embeddings.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (size_t i = 0; i < rows.size(); ++i)
        seq.embeddings.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return hybrid_pool(seq, pipe.pooling, pipe.scorer_ptr());
}

}  // namespace detail

/// Runs the frozen render -> encode -> pool -> transform path for one
/// patient, optionally excluding a term-set factor from the rendered text.
inline VectorXd represent_patient(const PatientRecord& patient, const FrozenPipeline& pipe,
                                  const FactorSpec* exclude = nullptr,
                                  std::optional<Date> latest_override = {}) {
    const VectorXd meds = detail::pool_concept(pipe, patient, ClinicalConcept::Medication,
                                               exclude, latest_override);
    const VectorXd comorb = detail::pool_concept(pipe, patient, ClinicalConcept::Comorbidity,
                                                 exclude, latest_override);
    const auto& t = pipe.transform;
    VectorXd features(t.layout().total_width());
    features.head(t.meds.retained) = t.meds.apply(meds);
    features.segment(t.meds.retained, t.comorb.retained) = t.comorb.apply(comorb);
    features.tail(t.demographics.width()) = t.demographics.encode(patient);
    return features;
}

/// True iff the observation span strictly exceeds 2T days.
inline bool temporal_eligibility(const PatientRecord& patient, int window_days) {
    if (window_days <= 0) throw ConfigError("temporal_eligibility: T must be > 0");
    return patient.span_days() > 2L * window_days;
}

/// Drops every visit within the trailing window (gap from the latest visit
/// <= T). Throws DegenerateError when nothing remains.
inline PatientRecord drop_recent_visits(const PatientRecord& patient, int window_days) {
    PatientRecord reduced = patient;
    reduced.visits.clear();
    const Date latest = patient.last_visit();
    for (const auto& v : patient.visits)
        if (gap_days(v.visit_date, latest) > window_days) reduced.visits.push_back(v);
    if (reduced.visits.empty())
        throw DegenerateError("recency removal leaves patient '" + patient.patient_id +
                              "' without visits");
    return reduced;
}

inline bool patient_has_factor(const PatientRecord& patient, const FactorSpec& factor) {
    if (factor.kind == FactorKind::RecencyWindow) {
        // Present when the eligibility rule admits the patient; a patient
        // with span > 2T always has at least the latest visit in-window.
        return temporal_eligibility(patient, factor.window_days);
    }
    for (const auto& v : patient.visits) {
        if (factor.applies_to(ClinicalConcept::Medication))
            for (const auto& m : v.medications)
                if (item_matches_terms(m, factor.terms)) return true;
        if (factor.applies_to(ClinicalConcept::Comorbidity))
            for (const auto& c : v.comorbidities)
                if (item_matches_terms(c, factor.terms)) return true;
    }
    return false;
}

/// Clean and perturbed representations under factor removal. Term sets are
/// re-rendered with the terms excluded; recency windows drop whole visits
/// inside the window and re-render the remaining record with the
/// Last-scheme reference date pinned to the original latest visit.
inline std::pair<VectorXd, VectorXd> perturb_and_represent(const PatientRecord& patient,
                                                           const FactorSpec& factor,
                                                           const FrozenPipeline& pipe) {
    const VectorXd clean = represent_patient(patient, pipe);
    if (factor.kind == FactorKind::TermSet) {
        const VectorXd perturbed = represent_patient(patient, pipe, &factor);
        return {clean, perturbed};
    }
    const PatientRecord reduced = drop_recent_visits(patient, factor.window_days);
    const VectorXd perturbed =
        represent_patient(reduced, pipe, nullptr, patient.last_visit());
    return {clean, perturbed};
}

/// Eq.-style linear score: coefficient-weighted representation shift. The
/// intercept cancels, so this equals the logit difference exactly.
inline double rss_score(const VectorXd& clean, const VectorXd& perturbed,
                        const ProbeModel& probe) {
    if (clean.size() != probe.coefficients.size() || perturbed.size() != clean.size())
        throw ValidationError("rss_score: dimension mismatch with probe");
    return probe.coefficients.dot(clean - perturbed);
}

/// Generalized form: change in any scalar decision score.
inline double rss_score_generic(const VectorXd& clean, const VectorXd& perturbed,
                                const std::function<double(const VectorXd&)>& score_fn) {
    return score_fn(clean) - score_fn(perturbed);
}

struct AttributionScore {
    std::string patient_id;
    std::string factor_name;
    double score = 0;
    bool factor_present = false;
};

struct CohortAttribution {
    std::string factor_name;
    size_t n_patients_with_factor = 0;
    double mean_abs = 0;
    double mean_signed = 0;
    double dispersion = 0;  // sample std of the signed scores
};

struct SubgroupFilter {
    std::string key;  // sex | race | label
    std::string value;

    bool matches(const PatientRecord& p) const {
        if (key == "sex") return p.sex == value;
        if (key == "race") return p.race == value;
        if (key == "label") return (p.chronic ? "chronic" : "episodic") == value;
        throw ConfigError("unknown subgroup key '" + key + "' (expected sex|race|label)");
    }

    static SubgroupFilter parse(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("subgroup filter must be key=value, got '" + kv + "'");
        return SubgroupFilter{kv.substr(0, eq), kv.substr(eq + 1)};
    }
};

struct AttributionResult {
    std::vector<AttributionScore> per_patient;
    std::vector<CohortAttribution> aggregates;          // support >= min_support
    std::vector<CohortAttribution> suppressed;          // support below threshold
    size_t degenerate_patients = 0;                     // recency removal emptied record
};

/// Scores every (patient, factor) pair on the attribution split. Patients
/// without the factor score exactly zero and stay out of the aggregates;
/// factors below min_support keep per-patient scores but are suppressed
/// from the aggregate list.
inline AttributionResult cohort_attribution(const std::vector<const PatientRecord*>& patients,
                                            const std::vector<FactorSpec>& factors,
                                            const FrozenPipeline& pipe, size_t min_support,
                                            const std::optional<SubgroupFilter>& subgroup) {
    if (patients.empty()) throw ValidationError("attribution split is empty");

    std::vector<const PatientRecord*> selected;
    for (const auto* p : patients)
        if (!subgroup || subgroup->matches(*p)) selected.push_back(p);

    AttributionResult result;
    std::map<std::string, VectorXd> clean_cache;

    for (const auto& factor : factors) {
        factor.validate();
        std::vector<double> scores;
        for (const auto* p : selected) {
            AttributionScore s;
            s.patient_id = p->patient_id;
            s.factor_name = factor.name;
            s.factor_present = patient_has_factor(*p, factor);
            if (s.factor_present) {
                auto it = clean_cache.find(p->patient_id);
                if (it == clean_cache.end())
                    it = clean_cache.emplace(p->patient_id, represent_patient(*p, pipe)).first;
                try {
                    VectorXd perturbed;
                    if (factor.kind == FactorKind::TermSet) {
                        perturbed = represent_patient(*p, pipe, &factor);
                    } else {
                        perturbed = represent_patient(drop_recent_visits(*p, factor.window_days),
                                                      pipe, nullptr, p->last_visit());
                    }
                    s.score = rss_score(it->second, perturbed, pipe.probe);
                } catch (const DegenerateError&) {
                    ++result.degenerate_patients;
                    continue;  // excluded and counted
                }
                scores.push_back(s.score);
            }
            result.per_patient.push_back(std::move(s));
        }

        CohortAttribution agg;
        agg.factor_name = factor.name;
        agg.n_patients_with_factor = scores.size();
        if (!scores.empty()) {
            double abs_sum = 0, sum = 0;
            for (double v : scores) {
                abs_sum += std::abs(v);
                sum += v;
            }
            agg.mean_abs = abs_sum / static_cast<double>(scores.size());
            agg.mean_signed = sum / static_cast<double>(scores.size());
            if (scores.size() > 1) {
                double sq = 0;
                for (double v : scores) sq += (v - agg.mean_signed) * (v - agg.mean_signed);
                agg.dispersion = std::sqrt(sq / static_cast<double>(scores.size() - 1));
            }
        }
        (scores.size() >= min_support ? result.aggregates : result.suppressed)
            .push_back(std::move(agg));
    }
    return result;
}

inline json attribution_to_json(const AttributionResult& r) {
    json per_patient = json::array();
    for (const auto& s : r.per_patient)
        per_patient.push_back(json{{"patient_id", s.patient_id},
                                   {"factor", s.factor_name},
                                   {"score", s.score},
                                   {"factor_present", s.factor_present}});
    auto agg_json = [](const std::vector<CohortAttribution>& v) {
        json arr = json::array();
        for (const auto& a : v)
            arr.push_back(json{{"factor", a.factor_name},
                               {"n_patients_with_factor", a.n_patients_with_factor},
                               {"mean_abs", a.mean_abs},
                               {"mean_signed", a.mean_signed},
                               {"dispersion", a.dispersion}});
        return arr;
    };
    // Plot-ready tuples mirror the aggregates: (factor, mean_abs,
    // mean_signed, dispersion).
    json plot = json::array();
    for (const auto& a : r.aggregates)
        plot.push_back(json::array({a.factor_name, a.mean_abs, a.mean_signed, a.dispersion}));
    return json{{"per_patient", per_patient},
                {"aggregates", agg_json(r.aggregates)},
                {"suppressed", agg_json(r.suppressed)},
                {"degenerate_patients", r.degenerate_patients},
                {"plot_tuples", plot}};
}

}  // namespace paregta
