#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "paregta/events.hpp"
#include "paregta/factors.hpp"

namespace paregta {

// One plantable clinical factor: a class with product-level string variants
// and class-conditional per-visit emission probabilities.
struct PlantedFactor {
    std::string name;
    std::vector<std::string> variants;
    double p_given_positive = 0;
    double p_given_negative = 0;
    ClinicalConcept concept_kind = ClinicalConcept::Medication;

    void validate() const {
        if (name.empty() || variants.empty())
            throw ConfigError("planted factor needs a name and variants");
        for (double p : {p_given_positive, p_given_negative})
            if (p < 0 || p > 1) throw ConfigError("factor '" + name + "': probability out of [0,1]");
    }

    static PlantedFactor from_json(const json& j, ClinicalConcept kind) {
        strict_keys(j, {"name", "variants", "p_given_positive", "p_given_negative"},
                    "synth.factor");
        PlantedFactor f;
        f.name = j.at("name").get<std::string>();
        f.variants = j.at("variants").get<std::vector<std::string>>();
        f.p_given_positive = j.at("p_given_positive").get<double>();
        f.p_given_negative = j.at("p_given_negative").get<double>();
        f.concept_kind = kind;
        f.validate();
        return f;
    }

    json to_json() const {
        return json{{"name", name},
                    {"variants", variants},
                    {"p_given_positive", p_given_positive},
                    {"p_given_negative", p_given_negative}};
    }
};

// Restricts one medication class to the trailing window of positive
// patients' records (a recency-dependent signal).
struct RecencyEffect {
    std::string factor_name;
    int window_days = 180;
    double p_within = 0.5;

    static RecencyEffect from_json(const json& j) {
        strict_keys(j, {"factor_name", "window_days", "p_within"}, "synth.recency_effect");
        RecencyEffect e;
        e.factor_name = j.at("factor_name").get<std::string>();
        e.window_days = j.at("window_days").get<int>();
        e.p_within = j.at("p_within").get<double>();
        if (e.window_days <= 0 || e.p_within < 0 || e.p_within > 1)
            throw ConfigError("recency_effect: invalid window or probability");
        return e;
    }

    json to_json() const {
        return json{{"factor_name", factor_name},
                    {"window_days", window_days},
                    {"p_within", p_within}};
    }
};

struct SynthConfig {
    size_t n_patients = 1000;
    double positive_rate = 0.19;
    int visits_min = 12, visits_max = 25;
    int gap_min_positive = 30, gap_max_positive = 80;
    int gap_min_negative = 55, gap_max_negative = 130;
    std::vector<PlantedFactor> medications;
    std::vector<PlantedFactor> comorbidities;
    std::optional<RecencyEffect> recency_effect;
    std::vector<std::pair<std::string, double>> sex_distribution = {{"Female", 0.8},
                                                                    {"Male", 0.2}};
    std::vector<std::pair<std::string, double>> race_distribution = {
        {"White", 0.61}, {"Black", 0.10}, {"Asian", 0.08}, {"Other", 0.21}};
    std::uint64_t seed = 0;

    // Anchor vocabulary; positives get the chronic term on their last visit.
    std::vector<std::string> episodic_anchor_terms = {"Unspecified migraine",
                                                      "Migraine without Aura",
                                                      "Migraine with Aura"};
    std::string positive_anchor_term = "Chronic Migraine without Aura";

    void validate() const {
        if (n_patients < 4) throw ConfigError("synth: n_patients must be >= 4");
        if (positive_rate < 0 || positive_rate > 1)
            throw ConfigError("synth: positive_rate out of [0,1]");
        if (visits_min < 1 || visits_max < visits_min)
            throw ConfigError("synth: invalid visits range");
        if (gap_min_positive < 1 || gap_max_positive < gap_min_positive ||
            gap_min_negative < 1 || gap_max_negative < gap_min_negative)
            throw ConfigError("synth: invalid gap ranges");
        for (const auto& f : medications) f.validate();
        for (const auto& f : comorbidities) f.validate();
        if (recency_effect) {
            const bool known = std::any_of(
                medications.begin(), medications.end(),
                [&](const PlantedFactor& f) { return f.name == recency_effect->factor_name; });
            if (!known)
                throw ConfigError("synth: recency_effect names unknown factor '" +
                                  recency_effect->factor_name + "'");
        }
        auto check_dist = [](const std::vector<std::pair<std::string, double>>& d,
                             const char* what) {
            double sum = 0;
            for (const auto& [_, p] : d) sum += p;
            if (std::abs(sum - 1.0) > 1e-6)
                throw ConfigError(std::string("synth: ") + what +
                                  " distribution must sum to 1");
        };
        check_dist(sex_distribution, "sex");
        check_dist(race_distribution, "race");
    }

    static SynthConfig from_json(const json& j);
    json to_json() const;

    /// The taxonomy matching this generator's vocabulary.
    DiagnosisTaxonomy taxonomy() const {
        DiagnosisTaxonomy t;
        for (const auto& a : episodic_anchor_terms) t.anchor_terms.insert(a);
        t.anchor_terms.insert(positive_anchor_term);
        t.positive_label_terms.insert(positive_anchor_term);
        for (const auto& f : comorbidities)
            for (const auto& v : f.variants) t.comorbidity_terms.insert(v);
        return t;
    }

    /// RSS factor specs for every planted class (substring term matching).
    std::vector<FactorSpec> factor_specs() const {
        std::vector<FactorSpec> out;
        for (const auto& f : medications) {
            FactorSpec s;
            s.name = f.name;
            s.kind = FactorKind::TermSet;
            s.terms = f.variants;
            s.scope = ConceptScope::Medication;
            out.push_back(std::move(s));
        }
        for (const auto& f : comorbidities) {
            FactorSpec s;
            s.name = f.name;
            s.kind = FactorKind::TermSet;
            s.terms = f.variants;
            s.scope = ConceptScope::Comorbidity;
            out.push_back(std::move(s));
        }
        return out;
    }
};

struct SynthResult {
    std::vector<EventRecord> events;
    json manifest;
};

/// Generates a synthetic longitudinal cohort with planted label-factor
/// associations. Deterministic per seed; the manifest is the ground-truth
/// oracle for acceptance tests.
inline SynthResult generate(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(stage_seed(config.seed, "synth"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    auto categorical = [&](const std::vector<std::pair<std::string, double>>& dist) {
        double v = u01(rng), cum = 0;
        for (const auto& [name, p] : dist) {
            cum += p;
            if (v < cum) return name;
        }
        return dist.back().first;
    };

    SynthResult result;
    json patients_manifest = json::array();

    for (size_t pi = 0; pi < config.n_patients; ++pi) {
        const std::string pid = "P" + std::to_string(pi + 1);
        const bool positive = u01(rng) < config.positive_rate;
        const std::string sex = categorical(config.sex_distribution);
        const std::string race = categorical(config.race_distribution);

        // Age bands roughly matching an adult-heavy cohort.
        int age;
        const double av = u01(rng);
        if (av < 0.05) age = 8 + static_cast<int>(u01(rng) * 10);        // <18
        else if (av < 0.86) age = 18 + static_cast<int>(u01(rng) * 47);  // 18-64
        else age = 65 + static_cast<int>(u01(rng) * 25);                 // 65+

        std::uniform_int_distribution<int> n_visits_dist(config.visits_min, config.visits_max);
        const int n_visits = n_visits_dist(rng);
        std::uniform_int_distribution<int> gap_dist(
            positive ? config.gap_min_positive : config.gap_min_negative,
            positive ? config.gap_max_positive : config.gap_max_negative);
        std::uniform_int_distribution<long> start_dist(0, 365L * 4);

        std::vector<Date> dates;
        Date d = Date(2015, 1, 1).plus_days(start_dist(rng));
        dates.push_back(d);
        for (int v = 1; v < n_visits; ++v) {
            d = d.plus_days(gap_dist(rng));
            dates.push_back(d);
        }
        const Date last = dates.back();

        auto emit = [&](Date date, std::optional<std::string> med,
                        std::optional<std::string> diag) {
            EventRecord e;
            e.patient_id = pid;
            e.age = age;
            e.sex = sex;
            e.race = race;
            e.visit_date = date;
            e.medication = std::move(med);
            e.diagnosis = std::move(diag);
            result.events.push_back(std::move(e));
        };

        std::set<std::string> present_factors;
        std::uniform_int_distribution<int> jitter(-2, 2);

        for (int v = 0; v < n_visits; ++v) {
            const Date date = dates[static_cast<size_t>(v)];
            const bool is_last = (v == n_visits - 1);
            std::string anchor;
            if (positive && is_last) {
                anchor = config.positive_anchor_term;
            } else {
                std::uniform_int_distribution<size_t> pick(
                    0, config.episodic_anchor_terms.size() - 1);
                anchor = config.episodic_anchor_terms[pick(rng)];
            }
            emit(date, std::nullopt, anchor);

            for (const auto& f : config.medications) {
                double p = positive ? f.p_given_positive : f.p_given_negative;
                if (config.recency_effect && f.name == config.recency_effect->factor_name) {
                    // Appears only in the trailing window of positive patients.
                    const bool in_window = (last - date) <= config.recency_effect->window_days;
                    p = (positive && in_window) ? config.recency_effect->p_within : 0.0;
                }
                if (u01(rng) < p) {
                    std::uniform_int_distribution<size_t> pick(0, f.variants.size() - 1);
                    emit(date.plus_days(jitter(rng)), f.variants[pick(rng)], std::nullopt);
                    present_factors.insert(f.name);
                }
            }
            for (const auto& f : config.comorbidities) {
                const double p = positive ? f.p_given_positive : f.p_given_negative;
                if (u01(rng) < p) {
                    std::uniform_int_distribution<size_t> pick(0, f.variants.size() - 1);
                    emit(date, std::nullopt, f.variants[pick(rng)]);
                    present_factors.insert(f.name);
                }
            }
        }

        patients_manifest.push_back(
            json{{"patient_id", pid},
                 {"label", positive ? "chronic" : "episodic"},
                 {"span_days", last - dates.front()},
                 {"n_visits", n_visits},
                 {"factors_present", std::vector<std::string>(present_factors.begin(),
                                                              present_factors.end())}});
    }

    json effects = json::array();
    for (const auto& f : config.medications) {
        json e = f.to_json();
        e["concept"] = "meds";
        effects.push_back(e);
    }
    for (const auto& f : config.comorbidities) {
        json e = f.to_json();
        e["concept"] = "comorb";
        effects.push_back(e);
    }
    result.manifest = json{{"n_patients", config.n_patients},
                           {"positive_rate", config.positive_rate},
                           {"seed", config.seed},
                           {"patients", patients_manifest},
                           {"effects", effects}};
    if (config.recency_effect)
        result.manifest["recency_effect"] = config.recency_effect->to_json();
    return result;
}

inline SynthConfig SynthConfig::from_json(const json& j) {
    strict_keys(j, {"n_patients", "positive_rate", "visits_min", "visits_max",
                    "gap_min_positive", "gap_max_positive", "gap_min_negative",
                    "gap_max_negative", "medications", "comorbidities", "recency_effect",
                    "sex_distribution", "race_distribution", "episodic_anchor_terms",
                    "positive_anchor_term", "seed"},
                "synth");
    SynthConfig c;
    c.n_patients = j.value("n_patients", c.n_patients);
    c.positive_rate = j.value("positive_rate", c.positive_rate);
    c.visits_min = j.value("visits_min", c.visits_min);
    c.visits_max = j.value("visits_max", c.visits_max);
    c.gap_min_positive = j.value("gap_min_positive", c.gap_min_positive);
    c.gap_max_positive = j.value("gap_max_positive", c.gap_max_positive);
    c.gap_min_negative = j.value("gap_min_negative", c.gap_min_negative);
    c.gap_max_negative = j.value("gap_max_negative", c.gap_max_negative);
    if (j.contains("medications")) {
        c.medications.clear();
        for (const auto& fj : j.at("medications"))
            c.medications.push_back(PlantedFactor::from_json(fj, ClinicalConcept::Medication));
    }
    if (j.contains("comorbidities")) {
        c.comorbidities.clear();
        for (const auto& fj : j.at("comorbidities"))
            c.comorbidities.push_back(PlantedFactor::from_json(fj, ClinicalConcept::Comorbidity));
    }
    if (j.contains("recency_effect") && !j.at("recency_effect").is_null())
        c.recency_effect = RecencyEffect::from_json(j.at("recency_effect"));
    auto dist = [](const json& dj) {
        std::vector<std::pair<std::string, double>> d;
        for (const auto& [k, v] : dj.items()) d.emplace_back(k, v.get<double>());
        std::sort(d.begin(), d.end());
        return d;
    };
    if (j.contains("sex_distribution")) c.sex_distribution = dist(j.at("sex_distribution"));
    if (j.contains("race_distribution")) c.race_distribution = dist(j.at("race_distribution"));
    if (j.contains("episodic_anchor_terms"))
        c.episodic_anchor_terms = j.at("episodic_anchor_terms").get<std::vector<std::string>>();
    c.positive_anchor_term = j.value("positive_anchor_term", c.positive_anchor_term);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline json SynthConfig::to_json() const {
    json meds = json::array(), comorbs = json::array();
    for (const auto& f : medications) meds.push_back(f.to_json());
    for (const auto& f : comorbidities) comorbs.push_back(f.to_json());
    json sex = json::object(), race = json::object();
    for (const auto& [k, v] : sex_distribution) sex[k] = v;
    for (const auto& [k, v] : race_distribution) race[k] = v;
    json j{{"n_patients", n_patients},
           {"positive_rate", positive_rate},
           {"visits_min", visits_min},
           {"visits_max", visits_max},
           {"gap_min_positive", gap_min_positive},
           {"gap_max_positive", gap_max_positive},
           {"gap_min_negative", gap_min_negative},
           {"gap_max_negative", gap_max_negative},
           {"medications", meds},
           {"comorbidities", comorbs},
           {"sex_distribution", sex},
           {"race_distribution", race},
           {"episodic_anchor_terms", episodic_anchor_terms},
           {"positive_anchor_term", positive_anchor_term},
           {"seed", seed}};
    if (recency_effect) j["recency_effect"] = recency_effect->to_json();
    return j;
}

/// The planted-effect catalog used by the shipped configs and tests.
inline SynthConfig default_synth_config() {
    SynthConfig c;
    c.medications = {
        {"botulinum",
         {"onabotulinumtoxinA 100 UNT Injection", "Botox 200 UNT Injection"},
         0.80, 0.05, ClinicalConcept::Medication},
        {"acetaminophen",
         {"acetaminophen 325 MG Oral Tablet", "acetaminophen 500 MG Oral Tablet",
          "Tylenol 500 MG Oral Tablet"},
         0.30, 0.30, ClinicalConcept::Medication},
        {"cgrp",
         {"erenumab 70 MG Injection", "Aimovig 140 MG Injection",
          "galcanezumab 120 MG Injection"},
         0.25, 0.08, ClinicalConcept::Medication},
        {"nsaid",
         {"ibuprofen", "ibuprofen 200 MG Oral Tablet", "naproxen 500 MG Oral Tablet"},
         0.35, 0.40, ClinicalConcept::Medication},
        {"gepant",
         {"ubrogepant 50 MG Oral Tablet", "rimegepant 75 MG Oral Disintegrating Tablet"},
         0.0, 0.0, ClinicalConcept::Medication},
        {"opioid",
         {"oxycodone 5 MG Oral Tablet", "tramadol 50 MG Oral Tablet"},
         0.12, 0.08, ClinicalConcept::Medication},
    };
    c.comorbidities = {
        {"depression", {"Depression"}, 0.45, 0.30, ClinicalConcept::Comorbidity},
        {"insomnia", {"Insomnia"}, 0.35, 0.20, ClinicalConcept::Comorbidity},
        {"hypertension", {"Hypertension"}, 0.30, 0.25, ClinicalConcept::Comorbidity},
        {"anxiety", {"Anxiety"}, 0.30, 0.30, ClinicalConcept::Comorbidity},
    };
    c.recency_effect = RecencyEffect{"gepant", 180, 0.5};
    return c;
}

}  // namespace paregta
