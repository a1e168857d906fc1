#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "paregta/cohort.hpp"
#include "paregta/synth.hpp"

using namespace paregta;

namespace {

DiagnosisTaxonomy migraine_taxonomy() {
    DiagnosisTaxonomy t;
    t.anchor_terms = {"Unspecified migraine", "Migraine without Aura",
                      "Chronic Migraine without Aura"};
    t.positive_label_terms = {"Chronic Migraine without Aura"};
    t.comorbidity_terms = {"Depression", "Insomnia", "Flu"};
    return t;
}

EventRecord event(const std::string& pid, const std::string& date,
                  std::optional<std::string> med, std::optional<std::string> diag,
                  int age = 33) {
    EventRecord e;
    e.patient_id = pid;
    e.age = age;
    e.sex = "Male";
    e.race = "Asian";
    e.visit_date = Date::parse(date);
    e.medication = std::move(med);
    e.diagnosis = std::move(diag);
    return e;
}

// The worked single-patient example: raw long-format rows collapsing to
// three anchor-dated visit rows with window-attached meds/comorbidities.
std::vector<EventRecord> example_patient_events() {
    return {
        event("1", "2021-06-01", std::nullopt, "Unspecified migraine"),
        event("1", "2021-06-01", "acetaminophen 325 MG Oral Tablet", std::nullopt),
        event("1", "2021-06-03", std::nullopt, "Depression"),
        event("1", "2021-07-01", std::nullopt, "Flu"),
        event("1", "2021-07-02", "acetaminophen 325 MG Oral Tablet", std::nullopt),
        event("1", "2021-09-01", std::nullopt, "Migraine without Aura"),
        event("1", "2021-09-01", std::nullopt, "Depression"),
        event("1", "2021-09-02", "lasmiditan 100 MG Oral Tablet", std::nullopt),
        event("1", "2021-09-02", std::nullopt, "Insomnia"),
        event("1", "2021-12-01", std::nullopt, "Chronic Migraine without Aura"),
        event("1", "2021-12-01", "lasmiditan 100 MG Oral Tablet", std::nullopt),
        event("1", "2021-12-02", "ibuprofen", std::nullopt),
        event("1", "2021-12-01", std::nullopt, "Depression"),
        event("1", "2021-12-01", std::nullopt, "Insomnia"),
    };
}

}  // namespace

TEST_CASE("anchor collapse of the worked example") {
    const Cohort cohort = build_cohort(example_patient_events(), migraine_taxonomy(), 3);
    REQUIRE(cohort.patients.size() == 1);
    const auto& p = cohort.patients[0];
    CHECK(p.chronic);
    CHECK(p.age == 33);

    REQUIRE(p.visits.size() == 3);
    CHECK(p.visits[0].visit_date == Date::parse("2021-06-01"));
    CHECK(p.visits[1].visit_date == Date::parse("2021-09-01"));
    CHECK(p.visits[2].visit_date == Date::parse("2021-12-01"));

    // 2021-06-01 attaches the same-day acetaminophen and the +2d Depression.
    CHECK(p.visits[0].medications ==
          std::vector<std::string>{"acetaminophen 325 MG Oral Tablet"});
    CHECK(p.visits[0].comorbidities == std::vector<std::string>{"Depression"});

    // 2021-09-01 attaches lasmiditan (+1d) and {Depression, Insomnia}.
    CHECK(p.visits[1].medications ==
          std::vector<std::string>{"lasmiditan 100 MG Oral Tablet"});
    CHECK(p.visits[1].comorbidities == std::vector<std::string>{"Depression", "Insomnia"});

    // 2021-12-01 attaches lasmiditan and ibuprofen (+1d).
    CHECK(p.visits[2].medications ==
          std::vector<std::string>{"lasmiditan 100 MG Oral Tablet", "ibuprofen"});
    CHECK(p.visits[2].comorbidities == std::vector<std::string>{"Depression", "Insomnia"});
    CHECK(p.visits[2].anchor_diagnoses ==
          std::vector<std::string>{"Chronic Migraine without Aura"});

    // The July flu events sit outside every +-3-day window.
    for (const auto& v : p.visits)
        for (const auto& c : v.comorbidities) CHECK(c != "Flu");
}

TEST_CASE("window boundary excludes a +4 day medication") {
    auto events = std::vector<EventRecord>{
        event("1", "2021-06-01", std::nullopt, "Unspecified migraine"),
        event("1", "2021-06-05", "ibuprofen", std::nullopt),  // +4 with W=3
    };
    const Cohort c3 = build_cohort(events, migraine_taxonomy(), 3);
    CHECK(c3.patients[0].visits[0].medications.empty());
    const Cohort c4 = build_cohort(events, migraine_taxonomy(), 4);
    CHECK(c4.patients[0].visits[0].medications == std::vector<std::string>{"ibuprofen"});
}

TEST_CASE("patient with no anchor diagnosis is dropped and counted") {
    auto events = std::vector<EventRecord>{
        event("1", "2021-06-01", std::nullopt, "Flu"),
        event("2", "2021-06-01", std::nullopt, "Unspecified migraine"),
    };
    const Cohort c = build_cohort(events, migraine_taxonomy(), 3);
    REQUIRE(c.patients.size() == 1);
    CHECK(c.patients[0].patient_id == "2");
    CHECK(c.dropped_no_anchor == 1);
}

TEST_CASE("events between two anchors attach to the nearest, ties earlier") {
    auto events = std::vector<EventRecord>{
        event("1", "2021-06-01", std::nullopt, "Unspecified migraine"),
        event("1", "2021-06-05", std::nullopt, "Unspecified migraine"),
        event("1", "2021-06-04", "near_b", std::nullopt),  // 3 vs 1 -> second anchor
        event("1", "2021-06-03", "tie", std::nullopt),     // 2 vs 2 -> earlier anchor
    };
    const Cohort c = build_cohort(events, migraine_taxonomy(), 3);
    REQUIRE(c.patients[0].visits.size() == 2);
    CHECK(c.patients[0].visits[0].medications == std::vector<std::string>{"tie"});
    CHECK(c.patients[0].visits[1].medications == std::vector<std::string>{"near_b"});
}

TEST_CASE("same-date anchors merge into one visit row") {
    auto events = std::vector<EventRecord>{
        event("1", "2021-06-01", std::nullopt, "Unspecified migraine"),
        event("1", "2021-06-01", std::nullopt, "Migraine without Aura"),
    };
    const Cohort c = build_cohort(events, migraine_taxonomy(), 3);
    REQUIRE(c.patients[0].visits.size() == 1);
    CHECK(c.patients[0].visits[0].anchor_diagnoses ==
          std::vector<std::string>{"Unspecified migraine", "Migraine without Aura"});
}

TEST_CASE("duplicate events collapse within a visit") {
    auto events = std::vector<EventRecord>{
        event("1", "2021-06-01", std::nullopt, "Unspecified migraine"),
        event("1", "2021-06-01", "ibuprofen", std::nullopt),
        event("1", "2021-06-01", "ibuprofen", std::nullopt),
        event("1", "2021-06-02", "ibuprofen", std::nullopt),
    };
    const Cohort c = build_cohort(events, migraine_taxonomy(), 3);
    CHECK(c.patients[0].visits[0].medications == std::vector<std::string>{"ibuprofen"});
}

TEST_CASE("age comes from the most recent record") {
    auto events = std::vector<EventRecord>{
        event("1", "2021-06-01", std::nullopt, "Unspecified migraine", 33),
        event("1", "2022-06-01", std::nullopt, "Unspecified migraine", 34),
    };
    const Cohort c = build_cohort(events, migraine_taxonomy(), 3);
    CHECK(c.patients[0].age == 34);
}

TEST_CASE("label monotonicity: adding a positive anchor cannot flip to negative") {
    auto events = example_patient_events();
    const Cohort before = build_cohort(events, migraine_taxonomy(), 3);
    events.push_back(event("1", "2022-03-01", std::nullopt, "Chronic Migraine without Aura"));
    const Cohort after = build_cohort(events, migraine_taxonomy(), 3);
    CHECK(before.patients[0].chronic);
    CHECK(after.patients[0].chronic);

    // And from a negative patient the label can only go negative -> positive.
    auto neg = std::vector<EventRecord>{
        event("9", "2021-06-01", std::nullopt, "Unspecified migraine")};
    CHECK_FALSE(build_cohort(neg, migraine_taxonomy(), 3).patients[0].chronic);
    neg.push_back(event("9", "2021-07-01", std::nullopt, "Chronic Migraine without Aura"));
    CHECK(build_cohort(neg, migraine_taxonomy(), 3).patients[0].chronic);
}

TEST_CASE("window soundness holds on a generated cohort") {
    SynthConfig sc = default_synth_config();
    sc.n_patients = 60;
    sc.visits_min = 3;
    sc.visits_max = 8;
    sc.seed = 11;
    const auto synth = generate(sc);
    const Cohort cohort = build_cohort(synth.events, sc.taxonomy(), 3);

    // Re-scan: every attached item must come from an event within the window.
    for (const auto& p : cohort.patients) {
        for (const auto& v : p.visits) {
            for (const auto& med : v.medications) {
                bool found = false;
                for (const auto& e : synth.events)
                    if (e.patient_id == p.patient_id && e.medication == med &&
                        std::labs(e.visit_date - v.visit_date) <= 3)
                        found = true;
                CHECK(found);
            }
        }
    }
}

TEST_CASE("build_cohort is deterministic") {
    const auto events = example_patient_events();
    const Cohort a = build_cohort(events, migraine_taxonomy(), 3);
    const Cohort b = build_cohort(events, migraine_taxonomy(), 3);
    CHECK(a.patients == b.patients);
}

TEST_CASE("empty anchor set is a configuration error") {
    DiagnosisTaxonomy t;
    t.comorbidity_terms = {"Flu"};
    CHECK_THROWS_AS(build_cohort(example_patient_events(), t, 3), ConfigError);
}

TEST_CASE("cohort summary") {
    SynthConfig sc = default_synth_config();
    sc.n_patients = 2500;
    sc.visits_min = 2;
    sc.visits_max = 4;
    sc.seed = 5;
    const auto synth = generate(sc);
    const Cohort cohort = build_cohort(synth.events, sc.taxonomy(), 3);
    const json s = cohort_summary(cohort);

    // Generator parameter is the oracle: 19% positives within +-2% absolute.
    CHECK(s.at("label_prevalence").get<double>() ==
          Catch::Approx(sc.positive_rate).margin(0.02));

    double sex_sum = 0;
    for (const auto& [_, v] : s.at("sex").items()) sex_sum += v.get<double>();
    CHECK(sex_sum == Catch::Approx(1.0).margin(1e-9));

    // Single-patient cohort: prevalence is 0 or 1.
    Cohort single;
    single.taxonomy = cohort.taxonomy;
    single.patients = {cohort.patients[0]};
    const double prev = cohort_summary(single).at("label_prevalence").get<double>();
    CHECK((prev == 0.0 || prev == 1.0));

    Cohort empty;
    empty.taxonomy = cohort.taxonomy;
    CHECK_THROWS_AS(cohort_summary(empty), ValidationError);
}

TEST_CASE("cohort persists one json object per patient per line") {
    const Cohort cohort = build_cohort(example_patient_events(), migraine_taxonomy(), 3);
    const auto dir = std::filesystem::temp_directory_path() / "paregta_cohort_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "cohort.jsonl";
    write_cohort(path, cohort);

    std::ifstream in(path);
    std::string line;
    size_t lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        CHECK_NOTHROW(json::parse(line));
    }
    CHECK(lines == cohort.patients.size());

    const Cohort back = read_cohort(path);
    CHECK(back.patients == cohort.patients);
    CHECK(back.window_radius_days == cohort.window_radius_days);
    CHECK(back.taxonomy.anchor_terms == cohort.taxonomy.anchor_terms);
}
