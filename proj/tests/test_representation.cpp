#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "paregta/representation.hpp"

using namespace paregta;

namespace {

MatrixXd random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0, 1);
    MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = dist(rng);
    return m;
}

// Centered data whose sample covariance is exactly the identity (up to fp):
// replace the singular values of a centered random matrix.
MatrixXd isotropic_data(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    MatrixXd x = random_matrix(n, d, seed);
    x.rowwise() -= x.colwise().mean();
    Eigen::JacobiSVD<MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return std::sqrt(static_cast<double>(n - 1)) * svd.matrixU() *
           svd.matrixV().transpose();
}

PatientRecord tiny_patient(const std::string& id, bool chronic, std::optional<int> age,
                           const std::string& sex, const std::string& race) {
    PatientRecord p;
    p.patient_id = id;
    p.age = age;
    p.sex = sex;
    p.race = race;
    p.chronic = chronic;
    VisitRow v;
    v.visit_date = Date(2020, 1, 1);
    v.anchor_diagnoses = {"Unspecified migraine"};
    p.visits = {v};
    return p;
}

}  // namespace

TEST_CASE("retained component count on fixed spectra") {
    VectorXd spectrum(5);
    spectrum << 5, 3, 1, 0.5, 0.5;
    // Cumulative ratios: .5, .8, .9, .95, 1.0 -> first k reaching .95 is 4.
    CHECK(components_for_target(spectrum, 0.95) == 4);
    CHECK(components_for_target(spectrum, 0.90) == 3);
    CHECK(components_for_target(spectrum, 1.00) == 5);

    // Exact isotropic 10-dim spectrum: every component holds 10%.
    CHECK(components_for_target(VectorXd::Ones(10), 0.95) == 10);
    CHECK(components_for_target(VectorXd::Ones(10), 0.50) == 5);

    VectorXd one_direction(3);
    one_direction << 7, 0, 0;
    CHECK(components_for_target(one_direction, 0.95) == 1);

    CHECK_THROWS_AS(components_for_target(VectorXd::Zero(3), 0.95), NumericError);
    CHECK_THROWS_AS(components_for_target(spectrum, 0.0), ConfigError);
    CHECK_THROWS_AS(components_for_target(spectrum, 1.5), ConfigError);
}

TEST_CASE("variance in one direction retains one component") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist(0, 1);
    VectorXd direction(4);
    direction << 1, 2, -1, 0.5;
    MatrixXd x(40, 4);
    for (int i = 0; i < 40; ++i) x.row(i) = dist(rng) * direction.transpose();
    const auto t = fit_block(x, 0.95);
    CHECK(t.retained == 1);
    CHECK(t.evr(0) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("exact isotropic data retains every component at 0.95") {
    const auto t = fit_block(isotropic_data(64, 10, 5), 0.95);
    CHECK(t.retained == 10);
    for (int i = 0; i < 10; ++i) CHECK(t.evr(i) == Catch::Approx(0.1).margin(1e-9));
}

TEST_CASE("pca basis is orthonormal with the sign convention") {
    const auto t = fit_block(random_matrix(60, 8, 7), 0.95);
    const MatrixXd gram = t.basis * t.basis.transpose();
    CHECK((gram - MatrixXd::Identity(t.retained, t.retained)).cwiseAbs().maxCoeff() < 1e-8);
    for (int k = 0; k < t.retained; ++k) {
        Eigen::Index imax;
        t.basis.row(k).cwiseAbs().maxCoeff(&imax);
        CHECK(t.basis(k, imax) > 0);
    }
}

TEST_CASE("pca minimality: cumulative ratio brackets the target") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        MatrixXd x = random_matrix(50, 6, seed);
        x.col(0) *= 4.0;  // stretch one direction
        x.col(1) *= 2.0;
        const auto t = fit_block(x, 0.9);
        double cum = 0;
        for (int j = 0; j < t.retained - 1; ++j) cum += t.evr(j);
        CHECK(cum < 0.9);
        CHECK(cum + t.evr(t.retained - 1) >= 0.9 - 1e-12);
    }
}

TEST_CASE("apply_transform semantics") {
    MatrixXd x = random_matrix(80, 6, 17);
    x.col(2) *= 3.0;
    x.array().col(4) += 10.0;
    const auto t = fit_block(x, 0.95);

    // Training projections have per-component mean ~ 0 and variance = eigenvalue.
    const MatrixXd projected = t.apply_rows(x);
    for (int j = 0; j < t.retained; ++j) {
        CHECK(projected.col(j).mean() == Catch::Approx(0.0).margin(1e-9));
    }

    // The zero vector maps to the projected negative standardized mean.
    const VectorXd z = t.apply(VectorXd::Zero(6));
    const VectorXd expected = t.basis * (-t.mean.array() / t.sd.array()).matrix();
    CHECK((z - expected).norm() < 1e-12);

    VectorXd wrong(5);
    wrong.setZero();
    CHECK_THROWS_AS(t.apply(wrong), ValidationError);
}

TEST_CASE("reconstruction error equals the discarded eigenvalue mass") {
    MatrixXd x = random_matrix(100, 8, 23);
    for (int j = 0; j < 8; ++j) x.col(j) *= (j + 1);
    const auto t = fit_block(x, 0.7);
    REQUIRE(t.retained < 8);

    MatrixXd std_x = (x.rowwise() - t.mean.transpose()).array().rowwise() /
                     t.sd.transpose().array();
    const MatrixXd residual = std_x - std_x * t.basis.transpose() * t.basis;
    const double observed = residual.squaredNorm() / static_cast<double>(x.rows() - 1);

    // Discarded mass in eigenvalue units: evr is normalized by total var.
    const double total = static_cast<double>(
        (std_x.transpose() * std_x / static_cast<double>(x.rows() - 1)).trace());
    double discarded = 0;
    for (Eigen::Index j = t.retained; j < t.evr.size(); ++j) discarded += t.evr(j) * total;
    CHECK(observed == Catch::Approx(discarded).epsilon(1e-6));
}

TEST_CASE("zero-variance columns standardize with unit sd") {
    MatrixXd x = random_matrix(30, 4, 29);
    x.col(1).setConstant(5.0);
    const auto t = fit_block(x, 0.95);
    CHECK(t.sd(1) == 1.0);
    CHECK(t.mean(1) == Catch::Approx(5.0));
    CHECK_THROWS_AS(fit_block(MatrixXd::Ones(10, 3), 0.95), NumericError);
    CHECK_THROWS_AS(fit_block(random_matrix(1, 4, 31), 0.95), ValidationError);
}

TEST_CASE("demographics block encoding") {
    auto p1 = tiny_patient("A", true, 40, "Female", "White");
    auto p2 = tiny_patient("B", false, 60, "Male", "Asian");
    auto p3 = tiny_patient("C", false, std::nullopt, "Female", "Black");
    const DemographicsSpec d = fit_demographics({&p1, &p2, &p3}, true);

    CHECK(d.width() == 1 + 2 + 3);
    CHECK(d.age_mean == Catch::Approx(50.0));

    const VectorXd v1 = d.encode(p1);
    CHECK(v1.size() == d.width());
    CHECK(v1.segment(1, 2).sum() == 1.0);  // one-hot sex
    CHECK(v1.tail(3).sum() == 1.0);        // one-hot race

    // Null age maps to the standardized mean (zero); patient C stayed out
    // of the age statistics.
    CHECK(d.encode(p3)(0) == 0.0);

    // Unseen categories at test time encode as all-zero.
    auto stranger = tiny_patient("D", false, 33, "Other", "Unseen");
    CHECK(d.encode(stranger).segment(1, 2).sum() == 0.0);
    CHECK(d.encode(stranger).tail(3).sum() == 0.0);

    const DemographicsSpec off = fit_demographics({&p1, &p2}, false);
    CHECK(off.width() == 0);
}

TEST_CASE("assemble concatenates blocks with a consistent layout") {
    std::vector<PatientRecord> patients = {
        tiny_patient("A", true, 40, "Female", "White"),
        tiny_patient("B", false, 60, "Male", "White"),
        tiny_patient("C", false, 50, "Female", "White"),
        tiny_patient("D", true, 30, "Male", "White"),
    };
    Cohort cohort;
    cohort.patients = patients;

    PooledVectors meds, comorb;
    std::mt19937_64 rng(37);
    std::normal_distribution<double> dist(0, 1);
    for (const auto& p : patients) {
        VectorXd m(6), c(5);
        for (int i = 0; i < 6; ++i) m(i) = dist(rng);
        for (int i = 0; i < 5; ++i) c(i) = dist(rng);
        meds[p.patient_id] = m;
        comorb[p.patient_id] = c;
    }
    const auto t = fit_transform(cohort, {"A", "B", "C", "D"}, meds, comorb, 0.95, true);
    const auto reps = assemble(cohort, meds, comorb, t);
    REQUIRE(reps.size() == 4);

    const auto layout = t.layout();
    CHECK(layout.total_width() == reps[0].features.size());
    CHECK(std::get<0>(layout.blocks[0]) == "meds_pca");
    CHECK(std::get<2>(layout.blocks[0]) == t.meds.retained);
    CHECK(std::get<1>(layout.blocks[2]) == t.meds.retained + t.comorb.retained);

    PooledVectors missing = meds;
    missing.erase("B");
    CHECK_THROWS_AS(assemble(cohort, missing, comorb, t), ValidationError);
}

TEST_CASE("no test-set leakage: transform identical with or without extra patients") {
    std::vector<PatientRecord> base = {
        tiny_patient("A", true, 40, "Female", "White"),
        tiny_patient("B", false, 60, "Male", "White"),
        tiny_patient("C", false, 50, "Female", "Black"),
        tiny_patient("D", true, 30, "Male", "White"),
    };
    Cohort small, large;
    small.patients = base;
    large.patients = base;
    large.patients.push_back(tiny_patient("E", false, 70, "Other", "Other"));
    large.patients.push_back(tiny_patient("F", true, 20, "Female", "Asian"));

    PooledVectors meds, comorb;
    std::mt19937_64 rng(41);
    std::normal_distribution<double> dist(0, 1);
    for (const auto& id : {"A", "B", "C", "D", "E", "F"}) {
        VectorXd m(5), c(4);
        for (int i = 0; i < 5; ++i) m(i) = dist(rng);
        for (int i = 0; i < 4; ++i) c(i) = dist(rng);
        meds[id] = m;
        comorb[id] = c;
    }

    const std::vector<std::string> train = {"A", "B", "C", "D"};
    const auto dir = std::filesystem::temp_directory_path() / "paregta_repr_test";
    std::filesystem::create_directories(dir);
    save_transform(dir / "t_small.json", fit_transform(small, train, meds, comorb, 0.95, true));
    save_transform(dir / "t_large.json", fit_transform(large, train, meds, comorb, 0.95, true));
    CHECK(file_fingerprint(dir / "t_small.json") == file_fingerprint(dir / "t_large.json"));
    CHECK(file_fingerprint(dir / "t_small.json.meds_basis.prgt") ==
          file_fingerprint(dir / "t_large.json.meds_basis.prgt"));

    const auto back = load_transform(dir / "t_small.json");
    CHECK(back.meds.retained ==
          fit_transform(small, train, meds, comorb, 0.95, true).meds.retained);
}

TEST_CASE("baselines: one-hot presence and per-visit counts") {
    // Three-visit patient: Depression in every visit, Insomnia in two.
    PatientRecord p;
    p.patient_id = "1";
    p.age = 33;
    p.sex = "Male";
    p.race = "Asian";
    for (int i = 0; i < 3; ++i) {
        VisitRow v;
        v.visit_date = Date(2021, 7, 1).plus_days(60L * i);
        v.anchor_diagnoses = {"Unspecified migraine"};
        v.comorbidities = {"Depression"};
        if (i > 0) v.comorbidities.push_back("Insomnia");
        if (i > 0) v.medications.push_back("lasmiditan 100 MG Oral Tablet");
        p.visits.push_back(v);
    }
    PatientRecord empty_meds = tiny_patient("2", false, 50, "Male", "Asian");
    empty_meds.visits[0].comorbidities = {"Flu"};

    Cohort cohort;
    cohort.patients = {p, empty_meds};

    BaselineSpec spec = fit_baseline_spec(cohort, {"1", "2"}, {}, 64, false);
    // Raw-string med vocabulary; comorbidity vocabulary from the cohort.
    spec.comorb_vocab = {"Depression", "Insomnia", "Flu"};  // fixed order for the check

    const auto onehot = build_baseline(cohort, spec, BaselineKind::OneHot);
    const auto counts = build_baseline(cohort, spec, BaselineKind::CountBoC);
    const Eigen::Index med_w = static_cast<Eigen::Index>(spec.med_names.size());

    CHECK(onehot[0].features.segment(med_w, 3).transpose() ==
          Eigen::RowVector3d(1, 1, 0));
    CHECK(counts[0].features(med_w) == 3.0);      // Depression in all three visits
    CHECK(counts[0].features(med_w + 1) == 2.0);  // Insomnia in two

    // Patient 2 has no medications at all: zero medication block.
    CHECK(counts[1].features.head(med_w).sum() == 0.0);
}

TEST_CASE("baseline medication classes group variants by substring") {
    PatientRecord p = tiny_patient("1", true, 40, "Female", "White");
    p.visits[0].medications = {"sumatriptan 50 MG Oral Tablet", "Imitrex 25 MG"};
    VisitRow v2 = p.visits[0];
    v2.visit_date = Date(2020, 3, 1);
    v2.medications = {"sumatriptan 100 MG Oral Tablet"};
    p.visits.push_back(v2);
    Cohort cohort;
    cohort.patients = {p};

    FactorSpec triptan;
    triptan.name = "triptan";
    triptan.kind = FactorKind::TermSet;
    triptan.terms = {"sumatriptan", "Imitrex"};
    triptan.scope = ConceptScope::Medication;

    const auto spec = fit_baseline_spec(cohort, {"1"}, {triptan}, 64, false);
    REQUIRE(spec.med_names == std::vector<std::string>{"triptan"});
    const auto counts = build_baseline(cohort, spec, BaselineKind::CountBoC);
    CHECK(counts[0].features(0) == 3.0);  // three matching items across visits
    const auto onehot = build_baseline(cohort, spec, BaselineKind::OneHot);
    CHECK(onehot[0].features(0) == 1.0);
}
