#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "paregta/downstream.hpp"

using namespace paregta;

namespace {

Cohort labeled_cohort(size_t n, double positive_rate, std::uint64_t seed) {
    Cohort cohort;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    for (size_t i = 0; i < n; ++i) {
        PatientRecord p;
        p.patient_id = "P" + std::to_string(i);
        p.sex = u(rng) < 0.8 ? "Female" : "Male";
        p.race = "White";
        p.age = 40;
        p.chronic = u(rng) < positive_rate;
        VisitRow v;
        v.visit_date = Date(2020, 1, 1);
        p.visits = {v};
        cohort.patients.push_back(std::move(p));
    }
    return cohort;
}

MatrixXd random_features(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0, 1);
    MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace

TEST_CASE("stratified split counts within one patient per class") {
    Cohort cohort = labeled_cohort(1000, 0.0, 1);
    // Exactly 190 positives for a clean count check.
    for (size_t i = 0; i < 190; ++i) cohort.patients[i].chronic = true;
    SplitSpec spec;
    spec.seed = 7;
    const Split s = split_cohort(cohort, spec);

    CHECK(s.train.size() + s.test.size() + s.attribution.size() == 1000);
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.test.begin(), s.test.end());
    all.insert(s.attribution.begin(), s.attribution.end());
    CHECK(all.size() == 1000);  // disjoint and exhaustive

    auto positives_in = [&](const std::vector<std::string>& ids) {
        size_t n = 0;
        for (const auto& id : ids)
            if (std::stoul(id.substr(1)) < 190) ++n;
        return n;
    };
    // 19% of the 200-patient test split, within one patient: {37, 38, 39}.
    const size_t test_pos = positives_in(s.test);
    CHECK(test_pos >= 37);
    CHECK(test_pos <= 39);
    CHECK(s.test.size() == 200);
    const size_t attr_pos = positives_in(s.attribution);
    CHECK(attr_pos >= 18);
    CHECK(attr_pos <= 20);
}

TEST_CASE("same seed yields the same split, different seed differs") {
    const Cohort cohort = labeled_cohort(300, 0.25, 2);
    SplitSpec spec;
    spec.seed = 11;
    const Split a = split_cohort(cohort, spec);
    const Split b = split_cohort(cohort, spec);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.attribution == b.attribution);
    spec.seed = 12;
    CHECK(split_cohort(cohort, spec).train != a.train);
}

TEST_CASE("all-train fractions and error paths") {
    const Cohort cohort = labeled_cohort(50, 0.3, 3);
    SplitSpec all_train;
    all_train.train = 1.0;
    all_train.test = 0.0;
    all_train.attribution = 0.0;
    const Split s = split_cohort(cohort, all_train);
    CHECK(s.train.size() == 50);
    CHECK(s.test.empty());

    SplitSpec bad;
    bad.train = 0.5;
    bad.test = 0.1;
    bad.attribution = 0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    Cohort tiny = labeled_cohort(5, 0.0, 4);
    tiny.patients[0].chronic = true;
    tiny.patients[1].chronic = true;
    SplitSpec spec;
    CHECK_THROWS_AS(split_cohort(tiny, spec), ValidationError);  // class with 2 members
}

TEST_CASE("smote balances the minority class") {
    const MatrixXd x = random_features(120, 4, 5);
    std::vector<int> y(120, 0);
    for (int i = 0; i < 20; ++i) y[i] = 1;
    const auto r = smote(x, y, 5, 9);
    size_t pos = 0, neg = 0;
    for (int v : r.labels) (v ? pos : neg)++;
    CHECK(pos == 100);
    CHECK(neg == 100);
    CHECK(r.features.rows() == 200);
    CHECK(r.provenance.size() == 80);
    // Synthetic samples interpolate same-class points.
    for (const auto& [base, nn] : r.provenance) {
        CHECK(y[static_cast<size_t>(base)] == 1);
        CHECK(y[static_cast<size_t>(nn)] == 1);
    }
}

TEST_CASE("already balanced input is returned unchanged") {
    const MatrixXd x = random_features(40, 3, 6);
    std::vector<int> y(40, 0);
    for (int i = 0; i < 20; ++i) y[i] = 1;
    const auto r = smote(x, y, 5, 1);
    CHECK(r.features == x);
    CHECK(r.labels == y);
    CHECK(r.provenance.empty());
}

TEST_CASE("minority of two: synthetics lie on the connecting segment") {
    MatrixXd x(8, 2);
    x << 0, 0, 4, 2, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6;
    std::vector<int> y = {1, 1, 0, 0, 0, 0, 0, 0};
    const auto r = smote(x, y, 1, 3);
    const Eigen::Vector2d a(0, 0), b(4, 2);
    for (Eigen::Index i = 8; i < r.features.rows(); ++i) {
        const Eigen::Vector2d p = r.features.row(i).transpose();
        // p = a + u (b - a): collinear and between the endpoints.
        const double cross = (b - a).x() * (p - a).y() - (b - a).y() * (p - a).x();
        CHECK(std::abs(cross) < 1e-12);
        const double u = (p - a).dot(b - a) / (b - a).squaredNorm();
        CHECK(u >= 0.0);
        CHECK(u <= 1.0);
    }
    std::vector<int> lonely = {1, 0, 0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(smote(x, lonely, 5, 3), ValidationError);
}

TEST_CASE("logistic probe separates separable data") {
    MatrixXd x(40, 2);
    std::vector<int> y(40);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> dist(0, 0.3);
    for (int i = 0; i < 40; ++i) {
        const int label = i % 2;
        x(i, 0) = (label ? 2.0 : -2.0) + dist(rng);
        x(i, 1) = dist(rng);
        y[static_cast<size_t>(i)] = label;
    }
    const ProbeModel m = fit_logistic(x, y, 1e-3);
    std::vector<double> scores;
    for (int i = 0; i < 40; ++i) scores.push_back(m.logit(x.row(i).transpose()));
    CHECK(auc_score(scores, y) == 1.0);
    CHECK(evaluate(m, x, y).acc == 100.0);
}

TEST_CASE("ridge shrinkage is monotone along the grid") {
    const MatrixXd x = random_features(100, 5, 10);
    std::vector<int> y(100);
    for (int i = 0; i < 100; ++i)
        y[static_cast<size_t>(i)] = x(i, 0) + 0.5 * x(i, 2) > 0 ? 1 : 0;
    double prev_norm = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-4, 1e-2, 1.0, 100.0, 1e6}) {
        const ProbeModel m = fit_logistic(x, y, lambda);
        const double norm = m.coefficients.norm();
        CHECK(norm < prev_norm);
        prev_norm = norm;
    }
    CHECK(prev_norm < 1e-3);  // lambda -> huge drives |c| -> 0
}

TEST_CASE("probe converges to a small gradient") {
    const MatrixXd x = random_features(200, 4, 11);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) y[static_cast<size_t>(i)] = x(i, 1) > 0.3 ? 1 : 0;
    const double lambda = 0.01;
    const ProbeModel m = fit_logistic(x, y, lambda);

    // Recompute the objective gradient at the solution.
    VectorXd eta = x * m.coefficients;
    eta.array() += m.intercept;
    VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    VectorXd yv(200);
    for (int i = 0; i < 200; ++i) yv(i) = y[static_cast<size_t>(i)];
    VectorXd grad = x.transpose() * (mu - yv) / 200.0 + lambda * m.coefficients;
    const double gb = (mu - yv).sum() / 200.0;
    CHECK(std::sqrt(grad.squaredNorm() + gb * gb) < 1e-8);
}

TEST_CASE("auc matches the enumerated pair count") {
    // {(0.9,+),(0.8,-),(0.7,+),(0.1,-)}: 3 of 4 positive-negative pairs ranked
    // correctly.
    CHECK(auc_score({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0}) == Catch::Approx(0.75));
    CHECK(auc_score({1.0, 0.9, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(auc_score({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
    CHECK_THROWS_AS(auc_score({0.1, 0.2}, {1, 1}), ValidationError);
}

TEST_CASE("auc is invariant under strictly monotone score transforms") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> dist(0, 1);
    std::vector<double> scores(60);
    std::vector<int> y(60);
    for (int i = 0; i < 60; ++i) {
        scores[static_cast<size_t>(i)] = dist(rng);
        y[static_cast<size_t>(i)] = rng() % 2;
    }
    const double base = auc_score(scores, y);
    std::vector<double> warped(60);
    for (int i = 0; i < 60; ++i)
        warped[static_cast<size_t>(i)] = std::exp(3.0 * scores[static_cast<size_t>(i)]) + 5;
    CHECK(auc_score(warped, y) == Catch::Approx(base).margin(1e-15));
}

TEST_CASE("cv probe on permuted labels stays near chance") {
    const Eigen::Index n = 2000;
    const MatrixXd x = random_features(n, 8, 13);
    std::vector<int> y(static_cast<size_t>(n));
    std::mt19937_64 rng(14);
    for (auto& v : y) v = rng() % 5 == 0 ? 1 : 0;  // ~20% positive, independent of x
    const auto fit = fit_probe(x, y, {1e-3, 1e-2}, 5, 99);
    double mean = 0;
    for (double a : fit.cv.fold_aucs) mean += a;
    mean /= static_cast<double>(fit.cv.fold_aucs.size());
    CHECK(mean > 0.45);
    CHECK(mean < 0.55);
}

TEST_CASE("smote leakage audit: no validation row feeds synthesis") {
    const Eigen::Index n = 300;
    const MatrixXd x = random_features(n, 4, 15);
    std::vector<int> y(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        y[static_cast<size_t>(i)] = x(i, 0) > 0.8 ? 1 : 0;
    const auto fit = fit_probe(x, y, {1e-3}, 5, 21);
    REQUIRE(fit.cv.audits.size() == 5);
    size_t synth_total = 0;
    for (const auto& audit : fit.cv.audits) {
        const std::set<Eigen::Index> val(audit.validation_rows.begin(),
                                         audit.validation_rows.end());
        for (const auto& [base, nn] : audit.smote_sources) {
            CHECK_FALSE(val.count(base));
            CHECK_FALSE(val.count(nn));
        }
        synth_total += audit.smote_sources.size();
    }
    CHECK(synth_total > 0);
}

TEST_CASE("fit_probe picks a lambda from the grid and is deterministic") {
    const MatrixXd x = random_features(200, 3, 16);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) y[static_cast<size_t>(i)] = x(i, 0) > 0 ? 1 : 0;
    const auto a = fit_probe(x, y, {1e-4, 1e-2, 1.0}, 4, 31);
    const auto b = fit_probe(x, y, {1e-4, 1e-2, 1.0}, 4, 31);
    CHECK(a.cv.best_lambda == b.cv.best_lambda);
    CHECK(a.model.coefficients == b.model.coefficients);
    CHECK(a.cv.lambda_mean_auc.size() == 3);
}

TEST_CASE("geometry trivial cases") {
    // All points identical: every pairwise distance is zero.
    MatrixXd same(5, 3);
    for (int i = 0; i < 5; ++i) same.row(i) << 1, 2, 2;
    CHECK(uniformity_metric(same) == Catch::Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(geometry(same), NumericError);  // rank-0 covariance

    // Exactly rank-1 data: top1 = 1, flatness = 0.
    MatrixXd rank1(6, 4);
    for (int i = 0; i < 6; ++i) rank1.row(i) = (i - 2.5) * Eigen::RowVector4d(1, 2, 0, -1);
    const auto rep = geometry(rank1);
    CHECK(rep.top1 == 1.0);
    CHECK(rep.spectral_flatness == 0.0);

    MatrixXd two(1, 3);
    CHECK_THROWS_AS(uniformity_metric(two), ValidationError);
    MatrixXd zero_row(3, 3);
    zero_row.setZero();
    zero_row(0, 0) = 1;
    zero_row(1, 1) = 1;
    CHECK_THROWS_AS(uniformity_metric(zero_row), NumericError);
}

TEST_CASE("isotropic gaussian geometry") {
    const MatrixXd x = random_features(5000, 32, 17);
    const auto rep = geometry(x);
    CHECK(rep.top1 > (1.0 / 32) * 0.7);
    CHECK(rep.top1 < (1.0 / 32) * 1.3);
    CHECK(rep.spectral_flatness >= 0.9);

    // Antipodal-ish spread is more uniform (more negative) than a tight blob.
    MatrixXd blob = 0.01 * random_features(200, 8, 18);
    blob.col(0).array() += 10.0;
    const MatrixXd spread = random_features(200, 8, 19);
    CHECK(uniformity_metric(spread) < uniformity_metric(blob));
}
