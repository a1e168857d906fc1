#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "paregta/cohort.hpp"

namespace paregta {

// ---------------------------------------------------------------------------
// Stratified three-way split

struct SplitSpec {
    double train = 0.7;
    double test = 0.2;
    double attribution = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (train < 0 || test < 0 || attribution < 0)
            throw ConfigError("split fractions must be nonnegative");
        if (std::abs(train + test + attribution - 1.0) > 1e-9)
            throw ConfigError("split fractions must sum to 1");
    }

    static SplitSpec from_json(const json& j) {
        strict_keys(j, {"train", "test", "attribution", "seed"}, "split");
        SplitSpec s;
        s.train = j.value("train", s.train);
        s.test = j.value("test", s.test);
        s.attribution = j.value("attribution", s.attribution);
        s.seed = j.value("seed", s.seed);
        s.validate();
        return s;
    }

    json to_json() const {
        return json{
            {"train", train}, {"test", test}, {"attribution", attribution}, {"seed", seed}};
    }
};

struct Split {
    std::vector<std::string> train;
    std::vector<std::string> test;
    std::vector<std::string> attribution;
};

/// Label-stratified, seed-deterministic split. Within each class the three
/// target counts come from largest-remainder rounding, so every split
/// preserves the label ratio within one patient per class.
inline Split split_cohort(const Cohort& cohort, const SplitSpec& spec) {
    spec.validate();
    std::vector<std::string> pos, neg;
    for (const auto& p : cohort.patients)
        (p.chronic ? pos : neg).push_back(p.patient_id);
    if (pos.empty() || neg.empty())
        throw ValidationError("split: cohort must contain both classes");
    if (pos.size() < 3 || neg.size() < 3)
        throw ValidationError("split: each class needs at least 3 patients");

    Split out;
    auto assign = [&](std::vector<std::string>& ids, std::uint64_t salt) {
        std::mt19937_64 rng(stage_seed(spec.seed, "split") + salt);
        std::shuffle(ids.begin(), ids.end(), rng);
        const double n = static_cast<double>(ids.size());
        const double want[3] = {spec.train * n, spec.test * n, spec.attribution * n};
        size_t counts[3];
        double frac[3];
        size_t used = 0;
        for (int s = 0; s < 3; ++s) {
            counts[s] = static_cast<size_t>(std::floor(want[s] + 1e-9));
            frac[s] = want[s] - static_cast<double>(counts[s]);
            used += counts[s];
        }
        // Distribute leftovers by largest fractional part; ties favor train.
        while (used < ids.size()) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[s] > frac[best] + 1e-12) best = s;
            ++counts[best];
            frac[best] = -1;
            ++used;
        }
        size_t i = 0;
        for (size_t k = 0; k < counts[0]; ++k) out.train.push_back(ids[i++]);
        for (size_t k = 0; k < counts[1]; ++k) out.test.push_back(ids[i++]);
        for (size_t k = 0; k < counts[2]; ++k) out.attribution.push_back(ids[i++]);
    };
    assign(pos, 1);
    assign(neg, 2);
    return out;
}

// ---------------------------------------------------------------------------
// SMOTE

struct SmoteResult {
    MatrixXd features;
    std::vector<int> labels;
    // (base_row, neighbor_row) original indices for each synthetic sample
    std::vector<std::pair<Eigen::Index, Eigen::Index>> provenance;
};

/// Raises the minority class to the majority count. Each synthetic point is
/// x + u * (x_nn - x) with u ~ U(0,1) and x_nn among the k same-class
/// nearest neighbors of x.
inline SmoteResult smote(const MatrixXd& features, const std::vector<int>& labels,
                         int k_neighbors, std::uint64_t seed) {
    if (features.rows() != static_cast<Eigen::Index>(labels.size()))
        throw ValidationError("smote: features/labels length mismatch");
    size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    const size_t n_neg = labels.size() - n_pos;

    SmoteResult out;
    out.features = features;
    out.labels = labels;
    if (n_pos == n_neg) return out;

    const int minority = n_pos < n_neg ? 1 : 0;
    std::vector<Eigen::Index> min_rows;
    for (size_t i = 0; i < labels.size(); ++i)
        if ((labels[i] != 0) == (minority == 1))
            min_rows.push_back(static_cast<Eigen::Index>(i));
    if (min_rows.size() < 2)
        throw ValidationError("smote: minority class needs at least 2 members");

    const size_t n_min = min_rows.size();
    const size_t n_maj = labels.size() - n_min;
    const size_t n_new = n_maj - n_min;
    const size_t k = std::min<size_t>(std::max(1, k_neighbors), n_min - 1);

    // k nearest same-class neighbors per minority point (brute force).
    std::vector<std::vector<Eigen::Index>> neighbors(n_min);
    for (size_t i = 0; i < n_min; ++i) {
        std::vector<std::pair<double, Eigen::Index>> dists;
        dists.reserve(n_min - 1);
        for (size_t j = 0; j < n_min; ++j) {
            if (i == j) continue;
            const double d = (features.row(min_rows[i]) - features.row(min_rows[j])).squaredNorm();
            dists.emplace_back(d, min_rows[j]);
        }
        std::sort(dists.begin(), dists.end());
        for (size_t j = 0; j < k; ++j) neighbors[i].push_back(dists[j].second);
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick_base(0, n_min - 1);
    std::uniform_int_distribution<size_t> pick_nn(0, k - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    out.features.conservativeResize(features.rows() + static_cast<Eigen::Index>(n_new),
                                    features.cols());
    for (size_t s = 0; s < n_new; ++s) {
        const size_t bi = pick_base(rng);
        const Eigen::Index base = min_rows[bi];
        const Eigen::Index nn = neighbors[bi][pick_nn(rng)];
        const double gap = u(rng);
        out.features.row(features.rows() + static_cast<Eigen::Index>(s)) =
            features.row(base) + gap * (features.row(nn) - features.row(base));
        out.labels.push_back(minority);
        out.provenance.emplace_back(base, nn);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic-regression probe

struct ProbeModel {
    VectorXd coefficients;
    double intercept = 0;
    double l2_strength = 0;

    double logit(const VectorXd& x) const {
        if (x.size() != coefficients.size())
            throw ValidationError("probe: feature width mismatch");
        return coefficients.dot(x) + intercept;
    }

    double probability(const VectorXd& x) const { return 1.0 / (1.0 + std::exp(-logit(x))); }

    json to_json() const {
        json c = json::array();
        for (Eigen::Index i = 0; i < coefficients.size(); ++i) c.push_back(coefficients(i));
        return json{{"coefficients", c}, {"intercept", intercept}, {"l2_strength", l2_strength}};
    }

    static ProbeModel from_json(const json& j) {
        ProbeModel m;
        const auto& c = j.at("coefficients");
        m.coefficients.resize(static_cast<Eigen::Index>(c.size()));
        for (Eigen::Index i = 0; i < m.coefficients.size(); ++i)
            m.coefficients(i) = c.at(i).get<double>();
        m.intercept = j.at("intercept").get<double>();
        m.l2_strength = j.at("l2_strength").get<double>();
        return m;
    }
};

/// Ridge-penalized logistic regression by damped Newton (IRLS), run to
/// gradient L2 norm below 1e-8. The intercept is unpenalized. Objective:
/// mean cross-entropy + (lambda/2) |c|^2.
inline ProbeModel fit_logistic(const MatrixXd& x, const std::vector<int>& y, double lambda,
                               int max_iter = 200) {
    const Eigen::Index n = x.rows(), d = x.cols();
    if (n != static_cast<Eigen::Index>(y.size()))
        throw ValidationError("fit_logistic: features/labels length mismatch");
    if (!x.allFinite()) throw NumericError("fit_logistic: non-finite features");
    if (lambda < 0) throw ConfigError("fit_logistic: lambda must be >= 0");

    VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv(i) = y[static_cast<size_t>(i)] ? 1.0 : 0.0;

    VectorXd beta = VectorXd::Zero(d + 1);  // [c; b]
    auto objective = [&](const VectorXd& b) {
        VectorXd eta = x * b.head(d);
        eta.array() += b(d);
        // log(1+exp(eta)) - y*eta, numerically stable
        double obj = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = eta(i);
            obj += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) -
                   yv(i) * e;
        }
        return obj / static_cast<double>(n) + 0.5 * lambda * b.head(d).squaredNorm();
    };

    double prev_obj = objective(beta);
    for (int iter = 0; iter < max_iter; ++iter) {
        VectorXd eta = x * beta.head(d);
        eta.array() += beta(d);
        VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        VectorXd resid = (mu - yv) / static_cast<double>(n);

        VectorXd grad(d + 1);
        grad.head(d) = x.transpose() * resid + lambda * beta.head(d);
        grad(d) = resid.sum();
        if (grad.norm() < 1e-8) break;

        VectorXd w = (mu.array() * (1.0 - mu.array())).matrix() / static_cast<double>(n);
        // Guard against exactly-saturated weights on separable data.
        w = w.cwiseMax(1e-12);
        MatrixXd h(d + 1, d + 1);
        MatrixXd xw = x.array().colwise() * w.array();
        h.topLeftCorner(d, d) = x.transpose() * xw;
        h.topLeftCorner(d, d).diagonal().array() += lambda;
        h.topRightCorner(d, 1) = xw.colwise().sum().transpose();
        h.bottomLeftCorner(1, d) = xw.colwise().sum();
        h(d, d) = w.sum();
        h.diagonal().array() += 1e-12;

        VectorXd step = h.ldlt().solve(grad);
        double scale = 1.0;
        VectorXd cand;
        for (int ls = 0; ls < 40; ++ls) {
            cand = beta - scale * step;
            const double obj = objective(cand);
            if (obj <= prev_obj + 1e-15) {
                beta = cand;
                prev_obj = obj;
                break;
            }
            scale *= 0.5;
            if (ls == 39) beta = cand;  // accept the tiny step; near convergence
        }
    }

    ProbeModel m;
    m.coefficients = beta.head(d);
    m.intercept = beta(d);
    m.l2_strength = lambda;
    return m;
}

// ---------------------------------------------------------------------------
// Metrics

/// Rank-statistic AUC with average ranks for ties (constant scores -> 0.5).
inline double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ValidationError("auc: scores/labels length mismatch");
    size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    const size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw ValidationError("auc undefined: test set has a single class");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1) / 2.0) / (np * nn);
}

struct EvalMetrics {
    double acc = 0;  // percent, threshold 0.5 on the sigmoid
    double auc = 0;
};

inline EvalMetrics evaluate(const ProbeModel& model, const MatrixXd& x,
                            const std::vector<int>& y) {
    if (x.rows() != static_cast<Eigen::Index>(y.size()))
        throw ValidationError("evaluate: features/labels length mismatch");
    std::vector<double> scores(y.size());
    size_t correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double eta = model.logit(x.row(i).transpose());
        scores[static_cast<size_t>(i)] = eta;
        const int pred = eta > 0 ? 1 : 0;  // sigmoid(eta) > 0.5 iff eta > 0
        correct += (pred == (y[static_cast<size_t>(i)] ? 1 : 0));
    }
    EvalMetrics m;
    m.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(y.size());
    m.auc = auc_score(scores, y);
    return m;
}

// ---------------------------------------------------------------------------
// Cross-validated probe fitting with SMOTE inside the folds

struct FoldAudit {
    std::vector<Eigen::Index> validation_rows;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> smote_sources;  // original row ids
};

struct CvReport {
    double best_lambda = 0;
    std::vector<double> fold_aucs;             // for the chosen lambda
    std::map<double, double> lambda_mean_auc;  // grid results
    std::vector<FoldAudit> audits;             // chosen-lambda folds
};

struct ProbeFit {
    ProbeModel model;
    CvReport cv;
};

/// Stratified k-fold CV over the lambda grid, SMOTE applied inside each
/// fold's training partition only; the winner refits on the full
/// SMOTE-balanced training split.
inline ProbeFit fit_probe(const MatrixXd& x, const std::vector<int>& y,
                          const std::vector<double>& lambda_grid, int cv_folds,
                          std::uint64_t seed, int smote_k = 5) {
    if (lambda_grid.empty()) throw ConfigError("fit_probe: empty lambda grid");
    if (cv_folds < 2) throw ConfigError("fit_probe: cv_folds must be >= 2");
    if (!x.allFinite()) throw NumericError("fit_probe: non-finite features");

    // Stratified fold assignment: shuffle within class, round-robin.
    std::vector<Eigen::Index> pos, neg;
    for (size_t i = 0; i < y.size(); ++i)
        (y[i] ? pos : neg).push_back(static_cast<Eigen::Index>(i));
    if (pos.empty() || neg.empty())
        throw ValidationError("fit_probe: both classes required");
    std::mt19937_64 rng(stage_seed(seed, "cv-folds"));
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<int> fold_of(y.size());
    for (size_t i = 0; i < pos.size(); ++i) fold_of[pos[i]] = static_cast<int>(i % cv_folds);
    for (size_t i = 0; i < neg.size(); ++i) fold_of[neg[i]] = static_cast<int>(i % cv_folds);

    auto run_fold = [&](int fold, double lambda, FoldAudit* audit) {
        std::vector<Eigen::Index> tr, va;
        for (size_t i = 0; i < y.size(); ++i)
            (fold_of[i] == fold ? va : tr).push_back(static_cast<Eigen::Index>(i));
        MatrixXd xtr(tr.size(), x.cols());
        std::vector<int> ytr(tr.size());
        for (size_t i = 0; i < tr.size(); ++i) {
            xtr.row(static_cast<Eigen::Index>(i)) = x.row(tr[i]);
            ytr[i] = y[static_cast<size_t>(tr[i])];
        }
        const auto balanced =
            smote(xtr, ytr, smote_k, stage_seed(seed, "smote") + static_cast<unsigned>(fold));
        const ProbeModel m = fit_logistic(balanced.features, balanced.labels, lambda);
        std::vector<double> scores(va.size());
        std::vector<int> yva(va.size());
        for (size_t i = 0; i < va.size(); ++i) {
            scores[i] = m.logit(x.row(va[i]).transpose());
            yva[i] = y[static_cast<size_t>(va[i])];
        }
        if (audit) {
            audit->validation_rows = va;
            for (const auto& [b, nn] : balanced.provenance)
                audit->smote_sources.emplace_back(tr[static_cast<size_t>(b)],
                                                  tr[static_cast<size_t>(nn)]);
        }
        return auc_score(scores, yva);
    };

    ProbeFit fit;
    double best_auc = -1;
    for (double lambda : lambda_grid) {
        double sum = 0;
        for (int f = 0; f < cv_folds; ++f) sum += run_fold(f, lambda, nullptr);
        const double mean = sum / cv_folds;
        fit.cv.lambda_mean_auc[lambda] = mean;
        if (mean > best_auc + 1e-12) {
            best_auc = mean;
            fit.cv.best_lambda = lambda;
        }
    }
    fit.cv.fold_aucs.resize(cv_folds);
    fit.cv.audits.resize(cv_folds);
    for (int f = 0; f < cv_folds; ++f)
        fit.cv.fold_aucs[static_cast<size_t>(f)] =
            run_fold(f, fit.cv.best_lambda, &fit.cv.audits[static_cast<size_t>(f)]);

    const auto balanced = smote(x, y, smote_k, stage_seed(seed, "smote-final"));
    fit.model = fit_logistic(balanced.features, balanced.labels, fit.cv.best_lambda);
    return fit;
}

// ---------------------------------------------------------------------------
// Embedding-geometry diagnostics

struct GeometryReport {
    double uniformity = 0;        // more negative is better
    double spectral_flatness = 0; // in [0,1], higher is better
    double top1 = 0;              // leading PC variance share, lower is better
};

/// log mean_{i != j} exp(-t |xi - xj|^2) over L2-normalized rows.
inline double uniformity_metric(const MatrixXd& rows, double t = 2.0) {
    const Eigen::Index n = rows.rows();
    if (n < 2) throw ValidationError("uniformity needs at least 2 embeddings");
    MatrixXd zn(n, rows.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = rows.row(i).norm();
        if (norm == 0.0) throw NumericError("uniformity: zero-norm embedding");
        zn.row(i) = rows.row(i) / norm;
    }
    double sum = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            sum += std::exp(-t * (zn.row(i) - zn.row(j)).squaredNorm());
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    return std::log(sum / pairs);
}

inline GeometryReport geometry(const MatrixXd& rows, double t = 2.0) {
    GeometryReport rep;
    rep.uniformity = uniformity_metric(rows, t);

    const Eigen::Index n = rows.rows();
    MatrixXd centered = rows.rowwise() - rows.colwise().mean();
    MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("geometry: eigendecomposition failed");
    VectorXd values = eig.eigenvalues().reverse();
    const double lmax = std::max(values(0), 0.0);
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (values(i) < 1e-12 * lmax || values(i) < 0) values(i) = 0.0;
    const double total = values.sum();
    if (total <= 0) throw NumericError("geometry: rank-0 embeddings");

    rep.top1 = values(0) / total;
    const double arith = total / static_cast<double>(values.size());
    double log_geo = 0;
    bool has_zero = false;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values(i) <= 0) {
            has_zero = true;
            break;
        }
        log_geo += std::log(values(i));
    }
    rep.spectral_flatness =
        has_zero ? 0.0 : std::exp(log_geo / static_cast<double>(values.size())) / arith;
    return rep;
}

}  // namespace paregta
