#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "paregta/cohort.hpp"
#include "paregta/factors.hpp"

namespace paregta {

/// Minimal component count whose cumulative explained-variance ratio
/// reaches the target. `eigenvalues` descending, nonnegative.
inline int components_for_target(const VectorXd& eigenvalues, double variance_target) {
    if (variance_target <= 0 || variance_target > 1)
        throw ConfigError("variance_target must be in (0,1]");
    const double total = eigenvalues.sum();
    if (total <= 0) throw NumericError("PCA: zero total variance");
    double cum = 0;
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        cum += eigenvalues(k) / total;
        if (cum >= variance_target - 1e-12) return static_cast<int>(k) + 1;
    }
    return static_cast<int>(eigenvalues.size());
}

// Standardization plus PCA for one feature block, fitted on training rows.
struct BlockTransform {
    VectorXd mean;
    VectorXd sd;       // zero-variance columns get sd = 1
    MatrixXd basis;    // k x d, orthonormal rows
    VectorXd evr;      // explained-variance ratios, all d components
    int retained = 0;

    Eigen::Index input_dim() const { return mean.size(); }

    VectorXd apply(const VectorXd& x) const {
        if (x.size() != mean.size())
            throw ValidationError("transform: dimension mismatch (got " +
                                  std::to_string(x.size()) + ", fit on " +
                                  std::to_string(mean.size()) + ")");
        return basis * ((x - mean).array() / sd.array()).matrix();
    }

    MatrixXd apply_rows(const MatrixXd& rows) const {
        MatrixXd out(rows.rows(), retained);
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            out.row(i) = apply(rows.row(i).transpose()).transpose();
        return out;
    }
};

/// Fits standardization and PCA (covariance eigendecomposition) on the
/// training rows of one block. Sign convention: the largest-magnitude
/// loading of each component is positive.
inline BlockTransform fit_block(const MatrixXd& train_rows, double variance_target) {
    if (train_rows.rows() < 2)
        throw ValidationError("PCA fit needs at least 2 training rows");
    const Eigen::Index n = train_rows.rows(), d = train_rows.cols();

    BlockTransform t;
    t.mean = train_rows.colwise().mean();
    t.sd.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var =
            (train_rows.col(j).array() - t.mean(j)).square().sum() / static_cast<double>(n - 1);
        t.sd(j) = var > 0 ? std::sqrt(var) : 1.0;
    }
    MatrixXd x = (train_rows.rowwise() - t.mean.transpose()).array().rowwise() /
                 t.sd.transpose().array();
    MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");

    // Eigen returns ascending order; flip to descending and clamp noise.
    VectorXd values = eig.eigenvalues().reverse();
    MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
    const double lmax = values.size() ? std::max(values(0), 0.0) : 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (values(i) < 1e-12 * lmax || values(i) < 0) values(i) = 0.0;

    if (values.sum() <= 0) throw NumericError("PCA: zero total variance");
    t.evr = values / values.sum();
    t.retained = components_for_target(values, variance_target);

    t.basis.resize(t.retained, d);
    for (int k = 0; k < t.retained; ++k) {
        VectorXd v = vectors.col(k);
        Eigen::Index imax;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        t.basis.row(k) = v.transpose();
    }
    return t;
}

// Demographics block: standardized age, one-hot sex, one-hot race.
// Categories and age statistics come from the training split only; a null
// age stays out of the fit and maps to the standardized mean (zero).
struct DemographicsSpec {
    bool include = true;
    double age_mean = 0, age_sd = 1;
    std::vector<std::string> sex_categories;
    std::vector<std::string> race_categories;

    Eigen::Index width() const {
        if (!include) return 0;
        return 1 + static_cast<Eigen::Index>(sex_categories.size() + race_categories.size());
    }

    VectorXd encode(const PatientRecord& p) const {
        VectorXd v = VectorXd::Zero(width());
        if (!include) return v;
        v(0) = p.age ? (static_cast<double>(*p.age) - age_mean) / age_sd : 0.0;
        Eigen::Index off = 1;
        for (size_t i = 0; i < sex_categories.size(); ++i)
            if (p.sex == sex_categories[i]) v(off + static_cast<Eigen::Index>(i)) = 1.0;
        off += static_cast<Eigen::Index>(sex_categories.size());
        for (size_t i = 0; i < race_categories.size(); ++i)
            if (p.race == race_categories[i]) v(off + static_cast<Eigen::Index>(i)) = 1.0;
        return v;
    }
};

inline DemographicsSpec fit_demographics(const std::vector<const PatientRecord*>& train,
                                         bool include) {
    DemographicsSpec d;
    d.include = include;
    if (!include) return d;
    std::set<std::string> sexes, races;
    double sum = 0, sumsq = 0;
    size_t n_age = 0;
    for (const auto* p : train) {
        sexes.insert(p->sex);
        races.insert(p->race);
        if (p->age) {
            sum += *p->age;
            sumsq += static_cast<double>(*p->age) * (*p->age);
            ++n_age;
        }
    }
    d.sex_categories.assign(sexes.begin(), sexes.end());
    d.race_categories.assign(races.begin(), races.end());
    if (n_age >= 2) {
        d.age_mean = sum / static_cast<double>(n_age);
        const double var =
            (sumsq - sum * sum / static_cast<double>(n_age)) / static_cast<double>(n_age - 1);
        d.age_sd = var > 0 ? std::sqrt(var) : 1.0;
    } else if (n_age == 1) {
        d.age_mean = sum;
        d.age_sd = 1.0;
    }
    return d;
}

struct BlockLayout {
    // (name, offset, width)
    std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> blocks;

    Eigen::Index total_width() const {
        Eigen::Index w = 0;
        for (const auto& [n, o, width] : blocks) w += width;
        return w;
    }

    json to_json() const {
        json arr = json::array();
        for (const auto& [n, o, w] : blocks) arr.push_back(json::array({n, o, w}));
        return arr;
    }
};

struct FittedTransform {
    BlockTransform meds;
    BlockTransform comorb;
    DemographicsSpec demographics;
    double variance_target = 0.95;

    BlockLayout layout() const {
        BlockLayout l;
        Eigen::Index off = 0;
        l.blocks.emplace_back("meds_pca", off, meds.retained);
        off += meds.retained;
        l.blocks.emplace_back("comorb_pca", off, comorb.retained);
        off += comorb.retained;
        l.blocks.emplace_back("demographics", off, demographics.width());
        return l;
    }
};

// Pooled per-concept vectors keyed by patient id.
using PooledVectors = std::map<std::string, VectorXd>;

/// Fits per-block standardization + PCA on the training split only, plus
/// the demographics statistics.
inline FittedTransform fit_transform(const Cohort& cohort,
                                     const std::vector<std::string>& train_ids,
                                     const PooledVectors& pooled_meds,
                                     const PooledVectors& pooled_comorb,
                                     double variance_target, bool include_demographics) {
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::vector<const PatientRecord*> train;
    for (const auto& p : cohort.patients)
        if (train_set.count(p.patient_id)) train.push_back(&p);
    if (train.size() < 2)
        throw ValidationError("fit_transform needs at least 2 training patients");

    auto stack = [&](const PooledVectors& pooled) {
        const Eigen::Index d = pooled.begin()->second.size();
        MatrixXd m(static_cast<Eigen::Index>(train.size()), d);
        for (size_t i = 0; i < train.size(); ++i) {
            auto it = pooled.find(train[i]->patient_id);
            if (it == pooled.end())
                throw ValidationError("missing pooled vector for patient '" +
                                      train[i]->patient_id + "'");
            m.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
        }
        return m;
    };

    FittedTransform t;
    t.variance_target = variance_target;
    t.meds = fit_block(stack(pooled_meds), variance_target);
    t.comorb = fit_block(stack(pooled_comorb), variance_target);
    t.demographics = fit_demographics(train, include_demographics);
    return t;
}

struct PatientRepresentation {
    std::string patient_id;
    VectorXd features;
};

/// features = meds_pca ++ comorb_pca ++ demographics for every patient.
inline std::vector<PatientRepresentation> assemble(const Cohort& cohort,
                                                   const PooledVectors& pooled_meds,
                                                   const PooledVectors& pooled_comorb,
                                                   const FittedTransform& t) {
    std::vector<PatientRepresentation> out;
    out.reserve(cohort.patients.size());
    const auto layout = t.layout();
    const Eigen::Index width = layout.total_width();
    for (const auto& p : cohort.patients) {
        auto mit = pooled_meds.find(p.patient_id);
        auto cit = pooled_comorb.find(p.patient_id);
        if (mit == pooled_meds.end() || cit == pooled_comorb.end())
            throw ValidationError("missing pooled concept vector for patient '" +
                                  p.patient_id + "'");
        PatientRepresentation r;
        r.patient_id = p.patient_id;
        r.features.resize(width);
        r.features.head(t.meds.retained) = t.meds.apply(mit->second);
        r.features.segment(t.meds.retained, t.comorb.retained) = t.comorb.apply(cit->second);
        r.features.tail(t.demographics.width()) = t.demographics.encode(p);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sparse baselines: one-hot presence and count Bag-of-Codes over the whole
// record, plus the same demographics block. Medication vocabulary comes
// from class term sets when provided (raw recorded strings otherwise);
// comorbidity vocabulary is the raw terms seen in the training split.

struct BaselineSpec {
    std::vector<std::string> med_names;               // feature names
    std::vector<std::vector<std::string>> med_terms;  // per-feature matcher terms
    std::vector<std::string> comorb_vocab;            // exact strings
    DemographicsSpec demographics;

    Eigen::Index width() const {
        return static_cast<Eigen::Index>(med_names.size() + comorb_vocab.size()) +
               demographics.width();
    }
};

inline BaselineSpec fit_baseline_spec(const Cohort& cohort,
                                      const std::vector<std::string>& train_ids,
                                      const std::vector<FactorSpec>& med_classes,
                                      size_t vocab_cap, bool include_demographics) {
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::vector<const PatientRecord*> train;
    for (const auto& p : cohort.patients)
        if (train_set.count(p.patient_id)) train.push_back(&p);
    if (train.empty()) throw ValidationError("baseline spec needs training patients");

    BaselineSpec spec;
    if (!med_classes.empty()) {
        for (const auto& f : med_classes) {
            if (f.kind != FactorKind::TermSet || !f.applies_to(ClinicalConcept::Medication))
                continue;
            spec.med_names.push_back(f.name);
            spec.med_terms.push_back(f.terms);
            if (spec.med_names.size() >= vocab_cap) break;
        }
    }
    std::map<std::string, size_t> med_counts, comorb_counts;
    for (const auto* p : train)
        for (const auto& v : p->visits) {
            for (const auto& m : v.medications) ++med_counts[m];
            for (const auto& c : v.comorbidities) ++comorb_counts[c];
        }
    auto top_terms = [&](const std::map<std::string, size_t>& counts) {
        std::vector<std::pair<std::string, size_t>> items(counts.begin(), counts.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::string> out;
        for (const auto& [term, _] : items) {
            if (out.size() >= vocab_cap) break;
            out.push_back(term);
        }
        return out;
    };
    if (spec.med_names.empty()) {
        for (const auto& term : top_terms(med_counts)) {
            spec.med_names.push_back(term);
            spec.med_terms.push_back({term});
        }
    }
    spec.comorb_vocab = top_terms(comorb_counts);
    spec.demographics = fit_demographics(train, include_demographics);
    return spec;
}

enum class BaselineKind { OneHot, CountBoC };

inline std::vector<PatientRepresentation> build_baseline(const Cohort& cohort,
                                                         const BaselineSpec& spec,
                                                         BaselineKind kind) {
    std::vector<PatientRepresentation> out;
    out.reserve(cohort.patients.size());
    const Eigen::Index n_med = static_cast<Eigen::Index>(spec.med_names.size());
    const Eigen::Index n_com = static_cast<Eigen::Index>(spec.comorb_vocab.size());
    for (const auto& p : cohort.patients) {
        VectorXd v = VectorXd::Zero(spec.width());
        for (const auto& visit : p.visits) {
            for (const auto& item : visit.medications)
                for (Eigen::Index j = 0; j < n_med; ++j)
                    if (item_matches_terms(item, spec.med_terms[static_cast<size_t>(j)]))
                        v(j) += 1.0;
            for (const auto& item : visit.comorbidities)
                for (Eigen::Index j = 0; j < n_com; ++j)
                    if (item == spec.comorb_vocab[static_cast<size_t>(j)]) v(n_med + j) += 1.0;
        }
        if (kind == BaselineKind::OneHot)
            for (Eigen::Index j = 0; j < n_med + n_com; ++j) v(j) = v(j) > 0 ? 1.0 : 0.0;
        v.tail(spec.demographics.width()) = spec.demographics.encode(p);
        out.push_back({p.patient_id, std::move(v)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline json block_to_json(const BlockTransform& t) {
    auto vec = [](const VectorXd& v) {
        json a = json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
        return a;
    };
    return json{{"mean", vec(t.mean)},
                {"sd", vec(t.sd)},
                {"evr", vec(t.evr)},
                {"retained", t.retained}};
}

inline void block_from_json(const json& j, BlockTransform& t) {
    auto vec = [](const json& a) {
        VectorXd v(a.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = a.at(i).get<double>();
        return v;
    };
    t.mean = vec(j.at("mean"));
    t.sd = vec(j.at("sd"));
    t.evr = vec(j.at("evr"));
    t.retained = j.at("retained").get<int>();
}

/// Transform persisted as JSON with the PCA bases in PRGT sidecar files
/// (<path>.meds_basis.prgt / <path>.comorb_basis.prgt).
inline void save_transform(const std::filesystem::path& path, const FittedTransform& t) {
    json j{{"variance_target", t.variance_target},
           {"meds", block_to_json(t.meds)},
           {"comorb", block_to_json(t.comorb)},
           {"demographics",
            json{{"include", t.demographics.include},
                 {"age_mean", t.demographics.age_mean},
                 {"age_sd", t.demographics.age_sd},
                 {"sex_categories", t.demographics.sex_categories},
                 {"race_categories", t.demographics.race_categories}}}};
    write_json(path, j);
    auto save_basis = [&](const BlockTransform& b, const std::string& tag) {
        auto p = path;
        p += "." + tag + "_basis.prgt";
        write_prgt(p, MatrixRXf(b.basis.cast<float>()));
    };
    save_basis(t.meds, "meds");
    save_basis(t.comorb, "comorb");
}

inline FittedTransform load_transform(const std::filesystem::path& path) {
    const json j = read_json(path);
    FittedTransform t;
    t.variance_target = j.at("variance_target").get<double>();
    block_from_json(j.at("meds"), t.meds);
    block_from_json(j.at("comorb"), t.comorb);
    const auto& d = j.at("demographics");
    t.demographics.include = d.at("include").get<bool>();
    t.demographics.age_mean = d.at("age_mean").get<double>();
    t.demographics.age_sd = d.at("age_sd").get<double>();
    t.demographics.sex_categories = d.at("sex_categories").get<std::vector<std::string>>();
    t.demographics.race_categories = d.at("race_categories").get<std::vector<std::string>>();
    auto load_basis = [&](BlockTransform& b, const std::string& tag) {
        auto p = path;
        p += "." + tag + "_basis.prgt";
        b.basis = read_prgt(p).cast<double>();
    };
    load_basis(t.meds, "meds");
    load_basis(t.comorb, "comorb");
    return t;
}

}  // namespace paregta
