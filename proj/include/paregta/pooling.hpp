#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "paregta/common.hpp"
#include "paregta/io.hpp"

namespace paregta {

enum class DeltaMode { Identity, Log1p };
enum class PoolMethod { Time, Attention, Hybrid };

inline DeltaMode delta_mode_from_name(const std::string& s) {
    if (s == "identity") return DeltaMode::Identity;
    if (s == "log1p") return DeltaMode::Log1p;
    throw ConfigError("unknown delta_mode '" + s + "' (expected identity|log1p)");
}

inline std::string delta_mode_name(DeltaMode m) {
    return m == DeltaMode::Identity ? "identity" : "log1p";
}

inline PoolMethod pool_method_from_name(const std::string& s) {
    if (s == "time") return PoolMethod::Time;
    if (s == "attention") return PoolMethod::Attention;
    if (s == "hybrid") return PoolMethod::Hybrid;
    throw ConfigError("unknown pooling method '" + s + "'");
}

inline std::string pool_method_name(PoolMethod m) {
    switch (m) {
        case PoolMethod::Time: return "time";
        case PoolMethod::Attention: return "attention";
        case PoolMethod::Hybrid: return "hybrid";
    }
    throw ConfigError("bad pooling method enum");
}

/// Day-gap transformation applied inside the decay exponent.
inline double transform_gap(DeltaMode mode, double days) {
    return mode == DeltaMode::Log1p ? std::log1p(days) : days;
}

struct PoolingConfig {
    double gamma = 0.05;
    DeltaMode delta_mode = DeltaMode::Log1p;
    double alpha = 0.5;
    double tau = 1.0;
    PoolMethod method = PoolMethod::Hybrid;

    void validate() const {
        if (gamma <= 0) throw ConfigError("pooling: gamma must be > 0");
        if (alpha < 0 || alpha > 1) throw ConfigError("pooling: alpha must be in [0,1]");
        if (tau <= 0) throw ConfigError("pooling: tau must be > 0");
    }

    static PoolingConfig from_json(const json& j) {
        strict_keys(j, {"gamma", "delta_mode", "alpha", "tau", "method"}, "pooling");
        PoolingConfig c;
        c.gamma = j.value("gamma", c.gamma);
        if (j.contains("delta_mode"))
            c.delta_mode = delta_mode_from_name(j.at("delta_mode").get<std::string>());
        c.alpha = j.value("alpha", c.alpha);
        c.tau = j.value("tau", c.tau);
        if (j.contains("method"))
            c.method = pool_method_from_name(j.at("method").get<std::string>());
        c.validate();
        return c;
    }

    json to_json() const {
        return json{{"gamma", gamma},
                    {"delta_mode", delta_mode_name(delta_mode)},
                    {"alpha", alpha},
                    {"tau", tau},
                    {"method", pool_method_name(method)}};
    }
};

// One patient's visit embeddings with their dates, ascending.
struct VisitSequence {
    MatrixXd embeddings;       // N x D
    std::vector<Date> times;   // ascending

    void validate() const {
        if (embeddings.rows() < 1) throw ValidationError("visit sequence: N must be >= 1");
        if (static_cast<Eigen::Index>(times.size()) != embeddings.rows())
            throw ValidationError("visit sequence: times/embeddings length mismatch");
        if (!std::is_sorted(times.begin(), times.end()))
            throw ValidationError("visit sequence: times must be ascending");
    }

    VectorXd gaps_from_latest() const {
        VectorXd g(times.size());
        const Date latest = times.back();
        for (size_t i = 0; i < times.size(); ++i)
            g(static_cast<Eigen::Index>(i)) = static_cast<double>(latest - times[i]);
        return g;
    }
};

/// Normalized exponential time-decay weights. Accepts gamma == 0 (exactly
/// uniform weights); negative gamma is a configuration error.
inline VectorXd time_weights(const std::vector<Date>& times, double gamma,
                             DeltaMode delta_mode) {
    if (times.empty()) throw ValidationError("time_weights: N must be >= 1");
    if (gamma < 0) throw ConfigError("time_weights: gamma must be >= 0");
    const Date latest = *std::max_element(times.begin(), times.end());
    VectorXd r(static_cast<Eigen::Index>(times.size()));
    for (size_t i = 0; i < times.size(); ++i) {
        const double gap = static_cast<double>(latest - times[i]);
        r(static_cast<Eigen::Index>(i)) = std::exp(-gamma * transform_gap(delta_mode, gap));
    }
    return r / r.sum();
}

// Attention scorer MLP: (embedding ++ transformed gap) -> hidden -> scalar.
struct AttentionScorerParams {
    MatrixXd w1;  // hidden x (D+1)
    VectorXd b1;  // hidden
    VectorXd w2;  // hidden
    double b2 = 0;

    static AttentionScorerParams init(Eigen::Index embed_dim, Eigen::Index hidden_dim,
                                      std::uint64_t seed) {
        AttentionScorerParams p;
        std::mt19937_64 rng(seed);
        auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
            const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
            std::uniform_real_distribution<double> dist(-a, a);
            MatrixXd m(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
            return m;
        };
        p.w1 = glorot(hidden_dim, embed_dim + 1);
        p.b1 = VectorXd::Zero(hidden_dim);
        p.w2 = glorot(hidden_dim, 1).col(0);
        return p;
    }

    double score(const VectorXd& embedding, double transformed_gap) const {
        VectorXd u(embedding.size() + 1);
        u.head(embedding.size()) = embedding;
        u(embedding.size()) = transformed_gap;
        return w2.dot((w1 * u + b1).array().tanh().matrix()) + b2;
    }

    bool operator==(const AttentionScorerParams& o) const {
        return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
    }

    json to_json() const {
        auto mat = [](const MatrixXd& m) {
            json rows = json::array();
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                json row = json::array();
                for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
                rows.push_back(row);
            }
            return rows;
        };
        json vec = json::array();
        for (Eigen::Index i = 0; i < w2.size(); ++i) vec.push_back(w2(i));
        json bias = json::array();
        for (Eigen::Index i = 0; i < b1.size(); ++i) bias.push_back(b1(i));
        return json{{"w1", mat(w1)}, {"b1", bias}, {"w2", vec}, {"b2", b2}};
    }

    static AttentionScorerParams from_json(const json& j) {
        AttentionScorerParams p;
        const auto& w1j = j.at("w1");
        p.w1.resize(static_cast<Eigen::Index>(w1j.size()),
                    static_cast<Eigen::Index>(w1j.at(0).size()));
        for (Eigen::Index i = 0; i < p.w1.rows(); ++i)
            for (Eigen::Index k = 0; k < p.w1.cols(); ++k)
                p.w1(i, k) = w1j.at(i).at(k).get<double>();
        const auto& b1j = j.at("b1");
        p.b1.resize(static_cast<Eigen::Index>(b1j.size()));
        for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = b1j.at(i).get<double>();
        const auto& w2j = j.at("w2");
        p.w2.resize(static_cast<Eigen::Index>(w2j.size()));
        for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2(i) = w2j.at(i).get<double>();
        p.b2 = j.at("b2").get<double>();
        return p;
    }
};

/// Raw (pre-softmax) attention scores s~. Without a scorer this is the
/// context-similarity score of the parameter-free formulation; with one,
/// the MLP output replaces the context-similarity term. Both keep the
/// time-decay multiplier.
inline VectorXd attention_scores(const VisitSequence& seq, double gamma, DeltaMode delta_mode,
                                 const AttentionScorerParams* scorer = nullptr) {
    seq.validate();
    const Eigen::Index n = seq.embeddings.rows();
    const VectorXd gaps = seq.gaps_from_latest();
    VectorXd scores(n);
    VectorXd norms(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        norms(i) = seq.embeddings.row(i).norm();
        if (norms(i) == 0.0)
            throw NumericError("attention: zero-norm visit embedding");
    }
    VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i)
        r(i) = std::exp(-gamma * transform_gap(delta_mode, gaps(i)));
    if (scorer) {
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = scorer->score(seq.embeddings.row(i).transpose(),
                                      transform_gap(delta_mode, gaps(i))) * r(i);
    } else {
        // c = mean of L2-normalized embeddings; kept unnormalized in the dot.
        VectorXd c = VectorXd::Zero(seq.embeddings.cols());
        for (Eigen::Index i = 0; i < n; ++i) c += seq.embeddings.row(i).transpose() / norms(i);
        c /= static_cast<double>(n);
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = (seq.embeddings.row(i).transpose() / norms(i)).dot(c) * r(i);
    }
    return scores;
}

/// Softmax with temperature over mean-centered scores.
inline VectorXd attention_weights(const VisitSequence& seq, double gamma, DeltaMode delta_mode,
                                  double tau, const AttentionScorerParams* scorer = nullptr) {
    if (tau <= 0) throw ConfigError("attention: tau must be > 0");
    const VectorXd scores = attention_scores(seq, gamma, delta_mode, scorer);
    const double m = scores.mean();
    VectorXd logits = (scores.array() - m) / tau;
    const double mx = logits.maxCoeff();
    VectorXd w = (logits.array() - mx).exp();
    return w / w.sum();
}

/// Pooling weights for the configured method.
inline VectorXd pooling_weights(const VisitSequence& seq, const PoolingConfig& config,
                                const AttentionScorerParams* scorer = nullptr) {
    seq.validate();
    switch (config.method) {
        case PoolMethod::Time:
            return time_weights(seq.times, config.gamma, config.delta_mode);
        case PoolMethod::Attention:
            return attention_weights(seq, config.gamma, config.delta_mode, config.tau, scorer);
        case PoolMethod::Hybrid: {
            const VectorXd wt = time_weights(seq.times, config.gamma, config.delta_mode);
            const VectorXd wa =
                attention_weights(seq, config.gamma, config.delta_mode, config.tau, scorer);
            return config.alpha * wt + (1.0 - config.alpha) * wa;
        }
    }
    throw ConfigError("bad pooling method enum");
}

/// Weighted sum of visit embeddings followed by L2 normalization.
inline VectorXd hybrid_pool(const VisitSequence& seq, const PoolingConfig& config,
                            const AttentionScorerParams* scorer = nullptr) {
    const VectorXd w = pooling_weights(seq, config, scorer);
    VectorXd z = seq.embeddings.transpose() * w;
    const double norm = z.norm();
    if (norm == 0.0)
        throw DegenerateError("pooled vector is exactly zero before normalization");
    return z / norm;
}

// ---------------------------------------------------------------------------
// Attention scorer training: triplet margin loss over pooled patient
// vectors with cosine distance; only scorer parameters update.

struct AttentionTrainerConfig {
    int epochs = 3;
    int batch_triplets = 32;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double margin = 0.2;
    int hidden_dim = 96;
    DeltaMode delta_mode = DeltaMode::Log1p;
    int max_triplets_per_anchor = 4;
    bool normalize_output = true;
    std::uint64_t seed = 42;

    void validate() const {
        if (epochs < 1) throw ConfigError("pooler trainer: epochs must be >= 1");
        if (batch_triplets < 1) throw ConfigError("pooler trainer: batch_triplets must be >= 1");
        if (margin < 0) throw ConfigError("pooler trainer: margin must be >= 0");
        if (hidden_dim < 1) throw ConfigError("pooler trainer: hidden_dim must be >= 1");
        if (max_triplets_per_anchor < 1)
            throw ConfigError("pooler trainer: max_triplets_per_anchor must be >= 1");
    }

    static AttentionTrainerConfig from_json(const json& j) {
        strict_keys(j, {"epochs", "batch_triplets", "learning_rate", "weight_decay", "margin",
                        "hidden_dim", "delta_mode", "max_triplets_per_anchor",
                        "normalize_output", "seed"},
                    "attention_trainer");
        AttentionTrainerConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_triplets = j.value("batch_triplets", c.batch_triplets);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.margin = j.value("margin", c.margin);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        if (j.contains("delta_mode"))
            c.delta_mode = delta_mode_from_name(j.at("delta_mode").get<std::string>());
        c.max_triplets_per_anchor = j.value("max_triplets_per_anchor", c.max_triplets_per_anchor);
        c.normalize_output = j.value("normalize_output", c.normalize_output);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    }

    json to_json() const {
        return json{{"epochs", epochs},
                    {"batch_triplets", batch_triplets},
                    {"learning_rate", learning_rate},
                    {"weight_decay", weight_decay},
                    {"margin", margin},
                    {"hidden_dim", hidden_dim},
                    {"delta_mode", delta_mode_name(delta_mode)},
                    {"max_triplets_per_anchor", max_triplets_per_anchor},
                    {"normalize_output", normalize_output},
                    {"seed", seed}};
    }
};

namespace detail {

struct ScorerGrads {
    MatrixXd w1;
    VectorXd b1;
    VectorXd w2;
    double b2 = 0;

    ScorerGrads(Eigen::Index hidden, Eigen::Index input)
        : w1(MatrixXd::Zero(hidden, input)),
          b1(VectorXd::Zero(hidden)),
          w2(VectorXd::Zero(hidden)) {}
};

// Pooled vector y = sum_i w_i v_i with everything needed to push dL/dy
// back into the scorer parameters.
struct PoolTape {
    const VisitSequence* seq = nullptr;
    VectorXd gaps_t;    // transformed gaps
    VectorXd r;         // decay factors
    VectorXd att;       // attention weights
    VectorXd y;         // pooled (pre-normalization)
    MatrixXd hidden;    // tanh activations, N x hidden
    double att_share = 1.0;  // dw_i/dw_att_i (1-alpha for hybrid)
    double tau = 1.0;
};

inline PoolTape pool_forward_scorer(const VisitSequence& seq, const PoolingConfig& config,
                                    const AttentionScorerParams& scorer) {
    seq.validate();
    PoolTape t;
    t.seq = &seq;
    t.tau = config.tau;
    const Eigen::Index n = seq.embeddings.rows();
    const VectorXd gaps = seq.gaps_from_latest();
    t.gaps_t.resize(n);
    t.r.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        t.gaps_t(i) = transform_gap(config.delta_mode, gaps(i));
        t.r(i) = std::exp(-config.gamma * t.gaps_t(i));
    }
    t.hidden.resize(n, scorer.w1.rows());
    VectorXd scores(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        VectorXd u(seq.embeddings.cols() + 1);
        u.head(seq.embeddings.cols()) = seq.embeddings.row(i).transpose();
        u(seq.embeddings.cols()) = t.gaps_t(i);
        t.hidden.row(i) = (scorer.w1 * u + scorer.b1).array().tanh().matrix().transpose();
        scores(i) = (scorer.w2.dot(t.hidden.row(i).transpose()) + scorer.b2) * t.r(i);
    }
    const double m = scores.mean();
    VectorXd logits = (scores.array() - m) / config.tau;
    VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    t.att = e / e.sum();

    VectorXd w;
    switch (config.method) {
        case PoolMethod::Attention:
            w = t.att;
            t.att_share = 1.0;
            break;
        case PoolMethod::Hybrid:
            w = config.alpha * time_weights(seq.times, config.gamma, config.delta_mode) +
                (1.0 - config.alpha) * t.att;
            t.att_share = 1.0 - config.alpha;
            break;
        case PoolMethod::Time:
            throw ConfigError("scorer training requires attention or hybrid pooling");
    }
    t.y = seq.embeddings.transpose() * w;
    return t;
}

inline void pool_backward_scorer(const PoolTape& t, const AttentionScorerParams& scorer,
                                 const VectorXd& dy, ScorerGrads& grads) {
    const Eigen::Index n = t.seq->embeddings.rows();
    // dL/dw_i, then into the attention branch only.
    VectorXd dw(n);
    for (Eigen::Index i = 0; i < n; ++i) dw(i) = t.seq->embeddings.row(i).dot(dy);
    VectorXd datt = t.att_share * dw;
    // Softmax backward (mean-centering shifts all logits equally and cancels).
    const double inner = datt.dot(t.att);
    VectorXd dscores(n);
    for (Eigen::Index i = 0; i < n; ++i)
        dscores(i) = t.att(i) * (datt(i) - inner) / t.tau;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double dout = dscores(i) * t.r(i);
        const VectorXd hi = t.hidden.row(i).transpose();
        grads.w2 += dout * hi;
        grads.b2 += dout;
        VectorXd dh = dout * scorer.w2;
        VectorXd da = dh.cwiseProduct((1.0 - hi.array().square()).matrix());
        VectorXd u(t.seq->embeddings.cols() + 1);
        u.head(t.seq->embeddings.cols()) = t.seq->embeddings.row(i).transpose();
        u(t.seq->embeddings.cols()) = t.gaps_t(i);
        grads.w1.noalias() += da * u.transpose();
        grads.b1 += da;
    }
}

}  // namespace detail

struct ScorerTrainReport {
    std::vector<double> epoch_losses;
    std::vector<double> step_losses;
    size_t triplets = 0;
};

/// Trains the attention-scorer MLP with a triplet margin loss over pooled
/// patient vectors (distance = 1 - cosine). Anchors iterate over training
/// patients; up to max_triplets_per_anchor positives each, one negative per
/// positive, seeded sampling.
inline ScorerTrainReport train_attention_scorer(const std::vector<VisitSequence>& patients,
                                                const std::vector<int>& labels,
                                                const PoolingConfig& pooling,
                                                const AttentionTrainerConfig& config,
                                                AttentionScorerParams& scorer) {
    config.validate();
    pooling.validate();
    if (pooling.method == PoolMethod::Time ||
        (pooling.method == PoolMethod::Hybrid && pooling.alpha >= 1.0))
        throw ConfigError("scorer training needs an attention share (alpha < 1)");
    if (patients.size() != labels.size())
        throw ValidationError("scorer training: patients/labels length mismatch");
    std::vector<size_t> pos_ids, neg_ids;
    for (size_t i = 0; i < labels.size(); ++i)
        (labels[i] ? pos_ids : neg_ids).push_back(i);
    if (pos_ids.size() < 2 || neg_ids.size() < 2)
        throw ValidationError("scorer training: need at least 2 patients per class");

    const Eigen::Index hidden = scorer.w1.rows();
    const Eigen::Index input = scorer.w1.cols();

    struct Adam {
        MatrixXd m_w1, v_w1;
        VectorXd m_b1, v_b1, m_w2, v_w2;
        double m_b2 = 0, v_b2 = 0;
        long t = 0;
    } opt;
    opt.m_w1 = MatrixXd::Zero(hidden, input);
    opt.v_w1 = opt.m_w1;
    opt.m_b1 = VectorXd::Zero(hidden);
    opt.v_b1 = opt.m_b1;
    opt.m_w2 = VectorXd::Zero(hidden);
    opt.v_w2 = opt.m_w2;

    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    auto adam_step = [&](detail::ScorerGrads& g, double count) {
        g.w1 /= count;
        g.b1 /= count;
        g.w2 /= count;
        g.b2 /= count;
        ++opt.t;
        const double bc1 = 1 - std::pow(beta1, static_cast<double>(opt.t));
        const double bc2 = 1 - std::pow(beta2, static_cast<double>(opt.t));
        auto upd = [&](auto& param, const auto& grad, auto& m, auto& v) {
            m = beta1 * m + (1 - beta1) * grad;
            v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
            param -= config.learning_rate *
                     ((m / bc1).array() / ((v / bc2).array().sqrt() + eps)).matrix();
            if (config.weight_decay > 0)
                param -= config.learning_rate * config.weight_decay * param;
        };
        upd(scorer.w1, g.w1, opt.m_w1, opt.v_w1);
        upd(scorer.b1, g.b1, opt.m_b1, opt.v_b1);
        upd(scorer.w2, g.w2, opt.m_w2, opt.v_w2);
        opt.m_b2 = beta1 * opt.m_b2 + (1 - beta1) * g.b2;
        opt.v_b2 = beta2 * opt.v_b2 + (1 - beta2) * g.b2 * g.b2;
        scorer.b2 -= config.learning_rate * (opt.m_b2 / bc1) / (std::sqrt(opt.v_b2 / bc2) + eps);
        if (config.weight_decay > 0)
            scorer.b2 -= config.learning_rate * config.weight_decay * scorer.b2;
    };

    ScorerTrainReport report;
    std::mt19937_64 rng(config.seed);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> anchors(patients.size());
        std::iota(anchors.begin(), anchors.end(), size_t{0});
        std::shuffle(anchors.begin(), anchors.end(), rng);

        struct Triplet { size_t a, p, n; };
        std::vector<Triplet> triplets;
        for (size_t a : anchors) {
            const auto& same = labels[a] ? pos_ids : neg_ids;
            const auto& other = labels[a] ? neg_ids : pos_ids;
            std::vector<size_t> pool;
            for (size_t s : same)
                if (s != a) pool.push_back(s);
            if (pool.empty()) continue;
            std::shuffle(pool.begin(), pool.end(), rng);
            const size_t take = std::min<size_t>(config.max_triplets_per_anchor, pool.size());
            for (size_t k = 0; k < take; ++k) {
                std::uniform_int_distribution<size_t> pick(0, other.size() - 1);
                triplets.push_back({a, pool[k], other[pick(rng)]});
            }
        }

        double epoch_loss = 0;
        size_t epoch_count = 0;
        for (size_t start = 0; start < triplets.size();
             start += static_cast<size_t>(config.batch_triplets)) {
            const size_t end =
                std::min(triplets.size(), start + static_cast<size_t>(config.batch_triplets));
            detail::ScorerGrads grads(hidden, input);
            double batch_loss = 0;
            for (size_t k = start; k < end; ++k) {
                const auto& tri = triplets[k];
                auto ta = detail::pool_forward_scorer(patients[tri.a], pooling, scorer);
                auto tp = detail::pool_forward_scorer(patients[tri.p], pooling, scorer);
                auto tn = detail::pool_forward_scorer(patients[tri.n], pooling, scorer);
                const double na = ta.y.norm(), np = tp.y.norm(), nn = tn.y.norm();
                if (na == 0 || np == 0 || nn == 0)
                    throw DegenerateError("scorer training: zero pooled vector");
                const double cos_ap = ta.y.dot(tp.y) / (na * np);
                const double cos_an = ta.y.dot(tn.y) / (na * nn);
                const double loss = (1 - cos_ap) - (1 - cos_an) + config.margin;
                if (loss > 0) {
                    batch_loss += loss;
                    // d(1-cos(u,v))/du = -(v_hat - cos * u_hat)/|u|
                    const VectorXd ah = ta.y / na, ph = tp.y / np, nh = tn.y / nn;
                    const VectorXd d_a =
                        -(ph - cos_ap * ah) / na + (nh - cos_an * ah) / na;
                    const VectorXd d_p = -(ah - cos_ap * ph) / np;
                    const VectorXd d_n = (ah - cos_an * nh) / nn;
                    detail::pool_backward_scorer(ta, scorer, d_a, grads);
                    detail::pool_backward_scorer(tp, scorer, d_p, grads);
                    detail::pool_backward_scorer(tn, scorer, d_n, grads);
                }
            }
            const double count = static_cast<double>(end - start);
            report.step_losses.push_back(batch_loss / count);
            epoch_loss += batch_loss;
            epoch_count += end - start;
            adam_step(grads, count);
        }
        report.epoch_losses.push_back(epoch_count ? epoch_loss / epoch_count : 0.0);
        report.triplets += triplets.size();
    }
    return report;
}

inline void save_scorer(const std::filesystem::path& path, const AttentionScorerParams& p) {
    write_json(path, p.to_json());
}

inline AttentionScorerParams load_scorer(const std::filesystem::path& path) {
    return AttentionScorerParams::from_json(read_json(path));
}

}  // namespace paregta
