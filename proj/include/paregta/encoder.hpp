#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "paregta/common.hpp"
#include "paregta/io.hpp"

namespace paregta {

// ---------------------------------------------------------------------------
// Tokenization: lowercase, split on non-alphanumeric, feature-hash into
// a fixed bucket space.

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

struct EncoderArch {
    std::uint32_t vocab_size = 65536;  // feature-hash buckets
    std::uint32_t hidden_dim = 128;
    std::uint32_t out_dim = 128;
    std::uint32_t max_seq_tokens = 256;
    double dropout_rate = 0.1;

    void validate() const {
        if (vocab_size == 0 || hidden_dim == 0 || out_dim == 0 || max_seq_tokens == 0)
            throw ConfigError("encoder arch: dimensions must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("encoder arch: dropout_rate must be in [0,1)");
    }

    json to_json() const {
        return json{{"vocab_size", vocab_size},
                    {"hidden_dim", hidden_dim},
                    {"out_dim", out_dim},
                    {"max_seq_tokens", max_seq_tokens},
                    {"dropout_rate", dropout_rate}};
    }

    static EncoderArch from_json(const json& j) {
        strict_keys(j, {"vocab_size", "hidden_dim", "out_dim", "max_seq_tokens",
                        "dropout_rate"},
                    "encoder.arch");
        EncoderArch a;
        a.vocab_size = j.value("vocab_size", a.vocab_size);
        a.hidden_dim = j.value("hidden_dim", a.hidden_dim);
        a.out_dim = j.value("out_dim", a.out_dim);
        a.max_seq_tokens = j.value("max_seq_tokens", a.max_seq_tokens);
        a.dropout_rate = j.value("dropout_rate", a.dropout_rate);
        a.validate();
        return a;
    }
};

inline std::vector<std::uint32_t> token_buckets(std::string_view text, const EncoderArch& arch) {
    std::vector<std::uint32_t> buckets;
    for (const auto& tok : tokenize(text)) {
        if (buckets.size() >= arch.max_seq_tokens) break;
        buckets.push_back(static_cast<std::uint32_t>(fnv1a64(tok) % arch.vocab_size));
    }
    return buckets;
}

// Reference encoder: hashed token embeddings -> mean pool -> two-layer
// projection with tanh and dropout between the layers.
struct ReferenceEncoderParams {
    EncoderArch arch;
    std::uint64_t seed = 0;
    MatrixXd embedding;  // vocab x hidden
    MatrixXd w1;         // hidden x hidden
    VectorXd b1;
    MatrixXd w2;  // out x hidden
    VectorXd b2;

    static ReferenceEncoderParams init(const EncoderArch& arch, std::uint64_t seed) {
        arch.validate();
        ReferenceEncoderParams p;
        p.arch = arch;
        p.seed = seed;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> emb_dist(0.0, 0.1);
        p.embedding.resize(arch.vocab_size, arch.hidden_dim);
        for (Eigen::Index i = 0; i < p.embedding.rows(); ++i)
            for (Eigen::Index j = 0; j < p.embedding.cols(); ++j)
                p.embedding(i, j) = emb_dist(rng);
        auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
            const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
            std::uniform_real_distribution<double> dist(-a, a);
            MatrixXd m(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
            return m;
        };
        p.w1 = glorot(arch.hidden_dim, arch.hidden_dim);
        p.b1 = VectorXd::Zero(arch.hidden_dim);
        p.w2 = glorot(arch.out_dim, arch.hidden_dim);
        p.b2 = VectorXd::Zero(arch.out_dim);
        return p;
    }

    bool operator==(const ReferenceEncoderParams& o) const {
        return arch.vocab_size == o.arch.vocab_size && arch.hidden_dim == o.arch.hidden_dim &&
               arch.out_dim == o.arch.out_dim && arch.max_seq_tokens == o.arch.max_seq_tokens &&
               arch.dropout_rate == o.arch.dropout_rate && embedding == o.embedding &&
               w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
    }
};

// Binary params file: magic "PRGP", u32 version, u64 json header length,
// JSON header, then tensors as little-endian float64 in fixed order.
inline void save_encoder_params(const std::filesystem::path& path,
                                const ReferenceEncoderParams& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write("PRGP", 4);
    detail::write_pod(out, std::uint32_t{1});
    const std::string header = json{{"arch", p.arch.to_json()}, {"seed", p.seed}}.dump();
    detail::write_pod(out, static_cast<std::uint64_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    auto dump = [&out](const MatrixXd& m) {
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * m.size()));
    };
    dump(p.embedding);
    dump(p.w1);
    dump(p.b1);
    dump(p.w2);
    dump(p.b2);
    if (!out) throw IoError("short write to " + path.string());
}

inline ReferenceEncoderParams load_encoder_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PRGP", 4) != 0)
        throw ParseError(path.string() + ": not an encoder params file");
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    detail::read_pod(in, version);
    detail::read_pod(in, hlen);
    if (version != 1) throw ParseError(path.string() + ": unsupported params version");
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    const json h = json::parse(header);
    ReferenceEncoderParams p;
    p.arch = EncoderArch::from_json(h.at("arch"));
    p.seed = h.at("seed").get<std::uint64_t>();
    auto slurp = [&in, &path](MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
        m.resize(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
        if (!in) throw ParseError(path.string() + ": truncated params payload");
    };
    slurp(p.embedding, p.arch.vocab_size, p.arch.hidden_dim);
    slurp(p.w1, p.arch.hidden_dim, p.arch.hidden_dim);
    MatrixXd tmp;
    slurp(tmp, p.arch.hidden_dim, 1);
    p.b1 = tmp.col(0);
    slurp(p.w2, p.arch.out_dim, p.arch.hidden_dim);
    slurp(tmp, p.arch.out_dim, 1);
    p.b2 = tmp.col(0);
    return p;
}

// ---------------------------------------------------------------------------
// Forward pass with the intermediates needed for backprop.

struct EncodeTape {
    std::vector<std::uint32_t> buckets;
    VectorXd h;     // mean-pooled token embedding
    VectorXd g;     // tanh(w1 h + b1)
    VectorXd dmask; // inverted-dropout mask, empty in deterministic mode
    VectorXd z;     // output embedding
};

/// Forward pass. `dropout_mask`: nullptr = deterministic (dropout off);
/// otherwise a hidden_dim vector of {0, 1/(1-p)} entries (one stochastic
/// view).
inline EncodeTape encode_tape(const ReferenceEncoderParams& p, std::string_view text,
                              const VectorXd* dropout_mask = nullptr) {
    EncodeTape t;
    t.buckets = token_buckets(text, p.arch);
    t.h = VectorXd::Zero(p.arch.hidden_dim);
    if (!t.buckets.empty()) {
        for (auto b : t.buckets) t.h += p.embedding.row(b).transpose();
        t.h /= static_cast<double>(t.buckets.size());
    }
    t.g = (p.w1 * t.h + p.b1).array().tanh().matrix();
    if (dropout_mask) {
        t.dmask = *dropout_mask;
        t.z = p.w2 * t.g.cwiseProduct(t.dmask) + p.b2;
    } else {
        t.z = p.w2 * t.g + p.b2;
    }
    return t;
}

inline VectorXd make_dropout_mask(const EncoderArch& arch, std::mt19937_64& rng) {
    VectorXd mask(arch.hidden_dim);
    if (arch.dropout_rate <= 0.0) {
        mask.setOnes();
        return mask;
    }
    std::bernoulli_distribution keep(1.0 - arch.dropout_rate);
    const double scale = 1.0 / (1.0 - arch.dropout_rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = keep(rng) ? scale : 0.0;
    return mask;
}

/// Deterministic encoding: dropout disabled, pure function of (text, params).
inline VectorXd encode(const ReferenceEncoderParams& p, std::string_view text) {
    return encode_tape(p, text).z;
}

/// One stochastic dropout realization (a contrastive "view").
inline VectorXd encode_stochastic(const ReferenceEncoderParams& p, std::string_view text,
                                  std::mt19937_64& rng) {
    const VectorXd mask = make_dropout_mask(p.arch, rng);
    return encode_tape(p, text, &mask).z;
}

/// Row i of the result corresponds to texts[i]; float32 storage matches the
/// PRGT on-disk layout.
inline MatrixRXf encode_corpus(const std::vector<std::string>& texts,
                               const ReferenceEncoderParams& p) {
    MatrixRXf out(static_cast<Eigen::Index>(texts.size()), p.arch.out_dim);
    for (size_t i = 0; i < texts.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = encode(p, texts[i]).transpose().cast<float>();
    return out;
}

// ---------------------------------------------------------------------------
// Unsupervised SimCSE: InfoNCE over two dropout views with in-batch
// negatives, symmetrized across the views.

/// Rows 0..B-1 are view one, rows B..2B-1 are view two of the same
/// sentences. Returns the symmetrized InfoNCE loss.
inline double simcse_loss(const MatrixXd& views, double tau) {
    const Eigen::Index two_b = views.rows();
    if (two_b < 2 || two_b % 2 != 0)
        throw ValidationError("simcse_loss: need 2B rows of paired views");
    if (tau <= 0) throw ConfigError("simcse_loss: temperature must be > 0");
    const Eigen::Index b = two_b / 2;

    VectorXd norms(two_b);
    for (Eigen::Index i = 0; i < two_b; ++i) {
        norms(i) = views.row(i).norm();
        if (norms(i) == 0.0)
            throw NumericError("simcse_loss: zero-norm embedding, cosine undefined");
    }
    MatrixXd zn = views.array().colwise() / norms.array();
    MatrixXd sims = zn * zn.transpose();

    double total = 0;
    for (Eigen::Index a = 0; a < two_b; ++a) {
        const Eigen::Index pos = a < b ? a + b : a - b;
        double max_logit = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < two_b; ++k)
            if (k != a) max_logit = std::max(max_logit, sims(a, k) / tau);
        double denom = 0;
        for (Eigen::Index k = 0; k < two_b; ++k)
            if (k != a) denom += std::exp(sims(a, k) / tau - max_logit);
        total += (max_logit + std::log(denom)) - sims(a, pos) / tau;
    }
    return total / static_cast<double>(two_b);
}

/// Loss plus its gradient with respect to every view embedding.
inline double simcse_loss_grad(const MatrixXd& views, double tau, MatrixXd& dviews) {
    const Eigen::Index two_b = views.rows();
    if (two_b < 2 || two_b % 2 != 0)
        throw ValidationError("simcse_loss: need 2B rows of paired views");
    if (tau <= 0) throw ConfigError("simcse_loss: temperature must be > 0");
    const Eigen::Index b = two_b / 2;

    VectorXd norms(two_b);
    for (Eigen::Index i = 0; i < two_b; ++i) {
        norms(i) = views.row(i).norm();
        if (norms(i) == 0.0)
            throw NumericError("simcse_loss: zero-norm embedding, cosine undefined");
    }
    MatrixXd zn = views.array().colwise() / norms.array();
    MatrixXd sims = zn * zn.transpose();

    double total = 0;
    MatrixXd g_sims = MatrixXd::Zero(two_b, two_b);  // dL/dS
    const double inv = 1.0 / static_cast<double>(two_b);
    for (Eigen::Index a = 0; a < two_b; ++a) {
        const Eigen::Index pos = a < b ? a + b : a - b;
        double max_logit = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < two_b; ++k)
            if (k != a) max_logit = std::max(max_logit, sims(a, k) / tau);
        double denom = 0;
        for (Eigen::Index k = 0; k < two_b; ++k)
            if (k != a) denom += std::exp(sims(a, k) / tau - max_logit);
        total += (max_logit + std::log(denom)) - sims(a, pos) / tau;
        for (Eigen::Index k = 0; k < two_b; ++k) {
            if (k == a) continue;
            const double p = std::exp(sims(a, k) / tau - max_logit) / denom;
            g_sims(a, k) += inv * (p - (k == pos ? 1.0 : 0.0)) / tau;
        }
    }

    // S = Zn Zn^T, so dZn = (G + G^T) Zn; then through the row normalization.
    MatrixXd dzn = (g_sims + g_sims.transpose()) * zn;
    dviews.resize(two_b, views.cols());
    for (Eigen::Index a = 0; a < two_b; ++a) {
        const double dot = zn.row(a).dot(dzn.row(a));
        dviews.row(a) = (dzn.row(a) - dot * zn.row(a)) / norms(a);
    }
    return total * inv;
}

// Accumulated parameter gradients; the embedding part stays sparse by row.
struct EncoderGrads {
    std::map<std::uint32_t, VectorXd> embedding_rows;
    MatrixXd w1;
    VectorXd b1;
    MatrixXd w2;
    VectorXd b2;

    explicit EncoderGrads(const EncoderArch& arch)
        : w1(MatrixXd::Zero(arch.hidden_dim, arch.hidden_dim)),
          b1(VectorXd::Zero(arch.hidden_dim)),
          w2(MatrixXd::Zero(arch.out_dim, arch.hidden_dim)),
          b2(VectorXd::Zero(arch.out_dim)) {}
};

/// Backprop one view's output gradient dz through the encoder tape.
inline void backprop_view(const ReferenceEncoderParams& p, const EncodeTape& t,
                          const VectorXd& dz, EncoderGrads& grads) {
    const VectorXd d = t.dmask.size() ? t.g.cwiseProduct(t.dmask) : t.g;
    grads.w2.noalias() += dz * d.transpose();
    grads.b2 += dz;
    VectorXd dd = p.w2.transpose() * dz;
    VectorXd dg = t.dmask.size() ? dd.cwiseProduct(t.dmask) : dd;
    VectorXd da = dg.cwiseProduct((1.0 - t.g.array().square()).matrix());
    grads.w1.noalias() += da * t.h.transpose();
    grads.b1 += da;
    if (!t.buckets.empty()) {
        const VectorXd dh = p.w1.transpose() * da / static_cast<double>(t.buckets.size());
        for (auto bkt : t.buckets) {
            auto [it, inserted] =
                grads.embedding_rows.try_emplace(bkt, VectorXd::Zero(p.arch.hidden_dim));
            it->second += dh;
        }
    }
}

/// Forward+backward over one micro-batch. `masks` must hold 2B dropout
/// masks (rows 0..B-1 view one, B..2B-1 view two); pass nullptr to train
/// without dropout. Returns the batch loss.
inline double simcse_batch_backward(const ReferenceEncoderParams& p,
                                    const std::vector<std::string>& batch, double tau,
                                    const std::vector<VectorXd>* masks,
                                    EncoderGrads& grads) {
    const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
    if (b == 0) throw ValidationError("simcse: empty batch");
    if (masks && static_cast<Eigen::Index>(masks->size()) != 2 * b)
        throw ValidationError("simcse: need 2B dropout masks");

    std::vector<EncodeTape> tapes(2 * b);
    MatrixXd views(2 * b, p.arch.out_dim);
    for (Eigen::Index i = 0; i < 2 * b; ++i) {
        const auto& text = batch[static_cast<size_t>(i % b)];
        tapes[i] = encode_tape(p, text, masks ? &(*masks)[i] : nullptr);
        views.row(i) = tapes[i].z.transpose();
    }

    MatrixXd dviews;
    const double loss = simcse_loss_grad(views, tau, dviews);
    for (Eigen::Index i = 0; i < 2 * b; ++i)
        backprop_view(p, tapes[i], dviews.row(i).transpose(), grads);
    return loss;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay; embedding rows update lazily (a row's
// moments advance only when it accumulates gradient).

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    MatrixXd m_emb, v_emb;
    Eigen::VectorXi t_emb;
    MatrixXd m_w1, v_w1, m_w2, v_w2;
    VectorXd m_b1, v_b1, m_b2, v_b2;
    long t_dense = 0;

    explicit AdamW(const ReferenceEncoderParams& p) {
        m_emb = MatrixXd::Zero(p.embedding.rows(), p.embedding.cols());
        v_emb = m_emb;
        t_emb = Eigen::VectorXi::Zero(p.embedding.rows());
        m_w1 = MatrixXd::Zero(p.w1.rows(), p.w1.cols());
        v_w1 = m_w1;
        m_w2 = MatrixXd::Zero(p.w2.rows(), p.w2.cols());
        v_w2 = m_w2;
        m_b1 = VectorXd::Zero(p.b1.size());
        v_b1 = m_b1;
        m_b2 = VectorXd::Zero(p.b2.size());
        v_b2 = m_b2;
    }

    template <typename P, typename G, typename M>
    void update_dense(P&& param, const G& grad, M& m, M& v, long t, double step_lr) {
        m = beta1 * m + (1 - beta1) * grad;
        v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1 - std::pow(beta2, static_cast<double>(t));
        param -= step_lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + eps)).matrix();
        if (weight_decay > 0) param -= step_lr * weight_decay * param;
    }

    void step(ReferenceEncoderParams& p, const EncoderGrads& grads, double step_lr) {
        ++t_dense;
        update_dense(p.w1, grads.w1, m_w1, v_w1, t_dense, step_lr);
        update_dense(p.b1, grads.b1, m_b1, v_b1, t_dense, step_lr);
        update_dense(p.w2, grads.w2, m_w2, v_w2, t_dense, step_lr);
        update_dense(p.b2, grads.b2, m_b2, v_b2, t_dense, step_lr);
        for (const auto& [row, g] : grads.embedding_rows) {
            const int t = ++t_emb(row);
            auto m = m_emb.row(row);
            auto v = v_emb.row(row);
            m = beta1 * m + (1 - beta1) * g.transpose();
            v = beta2 * v + (1 - beta2) * g.transpose().cwiseProduct(g.transpose());
            const double bc1 = 1 - std::pow(beta1, t);
            const double bc2 = 1 - std::pow(beta2, t);
            p.embedding.row(row) -=
                step_lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + eps)).matrix();
            if (weight_decay > 0) p.embedding.row(row) -= step_lr * weight_decay * p.embedding.row(row);
        }
    }
};

// ---------------------------------------------------------------------------
// Training loop

struct SimCSEConfig {
    int epochs = 1;
    int batch_size = 128;
    double learning_rate = 2e-5;
    std::size_t max_training_samples = 200000;
    double warmup_ratio = 0.05;
    double grad_clip_norm = 1.0;
    int grad_accum_steps = 4;
    std::uint32_t max_seq_tokens = 256;
    double temperature = 0.05;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("simcse: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("simcse: batch_size must be >= 1");
        if (temperature <= 0) throw ConfigError("simcse: temperature must be > 0");
        if (dropout_rate < 0 || dropout_rate >= 1)
            throw ConfigError("simcse: dropout_rate must be in [0,1)");
        if (grad_accum_steps < 1) throw ConfigError("simcse: grad_accum_steps must be >= 1");
        if (warmup_ratio < 0 || warmup_ratio > 1)
            throw ConfigError("simcse: warmup_ratio must be in [0,1]");
        if (max_training_samples == 0)
            throw ConfigError("simcse: max_training_samples must be > 0");
    }

    static SimCSEConfig from_json(const json& j) {
        strict_keys(j, {"epochs", "batch_size", "learning_rate", "max_training_samples",
                        "warmup_ratio", "grad_clip_norm", "grad_accum_steps", "max_seq_tokens",
                        "temperature", "dropout_rate", "seed"},
                    "encoder.simcse");
        SimCSEConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.max_training_samples = j.value("max_training_samples", c.max_training_samples);
        c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
        c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
        c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
        c.max_seq_tokens = j.value("max_seq_tokens", c.max_seq_tokens);
        c.temperature = j.value("temperature", c.temperature);
        c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    }

    json to_json() const {
        return json{{"epochs", epochs},
                    {"batch_size", batch_size},
                    {"learning_rate", learning_rate},
                    {"max_training_samples", max_training_samples},
                    {"warmup_ratio", warmup_ratio},
                    {"grad_clip_norm", grad_clip_norm},
                    {"grad_accum_steps", grad_accum_steps},
                    {"max_seq_tokens", max_seq_tokens},
                    {"temperature", temperature},
                    {"dropout_rate", dropout_rate},
                    {"seed", seed}};
    }
};

struct TrainReport {
    std::vector<double> step_losses;  // one entry per micro-batch
    std::size_t unique_sentences = 0;
    std::size_t optimizer_updates = 0;
    std::vector<std::string> warnings;
};

/// Adapts the encoder in place with unsupervised SimCSE. The corpus is
/// deduplicated to unique sentences and truncated to max_training_samples
/// by uniform seeded sampling. Linear warmup then constant rate; gradients
/// accumulate over grad_accum_steps micro-batches, get clipped by global
/// norm, then feed AdamW.
inline TrainReport train_simcse(const std::vector<std::string>& corpus,
                                const SimCSEConfig& config, ReferenceEncoderParams& params) {
    config.validate();
    params.arch.dropout_rate = config.dropout_rate;
    params.arch.max_seq_tokens = config.max_seq_tokens;

    std::vector<std::string> unique;
    {
        std::set<std::string_view> seen;
        for (const auto& s : corpus)
            if (seen.insert(s).second) unique.push_back(s);
    }
    if (unique.empty()) throw ValidationError("simcse: empty training corpus");

    TrainReport report;
    if (unique.size() > config.max_training_samples) {
        std::mt19937_64 sample_rng(stage_seed(config.seed, "simcse-sample"));
        std::vector<std::string> sampled;
        std::sample(unique.begin(), unique.end(), std::back_inserter(sampled),
                    config.max_training_samples, sample_rng);
        unique = std::move(sampled);
    }
    report.unique_sentences = unique.size();
    if (unique.size() < static_cast<size_t>(config.batch_size))
        report.warnings.push_back("corpus smaller than one batch (" +
                                  std::to_string(unique.size()) + " < " +
                                  std::to_string(config.batch_size) + "); batch shrunk");

    const size_t n = unique.size();
    const size_t micros_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const size_t total_micros = micros_per_epoch * static_cast<size_t>(config.epochs);
    const size_t total_updates =
        (total_micros + config.grad_accum_steps - 1) / config.grad_accum_steps;
    const size_t warmup_updates = std::max<size_t>(
        1, static_cast<size_t>(std::llround(config.warmup_ratio *
                                            static_cast<double>(total_updates))));

    AdamW opt(params);
    opt.lr = config.learning_rate;

    std::mt19937_64 view_rng(stage_seed(config.seed, "simcse-views"));
    EncoderGrads accum(params.arch);
    int accum_count = 0;
    size_t update_idx = 0;

    auto flush = [&]() {
        if (accum_count == 0) return;
        const double scale = 1.0 / accum_count;
        accum.w1 *= scale;
        accum.b1 *= scale;
        accum.w2 *= scale;
        accum.b2 *= scale;
        for (auto& [_, g] : accum.embedding_rows) g *= scale;

        double sq = accum.w1.squaredNorm() + accum.b1.squaredNorm() +
                    accum.w2.squaredNorm() + accum.b2.squaredNorm();
        for (const auto& [_, g] : accum.embedding_rows) sq += g.squaredNorm();
        const double norm = std::sqrt(sq);
        if (config.grad_clip_norm > 0 && norm > config.grad_clip_norm) {
            const double clip = config.grad_clip_norm / norm;
            accum.w1 *= clip;
            accum.b1 *= clip;
            accum.w2 *= clip;
            accum.b2 *= clip;
            for (auto& [_, g] : accum.embedding_rows) g *= clip;
        }

        const double warm =
            std::min(1.0, static_cast<double>(update_idx + 1) / warmup_updates);
        opt.step(params, accum, config.learning_rate * warm);
        ++update_idx;
        accum = EncoderGrads(params.arch);
        accum_count = 0;
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::mt19937_64 shuffle_rng(stage_seed(config.seed, "simcse-epoch") +
                                    static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        for (size_t start = 0; start < n; start += config.batch_size) {
            const size_t end = std::min(n, start + config.batch_size);
            std::vector<std::string> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(unique[order[i]]);

            std::vector<VectorXd> masks(2 * batch.size());
            for (auto& m : masks) m = make_dropout_mask(params.arch, view_rng);

            const double loss =
                simcse_batch_backward(params, batch, config.temperature, &masks, accum);
            report.step_losses.push_back(loss);
            ++accum_count;
            if (accum_count == config.grad_accum_steps) flush();
        }
    }
    flush();
    report.optimizer_updates = update_idx;
    return report;
}

}  // namespace paregta
