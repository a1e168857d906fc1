#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "paregta/cohort.hpp"
#include "paregta/downstream.hpp"
#include "paregta/encoder.hpp"
#include "paregta/events.hpp"
#include "paregta/external_encoder.hpp"
#include "paregta/factors.hpp"
#include "paregta/pooling.hpp"
#include "paregta/representation.hpp"
#include "paregta/rss.hpp"
#include "paregta/synth.hpp"
#include "paregta/textualize.hpp"

namespace paregta {

struct EncoderSection {
    EncoderArch arch;
    SimCSEConfig simcse;
    std::optional<json> external;  // external-encoder spec; skips training
};

struct AttentionTrainerSection {
    bool enabled = false;
    AttentionTrainerConfig config;
};

struct RepresentationSection {
    double variance_target = 0.95;
    bool include_demographics = true;
    size_t baseline_vocab_cap = 256;
};

struct ProbeSection {
    std::vector<double> lambda_scale_grid = {0.01, 0.1, 1.0, 10.0};  // divided by n_train
    int cv_folds = 5;
    int smote_k = 5;
};

struct GeometrySection {
    double t = 2.0;
    size_t max_rows = 2000;
};

struct RssSection {
    size_t min_support = 10;
};

// Every stage's configuration in one validated document; unknown keys are
// rejected and all randomness fans out from the single global seed.
struct PipelineConfig {
    std::uint64_t seed = 42;
    std::optional<SynthConfig> synth;
    std::optional<std::string> ingest_input;  // events file; synth output if absent
    ColumnSchema schema;
    std::optional<DiagnosisTaxonomy> taxonomy;  // derived from synth when absent
    int window_radius_days = 3;
    TemporalScheme scheme = TemporalScheme::Gap;
    EncoderSection encoder;
    PoolingConfig pooling;
    AttentionTrainerSection attention;
    RepresentationSection representation;
    SplitSpec split;
    ProbeSection probe;
    GeometrySection geometry;
    std::vector<FactorSpec> factors;
    RssSection rss;

    DiagnosisTaxonomy effective_taxonomy() const {
        if (taxonomy) return *taxonomy;
        if (synth) return synth->taxonomy();
        throw ConfigError("config needs a taxonomy section (or a synth section to derive one)");
    }

    std::vector<FactorSpec> effective_factors() const {
        if (!factors.empty()) return factors;
        if (synth) return synth->factor_specs();
        return {};
    }

    static PipelineConfig from_json(const json& j) {
        strict_keys(j, {"seed", "synth", "ingest", "taxonomy", "cohort", "textualize", "encoder",
                        "pooling", "attention_trainer", "representation", "split", "probe",
                        "geometry", "factors", "rss"},
                    "config");
        PipelineConfig c;
        c.seed = j.value("seed", c.seed);
        if (j.contains("synth")) c.synth = SynthConfig::from_json(j.at("synth"));
        if (j.contains("ingest")) {
            strict_keys(j.at("ingest"), {"input", "schema"}, "ingest");
            if (j.at("ingest").contains("input"))
                c.ingest_input = j.at("ingest").at("input").get<std::string>();
            if (j.at("ingest").contains("schema"))
                c.schema = ColumnSchema::from_json(j.at("ingest").at("schema"));
        }
        if (j.contains("taxonomy")) c.taxonomy = DiagnosisTaxonomy::from_json(j.at("taxonomy"));
        if (j.contains("cohort")) {
            strict_keys(j.at("cohort"), {"window_radius_days"}, "cohort");
            c.window_radius_days = j.at("cohort").value("window_radius_days", 3);
        }
        if (j.contains("textualize")) {
            strict_keys(j.at("textualize"), {"scheme"}, "textualize");
            c.scheme = scheme_from_name(j.at("textualize").value("scheme", "gap"));
        }
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            strict_keys(e, {"vocab_size", "hidden_dim", "out_dim", "simcse", "external"},
                        "encoder");
            c.encoder.arch.vocab_size = e.value("vocab_size", c.encoder.arch.vocab_size);
            c.encoder.arch.hidden_dim = e.value("hidden_dim", c.encoder.arch.hidden_dim);
            c.encoder.arch.out_dim = e.value("out_dim", c.encoder.arch.out_dim);
            if (e.contains("simcse")) c.encoder.simcse = SimCSEConfig::from_json(e.at("simcse"));
            if (e.contains("external")) c.encoder.external = e.at("external");
        }
        c.encoder.arch.max_seq_tokens = c.encoder.simcse.max_seq_tokens;
        c.encoder.arch.dropout_rate = c.encoder.simcse.dropout_rate;
        c.encoder.arch.validate();
        if (j.contains("pooling")) c.pooling = PoolingConfig::from_json(j.at("pooling"));
        if (j.contains("attention_trainer")) {
            json a = j.at("attention_trainer");
            c.attention.enabled = a.value("enabled", false);
            a.erase("enabled");
            c.attention.config = AttentionTrainerConfig::from_json(a);
        }
        if (j.contains("representation")) {
            const auto& r = j.at("representation");
            strict_keys(r, {"variance_target", "include_demographics", "baseline_vocab_cap"},
                        "representation");
            c.representation.variance_target =
                r.value("variance_target", c.representation.variance_target);
            c.representation.include_demographics =
                r.value("include_demographics", c.representation.include_demographics);
            c.representation.baseline_vocab_cap =
                r.value("baseline_vocab_cap", c.representation.baseline_vocab_cap);
        }
        if (j.contains("split")) c.split = SplitSpec::from_json(j.at("split"));
        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            strict_keys(p, {"lambda_scale_grid", "cv_folds", "smote_k"}, "probe");
            if (p.contains("lambda_scale_grid"))
                c.probe.lambda_scale_grid = p.at("lambda_scale_grid").get<std::vector<double>>();
            c.probe.cv_folds = p.value("cv_folds", c.probe.cv_folds);
            c.probe.smote_k = p.value("smote_k", c.probe.smote_k);
        }
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            strict_keys(g, {"t", "max_rows"}, "geometry");
            c.geometry.t = g.value("t", c.geometry.t);
            c.geometry.max_rows = g.value("max_rows", c.geometry.max_rows);
        }
        if (j.contains("factors")) c.factors = factors_from_json(j.at("factors"));
        if (j.contains("rss")) {
            strict_keys(j.at("rss"), {"min_support"}, "rss");
            c.rss.min_support = j.at("rss").value("min_support", c.rss.min_support);
        }
        return c;
    }
};

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    return PipelineConfig::from_json(read_json(path));
}

/// The one split every stage shares, derived from the global seed.
inline Split pipeline_split(const PipelineConfig& config, const Cohort& cohort) {
    SplitSpec spec = config.split;
    spec.seed = stage_seed(config.seed, "split") ^ spec.seed;
    return split_cohort(cohort, spec);
}

// ---------------------------------------------------------------------------
// Orchestrator

struct StageResult {
    std::string stage;
    std::map<std::string, std::string> inputs;   // path -> fingerprint
    std::map<std::string, std::string> outputs;  // path -> fingerprint
    long wall_ms = 0;
};

class PipelineRunner {
public:
    PipelineRunner(PipelineConfig config, std::filesystem::path out_dir)
        : config_(std::move(config)), out_(std::move(out_dir)) {
        std::filesystem::create_directories(out_);
    }

    static const std::vector<std::string>& stage_names() {
        static const std::vector<std::string> names = {
            "synth",      "ingest",       "build-cohort", "textualize", "train-encoder",
            "encode",     "train-pooler", "pool",         "represent",  "fit-probe",
            "evaluate",   "geometry",     "rss"};
        return names;
    }

    std::filesystem::path artifact(const std::string& name) const { return out_ / name; }

    /// Runs one stage (inputs must exist) or "all".
    StageResult run(const std::string& stage);
    std::vector<StageResult> run_all();

    const PipelineConfig& config() const { return config_; }

private:
    void require(const std::string& stage, const std::string& file,
                 const std::string& producer) const {
        if (!std::filesystem::exists(artifact(file)))
            throw MissingArtifactError("stage '" + stage + "' needs missing artifact '" + file +
                                       "'; run stage '" + producer + "' first");
    }

    void note_input(StageResult& r, const std::string& file) const {
        r.inputs[file] = file_fingerprint(artifact(file));
    }

    void note_output(StageResult& r, const std::string& file) const {
        r.outputs[file] = file_fingerprint(artifact(file));
    }

    Split compute_split(const Cohort& cohort) const { return pipeline_split(config_, cohort); }

    bool external_encoder() const { return config_.encoder.external.has_value(); }

    EncoderHandle open_concept_encoder(ClinicalConcept c) const {
        EncoderHandle h;
        if (external_encoder()) {
            h.external = open_external_encoder(*config_.encoder.external);
        } else {
            h.reference = load_encoder_params(
                artifact("encoder_" + concept_name(c) + ".params"));
        }
        return h;
    }

    // Pooled vectors keyed by patient id, from a PRGT + sidecar pair.
    PooledVectors load_pooled(const std::string& file) const {
        const MatrixRXf m = read_prgt(artifact(file));
        const auto refs = read_sidecar(sidecar_path(artifact(file)));
        if (static_cast<Eigen::Index>(refs.size()) != m.rows())
            throw ValidationError(file + ": sidecar/matrix row mismatch");
        PooledVectors out;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            out[refs[static_cast<size_t>(i)].patient_id] =
                m.row(i).transpose().cast<double>();
        return out;
    }

    struct RepsOnDisk {
        MatrixXd features;
        std::vector<std::string> ids;
    };

    RepsOnDisk load_reps(const std::string& file) const {
        RepsOnDisk r;
        const MatrixRXf m = read_prgt(artifact(file));
        r.features = m.cast<double>();
        for (const auto& ref : read_sidecar(sidecar_path(artifact(file))))
            r.ids.push_back(ref.patient_id);
        if (static_cast<Eigen::Index>(r.ids.size()) != r.features.rows())
            throw ValidationError(file + ": sidecar/matrix row mismatch");
        return r;
    }

    void do_synth(StageResult& r);
    void do_ingest(StageResult& r);
    void do_build_cohort(StageResult& r);
    void do_textualize(StageResult& r);
    void do_train_encoder(StageResult& r);
    void do_encode(StageResult& r);
    void do_train_pooler(StageResult& r);
    void do_pool(StageResult& r);
    void do_represent(StageResult& r);
    void do_fit_probe(StageResult& r);
    void do_evaluate(StageResult& r);
    void do_geometry(StageResult& r);
    void do_rss(StageResult& r);

    void update_manifest(const StageResult& r);

    PipelineConfig config_;
    std::filesystem::path out_;
};

// ---------------------------------------------------------------------------

inline StageResult PipelineRunner::run(const std::string& stage) {
    StageResult result;
    result.stage = stage;
    const auto start = std::chrono::steady_clock::now();

    if (stage == "synth") do_synth(result);
    else if (stage == "ingest") do_ingest(result);
    else if (stage == "build-cohort") do_build_cohort(result);
    else if (stage == "textualize") do_textualize(result);
    else if (stage == "train-encoder") do_train_encoder(result);
    else if (stage == "encode") do_encode(result);
    else if (stage == "train-pooler") do_train_pooler(result);
    else if (stage == "pool") do_pool(result);
    else if (stage == "represent") do_represent(result);
    else if (stage == "fit-probe") do_fit_probe(result);
    else if (stage == "evaluate") do_evaluate(result);
    else if (stage == "geometry") do_geometry(result);
    else if (stage == "rss") do_rss(result);
    else throw ConfigError("unknown stage '" + stage + "'");

    result.wall_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                           std::chrono::steady_clock::now() - start)
                                           .count());
    update_manifest(result);
    return result;
}

inline std::vector<StageResult> PipelineRunner::run_all() {
    std::vector<StageResult> results;
    for (const auto& stage : stage_names()) {
        if (stage == "synth" && !config_.synth) continue;
        if (stage == "train-encoder" && external_encoder()) continue;
        if (stage == "train-pooler" && !config_.attention.enabled) continue;
        results.push_back(run(stage));
    }
    return results;
}

inline void PipelineRunner::do_synth(StageResult& r) {
    if (!config_.synth) throw ConfigError("stage 'synth' needs a synth config section");
    SynthConfig sc = *config_.synth;
    sc.seed = stage_seed(config_.seed, "synth") ^ sc.seed;
    const auto res = generate(sc);
    {
        std::ofstream out(artifact("events.csv"));
        serialize_events(res.events, out, config_.schema);
    }
    write_json(artifact("synth_manifest.json"), res.manifest);
    note_output(r, "events.csv");
    note_output(r, "synth_manifest.json");
}

inline void PipelineRunner::do_ingest(StageResult& r) {
    std::filesystem::path input;
    if (config_.ingest_input) {
        input = *config_.ingest_input;
        if (!std::filesystem::exists(input))
            throw MissingArtifactError("ingest input '" + input.string() + "' does not exist");
    } else {
        require("ingest", "events.csv", "synth");
        input = artifact("events.csv");
        note_input(r, "events.csv");
    }
    std::ifstream in(input);
    if (!in) throw IoError("cannot open " + input.string());
    const auto parsed = parse_events(in, config_.schema);
    write_events_jsonl(artifact("records.jsonl"), parsed.records);
    json diag = json::array();
    for (const auto& d : parsed.rejected) diag.push_back(d.reason);
    write_json(artifact("ingest_diagnostics.json"),
               json{{"accepted", parsed.records.size()},
                    {"rejected", parsed.rejected.size()},
                    {"reasons", diag}});
    note_output(r, "records.jsonl");
    note_output(r, "ingest_diagnostics.json");
}

inline void PipelineRunner::do_build_cohort(StageResult& r) {
    require("build-cohort", "records.jsonl", "ingest");
    note_input(r, "records.jsonl");
    const auto events = read_events_jsonl(artifact("records.jsonl"));
    const Cohort cohort =
        build_cohort(events, config_.effective_taxonomy(), config_.window_radius_days);
    write_cohort(artifact("cohort.jsonl"), cohort);
    write_json(artifact("cohort_summary.json"), cohort_summary(cohort));
    note_output(r, "cohort.jsonl");
    note_output(r, "cohort_summary.json");
}

inline void PipelineRunner::do_textualize(StageResult& r) {
    require("textualize", "cohort.jsonl", "build-cohort");
    note_input(r, "cohort.jsonl");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    write_visit_texts(artifact("texts.jsonl"), render_cohort(cohort, config_.scheme));
    note_output(r, "texts.jsonl");
}

inline void PipelineRunner::do_train_encoder(StageResult& r) {
    if (external_encoder())
        throw ConfigError("train-encoder does not apply to an external encoder");
    require("train-encoder", "texts.jsonl", "textualize");
    require("train-encoder", "cohort.jsonl", "build-cohort");
    note_input(r, "texts.jsonl");
    note_input(r, "cohort.jsonl");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    const auto split = compute_split(cohort);
    const std::set<std::string> train_ids(split.train.begin(), split.train.end());
    const auto texts = read_visit_texts(artifact("texts.jsonl"));

    // One encoder instance per concept; the two never share parameters.
    for (ClinicalConcept c : {ClinicalConcept::Medication, ClinicalConcept::Comorbidity}) {
        std::vector<std::string> corpus;
        for (const auto& vt : texts)
            if (vt.concept_kind == c && train_ids.count(vt.patient_id))
                corpus.push_back(vt.text);
        SimCSEConfig sim = config_.encoder.simcse;
        sim.seed = stage_seed(config_.seed, "train-encoder") ^ fnv1a64(concept_name(c));
        auto params = ReferenceEncoderParams::init(config_.encoder.arch, sim.seed);
        const auto report = train_simcse(corpus, sim, params);
        const std::string file = "encoder_" + concept_name(c) + ".params";
        save_encoder_params(artifact(file), params);
        note_output(r, file);
        std::vector<json> trace;
        for (double l : report.step_losses) trace.push_back(l);
        write_json(artifact("train_" + concept_name(c) + "_trace.json"),
                   json{{"step_losses", trace},
                        {"unique_sentences", report.unique_sentences},
                        {"optimizer_updates", report.optimizer_updates},
                        {"warnings", report.warnings}});
        note_output(r, "train_" + concept_name(c) + "_trace.json");
    }
}

inline void PipelineRunner::do_encode(StageResult& r) {
    require("encode", "texts.jsonl", "textualize");
    note_input(r, "texts.jsonl");
    const auto texts = read_visit_texts(artifact("texts.jsonl"));
    for (ClinicalConcept c : {ClinicalConcept::Medication, ClinicalConcept::Comorbidity}) {
        if (!external_encoder()) {
            const std::string params_file = "encoder_" + concept_name(c) + ".params";
            require("encode", params_file, "train-encoder");
            note_input(r, params_file);
        }
        const EncoderHandle enc = open_concept_encoder(c);
        std::vector<RowRef> refs;
        std::vector<VectorXd> rows;
        for (const auto& vt : texts) {
            if (vt.concept_kind != c) continue;
            const std::string id =
                vt.patient_id + "/" + vt.visit_date.to_string() + "/" + concept_name(c);
            rows.push_back(enc.encode_text(id, vt.text));
            refs.push_back({vt.patient_id, vt.visit_date.to_string(), concept_name(c)});
        }
        MatrixRXf m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? enc.dim() : rows.front().size());
        for (size_t i = 0; i < rows.size(); ++i)
            m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose().cast<float>();
        const std::string file = "emb_" + concept_name(c) + ".prgt";
        write_prgt(artifact(file), m);
        write_sidecar(sidecar_path(artifact(file)), refs);
        note_output(r, file);
    }
}

inline void PipelineRunner::do_train_pooler(StageResult& r) {
    require("train-pooler", "cohort.jsonl", "build-cohort");
    require("train-pooler", "emb_meds.prgt", "encode");
    require("train-pooler", "emb_comorb.prgt", "encode");
    note_input(r, "cohort.jsonl");
    note_input(r, "emb_meds.prgt");
    note_input(r, "emb_comorb.prgt");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    const auto split = compute_split(cohort);
    const std::set<std::string> train_ids(split.train.begin(), split.train.end());

    std::map<std::string, bool> label_of;
    std::map<std::string, std::vector<Date>> dates_of;
    for (const auto& p : cohort.patients) {
        label_of[p.patient_id] = p.chronic;
        for (const auto& v : p.visits) dates_of[p.patient_id].push_back(v.visit_date);
    }

    // One sequence per (training patient, concept); the scorer is shared.
    std::vector<VisitSequence> seqs;
    std::vector<int> labels;
    Eigen::Index dim = 0;
    for (const std::string file : {"emb_meds.prgt", "emb_comorb.prgt"}) {
        const MatrixRXf m = read_prgt(artifact(file));
        const auto refs = read_sidecar(sidecar_path(artifact(file)));
        dim = m.cols();
        std::map<std::string, std::vector<Eigen::Index>> rows_of;
        for (size_t i = 0; i < refs.size(); ++i)
            rows_of[refs[i].patient_id].push_back(static_cast<Eigen::Index>(i));
        for (const auto& p : cohort.patients) {
            if (!train_ids.count(p.patient_id)) continue;
            const auto& rows = rows_of[p.patient_id];
            VisitSequence s;
            s.embeddings.resize(static_cast<Eigen::Index>(rows.size()), m.cols());
            for (size_t k = 0; k < rows.size(); ++k)
                s.embeddings.row(static_cast<Eigen::Index>(k)) =
                    m.row(rows[k]).cast<double>();
            s.times = dates_of[p.patient_id];
            seqs.push_back(std::move(s));
            labels.push_back(p.chronic ? 1 : 0);
        }
    }

    AttentionTrainerConfig tc = config_.attention.config;
    tc.seed = stage_seed(config_.seed, "train-pooler") ^ tc.seed;
    auto scorer = AttentionScorerParams::init(dim, tc.hidden_dim, tc.seed);
    const auto report = train_attention_scorer(seqs, labels, config_.pooling, tc, scorer);
    save_scorer(artifact("scorer.json"), scorer);
    note_output(r, "scorer.json");
    std::vector<json> losses;
    for (double l : report.epoch_losses) losses.push_back(l);
    write_json(artifact("train_pooler_trace.json"),
               json{{"epoch_losses", losses}, {"triplets", report.triplets}});
    note_output(r, "train_pooler_trace.json");
}

inline void PipelineRunner::do_pool(StageResult& r) {
    require("pool", "cohort.jsonl", "build-cohort");
    note_input(r, "cohort.jsonl");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    std::optional<AttentionScorerParams> scorer;
    if (config_.attention.enabled) {
        require("pool", "scorer.json", "train-pooler");
        note_input(r, "scorer.json");
        scorer = load_scorer(artifact("scorer.json"));
    }
    for (ClinicalConcept c : {ClinicalConcept::Medication, ClinicalConcept::Comorbidity}) {
        const std::string in_file = "emb_" + concept_name(c) + ".prgt";
        require("pool", in_file, "encode");
        note_input(r, in_file);
        const MatrixRXf m = read_prgt(artifact(in_file));
        const auto refs = read_sidecar(sidecar_path(artifact(in_file)));

        std::map<std::string, std::vector<size_t>> rows_of;
        for (size_t i = 0; i < refs.size(); ++i) rows_of[refs[i].patient_id].push_back(i);

        MatrixRXf pooled(static_cast<Eigen::Index>(cohort.patients.size()), m.cols());
        std::vector<RowRef> out_refs;
        Eigen::Index row = 0;
        for (const auto& p : cohort.patients) {
            const auto it = rows_of.find(p.patient_id);
            if (it == rows_of.end())
                throw ValidationError("pool: no embeddings for patient '" + p.patient_id + "'");
            VisitSequence seq;
            seq.embeddings.resize(static_cast<Eigen::Index>(it->second.size()), m.cols());
            for (size_t k = 0; k < it->second.size(); ++k) {
                seq.embeddings.row(static_cast<Eigen::Index>(k)) =
                    m.row(static_cast<Eigen::Index>(it->second[k])).cast<double>();
                seq.times.push_back(Date::parse(refs[it->second[k]].visit_date));
            }
            pooled.row(row++) =
                hybrid_pool(seq, config_.pooling, scorer ? &*scorer : nullptr)
                    .transpose()
                    .cast<float>();
            out_refs.push_back({p.patient_id, p.last_visit().to_string(), concept_name(c)});
        }
        const std::string out_file = "pooled_" + concept_name(c) + ".prgt";
        write_prgt(artifact(out_file), pooled);
        write_sidecar(sidecar_path(artifact(out_file)), out_refs);
        note_output(r, out_file);
    }
}

inline void PipelineRunner::do_represent(StageResult& r) {
    require("represent", "cohort.jsonl", "build-cohort");
    require("represent", "pooled_meds.prgt", "pool");
    require("represent", "pooled_comorb.prgt", "pool");
    note_input(r, "cohort.jsonl");
    note_input(r, "pooled_meds.prgt");
    note_input(r, "pooled_comorb.prgt");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    const auto split = compute_split(cohort);
    const auto pooled_meds = load_pooled("pooled_meds.prgt");
    const auto pooled_comorb = load_pooled("pooled_comorb.prgt");

    const FittedTransform transform = fit_transform(
        cohort, split.train, pooled_meds, pooled_comorb, config_.representation.variance_target,
        config_.representation.include_demographics);
    save_transform(artifact("transform.json"), transform);
    note_output(r, "transform.json");

    const auto reps = assemble(cohort, pooled_meds, pooled_comorb, transform);
    MatrixRXf m(static_cast<Eigen::Index>(reps.size()),
                reps.empty() ? 0 : reps.front().features.size());
    std::vector<RowRef> refs;
    for (size_t i = 0; i < reps.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = reps[i].features.transpose().cast<float>();
        refs.push_back({reps[i].patient_id, "", ""});
    }
    write_prgt(artifact("reps.prgt"), m);
    write_sidecar(sidecar_path(artifact("reps.prgt")), refs);
    write_json(artifact("reps.meta.json"),
               json{{"layout", transform.layout().to_json()},
                    {"split",
                     json{{"train", split.train},
                          {"test", split.test},
                          {"attribution", split.attribution}}}});
    note_output(r, "reps.prgt");
    note_output(r, "reps.meta.json");

    // Sparse baselines share the cohort, split, and demographics block.
    const BaselineSpec bspec = fit_baseline_spec(
        cohort, split.train, config_.effective_factors(),
        config_.representation.baseline_vocab_cap, config_.representation.include_demographics);
    for (auto [kind, name] : {std::pair{BaselineKind::OneHot, "baseline_onehot.prgt"},
                              std::pair{BaselineKind::CountBoC, "baseline_boc.prgt"}}) {
        const auto base = build_baseline(cohort, bspec, kind);
        MatrixRXf bm(static_cast<Eigen::Index>(base.size()),
                     base.empty() ? 0 : base.front().features.size());
        std::vector<RowRef> brefs;
        for (size_t i = 0; i < base.size(); ++i) {
            bm.row(static_cast<Eigen::Index>(i)) = base[i].features.transpose().cast<float>();
            brefs.push_back({base[i].patient_id, "", ""});
        }
        write_prgt(artifact(name), bm);
        write_sidecar(sidecar_path(artifact(name)), brefs);
        note_output(r, name);
    }
}

namespace detail {

struct LabeledMatrix {
    MatrixXd x;
    std::vector<int> y;
};

inline LabeledMatrix select_rows(const MatrixXd& features, const std::vector<std::string>& ids,
                                 const std::map<std::string, bool>& label_of,
                                 const std::vector<std::string>& wanted) {
    std::map<std::string, Eigen::Index> row_of;
    for (size_t i = 0; i < ids.size(); ++i) row_of[ids[i]] = static_cast<Eigen::Index>(i);
    LabeledMatrix out;
    out.x.resize(static_cast<Eigen::Index>(wanted.size()), features.cols());
    out.y.reserve(wanted.size());
    for (size_t i = 0; i < wanted.size(); ++i) {
        auto it = row_of.find(wanted[i]);
        if (it == row_of.end())
            throw ValidationError("representation missing patient '" + wanted[i] + "'");
        out.x.row(static_cast<Eigen::Index>(i)) = features.row(it->second);
        out.y.push_back(label_of.at(wanted[i]) ? 1 : 0);
    }
    return out;
}

}  // namespace detail

inline void PipelineRunner::do_fit_probe(StageResult& r) {
    require("fit-probe", "cohort.jsonl", "build-cohort");
    require("fit-probe", "reps.prgt", "represent");
    note_input(r, "cohort.jsonl");
    note_input(r, "reps.prgt");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    const auto split = compute_split(cohort);
    const auto reps = load_reps("reps.prgt");
    std::map<std::string, bool> label_of;
    for (const auto& p : cohort.patients) label_of[p.patient_id] = p.chronic;
    const auto train = detail::select_rows(reps.features, reps.ids, label_of, split.train);

    std::vector<double> grid;
    for (double s : config_.probe.lambda_scale_grid)
        grid.push_back(s / static_cast<double>(train.y.size()));
    const auto fit = fit_probe(train.x, train.y, grid, config_.probe.cv_folds,
                               stage_seed(config_.seed, "fit-probe"), config_.probe.smote_k);

    json probe_json = fit.model.to_json();
    json folds = json::array();
    for (double a : fit.cv.fold_aucs) folds.push_back(a);
    json grid_json = json::object();
    for (const auto& [l, a] : fit.cv.lambda_mean_auc)
        grid_json[std::to_string(l)] = a;
    probe_json["cv"] = json{{"best_lambda", fit.cv.best_lambda},
                            {"fold_aucs", folds},
                            {"lambda_mean_auc", grid_json}};
    write_json(artifact("probe.json"), probe_json);
    note_output(r, "probe.json");
}

inline void PipelineRunner::do_evaluate(StageResult& r) {
    require("evaluate", "cohort.jsonl", "build-cohort");
    require("evaluate", "reps.prgt", "represent");
    require("evaluate", "probe.json", "fit-probe");
    note_input(r, "reps.prgt");
    note_input(r, "probe.json");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    const auto split = compute_split(cohort);
    const auto reps = load_reps("reps.prgt");
    std::map<std::string, bool> label_of;
    for (const auto& p : cohort.patients) label_of[p.patient_id] = p.chronic;
    const auto test = detail::select_rows(reps.features, reps.ids, label_of, split.test);

    const json probe_json = read_json(artifact("probe.json"));
    const ProbeModel probe = ProbeModel::from_json(probe_json);
    const auto metrics = evaluate(probe, test.x, test.y);
    json out{{"acc", metrics.acc}, {"auc", metrics.auc}};
    if (probe_json.contains("cv")) out["per_fold"] = probe_json.at("cv").at("fold_aucs");
    write_json(artifact("metrics.json"), out);
    note_output(r, "metrics.json");
}

inline void PipelineRunner::do_geometry(StageResult& r) {
    require("geometry", "emb_meds.prgt", "encode");
    require("geometry", "emb_comorb.prgt", "encode");
    note_input(r, "emb_meds.prgt");
    note_input(r, "emb_comorb.prgt");
    json out = json::object();
    std::mt19937_64 rng(stage_seed(config_.seed, "geometry"));
    for (const std::string file : {"emb_meds.prgt", "emb_comorb.prgt"}) {
        MatrixXd m = read_prgt(artifact(file)).cast<double>();
        if (static_cast<size_t>(m.rows()) > config_.geometry.max_rows) {
            std::vector<Eigen::Index> idx(static_cast<size_t>(m.rows()));
            std::iota(idx.begin(), idx.end(), 0);
            std::shuffle(idx.begin(), idx.end(), rng);
            MatrixXd sampled(static_cast<Eigen::Index>(config_.geometry.max_rows), m.cols());
            for (size_t i = 0; i < config_.geometry.max_rows; ++i)
                sampled.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
            m = std::move(sampled);
        }
        const auto rep = geometry(m, config_.geometry.t);
        out[file.substr(4, file.find('.') - 4)] = json{{"uniformity", rep.uniformity},
                                                       {"spectral_flatness", rep.spectral_flatness},
                                                       {"top1", rep.top1}};
    }
    write_json(artifact("geometry.json"), out);
    note_output(r, "geometry.json");
}

/// Assembles the frozen attribution pipeline from a run directory's
/// artifacts. The returned encode functions keep their backends alive.
inline FrozenPipeline load_frozen_pipeline(const PipelineConfig& config,
                                           const std::filesystem::path& dir) {
    auto need = [&](const std::string& file, const std::string& producer) {
        if (!std::filesystem::exists(dir / file))
            throw MissingArtifactError("attribution needs missing artifact '" + file +
                                       "'; run stage '" + producer + "' first");
        return dir / file;
    };
    FrozenPipeline pipe;
    pipe.scheme = config.scheme;
    pipe.pooling = config.pooling;
    pipe.transform = load_transform(need("transform.json", "represent"));
    pipe.probe = ProbeModel::from_json(read_json(need("probe.json", "fit-probe")));
    if (config.attention.enabled)
        pipe.scorer = load_scorer(need("scorer.json", "train-pooler"));
    for (ClinicalConcept c : {ClinicalConcept::Medication, ClinicalConcept::Comorbidity}) {
        auto handle = std::make_shared<EncoderHandle>();
        if (config.encoder.external) {
            handle->external = open_external_encoder(*config.encoder.external);
        } else {
            handle->reference = load_encoder_params(
                need("encoder_" + concept_name(c) + ".params", "train-encoder"));
        }
        auto fn = [handle](const std::string& text) {
            return handle->encode_text(text, text);
        };
        (c == ClinicalConcept::Medication ? pipe.encode_meds : pipe.encode_comorb) =
            std::move(fn);
    }
    return pipe;
}

inline void PipelineRunner::do_rss(StageResult& r) {
    require("rss", "cohort.jsonl", "build-cohort");
    require("rss", "transform.json", "represent");
    require("rss", "probe.json", "fit-probe");
    note_input(r, "cohort.jsonl");
    note_input(r, "transform.json");
    note_input(r, "probe.json");
    const Cohort cohort = read_cohort(artifact("cohort.jsonl"));
    const auto split = compute_split(cohort);
    const FrozenPipeline pipe = load_frozen_pipeline(config_, out_);

    std::set<std::string> attribution_ids(split.attribution.begin(), split.attribution.end());
    std::vector<const PatientRecord*> patients;
    for (const auto& p : cohort.patients)
        if (attribution_ids.count(p.patient_id)) patients.push_back(&p);

    const auto result = cohort_attribution(patients, config_.effective_factors(), pipe,
                                           config_.rss.min_support, std::nullopt);
    write_json(artifact("rss.json"), attribution_to_json(result));
    note_output(r, "rss.json");
}

inline void PipelineRunner::update_manifest(const StageResult& r) {
    const auto path = artifact("manifest.json");
    json manifest;
    if (std::filesystem::exists(path)) manifest = read_json(path);
    if (!manifest.contains("stages")) manifest["stages"] = json::object();
    json in = json::object(), out = json::object();
    for (const auto& [k, v] : r.inputs) in[k] = v;
    for (const auto& [k, v] : r.outputs) out[k] = v;
    manifest["stages"][r.stage] =
        json{{"inputs", in}, {"outputs", out}, {"wall_ms", r.wall_ms}};
    write_json(path, manifest);
}

}  // namespace paregta
