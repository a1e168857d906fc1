// paregta: converts longitudinal event records into temporally-aware
// patient representations and factor-importance scores. One subcommand per
// pipeline stage plus run/run-all orchestration.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "paregta/pipeline.hpp"

namespace fs = std::filesystem;
using namespace paregta;

namespace {

ColumnSchema load_schema(const std::string& path) {
    if (path.empty()) return ColumnSchema{};
    return ColumnSchema::from_json(read_json(path));
}

Split split_for(const Cohort& cohort, const std::string& split_config) {
    SplitSpec spec;
    if (!split_config.empty()) spec = SplitSpec::from_json(read_json(split_config));
    return split_cohort(cohort, spec);
}

std::map<std::string, bool> labels_of(const Cohort& cohort) {
    std::map<std::string, bool> m;
    for (const auto& p : cohort.patients) m[p.patient_id] = p.chronic;
    return m;
}

struct RepsFile {
    MatrixXd features;
    std::vector<std::string> ids;
};

RepsFile load_reps_file(const std::string& path) {
    RepsFile r;
    r.features = read_prgt(path).cast<double>();
    for (const auto& ref : read_sidecar(sidecar_path(path))) r.ids.push_back(ref.patient_id);
    if (static_cast<Eigen::Index>(r.ids.size()) != r.features.rows())
        throw ValidationError(path + ": sidecar/matrix row mismatch");
    return r;
}

void write_reps_file(const std::string& path, const std::vector<PatientRepresentation>& reps) {
    MatrixRXf m(static_cast<Eigen::Index>(reps.size()),
                reps.empty() ? 0 : reps.front().features.size());
    std::vector<RowRef> refs;
    for (size_t i = 0; i < reps.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = reps[i].features.transpose().cast<float>();
        refs.push_back({reps[i].patient_id, "", ""});
    }
    write_prgt(path, m);
    write_sidecar(sidecar_path(path), refs);
}

detail::LabeledMatrix take_rows(const RepsFile& reps, const Cohort& cohort,
                                const std::vector<std::string>& ids) {
    return detail::select_rows(reps.features, reps.ids, labels_of(cohort), ids);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PaReGTA pipeline"};
    app.require_subcommand(1);

    try {
        // ------------------------------------------------------------- synth
        auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cohort");
        std::string synth_config, synth_events, synth_manifest;
        std::optional<std::uint64_t> synth_seed;
        synth_cmd->add_option("--config", synth_config)->required();
        synth_cmd->add_option("--out-events", synth_events)->required();
        synth_cmd->add_option("--out-manifest", synth_manifest)->required();
        synth_cmd->add_option("--seed", synth_seed);
        synth_cmd->callback([&] {
            SynthConfig c = SynthConfig::from_json(read_json(synth_config));
            if (synth_seed) c.seed = *synth_seed;
            const auto result = generate(c);
            std::ofstream out(synth_events);
            if (!out) throw IoError("cannot write " + synth_events);
            serialize_events(result.events, out);
            write_json(synth_manifest, result.manifest);
            std::cerr << "synth: " << result.events.size() << " events for " << c.n_patients
                      << " patients\n";
        });

        // ------------------------------------------------------------ ingest
        auto* ingest_cmd = app.add_subcommand("ingest", "parse delimited events");
        std::string ingest_input, ingest_schema, ingest_out;
        ingest_cmd->add_option("--input", ingest_input)->required();
        ingest_cmd->add_option("--schema", ingest_schema);
        ingest_cmd->add_option("--out", ingest_out)->required();
        ingest_cmd->callback([&] {
            std::ifstream in(ingest_input);
            if (!in) throw IoError("cannot open " + ingest_input);
            const auto parsed = parse_events(in, load_schema(ingest_schema));
            write_events_jsonl(ingest_out, parsed.records);
            for (const auto& d : parsed.rejected) std::cerr << "ingest: " << d.reason << "\n";
            std::cerr << "ingest: " << parsed.records.size() << " records, "
                      << parsed.rejected.size() << " rejected\n";
        });

        // ------------------------------------------------------ build-cohort
        auto* cohort_cmd = app.add_subcommand("build-cohort", "collapse events into visits");
        std::string bc_events, bc_taxonomy, bc_out;
        int bc_window = 3;
        cohort_cmd->add_option("--events", bc_events)->required();
        cohort_cmd->add_option("--taxonomy", bc_taxonomy)->required();
        cohort_cmd->add_option("--window", bc_window);
        cohort_cmd->add_option("--out", bc_out)->required();
        cohort_cmd->callback([&] {
            const auto events = read_events_jsonl(bc_events);
            const auto taxonomy = DiagnosisTaxonomy::from_json(read_json(bc_taxonomy));
            const Cohort cohort = build_cohort(events, taxonomy, bc_window);
            write_cohort(bc_out, cohort);
            std::cerr << "build-cohort: " << cohort.patients.size() << " patients, "
                      << cohort.dropped_no_anchor << " dropped without anchors\n";
        });

        // -------------------------------------------------------- textualize
        auto* text_cmd = app.add_subcommand("textualize", "render visit sentences");
        std::string tx_cohort, tx_scheme = "gap", tx_exclude, tx_out;
        text_cmd->add_option("--cohort", tx_cohort)->required();
        text_cmd->add_option("--scheme", tx_scheme);
        text_cmd->add_option("--exclude", tx_exclude);
        text_cmd->add_option("--out", tx_out)->required();
        text_cmd->callback([&] {
            const Cohort cohort = read_cohort(tx_cohort);
            std::optional<FactorSpec> exclude;
            if (!tx_exclude.empty()) exclude = FactorSpec::from_json(read_json(tx_exclude));
            const auto texts =
                render_cohort(cohort, scheme_from_name(tx_scheme), exclude ? &*exclude : nullptr);
            write_visit_texts(tx_out, texts);
            std::cerr << "textualize: " << texts.size() << " sentences\n";
        });

        // ----------------------------------------------------- train-encoder
        auto* te_cmd = app.add_subcommand("train-encoder", "SimCSE-adapt the reference encoder");
        std::string te_texts, te_config, te_concept, te_out;
        te_cmd->add_option("--texts", te_texts)->required();
        te_cmd->add_option("--config", te_config)->required();
        te_cmd->add_option("--concept", te_concept)->required()
            ->check(CLI::IsMember({"meds", "comorb"}));
        te_cmd->add_option("--out", te_out)->required();
        te_cmd->callback([&] {
            const json cfg = read_json(te_config);
            strict_keys(cfg, {"vocab_size", "hidden_dim", "out_dim", "simcse", "seed"},
                        "encoder");
            EncoderArch arch;
            arch.vocab_size = cfg.value("vocab_size", arch.vocab_size);
            arch.hidden_dim = cfg.value("hidden_dim", arch.hidden_dim);
            arch.out_dim = cfg.value("out_dim", arch.out_dim);
            SimCSEConfig sim;
            if (cfg.contains("simcse")) sim = SimCSEConfig::from_json(cfg.at("simcse"));
            arch.max_seq_tokens = sim.max_seq_tokens;
            arch.dropout_rate = sim.dropout_rate;
            const auto kind = concept_from_name(te_concept);
            std::vector<std::string> corpus;
            for (const auto& vt : read_visit_texts(te_texts))
                if (vt.concept_kind == kind) corpus.push_back(vt.text);
            auto params = ReferenceEncoderParams::init(arch, cfg.value("seed", sim.seed));
            const auto report = train_simcse(corpus, sim, params);
            save_encoder_params(te_out, params);
            for (const auto& w : report.warnings) std::cerr << "train-encoder: " << w << "\n";
            std::cerr << "train-encoder: " << report.unique_sentences << " sentences, "
                      << report.optimizer_updates << " updates\n";
        });

        // ------------------------------------------------------------ encode
        auto* enc_cmd = app.add_subcommand("encode", "embed visit sentences");
        std::string enc_texts, enc_encoder, enc_out, enc_concept;
        enc_cmd->add_option("--texts", enc_texts)->required();
        enc_cmd->add_option("--encoder", enc_encoder)->required();
        enc_cmd->add_option("--out", enc_out)->required();
        enc_cmd->add_option("--concept", enc_concept)->check(CLI::IsMember({"meds", "comorb"}));
        enc_cmd->callback([&] {
            const EncoderHandle handle = open_encoder(enc_encoder);
            std::optional<ClinicalConcept> filter;
            if (!enc_concept.empty()) filter = concept_from_name(enc_concept);
            std::vector<RowRef> refs;
            std::vector<VectorXd> rows;
            for (const auto& vt : read_visit_texts(enc_texts)) {
                if (filter && vt.concept_kind != *filter) continue;
                const std::string id = vt.patient_id + "/" + vt.visit_date.to_string() + "/" +
                                       concept_name(vt.concept_kind);
                rows.push_back(handle.encode_text(id, vt.text));
                refs.push_back({vt.patient_id, vt.visit_date.to_string(),
                                concept_name(vt.concept_kind)});
            }
            MatrixRXf m(static_cast<Eigen::Index>(rows.size()),
                        rows.empty() ? handle.dim() : rows.front().size());
            for (size_t i = 0; i < rows.size(); ++i)
                m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose().cast<float>();
            write_prgt(enc_out, m);
            write_sidecar(sidecar_path(enc_out), refs);
            std::cerr << "encode: " << m.rows() << " x " << m.cols() << "\n";
        });

        // ------------------------------------------------------ train-pooler
        auto* tp_cmd = app.add_subcommand("train-pooler", "train the attention scorer");
        std::string tp_cohort, tp_meds, tp_comorb, tp_config, tp_out, tp_ids;
        tp_cmd->add_option("--cohort", tp_cohort)->required();
        tp_cmd->add_option("--emb-meds", tp_meds)->required();
        tp_cmd->add_option("--emb-comorb", tp_comorb)->required();
        tp_cmd->add_option("--config", tp_config)->required();
        tp_cmd->add_option("--train-ids", tp_ids);
        tp_cmd->add_option("--out", tp_out)->required();
        tp_cmd->callback([&] {
            const Cohort cohort = read_cohort(tp_cohort);
            const json cfg = read_json(tp_config);
            strict_keys(cfg, {"pooling", "trainer"}, "train-pooler");
            const PoolingConfig pooling = PoolingConfig::from_json(cfg.at("pooling"));
            const AttentionTrainerConfig trainer =
                AttentionTrainerConfig::from_json(cfg.at("trainer"));
            std::set<std::string> keep;
            if (!tp_ids.empty()) {
                std::ifstream in(tp_ids);
                if (!in) throw IoError("cannot open " + tp_ids);
                std::string line;
                while (std::getline(in, line))
                    if (!trim(line).empty()) keep.insert(trim(line));
            }
            std::vector<VisitSequence> seqs;
            std::vector<int> labels;
            Eigen::Index dim = 0;
            for (const std::string& file : {tp_meds, tp_comorb}) {
                const MatrixRXf m = read_prgt(file);
                const auto refs = read_sidecar(sidecar_path(file));
                dim = m.cols();
                std::map<std::string, std::vector<size_t>> rows_of;
                for (size_t i = 0; i < refs.size(); ++i)
                    rows_of[refs[i].patient_id].push_back(i);
                for (const auto& p : cohort.patients) {
                    if (!keep.empty() && !keep.count(p.patient_id)) continue;
                    auto it = rows_of.find(p.patient_id);
                    if (it == rows_of.end()) continue;
                    VisitSequence s;
                    s.embeddings.resize(static_cast<Eigen::Index>(it->second.size()), m.cols());
                    for (size_t k = 0; k < it->second.size(); ++k) {
                        s.embeddings.row(static_cast<Eigen::Index>(k)) =
                            m.row(static_cast<Eigen::Index>(it->second[k])).cast<double>();
                        s.times.push_back(Date::parse(refs[it->second[k]].visit_date));
                    }
                    seqs.push_back(std::move(s));
                    labels.push_back(p.chronic ? 1 : 0);
                }
            }
            auto scorer = AttentionScorerParams::init(dim, trainer.hidden_dim, trainer.seed);
            const auto report = train_attention_scorer(seqs, labels, pooling, trainer, scorer);
            save_scorer(tp_out, scorer);
            std::cerr << "train-pooler: " << report.triplets << " triplets, final epoch loss "
                      << (report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back())
                      << "\n";
        });

        // -------------------------------------------------------------- pool
        auto* pool_cmd = app.add_subcommand("pool", "aggregate visit embeddings per patient");
        std::string pl_emb, pl_cohort, pl_config, pl_scorer, pl_out;
        pool_cmd->add_option("--embeddings", pl_emb)->required();
        pool_cmd->add_option("--cohort", pl_cohort)->required();
        pool_cmd->add_option("--config", pl_config)->required();
        pool_cmd->add_option("--scorer", pl_scorer);
        pool_cmd->add_option("--out", pl_out)->required();
        pool_cmd->callback([&] {
            const Cohort cohort = read_cohort(pl_cohort);
            const PoolingConfig config = PoolingConfig::from_json(read_json(pl_config));
            std::optional<AttentionScorerParams> scorer;
            if (!pl_scorer.empty()) scorer = load_scorer(pl_scorer);
            const MatrixRXf m = read_prgt(pl_emb);
            const auto refs = read_sidecar(sidecar_path(pl_emb));
            std::map<std::string, std::vector<size_t>> rows_of;
            for (size_t i = 0; i < refs.size(); ++i) rows_of[refs[i].patient_id].push_back(i);
            std::vector<RowRef> out_refs;
            MatrixRXf pooled(static_cast<Eigen::Index>(rows_of.size()), m.cols());
            Eigen::Index row = 0;
            std::string tag;
            for (const auto& p : cohort.patients) {
                auto it = rows_of.find(p.patient_id);
                if (it == rows_of.end()) continue;
                VisitSequence seq;
                seq.embeddings.resize(static_cast<Eigen::Index>(it->second.size()), m.cols());
                for (size_t k = 0; k < it->second.size(); ++k) {
                    seq.embeddings.row(static_cast<Eigen::Index>(k)) =
                        m.row(static_cast<Eigen::Index>(it->second[k])).cast<double>();
                    seq.times.push_back(Date::parse(refs[it->second[k]].visit_date));
                    tag = refs[it->second[k]].concept_tag;
                }
                pooled.row(row++) = hybrid_pool(seq, config, scorer ? &*scorer : nullptr)
                                        .transpose()
                                        .cast<float>();
                out_refs.push_back({p.patient_id, p.last_visit().to_string(), tag});
            }
            pooled.conservativeResize(row, m.cols());
            write_prgt(pl_out, pooled);
            write_sidecar(sidecar_path(pl_out), out_refs);
            std::cerr << "pool: " << row << " patients\n";
        });

        // --------------------------------------------------------- represent
        auto* rep_cmd = app.add_subcommand("represent", "assemble patient feature vectors");
        std::string rp_meds, rp_comorb, rp_cohort, rp_fit = "train", rp_out, rp_split;
        std::string rp_baseline = "none";
        double rp_variance = 0.95;
        bool rp_no_demo = false;
        rep_cmd->add_option("--pooled-meds", rp_meds);
        rep_cmd->add_option("--pooled-comorb", rp_comorb);
        rep_cmd->add_option("--cohort", rp_cohort)->required();
        rep_cmd->add_option("--fit-on", rp_fit)->check(CLI::IsMember({"train", "all"}));
        rep_cmd->add_option("--split-config", rp_split);
        rep_cmd->add_option("--variance-target", rp_variance);
        rep_cmd->add_flag("--no-demographics", rp_no_demo);
        rep_cmd->add_option("--baseline", rp_baseline)
            ->check(CLI::IsMember({"none", "onehot", "boc"}));
        rep_cmd->add_option("--out", rp_out)->required();
        rep_cmd->callback([&] {
            const Cohort cohort = read_cohort(rp_cohort);
            std::vector<std::string> fit_ids;
            if (rp_fit == "train") {
                fit_ids = split_for(cohort, rp_split).train;
            } else {
                for (const auto& p : cohort.patients) fit_ids.push_back(p.patient_id);
            }
            if (rp_baseline != "none") {
                const auto spec =
                    fit_baseline_spec(cohort, fit_ids, {}, 256, !rp_no_demo);
                const auto reps = build_baseline(
                    cohort, spec,
                    rp_baseline == "onehot" ? BaselineKind::OneHot : BaselineKind::CountBoC);
                write_reps_file(rp_out, reps);
                std::cerr << "represent: baseline " << rp_baseline << ", width "
                          << spec.width() << "\n";
                return;
            }
            if (rp_meds.empty() || rp_comorb.empty())
                throw ConfigError("represent: --pooled-meds and --pooled-comorb are required");
            auto load_pooled = [](const std::string& path) {
                const MatrixRXf m = read_prgt(path);
                const auto refs = read_sidecar(sidecar_path(path));
                PooledVectors out;
                for (Eigen::Index i = 0; i < m.rows(); ++i)
                    out[refs[static_cast<size_t>(i)].patient_id] =
                        m.row(i).transpose().cast<double>();
                return out;
            };
            const auto meds = load_pooled(rp_meds);
            const auto comorb = load_pooled(rp_comorb);
            const auto transform =
                fit_transform(cohort, fit_ids, meds, comorb, rp_variance, !rp_no_demo);
            save_transform(rp_out + ".transform.json", transform);
            write_reps_file(rp_out, assemble(cohort, meds, comorb, transform));
            std::cerr << "represent: width " << transform.layout().total_width() << " (meds "
                      << transform.meds.retained << ", comorb " << transform.comorb.retained
                      << ", demographics " << transform.demographics.width() << ")\n";
        });

        // --------------------------------------------------------- fit-probe
        auto* fp_cmd = app.add_subcommand("fit-probe", "cross-validated logistic probe");
        std::string fp_reps, fp_cohort, fp_out, fp_split;
        std::vector<double> fp_grid = {0.01, 0.1, 1.0, 10.0};
        int fp_folds = 5;
        std::uint64_t fp_seed = 0;
        fp_cmd->add_option("--reps", fp_reps)->required();
        fp_cmd->add_option("--cohort", fp_cohort)->required();
        fp_cmd->add_option("--split-config", fp_split);
        fp_cmd->add_option("--lambda-grid", fp_grid);
        fp_cmd->add_option("--cv-folds", fp_folds);
        fp_cmd->add_option("--seed", fp_seed);
        fp_cmd->add_option("--out", fp_out)->required();
        fp_cmd->callback([&] {
            const Cohort cohort = read_cohort(fp_cohort);
            const auto split = split_for(cohort, fp_split);
            const auto reps = load_reps_file(fp_reps);
            const auto train = take_rows(reps, cohort, split.train);
            std::vector<double> grid;
            for (double s : fp_grid) grid.push_back(s / static_cast<double>(train.y.size()));
            const auto fit = fit_probe(train.x, train.y, grid, fp_folds, fp_seed);
            json out = fit.model.to_json();
            json folds = json::array();
            for (double a : fit.cv.fold_aucs) folds.push_back(a);
            out["cv"] = json{{"best_lambda", fit.cv.best_lambda}, {"fold_aucs", folds}};
            write_json(fp_out, out);
            std::cerr << "fit-probe: best lambda " << fit.cv.best_lambda << "\n";
        });

        // ---------------------------------------------------------- evaluate
        auto* ev_cmd = app.add_subcommand("evaluate", "test-set metrics");
        std::string ev_reps, ev_cohort, ev_probe, ev_out, ev_split, ev_on = "test";
        ev_cmd->add_option("--reps", ev_reps)->required();
        ev_cmd->add_option("--cohort", ev_cohort)->required();
        ev_cmd->add_option("--probe", ev_probe)->required();
        ev_cmd->add_option("--split-config", ev_split);
        ev_cmd->add_option("--on", ev_on)
            ->check(CLI::IsMember({"test", "train", "attribution"}));
        ev_cmd->add_option("--out", ev_out)->required();
        ev_cmd->callback([&] {
            const Cohort cohort = read_cohort(ev_cohort);
            const auto split = split_for(cohort, ev_split);
            const auto reps = load_reps_file(ev_reps);
            const auto& ids = ev_on == "test" ? split.test
                              : ev_on == "train" ? split.train
                                                 : split.attribution;
            const auto data = take_rows(reps, cohort, ids);
            const ProbeModel probe = ProbeModel::from_json(read_json(ev_probe));
            const auto metrics = evaluate(probe, data.x, data.y);
            write_json(ev_out, json{{"acc", metrics.acc}, {"auc", metrics.auc}});
            std::cerr << "evaluate[" << ev_on << "]: acc " << metrics.acc << " auc "
                      << metrics.auc << "\n";
        });

        // ---------------------------------------------------------- geometry
        auto* geo_cmd = app.add_subcommand("geometry", "embedding-space diagnostics");
        std::string geo_emb, geo_out;
        double geo_t = 2.0;
        size_t geo_max = 2000;
        std::uint64_t geo_seed = 0;
        geo_cmd->add_option("--embeddings", geo_emb)->required();
        geo_cmd->add_option("--t", geo_t);
        geo_cmd->add_option("--max-rows", geo_max);
        geo_cmd->add_option("--seed", geo_seed);
        geo_cmd->add_option("--out", geo_out)->required();
        geo_cmd->callback([&] {
            MatrixXd m = read_prgt(geo_emb).cast<double>();
            if (static_cast<size_t>(m.rows()) > geo_max) {
                std::mt19937_64 rng(geo_seed);
                std::vector<Eigen::Index> idx(static_cast<size_t>(m.rows()));
                std::iota(idx.begin(), idx.end(), 0);
                std::shuffle(idx.begin(), idx.end(), rng);
                MatrixXd sampled(static_cast<Eigen::Index>(geo_max), m.cols());
                for (size_t i = 0; i < geo_max; ++i)
                    sampled.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
                m = std::move(sampled);
            }
            const auto rep = geometry(m, geo_t);
            write_json(geo_out, json{{"uniformity", rep.uniformity},
                                     {"spectral_flatness", rep.spectral_flatness},
                                     {"top1", rep.top1}});
            std::cerr << "geometry: uniformity " << rep.uniformity << " flatness "
                      << rep.spectral_flatness << " top1 " << rep.top1 << "\n";
        });

        // --------------------------------------------------------------- rss
        auto* rss_cmd = app.add_subcommand("rss", "representation-shift factor importance");
        std::string rs_cohort, rs_pipeline, rs_factors, rs_subgroup, rs_out;
        size_t rs_min_support = 10;
        rss_cmd->add_option("--cohort", rs_cohort)->required();
        rss_cmd->add_option("--pipeline", rs_pipeline)->required();
        rss_cmd->add_option("--factors", rs_factors)->required();
        rss_cmd->add_option("--subgroup", rs_subgroup);
        rss_cmd->add_option("--min-support", rs_min_support);
        rss_cmd->add_option("--out", rs_out)->required();
        rss_cmd->callback([&] {
            const fs::path dir = rs_pipeline;
            const PipelineConfig config = load_pipeline_config(dir / "config.json");
            const Cohort cohort = read_cohort(rs_cohort);
            const auto split = pipeline_split(config, cohort);
            const FrozenPipeline pipe = load_frozen_pipeline(config, dir);
            const auto factors = factors_from_json(read_json(rs_factors));
            std::optional<SubgroupFilter> subgroup;
            if (!rs_subgroup.empty()) subgroup = SubgroupFilter::parse(rs_subgroup);
            std::set<std::string> ids(split.attribution.begin(), split.attribution.end());
            std::vector<const PatientRecord*> patients;
            for (const auto& p : cohort.patients)
                if (ids.count(p.patient_id)) patients.push_back(&p);
            const auto result =
                cohort_attribution(patients, factors, pipe, rs_min_support, subgroup);
            write_json(rs_out, attribution_to_json(result));
            std::cerr << "rss: " << result.aggregates.size() << " factors reported, "
                      << result.suppressed.size() << " suppressed\n";
        });

        // ------------------------------------------------------ run, run-all
        std::string run_config, run_out_dir, run_stage;
        std::optional<std::uint64_t> run_seed;
        auto add_run_options = [&](CLI::App* cmd) {
            cmd->add_option("--config", run_config)->required();
            cmd->add_option("--out-dir", run_out_dir)->required();
            cmd->add_option("--seed", run_seed);
        };
        auto make_runner = [&]() {
            PipelineConfig config = load_pipeline_config(run_config);
            if (run_seed) config.seed = *run_seed;
            PipelineRunner runner(config, run_out_dir);
            // Keep the resolved config next to the artifacts for `rss --pipeline`.
            json cfg = read_json(run_config);
            if (run_seed) cfg["seed"] = *run_seed;
            write_json(fs::path(run_out_dir) / "config.json", cfg);
            return runner;
        };

        auto* run_cmd = app.add_subcommand("run", "run one pipeline stage");
        add_run_options(run_cmd);
        run_cmd->add_option("--stage", run_stage)->required();
        run_cmd->callback([&] {
            auto runner = make_runner();
            const auto r = runner.run(run_stage);
            std::cerr << "stage " << r.stage << ": " << r.wall_ms << " ms\n";
        });

        auto* run_all_cmd = app.add_subcommand("run-all", "run every configured stage");
        add_run_options(run_all_cmd);
        run_all_cmd->callback([&] {
            auto runner = make_runner();
            for (const auto& r : runner.run_all())
                std::cerr << "stage " << r.stage << ": " << r.wall_ms << " ms\n";
        });

        // --------------------------------------------------------- emit-plots
        auto* plots_cmd = app.add_subcommand("emit-plots", "plot-ready (x, y, err) tables");
        std::string ep_rss, ep_out_dir;
        std::vector<std::string> ep_metrics;  // name=path pairs
        plots_cmd->add_option("--rss", ep_rss);
        plots_cmd->add_option("--metrics", ep_metrics);
        plots_cmd->add_option("--out-dir", ep_out_dir)->required();
        plots_cmd->callback([&] {
            fs::create_directories(ep_out_dir);
            if (!ep_rss.empty()) {
                const json r = read_json(ep_rss);
                std::ofstream out(fs::path(ep_out_dir) / "factor_importance.tsv");
                out << "factor\tmean_abs\tmean_signed\tdispersion\tn\n";
                for (const auto& a : r.at("aggregates"))
                    out << a.at("factor").get<std::string>() << '\t'
                        << a.at("mean_abs").get<double>() << '\t'
                        << a.at("mean_signed").get<double>() << '\t'
                        << a.at("dispersion").get<double>() << '\t'
                        << a.at("n_patients_with_factor").get<size_t>() << '\n';
            }
            if (!ep_metrics.empty()) {
                std::ofstream out(fs::path(ep_out_dir) / "ablation.tsv");
                out << "setting\tacc\tauc\n";
                for (const auto& kv : ep_metrics) {
                    const auto eq = kv.find('=');
                    if (eq == std::string::npos)
                        throw ConfigError("--metrics expects name=path, got '" + kv + "'");
                    const json m = read_json(kv.substr(eq + 1));
                    out << kv.substr(0, eq) << '\t' << m.at("acc").get<double>() << '\t'
                        << m.at("auc").get<double>() << '\n';
                }
            }
            std::cerr << "emit-plots: wrote tables to " << ep_out_dir << "\n";
        });

        CLI11_PARSE(app, argc, argv);
        return 0;
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
