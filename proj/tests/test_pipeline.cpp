#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

// external_encoder.hpp orders Eigen ahead of httplib; keep that ordering.
#include "paregta/external_encoder.hpp"
#include "paregta/pipeline.hpp"

using namespace paregta;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("paregta_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json tiny_config(std::uint64_t seed = 42) {
    SynthConfig sc = default_synth_config();
    sc.n_patients = 90;
    sc.visits_min = 3;
    sc.visits_max = 7;
    sc.gap_min_positive = 20;
    sc.gap_max_positive = 60;
    sc.gap_min_negative = 40;
    sc.gap_max_negative = 110;

    json cfg;
    cfg["seed"] = seed;
    cfg["synth"] = sc.to_json();
    cfg["cohort"] = {{"window_radius_days", 3}};
    cfg["textualize"] = {{"scheme", "gap"}};
    cfg["encoder"] = {{"vocab_size", 8192},
                      {"hidden_dim", 32},
                      {"out_dim", 32},
                      {"simcse",
                       {{"epochs", 1},
                        {"batch_size", 32},
                        {"learning_rate", 1e-3},
                        {"max_training_samples", 2000},
                        {"grad_accum_steps", 1},
                        {"max_seq_tokens", 64}}}};
    cfg["pooling"] = {{"gamma", 0.05}, {"delta_mode", "log1p"}, {"alpha", 0.5}};
    cfg["representation"] = {{"variance_target", 0.95}};
    cfg["probe"] = {{"lambda_scale_grid", {1.0}}, {"cv_folds", 3}};
    cfg["geometry"] = {{"max_rows", 500}};
    cfg["rss"] = {{"min_support", 2}};
    return cfg;
}

}  // namespace

TEST_CASE("unknown config keys are rejected everywhere") {
    json cfg = tiny_config();
    cfg["surprise"] = 1;
    CHECK_THROWS_AS(PipelineConfig::from_json(cfg), ConfigError);

    cfg = tiny_config();
    cfg["pooling"]["turbo"] = true;
    CHECK_THROWS_AS(PipelineConfig::from_json(cfg), ConfigError);

    cfg = tiny_config();
    cfg["encoder"]["simcse"]["typo_key"] = 3;
    CHECK_THROWS_AS(PipelineConfig::from_json(cfg), ConfigError);

    CHECK_NOTHROW(PipelineConfig::from_json(tiny_config()));
}

TEST_CASE("stage seeds derive from the one global seed") {
    CHECK(stage_seed(42, "synth") == (42ull ^ fnv1a64("synth")));
    CHECK(stage_seed(42, "synth") != stage_seed(42, "encode"));
    CHECK(stage_seed(42, "synth") != stage_seed(43, "synth"));
}

TEST_CASE("run-all produces every artifact and is resumable") {
    const auto dir = fresh_dir("runall");
    PipelineRunner runner(PipelineConfig::from_json(tiny_config()), dir);
    const auto results = runner.run_all();

    for (const char* name :
         {"events.csv", "records.jsonl", "cohort.jsonl", "texts.jsonl",
          "encoder_meds.params", "encoder_comorb.params", "emb_meds.prgt",
          "emb_comorb.prgt", "pooled_meds.prgt", "pooled_comorb.prgt", "transform.json",
          "reps.prgt", "reps.meta.json", "baseline_onehot.prgt", "baseline_boc.prgt",
          "probe.json", "metrics.json", "geometry.json", "rss.json", "manifest.json"})
        CHECK(fs::exists(dir / name));

    // Stage order matches the declared sequence (train-pooler disabled here).
    std::vector<std::string> names;
    for (const auto& r : results) names.push_back(r.stage);
    CHECK(names == std::vector<std::string>{"synth", "ingest", "build-cohort", "textualize",
                                            "train-encoder", "encode", "pool", "represent",
                                            "fit-probe", "evaluate", "geometry", "rss"});

    // Individual stages re-run in place.
    CHECK_NOTHROW(runner.run("evaluate"));
    const json manifest = read_json(dir / "manifest.json");
    CHECK(manifest.at("stages").contains("evaluate"));
    CHECK(manifest.at("stages").at("encode").at("outputs").contains("emb_meds.prgt"));
}

TEST_CASE("the two concept encoders never share parameters") {
    const auto dir = fs::temp_directory_path() / "paregta_runall";
    REQUIRE(fs::exists(dir / "encoder_meds.params"));  // from the run-all test
    CHECK(file_fingerprint(dir / "encoder_meds.params") !=
          file_fingerprint(dir / "encoder_comorb.params"));
    const auto meds = load_encoder_params(dir / "encoder_meds.params");
    const auto comorb = load_encoder_params(dir / "encoder_comorb.params");
    CHECK_FALSE(meds == comorb);
}

TEST_CASE("missing artifacts name the stage to run first") {
    const auto dir = fresh_dir("missing");
    PipelineRunner runner(PipelineConfig::from_json(tiny_config()), dir);
    try {
        runner.run("evaluate");
        FAIL("expected MissingArtifactError");
    } catch (const MissingArtifactError& e) {
        const std::string what = e.what();
        CHECK(what.find("run stage") != std::string::npos);
    }
    CHECK_THROWS_AS(runner.run("no-such-stage"), ConfigError);
}

TEST_CASE("rerunning with unchanged config reproduces artifact fingerprints") {
    const auto dir_a = fresh_dir("repro_a");
    const auto dir_b = fresh_dir("repro_b");
    PipelineRunner a(PipelineConfig::from_json(tiny_config()), dir_a);
    PipelineRunner b(PipelineConfig::from_json(tiny_config()), dir_b);
    a.run_all();
    b.run_all();
    for (const auto& entry : fs::directory_iterator(dir_a)) {
        const auto name = entry.path().filename().string();
        if (name == "manifest.json") continue;  // carries wall times
        CAPTURE(name);
        CHECK(file_fingerprint(entry.path()) == file_fingerprint(dir_b / name));
    }
}

TEST_CASE("subprocess encoder speaks the wire protocol") {
    SubprocessEncoder enc({MOCK_ENCODER_PATH});
    const VectorXd a = enc.encode("id-1", "First visit, meds: ibuprofen");
    CHECK(a.size() == 8);
    CHECK(enc.dim() == 8);
    const VectorXd b = enc.encode("id-2", "First visit, meds: ibuprofen");
    CHECK(a == b);  // deterministic per text
    const VectorXd c = enc.encode("id-3", "different text");
    CHECK((a - c).norm() > 0);
}

TEST_CASE("http encoder speaks the wire protocol") {
    httplib::Server server;
    server.Post("/encode", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        json vec = json::array();
        std::uint64_t h = fnv1a64(body.at("text").get<std::string>());
        for (int i = 0; i < 5; ++i) {
            vec.push_back(static_cast<double>(h % 97) / 97.0);
            h = fnv1a64("x", h);
        }
        res.set_content(json{{"id", body.at("id")}, {"vec", vec}}.dump(),
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    {
        HttpEncoder enc("http://127.0.0.1:" + std::to_string(port) + "/encode");
        const VectorXd v = enc.encode("a", "62 days after previous, meds: none");
        CHECK(v.size() == 5);
        CHECK(enc.dim() == 5);
        const VectorXd w = enc.encode("b", "62 days after previous, meds: none");
        CHECK(v == w);
    }
    server.stop();
    thread.join();
}

TEST_CASE("inconsistent external dimensions are rejected") {
    // A child that alternates vector lengths violates the protocol.
    const auto dir = fresh_dir("proto");
    const auto script = dir / "bad_encoder.py";
    std::ofstream(script) << R"(import sys, json
n = 0
for line in sys.stdin:
    req = json.loads(line)
    n += 1
    print(json.dumps({"id": req["id"], "vec": [0.0] * (3 if n % 2 else 4)}), flush=True)
)";
    SubprocessEncoder enc({"python3", script.string()});
    CHECK_NOTHROW(enc.encode("1", "first"));
    CHECK_THROWS_AS(enc.encode("2", "second"), ValidationError);
}

TEST_CASE("external encoder drives the encode stage end to end") {
    const auto dir = fresh_dir("external");
    json cfg = tiny_config();
    cfg["encoder"] = {{"external", {{"type", "subprocess"}, {"argv", {MOCK_ENCODER_PATH}}}}};
    // The trained-encoder geometry knobs do not apply; everything else runs.
    PipelineRunner runner(PipelineConfig::from_json(cfg), dir);
    const auto results = runner.run_all();
    std::vector<std::string> names;
    for (const auto& r : results) names.push_back(r.stage);
    CHECK(std::find(names.begin(), names.end(), "train-encoder") == names.end());
    CHECK(fs::exists(dir / "emb_meds.prgt"));
    CHECK(read_prgt(dir / "emb_meds.prgt").cols() == 8);
    CHECK(fs::exists(dir / "rss.json"));
}

TEST_CASE("encoder spec files are sniffed by magic") {
    const auto dir = fresh_dir("sniff");
    EncoderArch arch;
    arch.vocab_size = 64;
    arch.hidden_dim = 4;
    arch.out_dim = 4;
    save_encoder_params(dir / "ref.params", ReferenceEncoderParams::init(arch, 3));
    CHECK_FALSE(is_external_spec(dir / "ref.params"));
    write_json(dir / "ext.json", json{{"type", "subprocess"}, {"argv", {"true"}}});
    CHECK(is_external_spec(dir / "ext.json"));
    const EncoderHandle h = open_encoder(dir / "ref.params");
    CHECK(h.reference.has_value());
}
