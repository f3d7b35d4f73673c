#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mcb/cli.hpp"
#include "test_support.hpp"

using namespace mcb;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "mcbmt_test_cli" / name;
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<std::vector<std::string>> words(std::initializer_list<const char*> lines) {
    std::vector<std::vector<std::string>> out;
    for (const char* l : lines) out.push_back(tokenize(l));
    return out;
}

}  // namespace

TEST_CASE("corpus BLEU") {
    auto perfect = words({"the cat sat on the mat"});
    CHECK(bleu_corpus(perfect, perfect) == Catch::Approx(100.0).margin(1e-9));

    // no overlapping unigrams: zero
    CHECK(bleu_corpus(words({"x y z w"}), words({"a b c d"})) == 0.0);

    // hypothesis shorter than 4 tokens has no 4-grams: zero without smoothing
    CHECK(bleu_corpus(words({"the cat sat"}), words({"the cat sat"})) == 0.0);

    // hand-computed: all clipped precisions 1, brevity penalty exp(1 - 5/4)
    double b = bleu_corpus(words({"a b c d"}), words({"a b c d e"}));
    CHECK(b == Catch::Approx(100.0 * std::exp(1.0 - 5.0 / 4.0)).margin(1e-9));

    // clipping: repeated hypothesis unigrams only match up to the ref count
    double rep = bleu_corpus(words({"the the the the"}), words({"the cat ate the fish"}));
    CHECK(rep == 0.0);  // 2-gram precision is zero

    // corpus-level pooling is not an average of sentence scores
    auto hyps = words({"a b c d", "p q r s"});
    auto refs = words({"a b c d", "p q r s"});
    CHECK(bleu_corpus(hyps, refs) == Catch::Approx(100.0).margin(1e-9));

    CHECK(bleu_corpus<std::string>({}, {}) == 0.0);
    CHECK_THROWS(bleu_corpus(hyps, words({"a b c d"})));
}

TEST_CASE("bench-sketch determinism and error decay") {
    BenchOptions opt;
    opt.dims = {16, 64, 256};
    opt.trials = 300;
    opt.n1 = 32;
    opt.n2 = 32;
    opt.seed = 5;
    auto rows = bench_sketch(opt);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].mean_rel_err < rows[i - 1].mean_rel_err);
    for (const auto& r : rows) {
        CHECK(r.mean_rel_err > 0.0);
        CHECK(r.std_rel_err >= 0.0);
        CHECK(r.pools_per_sec > 0.0);
    }
    auto rows2 = bench_sketch(opt);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].mean_rel_err == rows2[i].mean_rel_err);
        CHECK(rows[i].std_rel_err == rows2[i].std_rel_err);
    }
    std::string line = bench_row_json(rows[0], opt);
    CHECK(line.find("\"d\":16") != std::string::npos);
    CHECK(line.find("\"trials\":300") != std::string::npos);
    auto parsed = nlohmann::json::parse(line);
    CHECK(parsed.at("mean_rel_err").get<double>() == rows[0].mean_rel_err);

    BenchOptions bad = opt;
    bad.dims = {};
    CHECK_THROWS(bench_sketch(bad));
    bad = opt;
    bad.trials = 0;
    CHECK_THROWS(bench_sketch(bad));
}

namespace {

TrainCliOptions tiny_train_options(const std::string& out_dir) {
    TrainCliOptions opt;
    opt.synthetic = true;
    opt.task.G = 4;
    opt.task.C = 8;
    opt.task.ambiguity = 0.0;
    opt.task.train_size = 48;
    opt.task.val_size = 12;
    opt.task.test_size = 0;
    opt.L = 8;
    opt.E = 8;
    opt.batch = 8;
    opt.lr = 0.01;
    opt.l2 = 0.0;
    opt.steps = 200;
    opt.eval_interval = 50;
    opt.seed = 3;
    opt.out_dir = out_dir;
    return opt;
}

}  // namespace

TEST_CASE("cmd_train validates its options") {
    TrainCliOptions opt = tiny_train_options(tmp_dir("unused").string());
    opt.fusion = "mcb";
    opt.sketch_dim = 0;
    CHECK_THROWS_WITH(cmd_train(opt), Catch::Matchers::ContainsSubstring("usage:"));
    opt.fusion = "concat";
    opt.pre_attention = true;
    CHECK_THROWS_WITH(cmd_train(opt), Catch::Matchers::ContainsSubstring("usage:"));
    opt = tiny_train_options(tmp_dir("unused").string());
    opt.synthetic = false;
    CHECK_THROWS_WITH(cmd_train(opt), Catch::Matchers::ContainsSubstring("usage:"));
    opt = tiny_train_options(tmp_dir("unused").string());
    opt.fusion = "nonsense";
    CHECK_THROWS(cmd_train(opt));
}

TEST_CASE("cmd_train trains, writes artifacts, and derives per-run seeds") {
    auto dir = tmp_dir("train_out");
    TrainCliOptions opt = tiny_train_options(dir.string());
    opt.runs = 2;
    TrainCliResult r = cmd_train(opt);

    REQUIRE(r.runs.size() == 2);
    CHECK(r.avg_val_acc > 0.9);
    CHECK(r.avg_val_bleu > 50.0);
    CHECK(std::isfinite(r.avg_val_loss));

    for (int run = 0; run < 2; ++run) {
        const std::string rd = dir.string() + "/run" + std::to_string(run);
        CHECK(std::filesystem::exists(rd + "/best.ckpt"));
        CHECK(std::filesystem::exists(rd + "/metrics.jsonl"));
        // metrics lines parse as JSON with the expected keys
        for (const std::string& line : read_lines(rd + "/metrics.jsonl")) {
            auto j = nlohmann::json::parse(line);
            CHECK(j.contains("step"));
            CHECK(j.contains("split"));
            CHECK(j.contains("loss"));
        }
    }
    std::ifstream mf(dir.string() + "/manifest.json");
    auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest.at("seeds") == nlohmann::json({3, 4}));
    CHECK(manifest.at("config").at("L") == 8);
    CHECK(manifest.contains("input_hash"));

    // the two runs used different seeds, so their logs differ
    bool differs = r.runs[0].log.size() != r.runs[1].log.size();
    for (std::size_t i = 0; !differs && i < r.runs[0].log.size(); ++i)
        differs = format_log_entry(r.runs[0].log[i]) != format_log_entry(r.runs[1].log[i]);
    CHECK(differs);

    // saved best checkpoint reproduces the in-memory best validation loss
    Checkpoint ckpt = load_checkpoint(dir.string() + "/run0/best.ckpt");
    SyntheticTaskSpec task = opt.task;
    task.seed = opt.seed;
    SyntheticData data = gen_synthetic(task);
    EvalResult ev = evaluate(data.val, ckpt.params);
    CHECK(ev.loss == Catch::Approx(r.runs[0].best_val_loss).margin(1e-12));
}

TEST_CASE("cmd_translate and bleu_files round trip") {
    auto dir = tmp_dir("translate");
    TrainCliOptions opt = tiny_train_options((dir / "model").string());
    cmd_train(opt);

    SyntheticTaskSpec task = opt.task;
    task.seed = opt.seed;
    SyntheticData data = gen_synthetic(task);
    std::vector<std::string> src_lines, ref_lines;
    std::vector<Tensor> maps;
    for (const Example& ex : data.val) {
        std::string s, t;
        for (int id : ex.src) s += data.src_vocab.decode(id) + " ";
        for (std::size_t j = 0; j + 1 < ex.tgt.size(); ++j) t += data.tgt_vocab.decode(ex.tgt[j]) + " ";
        src_lines.push_back(s);
        ref_lines.push_back(t);
        maps.push_back(ex.fmap);
    }
    const std::string src_path = (dir / "src.txt").string();
    const std::string ref_path = (dir / "ref.txt").string();
    const std::string map_path = (dir / "maps.mmfm").string();
    const std::string hyp_path = (dir / "hyp.txt").string();
    write_lines(src_lines, src_path);
    write_lines(ref_lines, ref_path);
    save_feature_maps(maps, map_path);

    cmd_translate((dir / "model/run0/best.ckpt").string(), src_path, map_path, hyp_path);
    auto hyp_lines = read_lines(hyp_path);
    REQUIRE(hyp_lines.size() == src_lines.size());
    CHECK(bleu_files(hyp_path, ref_path) > 50.0);

    // a count mismatch between sentences and maps fails closed
    save_feature_maps({maps[0]}, map_path);
    CHECK_THROWS_WITH(cmd_translate((dir / "model/run0/best.ckpt").string(), src_path, map_path, hyp_path),
                      Catch::Matchers::ContainsSubstring("count mismatch"));
}

TEST_CASE("config file overrides flag defaults") {
    auto dir = tmp_dir("config");
    const std::string cfg_path = (dir / "cfg.json").string();
    io::atomic_write(cfg_path, R"({"layer_size": 4, "steps": 20, "eval_interval": 10, "lr": 0.02})");
    TrainCliOptions opt = tiny_train_options((dir / "out").string());
    opt.config_path = cfg_path;
    cmd_train(opt);
    std::ifstream mf((dir / "out" / "manifest.json").string());
    auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest.at("config").at("L") == 4);

    io::atomic_write(cfg_path, R"({"no_such_key": 1})");
    CHECK_THROWS_WITH(cmd_train(opt), Catch::Matchers::ContainsSubstring("unknown config key"));
    io::atomic_write(cfg_path, "{nonsense");
    CHECK_THROWS_WITH(cmd_train(opt), Catch::Matchers::ContainsSubstring("bad config JSON"));
    opt.config_path = (dir / "missing.json").string();
    CHECK_THROWS_WITH(cmd_train(opt), Catch::Matchers::ContainsSubstring("cannot open config"));
}

TEST_CASE("fnv1a is stable") {
    CHECK(fnv1a("") == 14695981039346656037ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("abc") != fnv1a("acb"));
}
