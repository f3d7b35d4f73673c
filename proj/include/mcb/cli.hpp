#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcb/data.hpp"
#include "mcb/train.hpp"

namespace mcb {

// ------------------------------------------------------------ bench-sketch

struct BenchOptions {
    std::vector<std::size_t> dims = {64, 256, 1024};
    std::size_t trials = 1000;
    std::size_t n1 = 64;
    std::size_t n2 = 64;
    std::uint64_t seed = 0;
};

struct BenchRow {
    std::size_t d = 0;
    double mean_rel_err = 0.0;
    double std_rel_err = 0.0;
    double pools_per_sec = 0.0;
};

/// Inner-product approximation error of mcb_pool against the exact
/// <u1,v1><u2,v2>, over freshly sampled poolers; inputs are fixed per seed
/// so the sweep isolates the d dependence.
inline std::vector<BenchRow> bench_sketch(const BenchOptions& opt) {
    if (opt.dims.empty() || opt.trials == 0 || opt.n1 == 0 || opt.n2 == 0)
        throw std::invalid_argument("bench_sketch: invalid options");
    Rng in_rng(opt.seed * 6364136223846793005ull + 1442695040888963407ull);
    auto draw = [&](std::size_t n) {
        Tensor t = Tensor::zeros({n});
        for (std::size_t i = 0; i < n; ++i) t[i] = real(in_rng.normal());
        return t;
    };
    const Tensor u1 = draw(opt.n1), v1 = draw(opt.n1), u2 = draw(opt.n2), v2 = draw(opt.n2);
    const double exact = dot(u1, v1) * dot(u2, v2);
    std::vector<BenchRow> rows;
    for (std::size_t d : opt.dims) {
        double sum = 0.0, sumsq = 0.0;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t trial = 0; trial < opt.trials; ++trial) {
            const std::uint64_t s = opt.seed ^ (trial * 2862933555777941757ull + d);
            McbPooler pooler = McbPooler::make(opt.n1, opt.n2, d, s, s ^ 0x9E3779B97F4A7C15ull);
            const double est = dot(mcb_pool(u1, u2, pooler), mcb_pool(v1, v2, pooler));
            const double rel = std::abs(est - exact) / std::max(std::abs(exact), 1e-300);
            sum += rel;
            sumsq += rel * rel;
        }
        const auto t1 = std::chrono::steady_clock::now();
        BenchRow row;
        row.d = d;
        row.mean_rel_err = sum / double(opt.trials);
        row.std_rel_err = std::sqrt(std::max(0.0, sumsq / double(opt.trials) - row.mean_rel_err * row.mean_rel_err));
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        row.pools_per_sec = secs > 0 ? 2.0 * double(opt.trials) / secs : 0.0;
        rows.push_back(row);
    }
    return rows;
}

inline std::string bench_row_json(const BenchRow& r, const BenchOptions& opt) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"d\":%zu,\"trials\":%zu,\"mean_rel_err\":%.17g,\"std_rel_err\":%.17g,\"pools_per_sec\":%.6g}",
                  r.d, opt.trials, r.mean_rel_err, r.std_rel_err, r.pools_per_sec);
    return buf;
}

// ------------------------------------------------------------------- train

struct TrainCliOptions {
    bool synthetic = false;
    SyntheticTaskSpec task;
    std::string config_path;
    std::string fusion = "concat";
    bool pre_attention = false;
    std::size_t sketch_dim = 0;
    std::size_t runs = 1;
    std::uint64_t seed = 0;
    std::size_t steps = 2000;
    std::size_t patience = 10000;
    std::size_t batch = 32;
    double lr = 0.0007;
    double l2 = 1e-5;
    std::size_t L = 32;
    std::size_t E = 32;
    std::size_t pre_hidden = 64;
    std::size_t eval_interval = 100;
    std::string out_dir = "out";
    bool text_only = false;
    bool verbose = false;
};

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct TrainCliResult {
    double avg_val_loss = 0.0;
    double avg_val_acc = 0.0;
    double avg_img_acc = 0.0;
    double avg_val_bleu = 0.0;
    std::vector<TrainResult> runs;
};

/// Applies a JSON config file over the flag defaults. Keys mirror the CLI
/// flag names; unknown keys are rejected.
inline TrainCliOptions apply_config_file(TrainCliOptions opt) {
    std::ifstream is(opt.config_path);
    if (!is) throw std::runtime_error("cannot open config: " + opt.config_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad config JSON: " + std::string(e.what()));
    }
    for (const auto& [key, val] : j.items()) {
        if (key == "fusion") opt.fusion = val;
        else if (key == "pre_attention") opt.pre_attention = val;
        else if (key == "sketch_dim") opt.sketch_dim = val;
        else if (key == "runs") opt.runs = val;
        else if (key == "seed") opt.seed = val;
        else if (key == "steps") opt.steps = val;
        else if (key == "patience") opt.patience = val;
        else if (key == "batch") opt.batch = val;
        else if (key == "lr") opt.lr = val;
        else if (key == "l2") opt.l2 = val;
        else if (key == "layer_size") opt.L = val;
        else if (key == "emb_size") opt.E = val;
        else if (key == "pre_hidden") opt.pre_hidden = val;
        else if (key == "eval_interval") opt.eval_interval = val;
        else if (key == "out") opt.out_dir = val;
        else if (key == "grid") opt.task.G = val;
        else if (key == "channels") opt.task.C = val;
        else if (key == "ambiguity") opt.task.ambiguity = val;
        else if (key == "train_size") opt.task.train_size = val;
        else if (key == "val_size") opt.task.val_size = val;
        else if (key == "text_only") opt.text_only = val;
        else throw std::runtime_error("unknown config key: " + key);
    }
    return opt;
}

/// Runs train_loop once per derived seed (seed, seed+1, ...), writes
/// per-run checkpoints and metric logs plus a manifest, and returns
/// run-averaged final metrics.
inline TrainCliResult cmd_train(const TrainCliOptions& opt_in) {
    TrainCliOptions opt = opt_in.config_path.empty() ? opt_in : apply_config_file(opt_in);
    if (opt.fusion == "mcb" && opt.sketch_dim == 0)
        throw std::invalid_argument("usage: --fusion mcb requires --sketch-dim");
    if (opt.pre_attention && opt.sketch_dim == 0)
        throw std::invalid_argument("usage: --pre-attention on requires --sketch-dim");
    if (!opt.synthetic) throw std::invalid_argument("usage: only --synthetic data is supported by cmd_train");
    SyntheticTaskSpec task = opt.task;
    task.seed = opt.seed;
    SyntheticData data = gen_synthetic(task);

    ModelConfig config;
    config.L = opt.L;
    config.E = opt.E;
    config.src_vocab = data.src_vocab.size();
    config.tgt_vocab = data.tgt_vocab.size();
    config.fusion = io::fusion_from_name(opt.fusion);
    config.pre_attention = opt.pre_attention;
    config.d = opt.sketch_dim;
    config.G = task.G;
    config.C = task.C;
    config.pre_hidden = opt.pre_hidden;
    config.max_decode_len = 16;
    config.text_only = opt.text_only;
    config.validate();

    std::filesystem::create_directories(opt.out_dir);
    TrainCliResult out;
    nlohmann::json manifest;
    manifest["config"] = config_to_json(config);
    manifest["synthetic"] = {{"G", task.G},      {"C", task.C},           {"ambiguity", task.ambiguity},
                             {"train", task.train_size}, {"val", task.val_size}, {"test", task.test_size},
                             {"seed", task.seed}};
    manifest["seeds"] = nlohmann::json::array();
    for (std::size_t r = 0; r < opt.runs; ++r) {
        const std::uint64_t run_seed = opt.seed + r;
        manifest["seeds"].push_back(run_seed);
        TrainConfig tc;
        tc.batch_size = opt.batch;
        tc.l2 = opt.l2;
        tc.lr = opt.lr;
        tc.patience = opt.patience;
        tc.eval_interval = opt.eval_interval;
        tc.max_steps = opt.steps;
        tc.seed = run_seed;
        TrainResult tr = train_loop(config, data.train, data.val, tc, opt.verbose);
        const std::string run_dir = opt.out_dir + "/run" + std::to_string(r);
        std::filesystem::create_directories(run_dir);
        save_checkpoint(Checkpoint{tr.best, data.src_vocab, data.tgt_vocab}, run_dir + "/best.ckpt");
        std::string log;
        for (const LogEntry& e : tr.log) log += format_log_entry(e) + "\n";
        io::atomic_write(run_dir + "/metrics.jsonl", log);
        out.avg_val_loss += tr.best_val_loss / double(opt.runs);
        out.avg_val_acc += tr.best_eval.accuracy() / double(opt.runs);
        out.avg_img_acc += tr.best_eval.img_dep_accuracy() / double(opt.runs);
        double bleu = -1.0;
        for (auto it = tr.log.rbegin(); it != tr.log.rend(); ++it)
            if (it->split == "val" && it->bleu >= 0) {
                bleu = it->bleu;
                break;
            }
        out.avg_val_bleu += bleu / double(opt.runs);
        out.runs.push_back(std::move(tr));
    }
    manifest["input_hash"] = fnv1a(manifest.dump());
    manifest["out_dir"] = opt.out_dir;
    io::atomic_write(opt.out_dir + "/manifest.json", manifest.dump(2) + "\n");
    return out;
}

// --------------------------------------------------------------- translate

/// One translated line per source line, via greedy decoding.
inline void cmd_translate(const std::string& ckpt_path, const std::string& src_path, const std::string& mmfm_path,
                          const std::string& out_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::vector<std::string> lines = read_lines(src_path);
    std::vector<Tensor> maps;
    if (!ckpt.params.config.text_only) {
        maps = load_feature_maps(mmfm_path);
        if (maps.size() != lines.size())
            throw std::runtime_error("count mismatch between sentences and feature maps");
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::vector<int> src = ckpt.src_vocab.encode_line(tokenize(lines[i]));
        Tensor fmap = ckpt.params.config.text_only
                          ? Tensor::zeros({ckpt.params.config.G, ckpt.params.config.C})
                          : maps[i];
        std::vector<int> ids = greedy_translate(src, fmap, ckpt.params);
        std::string line;
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (j) line += ' ';
            line += ckpt.tgt_vocab.decode(ids[j]);
        }
        out.push_back(line);
    }
    write_lines(out, out_path);
}

/// Corpus BLEU between two line-aligned text files, after tokenization.
inline double bleu_files(const std::string& hyp_path, const std::string& ref_path) {
    auto hyp_lines = read_lines(hyp_path);
    auto ref_lines = read_lines(ref_path);
    std::vector<std::vector<std::string>> hyps, refs;
    for (const auto& l : hyp_lines) hyps.push_back(tokenize(l));
    for (const auto& l : ref_lines) refs.push_back(tokenize(l));
    return bleu_corpus(hyps, refs);
}

}  // namespace mcb
