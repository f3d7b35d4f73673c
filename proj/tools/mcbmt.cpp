// mcbmt: multimodal compact-bilinear machine translation CLI.
// Subcommands: train, translate, bench-sketch, bleu.

#include <cstdio>
#include <cstring>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcb/cli.hpp"

namespace {

int classify_exit(const std::exception& e) {
    const char* msg = e.what();
    if (std::strstr(msg, "usage:") != nullptr) return 1;
    if (std::strstr(msg, "non-finite") != nullptr) return 3;
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal compact bilinear pooling translation toolkit"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train a model (synthetic task)");
    mcb::TrainCliOptions topt;
    std::string pre_attention = "off";
    train->add_flag("--synthetic", topt.synthetic, "use the built-in synthetic grounded task");
    train->add_option("--config", topt.config_path, "JSON config file (overrides defaults)");
    train->add_option("--fusion", topt.fusion, "concat|sum|product|mcb")
        ->check(CLI::IsMember({"concat", "sum", "product", "mcb"}));
    train->add_option("--pre-attention", pre_attention, "on|off")->check(CLI::IsMember({"on", "off"}));
    train->add_option("--sketch-dim", topt.sketch_dim, "MCB sketch dimension d");
    train->add_option("--runs", topt.runs, "number of runs (seeds seed, seed+1, ...)");
    train->add_option("--seed", topt.seed, "base seed");
    train->add_option("--steps", topt.steps, "max optimizer steps");
    train->add_option("--patience", topt.patience, "early-stop patience in steps");
    train->add_option("--batch", topt.batch, "mini-batch size");
    train->add_option("--lr", topt.lr, "Adam learning rate");
    train->add_option("--l2", topt.l2, "L2 coefficient");
    train->add_option("--out", topt.out_dir, "output directory");
    train->add_option("--layer-size", topt.L, "encoder/decoder layer size L");
    train->add_option("--emb-size", topt.E, "embedding size E");
    train->add_option("--pre-hidden", topt.pre_hidden, "pre-attention conv hidden channels");
    train->add_option("--eval-interval", topt.eval_interval, "steps between validation evals");
    train->add_option("--grid", topt.task.G, "synthetic grid cells");
    train->add_option("--channels", topt.task.C, "synthetic feature channels");
    train->add_option("--ambiguity", topt.task.ambiguity, "synthetic ambiguity rate");
    train->add_option("--train-size", topt.task.train_size, "synthetic training examples");
    train->add_option("--val-size", topt.task.val_size, "synthetic validation examples");
    train->add_flag("--text-only", topt.text_only, "monomodal baseline (no visual path)");
    train->add_flag("--verbose", topt.verbose, "print validation metrics to stderr");

    // translate
    auto* translate = app.add_subcommand("translate", "Greedy-translate a source file");
    std::string ckpt, src_file, mmfm_file, out_file = "translations.txt";
    translate->add_option("--ckpt", ckpt, "checkpoint path")->required();
    translate->add_option("--src", src_file, "source sentences, one per line")->required();
    translate->add_option("--mmfm", mmfm_file, "MMFM feature-map file");
    translate->add_option("--out", out_file, "output path");

    // bench-sketch
    auto* bench = app.add_subcommand("bench-sketch", "MCB approximation-error sweep over d");
    mcb::BenchOptions bopt;
    bench->add_option("--dims", bopt.dims, "sketch dimensions to sweep");
    bench->add_option("--trials", bopt.trials, "Monte-Carlo trials per d");
    bench->add_option("--n1", bopt.n1, "first input dimension");
    bench->add_option("--n2", bopt.n2, "second input dimension");
    bench->add_option("--seed", bopt.seed, "seed");

    // bleu
    auto* bleu = app.add_subcommand("bleu", "Corpus BLEU-4 between two files");
    std::string hyp_file, ref_file;
    bleu->add_option("--hyp", hyp_file, "hypothesis file")->required();
    bleu->add_option("--ref", ref_file, "reference file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*train) {
            topt.pre_attention = pre_attention == "on";
            mcb::TrainCliResult r = mcb::cmd_train(topt);
            std::printf("runs=%zu avg_val_loss=%.6f avg_val_acc=%.4f avg_img_dep_acc=%.4f avg_val_bleu=%.2f\n",
                        topt.runs, r.avg_val_loss, r.avg_val_acc, r.avg_img_acc, r.avg_val_bleu);
        } else if (*translate) {
            mcb::cmd_translate(ckpt, src_file, mmfm_file, out_file);
        } else if (*bench) {
            std::printf("%8s %14s %14s %14s\n", "d", "mean_rel_err", "std_rel_err", "pools/s");
            for (const mcb::BenchRow& row : mcb::bench_sketch(bopt)) {
                std::printf("%8zu %14.6g %14.6g %14.6g\n", row.d, row.mean_rel_err, row.std_rel_err,
                            row.pools_per_sec);
                std::fprintf(stderr, "%s\n", mcb::bench_row_json(row, bopt).c_str());
            }
        } else if (*bleu) {
            std::printf("BLEU = %.4f\n", mcb::bleu_files(hyp_file, ref_file));
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return std::strstr(e.what(), "non-finite") ? 3 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return classify_exit(e);
    }
    return 0;
}
