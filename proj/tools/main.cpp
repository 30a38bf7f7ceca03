// clsnav command-line driver: corpus generation, the two training
// stages, evaluation, the ablation studies, zoom-in runs and attention
// dumps. All randomness flows from the single seed in the config.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "clsnav/experiments.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
    std::string arm;
};

clsnav::ExperimentConfig load_config(const CommonArgs& args) {
    auto cfg = clsnav::load_experiment_config(args.config_path);
    if (args.has_seed_override) {
        cfg.raw["seed"] = args.seed_override;
        cfg = clsnav::parse_experiment_config(cfg.raw);
    }
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_arm = false) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    cmd->add_option("--out", args.out_override, "override the output workspace directory");
    cmd->add_option("--seed", args.seed_override, "override the root seed")
        ->each([&args](const std::string&) { args.has_seed_override = true; });
    if (with_arm) cmd->add_option("--arm", args.arm, "restrict to one arm");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"clsnav: text-[CLS] guided zero-shot segmentation workbench"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* gen = app.add_subcommand("gen-data", "generate the train/eval/tiny corpora");
    add_common(gen, args);
    auto* pre = app.add_subcommand("pretrain", "contrastive dual-encoder pretraining");
    add_common(pre, args);
    auto* seg = app.add_subcommand("train-seg", "segmentation training for the configured fold/mechanism");
    add_common(seg, args);
    auto* eval_cmd = app.add_subcommand("evaluate", "unseen-fold evaluation of a trained checkpoint");
    add_common(eval_cmd, args, /*with_arm=*/true);
    auto* abl_layers = app.add_subcommand("ablate-layers", "layer-combination ablation (4 arms)");
    add_common(abl_layers, args, true);
    auto* abl_mech = app.add_subcommand("ablate-mechanism", "mechanism ablation over all folds");
    add_common(abl_mech, args, true);
    auto* zoom = app.add_subcommand("zoomin-eval", "tiny-object zoom-in study");
    add_common(zoom, args);
    auto* attn = app.add_subcommand("attention-dump", "dump [CLS]-row attention maps with/without replacement");
    add_common(attn, args);
    auto* schema = app.add_subcommand("schema", "print the experiment config schema");

    CLI11_PARSE(app, argc, argv);

    try {
        if (schema->parsed()) {
            std::cout << clsnav::config_schema().dump(2) << "\n";
            return 0;
        }
        auto cfg = load_config(args);
        if (gen->parsed()) {
            clsnav::run_gen_data(cfg);
            std::cout << "corpora written under " << (cfg.out_dir / "data").string() << "\n";
        } else if (pre->parsed()) {
            auto ckpt = clsnav::run_pretrain(cfg);
            std::cout << "pretrain done: retrieval=" << ckpt.metrics["retrieval"]
                      << " epochs=" << ckpt.metrics["epochs_run"] << "\n";
        } else if (seg->parsed()) {
            auto res = clsnav::run_train_seg(cfg);
            std::cout << "train-seg done: arm=" << res.arm << " fold=" << res.fold_id
                      << " unseen_miou=" << res.unseen.miou << "\n";
        } else if (eval_cmd->parsed()) {
            auto report = clsnav::run_evaluate(cfg, args.arm == "oracle");
            std::cout << "evaluate: mechanism=" << report.mechanism << " fold=" << report.fold_id
                      << " unseen_miou=" << report.miou << " fb_iou=" << report.fb_iou << "\n";
        } else if (abl_layers->parsed()) {
            for (const auto& row : clsnav::run_ablate_layers(cfg, args.arm)) {
                std::cout << "layers {" << row[0] << "} fold " << row[1] << " unseen_miou " << row[2] << "\n";
            }
        } else if (abl_mech->parsed()) {
            for (const auto& row : clsnav::run_ablate_mechanism(cfg, args.arm)) {
                std::cout << "fold " << row[0];
                for (std::size_t i = 1; i + 1 < row.size(); ++i) std::cout << " " << row[i];
                std::cout << "\n";
            }
        } else if (zoom->parsed()) {
            auto s = clsnav::run_zoomin_eval(cfg);
            std::cout << "zoomin: plain=" << s.plain << " oracle=" << s.by_mode.at("oracle")
                      << " jittered=" << s.by_mode.at("oracle_jittered") << " blob=" << s.by_mode.at("blob")
                      << " boxes=" << s.boxes_oracle << "\n";
        } else if (attn->parsed()) {
            auto doc = clsnav::run_attention_dump(cfg);
            std::cout << "attention dumps: " << doc["entries"].size() << " map pairs under "
                      << (cfg.out_dir / "attention").string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
