#pragma once

// Experiment runners behind the CLI subcommands; the acceptance suite
// drives the same entry points. Artifact layout under one workspace:
//
//   <out>/vocab.json
//   <out>/data/{train,eval,tiny}/            corpora
//   <out>/checkpoints/pretrain/              dual-encoder checkpoint
//   <out>/checkpoints/seg_<arm>_fold<k>/     segmentation checkpoints
//   <out>/logs/*.jsonl                       training logs
//   <out>/results/*.csv|*.json               tables and reports
//   <out>/attention/                         PGM dumps + index.json

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clsnav/checkpoint.hpp"
#include "clsnav/config.hpp"
#include "clsnav/eval.hpp"
#include "clsnav/training.hpp"
#include "clsnav/zoomin.hpp"

namespace clsnav {

namespace fs_detail {

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace fs_detail

// Content hash of the run: canonical config bytes plus every input
// artifact's bytes.
inline std::string content_hash(const nlohmann::json& config, const std::vector<std::filesystem::path>& inputs) {
    std::uint64_t h = fnv1a64(config.dump());
    for (const auto& p : inputs) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw ConfigError(p.string() + ": missing input artifact");
        std::ostringstream ss;
        ss << is.rdbuf();
        h = fnv1a64(ss.str(), h);
    }
    return fs_detail::hex64(h);
}

struct Workspace {
    std::filesystem::path root;

    std::filesystem::path vocab_file() const { return root / "vocab.json"; }
    std::filesystem::path data_dir(const std::string& split) const { return root / "data" / split; }
    std::filesystem::path pretrain_dir() const { return root / "checkpoints" / "pretrain"; }
    std::filesystem::path seg_dir(const std::string& arm, int fold) const {
        return root / "checkpoints" / ("seg_" + arm + "_fold" + std::to_string(fold));
    }
    std::filesystem::path logs_dir() const { return root / "logs"; }
    std::filesystem::path results_dir() const { return root / "results"; }
    std::filesystem::path attention_dir() const { return root / "attention"; }

    void require(const std::filesystem::path& p, const char* produced_by) const {
        if (!std::filesystem::exists(p)) {
            throw ConfigError("missing artifact " + p.string() + " (run `" + produced_by + "` first)");
        }
    }
};

// Every run records what produced its artifacts.
inline void write_run_record(const std::filesystem::path& dir, const std::string& command,
                             const ExperimentConfig& cfg, const std::string& hash) {
    std::filesystem::create_directories(dir);
    nlohmann::json rec{{"command", command}, {"seed", cfg.seed}, {"input_hash", hash}, {"config", cfg.raw}};
    std::ofstream os(dir / "run.json");
    os << rec.dump(2) << "\n";
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw ConfigError(path.string() + ": cannot open for writing");
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
}

inline std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// ---- corpus / model plumbing ----

inline Vocabulary experiment_vocab(const ExperimentConfig& cfg) {
    return Vocabulary(cfg.data.categories, cfg.model.prompt_template);
}

inline SynthSpec split_spec(const ExperimentConfig& cfg, const std::string& split) {
    SynthSpec spec = cfg.data;
    spec.seed = derive_seed(cfg.seed, "data." + split);
    if (split == "tiny") spec.tiny_objects = true;
    return spec;
}

inline Corpus load_split(const Workspace& ws, const std::string& split) {
    ws.require(ws.data_dir(split) / "manifest.json", "gen-data");
    return read_dataset(ws.data_dir(split));
}

// ---- subcommand bodies ----

inline void run_gen_data(const ExperimentConfig& cfg) {
    Workspace ws{cfg.out_dir};
    const auto hash = content_hash(cfg.raw, {});
    experiment_vocab(cfg).save((std::filesystem::create_directories(ws.root), ws.vocab_file()));
    const std::vector<std::pair<std::string, std::size_t>> splits = {
        {"train", cfg.train_count}, {"eval", cfg.eval_count}, {"tiny", cfg.tiny_count}};
    for (const auto& [name, count] : splits) {
        auto corpus = generate_corpus(split_spec(cfg, name), count, cfg.n_folds);
        write_dataset(ws.data_dir(name), corpus);
    }
    write_run_record(ws.root, "gen-data", cfg, hash);
}

inline Checkpoint run_pretrain(const ExperimentConfig& cfg) {
    Workspace ws{cfg.out_dir};
    auto corpus = load_split(ws, "train");
    const auto hash = content_hash(cfg.raw, {ws.data_dir("train") / "manifest.json"});

    ClsClipModel model(cfg.model, experiment_vocab(cfg), derive_seed(cfg.seed, "model"));
    std::filesystem::create_directories(ws.logs_dir());
    std::ofstream log(ws.logs_dir() / "pretrain.jsonl");
    auto ckpt = contrastive_pretrain(model, corpus, cfg.pretrain, &log);
    ckpt.config = cfg.raw;
    ckpt.metrics["input_hash"] = hash;
    save_checkpoint(ws.pretrain_dir(), ckpt);
    write_run_record(ws.pretrain_dir(), "pretrain", cfg, hash);
    return ckpt;
}

struct SegArmResult {
    std::string arm;
    int fold_id = 0;
    EvalReport unseen;
    std::shared_ptr<ClsClipModel> model;
    Checkpoint ckpt;
};

// One segmentation run + unseen-fold evaluation; shared by train-seg,
// the ablation drivers and the acceptance suite.
inline SegArmResult train_and_eval_arm(const ModelConfig& mcfg, const Vocabulary& vocab, std::uint64_t model_seed,
                                       const Corpus& train_corpus, const Corpus& eval_corpus, const FoldSplit& fold,
                                       const Checkpoint& pretrained, const TrainConfig& tcfg,
                                       const std::string& arm_tag, std::ostream* log = nullptr,
                                       const SegTrainHooks* hooks = nullptr) {
    SegArmResult r;
    r.arm = arm_tag;
    r.fold_id = fold.fold_id;
    r.model = std::make_shared<ClsClipModel>(mcfg, vocab, model_seed);
    r.ckpt = train_segmentation(*r.model, train_corpus, fold, pretrained, tcfg, log, hooks);
    r.unseen = evaluate_fold_unseen(*r.model, eval_corpus, fold);
    return r;
}

inline SegArmResult run_train_seg(const ExperimentConfig& cfg) {
    Workspace ws{cfg.out_dir};
    auto train_corpus = load_split(ws, "train");
    auto eval_corpus = load_split(ws, "eval");
    ws.require(ws.pretrain_dir() / "manifest.json", "pretrain");
    auto pretrained = load_checkpoint(ws.pretrain_dir());
    const auto hash = content_hash(cfg.raw, {ws.data_dir("train") / "manifest.json", ws.pretrain_dir() / "params.bin"});

    const auto folds = build_folds(cfg.data.categories.size(), cfg.n_folds);
    const auto& fold = folds.at(static_cast<std::size_t>(cfg.fold_id));
    const std::string arm = mechanism_name(cfg.model.visual.mechanism);

    std::filesystem::create_directories(ws.logs_dir());
    std::ofstream log(ws.logs_dir() / ("seg_" + arm + "_fold" + std::to_string(fold.fold_id) + ".jsonl"));
    auto result = train_and_eval_arm(cfg.model, experiment_vocab(cfg), derive_seed(cfg.seed, "model"), train_corpus,
                                     eval_corpus, fold, pretrained, cfg.segment, arm, &log);

    result.ckpt.config = cfg.raw;
    result.ckpt.metrics["input_hash"] = hash;
    result.ckpt.metrics["unseen_miou"] = result.unseen.miou;
    save_checkpoint(ws.seg_dir(arm, fold.fold_id), result.ckpt);
    write_run_record(ws.seg_dir(arm, fold.fold_id), "train-seg", cfg, hash);

    write_csv(ws.results_dir() / ("train_seg_" + arm + "_fold" + std::to_string(fold.fold_id) + ".csv"),
              {"mechanism", "fold", "unseen_miou", "unseen_fb_iou", "config_hash"},
              {{arm, std::to_string(fold.fold_id), fmt_metric(result.unseen.miou), fmt_metric(result.unseen.fb_iou),
                hash}});
    return result;
}

// `oracle_model` routes ground-truth masks through the harness (plumbing
// check: a perfect predictor scores mIoU 1).
inline EvalReport run_evaluate(const ExperimentConfig& cfg, bool oracle_model = false) {
    Workspace ws{cfg.out_dir};
    auto eval_corpus = load_split(ws, "eval");
    const auto folds = build_folds(cfg.data.categories.size(), cfg.n_folds);
    const auto& fold = folds.at(static_cast<std::size_t>(cfg.fold_id));
    const std::string arm = mechanism_name(cfg.model.visual.mechanism);

    EvalReport report;
    std::string hash;
    if (oracle_model) {
        hash = content_hash(cfg.raw, {ws.data_dir("eval") / "manifest.json"});
        IoUAccumulator acc;
        for (const auto& sample : eval_corpus.samples) {
            for (int c : fold.unseen) {
                if (sample.present.count(c)) acc.add(c, sample.masks.at(c), sample.masks.at(c));
            }
        }
        report = acc.report(fold.unseen, fold.fold_id, "oracle");
    } else {
        ws.require(ws.seg_dir(arm, fold.fold_id) / "manifest.json", "train-seg");
        auto ckpt = load_checkpoint(ws.seg_dir(arm, fold.fold_id));
        hash = content_hash(cfg.raw, {ws.data_dir("eval") / "manifest.json",
                                      ws.seg_dir(arm, fold.fold_id) / "params.bin"});
        ClsClipModel model(cfg.model, experiment_vocab(cfg), derive_seed(cfg.seed, "model"));
        load_state(model.all_params(), ckpt);
        report = evaluate_fold_unseen(model, eval_corpus, fold);
    }

    std::filesystem::create_directories(ws.results_dir());
    {
        std::ofstream os(ws.results_dir() / ("evaluate_" + report.mechanism + "_fold" +
                                             std::to_string(fold.fold_id) + ".json"));
        auto j = report.to_json();
        j["config_hash"] = hash;
        os << j.dump(2) << "\n";
    }
    write_csv(ws.results_dir() / ("evaluate_" + report.mechanism + "_fold" + std::to_string(fold.fold_id) + ".csv"),
              {"mechanism", "fold", "unseen_miou", "unseen_fb_iou", "episodes", "config_hash"},
              {{report.mechanism, std::to_string(fold.fold_id), fmt_metric(report.miou), fmt_metric(report.fb_iou),
                std::to_string(report.sample_count), hash}});
    return report;
}

// Layer-combination ablation arms.
inline std::vector<std::pair<std::string, std::set<std::size_t>>> layer_ablation_arms() {
    return {{"0,1,2", {0, 1, 2}}, {"2,5,8", {2, 5, 8}}, {"9,10,11", {9, 10, 11}}, {"2,3,4", {2, 3, 4}}};
}

inline std::vector<std::vector<std::string>> run_ablate_layers(const ExperimentConfig& cfg,
                                                               const std::string& only_arm = "") {
    Workspace ws{cfg.out_dir};
    auto train_corpus = load_split(ws, "train");
    auto eval_corpus = load_split(ws, "eval");
    ws.require(ws.pretrain_dir() / "manifest.json", "pretrain");
    auto pretrained = load_checkpoint(ws.pretrain_dir());
    const auto hash = content_hash(cfg.raw, {ws.data_dir("train") / "manifest.json", ws.pretrain_dir() / "params.bin"});
    const auto folds = build_folds(cfg.data.categories.size(), cfg.n_folds);
    const auto& fold = folds.at(static_cast<std::size_t>(cfg.fold_id));
    const auto vocab = experiment_vocab(cfg);

    std::vector<std::vector<std::string>> rows;
    for (const auto& [name, layers] : layer_ablation_arms()) {
        if (!only_arm.empty() && name != only_arm) continue;
        ModelConfig mcfg = cfg.model;
        mcfg.visual.mechanism = Mechanism::replace_cls;
        mcfg.visual.replace_layers = layers;
        mcfg.visual.validate();
        auto res = train_and_eval_arm(mcfg, vocab, derive_seed(cfg.seed, "model.layers." + name), train_corpus,
                                      eval_corpus, fold, pretrained, cfg.segment, "layers_" + name);
        rows.push_back({name, std::to_string(fold.fold_id), fmt_metric(res.unseen.miou),
                        fmt_metric(res.unseen.fb_iou), hash});
    }
    write_csv(ws.results_dir() / "ablate_layers.csv",
              {"layers", "fold", "unseen_miou", "unseen_fb_iou", "config_hash"}, rows);
    write_run_record(ws.results_dir(), "ablate-layers", cfg, hash);
    return rows;
}

inline const std::vector<Mechanism>& mechanism_arms() {
    static const std::vector<Mechanism> arms = {Mechanism::replace_cls, Mechanism::channel_attention,
                                                Mechanism::spatial_attention, Mechanism::vpt};
    return arms;
}

inline std::vector<std::vector<std::string>> run_ablate_mechanism(const ExperimentConfig& cfg,
                                                                  const std::string& only_arm = "") {
    Workspace ws{cfg.out_dir};
    auto train_corpus = load_split(ws, "train");
    auto eval_corpus = load_split(ws, "eval");
    ws.require(ws.pretrain_dir() / "manifest.json", "pretrain");
    auto pretrained = load_checkpoint(ws.pretrain_dir());
    const auto hash = content_hash(cfg.raw, {ws.data_dir("train") / "manifest.json", ws.pretrain_dir() / "params.bin"});
    const auto folds = build_folds(cfg.data.categories.size(), cfg.n_folds);
    const auto vocab = experiment_vocab(cfg);

    std::vector<std::vector<std::string>> rows;
    for (const auto& fold : folds) {
        std::vector<std::string> row{std::to_string(fold.fold_id)};
        for (auto mech : mechanism_arms()) {
            const auto name = mechanism_name(mech);
            if (!only_arm.empty() && name != only_arm) {
                row.push_back("");
                continue;
            }
            ModelConfig mcfg = cfg.model;
            mcfg.visual.mechanism = mech;
            mcfg.visual.validate();
            auto res = train_and_eval_arm(
                mcfg, vocab, derive_seed(cfg.seed, "model.mech." + name, static_cast<std::uint64_t>(fold.fold_id)),
                train_corpus, eval_corpus, fold, pretrained, cfg.segment, name);
            row.push_back(fmt_metric(res.unseen.miou));
        }
        row.push_back(hash);
        rows.push_back(std::move(row));
    }
    std::vector<std::string> header{"fold"};
    for (auto mech : mechanism_arms()) header.push_back(mechanism_name(mech));
    header.push_back("config_hash");
    write_csv(ws.results_dir() / "ablate_mechanism.csv", header, rows);
    write_run_record(ws.results_dir(), "ablate-mechanism", cfg, hash);
    return rows;
}

struct ZoominScores {
    double plain = 0.0;
    std::map<std::string, double> by_mode;  // oracle, oracle_jittered, blob
    double boxes_oracle = 0.0;              // raw oracle boxes as masks
};

// Tiny-object study: plain forward vs zoom-in per proposal source vs the
// raw-boxes baseline, on the queried fold categories.
inline ZoominScores zoomin_scores(const ClsClipModel& model, const Corpus& tiny, const std::vector<int>& classes,
                                  std::uint64_t seed) {
    const auto tcls = model.text_cls_table();
    IoUAccumulator plain_acc, boxes_acc;
    std::map<std::string, IoUAccumulator> mode_acc;
    const std::vector<ProposalSource> sources = {ProposalSource::oracle, ProposalSource::oracle_jittered,
                                                 ProposalSource::blob};
    for (const auto& sample : tiny.samples) {
        auto image = tensor_from_image(sample.image);
        for (int c : classes) {
            if (!sample.present.count(c)) continue;
            const auto& gt = sample.masks.at(c);
            plain_acc.add(c, binarize(model.segment(image, tcls.at(c))), gt);
            for (auto src : sources) {
                auto rng = make_rng(derive_seed(seed, "zoomin." + proposal_source_name(src), sample.id));
                auto regions = propose_regions(sample, src, rng, model.vocab().word_count());
                mode_acc[proposal_source_name(src)].add(c, zoomin_segment(model, image, regions, c, tcls.at(c)), gt);
                if (src == ProposalSource::oracle) {
                    boxes_acc.add(c, boxes_as_mask(regions, c, sample.image.h), gt);
                }
            }
        }
    }
    ZoominScores s;
    s.plain = plain_acc.report(classes, -1, "plain").miou;
    for (auto& [name, acc] : mode_acc) s.by_mode[name] = acc.report(classes, -1, name).miou;
    s.boxes_oracle = boxes_acc.report(classes, -1, "boxes").miou;
    return s;
}

inline ZoominScores run_zoomin_eval(const ExperimentConfig& cfg) {
    Workspace ws{cfg.out_dir};
    auto tiny = load_split(ws, "tiny");
    const auto folds = build_folds(cfg.data.categories.size(), cfg.n_folds);
    const auto& fold = folds.at(static_cast<std::size_t>(cfg.fold_id));
    const std::string arm = mechanism_name(cfg.model.visual.mechanism);
    ws.require(ws.seg_dir(arm, fold.fold_id) / "manifest.json", "train-seg");
    auto ckpt = load_checkpoint(ws.seg_dir(arm, fold.fold_id));
    const auto hash = content_hash(cfg.raw, {ws.data_dir("tiny") / "manifest.json",
                                             ws.seg_dir(arm, fold.fold_id) / "params.bin"});

    ClsClipModel model(cfg.model, experiment_vocab(cfg), derive_seed(cfg.seed, "model"));
    load_state(model.all_params(), ckpt);
    auto scores = zoomin_scores(model, tiny, fold.unseen, cfg.seed);

    write_csv(ws.results_dir() / "zoomin_eval.csv",
              {"fold", "plain", "oracle", "oracle_jittered", "blob", "boxes_oracle", "config_hash"},
              {{std::to_string(fold.fold_id), fmt_metric(scores.plain), fmt_metric(scores.by_mode.at("oracle")),
                fmt_metric(scores.by_mode.at("oracle_jittered")), fmt_metric(scores.by_mode.at("blob")),
                fmt_metric(scores.boxes_oracle), hash}});
    write_run_record(ws.results_dir(), "zoomin-eval", cfg, hash);
    return scores;
}

// Attention dumps: [CLS]-row maps at the chosen layer, with and without
// the text-token replacement, one 8-bit PGM per head.
inline nlohmann::json run_attention_dump(const ExperimentConfig& cfg) {
    Workspace ws{cfg.out_dir};
    auto eval_corpus = load_split(ws, "eval");
    const auto folds = build_folds(cfg.data.categories.size(), cfg.n_folds);
    const auto& fold = folds.at(static_cast<std::size_t>(cfg.fold_id));
    const std::string arm = mechanism_name(cfg.model.visual.mechanism);
    ws.require(ws.seg_dir(arm, fold.fold_id) / "manifest.json", "train-seg");
    auto ckpt = load_checkpoint(ws.seg_dir(arm, fold.fold_id));
    const auto hash = content_hash(cfg.raw, {ws.seg_dir(arm, fold.fold_id) / "params.bin"});

    ClsClipModel model(cfg.model, experiment_vocab(cfg), derive_seed(cfg.seed, "model"));
    load_state(model.all_params(), ckpt);

    const std::size_t layer = cfg.default_attention_layer();
    const std::size_t grid = cfg.model.visual.grid();
    std::filesystem::create_directories(ws.attention_dir());

    auto dump_map = [&](const Tensor& attn, std::size_t offset, const std::string& file) {
        std::vector<std::uint8_t> gray(grid * grid, 0);
        double mx = 0.0;
        for (std::size_t j = 0; j < grid * grid; ++j) mx = std::max(mx, attn.at(0, offset + j));
        for (std::size_t j = 0; j < grid * grid; ++j) {
            gray[j] = mx > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * attn.at(0, offset + j) / mx)) : 0;
        }
        write_pgm_gray(ws.attention_dir() / file, grid, grid, gray);
    };

    nlohmann::json index = nlohmann::json::array();
    const auto tcls = model.text_cls_table();
    std::size_t dumped = 0;
    for (const auto& sample : eval_corpus.samples) {
        if (dumped >= cfg.attention_images) break;
        int category = -1;
        for (int c : fold.unseen) {
            if (sample.present.count(c)) category = c;
        }
        if (category < 0) continue;
        auto image = tensor_from_image(sample.image);

        Tape t1, t2;
        auto tc = tcls.at(category);
        auto with = model.visual().encode(t1, image, Mechanism::replace_cls, &tc);
        auto without = model.visual().encode(t2, image, Mechanism::none, nullptr);
        for (std::size_t h = 0; h < cfg.model.visual.n_heads; ++h) {
            const auto base = "img" + std::to_string(sample.id) + "_layer" + std::to_string(layer) + "_head" +
                              std::to_string(h);
            dump_map(*with.attention.at(layer).at(h), with.patch_col_offset, base + "_with.pgm");
            dump_map(*without.attention.at(layer).at(h), without.patch_col_offset, base + "_without.pgm");
            index.push_back({{"image", sample.id},
                             {"category", model.vocab().word(static_cast<std::size_t>(category))},
                             {"layer", layer},
                             {"head", h},
                             {"with", base + "_with.pgm"},
                             {"without", base + "_without.pgm"}});
        }
        ++dumped;
    }
    nlohmann::json doc{{"config_hash", hash}, {"entries", index}};
    std::ofstream os(ws.attention_dir() / "index.json");
    os << doc.dump(2) << "\n";
    write_run_record(ws.attention_dir(), "attention-dump", cfg, hash);
    return doc;
}

}  // namespace clsnav
