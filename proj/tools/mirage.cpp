// Command-line front end: corpus/bench generation, model init/info, training,
// harvesting, evaluation, probing, and the full experiment pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mirage/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mirage;

namespace {

CooccurrenceSpec load_spec_or_default(const std::string& path) {
    if (path.empty()) return default_spec();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open spec file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    CooccurrenceSpec spec = CooccurrenceSpec::from_json(nlohmann::json::parse(buf.str()));
    spec.validate();
    return spec;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

// Every training run leaves a manifest beside its checkpoint: config hash,
// seed, and content hashes of the inputs it consumed.
void write_train_manifest(const fs::path& ckpt_path, const std::string& command,
                          std::uint64_t seed, const std::string& config_hash,
                          const std::vector<std::string>& input_paths) {
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& p : input_paths) inputs[p] = sha256_file(p);
    write_json_file(ckpt_path.string() + ".manifest.json",
                    nlohmann::json{{"command", command},
                                   {"seed", seed},
                                   {"config_hash", config_hash},
                                   {"inputs", inputs},
                                   {"output", ckpt_path.filename().string()}});
}

fs::path sibling(const fs::path& ckpt_path, const std::string& suffix) {
    fs::path p = ckpt_path;
    p.replace_extension();
    return p.string() + suffix;
}

// --- subcommand bodies ------------------------------------------------------

struct CorpusGenArgs {
    std::string spec, out;
    int count = 2000;
    int qa = 3;
    std::uint64_t seed = 42;
};

int cmd_corpus_gen(const CorpusGenArgs& a) {
    const CooccurrenceSpec spec = load_spec_or_default(a.spec);
    const GeneratedCorpus corpus = gen_corpus(spec, a.count, a.qa, a.seed);
    fs::create_directories(a.out);
    write_caption_file(corpus, spec, a.seed, (fs::path(a.out) / "captions.jsonl").string());
    if (a.qa > 0) write_qa_file(corpus, spec, a.seed, (fs::path(a.out) / "qa.jsonl").string());
    write_json_file(fs::path(a.out) / "spec.json", spec.to_json());
    std::cout << "wrote " << corpus.captions.size() << " captions, " << corpus.qas.size()
              << " questions to " << a.out << "\n";
    return 0;
}

struct BenchGenArgs {
    std::string spec, out, corpus;
    int count = 400;
    std::uint64_t seed = 42;
};

int cmd_bench_gen(const BenchGenArgs& a) {
    const CooccurrenceSpec spec = load_spec_or_default(a.spec);
    std::vector<Scene> pool;
    if (!a.corpus.empty()) {
        const CorpusData data = load_corpus(a.corpus);
        for (const auto& [id, scene] : data.scenes) pool.push_back(scene);
    } else {
        for (int i = 0; i < 3 * a.count; ++i) {
            pool.push_back(gen_scene(spec, Rng::mix(a.seed, i)));
        }
    }
    const GeneratedBenchmark bench = gen_popev2(spec, pool, a.count, a.seed, &std::cerr);
    write_benchmark_file(bench, spec, a.seed, a.out);
    std::cout << "wrote " << bench.items.size() << " benchmark questions to " << a.out << "\n";
    return 0;
}

struct ModelInitArgs {
    std::string spec, out;
    int visual_dim = 32, hidden_dim = 24, layers = 3;
    std::uint64_t seed = 42;
};

int cmd_model_init(const ModelInitArgs& a) {
    const CooccurrenceSpec spec = load_spec_or_default(a.spec);
    const Checkpoint ckpt = init_checkpoint(spec, a.visual_dim, a.hidden_dim, a.layers, a.seed);
    save_checkpoint(ckpt, a.out);
    std::cout << "wrote checkpoint " << a.out << "\n";
    return 0;
}

int cmd_model_info(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    std::cout << "checkpoint: " << path << "\n"
              << "  file sha256: " << sha256_file(path) << "\n"
              << "  stage: " << ckpt.meta.stage << "  steps: " << ckpt.meta.step_count << "\n"
              << "  config hash: "
              << (ckpt.meta.config_hash.empty() ? "(none)" : ckpt.meta.config_hash) << "\n"
              << "  dims: grid " << ckpt.dims.grid << ", classes " << ckpt.dims.classes
              << ", visual " << ckpt.dims.visual_dim << ", hidden " << ckpt.dims.hidden_dim
              << ", layers " << ckpt.dims.layers << ", vocab " << ckpt.dims.vocab << "\n"
              << "  blocks:\n";
    for (const auto& block : checkpoint_blocks(ckpt)) {
        const std::size_t rows = block.matrix ? block.matrix->rows() : 1;
        const std::size_t cols = block.matrix ? block.matrix->cols() : block.vec->size();
        std::cout << "    " << block.name << ": " << rows << "x" << cols << "\n";
    }
    return 0;
}

int cmd_train_base(const std::string& config_path) {
    const Config cfg = Config::load(config_path);
    const std::string captions_path = cfg.get_str("corpus.captions", "");
    if (captions_path.empty()) throw ConfigError("config key corpus.captions is required");
    const std::string qa_path = cfg.get_str("corpus.qa", "");
    const std::string out_dir = cfg.get_str("out", "");
    if (out_dir.empty()) throw ConfigError("config key out is required");
    const ExperimentConfig exp = ExperimentConfig::from_config(cfg);

    const CorpusData captions = load_corpus(captions_path);
    const CooccurrenceSpec spec = exp.spec_file.empty()
                                      ? default_spec()
                                      : load_spec_or_default(exp.spec_file);
    Checkpoint init =
        init_checkpoint(spec, exp.visual_dim, exp.hidden_dim, exp.layers, exp.seed);
    std::vector<TrainExample> ar = make_ar_examples(captions, init.vocab);
    std::vector<std::string> inputs{captions_path};
    if (!qa_path.empty()) {
        const CorpusData qa = load_corpus(qa_path);
        std::vector<TrainExample> qa_ex = make_ar_examples(qa, init.vocab);
        ar.insert(ar.end(), qa_ex.begin(), qa_ex.end());
        inputs.push_back(qa_path);
    }
    TrainConfig tc = exp.base_train;
    tc.config_hash = exp.config_hash;
    std::cerr << "training on " << ar.size() << " examples for " << tc.steps << " steps\n";
    const TrainResult result = train_base(init, ar, tc);
    const fs::path ckpt_path = fs::path(out_dir) / "base.ckpt";
    fs::create_directories(out_dir);
    save_checkpoint(result.checkpoint, ckpt_path);
    write_loss_csv(result.history, sibling(ckpt_path, "_loss.csv"));
    write_train_manifest(ckpt_path, "train base", tc.seed, exp.config_hash, inputs);
    std::cout << "wrote " << ckpt_path.string() << " (final loss "
              << (result.history.empty() ? 0.0 : result.history.back().loss_ar) << ")\n";
    return 0;
}

struct TrainObliviateArgs {
    std::string ckpt, unlearn, out;
    std::vector<std::string> ar;
    double alpha = 0.02;
    long long steps = 600;
    int batch = 32, unlearn_batch = 8, ratio = 0;
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::uint64_t seed = 42;
};

int cmd_train_obliviate(const TrainObliviateArgs& a) {
    const Checkpoint base = load_checkpoint(a.ckpt);
    const CorpusData unlearn_data = load_corpus(a.unlearn);
    const std::vector<TrainExample> unlearn = make_unlearn_examples(unlearn_data, base.vocab);

    // AR pool from all --ar files; memory stays alive through training.
    std::vector<CorpusData> ar_files;
    for (const auto& p : a.ar) ar_files.push_back(load_corpus(p));
    std::vector<TrainExample> ar;
    for (const auto& data : ar_files) {
        std::vector<TrainExample> ex = make_ar_examples(data, base.vocab);
        ar.insert(ar.end(), ex.begin(), ex.end());
    }
    if (a.ratio > 0) {
        ar = seeded_subsample(ar, unlearn.size() * static_cast<std::size_t>(a.ratio),
                              Rng::mix(a.seed, 0xA27ull));
    }

    TrainConfig tc;
    tc.steps = a.steps;
    tc.batch_size = a.batch;
    tc.unlearn_batch_size = a.unlearn_batch;
    tc.alpha = a.alpha;
    tc.optimizer.lr = a.lr;
    tc.optimizer.kind = a.optimizer;
    tc.seed = a.seed;
    std::cerr << "obliviate: " << unlearn.size() << " unlearn records, " << ar.size()
              << " AR examples, alpha " << a.alpha << "\n";
    const TrainResult result = obliviate(base, unlearn, ar, tc);
    if (!result.warning.empty()) std::cerr << "warning: " << result.warning << "\n";
    if (result.aborted) std::cerr << "aborted: " << result.abort_reason << "\n";
    save_checkpoint(result.checkpoint, a.out);
    write_loss_csv(result.history, sibling(a.out, "_loss.csv"));
    std::vector<std::string> inputs{a.ckpt, a.unlearn};
    inputs.insert(inputs.end(), a.ar.begin(), a.ar.end());
    write_train_manifest(a.out, "train obliviate", a.seed, base.meta.config_hash, inputs);
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

struct HarvestArgs {
    std::string ckpt, corpus, out;
    int limit = 0;
};

int cmd_harvest(const HarvestArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    CorpusData captions = load_corpus(a.corpus);
    if (a.limit > 0 && static_cast<int>(captions.captions.size()) > a.limit) {
        captions.captions.resize(static_cast<std::size_t>(a.limit));
    }
    const std::vector<InferenceRecord> inferences = reinfer(ckpt, captions);
    const HarvestResult harvest = build_unlearn_set(inferences, ckpt.vocab);
    if (!harvest.warning.empty()) std::cerr << "warning: " << harvest.warning << "\n";
    nlohmann::json header = captions.header;
    header["kind"] = "unlearn";
    header["source_checkpoint"] = sha256_file(a.ckpt);
    write_unlearn_file(captions, harvest.records, header, a.out);
    write_json_file(a.out + ".stats.json", stats_to_json(harvest.stats));
    std::cout << "harvested " << harvest.records.size() << " unlearn records from "
              << harvest.stats.records_total << " captions -> " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string ckpt, bench, out, captions;
};

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const CorpusData bench = load_corpus(a.bench);
    const EvalReport report = eval_benchmark(ckpt, bench);
    fs::create_directories(a.out);

    JsonlWriter items(nlohmann::json{
        {"format", "mirage-jsonl"}, {"kind", "eval_items"}, {"stage", ckpt.meta.stage}});
    for (const auto& item : report.items) items.append(eval_item_to_json(item));
    items.save((fs::path(a.out) / "items.jsonl").string());

    nlohmann::json provenance{{"checkpoint", sha256_file(a.ckpt)},
                              {"benchmark", sha256_file(a.bench)},
                              {"checkpoint_stage", ckpt.meta.stage}};
    write_json_file(fs::path(a.out) / "report.json", report_to_json(report, provenance));

    if (!a.captions.empty()) {
        const CorpusData captions = load_corpus(a.captions);
        const std::vector<InferenceRecord> inferences = reinfer(ckpt, captions);
        const ChairRates chair = chair_metrics(inferences, ckpt.vocab);
        write_json_file(
            fs::path(a.out) / "chair.json",
            nlohmann::json{{"resp_rate", chair.resp_rate},
                           {"mention_rate", chair.mention_rate
                                                ? nlohmann::json(*chair.mention_rate)
                                                : nlohmann::json(nullptr)},
                           {"responses_total", chair.counts.responses_total},
                           {"responses_hallucinated", chair.counts.responses_hallucinated},
                           {"mentions_total", chair.counts.mentions_total},
                           {"mentions_hallucinated", chair.counts.mentions_hallucinated}});
    }
    auto show = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("n/a");
    };
    std::cout << "accuracy " << show(report.metrics.accuracy) << "  f1 "
              << show(report.metrics.f1) << "  tnr " << show(report.metrics.tnr) << "  pbo "
              << show(report.metrics.pbo) << "\n";
    return 0;
}

struct ProbeExtractArgs {
    std::string ckpt, spec, target = "dog", out;
    int normal = 800, test = 177;
    std::uint64_t seed = 42;
};

int cmd_probe_extract(const ProbeExtractArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const CooccurrenceSpec spec = load_spec_or_default(a.spec);
    int target = -1;
    for (int i = 0; i < spec.class_count(); ++i) {
        if (spec.class_names[static_cast<std::size_t>(i)] == a.target) target = i;
    }
    if (target < 0) throw ConfigError("target class not in spec: " + a.target);
    const ProbeSceneSet set = make_probe_scenes(spec, target, a.normal, a.test, a.seed);
    const std::vector<int> question = ckpt.vocab.encode(question_tokens(a.target));
    const auto taps = all_tap_names(ckpt.dims.layers);
    const std::vector<ProbeDataset> datasets = extract_taps(ckpt, set, question, taps);

    JsonlWriter writer(nlohmann::json{{"format", "mirage-jsonl"},
                                      {"kind", "probe_dataset"},
                                      {"target", a.target},
                                      {"normal", a.normal},
                                      {"test", a.test},
                                      {"seed", a.seed},
                                      {"spec_hash", spec.hash()},
                                      {"checkpoint", sha256_file(a.ckpt)}});
    std::size_t total = 0;
    for (const auto& ds : datasets) {
        for (const auto& ex : ds.examples) {
            writer.append(probe_example_to_json(ds.tap, ex));
            ++total;
        }
    }
    writer.save(a.out);
    std::cout << "wrote " << total << " probe examples (" << datasets.size() << " taps) to "
              << a.out << "\n";
    return 0;
}

struct ProbeTrainArgs {
    std::string data, out;
    ProbeConfig cfg;
};

int cmd_probe_train(const ProbeTrainArgs& a) {
    const ProbeFile file = load_probe_file(a.data);
    nlohmann::json probes = nlohmann::json::array();
    for (const auto& ds : file.datasets) {
        const ProbeTrainResult result = train_probe(ds, a.cfg);
        probes.push_back(probe_params_to_json(result.params, result.best_val_accuracy));
        std::cerr << ds.tap << ": best val accuracy " << result.best_val_accuracy << " at epoch "
                  << result.best_epoch << "\n";
    }
    write_json_file(a.out, probes);
    std::cout << "wrote " << probes.size() << " probes to " << a.out << "\n";
    return 0;
}

struct ProbeEvalArgs {
    std::string data, probes, ckpt, spec, out;
};

int cmd_probe_eval(const ProbeEvalArgs& a) {
    const ProbeFile file = load_probe_file(a.data);
    const nlohmann::json probe_list = nlohmann::json::parse(std::ifstream(a.probes));

    nlohmann::json per_tap = nlohmann::json::object();
    double best_acc = -1.0;
    std::string best_tap;
    for (const auto& pj : probe_list) {
        const ProbeParams params = probe_params_from_json(pj);
        const ProbeDataset* ds = nullptr;
        for (const auto& d : file.datasets) {
            if (d.tap == params.tap) ds = &d;
        }
        if (!ds) throw DataError("probe tap not in dataset: " + params.tap);
        const ProbeEval ev = eval_probe(params, ds->split("test"));
        per_tap[params.tap] = {{"test_accuracy", ev.accuracy},
                               {"constant_output", ev.constant_output},
                               {"val_accuracy", pj.value("best_val_accuracy", 0.0)}};
        if (ev.accuracy > best_acc) {
            best_acc = ev.accuracy;
            best_tap = params.tap;
        }
    }

    nlohmann::json summary{{"taps", per_tap}, {"best_tap", best_tap},
                           {"best_tap_accuracy", best_acc}};
    // With a checkpoint, rebuild the counterfactual scenes from the dataset
    // header and compare against what the model itself answers.
    if (!a.ckpt.empty()) {
        const Checkpoint ckpt = load_checkpoint(a.ckpt);
        const CooccurrenceSpec spec = load_spec_or_default(a.spec);
        const std::string target_name = file.header.at("target").get<std::string>();
        int target = -1;
        for (int i = 0; i < spec.class_count(); ++i) {
            if (spec.class_names[static_cast<std::size_t>(i)] == target_name) target = i;
        }
        if (target < 0) throw ConfigError("dataset target not in spec: " + target_name);
        if (file.header.value("spec_hash", "") != spec.hash()) {
            throw ConfigError("spec does not match the one the dataset was extracted with");
        }
        const ProbeSceneSet set = make_probe_scenes(
            spec, target, file.header.at("normal").get<int>(), file.header.at("test").get<int>(),
            file.header.at("seed").get<std::uint64_t>());
        std::vector<Scene> cf;
        for (const auto& e : set.entries) {
            if (e.split == "test") cf.push_back(set.scenes[static_cast<std::size_t>(e.scene_idx)]);
        }
        const std::vector<int> question = ckpt.vocab.encode(question_tokens(target_name));
        const double gen_acc = generation_accuracy(ckpt, cf, question);
        summary["generation_accuracy"] = gen_acc;
        summary["gap"] = best_acc - gen_acc;
        summary["target"] = target_name;
    }
    write_json_file(a.out, summary);
    std::cout << "best tap " << best_tap << " at " << best_acc << "\n";
    return 0;
}

struct ProbeReportArgs {
    std::string summary, out;
};

int cmd_probe_report(const ProbeReportArgs& a) {
    const nlohmann::json summary = nlohmann::json::parse(std::ifstream(a.summary));
    ChartSpec chart;
    chart.title = "Probe test accuracy by tap";
    chart.y_label = "accuracy (%)";
    ChartSeries series{"probe", {}};
    for (const auto& [tap, row] : summary.at("taps").items()) {
        chart.x_labels.push_back(tap);
        series.values.push_back(row.at("test_accuracy").get<double>());
    }
    chart.series.push_back(std::move(series));
    if (summary.contains("generation_accuracy")) {
        chart.hlines = {summary.at("generation_accuracy").get<double>()};
        chart.hline_label = "generation accuracy";
    }
    const std::string svg = bar_chart_svg(chart);
    fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + a.out);
    f << svg;
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

struct RunArgs {
    std::string config, stage;
    bool resume = false;
};

int cmd_run(const RunArgs& a) {
    const Config cfg = Config::load(a.config);
    const ExperimentConfig exp = ExperimentConfig::from_config(cfg);
    fs::path out(cfg.get_str("out", "runs/default"));
    // Relative output dirs resolve against MIRAGE_OUT_ROOT when set.
    if (const char* root = std::getenv("MIRAGE_OUT_ROOT"); root && out.is_relative()) {
        out = fs::path(root) / out;
    }
    Pipeline pipeline(exp, out, a.resume, &std::cerr);
    pipeline.run(a.stage);
    std::cout << "artifacts in " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy captioner bias pipeline"};
    app.require_subcommand(1);

    // corpus gen / bench gen
    auto* corpus = app.add_subcommand("corpus", "Corpus generation");
    corpus->require_subcommand(1);
    CorpusGenArgs cg;
    auto* corpus_gen = corpus->add_subcommand("gen", "Generate captions and QA pairs");
    corpus_gen->add_option("--spec", cg.spec, "Scene spec JSON (defaults to built-in)");
    corpus_gen->add_option("--count", cg.count, "Scene count");
    corpus_gen->add_option("--qa", cg.qa, "QA pairs per scene");
    corpus_gen->add_option("--seed", cg.seed, "Seed");
    corpus_gen->add_option("--out", cg.out, "Output directory")->required();

    auto* bench = app.add_subcommand("bench", "Benchmark generation");
    bench->require_subcommand(1);
    BenchGenArgs bg;
    auto* bench_gen = bench->add_subcommand("gen", "Generate paired existence questions");
    bench_gen->add_option("--spec", bg.spec, "Scene spec JSON (defaults to built-in)");
    bench_gen->add_option("--count", bg.count, "Scene pairs (questions = 2x)");
    bench_gen->add_option("--seed", bg.seed, "Seed");
    bench_gen->add_option("--corpus", bg.corpus, "Draw scenes from this corpus file");
    bench_gen->add_option("--out", bg.out, "Output file")->required();

    // model init / info
    auto* model = app.add_subcommand("model", "Checkpoint utilities");
    model->require_subcommand(1);
    ModelInitArgs mi;
    auto* model_init = model->add_subcommand("init", "Initialize a fresh checkpoint");
    model_init->add_option("--spec", mi.spec, "Scene spec JSON (defaults to built-in)");
    model_init->add_option("--seed", mi.seed, "Seed");
    model_init->add_option("--visual-dim", mi.visual_dim, "Visual embedding width");
    model_init->add_option("--hidden-dim", mi.hidden_dim, "Hidden width");
    model_init->add_option("--layers", mi.layers, "Mixing layers");
    model_init->add_option("--out", mi.out, "Output checkpoint path")->required();
    std::string info_path;
    auto* model_info = model->add_subcommand("info", "Describe a checkpoint");
    model_info->add_option("path", info_path, "Checkpoint file")->required();

    // train base / obliviate
    auto* train = app.add_subcommand("train", "Training");
    train->require_subcommand(1);
    std::string train_config;
    auto* train_base_cmd = train->add_subcommand("base", "Full AR training from scratch");
    train_base_cmd->add_option("--config", train_config, "Config file")->required();
    TrainObliviateArgs to;
    auto* train_obl = train->add_subcommand("obliviate", "Head-only debias fine-tuning");
    train_obl->add_option("--ckpt", to.ckpt, "Base checkpoint")->required();
    train_obl->add_option("--unlearn", to.unlearn, "Unlearn record file")->required();
    train_obl->add_option("--ar", to.ar, "AR corpus file (repeatable)")->required();
    train_obl->add_option("--alpha", to.alpha, "Debias weight");
    train_obl->add_option("--steps", to.steps, "Steps");
    train_obl->add_option("--batch", to.batch, "AR batch size");
    train_obl->add_option("--unlearn-batch", to.unlearn_batch, "Unlearn batch size");
    train_obl->add_option("--ratio", to.ratio, "Subsample AR pool to ratio x unlearn (0 = all)");
    train_obl->add_option("--lr", to.lr, "Learning rate");
    train_obl->add_option("--optimizer", to.optimizer, "sgd | adam");
    train_obl->add_option("--seed", to.seed, "Seed");
    train_obl->add_option("--out", to.out, "Output checkpoint path")->required();

    // harvest
    HarvestArgs ha;
    auto* harvest_cmd = app.add_subcommand("harvest", "Mine hallucinated spans");
    harvest_cmd->add_option("--ckpt", ha.ckpt, "Checkpoint")->required();
    harvest_cmd->add_option("--corpus", ha.corpus, "Caption corpus")->required();
    harvest_cmd->add_option("--limit", ha.limit, "Max captions to re-infer (0 = all)");
    harvest_cmd->add_option("--out", ha.out, "Output unlearn file")->required();

    // eval
    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Benchmark evaluation");
    eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
    eval_cmd->add_option("--bench", ea.bench, "Benchmark file")->required();
    eval_cmd->add_option("--captions", ea.captions, "Also re-infer these captions for CHAIR");
    eval_cmd->add_option("--out", ea.out, "Output directory")->required();

    // probe extract/train/eval/report
    auto* probe = app.add_subcommand("probe", "Linear probing");
    probe->require_subcommand(1);
    ProbeExtractArgs pe;
    auto* probe_extract = probe->add_subcommand("extract", "Extract pooled activations");
    probe_extract->add_option("--ckpt", pe.ckpt, "Checkpoint")->required();
    probe_extract->add_option("--spec", pe.spec, "Scene spec JSON (defaults to built-in)");
    probe_extract->add_option("--target", pe.target, "Target class");
    probe_extract->add_option("--normal", pe.normal, "Train/val scene count");
    probe_extract->add_option("--test", pe.test, "Counterfactual test scene count");
    probe_extract->add_option("--seed", pe.seed, "Seed");
    probe_extract->add_option("--out", pe.out, "Output dataset file")->required();
    ProbeTrainArgs pt;
    auto* probe_train_cmd = probe->add_subcommand("train", "Train one probe per tap");
    probe_train_cmd->add_option("--data", pt.data, "Probe dataset file")->required();
    probe_train_cmd->add_option("--lr", pt.cfg.lr, "Learning rate");
    probe_train_cmd->add_option("--l2", pt.cfg.l2, "L2 penalty");
    probe_train_cmd->add_option("--epochs", pt.cfg.epochs, "Epochs");
    probe_train_cmd->add_option("--out", pt.out, "Output probe file")->required();
    ProbeEvalArgs pv;
    auto* probe_eval_cmd = probe->add_subcommand("eval", "Evaluate probes on the test split");
    probe_eval_cmd->add_option("--data", pv.data, "Probe dataset file")->required();
    probe_eval_cmd->add_option("--probes", pv.probes, "Trained probe file")->required();
    probe_eval_cmd->add_option("--ckpt", pv.ckpt, "Checkpoint (adds generation accuracy)");
    probe_eval_cmd->add_option("--spec", pv.spec, "Scene spec JSON (defaults to built-in)");
    probe_eval_cmd->add_option("--out", pv.out, "Output summary file")->required();
    ProbeReportArgs pr;
    auto* probe_report_cmd = probe->add_subcommand("report", "Accuracy-vs-tap chart");
    probe_report_cmd->add_option("--summary", pr.summary, "Summary file")->required();
    probe_report_cmd->add_option("--out", pr.out, "Output SVG")->required();

    // run
    RunArgs ra;
    auto* run_cmd = app.add_subcommand("run", "Full experiment pipeline");
    run_cmd->add_option("--config", ra.config, "Config file")->required();
    run_cmd->add_option("--stage", ra.stage, "Run a single stage");
    run_cmd->add_flag("--resume", ra.resume, "Continue an interrupted run");

    try {
        app.parse(argc, argv);
        if (*corpus_gen) return cmd_corpus_gen(cg);
        if (*bench_gen) return cmd_bench_gen(bg);
        if (*model_init) return cmd_model_init(mi);
        if (*model_info) return cmd_model_info(info_path);
        if (*train_base_cmd) return cmd_train_base(train_config);
        if (*train_obl) return cmd_train_obliviate(to);
        if (*harvest_cmd) return cmd_harvest(ha);
        if (*eval_cmd) return cmd_eval(ea);
        if (*probe_extract) return cmd_probe_extract(pe);
        if (*probe_train_cmd) return cmd_probe_train(pt);
        if (*probe_eval_cmd) return cmd_probe_eval(pv);
        if (*probe_report_cmd) return cmd_probe_report(pr);
        if (*run_cmd) return cmd_run(ra);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
