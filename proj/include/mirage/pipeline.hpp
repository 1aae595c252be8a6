#ifndef MIRAGE_PIPELINE_HPP
#define MIRAGE_PIPELINE_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mirage/benchmark.hpp"
#include "mirage/checkpoint_io.hpp"
#include "mirage/config.hpp"
#include "mirage/corpus.hpp"
#include "mirage/harvest.hpp"
#include "mirage/hash.hpp"
#include "mirage/metrics.hpp"
#include "mirage/model.hpp"
#include "mirage/probe.hpp"
#include "mirage/svg.hpp"
#include "mirage/trainer.hpp"

namespace mirage {

// ---------------------------------------------------------------------------
// Default scene specification

// Sixteen classes. The first group carries engineered co-occurrence lifts (the
// bias source); the tail classes are lift-neutral controls. "dog" doubles as
// the default probe target, and (tv, remote, cup) as the logit-audit triple:
// lift(tv,remote)=5 while lift(tv,cup)=1.
inline CooccurrenceSpec default_spec() {
    CooccurrenceSpec spec;
    spec.class_names = {"tv",  "remote", "laptop", "keyboard", "mouse", "monitor",
                        "bed", "person", "sofa",   "cat",      "dog",   "chair",
                        "table", "car",  "cup",    "plate"};
    spec.grid_size = 8;
    spec.base_rate = 0.15;
    spec.noise_sigma = 0.05;
    const int c = spec.class_count();
    spec.lift = Matrix(static_cast<std::size_t>(c), static_cast<std::size_t>(c), 1.0);
    auto set_lift = [&](const char* a, const char* b, double value) {
        int ia = -1, ib = -1;
        for (int i = 0; i < c; ++i) {
            if (spec.class_names[static_cast<std::size_t>(i)] == a) ia = i;
            if (spec.class_names[static_cast<std::size_t>(i)] == b) ib = i;
        }
        spec.lift.at(static_cast<std::size_t>(ia), static_cast<std::size_t>(ib)) = value;
        spec.lift.at(static_cast<std::size_t>(ib), static_cast<std::size_t>(ia)) = value;
    };
    set_lift("tv", "remote", 5.0);
    set_lift("tv", "laptop", 3.0);
    set_lift("laptop", "keyboard", 5.0);
    set_lift("keyboard", "mouse", 5.0);
    set_lift("monitor", "laptop", 4.0);
    set_lift("bed", "person", 3.0);
    set_lift("sofa", "cat", 4.0);
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct SweepLists {
    std::vector<double> alpha;
    std::vector<int> ratio;
    std::vector<int> captions;
    int seeds = 3;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string spec_file;  // empty -> built-in default spec

    int corpus_scenes = 2000;
    int qa_per_scene = 3;
    int heldout_scenes = 300;
    int bench_scenes = 400;  // pairs; questions = 2x

    int visual_dim = 32;
    int hidden_dim = 24;
    int layers = 3;

    TrainConfig base_train;
    int harvest_captions = 1000;
    TrainConfig obliviate_train;
    int obliviate_ratio = 4;  // AR examples per unlearn record

    std::string probe_target = "dog";
    int probe_normal = 800;
    int probe_test = 177;
    ProbeConfig probe_train;
    std::string probe_cf_source = "fresh";  // "fresh" | "corpus"

    std::string audit_context = "tv";
    std::string audit_lifted = "remote";
    std::string audit_control = "cup";
    int audit_scenes = 200;

    SweepLists sweeps;

    std::string config_hash;  // sha256 of the canonical key-value text

    static ExperimentConfig from_config(const Config& cfg);
};

namespace detail {

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& raw, Parse parse) {
    std::vector<T> out;
    std::string cur;
    std::istringstream in(raw);
    while (std::getline(in, cur, ',')) {
        if (!cur.empty()) out.push_back(parse(cur));
    }
    return out;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
    ExperimentConfig e;
    e.seed = cfg.get_u64("seed", 42);
    e.spec_file = cfg.get_str("spec", "");

    e.corpus_scenes = static_cast<int>(cfg.get_int("corpus.scenes", 2000));
    e.qa_per_scene = static_cast<int>(cfg.get_int("corpus.qa_per_scene", 3));
    e.heldout_scenes = static_cast<int>(cfg.get_int("corpus.heldout_scenes", 300));
    e.bench_scenes = static_cast<int>(cfg.get_int("bench.scenes", 400));

    e.visual_dim = static_cast<int>(cfg.get_int("model.visual_dim", 32));
    e.hidden_dim = static_cast<int>(cfg.get_int("model.hidden_dim", 24));
    e.layers = static_cast<int>(cfg.get_int("model.layers", 3));

    e.base_train.steps = cfg.get_int("train.steps", 4000);
    e.base_train.batch_size = static_cast<int>(cfg.get_int("train.batch", 32));
    e.base_train.optimizer.lr = cfg.get_double("train.lr", 1e-3);
    e.base_train.optimizer.kind = cfg.get_str("train.optimizer", "adam");
    e.base_train.alpha = 0.0;
    e.base_train.seed = cfg.get_u64("train.seed", e.seed);

    e.harvest_captions = static_cast<int>(cfg.get_int("harvest.captions", 1000));

    e.obliviate_train.steps = cfg.get_int("obliviate.steps", 600);
    e.obliviate_train.batch_size = static_cast<int>(cfg.get_int("obliviate.batch", 32));
    e.obliviate_train.unlearn_batch_size =
        static_cast<int>(cfg.get_int("obliviate.unlearn_batch", 8));
    e.obliviate_train.optimizer.lr = cfg.get_double("obliviate.lr", 1e-3);
    e.obliviate_train.optimizer.kind = cfg.get_str("obliviate.optimizer", "adam");
    e.obliviate_train.alpha = cfg.get_double("obliviate.alpha", 0.02);
    e.obliviate_train.seed = cfg.get_u64("obliviate.seed", e.seed);
    e.obliviate_ratio = static_cast<int>(cfg.get_int("obliviate.ratio", 4));

    e.probe_target = cfg.get_str("probe.target", "dog");
    e.probe_normal = static_cast<int>(cfg.get_int("probe.normal", 800));
    e.probe_test = static_cast<int>(cfg.get_int("probe.test", 177));
    e.probe_train.lr = cfg.get_double("probe.lr", 0.5);
    e.probe_train.l2 = cfg.get_double("probe.l2", 1e-3);
    e.probe_train.epochs = static_cast<int>(cfg.get_int("probe.epochs", 200));
    e.probe_cf_source = cfg.get_str("probe.cf_source", "fresh");
    if (e.probe_cf_source != "fresh" && e.probe_cf_source != "corpus") {
        throw ConfigError("probe.cf_source must be `fresh` or `corpus`");
    }

    e.audit_context = cfg.get_str("audit.context", "tv");
    e.audit_lifted = cfg.get_str("audit.lifted", "remote");
    e.audit_control = cfg.get_str("audit.control", "cup");
    e.audit_scenes = static_cast<int>(cfg.get_int("audit.scenes", 200));

    e.sweeps.alpha = detail::parse_list<double>(
        cfg.get_str("sweep.alpha", "0.01,0.02,0.05"), [](const std::string& s) { return std::stod(s); });
    e.sweeps.ratio = detail::parse_list<int>(
        cfg.get_str("sweep.ratio", "1,4,8"), [](const std::string& s) { return std::stoi(s); });
    e.sweeps.captions = detail::parse_list<int>(
        cfg.get_str("sweep.captions", "125,250,500,1000"),
        [](const std::string& s) { return std::stoi(s); });
    e.sweeps.seeds = static_cast<int>(cfg.get_int("sweep.seeds", 3));

    e.config_hash = sha256_hex(cfg.canonical());
    return e;
}

// Deterministic subsample: seeded partial Fisher-Yates over indices.
template <typename T>
std::vector<T> seeded_subsample(const std::vector<T>& pool, std::size_t k, std::uint64_t seed) {
    if (k >= pool.size()) return pool;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(stream::kSample, seed));
    std::vector<T> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(order.size() - i));
        std::swap(order[i], order[j]);
        out.push_back(pool[order[i]]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logit audit (co-occurrence prior made visible in raw logits)

struct LogitAuditResult {
    std::string context, lifted, control;
    int scenes_requested = 0;
    int scenes_used = 0;   // scenes with a nonempty generation
    int wins = 0;          // lifted's mean logit strictly above control's
    int ties = 0;
    double mean_logit_lifted = 0.0;
    double mean_logit_control = 0.0;
    double p_value = 1.0;  // one-sided sign test against fair coin
};

// P[X >= k] for X ~ Binomial(n, 1/2), evaluated stably via lgamma.
inline double binomial_upper_tail(int n, int k) {
    if (k <= 0) return 1.0;
    if (k > n) return 0.0;
    double tail = 0.0;
    const double log_half_n = -static_cast<double>(n) * std::log(2.0);
    for (int i = k; i <= n; ++i) {
        const double log_comb = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) -
                                std::lgamma(static_cast<double>(n - i) + 1.0);
        tail += std::exp(log_comb + log_half_n);
    }
    return std::min(tail, 1.0);
}

// Samples fresh scenes containing `context` but neither `lifted` nor
// `control`, traces the two absent classes' logits during caption decoding,
// and sign-tests whether the lifted class's mean logit dominates.
inline LogitAuditResult run_logit_audit(const Checkpoint& ckpt, const CooccurrenceSpec& spec,
                                        const std::string& context, const std::string& lifted,
                                        const std::string& control, int scenes,
                                        std::uint64_t seed) {
    auto class_id = [&](const std::string& name) {
        for (int i = 0; i < spec.class_count(); ++i) {
            if (spec.class_names[static_cast<std::size_t>(i)] == name) return i;
        }
        throw ConfigError("audit class not in spec: " + name);
    };
    const int id_context = class_id(context);
    const int id_lifted = class_id(lifted);
    const int id_control = class_id(control);

    LogitAuditResult result;
    result.context = context;
    result.lifted = lifted;
    result.control = control;
    result.scenes_requested = scenes;

    const std::vector<int> prompt = ckpt.vocab.encode(caption_instruction_tokens());
    const std::vector<int> watch{id_lifted, id_control};
    double sum_lifted = 0.0, sum_control = 0.0;
    std::uint64_t draw = 0;
    int found = 0;
    const std::uint64_t max_draws = 2000ull * static_cast<std::uint64_t>(std::max(scenes, 1));
    while (found < scenes) {
        if (draw >= max_draws) {
            throw GenerationError("could not sample enough audit scenes (context=" + context + ")");
        }
        Scene scene = gen_scene(spec, Rng::mix(stream::kSample, Rng::mix(seed, 0xA0D17ull + draw)));
        ++draw;
        if (!scene.contains(id_context) || scene.contains(id_lifted) ||
            scene.contains(id_control)) {
            continue;
        }
        ++found;
        const LogitTrace trace = token_logit_trace(scene, prompt, ckpt, watch, 64);
        if (trace.generated.empty()) continue;  // nothing decoded; no evidence either way
        result.scenes_used += 1;
        const double lB = trace.mean_logit[0], lC = trace.mean_logit[1];
        sum_lifted += lB;
        sum_control += lC;
        if (lB > lC) result.wins += 1;
        else if (lB == lC) result.ties += 1;
    }
    if (result.scenes_used > 0) {
        result.mean_logit_lifted = sum_lifted / result.scenes_used;
        result.mean_logit_control = sum_control / result.scenes_used;
    }
    const int effective = result.scenes_used - result.ties;  // ties drop out of a sign test
    result.p_value = binomial_upper_tail(effective, result.wins);
    return result;
}

inline nlohmann::json audit_to_json(const LogitAuditResult& a) {
    return nlohmann::json{{"context", a.context},
                          {"lifted", a.lifted},
                          {"control", a.control},
                          {"scenes_requested", a.scenes_requested},
                          {"scenes_used", a.scenes_used},
                          {"wins", a.wins},
                          {"ties", a.ties},
                          {"mean_logit_lifted", a.mean_logit_lifted},
                          {"mean_logit_control", a.mean_logit_control},
                          {"p_value", a.p_value},
                          {"test", "one-sided sign test, ties excluded"}};
}

// ---------------------------------------------------------------------------
// Run manifest

struct ManifestEntry {
    std::string stage;
    std::string status;  // "completed" | "skipped" | "failed"
    std::string config_hash;
    std::map<std::string, std::string> inputs;   // relative path -> sha256
    std::map<std::string, std::string> outputs;  // relative path -> sha256
    double wall_ms = 0.0;
    std::string error;
};

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
    return nlohmann::json{{"stage", e.stage},     {"status", e.status},
                          {"config_hash", e.config_hash}, {"inputs", e.inputs},
                          {"outputs", e.outputs}, {"wall_ms", e.wall_ms},
                          {"error", e.error}};
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    e.stage = j.at("stage").get<std::string>();
    e.status = j.at("status").get<std::string>();
    e.config_hash = j.value("config_hash", "");
    e.inputs = j.value("inputs", std::map<std::string, std::string>{});
    e.outputs = j.value("outputs", std::map<std::string, std::string>{});
    e.wall_ms = j.value("wall_ms", 0.0);
    e.error = j.value("error", "");
    return e;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::vector<ManifestEntry> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(manifest_entry_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": bad manifest line: " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

class Pipeline {
  public:
    Pipeline(ExperimentConfig cfg, std::filesystem::path out_dir, bool resume = false,
             std::ostream* log = nullptr)
        : cfg_(std::move(cfg)), out_(std::move(out_dir)), resume_(resume), log_(log) {
        std::filesystem::create_directories(out_);
        spec_ = cfg_.spec_file.empty()
                    ? default_spec()
                    : CooccurrenceSpec::from_json(
                          nlohmann::json::parse(read_file(cfg_.spec_file)));
        spec_.validate();
        load_existing_manifest();
    }

    static const std::vector<std::string>& stage_names() {
        static const std::vector<std::string> names{"corpus", "base", "harvest", "obliviate",
                                                    "eval",   "probe", "sweeps",  "report"};
        return names;
    }

    // Runs all stages in order, or a single named stage. Throws on failure
    // after recording it in the manifest.
    void run(const std::string& only_stage = "") {
        if (!only_stage.empty()) {
            dispatch(only_stage);
            return;
        }
        for (const auto& name : stage_names()) dispatch(name);
    }

    const CooccurrenceSpec& spec() const { return spec_; }
    const std::filesystem::path& out_dir() const { return out_; }

  private:
    // -- infrastructure ------------------------------------------------------

    std::string read_file(const std::filesystem::path& p) const {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("cannot open: " + p.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    void write_file(const std::filesystem::path& rel, const std::string& bytes) const {
        const std::filesystem::path p = out_ / rel;
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::ofstream outf(p, std::ios::binary | std::ios::trunc);
        if (!outf) throw DataError("cannot open for writing: " + p.string());
        outf.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }

    void write_json(const std::filesystem::path& rel, const nlohmann::json& j) const {
        write_file(rel, j.dump(2) + "\n");
    }

    std::string abs(const std::string& rel) const { return (out_ / rel).string(); }

    void load_existing_manifest() {
        for (const auto& entry : load_manifest(out_ / "manifest.jsonl")) {
            if (entry.status == "completed") completed_[entry.stage] = entry;
        }
    }

    void append_manifest(const ManifestEntry& entry) {
        std::ofstream outf(out_ / "manifest.jsonl", std::ios::app);
        if (!outf) throw DataError("cannot append to manifest");
        outf << manifest_entry_to_json(entry).dump() << "\n";
        if (entry.status == "completed") completed_[entry.stage] = entry;
    }

    void note(const std::string& msg) const {
        if (log_) *log_ << "[pipeline] " << msg << "\n";
    }

    std::map<std::string, std::string> hash_files(const std::vector<std::string>& rels) const {
        std::map<std::string, std::string> out;
        for (const auto& rel : rels) {
            const std::filesystem::path p = out_ / rel;
            if (!std::filesystem::exists(p)) throw DataError("missing stage input: " + p.string());
            out[rel] = sha256_file(p.string());
        }
        return out;
    }

    // Runs `body` unless a completed manifest entry with identical config and
    // input hashes exists and every recorded output is still present with the
    // recorded hash.
    void run_stage(const std::string& name, const std::vector<std::string>& input_rels,
                   const std::vector<std::string>& output_rels, const std::function<void()>& body) {
        const auto inputs = hash_files(input_rels);
        const auto memo = completed_.find(name);
        if (memo != completed_.end() && memo->second.config_hash == cfg_.config_hash &&
            memo->second.inputs == inputs) {
            bool outputs_intact = !memo->second.outputs.empty() || output_rels.empty();
            for (const auto& [rel, hash] : memo->second.outputs) {
                const std::filesystem::path p = out_ / rel;
                if (!std::filesystem::exists(p) || sha256_file(p.string()) != hash) {
                    outputs_intact = false;
                    break;
                }
            }
            if (outputs_intact) {
                ManifestEntry entry = memo->second;
                entry.status = "skipped";
                entry.wall_ms = 0.0;
                note("stage " + name + ": inputs unchanged, skipping");
                append_manifest_skip(entry);
                return;
            }
        }

        note("stage " + name + ": running");
        ManifestEntry entry;
        entry.stage = name;
        entry.config_hash = cfg_.config_hash;
        entry.inputs = inputs;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const std::exception& e) {
            entry.status = "failed";
            entry.error = e.what();
            entry.wall_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            append_manifest(entry);
            throw;
        }
        entry.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        entry.status = "completed";
        entry.outputs = hash_files(output_rels);
        append_manifest(entry);
    }

    // Skip entries are informational; they must not clobber the completed map.
    void append_manifest_skip(const ManifestEntry& entry) {
        std::ofstream outf(out_ / "manifest.jsonl", std::ios::app);
        if (!outf) throw DataError("cannot append to manifest");
        outf << manifest_entry_to_json(entry).dump() << "\n";
    }

    void dispatch(const std::string& name) {
        if (name == "corpus") stage_corpus();
        else if (name == "base") stage_base();
        else if (name == "harvest") stage_harvest();
        else if (name == "obliviate") stage_obliviate();
        else if (name == "eval") stage_eval();
        else if (name == "probe") stage_probe();
        else if (name == "sweeps") stage_sweeps();
        else if (name == "report") stage_report();
        else throw ConfigError("unknown stage: " + name);
    }

    // -- shared loaders ------------------------------------------------------

    Checkpoint load_ckpt(const std::string& rel) const { return load_checkpoint(out_ / rel); }

    CorpusData load_data(const std::string& rel) const { return load_corpus(abs(rel)); }

    std::vector<TrainExample> obliviate_ar_pool(const CorpusData& captions, const CorpusData& qa,
                                                const Vocabulary& vocab,
                                                std::size_t unlearn_count, int ratio) const {
        std::vector<TrainExample> pool = make_ar_examples(captions, vocab);
        std::vector<TrainExample> qa_ex = make_ar_examples(qa, vocab);
        pool.insert(pool.end(), qa_ex.begin(), qa_ex.end());
        const std::size_t want = unlearn_count * static_cast<std::size_t>(std::max(ratio, 1));
        return seeded_subsample(pool, want, Rng::mix(cfg_.seed, 0xA27ull));
    }

    // -- stages --------------------------------------------------------------

    void stage_corpus() {
        run_stage("corpus", {},
                  {"corpus/spec.json", "corpus/captions.jsonl", "corpus/qa.jsonl",
                   "corpus/heldout.jsonl", "corpus/benchmark.jsonl"},
                  [&] {
                      write_json("corpus/spec.json", spec_.to_json());
                      GeneratedCorpus train =
                          gen_corpus(spec_, cfg_.corpus_scenes, cfg_.qa_per_scene, cfg_.seed);
                      write_caption_file(train, spec_, cfg_.seed, abs("corpus/captions.jsonl"));
                      write_qa_file(train, spec_, cfg_.seed, abs("corpus/qa.jsonl"));

                      const std::uint64_t held_seed = Rng::mix(cfg_.seed, 0x4E1Dull);
                      GeneratedCorpus held = gen_corpus(spec_, cfg_.heldout_scenes, 0, held_seed);
                      write_caption_file(held, spec_, held_seed, abs("corpus/heldout.jsonl"));

                      // Benchmark scenes come from the training corpus: the
                      // counterfactual pairs probe what the model memorized.
                      const std::uint64_t bench_seed = Rng::mix(cfg_.seed, 0xBE7Cull);
                      GeneratedBenchmark bench =
                          gen_popev2(spec_, train.scenes, cfg_.bench_scenes, bench_seed, log_);
                      if (static_cast<int>(bench.items.size()) != 2 * cfg_.bench_scenes) {
                          throw GenerationError("benchmark pool exhausted: got " +
                                                std::to_string(bench.items.size()) + " items");
                      }
                      write_benchmark_file(bench, spec_, bench_seed, abs("corpus/benchmark.jsonl"));
                  });
    }

    void stage_base() {
        run_stage("base", {"corpus/captions.jsonl", "corpus/qa.jsonl"},
                  {"checkpoints/base.ckpt", "checkpoints/base_loss.csv"}, [&] {
                      CorpusData captions = load_data("corpus/captions.jsonl");
                      CorpusData qa = load_data("corpus/qa.jsonl");
                      Checkpoint init = init_checkpoint(spec_, cfg_.visual_dim, cfg_.hidden_dim,
                                                        cfg_.layers, cfg_.seed);
                      std::vector<TrainExample> ar = make_ar_examples(captions, init.vocab);
                      std::vector<TrainExample> qa_ex = make_ar_examples(qa, init.vocab);
                      ar.insert(ar.end(), qa_ex.begin(), qa_ex.end());
                      TrainConfig tc = cfg_.base_train;
                      tc.config_hash = cfg_.config_hash;
                      TrainResult result = train_base(init, ar, tc);
                      save_checkpoint(result.checkpoint, out_ / "checkpoints/base.ckpt");
                      write_loss_csv(result.history, out_ / "checkpoints/base_loss.csv");
                  });
    }

    void stage_harvest() {
        run_stage("harvest", {"checkpoints/base.ckpt", "corpus/captions.jsonl"},
                  {"harvest/unlearn.jsonl", "harvest/stats.json"}, [&] {
                      Checkpoint ckpt = load_ckpt("checkpoints/base.ckpt");
                      CorpusData captions = load_data("corpus/captions.jsonl");
                      if (static_cast<int>(captions.captions.size()) > cfg_.harvest_captions) {
                          captions.captions.resize(
                              static_cast<std::size_t>(cfg_.harvest_captions));
                      }
                      std::vector<InferenceRecord> inferences = reinfer(ckpt, captions);
                      HarvestResult harvest = build_unlearn_set(inferences, ckpt.vocab);
                      if (!harvest.warning.empty()) note("harvest: " + harvest.warning);
                      nlohmann::json header = captions.header;
                      header["kind"] = "unlearn";
                      header["source_checkpoint"] =
                          sha256_file(abs("checkpoints/base.ckpt"));
                      write_unlearn_file(captions, harvest.records, header,
                                         out_ / "harvest/unlearn.jsonl");
                      write_json("harvest/stats.json", stats_to_json(harvest.stats));
                  });
    }

    void stage_obliviate() {
        run_stage("obliviate",
                  {"checkpoints/base.ckpt", "harvest/unlearn.jsonl", "corpus/captions.jsonl",
                   "corpus/qa.jsonl"},
                  {"checkpoints/obliviate.ckpt", "checkpoints/obliviate_loss.csv"}, [&] {
                      Checkpoint base = load_ckpt("checkpoints/base.ckpt");
                      CorpusData unlearn_data = load_data("harvest/unlearn.jsonl");
                      CorpusData captions = load_data("corpus/captions.jsonl");
                      CorpusData qa = load_data("corpus/qa.jsonl");
                      std::vector<TrainExample> unlearn =
                          make_unlearn_examples(unlearn_data, base.vocab);
                      std::vector<TrainExample> ar = obliviate_ar_pool(
                          captions, qa, base.vocab, unlearn.size(), cfg_.obliviate_ratio);
                      TrainConfig tc = cfg_.obliviate_train;
                      tc.config_hash = cfg_.config_hash;
                      TrainResult result = obliviate(base, unlearn, ar, tc);
                      if (!result.warning.empty()) note("obliviate: " + result.warning);
                      if (result.aborted) note("obliviate: " + result.abort_reason);
                      save_checkpoint(result.checkpoint, out_ / "checkpoints/obliviate.ckpt");
                      write_loss_csv(result.history, out_ / "checkpoints/obliviate_loss.csv");
                  });
    }

    nlohmann::json eval_one(const Checkpoint& ckpt, const CorpusData& bench,
                            const CorpusData& heldout, const std::string& out_prefix) {
        EvalReport report = eval_benchmark(ckpt, bench);
        JsonlWriter items(nlohmann::json{{"format", "mirage-jsonl"},
                                         {"kind", "eval_items"},
                                         {"stage", ckpt.meta.stage}});
        for (const auto& item : report.items) items.append(eval_item_to_json(item));
        items.save(abs(out_prefix + "/items.jsonl"));

        std::vector<InferenceRecord> inferences = reinfer(ckpt, heldout);
        ChairRates chair = chair_metrics(inferences, ckpt.vocab);
        nlohmann::json chair_json{
            {"resp_rate", chair.resp_rate},
            {"mention_rate",
             chair.mention_rate ? nlohmann::json(*chair.mention_rate) : nlohmann::json(nullptr)},
            {"responses_total", chair.counts.responses_total},
            {"responses_hallucinated", chair.counts.responses_hallucinated},
            {"mentions_total", chair.counts.mentions_total},
            {"mentions_hallucinated", chair.counts.mentions_hallucinated}};
        write_json(out_prefix + "/chair.json", chair_json);

        nlohmann::json provenance{{"checkpoint_stage", ckpt.meta.stage},
                                  {"checkpoint_config_hash", ckpt.meta.config_hash},
                                  {"benchmark_items", bench.items.size()}};
        const nlohmann::json report_json = report_to_json(report, provenance);
        write_json(out_prefix + "/report.json", report_json);
        return report_json;
    }

    void stage_eval() {
        run_stage("eval",
                  {"checkpoints/base.ckpt", "checkpoints/obliviate.ckpt",
                   "corpus/benchmark.jsonl", "corpus/heldout.jsonl"},
                  {"eval/base/report.json", "eval/base/items.jsonl", "eval/base/chair.json",
                   "eval/obliviate/report.json", "eval/obliviate/items.jsonl",
                   "eval/obliviate/chair.json", "eval/audit.json"},
                  [&] {
                      Checkpoint base = load_ckpt("checkpoints/base.ckpt");
                      Checkpoint obl = load_ckpt("checkpoints/obliviate.ckpt");
                      CorpusData bench = load_data("corpus/benchmark.jsonl");
                      CorpusData heldout = load_data("corpus/heldout.jsonl");
                      eval_one(base, bench, heldout, "eval/base");
                      eval_one(obl, bench, heldout, "eval/obliviate");
                      const std::uint64_t audit_seed = Rng::mix(cfg_.seed, 0xAD17ull);
                      nlohmann::json audit{
                          {"base", audit_to_json(run_logit_audit(
                                       base, spec_, cfg_.audit_context, cfg_.audit_lifted,
                                       cfg_.audit_control, cfg_.audit_scenes, audit_seed))},
                          {"obliviate",
                           audit_to_json(run_logit_audit(obl, spec_, cfg_.audit_context,
                                                         cfg_.audit_lifted, cfg_.audit_control,
                                                         cfg_.audit_scenes, audit_seed))}};
                      write_json("eval/audit.json", audit);
                  });
    }

    void stage_probe() {
        run_stage("probe", {"checkpoints/base.ckpt"},
                  {"probe/dataset.jsonl", "probe/probes.json", "probe/summary.json"}, [&] {
                      Checkpoint base = load_ckpt("checkpoints/base.ckpt");
                      const int target = class_index(cfg_.probe_target);
                      ProbeSceneSet scene_set =
                          make_probe_scenes(spec_, target, cfg_.probe_normal, cfg_.probe_test,
                                            Rng::mix(cfg_.seed, 0x9B0Bull));
                      const std::vector<int> question =
                          base.vocab.encode(question_tokens(cfg_.probe_target));
                      const auto taps = all_tap_names(base.dims.layers);
                      std::vector<ProbeDataset> datasets =
                          extract_taps(base, scene_set, question, taps);

                      JsonlWriter ds_file(nlohmann::json{{"format", "mirage-jsonl"},
                                                         {"kind", "probe_dataset"},
                                                         {"target", cfg_.probe_target},
                                                         {"spec_hash", spec_.hash()},
                                                         {"seed", cfg_.seed}});
                      for (const auto& ds : datasets) {
                          for (const auto& ex : ds.examples) {
                              ds_file.append(probe_example_to_json(ds.tap, ex));
                          }
                      }
                      ds_file.save(abs("probe/dataset.jsonl"));

                      std::vector<Scene> cf_scenes;
                      for (const auto& e : scene_set.entries) {
                          if (e.split == "test") {
                              cf_scenes.push_back(
                                  scene_set.scenes[static_cast<std::size_t>(e.scene_idx)]);
                          }
                      }
                      const double gen_acc = generation_accuracy(base, cf_scenes, question);

                      nlohmann::json probes = nlohmann::json::array();
                      nlohmann::json per_tap = nlohmann::json::object();
                      double best_acc = -1.0;
                      std::string best_tap;
                      for (const auto& ds : datasets) {
                          ProbeTrainResult trained = train_probe(ds, cfg_.probe_train);
                          const auto test = ds.split("test");
                          ProbeEval ev = eval_probe(trained.params, test);
                          probes.push_back(
                              probe_params_to_json(trained.params, trained.best_val_accuracy));
                          per_tap[ds.tap] = {{"val_accuracy", trained.best_val_accuracy},
                                             {"test_accuracy", ev.accuracy},
                                             {"constant_output", ev.constant_output},
                                             {"best_epoch", trained.best_epoch}};
                          if (ev.accuracy > best_acc) {
                              best_acc = ev.accuracy;
                              best_tap = ds.tap;
                          }
                      }
                      write_json("probe/probes.json", probes);
                      write_json("probe/summary.json",
                                 nlohmann::json{{"target", cfg_.probe_target},
                                                {"taps", per_tap},
                                                {"generation_accuracy", gen_acc},
                                                {"best_tap", best_tap},
                                                {"best_tap_accuracy", best_acc},
                                                {"gap", best_acc - gen_acc},
                                                {"cf_source", cfg_.probe_cf_source}});
                  });
    }

    void stage_sweeps() {
        std::vector<std::string> outputs;
        if (!cfg_.sweeps.alpha.empty()) outputs.push_back("sweeps/alpha.json");
        if (!cfg_.sweeps.ratio.empty()) outputs.push_back("sweeps/ratio.json");
        if (!cfg_.sweeps.captions.empty()) outputs.push_back("sweeps/captions.json");
        if (outputs.empty()) return;
        run_stage("sweeps",
                  {"checkpoints/base.ckpt", "harvest/unlearn.jsonl", "corpus/captions.jsonl",
                   "corpus/qa.jsonl", "corpus/benchmark.jsonl", "corpus/heldout.jsonl"},
                  outputs, [&] {
                      Checkpoint base = load_ckpt("checkpoints/base.ckpt");
                      CorpusData unlearn_data = load_data("harvest/unlearn.jsonl");
                      CorpusData captions = load_data("corpus/captions.jsonl");
                      CorpusData qa = load_data("corpus/qa.jsonl");
                      CorpusData bench = load_data("corpus/benchmark.jsonl");
                      CorpusData heldout = load_data("corpus/heldout.jsonl");
                      std::vector<TrainExample> unlearn =
                          make_unlearn_examples(unlearn_data, base.vocab);

                      if (!cfg_.sweeps.alpha.empty()) {
                          sweep_alpha(base, unlearn, captions, qa, bench, heldout);
                      }
                      if (!cfg_.sweeps.ratio.empty()) {
                          sweep_ratio(base, unlearn, captions, qa, bench, heldout);
                      }
                      if (!cfg_.sweeps.captions.empty()) {
                          sweep_captions(base, captions, qa, bench, heldout);
                      }
                  });
    }

    nlohmann::json branch_eval(const Checkpoint& ckpt, const CorpusData& bench,
                               const CorpusData& heldout) {
        EvalReport report = eval_benchmark(ckpt, bench);
        std::vector<InferenceRecord> inferences = reinfer(ckpt, heldout);
        ChairRates chair = chair_metrics(inferences, ckpt.vocab);
        return nlohmann::json{
            {"metrics", metrics_to_json(report.metrics)},
            {"counts", counts_to_json(report.counts)},
            {"chair_resp", chair.resp_rate},
            {"chair_mention", chair.mention_rate ? nlohmann::json(*chair.mention_rate)
                                                 : nlohmann::json(nullptr)}};
    }

    void sweep_alpha(const Checkpoint& base, const std::vector<TrainExample>& unlearn,
                     const CorpusData& captions, const CorpusData& qa, const CorpusData& bench,
                     const CorpusData& heldout) {
        std::vector<TrainExample> ar = obliviate_ar_pool(captions, qa, base.vocab, unlearn.size(),
                                                         cfg_.obliviate_ratio);
        nlohmann::json rows = nlohmann::json::array();
        for (double alpha : cfg_.sweeps.alpha) {
            TrainConfig tc = cfg_.obliviate_train;
            tc.alpha = alpha;
            TrainResult result = obliviate(base, unlearn, ar, tc);
            const std::string branch = "sweeps/alpha_" + format_double(alpha);
            save_checkpoint(result.checkpoint, out_ / (branch + "/obliviate.ckpt"));
            write_loss_csv(result.history, out_ / (branch + "/loss.csv"));
            nlohmann::json row = branch_eval(result.checkpoint, bench, heldout);
            row["alpha"] = alpha;
            row["aborted"] = result.aborted;
            rows.push_back(row);
            note("sweep alpha=" + format_double(alpha) + " done");
        }
        write_json("sweeps/alpha.json", rows);
    }

    void sweep_ratio(const Checkpoint& base, const std::vector<TrainExample>& unlearn,
                     const CorpusData& captions, const CorpusData& qa, const CorpusData& bench,
                     const CorpusData& heldout) {
        nlohmann::json rows = nlohmann::json::array();
        for (int ratio : cfg_.sweeps.ratio) {
            std::vector<TrainExample> ar =
                obliviate_ar_pool(captions, qa, base.vocab, unlearn.size(), ratio);
            TrainConfig tc = cfg_.obliviate_train;
            TrainResult result = obliviate(base, unlearn, ar, tc);
            const std::string branch = "sweeps/ratio_" + std::to_string(ratio);
            save_checkpoint(result.checkpoint, out_ / (branch + "/obliviate.ckpt"));
            nlohmann::json row = branch_eval(result.checkpoint, bench, heldout);
            row["ratio"] = ratio;
            row["ar_examples"] = ar.size();
            row["aborted"] = result.aborted;
            rows.push_back(row);
            note("sweep ratio=" + std::to_string(ratio) + " done");
        }
        write_json("sweeps/ratio.json", rows);
    }

    void sweep_captions(const Checkpoint& base, const CorpusData& captions, const CorpusData& qa,
                        const CorpusData& bench, const CorpusData& heldout) {
        int max_count = 0;
        for (int n : cfg_.sweeps.captions) max_count = std::max(max_count, n);
        CorpusData pool = captions;
        if (static_cast<int>(pool.captions.size()) > max_count) {
            pool.captions.resize(static_cast<std::size_t>(max_count));
        }
        std::vector<InferenceRecord> inferences = reinfer(base, pool);

        nlohmann::json rows = nlohmann::json::array();
        for (int n : cfg_.sweeps.captions) {
            std::vector<InferenceRecord> slice(
                inferences.begin(),
                inferences.begin() + std::min<std::size_t>(static_cast<std::size_t>(n),
                                                           inferences.size()));
            HarvestResult harvest = build_unlearn_set(slice, base.vocab);
            CorpusData branch_data = captions;
            branch_data.unlearn = harvest.records;
            std::vector<TrainExample> unlearn = make_unlearn_examples(branch_data, base.vocab);
            std::vector<TrainExample> ar = obliviate_ar_pool(captions, qa, base.vocab,
                                                             unlearn.empty() ? 1 : unlearn.size(),
                                                             cfg_.obliviate_ratio);
            nlohmann::json seed_rows = nlohmann::json::array();
            std::vector<double> resp_values;
            for (int s = 0; s < cfg_.sweeps.seeds; ++s) {
                TrainConfig tc = cfg_.obliviate_train;
                tc.seed = Rng::mix(cfg_.obliviate_train.seed, 1000ull + static_cast<std::uint64_t>(s));
                TrainResult result = obliviate(base, unlearn, ar, tc);
                nlohmann::json row = branch_eval(result.checkpoint, bench, heldout);
                row["seed_index"] = s;
                row["aborted"] = result.aborted;
                resp_values.push_back(row["chair_resp"].get<double>());
                seed_rows.push_back(row);
            }
            std::sort(resp_values.begin(), resp_values.end());
            const double median = resp_values[resp_values.size() / 2];
            rows.push_back(nlohmann::json{{"captions", n},
                                          {"unlearn_records", harvest.records.size()},
                                          {"median_chair_resp", median},
                                          {"runs", seed_rows}});
            note("sweep captions=" + std::to_string(n) + " done");
        }
        write_json("sweeps/captions.json", rows);
    }

    void stage_report();

    // -- small helpers -------------------------------------------------------

    int class_index(const std::string& name) const {
        for (int i = 0; i < spec_.class_count(); ++i) {
            if (spec_.class_names[static_cast<std::size_t>(i)] == name) return i;
        }
        throw ConfigError("class not in spec: " + name);
    }

    static std::string format_double(double v) {
        std::ostringstream out;
        out << v;
        return out.str();
    }

    ExperimentConfig cfg_;
    std::filesystem::path out_;
    bool resume_ = false;
    std::ostream* log_ = nullptr;
    CooccurrenceSpec spec_;
    std::map<std::string, ManifestEntry> completed_;
};

}  // namespace mirage

#include "mirage/report.hpp"

#endif  // MIRAGE_PIPELINE_HPP
