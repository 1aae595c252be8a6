#ifndef MIRAGE_PROBE_HPP
#define MIRAGE_PROBE_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mirage/error.hpp"
#include "mirage/jsonl.hpp"
#include "mirage/matrix.hpp"
#include "mirage/model.hpp"
#include "mirage/rng.hpp"
#include "mirage/scene.hpp"

namespace mirage {

// Linear probing of hidden states: mean-pool a tap slice, fit a 2-class
// logistic head on normal scenes, test on counterfactual scenes where the
// target object was masked out.

// Tap names: "e_i" (raw visual features), "h0" (projected features),
// "img.<l>" / "txt.<l>" (layer l states pooled over image / text positions).
inline std::vector<std::string> all_tap_names(int layers) {
    std::vector<std::string> names{"e_i", "h0"};
    for (int l = 0; l < layers; ++l) names.push_back("img." + std::to_string(l));
    for (int l = 0; l < layers; ++l) names.push_back("txt." + std::to_string(l));
    return names;
}

inline int tap_layer(const std::string& tap, const ModelDims& dims) {
    const std::string num = tap.substr(4);
    try {
        std::size_t used = 0;
        const int l = std::stoi(num, &used);
        if (used != num.size() || l < 0 || l >= dims.layers) throw std::invalid_argument("range");
        return l;
    } catch (const std::exception&) {
        throw ConfigError("unknown tap name: " + tap);
    }
}

inline int tap_width(const std::string& tap, const ModelDims& dims) {
    if (tap == "e_i") return dims.visual_dim;
    if (tap == "h0") return dims.hidden_dim;
    if (tap.rfind("img.", 0) == 0 || tap.rfind("txt.", 0) == 0) {
        tap_layer(tap, dims);  // validates
        return dims.hidden_dim;
    }
    throw ConfigError("unknown tap name: " + tap);
}

// Arithmetic mean of the tapped rows.
inline std::vector<double> pooled_tap(const TapSet& taps, const std::string& tap,
                                      const ModelDims& dims) {
    const Matrix* source = nullptr;
    std::size_t begin = 0, count = 0;
    if (tap == "e_i") {
        source = &taps.visual;
        count = static_cast<std::size_t>(taps.image_len);
    } else if (tap == "h0") {
        source = &taps.projected;
        count = static_cast<std::size_t>(taps.image_len);
    } else if (tap.rfind("img.", 0) == 0) {
        source = &taps.layer_states[static_cast<std::size_t>(tap_layer(tap, dims))];
        count = static_cast<std::size_t>(taps.image_len);
    } else if (tap.rfind("txt.", 0) == 0) {
        source = &taps.layer_states[static_cast<std::size_t>(tap_layer(tap, dims))];
        begin = static_cast<std::size_t>(taps.image_len);
        count = static_cast<std::size_t>(taps.text_len);
    } else {
        throw ConfigError("unknown tap name: " + tap);
    }
    std::vector<double> pooled(source->cols(), 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        const double* row = source->row(begin + i);
        for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += row[k];
    }
    const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
    for (double& v : pooled) v *= inv;
    return pooled;
}

inline std::string tap_pooling(const std::string& tap) {
    return tap.rfind("txt.", 0) == 0 ? "text" : "image";
}

// ---------------------------------------------------------------------------
// Probe scene sets

struct ProbeSceneSet {
    std::vector<Scene> scenes;
    struct Entry {
        int scene_idx = 0;
        int label = 0;  // 1 = target present (never true in the test split)
        std::string split;  // "train" | "val" | "test"
    };
    std::vector<Entry> entries;
};

// Normal scenes for train/val (7:1 interleaved split, labels = natural target
// presence) plus counterfactual test scenes: fresh scenes containing the
// target with the target's block masked out. Test seeds are disjoint from
// train/val seeds by stream separation.
inline ProbeSceneSet make_probe_scenes(const CooccurrenceSpec& spec, int target_class,
                                       int normal_count, int test_count, std::uint64_t seed) {
    if (target_class < 0 || target_class >= spec.class_count()) {
        throw ConfigError("target class id out of range: " + std::to_string(target_class));
    }
    ProbeSceneSet out;
    for (int i = 0; i < normal_count; ++i) {
        Scene scene = gen_scene(spec, Rng::mix(stream::kProbe, Rng::mix(seed, 2ull * i)));
        out.entries.push_back({static_cast<int>(out.scenes.size()),
                               scene.contains(target_class) ? 1 : 0,
                               i % 8 == 7 ? "val" : "train"});
        out.scenes.push_back(std::move(scene));
    }
    std::uint64_t draw = 0;
    int made = 0;
    const std::uint64_t max_draws = 1000ull * static_cast<std::uint64_t>(std::max(test_count, 1));
    while (made < test_count) {
        if (draw >= max_draws) {
            throw GenerationError("could not find enough scenes containing the probe target");
        }
        Scene scene = gen_scene(spec, Rng::mix(stream::kProbe, Rng::mix(seed, 2ull * draw + 1)));
        ++draw;
        if (!scene.contains(target_class)) continue;
        Scene cf = mask_object(scene, target_class);
        out.entries.push_back({static_cast<int>(out.scenes.size()), 0, "test"});
        out.scenes.push_back(std::move(cf));
        ++made;
    }
    return out;
}

// Counterfactual test scenes sourced from an existing scene pool instead of
// fresh draws (the alternative reading of the experiment).
inline std::vector<Scene> counterfactuals_from_pool(std::span<const Scene> pool, int target_class,
                                                    int max_count) {
    std::vector<Scene> out;
    for (const Scene& scene : pool) {
        if (static_cast<int>(out.size()) >= max_count) break;
        if (scene.masked_class.has_value() || !scene.contains(target_class)) continue;
        out.push_back(mask_object(scene, target_class));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct ProbeExample {
    std::vector<double> x;
    int label = 0;
    std::string split;
};

struct ProbeDataset {
    std::string tap;
    int width = 0;
    std::vector<ProbeExample> examples;

    std::vector<const ProbeExample*> split(const std::string& name) const {
        std::vector<const ProbeExample*> out;
        for (const auto& ex : examples) {
            if (ex.split == name) out.push_back(&ex);
        }
        return out;
    }
};

inline std::vector<ProbeDataset> extract_taps(const Checkpoint& ckpt, const ProbeSceneSet& set,
                                              std::span<const int> question,
                                              const std::vector<std::string>& tap_names) {
    std::vector<ProbeDataset> datasets;
    for (const auto& tap : tap_names) {
        datasets.push_back({tap, tap_width(tap, ckpt.dims), {}});
    }
    for (const auto& entry : set.entries) {
        TapSet taps;
        forward(set.scenes[static_cast<std::size_t>(entry.scene_idx)], question, ckpt, &taps);
        for (auto& ds : datasets) {
            ds.examples.push_back({pooled_tap(taps, ds.tap, ckpt.dims), entry.label, entry.split});
        }
    }
    return datasets;
}

// ---------------------------------------------------------------------------
// Logistic probe

struct ProbeConfig {
    double lr = 0.5;
    double l2 = 1e-3;
    int epochs = 200;
};

struct ProbeParams {
    std::string tap;
    std::string pooling;
    Matrix weights;  // 2 x width; class 0 = absent, class 1 = present
    std::vector<double> bias{0.0, 0.0};
};

inline int probe_predict(const ProbeParams& p, const double* x) {
    const std::size_t w = p.weights.cols();
    const double z0 = dot(p.weights.row(0), x, w) + p.bias[0];
    const double z1 = dot(p.weights.row(1), x, w) + p.bias[1];
    return z1 > z0 ? 1 : 0;  // tie resolves to "absent"
}

struct ProbeLoss {
    double loss = 0.0;
    Matrix d_weights;
    std::vector<double> d_bias{0.0, 0.0};
};

// Mean 2-class NLL plus (l2/2)*||W||_F^2 (bias unpenalized).
inline ProbeLoss probe_loss_and_grads(const ProbeParams& p,
                                      std::span<const ProbeExample* const> batch, double l2) {
    if (batch.empty()) throw TrainingError("empty probe batch");
    const std::size_t w = p.weights.cols();
    ProbeLoss out;
    out.d_weights = Matrix(2, w);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const ProbeExample* ex : batch) {
        double z[2] = {dot(p.weights.row(0), ex->x.data(), w) + p.bias[0],
                       dot(p.weights.row(1), ex->x.data(), w) + p.bias[1]};
        const double mx = std::max(z[0], z[1]);
        const double e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx);
        const double sum = e0 + e1;
        const double prob[2] = {e0 / sum, e1 / sum};
        out.loss += -std::log(std::max(prob[ex->label], 1e-300)) * inv_n;
        for (int c = 0; c < 2; ++c) {
            const double dz = (prob[c] - (ex->label == c ? 1.0 : 0.0)) * inv_n;
            axpy(dz, ex->x.data(), out.d_weights.row(static_cast<std::size_t>(c)), w);
            out.d_bias[static_cast<std::size_t>(c)] += dz;
        }
    }
    for (std::size_t i = 0; i < out.d_weights.size(); ++i) {
        out.loss += 0.5 * l2 * p.weights.data()[i] * p.weights.data()[i];
        out.d_weights.data()[i] += l2 * p.weights.data()[i];
    }
    return out;
}

inline double probe_accuracy(const ProbeParams& p,
                             std::span<const ProbeExample* const> examples) {
    if (examples.empty()) throw DataError("probe accuracy over empty split");
    long long correct = 0;
    for (const ProbeExample* ex : examples) {
        if (probe_predict(p, ex->x.data()) == ex->label) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(examples.size());
}

struct ProbeTrainResult {
    ProbeParams params;
    double best_val_accuracy = 0.0;
    int best_epoch = -1;
};

// Full-batch gradient descent; the returned parameters are the snapshot with
// the best validation accuracy (earliest epoch wins ties).
inline ProbeTrainResult train_probe(const ProbeDataset& ds, const ProbeConfig& cfg) {
    const auto train = ds.split("train");
    const auto val = ds.split("val");
    if (train.empty() || val.empty()) throw TrainingError("probe needs nonempty train and val splits");
    bool has0 = false, has1 = false;
    for (const auto* ex : train) (ex->label ? has1 : has0) = true;
    if (!has0 || !has1) throw TrainingError("probe train split contains a single label");

    ProbeParams p;
    p.tap = ds.tap;
    p.pooling = tap_pooling(ds.tap);
    p.weights = Matrix(2, static_cast<std::size_t>(ds.width));
    p.bias = {0.0, 0.0};

    ProbeTrainResult best;
    best.params = p;
    best.best_val_accuracy = probe_accuracy(p, val);
    best.best_epoch = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        ProbeLoss grad = probe_loss_and_grads(p, train, cfg.l2);
        axpy(-cfg.lr, grad.d_weights.data(), p.weights.data(), p.weights.size());
        axpy(-cfg.lr, grad.d_bias.data(), p.bias.data(), 2);
        const double val_acc = probe_accuracy(p, val);
        if (val_acc > best.best_val_accuracy) {
            best.params = p;
            best.best_val_accuracy = val_acc;
            best.best_epoch = epoch;
        }
    }
    return best;
}

struct ProbeEval {
    double accuracy = 0.0;  // percent classified correctly ("absent" on the test split)
    bool constant_output = false;
};

inline ProbeEval eval_probe(const ProbeParams& p,
                            std::span<const ProbeExample* const> test) {
    if (test.empty()) throw DataError("probe eval over empty test split");
    long long correct = 0;
    int first_pred = -1;
    bool constant = true;
    for (const ProbeExample* ex : test) {
        const int pred = probe_predict(p, ex->x.data());
        if (first_pred < 0) first_pred = pred;
        else if (pred != first_pred) constant = false;
        if (pred == ex->label) ++correct;
    }
    return {100.0 * static_cast<double>(correct) / static_cast<double>(test.size()), constant};
}

// Percentage of counterfactual scenes the model itself answers NO on.
inline double generation_accuracy(const Checkpoint& ckpt, std::span<const Scene> counterfactuals,
                                  std::span<const int> question) {
    if (counterfactuals.empty()) throw DataError("generation accuracy over empty scene set");
    long long said_no = 0;
    for (const Scene& scene : counterfactuals) {
        const auto [p_yes, p_no] = yes_no_prob(scene, question, ckpt);
        if (!(p_yes > p_no)) ++said_no;
    }
    return 100.0 * static_cast<double>(said_no) / static_cast<double>(counterfactuals.size());
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json probe_example_to_json(const std::string& tap, const ProbeExample& ex) {
    return nlohmann::json{
        {"record", "probe_example"}, {"tap", tap}, {"split", ex.split}, {"label", ex.label},
        {"vec", ex.x}};
}

struct ProbeFile {
    nlohmann::json header;
    std::vector<ProbeDataset> datasets;  // one per tap, in file order
};

inline ProbeFile load_probe_file(const std::string& path) {
    const JsonlFile file = read_jsonl(path);
    ProbeFile out;
    out.header = file.header;
    std::map<std::string, std::size_t> index;
    for (const auto& [line_no, j] : file.records) {
        if (j.value("record", "") != "probe_example") continue;
        const std::string tap = j.at("tap").get<std::string>();
        auto [it, inserted] = index.try_emplace(tap, out.datasets.size());
        if (inserted) {
            out.datasets.emplace_back();
            out.datasets.back().tap = tap;
        }
        ProbeDataset& ds = out.datasets[it->second];
        ProbeExample ex;
        ex.x = j.at("vec").get<std::vector<double>>();
        ex.label = j.at("label").get<int>();
        ex.split = j.at("split").get<std::string>();
        if (ds.examples.empty()) {
            ds.width = static_cast<int>(ex.x.size());
        } else if (static_cast<int>(ex.x.size()) != ds.width) {
            throw DataError(path + ":" + std::to_string(line_no) + ": inconsistent vector width");
        }
        ds.examples.push_back(std::move(ex));
    }
    if (out.datasets.empty()) throw DataError(path + ": no probe examples");
    return out;
}

inline nlohmann::json probe_params_to_json(const ProbeParams& p, double best_val_accuracy) {
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < p.weights.rows(); ++r) {
        rows.emplace_back(p.weights.row(r), p.weights.row(r) + p.weights.cols());
    }
    return nlohmann::json{{"format", "mirage-probe"},  {"tap", p.tap},
                          {"pooling", p.pooling},      {"width", p.weights.cols()},
                          {"weights", rows},           {"bias", p.bias},
                          {"best_val_accuracy", best_val_accuracy}};
}

inline ProbeParams probe_params_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mirage-probe") throw DataError("not a probe parameter file");
    ProbeParams p;
    p.tap = j.at("tap").get<std::string>();
    p.pooling = j.at("pooling").get<std::string>();
    const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    if (rows.size() != 2 || rows[0].size() != rows[1].size()) {
        throw DataError("probe weights must be a 2-row matrix");
    }
    p.weights = Matrix(2, rows[0].size());
    for (std::size_t r = 0; r < 2; ++r) {
        std::copy(rows[r].begin(), rows[r].end(), p.weights.row(r));
    }
    p.bias = j.at("bias").get<std::vector<double>>();
    if (p.bias.size() != 2) throw DataError("probe bias must have two entries");
    return p;
}

}  // namespace mirage

#endif  // MIRAGE_PROBE_HPP
