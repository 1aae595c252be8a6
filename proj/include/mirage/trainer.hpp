#ifndef MIRAGE_TRAINER_HPP
#define MIRAGE_TRAINER_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mirage/corpus.hpp"
#include "mirage/error.hpp"
#include "mirage/model.hpp"
#include "mirage/rng.hpp"

namespace mirage {

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
    std::string kind = "adam";  // "adam" | "sgd"
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-block first/second moment buffers; allocated on first use.
struct OptState {
    std::vector<double> m;
    std::vector<double> v;
    long long t = 0;
};

inline void optimizer_step(double* params, const double* grad, std::size_t n, OptState& state,
                           const OptimizerConfig& cfg, long long step_index) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(grad[i])) {
            throw TrainingError("non-finite gradient at step " + std::to_string(step_index));
        }
    }
    if (cfg.kind == "sgd") {
        for (std::size_t i = 0; i < n; ++i) params[i] -= cfg.lr * grad[i];
        return;
    }
    if (cfg.kind != "adam") throw ConfigError("unknown optimizer kind: " + cfg.kind);
    if (state.m.size() != n) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
        state.t = 0;
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    long long steps = 2000;
    int batch_size = 32;
    int unlearn_batch_size = 8;  // per-step unlearn draw; mirrors the 1:4 data ratio
    OptimizerConfig optimizer;
    double alpha = 0.02;     // weight of the debias term (obliviate only)
    double ar_weight = 1.0;  // weight of the AR term; 0 isolates the debias gradient
    std::uint64_t seed = 0;
    std::string config_hash;  // recorded into the checkpoint, optional
};

struct StepLog {
    long long step = 0;
    double loss_ar = 0.0;
    std::optional<double> loss_db;         // alpha-weighted term's raw value: mean span log-prob
    std::optional<double> mean_span_logp;  // same quantity, kept as its own column
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> history;
    bool aborted = false;
    std::string abort_reason;
    std::string warning;
};

constexpr double kSpanCollapseProb = 1e-6;  // early-abort guard on span degeneration

namespace detail {

// One combined evaluation: loss = ar_weight * L_AR + alpha * L_DB, where
// L_DB is the mean span log-probability (so minimizing it is gradient ascent
// on span NLL). Gradients accumulate accordingly: g = ar_weight*g_ar - alpha*g_span_nll.
struct CombinedStep {
    double loss_ar = 0.0;
    std::optional<double> loss_db;
    Gradients grads;
};

inline CombinedStep combined_loss_and_grads(std::span<const TrainExample> ar_batch,
                                            std::span<const TrainExample> unlearn_batch,
                                            double ar_weight, double alpha,
                                            const Checkpoint& ckpt, TrainableMask mask) {
    CombinedStep out;
    out.grads = Gradients::zeros(ckpt.dims);
    auto accumulate = [&](const Gradients& g, double scale) {
        if (scale == 0.0) return;
        axpy(scale, g.d_embeddings.data(), out.grads.d_embeddings.data(), g.d_embeddings.size());
        axpy(scale, g.d_lm_head.data(), out.grads.d_lm_head.data(), g.d_lm_head.size());
        axpy(scale, g.d_bias.data(), out.grads.d_bias.data(), g.d_bias.size());
    };
    if (!ar_batch.empty()) {
        LossResult ar = loss_and_grads(ar_batch, ckpt, mask);
        out.loss_ar = ar.loss;
        accumulate(ar.grads, ar_weight);
    }
    if (!unlearn_batch.empty() && alpha != 0.0) {
        LossResult span = loss_and_grads(unlearn_batch, ckpt, mask);
        out.loss_db = -span.loss;  // mean span log-prob
        accumulate(span.grads, -alpha);
    }
    return out;
}

}  // namespace detail

// Core loop shared by base training, continued head-only training, and
// obliviate. AR batches and unlearn batches are drawn from independent
// deterministic streams, so disabling the unlearn term (alpha = 0 or an empty
// unlearn set) leaves the AR batch schedule untouched — this is what makes
// obliviate(alpha=0) bit-identical to continued head-only training.
inline TrainResult run_training(const Checkpoint& start, std::span<const TrainExample> ar_set,
                                std::span<const TrainExample> unlearn_set, const TrainConfig& cfg,
                                TrainableMask mask, const std::string& stage) {
    if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (ar_set.empty() && cfg.ar_weight != 0.0) throw TrainingError("empty AR example set");

    TrainResult result;
    result.checkpoint = start;
    Checkpoint& ckpt = result.checkpoint;

    Rng rng_ar(Rng::mix(stream::kArBatch, cfg.seed));
    Rng rng_un(Rng::mix(stream::kUnlearnBatch, cfg.seed));
    const bool use_unlearn = cfg.alpha != 0.0 && !unlearn_set.empty();
    const int unlearn_batch = std::max(1, cfg.unlearn_batch_size);

    OptState st_emb, st_head, st_bias;
    std::vector<TrainExample> ar_batch(static_cast<std::size_t>(cfg.batch_size));
    std::vector<TrainExample> un_batch;

    double initial_loss_ar = 0.0;
    for (long long step = 0; step < cfg.steps; ++step) {
        if (cfg.ar_weight != 0.0) {
            for (int b = 0; b < cfg.batch_size; ++b) {
                ar_batch[static_cast<std::size_t>(b)] =
                    ar_set[static_cast<std::size_t>(rng_ar.next_below(ar_set.size()))];
            }
        } else {
            ar_batch.clear();
        }
        un_batch.clear();
        if (use_unlearn) {
            for (int b = 0; b < unlearn_batch; ++b) {
                un_batch.push_back(
                    unlearn_set[static_cast<std::size_t>(rng_un.next_below(unlearn_set.size()))]);
            }
        }

        detail::CombinedStep step_result = detail::combined_loss_and_grads(
            ar_batch, un_batch, cfg.ar_weight, cfg.alpha, ckpt, mask);

        StepLog log;
        log.step = step;
        log.loss_ar = step_result.loss_ar;
        log.loss_db = step_result.loss_db;
        log.mean_span_logp = step_result.loss_db;
        result.history.push_back(log);

        if (step == 0) initial_loss_ar = step_result.loss_ar;
        if (step_result.loss_ar > initial_loss_ar * 10.0 && step_result.loss_ar > 1.0) {
            throw TrainingError("divergence at step " + std::to_string(step) + ": loss " +
                                std::to_string(step_result.loss_ar) + " exceeds 10x initial " +
                                std::to_string(initial_loss_ar));
        }
        if (use_unlearn && step_result.loss_db &&
            std::exp(*step_result.loss_db) < kSpanCollapseProb) {
            result.aborted = true;
            result.abort_reason = "span probability collapsed below 1e-6 at step " +
                                  std::to_string(step) + " (mean span log-prob " +
                                  std::to_string(*step_result.loss_db) + ")";
            break;
        }

        if (mask.embeddings) {
            optimizer_step(ckpt.head.embeddings.data(), step_result.grads.d_embeddings.data(),
                           ckpt.head.embeddings.size(), st_emb, cfg.optimizer, step);
        }
        if (mask.lm_head) {
            optimizer_step(ckpt.head.lm_head.data(), step_result.grads.d_lm_head.data(),
                           ckpt.head.lm_head.size(), st_head, cfg.optimizer, step);
            optimizer_step(ckpt.head.bias.data(), step_result.grads.d_bias.data(),
                           ckpt.head.bias.size(), st_bias, cfg.optimizer, step);
        }
    }

    ckpt.meta.stage = stage;
    ckpt.meta.step_count = start.meta.step_count + static_cast<std::int64_t>(result.history.size());
    if (!cfg.config_hash.empty()) ckpt.meta.config_hash = cfg.config_hash;
    return result;
}

inline TrainResult train_base(const Checkpoint& init, std::span<const TrainExample> ar_set,
                              const TrainConfig& cfg) {
    return run_training(init, ar_set, {}, cfg, TrainableMask{true, true}, "base");
}

// Head-only continuation of AR training; the alpha=0 reference point.
inline TrainResult train_continue_head(const Checkpoint& base, std::span<const TrainExample> ar_set,
                                       const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.alpha = 0.0;
    return run_training(base, ar_set, {}, c, TrainableMask{false, true}, "continued");
}

inline TrainResult obliviate(const Checkpoint& base, std::span<const TrainExample> unlearn_set,
                             std::span<const TrainExample> ar_set, const TrainConfig& cfg) {
    if (cfg.alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (unlearn_set.empty()) {
        TrainResult result;
        result.checkpoint = base;
        result.warning = "empty unlearn set: obliviate is a no-op";
        return result;
    }
    return run_training(base, ar_set, unlearn_set, cfg, TrainableMask{false, true}, "obliviate");
}

// ---------------------------------------------------------------------------
// Example assembly from corpus records

inline std::vector<int> encode_or_throw(const Vocabulary& vocab,
                                        const std::vector<std::string>& tokens,
                                        const std::string& what) {
    try {
        return vocab.encode(tokens);
    } catch (const std::exception& e) {
        throw DataError(what + ": " + e.what());
    }
}

inline TrainExample make_caption_example(const CorpusData& corpus, const CaptionRecord& rec,
                                         const Vocabulary& vocab) {
    TrainExample ex;
    ex.scene = &corpus.scene(rec.scene_ref);
    const std::vector<int> instr = encode_or_throw(vocab, rec.instruction, "caption instruction");
    const std::vector<int> target = encode_or_throw(vocab, rec.caption, "caption");
    ex.text = instr;
    ex.text.insert(ex.text.end(), target.begin(), target.end());
    for (std::size_t i = 0; i < target.size(); ++i) {
        ex.target_positions.push_back(static_cast<int>(instr.size() + i));
    }
    return ex;
}

inline TrainExample make_qa_example(const CorpusData& corpus, const QaRecord& rec,
                                    const Vocabulary& vocab) {
    TrainExample ex;
    ex.scene = &corpus.scene(rec.scene_ref);
    ex.text = encode_or_throw(vocab, rec.question, "question");
    const int prompt_len = static_cast<int>(ex.text.size());
    ex.text.push_back(vocab.id_of(rec.answer));
    ex.text.push_back(vocab.eos());
    ex.target_positions = {prompt_len, prompt_len + 1};
    return ex;
}

// Captions first, then QA, preserving file order.
inline std::vector<TrainExample> make_ar_examples(const CorpusData& corpus,
                                                  const Vocabulary& vocab) {
    std::vector<TrainExample> out;
    out.reserve(corpus.captions.size() + corpus.qas.size());
    for (const auto& rec : corpus.captions) out.push_back(make_caption_example(corpus, rec, vocab));
    for (const auto& rec : corpus.qas) out.push_back(make_qa_example(corpus, rec, vocab));
    return out;
}

// Unlearn target = union of span token positions within the re-inferred
// prediction. Positions are deduplicated so overlapping spans cannot
// double-count a token.
inline std::vector<TrainExample> make_unlearn_examples(const CorpusData& corpus,
                                                       const Vocabulary& vocab) {
    std::vector<TrainExample> out;
    for (const auto& rec : corpus.unlearn) {
        if (rec.spans.empty() || rec.prediction.empty()) continue;
        TrainExample ex;
        ex.scene = &corpus.scene(rec.scene_ref);
        const std::vector<int> instr = encode_or_throw(vocab, rec.instruction, "unlearn instruction");
        const std::vector<int> pred = encode_or_throw(vocab, rec.prediction, "unlearn prediction");
        ex.text = instr;
        ex.text.insert(ex.text.end(), pred.begin(), pred.end());
        std::set<int> positions;
        for (const auto& span : rec.spans) {
            if (span.start < 0 || span.end > static_cast<int>(pred.size()) ||
                span.start >= span.end) {
                throw DataError("span [" + std::to_string(span.start) + "," +
                                std::to_string(span.end) + ") out of range for prediction of " +
                                std::to_string(pred.size()) + " tokens");
            }
            for (int t = span.start; t < span.end; ++t) {
                positions.insert(static_cast<int>(instr.size()) + t);
            }
        }
        ex.target_positions.assign(positions.begin(), positions.end());
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss curve CSV

inline std::string loss_csv(const std::vector<StepLog>& history) {
    std::ostringstream out;
    out.precision(17);
    out << "step,loss_ar,loss_db,mean_span_logp\n";
    for (const auto& log : history) {
        out << log.step << "," << log.loss_ar << ",";
        if (log.loss_db) out << *log.loss_db;
        out << ",";
        if (log.mean_span_logp) out << *log.mean_span_logp;
        out << "\n";
    }
    return out.str();
}

inline void write_loss_csv(const std::vector<StepLog>& history,
                           const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << loss_csv(history);
}

}  // namespace mirage

#endif  // MIRAGE_TRAINER_HPP
