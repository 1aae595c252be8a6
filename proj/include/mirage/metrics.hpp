#ifndef MIRAGE_METRICS_HPP
#define MIRAGE_METRICS_HPP

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mirage/corpus.hpp"
#include "mirage/error.hpp"
#include "mirage/harvest.hpp"
#include "mirage/jsonl.hpp"
#include "mirage/model.hpp"

namespace mirage {

// ---------------------------------------------------------------------------
// Confusion-matrix metrics

struct ConfusionCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    long long total() const { return tp + fp + tn + fn; }
};

// All values are percentages. A metric whose denominator is zero is left
// unset — callers must surface "undefined", never a silent zero.
struct PopeMetrics {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> tnr;
    std::optional<double> pbo;
};

inline PopeMetrics popev2_metrics(const ConfusionCounts& c) {
    PopeMetrics m;
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    const double total = tp + fp + tn + fn;
    if (total > 0) {
        m.accuracy = 100.0 * (tp + tn) / total;
        m.pbo = 100.0 * (tp + fp) / total - 50.0;
    }
    if (tp + fp > 0) m.precision = 100.0 * tp / (tp + fp);
    if (tp + fn > 0) m.recall = 100.0 * tp / (tp + fn);
    if (m.precision && m.recall && *m.precision + *m.recall > 0) {
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    if (tn + fp > 0) m.tnr = 100.0 * tn / (tn + fp);
    return m;
}

// ---------------------------------------------------------------------------
// Generative (caption) metrics

struct GenEvalCounts {
    long long responses_total = 0;
    long long responses_hallucinated = 0;
    long long mentions_total = 0;        // object-token mentions with multiplicity
    long long mentions_hallucinated = 0;
};

struct ChairRates {
    GenEvalCounts counts;
    double resp_rate = 0.0;
    std::optional<double> mention_rate;  // unset when the captions mention nothing
};

inline ChairRates chair_metrics(std::span<const InferenceRecord> inferences,
                                const Vocabulary& vocab) {
    if (inferences.empty()) throw DataError("chair metrics over zero captions");
    ChairRates out;
    out.counts.responses_total = static_cast<long long>(inferences.size());
    for (const auto& rec : inferences) {
        if (!rec.hallucinated_objects.empty()) out.counts.responses_hallucinated += 1;
        for (const auto& token : rec.prediction) {
            const int cls = vocab.class_of_token(vocab.id_of(token));
            if (cls < 0) continue;
            out.counts.mentions_total += 1;
            if (!rec.gt_objects.count(cls)) out.counts.mentions_hallucinated += 1;
        }
    }
    out.resp_rate = 100.0 * static_cast<double>(out.counts.responses_hallucinated) /
                    static_cast<double>(out.counts.responses_total);
    if (out.counts.mentions_total > 0) {
        out.mention_rate = 100.0 * static_cast<double>(out.counts.mentions_hallucinated) /
                           static_cast<double>(out.counts.mentions_total);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark evaluation

struct EvalItem {
    std::string scene_ref;
    std::vector<std::string> question;
    bool label = false;
    std::string target;
    double p_yes = 0.0;
    double p_no = 0.0;
    bool answered_yes = false;
    bool correct = false;
};

struct EvalReport {
    ConfusionCounts counts;
    PopeMetrics metrics;
    std::vector<EvalItem> items;
};

// Core protocol, parameterized over the answerer so oracle answerers can be
// slotted in: answer YES iff p_yes > p_no (ties resolve to NO), label=true is
// the positive class.
template <typename AnswerFn>
EvalReport eval_benchmark_with(AnswerFn&& answer, std::span<const BenchmarkItem> items) {
    EvalReport report;
    for (const auto& item : items) {
        EvalItem out;
        out.scene_ref = item.scene_ref;
        out.question = item.question;
        out.label = item.label;
        out.target = item.target;
        const std::pair<double, double> p = answer(item);
        out.p_yes = p.first;
        out.p_no = p.second;
        out.answered_yes = out.p_yes > out.p_no;
        out.correct = out.answered_yes == out.label;
        if (out.label) {
            (out.answered_yes ? report.counts.tp : report.counts.fn) += 1;
        } else {
            (out.answered_yes ? report.counts.fp : report.counts.tn) += 1;
        }
        report.items.push_back(std::move(out));
    }
    report.metrics = popev2_metrics(report.counts);
    return report;
}

inline EvalReport eval_benchmark(const Checkpoint& ckpt, const CorpusData& bench) {
    return eval_benchmark_with(
        [&](const BenchmarkItem& item) {
            const Scene& scene = bench.scene(item.scene_ref);
            return yes_no_prob(scene, ckpt.vocab.encode(item.question), ckpt);
        },
        bench.items);
}

// ---------------------------------------------------------------------------
// Report serialization

inline nlohmann::json metrics_to_json(const PopeMetrics& m) {
    auto field = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return nlohmann::json{{"accuracy", field(m.accuracy)}, {"precision", field(m.precision)},
                          {"recall", field(m.recall)},     {"f1", field(m.f1)},
                          {"tnr", field(m.tnr)},           {"pbo", field(m.pbo)}};
}

inline nlohmann::json counts_to_json(const ConfusionCounts& c) {
    return nlohmann::json{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

inline nlohmann::json eval_item_to_json(const EvalItem& item) {
    return nlohmann::json{{"record", "eval_item"},
                          {"scene", item.scene_ref},
                          {"question", item.question},
                          {"label", item.label},
                          {"target", item.target},
                          {"p_yes", item.p_yes},
                          {"p_no", item.p_no},
                          {"answer", item.answered_yes ? "yes" : "no"},
                          {"correct", item.correct}};
}

inline nlohmann::json report_to_json(const EvalReport& report, const nlohmann::json& provenance) {
    return nlohmann::json{{"counts", counts_to_json(report.counts)},
                          {"metrics", metrics_to_json(report.metrics)},
                          {"items", report.items.size()},
                          {"tie_rule", "p_yes == p_no answers no"},
                          {"provenance", provenance}};
}

// Recounts the confusion matrix from emitted per-item records; the identity
// between this and the report's own counts is a checked invariant.
inline ConfusionCounts recount_items(std::span<const EvalItem> items) {
    ConfusionCounts c;
    for (const auto& item : items) {
        if (item.label) {
            (item.answered_yes ? c.tp : c.fn) += 1;
        } else {
            (item.answered_yes ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

}  // namespace mirage

#endif  // MIRAGE_METRICS_HPP
