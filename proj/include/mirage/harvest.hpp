#ifndef MIRAGE_HARVEST_HPP
#define MIRAGE_HARVEST_HPP

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "mirage/corpus.hpp"
#include "mirage/error.hpp"
#include "mirage/jsonl.hpp"
#include "mirage/model.hpp"

namespace mirage {

// Re-inference of the model on its own caption instructions, detection of
// hallucinated objects against scene ground truth, and extraction of the
// sub-sentence spans that feed unlearning.

struct InferenceRecord {
    std::string scene_ref;
    std::vector<std::string> instruction;
    std::vector<std::string> ground_truth;
    std::vector<std::string> prediction;
    std::set<int> gt_objects;            // from the scene, the authoritative source
    std::set<int> pred_objects;          // classes whose token appears in the prediction
    std::set<int> hallucinated_objects;  // pred - gt
};

struct Span {
    int start = 0;  // half-open token indices into the prediction
    int end = 0;
    int trigger = -1;  // hallucinated class id
};

inline int default_decode_len(const ModelDims& dims) {
    // Longest well-formed caption: C mentions of 3 tokens each, plus the
    // final "and" and period; padded to absorb degenerate repetition.
    return 4 * dims.classes + 8;
}

// Fills gt/pred/hallucinated sets. Mentions are exact token matches; sets, not
// multisets, so repeats collapse.
inline void detect_hallucinated(InferenceRecord& rec, const Scene& scene, const Vocabulary& vocab) {
    rec.gt_objects.clear();
    rec.pred_objects.clear();
    rec.hallucinated_objects.clear();
    for (int cls : scene.present_classes()) rec.gt_objects.insert(cls);
    for (const auto& token : rec.prediction) {
        const int id = vocab.id_of(token);
        const int cls = vocab.class_of_token(id);
        if (cls >= 0) rec.pred_objects.insert(cls);
    }
    std::set_difference(rec.pred_objects.begin(), rec.pred_objects.end(), rec.gt_objects.begin(),
                        rec.gt_objects.end(),
                        std::inserter(rec.hallucinated_objects, rec.hallucinated_objects.begin()));
}

inline InferenceRecord reinfer_one(const Checkpoint& ckpt, const CorpusData& corpus,
                                   const CaptionRecord& rec, int max_len = 0) {
    const Scene& scene = corpus.scene(rec.scene_ref);
    if (max_len <= 0) max_len = default_decode_len(ckpt.dims);
    InferenceRecord out;
    out.scene_ref = rec.scene_ref;
    out.instruction = rec.instruction;
    out.ground_truth = rec.caption;
    const std::vector<int> prompt = ckpt.vocab.encode(rec.instruction);
    const std::vector<int> pred = decode_greedy(scene, prompt, ckpt, max_len);
    out.prediction = ckpt.vocab.decode(pred);
    detect_hallucinated(out, scene, ckpt.vocab);
    return out;
}

inline std::vector<InferenceRecord> reinfer(const Checkpoint& ckpt, const CorpusData& corpus,
                                            int max_len = 0) {
    std::vector<InferenceRecord> out;
    out.reserve(corpus.captions.size());
    for (const auto& rec : corpus.captions) out.push_back(reinfer_one(ckpt, corpus, rec, max_len));
    return out;
}

// ---------------------------------------------------------------------------
// Span splitting

// Delimiters: comma, period, and every token of a correctly-present mentioned
// class. The prediction is partitioned at delimiter tokens (delimiters belong
// to no span); each hallucinated class contributes the segment containing its
// FIRST occurrence.
inline std::vector<Span> split_spans(const std::vector<int>& pred_ids,
                                     const std::set<int>& gt_objects,
                                     const std::set<int>& pred_objects,
                                     const std::set<int>& hallucinated_objects,
                                     const Vocabulary& vocab) {
    std::set<int> delimiter_tokens{vocab.id_of(","), vocab.id_of(".")};
    for (int cls : pred_objects) {
        if (gt_objects.count(cls)) delimiter_tokens.insert(vocab.class_token(cls));
    }

    std::vector<Span> spans;
    std::set<int> pending(hallucinated_objects.begin(), hallucinated_objects.end());
    std::size_t i = 0;
    while (i < pred_ids.size() && !pending.empty()) {
        if (delimiter_tokens.count(pred_ids[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < pred_ids.size() && !delimiter_tokens.count(pred_ids[j])) ++j;
        // segment [i, j)
        for (std::size_t t = i; t < j; ++t) {
            const int cls = vocab.class_of_token(pred_ids[t]);
            if (cls >= 0 && pending.count(cls)) {
                spans.push_back({static_cast<int>(i), static_cast<int>(j), cls});
                pending.erase(cls);
            }
        }
        i = j;
    }
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
        return a.start != b.start ? a.start < b.start : a.trigger < b.trigger;
    });
    return spans;
}

inline std::vector<Span> spans_for_record(const InferenceRecord& rec, const Vocabulary& vocab) {
    return split_spans(vocab.encode(rec.prediction), rec.gt_objects, rec.pred_objects,
                       rec.hallucinated_objects, vocab);
}

// ---------------------------------------------------------------------------
// Unlearning set assembly

struct HarvestStats {
    long long records_total = 0;
    long long records_hallucinated = 0;
    long long spans_total = 0;

    double hallucination_rate() const {
        return records_total == 0 ? 0.0
                                  : 100.0 * static_cast<double>(records_hallucinated) /
                                        static_cast<double>(records_total);
    }
    double spans_per_record() const {
        return records_hallucinated == 0 ? 0.0
                                         : static_cast<double>(spans_total) /
                                               static_cast<double>(records_hallucinated);
    }
};

struct HarvestResult {
    std::vector<UnlearnRecord> records;  // only records with >= 1 span
    HarvestStats stats;
    std::string warning;  // set when the unlearning set came out empty
};

inline HarvestResult build_unlearn_set(const std::vector<InferenceRecord>& inferences,
                                       const Vocabulary& vocab) {
    HarvestResult result;
    result.stats.records_total = static_cast<long long>(inferences.size());
    for (const auto& rec : inferences) {
        if (rec.hallucinated_objects.empty()) continue;
        const std::vector<Span> spans = spans_for_record(rec, vocab);
        if (spans.empty()) continue;
        result.stats.records_hallucinated += 1;
        result.stats.spans_total += static_cast<long long>(spans.size());
        UnlearnRecord out;
        out.scene_ref = rec.scene_ref;
        out.instruction = rec.instruction;
        out.ground_truth = rec.ground_truth;
        out.prediction = rec.prediction;
        for (const Span& s : spans) {
            out.spans.push_back({s.start, s.end, vocab.class_names()[static_cast<std::size_t>(s.trigger)]});
        }
        result.records.push_back(std::move(out));
    }
    if (result.records.empty()) {
        result.warning = "no hallucinated records: unlearning set is empty";
    }
    return result;
}

inline nlohmann::json stats_to_json(const HarvestStats& stats) {
    return nlohmann::json{{"records_total", stats.records_total},
                          {"records_hallucinated", stats.records_hallucinated},
                          {"spans_total", stats.spans_total},
                          {"hallucination_rate", stats.hallucination_rate()},
                          {"spans_per_record", stats.spans_per_record()}};
}

// Unlearning file: referenced scenes (first-use order) followed by records, so
// the file is loadable on its own.
inline void write_unlearn_file(const CorpusData& corpus, const std::vector<UnlearnRecord>& records,
                               const nlohmann::json& header, const std::filesystem::path& path) {
    JsonlWriter writer(header);
    std::set<std::string> seen;
    for (const auto& rec : records) {
        if (seen.insert(rec.scene_ref).second) {
            writer.append(scene_to_json(corpus.scene(rec.scene_ref), corpus.class_names));
        }
    }
    for (const auto& rec : records) writer.append(unlearn_to_json(rec));
    writer.save(path);
}

}  // namespace mirage

#endif  // MIRAGE_HARVEST_HPP
