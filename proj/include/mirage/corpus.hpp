#ifndef MIRAGE_CORPUS_HPP
#define MIRAGE_CORPUS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/jsonl.hpp"
#include "mirage/rng.hpp"
#include "mirage/scene.hpp"
#include "mirage/vocab.hpp"

namespace mirage {

struct CaptionRecord {
    std::string scene_ref;
    std::vector<std::string> instruction;
    std::vector<std::string> caption;
};

// Binary object-existence instruction used for the auto-regressive mixture.
struct QaRecord {
    std::string scene_ref;
    std::vector<std::string> question;
    std::string answer;  // "yes" | "no"
    std::string target;
};

struct BenchmarkItem {
    std::string scene_ref;
    std::vector<std::string> question;
    bool label = false;
    std::string target;
};

struct SpanRef {
    int start = 0;  // token indices into the prediction, half-open
    int end = 0;
    std::string trigger;
};

struct UnlearnRecord {
    std::string scene_ref;
    std::vector<std::string> instruction;
    std::vector<std::string> ground_truth;
    std::vector<std::string> prediction;
    std::vector<SpanRef> spans;
};

// Fixed caption grammar: determiner + object name, comma-joined, "and" before
// the last mention, period-terminated, <eos>-closed. Mention order follows
// placement order, which is class-id order.
inline std::vector<std::string> caption_tokens(const Scene& scene,
                                               const std::vector<std::string>& class_names) {
    const std::vector<int> present = scene.present_classes();
    std::vector<std::string> toks;
    if (present.empty()) {
        toks = {tok::kNothing, tok::kPeriod, tok::kEos};
        return toks;
    }
    for (std::size_t i = 0; i < present.size(); ++i) {
        if (i > 0) toks.push_back(i + 1 == present.size() ? tok::kAnd : tok::kComma);
        toks.push_back(tok::kDet);
        toks.push_back(class_names.at(static_cast<std::size_t>(present[i])));
    }
    toks.push_back(tok::kPeriod);
    toks.push_back(tok::kEos);
    return toks;
}

struct GeneratedCorpus {
    std::vector<Scene> scenes;
    std::vector<CaptionRecord> captions;
    std::vector<QaRecord> qas;
};

// Emits `count` scenes, one hallucination-free caption each, and
// `qa_per_scene` binary questions per scene alternating present/absent
// targets (so roughly two thirds of QA answers are affirmative, mirroring the
// affirmative skew of instruction-tuning mixtures).
inline GeneratedCorpus gen_corpus(const CooccurrenceSpec& spec, int count, int qa_per_scene,
                                  std::uint64_t seed) {
    if (count < 1) throw ConfigError("corpus count must be >= 1");
    if (qa_per_scene < 0) throw ConfigError("qa_per_scene must be >= 0");
    spec.validate();

    GeneratedCorpus out;
    out.scenes.reserve(static_cast<std::size_t>(count));
    const auto instruction = caption_instruction_tokens();

    for (int i = 0; i < count; ++i) {
        Scene scene = gen_scene(spec, Rng::mix(seed, static_cast<std::uint64_t>(i)));
        out.captions.push_back({scene.id, instruction, caption_tokens(scene, spec.class_names)});

        Rng qa_rng(Rng::mix(stream::kQa, Rng::mix(seed, static_cast<std::uint64_t>(i))));
        std::vector<int> present = scene.present_classes();
        std::vector<int> absent;
        for (int c = 0; c < spec.class_count(); ++c) {
            if (!scene.contains(c)) absent.push_back(c);
        }
        for (int q = 0; q < qa_per_scene; ++q) {
            bool want_present = (q % 2 == 0);
            std::vector<int>& pool = (want_present && !present.empty()) ? present
                                     : (!absent.empty() ? absent : present);
            if (pool.empty()) break;
            const std::size_t pick = qa_rng.next_below(pool.size());
            const int cls = pool[pick];
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
            const bool is_present = scene.contains(cls);
            out.qas.push_back({scene.id, question_tokens(spec.class_names[cls]),
                               is_present ? tok::kYes : tok::kNo, spec.class_names[cls]});
        }
        out.scenes.push_back(std::move(scene));
    }
    return out;
}

namespace detail {
inline nlohmann::json file_header(const std::string& kind, const CooccurrenceSpec& spec,
                                  std::uint64_t seed) {
    return nlohmann::json{{"format", "mirage-jsonl"},
                          {"kind", kind},
                          {"classes", spec.class_names},
                          {"grid", spec.grid_size},
                          {"spec_hash", spec.hash()},
                          {"seed", seed}};
}
}  // namespace detail

inline nlohmann::json caption_to_json(const CaptionRecord& r) {
    return {{"type", "caption"}, {"scene", r.scene_ref}, {"instruction", r.instruction},
            {"caption", r.caption}};
}

inline nlohmann::json qa_to_json(const QaRecord& r) {
    return {{"type", "qa"}, {"scene", r.scene_ref}, {"question", r.question},
            {"answer", r.answer}, {"target", r.target}};
}

inline nlohmann::json item_to_json(const BenchmarkItem& r) {
    return {{"type", "question"}, {"scene", r.scene_ref}, {"question", r.question},
            {"label", r.label}, {"target", r.target}};
}

inline nlohmann::json unlearn_to_json(const UnlearnRecord& r) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : r.spans) {
        spans.push_back({{"start", s.start}, {"end", s.end}, {"trigger", s.trigger}});
    }
    return {{"type", "unlearn"}, {"scene", r.scene_ref}, {"instruction", r.instruction},
            {"ground_truth", r.ground_truth}, {"prediction", r.prediction}, {"spans", spans}};
}

inline void write_caption_file(const GeneratedCorpus& corpus, const CooccurrenceSpec& spec,
                               std::uint64_t seed, const std::string& path) {
    JsonlWriter w(detail::file_header("captions", spec, seed));
    for (const auto& s : corpus.scenes) w.append(scene_to_json(s, spec.class_names));
    for (const auto& c : corpus.captions) w.append(caption_to_json(c));
    w.save(path);
}

inline void write_qa_file(const GeneratedCorpus& corpus, const CooccurrenceSpec& spec,
                          std::uint64_t seed, const std::string& path) {
    JsonlWriter w(detail::file_header("qa", spec, seed));
    for (const auto& s : corpus.scenes) w.append(scene_to_json(s, spec.class_names));
    for (const auto& q : corpus.qas) w.append(qa_to_json(q));
    w.save(path);
}

// In-memory view of any mirage jsonl file. std::map keeps scene addresses
// stable, so training examples can hold Scene pointers into it.
struct CorpusData {
    nlohmann::json header;
    std::vector<std::string> class_names;
    int grid = 0;
    std::map<std::string, Scene> scenes;
    std::vector<std::string> scene_order;
    std::vector<CaptionRecord> captions;
    std::vector<QaRecord> qas;
    std::vector<BenchmarkItem> items;
    std::vector<UnlearnRecord> unlearn;

    const Scene& scene(const std::string& ref) const {
        auto it = scenes.find(ref);
        if (it == scenes.end()) throw DataError("unknown scene reference: " + ref);
        return it->second;
    }
};

inline CorpusData load_corpus(const std::string& path) {
    const JsonlFile file = read_jsonl(path);
    CorpusData data;
    data.header = file.header;
    try {
        data.class_names = file.header.at("classes").get<std::vector<std::string>>();
        data.grid = file.header.at("grid").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ":1: bad header: " + e.what());
    }
    for (const auto& [line_no, rec] : file.records) {
        std::string type;
        try {
            type = rec.at("type").get<std::string>();
            if (type == "scene") {
                Scene s = scene_from_json(rec, data.class_names);
                data.scene_order.push_back(s.id);
                data.scenes.emplace(s.id, std::move(s));
            } else if (type == "caption") {
                data.captions.push_back({rec.at("scene").get<std::string>(),
                                         rec.at("instruction").get<std::vector<std::string>>(),
                                         rec.at("caption").get<std::vector<std::string>>()});
            } else if (type == "qa") {
                data.qas.push_back({rec.at("scene").get<std::string>(),
                                    rec.at("question").get<std::vector<std::string>>(),
                                    rec.at("answer").get<std::string>(),
                                    rec.at("target").get<std::string>()});
            } else if (type == "question") {
                data.items.push_back({rec.at("scene").get<std::string>(),
                                      rec.at("question").get<std::vector<std::string>>(),
                                      rec.at("label").get<bool>(),
                                      rec.at("target").get<std::string>()});
            } else if (type == "unlearn") {
                UnlearnRecord u;
                u.scene_ref = rec.at("scene").get<std::string>();
                u.instruction = rec.at("instruction").get<std::vector<std::string>>();
                u.ground_truth = rec.at("ground_truth").get<std::vector<std::string>>();
                u.prediction = rec.at("prediction").get<std::vector<std::string>>();
                for (const auto& s : rec.at("spans")) {
                    u.spans.push_back({s.at("start").get<int>(), s.at("end").get<int>(),
                                       s.at("trigger").get<std::string>()});
                }
                data.unlearn.push_back(std::move(u));
            } else {
                throw DataError("unknown record type: " + type);
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad record: " + e.what());
        }
    }
    // Every record must point at a scene carried by the same file.
    for (const auto& [line_no, rec] : file.records) {
        if (!rec.contains("scene")) continue;
        const auto ref = rec.at("scene").get<std::string>();
        if (data.scenes.find(ref) == data.scenes.end()) {
            throw DataError(path + ":" + std::to_string(line_no) + ": missing scene reference: " + ref);
        }
    }
    return data;
}

}  // namespace mirage

#endif  // MIRAGE_CORPUS_HPP
