#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "mirage/benchmark.hpp"
#include "mirage/corpus.hpp"
#include "mirage/harvest.hpp"
#include "mirage/metrics.hpp"
#include "mirage/pipeline.hpp"
#include "mirage/scene.hpp"

#include "helpers.hpp"

using namespace mirage;
using testutil::blank_scene;
using testutil::fill_block;
using testutil::small_spec;

TEST_CASE("gen_scene with zero base rate yields an empty scene") {
    CooccurrenceSpec spec = small_spec(4, 8, 0.0);
    const Scene scene = gen_scene(spec, 123);
    CHECK(scene.present_classes().empty());
    for (auto c : scene.cells) CHECK(c == kEmptyCell);
}

TEST_CASE("gen_scene is deterministic in (spec, seed)") {
    CooccurrenceSpec spec = small_spec(6, 8, 0.3);
    const Scene a = gen_scene(spec, 998877);
    const Scene b = gen_scene(spec, 998877);
    CHECK(a.id == b.id);
    CHECK(a.seed == b.seed);
    CHECK(a.cells == b.cells);
    const Scene c = gen_scene(spec, 998878);
    CHECK(a.cells != c.cells);  // astronomically unlikely to collide
}

TEST_CASE("lift raises conditional placement frequency as specified") {
    CooccurrenceSpec spec = small_spec(2, 8, 0.15);
    spec.lift.at(0, 1) = 5.0;
    spec.lift.at(1, 0) = 5.0;
    spec.validate();

    long long n_tv = 0, n_tv_remote = 0, n_no = 0, n_no_remote = 0;
    const int kScenes = 10000;
    for (int i = 0; i < kScenes; ++i) {
        const Scene s = gen_scene(spec, Rng::mix(777, static_cast<std::uint64_t>(i)));
        if (s.contains(0)) {
            ++n_tv;
            if (s.contains(1)) ++n_tv_remote;
        } else {
            ++n_no;
            if (s.contains(1)) ++n_no_remote;
        }
    }
    REQUIRE(n_tv > 500);
    const double p_given = static_cast<double>(n_tv_remote) / static_cast<double>(n_tv);
    const double p_without = static_cast<double>(n_no_remote) / static_cast<double>(n_no);
    CHECK(p_given > p_without);

    // Placement order is class-id order, so remote's rate is exactly
    // base_rate*lift given tv and base_rate without; check within 3 SE.
    const double e_given = 0.15 * 5.0;
    const double e_without = 0.15;
    const double se_given = std::sqrt(e_given * (1 - e_given) / static_cast<double>(n_tv));
    const double se_without = std::sqrt(e_without * (1 - e_without) / static_cast<double>(n_no));
    CHECK(std::abs(p_given - e_given) <= 3.0 * se_given);
    CHECK(std::abs(p_without - e_without) <= 3.0 * se_without);
}

TEST_CASE("maskable_area brackets the 5%-25% band") {
    CHECK_FALSE(maskable_area(3, 8));   // 4.7%
    CHECK(maskable_area(4, 8));         // 6.25%
    CHECK(maskable_area(16, 8));        // exactly 25%
    CHECK_FALSE(maskable_area(17, 8));  // 26.6%
}

TEST_CASE("select_target picks eligible, least frequent, lowest id") {
    CooccurrenceSpec spec = small_spec(4, 8);
    std::vector<std::int64_t> freq(4, 0);

    SECTION("singleton eligible object") {
        Scene s = blank_scene(8);
        fill_block(s, 2, 0, 0, 2, 2);  // 4 cells = 6.25%, eligible
        fill_block(s, 0, 4, 4, 1, 1);  // 1 cell, too small
        const ObjectClass t = select_target(spec, s, freq);
        CHECK(t.id == 2);
        CHECK(t.name == "laptop");
    }
    SECTION("minimum running frequency wins") {
        Scene s = blank_scene(8);
        fill_block(s, 1, 0, 0, 2, 2);
        fill_block(s, 3, 4, 4, 2, 2);
        freq = {0, 7, 0, 3};
        CHECK(select_target(spec, s, freq).id == 3);
    }
    SECTION("frequency tie breaks toward the lowest class id") {
        Scene s = blank_scene(8);
        fill_block(s, 1, 0, 0, 2, 2);
        fill_block(s, 3, 4, 4, 2, 2);
        freq = {0, 5, 0, 5};
        CHECK(select_target(spec, s, freq).id == 1);
    }
    SECTION("no eligible object raises a generation error") {
        Scene s = blank_scene(8);
        fill_block(s, 0, 0, 0, 1, 2);  // 2 cells, under the 5% floor
        CHECK_THROWS_AS(select_target(spec, s, freq), GenerationError);
    }
    SECTION("frequency table size is validated") {
        Scene s = blank_scene(8);
        fill_block(s, 0, 0, 0, 2, 2);
        std::vector<std::int64_t> bad(3, 0);
        CHECK_THROWS_AS(select_target(spec, s, bad), ConfigError);
    }
}

TEST_CASE("mask_object erases exactly the target block") {
    Scene s = blank_scene(8, 42);
    fill_block(s, 2, 1, 1, 2, 3);
    fill_block(s, 0, 5, 5, 2, 2);

    const Scene cf = mask_object(s, 2);
    CHECK_FALSE(cf.contains(2));
    CHECK(cf.masked_class == 2);
    CHECK(cf.id == s.id + "-cf");
    CHECK(cf.seed == s.seed);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
            if (s.cell(r, c) == 2) {
                CHECK(cf.cell(r, c) == kMaskCell);
            } else {
                CHECK(cf.cell(r, c) == s.cell(r, c));
            }
        }
    }
    CHECK(cf.contains(0));  // other classes untouched

    CHECK_THROWS_AS(mask_object(cf, 2), GenerationError);  // already gone
}

TEST_CASE("object blocks are solid rectangles covering the class exactly") {
    CooccurrenceSpec spec = small_spec(6, 8, 0.35);
    for (int i = 0; i < 200; ++i) {
        const Scene s = gen_scene(spec, Rng::mix(3000, static_cast<std::uint64_t>(i)));
        const auto blocks = object_blocks(s);
        CHECK(blocks.size() == s.present_classes().size());
        std::map<int, int> class_cells;
        for (auto c : s.cells) {
            if (c >= 0) class_cells[c] += 1;
        }
        for (const Block& b : blocks) {
            for (int r = b.row; r < b.row + b.height; ++r) {
                for (int c = b.col; c < b.col + b.width; ++c) {
                    REQUIRE(s.cell(r, c) == b.cls);
                }
            }
            REQUIRE(b.area() == class_cells.at(b.cls));
        }
    }
}

TEST_CASE("gen_popev2 emits a paired, balanced, sound benchmark") {
    const CooccurrenceSpec spec = default_spec();

    SECTION("single eligible scene yields one yes/no pair") {
        std::vector<Scene> pool{gen_scene(spec, 5)};
        // Make sure the pooled scene actually has a maskable target.
        std::uint64_t seed = 5;
        while (true) {
            try {
                std::vector<std::int64_t> freq(static_cast<std::size_t>(spec.class_count()), 0);
                select_target(spec, pool[0], freq);
                break;
            } catch (const GenerationError&) {
                pool[0] = gen_scene(spec, ++seed);
            }
        }
        const GeneratedBenchmark b = gen_popev2(spec, pool, 1, 99);
        REQUIRE(b.items.size() == 2);
        CHECK(b.items[0].label);
        CHECK_FALSE(b.items[1].label);
        CHECK(b.items[0].target == b.items[1].target);
        CHECK(b.items[0].question == b.items[1].question);
        CHECK(b.scenes.size() == 2);
        CHECK(b.scenes[1].id == b.scenes[0].id + "-cf");
    }

    SECTION("500 sampled scenes produce 1000 questions") {
        std::vector<Scene> pool;
        for (int i = 0; i < 1500; ++i) {
            pool.push_back(gen_scene(spec, Rng::mix(808, static_cast<std::uint64_t>(i))));
        }
        const GeneratedBenchmark b = gen_popev2(spec, pool, 500, 11);
        REQUIRE(b.items.size() == 1000);

        long long positives = 0;
        for (const auto& item : b.items) positives += item.label ? 1 : 0;
        CHECK(positives == 500);  // exact label balance

        std::map<std::string, const Scene*> by_id;
        for (const auto& s : b.scenes) by_id[s.id] = &s;
        auto class_id = [&](const std::string& name) {
            for (int c = 0; c < spec.class_count(); ++c) {
                if (spec.class_names[static_cast<std::size_t>(c)] == name) return c;
            }
            FAIL("unknown class " + name);
            return -1;
        };
        for (std::size_t i = 0; i < b.items.size(); i += 2) {
            const auto& yes = b.items[i];
            const auto& no = b.items[i + 1];
            const int cls = class_id(yes.target);
            const Scene& orig = *by_id.at(yes.scene_ref);
            const Scene& cf = *by_id.at(no.scene_ref);
            REQUIRE(orig.contains(cls));
            REQUIRE_FALSE(cf.contains(cls));
            REQUIRE(cf.masked_class == cls);
            // Area rule holds for the selected target's block.
            bool checked = false;
            for (const Block& blk : object_blocks(orig)) {
                if (blk.cls == cls) {
                    CHECK(maskable_area(blk.area(), orig.grid));
                    checked = true;
                }
            }
            CHECK(checked);
        }
    }

    SECTION("regeneration with the same seed is byte-identical") {
        std::vector<Scene> pool;
        for (int i = 0; i < 90; ++i) {
            pool.push_back(gen_scene(spec, Rng::mix(909, static_cast<std::uint64_t>(i))));
        }
        testutil::TempDir dir("bench_bytes");
        const GeneratedBenchmark b1 = gen_popev2(spec, pool, 20, 7);
        const GeneratedBenchmark b2 = gen_popev2(spec, pool, 20, 7);
        write_benchmark_file(b1, spec, 7, dir.str("a.jsonl"));
        write_benchmark_file(b2, spec, 7, dir.str("b.jsonl"));
        CHECK(testutil::read_file(dir.str("a.jsonl")) == testutil::read_file(dir.str("b.jsonl")));
    }

    SECTION("count below one is rejected") {
        std::vector<Scene> pool{gen_scene(spec, 1)};
        CHECK_THROWS_AS(gen_popev2(spec, pool, 0, 1), ConfigError);
    }
}

TEST_CASE("caption grammar covers empty, single and multi-object scenes") {
    const auto names = small_spec(4, 8).class_names;

    Scene s0 = blank_scene(8);
    CHECK(caption_tokens(s0, names) == std::vector<std::string>{"nothing", ".", "<eos>"});

    Scene s1 = blank_scene(8);
    fill_block(s1, 2, 0, 0, 1, 1);
    CHECK(caption_tokens(s1, names) == std::vector<std::string>{"a", "laptop", ".", "<eos>"});

    Scene s2 = s1;
    fill_block(s2, 0, 4, 4, 1, 1);
    CHECK(caption_tokens(s2, names) ==
          std::vector<std::string>{"a", "tv", "and", "a", "laptop", ".", "<eos>"});

    Scene s3 = s2;
    fill_block(s3, 3, 6, 6, 1, 1);
    CHECK(caption_tokens(s3, names) ==
          std::vector<std::string>{"a", "tv", ",", "a", "laptop", "and", "a", "keyboard", ".",
                                   "<eos>"});
}

TEST_CASE("gen_corpus emits hallucination-free captions and consistent QA") {
    const CooccurrenceSpec spec = small_spec(6, 8, 0.45);
    const GeneratedCorpus corpus = gen_corpus(spec, 150, 3, 2024);
    REQUIRE(corpus.captions.size() == 150);
    REQUIRE(corpus.scenes.size() == 150);
    REQUIRE(corpus.qas.size() == 450);

    std::map<std::string, const Scene*> by_id;
    for (const auto& s : corpus.scenes) by_id[s.id] = &s;
    auto class_id = [&](const std::string& name) {
        for (int c = 0; c < spec.class_count(); ++c) {
            if (spec.class_names[static_cast<std::size_t>(c)] == name) return c;
        }
        FAIL("unknown class " + name);
        return -1;
    };

    const Vocabulary vocab(spec.class_names);
    for (const auto& rec : corpus.captions) {
        const Scene& scene = *by_id.at(rec.scene_ref);
        CHECK(rec.caption.back() == "<eos>");
        CHECK(rec.instruction == std::vector<std::string>{"describe", "the", "image"});
        for (const auto& token : rec.caption) {
            const int cls = vocab.class_of_token(vocab.id_of(token));
            if (cls >= 0) CHECK(scene.contains(cls));
        }
    }
    long long yes = 0;
    for (const auto& qa : corpus.qas) {
        const Scene& scene = *by_id.at(qa.scene_ref);
        CHECK(qa.answer == (scene.contains(class_id(qa.target)) ? "yes" : "no"));
        CHECK(qa.question == question_tokens(qa.target));
        if (qa.answer == "yes") ++yes;
    }
    // Alternating present/absent questions skew affirmative.
    CHECK(yes > 450 / 2);
}

TEST_CASE("ground-truth captions score zero on both hallucination rates") {
    const CooccurrenceSpec spec = small_spec(6, 8, 0.3);
    const GeneratedCorpus corpus = gen_corpus(spec, 60, 0, 31);
    const Vocabulary vocab(spec.class_names);

    std::map<std::string, const Scene*> by_id;
    for (const auto& s : corpus.scenes) by_id[s.id] = &s;
    std::vector<InferenceRecord> recs;
    for (const auto& cap : corpus.captions) {
        InferenceRecord r;
        r.scene_ref = cap.scene_ref;
        r.prediction = cap.caption;
        detect_hallucinated(r, *by_id.at(cap.scene_ref), vocab);
        CHECK(r.hallucinated_objects.empty());
        recs.push_back(std::move(r));
    }
    const ChairRates rates = chair_metrics(recs, vocab);
    CHECK(rates.resp_rate == 0.0);
    REQUIRE(rates.mention_rate.has_value());
    CHECK(*rates.mention_rate == 0.0);
    CHECK(rates.counts.mentions_total > 0);
}

TEST_CASE("paper-scale corpus preset keeps the 1:3 caption-to-QA ratio") {
    const GeneratedCorpus corpus = gen_corpus(default_spec(), 12000, 3, 42);
    CHECK(corpus.captions.size() == 12000);
    CHECK(corpus.qas.size() == 36000);
}

TEST_CASE("corpus files round-trip through write and load") {
    const CooccurrenceSpec spec = small_spec(5, 8, 0.3);
    const GeneratedCorpus corpus = gen_corpus(spec, 40, 2, 7);
    testutil::TempDir dir("corpus_rt");

    write_caption_file(corpus, spec, 7, dir.str("cap.jsonl"));
    const CorpusData caps = load_corpus(dir.str("cap.jsonl"));
    REQUIRE(caps.captions.size() == corpus.captions.size());
    CHECK(caps.scenes.size() == corpus.scenes.size());
    CHECK(caps.class_names == spec.class_names);
    CHECK(caps.grid == spec.grid_size);
    for (std::size_t i = 0; i < caps.captions.size(); ++i) {
        CHECK(caps.captions[i].scene_ref == corpus.captions[i].scene_ref);
        CHECK(caps.captions[i].caption == corpus.captions[i].caption);
    }
    for (const auto& s : corpus.scenes) {
        const Scene& loaded = caps.scene(s.id);
        CHECK(loaded.cells == s.cells);
        CHECK(loaded.seed == s.seed);
    }

    write_qa_file(corpus, spec, 7, dir.str("qa.jsonl"));
    const CorpusData qa = load_corpus(dir.str("qa.jsonl"));
    REQUIRE(qa.qas.size() == corpus.qas.size());
    for (std::size_t i = 0; i < qa.qas.size(); ++i) {
        CHECK(qa.qas[i].answer == corpus.qas[i].answer);
        CHECK(qa.qas[i].target == corpus.qas[i].target);
    }

    // Determinism down to bytes.
    write_caption_file(corpus, spec, 7, dir.str("cap2.jsonl"));
    CHECK(testutil::read_file(dir.str("cap.jsonl")) == testutil::read_file(dir.str("cap2.jsonl")));
}

TEST_CASE("load_corpus rejects records referencing unknown scenes") {
    testutil::TempDir dir("corpus_bad");
    const CooccurrenceSpec spec = small_spec(3, 4);
    nlohmann::json header{{"format", "mirage-jsonl"}, {"kind", "captions"},
                          {"classes", spec.class_names}, {"grid", 4}, {"seed", 0}};
    nlohmann::json rec{{"type", "caption"}, {"scene", "missing"},
                       {"instruction", {"describe", "the", "image"}},
                       {"caption", {"nothing", ".", "<eos>"}}};
    testutil::write_file(dir.str("bad.jsonl"), header.dump() + "\n" + rec.dump() + "\n");
    CHECK_THROWS_AS(load_corpus(dir.str("bad.jsonl")), DataError);
}

TEST_CASE("co-occurrence spec serializes, validates and hashes") {
    const CooccurrenceSpec spec = default_spec();
    const CooccurrenceSpec back = CooccurrenceSpec::from_json(spec.to_json());
    CHECK(back.class_names == spec.class_names);
    CHECK(back.grid_size == spec.grid_size);
    CHECK(back.base_rate == spec.base_rate);
    CHECK(back.noise_sigma == spec.noise_sigma);
    CHECK(back.lift == spec.lift);
    CHECK(back.hash() == spec.hash());

    SECTION("asymmetric lift rejected") {
        CooccurrenceSpec bad = small_spec(3, 4);
        bad.lift.at(0, 1) = 2.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
    SECTION("non-unit diagonal rejected") {
        CooccurrenceSpec bad = small_spec(3, 4);
        bad.lift.at(1, 1) = 0.5;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
    SECTION("negative lift rejected") {
        CooccurrenceSpec bad = small_spec(3, 4);
        bad.lift.at(0, 2) = -1.0;
        bad.lift.at(2, 0) = -1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
    SECTION("base rate outside [0,1] rejected") {
        CooccurrenceSpec bad = small_spec(3, 4);
        bad.base_rate = 1.5;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
    SECTION("lift shape mismatch rejected in from_json") {
        nlohmann::json j = small_spec(3, 4).to_json();
        j["lift"] = {{1.0, 1.0}, {1.0, 1.0}};
        CHECK_THROWS_AS(CooccurrenceSpec::from_json(j), ConfigError);
    }
}

TEST_CASE("scene JSON round-trips including the masked marker") {
    const CooccurrenceSpec spec = small_spec(4, 8, 0.4);
    Scene s = gen_scene(spec, 99);
    if (s.present_classes().empty()) {
        fill_block(s, 1, 0, 0, 2, 2);
    }
    const Scene cf = mask_object(s, s.present_classes().front());
    const Scene back = scene_from_json(scene_to_json(cf, spec.class_names), spec.class_names);
    CHECK(back.id == cf.id);
    CHECK(back.cells == cf.cells);
    CHECK(back.seed == cf.seed);
    CHECK(back.masked_class == cf.masked_class);

    nlohmann::json j = scene_to_json(s, spec.class_names);
    j["cells"] = std::vector<int>{0, 0};  // wrong count
    CHECK_THROWS_AS(scene_from_json(j, spec.class_names), DataError);
}
