#ifndef MIRAGE_BENCHMARK_HPP
#define MIRAGE_BENCHMARK_HPP

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "mirage/corpus.hpp"
#include "mirage/rng.hpp"
#include "mirage/scene.hpp"
#include "mirage/vocab.hpp"

namespace mirage {

struct GeneratedBenchmark {
    std::vector<Scene> scenes;        // original + counterfactual, paired in order
    std::vector<BenchmarkItem> items; // exactly two per kept scene pair
    int skipped = 0;                  // scenes with no maskable target
};

// Builds the paired object-existence benchmark from a scene pool (training
// scenes or fresh held-out draws). Each kept scene yields the original (label
// yes) and the counterfactual with the target masked (label no), asked the
// same question. Targets are balanced by selecting the least-frequently-chosen
// eligible class. Returns fewer pairs than requested only if the pool runs out.
inline GeneratedBenchmark gen_popev2(const CooccurrenceSpec& spec, const std::vector<Scene>& pool,
                                     int count, std::uint64_t seed,
                                     std::ostream* log = nullptr) {
    if (count < 1) throw ConfigError("benchmark count must be >= 1");
    spec.validate();

    // Seeded shuffle of the pool order; scenes are then consumed in shuffled
    // order until `count` pairs succeed or the pool runs out.
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(stream::kBench, seed));
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }

    GeneratedBenchmark out;
    std::vector<std::int64_t> class_freq(static_cast<std::size_t>(spec.class_count()), 0);
    int kept = 0;
    for (std::size_t idx : order) {
        if (kept >= count) break;
        const Scene& scene = pool[idx];
        ObjectClass target;
        try {
            target = select_target(spec, scene, class_freq);
        } catch (const GenerationError&) {
            ++out.skipped;
            if (log) *log << "bench: skipping scene " << scene.id << " (no maskable target)\n";
            continue;
        }
        class_freq[static_cast<std::size_t>(target.id)] += 1;
        Scene counterfactual = mask_object(scene, target.id);
        const auto question = question_tokens(target.name);
        out.items.push_back({scene.id, question, true, target.name});
        out.items.push_back({counterfactual.id, question, false, target.name});
        out.scenes.push_back(scene);
        out.scenes.push_back(std::move(counterfactual));
        ++kept;
    }
    return out;
}

inline void write_benchmark_file(const GeneratedBenchmark& bench, const CooccurrenceSpec& spec,
                                 std::uint64_t seed, const std::string& path) {
    JsonlWriter w(detail::file_header("benchmark", spec, seed));
    for (const auto& s : bench.scenes) w.append(scene_to_json(s, spec.class_names));
    for (const auto& item : bench.items) w.append(item_to_json(item));
    w.save(path);
}

}  // namespace mirage

#endif  // MIRAGE_BENCHMARK_HPP
