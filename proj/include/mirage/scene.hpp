#ifndef MIRAGE_SCENE_HPP
#define MIRAGE_SCENE_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/error.hpp"
#include "mirage/hash.hpp"
#include "mirage/matrix.hpp"
#include "mirage/rng.hpp"

namespace mirage {

struct ObjectClass {
    int id = -1;
    std::string name;
};

// Generator recipe for biased scene corpora. `lift` multiplies a class's
// placement probability for every already-placed class it co-occurs with;
// that product is the engineered source of spurious correlation.
struct CooccurrenceSpec {
    std::vector<std::string> class_names;
    int grid_size = 8;
    double base_rate = 0.15;
    Matrix lift;        // C x C, symmetric, unit diagonal
    double noise_sigma = 0.05;

    int class_count() const { return static_cast<int>(class_names.size()); }

    void validate() const {
        const int c = class_count();
        if (c < 1) throw ConfigError("spec needs at least one object class");
        if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
        if (base_rate < 0.0 || base_rate > 1.0) throw ConfigError("base_rate must lie in [0,1]");
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
        if (lift.rows() != static_cast<std::size_t>(c) || lift.cols() != static_cast<std::size_t>(c)) {
            throw ConfigError("lift matrix must be class_count x class_count");
        }
        for (int i = 0; i < c; ++i) {
            if (lift.at(i, i) != 1.0) throw ConfigError("lift diagonal must be 1");
            for (int j = 0; j < c; ++j) {
                if (lift.at(i, j) < 0.0) throw ConfigError("lift entries must be >= 0");
                if (lift.at(i, j) != lift.at(j, i)) throw ConfigError("lift matrix must be symmetric");
            }
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json lift_rows = nlohmann::json::array();
        for (int i = 0; i < class_count(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (int j = 0; j < class_count(); ++j) row.push_back(lift.at(i, j));
            lift_rows.push_back(row);
        }
        return nlohmann::json{{"classes", class_names},
                              {"grid_size", grid_size},
                              {"base_rate", base_rate},
                              {"lift", lift_rows},
                              {"noise_sigma", noise_sigma}};
    }

    static CooccurrenceSpec from_json(const nlohmann::json& j) {
        CooccurrenceSpec spec;
        try {
            spec.class_names = j.at("classes").get<std::vector<std::string>>();
            spec.grid_size = j.at("grid_size").get<int>();
            spec.base_rate = j.at("base_rate").get<double>();
            spec.noise_sigma = j.at("noise_sigma").get<double>();
            const auto& rows = j.at("lift");
            const int c = spec.class_count();
            spec.lift = Matrix(c, c);
            if (static_cast<int>(rows.size()) != c) throw ConfigError("lift row count mismatch");
            for (int i = 0; i < c; ++i) {
                if (static_cast<int>(rows[i].size()) != c) throw ConfigError("lift column count mismatch");
                for (int k = 0; k < c; ++k) spec.lift.at(i, k) = rows[i][k].get<double>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad co-occurrence spec: ") + e.what());
        }
        spec.validate();
        return spec;
    }

    // Canonical content hash (nlohmann dumps object keys sorted).
    std::string hash() const { return sha256_hex(to_json().dump()); }
};

constexpr std::int16_t kEmptyCell = -1;
constexpr std::int16_t kMaskCell = -2;

// Symbolic stand-in for an image: a grid whose cells hold at most one object
// class. Counterfactuals replace one object's block with the MASK cell value.
struct Scene {
    std::string id;
    int grid = 0;
    std::vector<std::int16_t> cells;  // grid*grid, row-major
    std::uint64_t seed = 0;
    std::optional<int> masked_class;

    std::int16_t cell(int r, int c) const { return cells[static_cast<std::size_t>(r) * grid + c]; }
    std::int16_t& cell(int r, int c) { return cells[static_cast<std::size_t>(r) * grid + c]; }

    bool contains(int class_id) const {
        return std::find(cells.begin(), cells.end(), static_cast<std::int16_t>(class_id)) != cells.end();
    }

    std::vector<int> present_classes() const {
        std::vector<int> out;
        for (auto v : cells) {
            if (v >= 0 && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

struct Block {
    int cls = -1;
    int row = 0, col = 0, width = 0, height = 0;
    int area() const { return width * height; }
};

// Recovers each class's rectangular block from the grid. Each class is placed
// at most once per scene, so the bounding box of its cells is the block.
inline std::vector<Block> object_blocks(const Scene& scene) {
    std::vector<Block> blocks;
    std::vector<int> seen;
    for (int r = 0; r < scene.grid; ++r) {
        for (int c = 0; c < scene.grid; ++c) {
            const int cls = scene.cell(r, c);
            if (cls < 0 || std::find(seen.begin(), seen.end(), cls) != seen.end()) continue;
            seen.push_back(cls);
            int r0 = r, r1 = r, c0 = c, c1 = c;
            for (int rr = 0; rr < scene.grid; ++rr) {
                for (int cc = 0; cc < scene.grid; ++cc) {
                    if (scene.cell(rr, cc) == cls) {
                        r0 = std::min(r0, rr); r1 = std::max(r1, rr);
                        c0 = std::min(c0, cc); c1 = std::max(c1, cc);
                    }
                }
            }
            blocks.push_back({cls, r0, c0, c1 - c0 + 1, r1 - r0 + 1});
        }
    }
    return blocks;
}

// Target objects must cover 5%-25% of the grid to be maskable.
inline bool maskable_area(int block_area, int grid) {
    const double frac = static_cast<double>(block_area) / (grid * grid);
    return frac >= 0.05 && frac <= 0.25;
}

namespace detail {
inline std::string scene_id_from_seed(std::uint64_t seed) {
    static const char* digits = "0123456789abcdef";
    std::string s = "s";
    for (int i = 15; i >= 0; --i) s.push_back(digits[(seed >> (4 * i)) & 0xf]);
    return s;
}
}  // namespace detail

// Samples one scene. Classes are visited in id order; the placement
// probability of class c is base_rate scaled by the lift of every class
// already placed, clamped to [0,1]. Blocks are axis-aligned rectangles with
// side lengths 1..4 placed by rejection sampling into empty cells.
inline Scene gen_scene(const CooccurrenceSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int g = spec.grid_size;
    Scene scene;
    scene.id = detail::scene_id_from_seed(seed);
    scene.grid = g;
    scene.cells.assign(static_cast<std::size_t>(g) * g, kEmptyCell);
    scene.seed = seed;

    Rng rng(Rng::mix(stream::kScene, seed));
    std::vector<int> placed;
    const int max_side = std::min(4, g);
    constexpr int kMaxPlacementRetries = 64;

    for (int cls = 0; cls < spec.class_count(); ++cls) {
        double p = spec.base_rate;
        for (int other : placed) p *= spec.lift.at(cls, other);
        p = std::clamp(p, 0.0, 1.0);
        if (!rng.next_bool(p)) continue;

        bool done = false;
        for (int attempt = 0; attempt < kMaxPlacementRetries && !done; ++attempt) {
            const int w = 1 + static_cast<int>(rng.next_below(max_side));
            const int h = 1 + static_cast<int>(rng.next_below(max_side));
            const int row = static_cast<int>(rng.next_below(g - h + 1));
            const int col = static_cast<int>(rng.next_below(g - w + 1));
            bool free = true;
            for (int r = row; r < row + h && free; ++r) {
                for (int c = col; c < col + w; ++c) {
                    if (scene.cell(r, c) != kEmptyCell) { free = false; break; }
                }
            }
            if (!free) continue;
            for (int r = row; r < row + h; ++r) {
                for (int c = col; c < col + w; ++c) scene.cell(r, c) = static_cast<std::int16_t>(cls);
            }
            done = true;
        }
        if (!done) {
            // Rejection sampling can starve on a fragmented grid even when free
            // cells remain; fall back to a unit block in the first empty cell so
            // only a genuinely full grid errors.
            for (auto& cell : scene.cells) {
                if (cell == kEmptyCell) {
                    cell = static_cast<std::int16_t>(cls);
                    done = true;
                    break;
                }
            }
        }
        if (!done) {
            throw GenerationError("could not place class '" + spec.class_names[cls] +
                                  "' after " + std::to_string(kMaxPlacementRetries) +
                                  " attempts (grid too dense)");
        }
        placed.push_back(cls);
    }
    return scene;
}

// Picks the maskable object whose class has the lowest running selection
// count; ties break toward the lowest class id.
inline ObjectClass select_target(const CooccurrenceSpec& spec, const Scene& scene,
                                 const std::vector<std::int64_t>& class_freq) {
    if (static_cast<int>(class_freq.size()) != spec.class_count()) {
        throw ConfigError("class_freq size must equal class count");
    }
    int best = -1;
    std::int64_t best_freq = std::numeric_limits<std::int64_t>::max();
    for (const Block& b : object_blocks(scene)) {
        if (!maskable_area(b.area(), scene.grid)) continue;
        if (class_freq[b.cls] < best_freq || (class_freq[b.cls] == best_freq && b.cls < best)) {
            best = b.cls;
            best_freq = class_freq[b.cls];
        }
    }
    if (best < 0) throw GenerationError("no maskable target in scene " + scene.id);
    return {best, spec.class_names[best]};
}

// Counterfactual construction: the target's block becomes MASK cells (the
// analog of a visible black patch, distinct from empty).
inline Scene mask_object(const Scene& scene, int target_class) {
    if (!scene.contains(target_class)) {
        throw GenerationError("mask target class " + std::to_string(target_class) +
                              " is not present in scene " + scene.id);
    }
    Scene out = scene;
    out.id = scene.id + "-cf";
    out.masked_class = target_class;
    for (auto& c : out.cells) {
        if (c == target_class) c = kMaskCell;
    }
    return out;
}

inline nlohmann::json scene_to_json(const Scene& scene, const std::vector<std::string>& class_names) {
    nlohmann::json j{{"type", "scene"},
                     {"id", scene.id},
                     {"grid", scene.grid},
                     {"seed", scene.seed},
                     {"cells", scene.cells}};
    if (scene.masked_class) {
        j["masked_class"] = class_names.at(static_cast<std::size_t>(*scene.masked_class));
    } else {
        j["masked_class"] = nullptr;
    }
    return j;
}

inline Scene scene_from_json(const nlohmann::json& j, const std::vector<std::string>& class_names) {
    Scene scene;
    try {
        scene.id = j.at("id").get<std::string>();
        scene.grid = j.at("grid").get<int>();
        scene.seed = j.at("seed").get<std::uint64_t>();
        scene.cells = j.at("cells").get<std::vector<std::int16_t>>();
        if (!j.at("masked_class").is_null()) {
            const auto name = j.at("masked_class").get<std::string>();
            const auto it = std::find(class_names.begin(), class_names.end(), name);
            if (it == class_names.end()) throw DataError("unknown masked_class: " + name);
            scene.masked_class = static_cast<int>(it - class_names.begin());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad scene record: ") + e.what());
    }
    if (scene.cells.size() != static_cast<std::size_t>(scene.grid) * scene.grid) {
        throw DataError("scene cell count does not match grid size: " + scene.id);
    }
    return scene;
}

}  // namespace mirage

#endif  // MIRAGE_SCENE_HPP
