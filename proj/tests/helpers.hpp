#ifndef MIRAGE_TESTS_HELPERS_HPP
#define MIRAGE_TESTS_HELPERS_HPP

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mirage/matrix.hpp"
#include "mirage/scene.hpp"

namespace testutil {

// Unique scratch directory under the test runner's cwd, removed on scope exit.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name) {
        path = std::filesystem::current_path() / ("tmp_" + name);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str(const std::string& rel = "") const {
        return rel.empty() ? path.string() : (path / rel).string();
    }
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Small uniform-lift spec over the first `classes` default class names.
inline mirage::CooccurrenceSpec small_spec(int classes = 4, int grid = 4, double base_rate = 0.3,
                                           double noise_sigma = 0.0) {
    static const std::vector<std::string> names{"tv",    "remote", "laptop", "keyboard",
                                                "mouse", "monitor", "bed",   "person"};
    mirage::CooccurrenceSpec spec;
    spec.class_names.assign(names.begin(), names.begin() + classes);
    spec.grid_size = grid;
    spec.base_rate = base_rate;
    spec.noise_sigma = noise_sigma;
    spec.lift = mirage::Matrix(static_cast<std::size_t>(classes),
                               static_cast<std::size_t>(classes), 1.0);
    spec.validate();
    return spec;
}

// Hand-built scene: all-empty grid with explicit cell assignments.
inline mirage::Scene blank_scene(int grid, std::uint64_t seed = 1) {
    mirage::Scene s;
    s.id = "tst" + std::to_string(seed);
    s.grid = grid;
    s.seed = seed;
    s.cells.assign(static_cast<std::size_t>(grid) * grid, mirage::kEmptyCell);
    return s;
}

inline void fill_block(mirage::Scene& s, int cls, int row, int col, int h, int w) {
    for (int r = row; r < row + h; ++r) {
        for (int c = col; c < col + w; ++c) s.cell(r, c) = static_cast<std::int16_t>(cls);
    }
}

}  // namespace testutil

#endif  // MIRAGE_TESTS_HELPERS_HPP
