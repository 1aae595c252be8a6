#ifndef MIRAGE_JSONL_HPP
#define MIRAGE_JSONL_HPP

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mirage/error.hpp"

namespace mirage {

// All corpus/benchmark/unlearn files share one shape: a JSON header line
// followed by one JSON record per line. Writing goes through a string buffer
// so a file is either fully written or absent.
class JsonlWriter {
  public:
    explicit JsonlWriter(nlohmann::json header) { append(std::move(header)); }

    void append(const nlohmann::json& record) {
        buffer_ += record.dump();
        buffer_ += '\n';
        ++lines_;
    }

    std::size_t lines() const { return lines_; }
    const std::string& str() const { return buffer_; }

    void save(const std::string& path) const {
        const std::filesystem::path p(path);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open file for writing: " + path);
        out << buffer_;
        if (!out) throw DataError("failed writing file: " + path);
    }

  private:
    std::string buffer_;
    std::size_t lines_ = 0;
};

struct JsonlFile {
    nlohmann::json header;
    std::vector<std::pair<int, nlohmann::json>> records;  // (1-based line number, record)
};

inline JsonlFile read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    JsonlFile file;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        if (line_no == 1) {
            file.header = std::move(j);
        } else {
            file.records.emplace_back(line_no, std::move(j));
        }
    }
    if (line_no == 0) throw DataError("file is empty (missing header line): " + path);
    return file;
}

}  // namespace mirage

#endif  // MIRAGE_JSONL_HPP
