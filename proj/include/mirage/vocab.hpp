#ifndef MIRAGE_VOCAB_HPP
#define MIRAGE_VOCAB_HPP

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mirage/error.hpp"

namespace mirage {

// Fixed special tokens; object-class name tokens follow them. The layout is a
// pure function of the class-name list, so any file that records the class
// names pins the whole vocabulary.
namespace tok {
inline const std::string kEos = "<eos>";
inline const std::string kMaskName = "masked";
inline const std::string kYes = "yes";
inline const std::string kNo = "no";
inline const std::string kDet = "a";
inline const std::string kComma = ",";
inline const std::string kAnd = "and";
inline const std::string kPeriod = ".";
inline const std::string kNothing = "nothing";
inline const std::string kIs = "is";
inline const std::string kThere = "there";
inline const std::string kIn = "in";
inline const std::string kThe = "the";
inline const std::string kImage = "image";
inline const std::string kQmark = "?";
inline const std::string kDescribe = "describe";
}  // namespace tok

class Vocabulary {
  public:
    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> class_names)
        : class_names_(std::move(class_names)) {
        tokens_ = {tok::kEos,  tok::kMaskName, tok::kYes,   tok::kNo,    tok::kDet,   tok::kComma,
                   tok::kAnd,  tok::kPeriod,   tok::kNothing, tok::kIs,  tok::kThere, tok::kIn,
                   tok::kThe,  tok::kImage,    tok::kQmark, tok::kDescribe};
        class_base_ = static_cast<int>(tokens_.size());
        std::unordered_set<std::string> seen(tokens_.begin(), tokens_.end());
        for (const auto& name : class_names_) {
            if (name.empty()) throw ConfigError("empty object class name");
            if (!seen.insert(name).second) {
                throw ConfigError("object class name clashes with an existing token: " + name);
            }
            tokens_.push_back(name);
        }
        for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) ids_[tokens_[i]] = i;
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int class_count() const { return static_cast<int>(class_names_.size()); }
    const std::vector<std::string>& class_names() const { return class_names_; }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end()) throw DataError("token not in vocabulary: '" + token + "'");
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
        return tokens_[id];
    }

    int class_token(int class_id) const {
        if (class_id < 0 || class_id >= class_count()) {
            throw DataError("class id out of range: " + std::to_string(class_id));
        }
        return class_base_ + class_id;
    }

    // -1 when the token is not an object-class name.
    int class_of_token(int token_id) const {
        const int c = token_id - class_base_;
        return (c >= 0 && c < class_count()) ? c : -1;
    }

    int eos() const { return id_of(tok::kEos); }
    int yes() const { return id_of(tok::kYes); }
    int no() const { return id_of(tok::kNo); }

    std::vector<int> encode(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(token(id));
        return out;
    }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

  private:
    std::vector<std::string> class_names_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int class_base_ = 0;
};

// "is there a <object> in the image ?"
inline std::vector<std::string> question_tokens(const std::string& class_name) {
    return {tok::kIs, tok::kThere, tok::kDet, class_name, tok::kIn, tok::kThe, tok::kImage, tok::kQmark};
}

// "describe the image"
inline std::vector<std::string> caption_instruction_tokens() {
    return {tok::kDescribe, tok::kThe, tok::kImage};
}

}  // namespace mirage

#endif  // MIRAGE_VOCAB_HPP
