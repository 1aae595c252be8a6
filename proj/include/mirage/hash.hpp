#ifndef MIRAGE_HASH_HPP
#define MIRAGE_HASH_HPP

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirage/error.hpp"

namespace mirage {

inline std::array<unsigned char, 32> sha256_raw(const void* data, std::size_t len) {
    std::array<unsigned char, 32> out{};
    unsigned int out_len = 0;
    if (EVP_Digest(data, len, out.data(), &out_len, EVP_sha256(), nullptr) != 1 || out_len != 32) {
        throw std::runtime_error("sha256 digest failed");
    }
    return out;
}

inline std::string to_hex(const unsigned char* bytes, std::size_t n) {
    static const char* digits = "0123456789abcdef";
    std::string s(n * 2, '0');
    for (std::size_t i = 0; i < n; ++i) {
        s[2 * i] = digits[bytes[i] >> 4];
        s[2 * i + 1] = digits[bytes[i] & 0xf];
    }
    return s;
}

inline std::string sha256_hex(const std::string& data) {
    const auto raw = sha256_raw(data.data(), data.size());
    return to_hex(raw.data(), raw.size());
}

inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for hashing: " + path);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(contents);
}

}  // namespace mirage

#endif  // MIRAGE_HASH_HPP
