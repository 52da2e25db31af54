#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace icl {

/// SHA-256 of `data`, as a 64-char lowercase hex string.
inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, data.data(), data.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

/// Joins parts with an unambiguous length prefix before hashing, so that
/// ("ab","c") and ("a","bc") produce different keys.
inline std::string sha256_hex_parts(std::initializer_list<std::string_view> parts) {
    std::string buf;
    for (auto p : parts) {
        buf += std::to_string(p.size());
        buf += ':';
        buf.append(p);
    }
    return sha256_hex(buf);
}

/// FNV-1a 64-bit. Used only to derive per-prompt sub-seeds in the mock
/// backend; cache keys always use SHA-256.
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace icl
