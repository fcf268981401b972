#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace zfn {

// FNV-1a, used for schema hashes and mask provenance.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// 17 significant digits: the CSV round-trips doubles exactly.
std::string format_double(double v);

std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

// Path stem (filename without directory or final extension).
std::string path_stem(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace zfn
