#ifndef DRIFTFORGE_COMMON_HPP
#define DRIFTFORGE_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace driftforge {

inline constexpr const char* kVersion = "driftforge 0.1.0";

// Bad or inconsistent configuration supplied by the caller (CLI exit 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CLI exit 3).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse or violated internal invariant (CLI exit 4).
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// 64-bit FNV-1a, used wherever a stable cross-run hash is needed.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

}  // namespace driftforge

#endif  // DRIFTFORGE_COMMON_HPP
