#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gcoop {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Every failure mode the library can report. The CLI maps these onto the
// process exit codes (2 usage/config, 3 data, 4 numerical).
enum class ErrorCode {
    BadUsage,
    ConfigInvalid,
    DimensionMismatch,
    ZeroVector,
    IndexOutOfRange,
    NonFiniteEvaluation,
    EmptyText,
    EmptySequence,
    EmptyGroup,
    NonFiniteLoss,
    InsufficientGroupSamples,
    SingleAttribute,
    EmptySet,
    UnsupportedAttrCount,
    DimensionTooSmall,
    BadMagic,
    UnsupportedVersion,
    TruncatedFile,
    CountMismatch,
    UnknownAttributes,
    MissingGroupLabels,
    MissingTemplates,
    MissingLabels,
    IoError,
    GradientCheckFailed,
};

const char* error_name(ErrorCode code);

// Exit-code class for the CLI: 2 = usage/config, 3 = data, 4 = numerical.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(error_name(code)) + ": " + msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

// FNV-1a over the bytes of `s`, with an optional seed folded into the offset
// basis. Stable across platforms; used for OOV token bucketing and config
// digests.
uint64_t fnv1a64(std::string_view s, uint64_t seed = 0);

// Stable named sub-stream seed (e.g. derive_seed(seed, "token_table")).
inline uint64_t derive_seed(uint64_t base, std::string_view tag) { return fnv1a64(tag, base); }

// Deterministic PRNG. mt19937_64 is fully specified by the standard and the
// distributions below are hand-rolled, so a seed pins the whole stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, second draw cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    // Uniform index in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) {
        auto idx = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return idx < n ? idx : n - 1;
    }

private:
    std::mt19937_64 gen_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace gcoop
