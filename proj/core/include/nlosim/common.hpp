#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlosim {

/// Base error. `error_class()` is the stable machine-parsable tag the CLI
/// prints as `error: <class>: <message>`.
class Error : public std::runtime_error {
public:
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(msg), cls_(std::move(cls)) {}
    const std::string& error_class() const noexcept { return cls_; }

private:
    std::string cls_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};
class ContractError : public Error {
public:
    explicit ContractError(const std::string& m) : Error("contract", m) {}
};
class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};
class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("io", m) {}
};
class IntegrityError : public Error {
public:
    explicit IntegrityError(const std::string& m) : Error("integrity", m) {}
};
class IllConditionedError : public Error {
public:
    explicit IllConditionedError(const std::string& m) : Error("ill-conditioned", m) {}
};
class DataError : public Error {
public:
    explicit DataError(const std::string& m) : Error("data", m) {}
};

/// splitmix64 mix step; used to derive independent stream seeds from a base
/// seed plus indices without correlating the streams.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    return mix64(mix64(mix64(base ^ 0x2545f4914f6cdd1dULL) + a) + mix64(b + 0x632be59bd9b4e019ULL) + c);
}

/// Deterministic RNG. mt19937_64 output is fully specified by the standard;
/// uniform/normal draws below avoid the implementation-defined std
/// distributions so recorded fixtures survive stdlib changes.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0,1) with 53 bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased-enough integer in [0,n); n must be > 0.
    int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

    /// Standard normal via Box-Muller with a cached spare.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Seeded in-place Fisher-Yates; std::shuffle is implementation-defined.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(v[i - 1], v[j]);
    }
}

/// FNV-1a 64-bit over raw bytes. Content addressing and corruption checks,
/// not cryptography.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);
std::string hex64(std::uint64_t v);

/// Runs fn(i) for i in [0,n) split into `threads` fixed contiguous chunks.
/// The partition depends only on (n, threads), so any per-chunk accumulation
/// reduced in chunk order is reproducible across runs.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Same partition, but hands each worker its chunk [begin,end) plus the
/// chunk index, for per-thread accumulators.
void parallel_chunks(int n, int threads,
                     const std::function<void(int chunk, int begin, int end)>& fn);

}  // namespace nlosim
