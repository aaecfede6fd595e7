#include "nlosim/common.hpp"

#include <cmath>
#include <cstdio>
#include <thread>

namespace nlosim {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u clamped away from 0 so log stays finite.
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    double v = uniform();
    double r = std::sqrt(-2.0 * std::log(u));
    double a = 2.0 * M_PI * v;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

void parallel_chunks(int n, int threads,
                     const std::function<void(int, int, int)>& fn) {
    if (n <= 0) return;
    int t = threads;
    if (t < 1) t = 1;
    if (t > n) t = n;
    if (t == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t));
    int base = n / t;
    int rem = n % t;
    int begin = 0;
    for (int k = 0; k < t; ++k) {
        int len = base + (k < rem ? 1 : 0);
        int end = begin + len;
        pool.emplace_back([&fn, k, begin, end] { fn(k, begin, end); });
        begin = end;
    }
    for (auto& th : pool) th.join();
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    parallel_chunks(n, threads, [&fn](int, int begin, int end) {
        for (int i = begin; i < end; ++i) fn(i);
    });
}

}  // namespace nlosim
