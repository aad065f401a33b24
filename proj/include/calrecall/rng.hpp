#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>

namespace calrecall {

/// Seeded generator with platform-independent derived draws.
///
/// std::mt19937_64's raw output is fixed by the standard, but the standard
/// distributions are not, so bounded integers and reals are derived here by
/// hand. Anything that must reproduce across machines goes through this type.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound)
    {
        // rejection on the top of the range keeps the draw unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % bound;
    }

    /// Uniform real in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    template <typename T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    std::string state() const
    {
        std::ostringstream out;
        out << engine_;
        return out.str();
    }

    void restore(const std::string& state)
    {
        std::istringstream in(state);
        in >> engine_;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

  private:
    std::mt19937_64 engine_;
};

}  // namespace calrecall
