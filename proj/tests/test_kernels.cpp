#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "otmd/kernels.hpp"

using namespace otmd::kernels;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

// Mix of ordinary magnitudes, exact ties, zeros of both signs and subnormals,
// the values where a careless vector variant diverges from the scalar one.
std::vector<double> values(std::mt19937_64& rng, std::size_t n, bool allow_negative) {
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<double> v(n);
    for (auto& x : v) {
        switch (rng() % 8) {
            case 0: x = 0.0; break;
            case 1: x = allow_negative ? -0.0 : 0.0; break;
            case 2: x = 5.0; break;
            case 3: x = std::numeric_limits<double>::denorm_min() * static_cast<double>(rng() % 100); break;
            case 4: x = allow_negative ? -u(rng) * 1e-13 : u(rng) * 1e-13; break;
            default: x = u(rng);
        }
    }
    return v;
}

const KernelSet* vector_variant() { return avx2_kernels(); }

}  // namespace

TEST_CASE("active kernels honour OTMD_SIMD") {
    CHECK(scalar_kernels().name == "scalar");
    const auto& active = active_kernels();
    CHECK((active.name == "scalar" || active.name == "avx2"));
}

TEST_CASE("AVX2 kernels are bitwise equal to the scalar reference") {
    const KernelSet* v = vector_variant();
    if (!v) {
        MESSAGE("AVX2 not available on this CPU; equivalence not exercised");
        return;
    }
    const KernelSet& s = scalar_kernels();
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t n = rng() % 70;  // covers empty, tails and several full vectors
        CAPTURE(n);

        const std::size_t rows = 1 + rng() % 5;
        const auto block = values(rng, n * rows, false);
        std::vector<double> t1(n), t2(n);
        s.accumulate_rows(block, rows, t1);
        v->accumulate_rows(block, rows, t2);
        CHECK(same_bits(t1, t2));

        const auto cnt = values(rng, n, false), cap = values(rng, n, false), jam = values(rng, n, false),
                   ratio = values(rng, n, false);
        std::vector<double> d1(n), s1(n), d2(n), s2(n);
        s.demand_supply(cnt, cap, jam, ratio, d1, s1);
        v->demand_supply(cnt, cap, jam, ratio, d2, s2);
        CHECK(same_bits(d1, d2));
        CHECK(same_bits(s1, s2));

        const auto a = values(rng, n, true), b = values(rng, n, true);
        std::vector<double> m1(n), m2(n);
        s.elementwise_min(a, b, m1);
        v->elementwise_min(a, b, m2);
        CHECK(same_bits(m1, m2));

        const auto part = values(rng, n, false), total = values(rng, n, false), flow = values(rng, n, false);
        std::vector<double> p1(n), p2(n);
        s.proportional_share(part, total, flow, p1);
        v->proportional_share(part, total, flow, p2);
        CHECK(same_bits(p1, p2));

        auto st1 = values(rng, n, false);
        auto st2 = st1;
        const auto in = values(rng, n, false), out = values(rng, n, false);
        const double low1 = s.conserve(st1, in, out);
        const double low2 = v->conserve(st2, in, out);
        CHECK(same_bits(st1, st2));
        CHECK(std::bit_cast<std::uint64_t>(low1) == std::bit_cast<std::uint64_t>(low2));
    }
}

TEST_CASE("scalar reference semantics") {
    const KernelSet& s = scalar_kernels();
    std::vector<double> n{0, 3, 10, 0.6}, cap{5, 5, 5, 5}, jam{40, 40, 40, 0.6}, ratio{0.5, 0.5, 0.5, 0.5};
    std::vector<double> d(4), sup(4);
    s.demand_supply(n, cap, jam, ratio, d, sup);
    CHECK(d == std::vector<double>{0, 3, 5, 0.6});
    CHECK(sup == std::vector<double>{5, 5, 5, 0});

    std::vector<double> share(3);
    s.proportional_share(std::vector<double>{6, 4, 1}, std::vector<double>{10, 10, 0}, std::vector<double>{5, 5, 5}, share);
    CHECK(share == std::vector<double>{3, 2, 0});

    std::vector<double> state{1, 2, 1};
    const double low = s.conserve(state, std::vector<double>{0, 1, 0}, std::vector<double>{0.5, 0, 1.5});
    CHECK(state == std::vector<double>{0.5, 3, 0});
    CHECK(low == -0.5);
}
