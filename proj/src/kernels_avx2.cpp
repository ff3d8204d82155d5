// Compiled with -mavx2 (and without FMA); only entered after a runtime CPU check.
#include "otmd/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace otmd::kernels {

#if defined(__AVX2__)

namespace {

constexpr std::size_t kLanes = 4;

void accumulate_rows(std::span<const double> rows, std::size_t row_count, std::span<double> totals) {
    const std::size_t width = totals.size();
    const std::size_t body = width - width % kLanes;
    for (std::size_t k = 0; k < body; k += kLanes) {
        __m256d acc = _mm256_setzero_pd();
        for (std::size_t r = 0; r < row_count; ++r)
            acc = _mm256_add_pd(acc, _mm256_loadu_pd(rows.data() + r * width + k));
        _mm256_storeu_pd(totals.data() + k, acc);
    }
    for (std::size_t k = body; k < width; ++k) {
        double acc = 0.0;
        for (std::size_t r = 0; r < row_count; ++r) acc = acc + rows[r * width + k];
        totals[k] = acc;
    }
}

void demand_supply(std::span<const double> n, std::span<const double> capacity, std::span<const double> jam,
                   std::span<const double> wave_ratio, std::span<double> demand, std::span<double> supply) {
    const std::size_t size = n.size();
    const std::size_t body = size - size % kLanes;
    const __m256d zero = _mm256_setzero_pd();
    for (std::size_t k = 0; k < body; k += kLanes) {
        const __m256d nv = _mm256_loadu_pd(n.data() + k);
        const __m256d cap = _mm256_loadu_pd(capacity.data() + k);
        _mm256_storeu_pd(demand.data() + k, _mm256_min_pd(nv, cap));
        const __m256d room = _mm256_sub_pd(_mm256_loadu_pd(jam.data() + k), nv);
        const __m256d wave = _mm256_mul_pd(_mm256_loadu_pd(wave_ratio.data() + k), room);
        _mm256_storeu_pd(supply.data() + k, _mm256_max_pd(_mm256_min_pd(cap, wave), zero));
    }
    for (std::size_t k = body; k < size; ++k) {
        demand[k] = min_of(n[k], capacity[k]);
        supply[k] = max_of(min_of(capacity[k], wave_ratio[k] * (jam[k] - n[k])), 0.0);
    }
}

void elementwise_min(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    const std::size_t size = out.size();
    const std::size_t body = size - size % kLanes;
    for (std::size_t k = 0; k < body; k += kLanes)
        _mm256_storeu_pd(out.data() + k, _mm256_min_pd(_mm256_loadu_pd(a.data() + k), _mm256_loadu_pd(b.data() + k)));
    for (std::size_t k = body; k < size; ++k) out[k] = min_of(a[k], b[k]);
}

void proportional_share(std::span<const double> part, std::span<const double> total, std::span<const double> flow,
                        std::span<double> out) {
    const std::size_t size = out.size();
    const std::size_t body = size - size % kLanes;
    const __m256d zero = _mm256_setzero_pd();
    for (std::size_t k = 0; k < body; k += kLanes) {
        const __m256d t = _mm256_loadu_pd(total.data() + k);
        const __m256d share = _mm256_mul_pd(_mm256_loadu_pd(flow.data() + k),
                                            _mm256_div_pd(_mm256_loadu_pd(part.data() + k), t));
        // Lanes with total <= 0 hold 0/0 = NaN; the mask zeroes them.
        const __m256d positive = _mm256_cmp_pd(t, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out.data() + k, _mm256_and_pd(share, positive));
    }
    for (std::size_t k = body; k < size; ++k) out[k] = total[k] > 0.0 ? flow[k] * (part[k] / total[k]) : 0.0;
}

double conserve(std::span<double> state, std::span<const double> in, std::span<const double> out) {
    const std::size_t size = state.size();
    const std::size_t body = size - size % kLanes;
    const __m256d zero = _mm256_setzero_pd();
    __m256d lowest = zero;
    for (std::size_t k = 0; k < body; k += kLanes) {
        const __m256d v = _mm256_sub_pd(_mm256_add_pd(_mm256_loadu_pd(state.data() + k), _mm256_loadu_pd(in.data() + k)),
                                        _mm256_loadu_pd(out.data() + k));
        lowest = _mm256_min_pd(lowest, v);
        const __m256d negative = _mm256_cmp_pd(v, zero, _CMP_LT_OQ);
        _mm256_storeu_pd(state.data() + k, _mm256_andnot_pd(negative, v));
    }
    alignas(32) double lanes[kLanes];
    _mm256_store_pd(lanes, lowest);
    double most_negative = 0.0;
    for (double l : lanes) most_negative = min_of(most_negative, l);
    for (std::size_t k = body; k < size; ++k) {
        const double v = (state[k] + in[k]) - out[k];
        most_negative = min_of(most_negative, v);
        state[k] = v < 0.0 ? 0.0 : v;
    }
    return most_negative;
}

}  // namespace

const KernelSet* avx2_kernels() {
    static const KernelSet set{"avx2", accumulate_rows, demand_supply, elementwise_min, proportional_share, conserve};
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") ? &set : nullptr;
}

#else

const KernelSet* avx2_kernels() { return nullptr; }

#endif

}  // namespace otmd::kernels
