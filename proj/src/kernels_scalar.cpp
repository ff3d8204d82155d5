#include <cstdlib>
#include <string_view>

#include "otmd/kernels.hpp"

namespace otmd::kernels {

namespace {

void accumulate_rows(std::span<const double> rows, std::size_t row_count, std::span<double> totals) {
    const std::size_t width = totals.size();
    for (std::size_t k = 0; k < width; ++k) totals[k] = 0.0;
    for (std::size_t r = 0; r < row_count; ++r) {
        const double* row = rows.data() + r * width;
        for (std::size_t k = 0; k < width; ++k) totals[k] = totals[k] + row[k];
    }
}

void demand_supply(std::span<const double> n, std::span<const double> capacity, std::span<const double> jam,
                   std::span<const double> wave_ratio, std::span<double> demand, std::span<double> supply) {
    for (std::size_t k = 0; k < n.size(); ++k) {
        demand[k] = min_of(n[k], capacity[k]);
        supply[k] = max_of(min_of(capacity[k], wave_ratio[k] * (jam[k] - n[k])), 0.0);
    }
}

void elementwise_min(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = min_of(a[k], b[k]);
}

void proportional_share(std::span<const double> part, std::span<const double> total, std::span<const double> flow,
                        std::span<double> out) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = total[k] > 0.0 ? flow[k] * (part[k] / total[k]) : 0.0;
}

double conserve(std::span<double> state, std::span<const double> in, std::span<const double> out) {
    double most_negative = 0.0;
    for (std::size_t k = 0; k < state.size(); ++k) {
        const double v = (state[k] + in[k]) - out[k];
        most_negative = min_of(most_negative, v);
        state[k] = v < 0.0 ? 0.0 : v;
    }
    return most_negative;
}

}  // namespace

const KernelSet& scalar_kernels() {
    static const KernelSet set{"scalar", accumulate_rows, demand_supply, elementwise_min, proportional_share, conserve};
    return set;
}

const KernelSet& active_kernels() {
    static const KernelSet& chosen = [] () -> const KernelSet& {
        const char* env = std::getenv("OTMD_SIMD");
        const std::string_view request = env ? env : "";
        if (request == "scalar") return scalar_kernels();
        if (const KernelSet* avx2 = avx2_kernels()) return *avx2;
        return scalar_kernels();
    }();
    return chosen;
}

}  // namespace otmd::kernels
