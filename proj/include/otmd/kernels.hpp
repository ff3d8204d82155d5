#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Data-parallel inner loops of the cell update. Every variant must produce
// bit-identical output to the scalar reference for every input: results are
// compared byte-for-byte across runs that may select different variants.
// All operations are elementwise (or fixed-order row accumulations) on
// IEEE-754 doubles with no reassociation and no fused multiply-add.

namespace otmd::kernels {

struct KernelSet {
    std::string_view name;

    /// totals[k] = ((0 + rows[0][k]) + rows[1][k]) + ... ; rows are
    /// row_count consecutive blocks of totals.size() values.
    void (*accumulate_rows)(std::span<const double> rows, std::size_t row_count, std::span<double> totals);

    /// demand[k] = min(n[k], capacity[k])
    /// supply[k] = max(0, min(capacity[k], wave_ratio[k] * (jam[k] - n[k])))
    void (*demand_supply)(std::span<const double> n, std::span<const double> capacity, std::span<const double> jam,
                          std::span<const double> wave_ratio, std::span<double> demand, std::span<double> supply);

    /// out[k] = min(a[k], b[k])
    void (*elementwise_min)(std::span<const double> a, std::span<const double> b, std::span<double> out);

    /// out[k] = total[k] > 0 ? flow[k] * (part[k] / total[k]) : 0
    void (*proportional_share)(std::span<const double> part, std::span<const double> total,
                               std::span<const double> flow, std::span<double> out);

    /// state[k] = (state[k] + in[k]) - out[k], negative results clamped to 0.
    /// Returns the most negative pre-clamp value, or 0 if none was negative.
    double (*conserve)(std::span<double> state, std::span<const double> in, std::span<const double> out);
};

const KernelSet& scalar_kernels();

/// nullptr when the build or the CPU lacks AVX2.
const KernelSet* avx2_kernels();

/// Widest variant the CPU supports, overridable with OTMD_SIMD=scalar|avx2.
const KernelSet& active_kernels();

// Scalar min/max with the operand order of the x86 min/max instructions,
// shared by every variant so tie and signed-zero behaviour agree.
inline double min_of(double a, double b) { return a < b ? a : b; }
inline double max_of(double a, double b) { return a > b ? a : b; }

}  // namespace otmd::kernels
