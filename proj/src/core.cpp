#include "deepvlf/core.hpp"

#include <cmath>

namespace deepvlf::core {

std::vector<BitGroup> partition_message(const BitMessage& message, int Q, int m) {
    if (Q <= 0 || m <= 0)
        throw ShapeError("partition_message: Q and m must be positive");
    if (message.length() != Q * m)
        throw ShapeError("partition_message: message length " + std::to_string(message.length()) +
                         " != Q*m = " + std::to_string(Q * m));
    std::vector<BitGroup> groups(Q);
    for (int q = 0; q < Q; ++q) {
        groups[q].index = q;
        groups[q].bits.assign(message.bits.begin() + static_cast<size_t>(q) * m,
                              message.bits.begin() + static_cast<size_t>(q + 1) * m);
    }
    return groups;
}

int bits_to_index(std::span<const uint8_t> bits) {
    int idx = 0;
    for (uint8_t b : bits) idx = (idx << 1) | (b & 1);
    return idx;
}

int group_to_index(const BitGroup& group) { return bits_to_index(group.bits); }

Bits index_to_bits(int index, int m) {
    Bits bits(m);
    for (int j = 0; j < m; ++j)
        bits[j] = static_cast<uint8_t>((index >> (m - 1 - j)) & 1);
    return bits;
}

bool threshold_check(std::span<const double> p_q, double gamma) {
    double sum = 0.0, max = 0.0;
    for (double v : p_q) {
        if (v < 0.0 || !std::isfinite(v))
            throw ShapeError("threshold_check: belief entry off the simplex");
        sum += v;
        if (v > max) max = v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ShapeError("threshold_check: belief column sums to " + std::to_string(sum));
    return max >= gamma;
}

DecodeMask update_mask(const DecodeMask& mask, const BeliefMatrix& beliefs, double gamma) {
    DecodeMask out = mask;
    out.round = beliefs.round;
    for (int q = 0; q < beliefs.q_count; ++q) {
        if (!out.m[q]) continue;
        if (threshold_check(beliefs.column(q), gamma)) out.m[q] = 0;
    }
    return out;
}

double compute_code_rate(const StoppingRecord& record, int K) {
    int total = 0;
    for (size_t q = 0; q < record.tau_star.size(); ++q) {
        if (record.tau_star[q] <= 0)
            throw ShapeError("compute_code_rate: tau_star unset for group " + std::to_string(q));
        total += record.tau_star[q];
    }
    if (total == 0) throw ShapeError("compute_code_rate: empty stopping record");
    return static_cast<double>(K) / static_cast<double>(total);
}

}  // namespace deepvlf::core
