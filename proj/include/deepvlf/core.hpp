#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepvlf::core {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Bits = std::vector<uint8_t>;  // entries are 0 or 1

// K-bit payload, K = Q*m.
struct BitMessage {
    Bits bits;
    int length() const { return static_cast<int>(bits.size()); }
};

// One of the Q equal m-bit segments of a message.
struct BitGroup {
    Bits bits;
    int index = 0;
};

// Enumeration of the 2^m group patterns, lexicographic with the first bit
// most significant.
struct GroupAlphabet {
    int m = 0;
    int size() const { return 1 << m; }
};

// Per-group probability vectors over the group alphabet, one column per
// group, tagged with the round they were produced in.
struct BeliefMatrix {
    int q_count = 0;
    int alphabet = 0;
    int round = 0;
    std::vector<double> p;  // row-major, q_count rows x alphabet cols

    BeliefMatrix() = default;
    BeliefMatrix(int q, int a, int tau)
        : q_count(q), alphabet(a), round(tau), p(static_cast<size_t>(q) * a, 0.0) {}

    double& at(int q, int a) { return p[static_cast<size_t>(q) * alphabet + a]; }
    double at(int q, int a) const { return p[static_cast<size_t>(q) * alphabet + a]; }
    std::span<const double> column(int q) const {
        return {p.data() + static_cast<size_t>(q) * alphabet, static_cast<size_t>(alphabet)};
    }
};

// Per-group decoding status at the end of a round: 1 = still undecoded.
// Once an entry drops to 0 it stays 0 for the rest of the session.
struct DecodeMask {
    std::vector<uint8_t> m;
    int round = 0;

    bool all_zero() const {
        for (auto v : m)
            if (v) return false;
        return true;
    }
    int active_count() const {
        int n = 0;
        for (auto v : m) n += v;
        return n;
    }
};

// Round at which each group was decoded, plus whether the decision was
// forced at the round cap rather than reached by threshold.
struct StoppingRecord {
    std::vector<int> tau_star;     // 0 = unset
    std::vector<uint8_t> forced;

    StoppingRecord() = default;
    explicit StoppingRecord(int q) : tau_star(q, 0), forced(q, 0) {}

    int total_rounds() const {
        int s = 0;
        for (int t : tau_star) s += t;
        return s;
    }
};

std::vector<BitGroup> partition_message(const BitMessage& message, int Q, int m);

// Lexicographic alphabet index of an m-bit pattern, first bit most significant.
int group_to_index(const BitGroup& group);
int bits_to_index(std::span<const uint8_t> bits);
Bits index_to_bits(int index, int m);

// True iff the max entry of a belief column reaches gamma. Rejects inputs
// off the probability simplex (negative entries or sum away from 1).
bool threshold_check(std::span<const double> p_q, double gamma);

// Drops mask entries whose belief column crossed gamma; already-cleared
// entries stay cleared.
DecodeMask update_mask(const DecodeMask& mask, const BeliefMatrix& beliefs, double gamma);

// Information bits per channel use: K over the summed per-group stopping
// rounds. Every tau_star must be set.
double compute_code_rate(const StoppingRecord& record, int K);

}  // namespace deepvlf::core
