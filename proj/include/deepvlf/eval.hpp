#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepvlf/codec.hpp"
#include "deepvlf/protocol.hpp"

namespace deepvlf::eval {

struct Ci {
    double low = 0.0, high = 1.0;
};

// Wilson score interval for a binomial proportion (default z: two-sided 95%).
Ci wilson_interval(int64_t successes, int64_t trials, double z = 1.959963984540054);

struct EstimateConfig {
    int n_sessions = 1000;
    uint64_t seed = 1;
    int chunk = 64;   // sessions per forward pass
    int workers = 1;  // chunk results always merge in session order
    protocol::StubMode stub = protocol::StubMode::none;
};

struct Estimate {
    double gamma = 0.0;
    double snr_fwd_db = 0.0;
    double snr_fb_db = 0.0;  // infinity stands for noiseless feedback in reports
    int64_t n_sessions = 0;
    double bler = 0.0;
    Ci bler_ci;
    double group_error_rate = 0.0;
    double avg_code_rate = 0.0;
    double avg_power = 0.0;
    double forced_fraction = 0.0;
    double avg_rounds = 0.0;
    uint64_t seed = 0;
    protocol::Aggregate agg;  // raw counts behind the ratios
};

// Monte-Carlo estimate over fresh sessions. Chunked so memory stays bounded;
// results are independent of the chunk size and worker count because every
// session's randomness is keyed by its absolute index.
Estimate estimate(const codec::CodecParams& params, const protocol::ProtocolConfig& pcfg,
                  int Q, const EstimateConfig& ecfg);

struct SweepConfig {
    std::vector<double> gammas;
    // Checkpoint path per threshold; a "{gamma}" placeholder is replaced by
    // the %g rendering of the threshold. Without a placeholder the same file
    // serves every point.
    std::string checkpoint_pattern;
    EstimateConfig est;
};

struct SweepResult {
    std::vector<Estimate> points;        // in the order the thresholds were given
    std::vector<std::string> warnings;   // skipped points (missing checkpoints)
};

SweepResult sweep(const codec::CodecConfig& ccfg, const protocol::ProtocolConfig& base,
                  int Q, const SweepConfig& scfg);

std::string sweep_checkpoint_path(const std::string& pattern, double gamma);

// Uncoded antipodal signaling over the same forward channel: one bit per
// use, sign decisions, measured error rate next to the closed-form value
// 0.5 * erfc(1 / (sigma * sqrt(2))).
struct UncodedPoint {
    double snr_db = 0.0;
    int64_t bits = 0;
    int64_t errors = 0;
    double ber = 0.0;
    double ber_theory = 0.0;
};

UncodedPoint baseline_uncoded(double snr_db, int64_t n_bits, uint64_t seed);

// CSV with a fixed column set; values render with enough digits that a
// read-back reproduces the doubles exactly. Rows sort by average code rate
// (ties by threshold) so the file plots directly as a rate/reliability curve.
extern const char* const kCsvHeader;
void write_csv(const std::vector<Estimate>& points, const std::string& path);
std::vector<Estimate> read_csv(const std::string& path);

}  // namespace deepvlf::eval
