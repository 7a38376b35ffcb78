#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepvlf/channel.hpp"
#include "deepvlf/codec.hpp"
#include "deepvlf/core.hpp"

namespace deepvlf::protocol {

// Earliest round at which decoding attempts are allowed: the max of a
// threshold-dependent floor and the Shannon-limit round count for m bits at
// the configured SNR.
int compute_tau_plus(int m, double forward_snr_db, double gamma);

struct ProtocolConfig {
    double gamma = 1.0 - 1e-5;
    int tau_plus = 0;  // 0 = derive from (m, snr, gamma)
    channel::ChannelParams ch;

    int effective_tau_plus(int m) const {
        return tau_plus > 0 ? tau_plus : compute_tau_plus(m, ch.forward_snr_db, gamma);
    }
};

// Self-test codecs that bypass the networks: `oracle` reports one-hot truth
// beliefs from the first round, `adversarial` reports uniform beliefs
// forever. Both emit zero symbols for every active group.
enum class StubMode { none, oracle, adversarial };

struct SessionOutcome {
    core::StoppingRecord stopping;
    core::Bits decoded;      // K bits
    bool block_error = false;
    int group_errors = 0;
    int symbols_sent = 0;    // equals the summed stopping rounds
    double sum_x2 = 0.0;     // over transmitted symbols only
};

struct RoundRecord {
    int round = 0;
    std::vector<double> x, y, y_fb;          // length Q; zero where inactive
    std::vector<uint8_t> mask_before, mask_after;
    core::BeliefMatrix beliefs;              // frozen rows keep their decode belief
    Mat enc_knowledge, dec_knowledge;        // only when knowledge recording is on
};

struct SessionTranscript {
    uint64_t master_seed = 0;
    uint64_t session_index = 0;
    double gamma = 0.0;
    double snr_fwd_db = 0.0;
    int feedback_awgn = 0;
    double snr_fb_db = 0.0;
    int forward_noiseless = 0;
    int K = 0, Q = 0, m = 0, t_max = 0, tau_plus = 0;
    int stub = 0;  // StubMode the session ran with
    core::Bits message;
    std::vector<RoundRecord> rounds;
    SessionOutcome outcome;
    double rate = 0.0;
};

// Per-round training hook: log of the belief mass on the true pattern, one
// row per (session, group).
struct RoundLossHook {
    int round = 0;
    ad::Var logp_true;
};

struct BatchSpec {
    int n_sessions = 1;
    uint64_t master_seed = 0;
    uint64_t first_session_index = 0;  // global index of the first session
    StubMode stub = StubMode::none;
    bool train_mode = false;       // batch-statistic normalization + loss hooks
    bool want_transcripts = false;
    bool record_knowledge = false;  // store per-round knowledge matrices
    const std::vector<core::Bits>* messages = nullptr;  // optional override
    // Per-round mask-after schedule (entry t-1 = round t, n_sessions*Q rows
    // each). When set, threshold and round-cap decisions are bypassed and the
    // schedule is applied verbatim, freezing the control flow so the loss is
    // a smooth function of the parameters. Gradient checks only.
    const std::vector<std::vector<uint8_t>>* forced_masks = nullptr;
};

struct RoundStats {
    int round = 0;
    double mean = 0.0, var = 0.0;  // batch statistics of the raw parity symbols
};

struct BatchResult {
    std::vector<SessionOutcome> outcomes;
    std::vector<SessionTranscript> transcripts;  // when requested
    std::vector<RoundLossHook> loss_hooks;       // train mode
    std::vector<RoundStats> round_stats;         // train mode
    codec::ParamVars pv;                         // leaves pushed for this batch
};

// Runs n sessions of the full multi-round protocol on one tape, row-blocked
// Q rows per session. Training mode keeps the graph differentiable through
// parity symbols, fed-back symbols, beliefs, and the power normalizer.
BatchResult run_batch(ad::Tape& tape, const codec::CodecParams& params,
                      const ProtocolConfig& pcfg, int Q, const BatchSpec& spec);

// One session, inference statistics, full transcript.
SessionTranscript run_session(const core::BitMessage& message, const ProtocolConfig& pcfg,
                              const codec::CodecParams& params, int Q, uint64_t master_seed,
                              uint64_t session_index, StubMode stub = StubMode::none);

struct ReplayReport {
    bool pass = false;
    int first_diff_round = 0;  // 0 = header/summary level
    std::string field;
};

// Re-executes the transcript's session from its recorded seeds and compares
// every field bit-exactly.
ReplayReport replay_verify(const SessionTranscript& transcript,
                           const codec::CodecParams& params);

std::string transcript_to_json(const SessionTranscript& t);
SessionTranscript transcript_from_json(const std::string& line);
void write_transcripts(const std::vector<SessionTranscript>& ts, const std::string& path);
std::vector<SessionTranscript> read_transcripts(const std::string& path);

// Count-based aggregation shared by evaluation and training-time validation.
struct Aggregate {
    int64_t n_sessions = 0;
    int64_t block_errors = 0;
    int64_t group_errors = 0;
    int64_t groups = 0;
    int64_t forced = 0;
    int64_t symbols = 0;
    double sum_x2 = 0.0;

    void add(const SessionOutcome& o, int Q);
    void merge(const Aggregate& other);
    double bler() const { return n_sessions ? double(block_errors) / n_sessions : 0.0; }
    double group_error_rate() const { return groups ? double(group_errors) / groups : 0.0; }
    double forced_fraction() const { return groups ? double(forced) / groups : 0.0; }
    double avg_rate(int K) const { return symbols ? double(K) * n_sessions / symbols : 0.0; }
    double avg_power() const { return symbols ? sum_x2 / symbols : 0.0; }
    double avg_rounds() const { return n_sessions ? double(symbols) / n_sessions : 0.0; }
};

}  // namespace deepvlf::protocol
