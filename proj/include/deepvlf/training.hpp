#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepvlf/codec.hpp"
#include "deepvlf/core.hpp"
#include "deepvlf/protocol.hpp"

namespace deepvlf::training {

struct LossConfig {
    enum class Variant { single, equal_weight, exp_weight };
    Variant variant = Variant::exp_weight;
    double vartheta = 10.0;  // exponential base
    double epsilon = 9.0;    // exponent offset
    int tau_plus = 1;        // first round that contributes (exp variant)
};

inline constexpr double kLogClamp = 1e-12;

// Per-session losses over a recorded belief history (entry t-1 = round t).
// Each sums -w(t) * log p_true over the group's counted rounds, with the
// belief at the true pattern clamped at kLogClamp before the log.
double loss_exp_weight(const std::vector<core::BeliefMatrix>& history,
                       const std::vector<core::BitGroup>& truth,
                       const core::StoppingRecord& record, const LossConfig& cfg);
double loss_equal_weight(const std::vector<core::BeliefMatrix>& history,
                         const std::vector<core::BitGroup>& truth,
                         const core::StoppingRecord& record);
double loss_single(const std::vector<core::BeliefMatrix>& history,
                   const std::vector<core::BitGroup>& truth,
                   const core::StoppingRecord& record);

// Batched counterpart assembled from a training run's per-round hooks; the
// per-(session, group, round) weights realize the same variable-length sums.
// Returns scale/B times the summed per-session loss.
ad::Var batched_loss(ad::Tape& tape, const protocol::BatchResult& run, const LossConfig& cfg,
                     int Q, double scale = 1.0);

struct TrainConfig {
    int batch = 256;
    double lr = 1e-3;
    double weight_decay = 1e-3;
    std::vector<double> gamma_grid = {1 - 1e-3, 1 - 1e-4, 1 - 1e-5, 1 - 1e-6, 1 - 1e-7};
    double gamma_target = 1 - 1e-5;
    int pretrain_steps = 500;
    int finetune_steps = 500;
    bool phase_pretrain = true;
    bool phase_finetune = true;
    uint64_t seed = 1;
    LossConfig loss;
    int val_every = 50;
    int val_sessions = 200;
    std::string checkpoint_path;   // best-so-far checkpoint (empty = none)
    std::string metrics_path;      // JSONL metrics log (empty = none)
};

// Decoupled-weight-decay Adam over the learnable codec arrays.
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(codec::CodecParams& params,
              const std::vector<std::pair<std::string, const Mat*>>& grads, double lr,
              double weight_decay);

  private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::pair<std::string, Mat>> m_, v_;
    Mat& slot(std::vector<std::pair<std::string, Mat>>& store, const std::string& name,
              const Mat& like);
};

// Cosine decay from lr0 at step 0 to 0.01*lr0 at step total-1.
double cosine_lr(double lr0, int step, int total);

struct ValMetrics {
    double bler = 0.0, group_error_rate = 0.0, avg_rate = 0.0, avg_power = 0.0,
           forced_fraction = 0.0, avg_rounds = 0.0;
    int64_t sessions = 0;
};

ValMetrics validate(const codec::CodecParams& params, const protocol::ProtocolConfig& pcfg,
                    int Q, int n_sessions, uint64_t seed);

struct TrainReport {
    codec::CodecParams params;  // state at the end of the run
    bool diverged = false;
    int steps_run = 0;
    bool best_saved = false;
    ValMetrics best;
    double first_loss = 0.0, last_loss = 0.0;
};

TrainReport train(const TrainConfig& tcfg, const protocol::ProtocolConfig& base_pcfg, int Q,
                  const codec::CodecConfig& ccfg);

// Finite-difference check of the end-to-end analytic gradients on a tiny
// configuration, with the round masks frozen to the base run's schedule so
// the compared function is smooth.
struct GradCheckReport {
    int n_coords = 0;
    double max_rel = 0.0;
    double p95_rel = 0.0;
    double scale_linearity = 0.0;  // max |g(2x loss) - 2 g(loss)|
    double zero_grad_max = 0.0;    // max |g| when the loss is scaled by 0
    bool pass = false;
};

GradCheckReport grad_check(uint64_t seed, double tol_p95 = 1e-4, double tol_max = 1e-3,
                           double fd_step = 1e-5);

}  // namespace deepvlf::training
