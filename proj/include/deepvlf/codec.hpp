#pragma once

#include <string>
#include <utility>
#include <vector>

#include "deepvlf/autodiff.hpp"
#include "deepvlf/core.hpp"
#include "deepvlf/tensor.hpp"

namespace deepvlf::codec {

enum class Side { encoder, decoder };

struct CodecConfig {
    int m = 3;
    int t_max = 15;
    int d_latent = 32;
    int tau_vd = 3;          // rounds past this use the deeper feature path
    bool attn_scale = true;  // divide attention scores by sqrt(d_latent)
    bool attn_proj = false;  // learned query/key projections (off: literal inner product)

    int alphabet() const { return 1 << m; }
    // Encoder knowledge layout: m bipolar bit slots, then (parity, feedback)
    // pairs for rounds 1..t_max.
    int enc_in() const { return m + 2 * t_max; }
    // Decoder knowledge layout: received slots for rounds 1..t_max, then the
    // previous round's belief column.
    int dec_in() const { return t_max + alphabet(); }

    // Architecture fingerprint; checkpoints must match it to load.
    std::string digest() const;
    void validate() const;  // throws std::invalid_argument on nonsense
};

// Every named array of the codec: network weights plus the per-round power
// normalizer statistics ("norm_" arrays, not learnable).
struct CodecParams {
    CodecConfig cfg;
    std::vector<std::pair<std::string, Mat>> arrays;  // manifest order

    Mat& at(const std::string& name);
    const Mat& at(const std::string& name) const;
    bool has(const std::string& name) const;
    static bool learnable(const std::string& name) { return name.rfind("norm_", 0) != 0; }
};

CodecParams init_params(const CodecConfig& cfg, uint64_t seed);

// FNV-1a over all payload bytes in manifest order; seed-sensitive.
std::string content_digest(const CodecParams& params);

void save_checkpoint(const CodecParams& params, const std::string& path);
// Verifies the stored architecture fingerprint against `expect` and the
// array table against the expected shape set; rejects mismatches.
CodecParams load_checkpoint(const std::string& path, const CodecConfig& expect);

// Parameter arrays pushed onto a tape as leaf nodes, once per graph.
struct LayerVars {
    ad::Var w, b;
};
struct SideVars {
    LayerVars fv1, fv2, fv3, fv4;  // feature extractor stack (fv4 = deep extension)
    LayerVars hd1, hd2;            // check-node header
    ad::Var at_wq, at_wk;          // only when attn_proj
};
struct ParamVars {
    SideVars enc, dec;
    LayerVars cls;                                   // decoder classification layer
    std::vector<std::pair<std::string, ad::Var>> all;  // manifest order, learnable only
    ad::Var by_name(const std::string& name) const;
};
ParamVars push_params(ad::Tape& t, const CodecParams& params);

// --- graph builders (shared by training, evaluation and the test wrappers) ---

// Variable-depth feature extractor: three rectified fully-connected layers,
// with a fourth appended once the round passes tau_vd.
ad::Var feature_forward(ad::Tape& t, const SideVars& sv, ad::Var knowledge, int round,
                        const CodecConfig& cfg);

// Inner-product attention over the Q variable nodes of each stacked block:
// scores via per-block L·Lᵀ (optional projections/scaling), normalized over
// the contributing nodes, then aggregated back against the latents. No node
// is excluded: frozen groups keep contributing as inputs.
struct AttnGraph {
    ad::Var coeff_rows;  // stacked Q x Q per block; row j = weights over nodes i
    ad::Var aggregated;  // same shape as latents
};
AttnGraph attention_aggregate(ad::Tape& t, const SideVars& sv, ad::Var latents, int block,
                              const CodecConfig& cfg);

// Two-layer header, hidden GeLU: encoder side ends in one parity scalar per
// node, decoder side in a d_latent feature fed to the classifier.
ad::Var header_forward(ad::Tape& t, const SideVars& sv, ad::Var aggregated);

ad::Var classify(ad::Tape& t, const ParamVars& pv, ad::Var features);  // softmax over 2^m

// Power normalization of raw parity symbols. Training uses the batch
// statistics of the active symbols in this round (differentiable); inference
// uses the stored running statistics for the round.
struct NormResult {
    ad::Var x;          // normalized symbols (not yet mask-gated)
    double batch_mean;  // statistics actually used (training mode)
    double batch_var;
};
NormResult normalize_train(ad::Tape& t, ad::Var raw, const Mat& active_mask);
ad::Var normalize_eval(ad::Tape& t, ad::Var raw, const CodecParams& params, int round);
// Fold a round's batch statistics into the running statistics.
void update_running_stats(CodecParams& params, int round, double mean, double var,
                          double momentum = 0.1);

inline constexpr double kNormEps = 1e-8;

// --- single-session wrappers (inference statistics, no gradients) ---
// These mirror one protocol round on explicit state; unit tests drive them
// directly and consistency tests pin them to the batched transcripts.

struct EncSessionState {
    Mat bits_bipolar;         // Q x m, entries ±1
    std::vector<Mat> c_cols;  // per past round: Q x 1 parity, zero where frozen
    std::vector<Mat> y_cols;  // per past round: Q x 1 fed-back symbols, gated alike
};
struct DecSessionState {
    std::vector<Mat> y_cols;  // per past round: Q x 1 received, zero where inactive
    Mat p_know;    // Q x 2^m belief slots of the knowledge vector (frozen rows retained)
    Mat p_record;  // Q x 2^m reported beliefs; frozen rows keep their decode-round belief
};

Mat assemble_knowledge(Side side, const EncSessionState* enc, const DecSessionState* dec,
                       int round, const CodecConfig& cfg);

Mat vdfe_forward(const CodecParams& params, const Mat& knowledge, int round, Side side);

struct AttentionCoeffs {
    Mat rho;                      // Q x Q, rho(i, j): weight of node i in check j
    std::vector<uint8_t> active;  // per check column; inactive columns emit nothing
};
AttentionCoeffs attention_coeffs(const CodecParams& params, const Mat& latents,
                                 const core::DecodeMask& mask, Side side);

// One encoder round: returns the normalized parity symbols of the active
// groups, in group order.
std::vector<double> encode_round(const CodecParams& params, const EncSessionState& state,
                                 const core::DecodeMask& mask, int round);

// One decoder round: scatters the active groups' received symbols into slot
// `round`, runs the mirrored graph, and keeps frozen rows' beliefs unchanged.
core::BeliefMatrix decode_round(const CodecParams& params, DecSessionState& state,
                                const std::vector<double>& y_active,
                                const core::DecodeMask& mask, int round);

// Folds a round's reported beliefs back into the state: recorded beliefs take
// the fresh values of the rows active before the threshold update; knowledge
// belief slots take only the rows still active afterwards.
void commit_round(DecSessionState& state, const core::BeliefMatrix& reported,
                  const core::DecodeMask& mask_after);

}  // namespace deepvlf::codec
