#include "deepvlf/codec.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "deepvlf/rng.hpp"
#include "json.hpp"

namespace deepvlf::codec {

using nlohmann::json;

std::string CodecConfig::digest() const {
    std::ostringstream os;
    os << "m" << m << "_t" << t_max << "_d" << d_latent << "_vd" << tau_vd << "_s"
       << (attn_scale ? 1 : 0) << "_p" << (attn_proj ? 1 : 0);
    return os.str();
}

void CodecConfig::validate() const {
    if (m < 1 || m > 16) throw std::invalid_argument("codec: m must be in [1, 16]");
    if (t_max < 1) throw std::invalid_argument("codec: t_max must be >= 1");
    if (d_latent < 1) throw std::invalid_argument("codec: d_latent must be >= 1");
    if (tau_vd < 0) throw std::invalid_argument("codec: tau_vd must be >= 0");
}

Mat& CodecParams::at(const std::string& name) {
    for (auto& [n, m] : arrays)
        if (n == name) return m;
    throw std::runtime_error("codec: no parameter array named " + name);
}

const Mat& CodecParams::at(const std::string& name) const {
    for (const auto& [n, m] : arrays)
        if (n == name) return m;
    throw std::runtime_error("codec: no parameter array named " + name);
}

bool CodecParams::has(const std::string& name) const {
    for (const auto& [n, m] : arrays)
        if (n == name) return true;
    return false;
}

namespace {

// Canonical array table for a config: name, rows, cols. Checkpoint payloads
// follow this order exactly.
std::vector<std::pair<std::string, std::pair<int, int>>> array_table(const CodecConfig& cfg) {
    const int d = cfg.d_latent;
    std::vector<std::pair<std::string, std::pair<int, int>>> t;
    auto side = [&](const std::string& p, int in, int head_out) {
        t.push_back({p + "_fv_w1", {in, d}});
        t.push_back({p + "_fv_b1", {1, d}});
        t.push_back({p + "_fv_w2", {d, d}});
        t.push_back({p + "_fv_b2", {1, d}});
        t.push_back({p + "_fv_w3", {d, d}});
        t.push_back({p + "_fv_b3", {1, d}});
        t.push_back({p + "_fv_w4", {d, d}});
        t.push_back({p + "_fv_b4", {1, d}});
        t.push_back({p + "_hd_w1", {d, d}});
        t.push_back({p + "_hd_b1", {1, d}});
        t.push_back({p + "_hd_w2", {d, head_out}});
        t.push_back({p + "_hd_b2", {1, head_out}});
        if (cfg.attn_proj) {
            t.push_back({p + "_at_wq", {d, d}});
            t.push_back({p + "_at_wk", {d, d}});
        }
    };
    side("enc", cfg.enc_in(), 1);
    side("dec", cfg.dec_in(), d);
    t.push_back({"dec_cls_w", {d, cfg.alphabet()}});
    t.push_back({"dec_cls_b", {1, cfg.alphabet()}});
    t.push_back({"norm_mean", {cfg.t_max, 1}});
    t.push_back({"norm_var", {cfg.t_max, 1}});
    return t;
}

}  // namespace

CodecParams init_params(const CodecConfig& cfg, uint64_t seed) {
    cfg.validate();
    CodecParams p;
    p.cfg = cfg;
    auto table = array_table(cfg);
    for (size_t idx = 0; idx < table.size(); ++idx) {
        const auto& [name, shape] = table[idx];
        Mat m(shape.first, shape.second);
        if (name == "norm_var") {
            for (double& v : m.a) v = 1.0;
        } else if (CodecParams::learnable(name) && name.find("_b") == std::string::npos) {
            // Weight matrices: uniform in ±sqrt(6/(fan_in+fan_out)).
            double lim = std::sqrt(6.0 / (shape.first + shape.second));
            rng::Stream s(seed, rng::combine(0xC0DECULL, idx));
            for (size_t i = 0; i < m.size(); ++i) m.a[i] = lim * (2.0 * s.uniform(i) - 1.0);
        }
        // Biases and norm_mean stay zero.
        p.arrays.emplace_back(name, std::move(m));
    }
    return p;
}

std::string content_digest(const CodecParams& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto eat = [&](const void* data, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, m] : params.arrays) {
        eat(name.data(), name.size());
        eat(m.a.data(), m.a.size() * sizeof(double));
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

namespace {
constexpr uint32_t kMagic = 0x464C5644;  // "DVLF" little-endian
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const CodecParams& params, const std::string& path) {
    json manifest;
    manifest["format_version"] = kVersion;
    manifest["config"] = {{"m", params.cfg.m},
                          {"t_max", params.cfg.t_max},
                          {"d_latent", params.cfg.d_latent},
                          {"tau_vd", params.cfg.tau_vd},
                          {"attn_scale", params.cfg.attn_scale},
                          {"attn_proj", params.cfg.attn_proj}};
    json arrays = json::array();
    for (const auto& [name, m] : params.arrays)
        arrays.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    manifest["arrays"] = arrays;
    manifest["content_digest"] = content_digest(params);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    std::string mbytes = manifest.dump();
    uint64_t mlen = mbytes.size();
    f.write(reinterpret_cast<const char*>(&kMagic), sizeof kMagic);
    f.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    f.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
    f.write(mbytes.data(), static_cast<std::streamsize>(mlen));
    for (const auto& [name, m] : params.arrays)
        f.write(reinterpret_cast<const char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

CodecParams load_checkpoint(const std::string& path, const CodecConfig& expect) {
    expect.validate();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    uint32_t magic = 0, version = 0;
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&magic), sizeof magic);
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    f.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
    if (!f || magic != kMagic) throw std::runtime_error("checkpoint: bad magic: " + path);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported format version");
    std::string mbytes(mlen, '\0');
    f.read(mbytes.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw std::runtime_error("checkpoint: truncated manifest: " + path);
    json manifest = json::parse(mbytes);

    const json& c = manifest.at("config");
    auto mismatch = [&](const std::string& field) {
        throw std::runtime_error("checkpoint: config mismatch on " + field + " (checkpoint " +
                                 c.dump() + " vs runtime " + expect.digest() + ")");
    };
    if (c.at("m").get<int>() != expect.m) mismatch("m");
    if (c.at("t_max").get<int>() != expect.t_max) mismatch("t_max");
    if (c.at("d_latent").get<int>() != expect.d_latent) mismatch("d_latent");
    if (c.at("tau_vd").get<int>() != expect.tau_vd) mismatch("tau_vd");
    if (c.at("attn_scale").get<bool>() != expect.attn_scale) mismatch("attn_scale");
    if (c.at("attn_proj").get<bool>() != expect.attn_proj) mismatch("attn_proj");

    auto table = array_table(expect);
    const json& arrays = manifest.at("arrays");
    if (arrays.size() != table.size())
        throw std::runtime_error("checkpoint: array count mismatch");

    CodecParams p;
    p.cfg = expect;
    for (size_t i = 0; i < table.size(); ++i) {
        const auto& [name, shape] = table[i];
        const json& a = arrays[i];
        if (a.at("name").get<std::string>() != name ||
            a.at("rows").get<int>() != shape.first || a.at("cols").get<int>() != shape.second)
            throw std::runtime_error("checkpoint: array table mismatch at " + name);
        Mat m(shape.first, shape.second);
        f.read(reinterpret_cast<char*>(m.a.data()),
               static_cast<std::streamsize>(m.a.size() * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: truncated payload at " + name);
        for (double v : m.a)
            if (!std::isfinite(v))
                throw std::runtime_error("checkpoint: non-finite value in " + name);
        if (name == "norm_var")
            for (double v : m.a)
                if (v <= 0.0) throw std::runtime_error("checkpoint: norm_var must be positive");
        p.arrays.emplace_back(name, std::move(m));
    }
    std::string digest = manifest.at("content_digest").get<std::string>();
    if (digest != content_digest(p))
        throw std::runtime_error("checkpoint: content digest mismatch (corrupt payload)");
    return p;
}

ad::Var ParamVars::by_name(const std::string& name) const {
    for (const auto& [n, v] : all)
        if (n == name) return v;
    throw std::runtime_error("codec: no pushed parameter named " + name);
}

ParamVars push_params(ad::Tape& t, const CodecParams& params) {
    ParamVars pv;
    auto grab = [&](const std::string& name) {
        ad::Var v = ad::constant(t, params.at(name));
        pv.all.emplace_back(name, v);
        return v;
    };
    auto side = [&](const std::string& p, SideVars& sv) {
        sv.fv1 = {grab(p + "_fv_w1"), grab(p + "_fv_b1")};
        sv.fv2 = {grab(p + "_fv_w2"), grab(p + "_fv_b2")};
        sv.fv3 = {grab(p + "_fv_w3"), grab(p + "_fv_b3")};
        sv.fv4 = {grab(p + "_fv_w4"), grab(p + "_fv_b4")};
        sv.hd1 = {grab(p + "_hd_w1"), grab(p + "_hd_b1")};
        sv.hd2 = {grab(p + "_hd_w2"), grab(p + "_hd_b2")};
        if (params.cfg.attn_proj) {
            sv.at_wq = grab(p + "_at_wq");
            sv.at_wk = grab(p + "_at_wk");
        }
    };
    side("enc", pv.enc);
    side("dec", pv.dec);
    pv.cls = {grab("dec_cls_w"), grab("dec_cls_b")};
    return pv;
}

ad::Var feature_forward(ad::Tape& t, const SideVars& sv, ad::Var knowledge, int round,
                        const CodecConfig& cfg) {
    ad::Var h = ad::relu(t, ad::add_rowvec(t, ad::matmul(t, knowledge, sv.fv1.w), sv.fv1.b));
    h = ad::relu(t, ad::add_rowvec(t, ad::matmul(t, h, sv.fv2.w), sv.fv2.b));
    ad::Var out3 = ad::add_rowvec(t, ad::matmul(t, h, sv.fv3.w), sv.fv3.b);
    if (round <= cfg.tau_vd) return out3;
    return ad::add_rowvec(t, ad::matmul(t, ad::relu(t, out3), sv.fv4.w), sv.fv4.b);
}

AttnGraph attention_aggregate(ad::Tape& t, const SideVars& sv, ad::Var latents, int block,
                              const CodecConfig& cfg) {
    ad::Var q = latents, k = latents;
    if (cfg.attn_proj) {
        q = ad::matmul(t, latents, sv.at_wq);
        k = ad::matmul(t, latents, sv.at_wk);
    }
    ad::Var scores = ad::bmm_nt(t, q, k, block);
    if (cfg.attn_scale) scores = ad::scale(t, scores, 1.0 / std::sqrt(double(cfg.d_latent)));
    ad::Var rows = ad::row_softmax(t, scores);
    ad::Var agg = ad::bmm_nn(t, rows, latents, block);
    return {rows, agg};
}

ad::Var header_forward(ad::Tape& t, const SideVars& sv, ad::Var aggregated) {
    ad::Var h = ad::gelu(t, ad::add_rowvec(t, ad::matmul(t, aggregated, sv.hd1.w), sv.hd1.b));
    return ad::add_rowvec(t, ad::matmul(t, h, sv.hd2.w), sv.hd2.b);
}

ad::Var classify(ad::Tape& t, const ParamVars& pv, ad::Var features) {
    return ad::row_softmax(t, ad::add_rowvec(t, ad::matmul(t, features, pv.cls.w), pv.cls.b));
}

NormResult normalize_train(ad::Tape& t, ad::Var raw, const Mat& active_mask) {
    double count = 0.0;
    for (double v : active_mask.a) count += v;
    if (count < 1.0) throw std::runtime_error("normalize_train: no active symbols in round");
    ad::Var masked = ad::mul_const(t, raw, active_mask);
    ad::Var mean = ad::sscale(t, ad::ssum(t, masked), 1.0 / count);
    ad::Var centered = ad::sub_sbcast(t, raw, mean);
    ad::Var cm = ad::mul_const(t, centered, active_mask);
    ad::Var var = ad::sscale(t, ad::ssum(t, ad::mul(t, cm, cm)), 1.0 / count);
    ad::Var sd = ad::ssqrt(t, ad::sadd_const(t, var, kNormEps));
    ad::Var x = ad::div_sbcast(t, centered, sd);
    return {x, t.val(mean).a[0], t.val(var).a[0]};
}

ad::Var normalize_eval(ad::Tape& t, ad::Var raw, const CodecParams& params, int round) {
    double mean = params.at("norm_mean")(round - 1, 0);
    double var = params.at("norm_var")(round - 1, 0);
    Mat shift(t.val(raw).rows, t.val(raw).cols, -mean);
    ad::Var centered = ad::add(t, raw, ad::constant(t, shift));
    return ad::scale(t, centered, 1.0 / std::sqrt(var + kNormEps));
}

void update_running_stats(CodecParams& params, int round, double mean, double var,
                          double momentum) {
    Mat& rm = params.at("norm_mean");
    Mat& rv = params.at("norm_var");
    rm(round - 1, 0) = (1.0 - momentum) * rm(round - 1, 0) + momentum * mean;
    rv(round - 1, 0) = (1.0 - momentum) * rv(round - 1, 0) + momentum * var;
}

// --- single-session wrappers ---

Mat assemble_knowledge(Side side, const EncSessionState* enc, const DecSessionState* dec,
                       int round, const CodecConfig& cfg) {
    if (round < 1 || round > cfg.t_max)
        throw std::invalid_argument("assemble_knowledge: round out of [1, t_max]");
    if (side == Side::encoder) {
        const int Q = enc->bits_bipolar.rows;
        Mat k(Q, cfg.enc_in());
        for (int i = 0; i < Q; ++i)
            for (int j = 0; j < cfg.m; ++j) k(i, j) = enc->bits_bipolar(i, j);
        // Slots for rounds 1..round-1; anything later stays zero.
        for (int s = 0; s < round - 1 && s < static_cast<int>(enc->c_cols.size()); ++s)
            for (int i = 0; i < Q; ++i) {
                k(i, cfg.m + 2 * s) = enc->c_cols[s](i, 0);
                k(i, cfg.m + 2 * s + 1) = enc->y_cols[s](i, 0);
            }
        return k;
    }
    const int Q = dec->p_know.rows;
    Mat k(Q, cfg.dec_in());
    for (int s = 0; s < round && s < static_cast<int>(dec->y_cols.size()); ++s)
        for (int i = 0; i < Q; ++i) k(i, s) = dec->y_cols[s](i, 0);
    for (int i = 0; i < Q; ++i)
        for (int a = 0; a < cfg.alphabet(); ++a) k(i, cfg.t_max + a) = dec->p_know(i, a);
    return k;
}

namespace {

const SideVars& side_vars(const ParamVars& pv, Side side) {
    return side == Side::encoder ? pv.enc : pv.dec;
}

}  // namespace

Mat vdfe_forward(const CodecParams& params, const Mat& knowledge, int round, Side side) {
    ad::Tape t;
    t.recording = false;
    ParamVars pv = push_params(t, params);
    ad::Var out =
        feature_forward(t, side_vars(pv, side), ad::constant(t, knowledge), round, params.cfg);
    return t.val(out);
}

AttentionCoeffs attention_coeffs(const CodecParams& params, const Mat& latents,
                                 const core::DecodeMask& mask, Side side) {
    ad::Tape t;
    t.recording = false;
    ParamVars pv = push_params(t, params);
    AttnGraph g = attention_aggregate(t, side_vars(pv, side), ad::constant(t, latents),
                                      latents.rows, params.cfg);
    const Mat& rows = t.val(g.coeff_rows);
    AttentionCoeffs out;
    out.rho = Mat(rows.rows, rows.cols);
    for (int j = 0; j < rows.rows; ++j)
        for (int i = 0; i < rows.cols; ++i) out.rho(i, j) = rows(j, i);
    out.active = mask.m;
    return out;
}

std::vector<double> encode_round(const CodecParams& params, const EncSessionState& state,
                                 const core::DecodeMask& mask, int round) {
    const int Q = state.bits_bipolar.rows;
    Mat knowledge = assemble_knowledge(Side::encoder, &state, nullptr, round, params.cfg);
    ad::Tape t;
    t.recording = false;
    ParamVars pv = push_params(t, params);
    ad::Var lat = feature_forward(t, pv.enc, ad::constant(t, knowledge), round, params.cfg);
    AttnGraph g = attention_aggregate(t, pv.enc, lat, Q, params.cfg);
    ad::Var raw = header_forward(t, pv.enc, g.aggregated);
    ad::Var x = normalize_eval(t, raw, params, round);
    std::vector<double> out;
    for (int i = 0; i < Q; ++i)
        if (mask.m[i]) out.push_back(t.val(x)(i, 0));
    return out;
}

core::BeliefMatrix decode_round(const CodecParams& params, DecSessionState& state,
                                const std::vector<double>& y_active,
                                const core::DecodeMask& mask, int round) {
    const int Q = state.p_know.rows;
    if (static_cast<int>(y_active.size()) != mask.active_count())
        throw core::ShapeError("decode_round: packet length does not match active groups");
    Mat y_col(Q, 1);
    int k = 0;
    for (int i = 0; i < Q; ++i)
        if (mask.m[i]) y_col(i, 0) = y_active[k++];
    if (state.y_cols.size() < static_cast<size_t>(round)) state.y_cols.resize(round, Mat(Q, 1));
    state.y_cols[round - 1] = y_col;

    Mat knowledge = assemble_knowledge(Side::decoder, nullptr, &state, round, params.cfg);
    ad::Tape t;
    t.recording = false;
    ParamVars pv = push_params(t, params);
    ad::Var lat = feature_forward(t, pv.dec, ad::constant(t, knowledge), round, params.cfg);
    AttnGraph g = attention_aggregate(t, pv.dec, lat, Q, params.cfg);
    ad::Var feat = header_forward(t, pv.dec, g.aggregated);
    ad::Var p = classify(t, pv, feat);

    core::BeliefMatrix out(Q, params.cfg.alphabet(), round);
    for (int i = 0; i < Q; ++i)
        for (int a = 0; a < params.cfg.alphabet(); ++a)
            out.at(i, a) = mask.m[i] ? t.val(p)(i, a) : state.p_record(i, a);
    return out;
}

void commit_round(DecSessionState& state, const core::BeliefMatrix& reported,
                  const core::DecodeMask& mask_after) {
    const int Q = state.p_know.rows;
    for (int i = 0; i < Q; ++i)
        for (int a = 0; a < reported.alphabet; ++a) {
            state.p_record(i, a) = reported.at(i, a);
            if (mask_after.m[i]) state.p_know(i, a) = reported.at(i, a);
        }
}

}  // namespace deepvlf::codec
