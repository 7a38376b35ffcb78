#include "deepvlf/protocol.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "deepvlf/rng.hpp"
#include "json.hpp"

namespace deepvlf::protocol {

using nlohmann::json;

int compute_tau_plus(int m, double forward_snr_db, double gamma) {
    if (m <= 0) throw std::invalid_argument("compute_tau_plus: m must be positive");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("compute_tau_plus: gamma must be in (0,1)");
    // Threshold-dependent floor; boundary compares get an ulp-scale slack so
    // thresholds parsed from text (e.g. "0.99999") land on the intended tier.
    const double tol = 1e-12;
    int mu;
    if (gamma <= 1.0 - 1e-5 + tol)
        mu = 5;
    else if (gamma <= 1.0 - 1e-6 + tol)
        mu = 6;
    else
        mu = 7;
    double eta = std::pow(10.0, forward_snr_db / 10.0);
    int shannon = static_cast<int>(std::floor(2.0 * m / std::log2(1.0 + eta) + 1e-9));
    return std::max(mu, shannon);
}

void Aggregate::add(const SessionOutcome& o, int Q) {
    n_sessions += 1;
    block_errors += o.block_error ? 1 : 0;
    group_errors += o.group_errors;
    groups += Q;
    for (auto f : o.stopping.forced) forced += f ? 1 : 0;
    symbols += o.symbols_sent;
    sum_x2 += o.sum_x2;
}

void Aggregate::merge(const Aggregate& other) {
    n_sessions += other.n_sessions;
    block_errors += other.block_errors;
    group_errors += other.group_errors;
    groups += other.groups;
    forced += other.forced;
    symbols += other.symbols;
    sum_x2 += other.sum_x2;
}

namespace {

int argmax_lowest(const double* p, int n) {
    int best = 0;
    for (int a = 1; a < n; ++a)
        if (p[a] > p[best]) best = a;
    return best;
}

Mat col_from_mask(const std::vector<uint8_t>& mask) {
    Mat c(static_cast<int>(mask.size()), 1);
    for (size_t i = 0; i < mask.size(); ++i) c.a[i] = mask[i] ? 1.0 : 0.0;
    return c;
}

}  // namespace

BatchResult run_batch(ad::Tape& tape, const codec::CodecParams& params,
                      const ProtocolConfig& pcfg, int Q, const BatchSpec& spec) {
    const codec::CodecConfig& ccfg = params.cfg;
    ccfg.validate();
    if (Q < 1) throw std::invalid_argument("run_batch: Q must be >= 1");
    if (spec.n_sessions < 1) throw std::invalid_argument("run_batch: need at least one session");
    if (!(pcfg.gamma > 0.0 && pcfg.gamma < 1.0))
        throw std::invalid_argument("run_batch: gamma must be in (0,1)");
    const bool neural = spec.stub == StubMode::none;
    if (spec.train_mode && !neural)
        throw std::invalid_argument("run_batch: stub codecs cannot be trained");

    const int B = spec.n_sessions;
    const int m = ccfg.m, A = ccfg.alphabet(), K = Q * m, t_max = ccfg.t_max;
    const int N = B * Q;
    const int tau_plus = pcfg.effective_tau_plus(m);
    if (tau_plus < 1 || tau_plus > t_max)
        throw std::invalid_argument("run_batch: tau_plus out of [1, t_max]");

    // Messages: explicit override or drawn per session from its own stream.
    std::vector<core::Bits> msgs(B);
    for (int s = 0; s < B; ++s) {
        uint64_t sess = spec.first_session_index + s;
        if (spec.messages) {
            msgs[s] = (*spec.messages)[s];
            if (static_cast<int>(msgs[s].size()) != K)
                throw core::ShapeError("run_batch: message length != Q*m");
        } else {
            rng::Stream ms(spec.master_seed, rng::session_stream_id(sess, 0, rng::Dir::message));
            msgs[s].resize(K);
            for (int i = 0; i < K; ++i) msgs[s][i] = static_cast<uint8_t>(ms.pick(i, 2));
        }
    }
    std::vector<int> truth(N);
    for (int s = 0; s < B; ++s)
        for (int q = 0; q < Q; ++q)
            truth[s * Q + q] = core::bits_to_index(
                std::span<const uint8_t>(msgs[s].data() + q * m, static_cast<size_t>(m)));

    BatchResult res;
    if (neural) res.pv = codec::push_params(tape, params);

    // Differentiable state (neural path).
    std::vector<ad::Var> enc_cols;
    std::vector<ad::Var> dec_y_cols;
    ad::Var dec_p_know;
    Mat truth_onehot;
    ad::Var ones_a;
    if (neural) {
        Mat bits_bipolar(N, m);
        for (int s = 0; s < B; ++s)
            for (int q = 0; q < Q; ++q)
                for (int j = 0; j < m; ++j)
                    bits_bipolar(s * Q + q, j) = msgs[s][q * m + j] ? 1.0 : -1.0;
        enc_cols.push_back(ad::constant(tape, std::move(bits_bipolar)));
        dec_p_know = ad::zeros(tape, N, A);
        if (spec.train_mode) {
            truth_onehot = Mat(N, A);
            for (int r = 0; r < N; ++r) truth_onehot(r, truth[r]) = 1.0;
            ones_a = ad::constant(tape, Mat(A, 1, 1.0));
        }
    }

    // Bookkeeping.
    Mat p_record(N, A);
    std::vector<uint8_t> mask(N, 1);
    std::vector<int> tau_star(N, 0);
    std::vector<uint8_t> forced(N, 0);
    std::vector<double> row_x2(N, 0.0);

    const double sigma_f =
        pcfg.ch.forward_noiseless ? 0.0 : std::sqrt(pcfg.ch.sigma2_forward());
    const bool fb_awgn = pcfg.ch.feedback_mode == channel::FeedbackMode::awgn;
    const double sigma_b = fb_awgn ? std::sqrt(pcfg.ch.sigma2_feedback()) : 0.0;

    if (spec.want_transcripts) res.transcripts.resize(B);

    for (int tau = 1; tau <= t_max; ++tau) {
        int active = 0;
        for (auto v : mask) active += v;
        if (active == 0) break;
        Mat m_prev = col_from_mask(mask);

        // --- encode + forward channel ---
        ad::Var x_var, enc_k;
        Mat x_vals(N, 1);
        if (neural) {
            std::vector<ad::Var> parts = enc_cols;
            int pad = 2 * (t_max - tau + 1);
            parts.push_back(ad::zeros(tape, N, pad));
            enc_k = ad::concat_cols(tape, parts);
            ad::Var lat = codec::feature_forward(tape, res.pv.enc, enc_k, tau, ccfg);
            codec::AttnGraph at = codec::attention_aggregate(tape, res.pv.enc, lat, Q, ccfg);
            ad::Var raw = codec::header_forward(tape, res.pv.enc, at.aggregated);
            ad::Var xn;
            if (spec.train_mode) {
                codec::NormResult nr = codec::normalize_train(tape, raw, m_prev);
                xn = nr.x;
                res.round_stats.push_back({tau, nr.batch_mean, nr.batch_var});
            } else {
                xn = codec::normalize_eval(tape, raw, params, tau);
            }
            x_var = ad::mul_const(tape, xn, m_prev);
            x_vals = tape.val(x_var);
        }

        Mat w_fwd(N, 1);
        if (sigma_f > 0.0)
            for (int s = 0; s < B; ++s) {
                rng::Stream ns(spec.master_seed,
                               rng::session_stream_id(spec.first_session_index + s,
                                                      static_cast<uint32_t>(tau),
                                                      rng::Dir::forward));
                for (int q = 0; q < Q; ++q) w_fwd(s * Q + q, 0) = sigma_f * ns.gaussian(q);
            }

        ad::Var y_var;
        Mat y_vals(N, 1);
        if (neural) {
            y_var = ad::mul_const(tape, ad::add(tape, x_var, ad::constant(tape, w_fwd)), m_prev);
            y_vals = tape.val(y_var);
        } else {
            for (int r = 0; r < N; ++r) y_vals.a[r] = mask[r] ? w_fwd.a[r] : 0.0;
        }

        // --- feedback channel ---
        ad::Var yfb_var = y_var;
        Mat yfb_vals = y_vals;
        if (fb_awgn) {
            Mat w_fb(N, 1);
            for (int s = 0; s < B; ++s) {
                rng::Stream ns(spec.master_seed,
                               rng::session_stream_id(spec.first_session_index + s,
                                                      static_cast<uint32_t>(tau),
                                                      rng::Dir::feedback));
                for (int q = 0; q < Q; ++q) w_fb(s * Q + q, 0) = sigma_b * ns.gaussian(q);
            }
            if (neural) {
                yfb_var =
                    ad::mul_const(tape, ad::add(tape, y_var, ad::constant(tape, w_fb)), m_prev);
                yfb_vals = tape.val(yfb_var);
            } else {
                for (int r = 0; r < N; ++r) yfb_vals.a[r] = mask[r] ? y_vals.a[r] + w_fb.a[r] : 0.0;
            }
        }

        // --- decode ---
        ad::Var p_new_var, dec_k;
        Mat p_new_vals(N, A);
        if (neural) {
            dec_y_cols.push_back(y_var);
            std::vector<ad::Var> parts = dec_y_cols;
            if (t_max - tau > 0) parts.push_back(ad::zeros(tape, N, t_max - tau));
            parts.push_back(dec_p_know);
            dec_k = ad::concat_cols(tape, parts);
            ad::Var lat = codec::feature_forward(tape, res.pv.dec, dec_k, tau, ccfg);
            codec::AttnGraph at = codec::attention_aggregate(tape, res.pv.dec, lat, Q, ccfg);
            ad::Var feat = codec::header_forward(tape, res.pv.dec, at.aggregated);
            p_new_var = codec::classify(tape, res.pv, feat);
            p_new_vals = tape.val(p_new_var);
            if (spec.train_mode) {
                ad::Var pt = ad::matmul(tape, ad::mul_const(tape, p_new_var, truth_onehot), ones_a);
                res.loss_hooks.push_back({tau, ad::logclamp(tape, pt, 1e-12)});
            }
        } else {
            for (int r = 0; r < N; ++r) {
                if (spec.stub == StubMode::oracle)
                    p_new_vals(r, truth[r]) = 1.0;
                else
                    for (int a = 0; a < A; ++a) p_new_vals(r, a) = 1.0 / A;
            }
        }

        for (int r = 0; r < N; ++r)
            if (mask[r])
                for (int a = 0; a < A; ++a) p_record(r, a) = p_new_vals(r, a);

        // --- threshold decisions and stopping ---
        std::vector<uint8_t> mask_after = mask;
        if (spec.forced_masks) {
            if (static_cast<size_t>(tau) > spec.forced_masks->size())
                throw std::invalid_argument("run_batch: forced mask schedule too short");
            const auto& sched = (*spec.forced_masks)[tau - 1];
            if (static_cast<int>(sched.size()) != N)
                throw core::ShapeError("run_batch: forced mask schedule row count");
            for (int r = 0; r < N; ++r) {
                mask_after[r] = mask[r] ? sched[r] : 0;
                if (mask[r] && !mask_after[r]) tau_star[r] = tau;
            }
        } else {
            if (tau >= tau_plus) {
                for (int r = 0; r < N; ++r)
                    if (mask[r] && core::threshold_check(
                                       std::span<const double>(p_record.row(r), A), pcfg.gamma)) {
                        mask_after[r] = 0;
                        tau_star[r] = tau;
                    }
            }
            if (tau == t_max) {
                for (int r = 0; r < N; ++r)
                    if (mask_after[r]) {
                        mask_after[r] = 0;
                        tau_star[r] = t_max;
                        forced[r] = 1;
                    }
            }
        }

        for (int r = 0; r < N; ++r)
            if (mask[r]) row_x2[r] += x_vals.a[r] * x_vals.a[r];

        if (spec.want_transcripts) {
            for (int s = 0; s < B; ++s) {
                // A fully-frozen session's record ends; later batch rounds
                // belong to the sessions still running.
                bool session_active = false;
                for (int q = 0; q < Q; ++q)
                    if (mask[s * Q + q]) session_active = true;
                if (!session_active) continue;
                RoundRecord rec;
                rec.round = tau;
                rec.x.assign(x_vals.a.begin() + s * Q, x_vals.a.begin() + (s + 1) * Q);
                rec.y.assign(y_vals.a.begin() + s * Q, y_vals.a.begin() + (s + 1) * Q);
                rec.y_fb.assign(yfb_vals.a.begin() + s * Q, yfb_vals.a.begin() + (s + 1) * Q);
                rec.mask_before.assign(mask.begin() + s * Q, mask.begin() + (s + 1) * Q);
                rec.mask_after.assign(mask_after.begin() + s * Q, mask_after.begin() + (s + 1) * Q);
                rec.beliefs = core::BeliefMatrix(Q, A, tau);
                for (int q = 0; q < Q; ++q)
                    for (int a = 0; a < A; ++a) rec.beliefs.at(q, a) = p_record(s * Q + q, a);
                if (spec.record_knowledge && neural) {
                    const Mat& ek = tape.val(enc_k);
                    const Mat& dk = tape.val(dec_k);
                    rec.enc_knowledge = Mat(Q, ek.cols);
                    rec.dec_knowledge = Mat(Q, dk.cols);
                    for (int q = 0; q < Q; ++q) {
                        for (int j = 0; j < ek.cols; ++j)
                            rec.enc_knowledge(q, j) = ek(s * Q + q, j);
                        for (int j = 0; j < dk.cols; ++j)
                            rec.dec_knowledge(q, j) = dk(s * Q + q, j);
                    }
                }
                res.transcripts[s].rounds.push_back(std::move(rec));
            }
        }

        // --- fold the round into the auto-regressive state ---
        if (neural) {
            Mat m_cur = col_from_mask(mask_after);
            enc_cols.push_back(ad::mul_const(tape, x_var, m_cur));
            enc_cols.push_back(ad::mul_const(tape, yfb_var, m_cur));
            dec_p_know = ad::add(
                tape, dec_p_know,
                ad::mul_colbcast(tape, ad::sub(tape, p_new_var, dec_p_know), m_cur));
        }
        mask = std::move(mask_after);
    }

    // --- outcomes ---
    res.outcomes.resize(B);
    for (int s = 0; s < B; ++s) {
        SessionOutcome& o = res.outcomes[s];
        o.stopping = core::StoppingRecord(Q);
        o.decoded.clear();
        for (int q = 0; q < Q; ++q) {
            int r = s * Q + q;
            o.stopping.tau_star[q] = tau_star[r];
            o.stopping.forced[q] = forced[r];
            int idx = argmax_lowest(p_record.row(r), A);
            core::Bits gb = core::index_to_bits(idx, m);
            bool err = false;
            for (int j = 0; j < m; ++j) {
                o.decoded.push_back(gb[j]);
                if (gb[j] != msgs[s][q * m + j]) err = true;
            }
            if (err) ++o.group_errors;
            o.symbols_sent += tau_star[r];
            o.sum_x2 += row_x2[r];
        }
        o.block_error = o.group_errors > 0;

        if (spec.want_transcripts) {
            SessionTranscript& t = res.transcripts[s];
            t.master_seed = spec.master_seed;
            t.session_index = spec.first_session_index + s;
            t.gamma = pcfg.gamma;
            t.snr_fwd_db = pcfg.ch.forward_snr_db;
            t.feedback_awgn = fb_awgn ? 1 : 0;
            t.snr_fb_db = pcfg.ch.feedback_snr_db;
            t.forward_noiseless = pcfg.ch.forward_noiseless ? 1 : 0;
            t.K = K;
            t.Q = Q;
            t.m = m;
            t.t_max = t_max;
            t.tau_plus = tau_plus;
            t.stub = static_cast<int>(spec.stub);
            t.message = msgs[s];
            t.outcome = o;
            t.rate = core::compute_code_rate(o.stopping, K);
        }
    }
    return res;
}

SessionTranscript run_session(const core::BitMessage& message, const ProtocolConfig& pcfg,
                              const codec::CodecParams& params, int Q, uint64_t master_seed,
                              uint64_t session_index, StubMode stub) {
    ad::Tape tape;
    tape.recording = false;
    std::vector<core::Bits> msgs = {message.bits};
    BatchSpec spec;
    spec.n_sessions = 1;
    spec.master_seed = master_seed;
    spec.first_session_index = session_index;
    spec.stub = stub;
    spec.want_transcripts = true;
    spec.messages = &msgs;
    BatchResult r = run_batch(tape, params, pcfg, Q, spec);
    return std::move(r.transcripts[0]);
}

namespace {

template <typename T>
bool vec_eq(const std::vector<T>& a, const std::vector<T>& b) {
    return a == b;
}

}  // namespace

ReplayReport replay_verify(const SessionTranscript& t, const codec::CodecParams& params) {
    if (t.m != params.cfg.m || t.t_max != params.cfg.t_max || t.K != t.Q * t.m)
        return {false, 0, "config"};
    ProtocolConfig pcfg;
    pcfg.gamma = t.gamma;
    pcfg.tau_plus = t.tau_plus;
    pcfg.ch.forward_snr_db = t.snr_fwd_db;
    pcfg.ch.feedback_mode =
        t.feedback_awgn ? channel::FeedbackMode::awgn : channel::FeedbackMode::noiseless;
    pcfg.ch.feedback_snr_db = t.snr_fb_db;
    pcfg.ch.forward_noiseless = t.forward_noiseless != 0;

    core::BitMessage msg{t.message};
    SessionTranscript re = run_session(msg, pcfg, params, t.Q, t.master_seed, t.session_index,
                                       static_cast<StubMode>(t.stub));

    if (re.rounds.size() != t.rounds.size())
        return {false, static_cast<int>(std::min(re.rounds.size(), t.rounds.size())) + 1,
                "round_count"};
    for (size_t i = 0; i < t.rounds.size(); ++i) {
        const RoundRecord& a = t.rounds[i];
        const RoundRecord& b = re.rounds[i];
        int rd = a.round;
        if (!vec_eq(a.x, b.x)) return {false, rd, "x"};
        if (!vec_eq(a.y, b.y)) return {false, rd, "y"};
        if (!vec_eq(a.y_fb, b.y_fb)) return {false, rd, "y_fb"};
        if (!vec_eq(a.mask_before, b.mask_before)) return {false, rd, "mask_before"};
        if (!vec_eq(a.mask_after, b.mask_after)) return {false, rd, "mask_after"};
        if (a.beliefs.p != b.beliefs.p) return {false, rd, "beliefs"};
    }
    if (t.outcome.decoded != re.outcome.decoded) return {false, 0, "decoded"};
    if (t.outcome.stopping.tau_star != re.outcome.stopping.tau_star)
        return {false, 0, "tau_star"};
    if (t.outcome.stopping.forced != re.outcome.stopping.forced) return {false, 0, "forced"};
    if (t.outcome.block_error != re.outcome.block_error) return {false, 0, "block_error"};
    if (t.outcome.symbols_sent != re.outcome.symbols_sent) return {false, 0, "symbols"};
    if (t.rate != re.rate) return {false, 0, "rate"};
    return {true, 0, ""};
}

namespace {

json round_to_json(uint64_t session, const RoundRecord& r) {
    json j;
    j["type"] = "round";
    j["session"] = session;
    j["round"] = r.round;
    j["x"] = r.x;
    j["y"] = r.y;
    j["y_fb"] = r.y_fb;
    j["mask_before"] = r.mask_before;
    j["mask_after"] = r.mask_after;
    j["beliefs"] = r.beliefs.p;
    return j;
}

}  // namespace

std::string transcript_to_json(const SessionTranscript& t) {
    std::string out;
    for (const auto& r : t.rounds) out += round_to_json(t.session_index, r).dump() + "\n";
    json s;
    s["type"] = "summary";
    s["seed"] = t.master_seed;
    s["session"] = t.session_index;
    s["gamma"] = t.gamma;
    s["snr_fwd_db"] = t.snr_fwd_db;
    s["feedback_awgn"] = t.feedback_awgn;
    s["snr_fb_db"] = t.snr_fb_db;
    s["forward_noiseless"] = t.forward_noiseless;
    s["stub"] = t.stub;
    s["K"] = t.K;
    s["Q"] = t.Q;
    s["m"] = t.m;
    s["t_max"] = t.t_max;
    s["tau_plus"] = t.tau_plus;
    s["message"] = t.message;
    s["decoded"] = t.outcome.decoded;
    s["tau_star"] = t.outcome.stopping.tau_star;
    s["forced"] = t.outcome.stopping.forced;
    s["rate"] = t.rate;
    s["block_error"] = t.outcome.block_error;
    s["group_errors"] = t.outcome.group_errors;
    s["symbols"] = t.outcome.symbols_sent;
    s["sum_x2"] = t.outcome.sum_x2;
    out += s.dump() + "\n";
    return out;
}

SessionTranscript transcript_from_json(const std::string& text) {
    SessionTranscript t;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        std::string type = j.at("type").get<std::string>();
        if (type == "round") {
            RoundRecord r;
            r.round = j.at("round").get<int>();
            r.x = j.at("x").get<std::vector<double>>();
            r.y = j.at("y").get<std::vector<double>>();
            r.y_fb = j.at("y_fb").get<std::vector<double>>();
            r.mask_before = j.at("mask_before").get<std::vector<uint8_t>>();
            r.mask_after = j.at("mask_after").get<std::vector<uint8_t>>();
            int Q = static_cast<int>(r.x.size());
            std::vector<double> p = j.at("beliefs").get<std::vector<double>>();
            int A = Q ? static_cast<int>(p.size()) / Q : 0;
            r.beliefs = core::BeliefMatrix(Q, A, r.round);
            r.beliefs.p = std::move(p);
            t.rounds.push_back(std::move(r));
        } else if (type == "summary") {
            t.master_seed = j.at("seed").get<uint64_t>();
            t.session_index = j.at("session").get<uint64_t>();
            t.gamma = j.at("gamma").get<double>();
            t.snr_fwd_db = j.at("snr_fwd_db").get<double>();
            t.feedback_awgn = j.at("feedback_awgn").get<int>();
            t.snr_fb_db = j.at("snr_fb_db").get<double>();
            t.forward_noiseless = j.at("forward_noiseless").get<int>();
            t.stub = j.at("stub").get<int>();
            t.K = j.at("K").get<int>();
            t.Q = j.at("Q").get<int>();
            t.m = j.at("m").get<int>();
            t.t_max = j.at("t_max").get<int>();
            t.tau_plus = j.at("tau_plus").get<int>();
            t.message = j.at("message").get<core::Bits>();
            t.outcome.decoded = j.at("decoded").get<core::Bits>();
            t.outcome.stopping.tau_star = j.at("tau_star").get<std::vector<int>>();
            t.outcome.stopping.forced = j.at("forced").get<std::vector<uint8_t>>();
            t.rate = j.at("rate").get<double>();
            t.outcome.block_error = j.at("block_error").get<bool>();
            t.outcome.group_errors = j.at("group_errors").get<int>();
            t.outcome.symbols_sent = j.at("symbols").get<int>();
            t.outcome.sum_x2 = j.at("sum_x2").get<double>();
        }
    }
    return t;
}

void write_transcripts(const std::vector<SessionTranscript>& ts, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("transcripts: cannot open for writing: " + path);
    for (const auto& t : ts) f << transcript_to_json(t);
    if (!f) throw std::runtime_error("transcripts: write failed: " + path);
}

std::vector<SessionTranscript> read_transcripts(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("transcripts: cannot open: " + path);
    std::vector<SessionTranscript> out;
    std::string block, line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        block += line + "\n";
        // A summary line closes one session's record.
        if (line.find("\"type\":\"summary\"") != std::string::npos ||
            line.find("\"type\": \"summary\"") != std::string::npos) {
            out.push_back(transcript_from_json(block));
            block.clear();
        }
    }
    return out;
}

}  // namespace deepvlf::protocol
