#include "deepvlf/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "deepvlf/rng.hpp"
#include "json.hpp"

namespace deepvlf::training {

using nlohmann::json;

namespace {

double clamped_log(double p) { return std::log(p < kLogClamp ? kLogClamp : p); }

void check_history(const std::vector<core::BeliefMatrix>& history,
                   const std::vector<core::BitGroup>& truth, const core::StoppingRecord& record) {
    const int Q = static_cast<int>(truth.size());
    if (static_cast<int>(record.tau_star.size()) != Q)
        throw core::ShapeError("loss: stopping record / truth size mismatch");
    int need = 0;
    for (int t : record.tau_star) {
        if (t < 1) throw std::invalid_argument("loss: stopping round unset");
        need = std::max(need, t);
    }
    if (static_cast<int>(history.size()) < need)
        throw core::ShapeError("loss: belief history shorter than the stopping rounds");
    for (const auto& bm : history)
        if (bm.q_count != Q) throw core::ShapeError("loss: belief history group count");
}

}  // namespace

double loss_exp_weight(const std::vector<core::BeliefMatrix>& history,
                       const std::vector<core::BitGroup>& truth,
                       const core::StoppingRecord& record, const LossConfig& cfg) {
    check_history(history, truth, record);
    if (cfg.tau_plus < 1) throw std::invalid_argument("loss: tau_plus must be >= 1");
    double loss = 0.0;
    for (size_t q = 0; q < truth.size(); ++q) {
        int idx = core::group_to_index(truth[q]);
        for (int tau = cfg.tau_plus; tau <= record.tau_star[q]; ++tau) {
            double w = std::pow(cfg.vartheta, tau - cfg.epsilon);
            loss -= w * clamped_log(history[tau - 1].at(static_cast<int>(q), idx));
        }
    }
    return loss;
}

double loss_equal_weight(const std::vector<core::BeliefMatrix>& history,
                         const std::vector<core::BitGroup>& truth,
                         const core::StoppingRecord& record) {
    check_history(history, truth, record);
    double loss = 0.0;
    for (size_t q = 0; q < truth.size(); ++q) {
        int idx = core::group_to_index(truth[q]);
        for (int tau = 1; tau <= record.tau_star[q]; ++tau)
            loss -= clamped_log(history[tau - 1].at(static_cast<int>(q), idx));
    }
    return loss;
}

double loss_single(const std::vector<core::BeliefMatrix>& history,
                   const std::vector<core::BitGroup>& truth,
                   const core::StoppingRecord& record) {
    check_history(history, truth, record);
    double loss = 0.0;
    for (size_t q = 0; q < truth.size(); ++q) {
        int idx = core::group_to_index(truth[q]);
        loss -= clamped_log(history[record.tau_star[q] - 1].at(static_cast<int>(q), idx));
    }
    return loss;
}

ad::Var batched_loss(ad::Tape& tape, const protocol::BatchResult& run, const LossConfig& cfg,
                     int Q, double scale) {
    if (run.loss_hooks.empty())
        throw std::invalid_argument("batched_loss: run carries no loss hooks");
    const int B = static_cast<int>(run.outcomes.size());
    const int N = B * Q;
    if (cfg.tau_plus < 1) throw std::invalid_argument("batched_loss: tau_plus must be >= 1");

    ad::Var total;
    for (const auto& hook : run.loss_hooks) {
        Mat w(N, 1);
        bool any = false;
        for (int s = 0; s < B; ++s) {
            for (int q = 0; q < Q; ++q) {
                int ts = run.outcomes[s].stopping.tau_star[q];
                double v = 0.0;
                switch (cfg.variant) {
                    case LossConfig::Variant::exp_weight:
                        if (hook.round >= cfg.tau_plus && hook.round <= ts)
                            v = std::pow(cfg.vartheta, hook.round - cfg.epsilon);
                        break;
                    case LossConfig::Variant::equal_weight:
                        if (hook.round <= ts) v = 1.0;
                        break;
                    case LossConfig::Variant::single:
                        if (hook.round == ts) v = 1.0;
                        break;
                }
                if (v != 0.0) any = true;
                w(s * Q + q, 0) = v;
            }
        }
        if (!any) continue;
        ad::Var term = ad::ssum(tape, ad::mul_const(tape, hook.logp_true, w));
        total = total.valid() ? ad::sadd(tape, total, term) : term;
    }
    if (!total.valid()) total = ad::constant(tape, Mat(1, 1, 0.0));
    return ad::sscale(tape, total, -scale / B);
}

Mat& AdamW::slot(std::vector<std::pair<std::string, Mat>>& store, const std::string& name,
                 const Mat& like) {
    for (auto& [n, m] : store)
        if (n == name) return m;
    store.emplace_back(name, Mat(like.rows, like.cols));
    return store.back().second;
}

void AdamW::step(codec::CodecParams& params,
                 const std::vector<std::pair<std::string, const Mat*>>& grads, double lr,
                 double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, gp] : grads) {
        Mat& p = params.at(name);
        const Mat& g = *gp;
        if (g.rows != p.rows || g.cols != p.cols)
            throw core::ShapeError("AdamW: gradient shape mismatch for " + name);
        Mat& m = slot(m_, name, p);
        Mat& v = slot(v_, name, p);
        for (size_t i = 0; i < p.a.size(); ++i) {
            m.a[i] = beta1_ * m.a[i] + (1.0 - beta1_) * g.a[i];
            v.a[i] = beta2_ * v.a[i] + (1.0 - beta2_) * g.a[i] * g.a[i];
            double mhat = m.a[i] / bc1;
            double vhat = v.a[i] / bc2;
            p.a[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p.a[i]);
        }
    }
}

double cosine_lr(double lr0, int step, int total) {
    const double lr_end = 0.01 * lr0;
    if (total <= 1) return lr0;
    double t = static_cast<double>(step) / (total - 1);
    if (t < 0.0) t = 0.0;
    if (t > 1.0) t = 1.0;
    return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + std::cos(M_PI * t));
}

ValMetrics validate(const codec::CodecParams& params, const protocol::ProtocolConfig& pcfg,
                    int Q, int n_sessions, uint64_t seed) {
    protocol::Aggregate agg;
    const int K = Q * params.cfg.m;
    const uint64_t master = rng::combine(seed, 0x76616C6964ULL);
    const int chunk = 64;
    for (int start = 0; start < n_sessions; start += chunk) {
        ad::Tape tape;
        tape.recording = false;
        protocol::BatchSpec bs;
        bs.n_sessions = std::min(chunk, n_sessions - start);
        bs.master_seed = master;
        bs.first_session_index = static_cast<uint64_t>(start);
        protocol::BatchResult r = protocol::run_batch(tape, params, pcfg, Q, bs);
        for (const auto& o : r.outcomes) agg.add(o, Q);
    }
    ValMetrics vm;
    vm.sessions = agg.n_sessions;
    vm.bler = agg.bler();
    vm.group_error_rate = agg.group_error_rate();
    vm.avg_rate = agg.avg_rate(K);
    vm.avg_power = agg.avg_power();
    vm.forced_fraction = agg.forced_fraction();
    vm.avg_rounds = agg.avg_rounds();
    return vm;
}

namespace {

struct MetricsLog {
    std::ofstream out;
    explicit MetricsLog(const std::string& path) {
        if (!path.empty()) {
            out.open(path, std::ios::trunc);
            if (!out) throw std::runtime_error("cannot open metrics log: " + path);
        }
    }
    void line(const json& j) {
        if (out.is_open()) out << j.dump() << "\n" << std::flush;
    }
};

bool improves(const ValMetrics& cand, const ValMetrics& best, bool have_best) {
    if (!have_best) return true;
    if (cand.bler != best.bler) return cand.bler < best.bler;
    return cand.avg_rate > best.avg_rate;
}

}  // namespace

TrainReport train(const TrainConfig& tcfg, const protocol::ProtocolConfig& base_pcfg, int Q,
                  const codec::CodecConfig& ccfg) {
    ccfg.validate();
    if (tcfg.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (tcfg.gamma_grid.empty()) throw std::invalid_argument("train: empty gamma grid");

    TrainReport rep;
    rep.params = codec::init_params(ccfg, tcfg.seed);
    AdamW opt;
    MetricsLog log(tcfg.metrics_path);
    rng::Stream gpick(tcfg.seed, 0x67616D6DULL);

    const int n_phases = (tcfg.phase_pretrain ? 1 : 0) + (tcfg.phase_finetune ? 1 : 0);
    const int total_steps = (tcfg.phase_pretrain ? tcfg.pretrain_steps : 0) +
                            (tcfg.phase_finetune ? tcfg.finetune_steps : 0);
    if (n_phases == 0 || total_steps == 0)
        throw std::invalid_argument("train: no steps configured");

    protocol::ProtocolConfig pcfg_target = base_pcfg;
    pcfg_target.gamma = tcfg.gamma_target;

    bool have_best = false;
    int global_step = 0;
    bool first_recorded = false;

    // One slice means the loss, its gradients and the batch normalization
    // statistics all come from the same sessions; larger batches are split
    // and their gradients summed (the normalizer then sees per-slice stats).
    const int slice_cap = 256;

    for (int phase = 0; phase < 2 && !rep.diverged; ++phase) {
        if (phase == 0 && !tcfg.phase_pretrain) continue;
        if (phase == 1 && !tcfg.phase_finetune) continue;
        const int steps = phase == 0 ? tcfg.pretrain_steps : tcfg.finetune_steps;
        const char* phase_name = phase == 0 ? "pretrain" : "finetune";

        for (int step = 0; step < steps && !rep.diverged; ++step, ++global_step) {
            double gamma = tcfg.gamma_target;
            if (phase == 0) {
                int gi = static_cast<int>(
                    gpick.pick(static_cast<uint64_t>(global_step), tcfg.gamma_grid.size()));
                gamma = tcfg.gamma_grid[gi];
            }
            protocol::ProtocolConfig pcfg = base_pcfg;
            pcfg.gamma = gamma;
            LossConfig lcfg = tcfg.loss;
            lcfg.tau_plus = pcfg.effective_tau_plus(ccfg.m);

            double loss_val = 0.0;
            std::vector<std::pair<std::string, Mat>> gsum;
            for (int start = 0; start < tcfg.batch; start += slice_cap) {
                const int bsz = std::min(slice_cap, tcfg.batch - start);
                ad::Tape tape;
                protocol::BatchSpec bs;
                bs.n_sessions = bsz;
                bs.master_seed = tcfg.seed;
                bs.first_session_index =
                    static_cast<uint64_t>(global_step) * tcfg.batch + start;
                bs.train_mode = true;
                protocol::BatchResult run = protocol::run_batch(tape, rep.params, pcfg, Q, bs);
                for (const auto& rs : run.round_stats)
                    codec::update_running_stats(rep.params, rs.round, rs.mean, rs.var);
                ad::Var L = batched_loss(tape, run, lcfg, Q,
                                         static_cast<double>(bsz) / tcfg.batch);
                loss_val += tape.val(L)(0, 0);
                tape.backward(L);
                if (gsum.empty())
                    for (const auto& [name, var] : run.pv.all)
                        gsum.emplace_back(name, tape.grad(var));
                else
                    for (size_t i = 0; i < gsum.size(); ++i) {
                        const Mat& g = tape.grad(run.pv.all[i].second);
                        for (size_t j = 0; j < g.a.size(); ++j) gsum[i].second.a[j] += g.a[j];
                    }
            }

            if (!first_recorded) {
                rep.first_loss = loss_val;
                first_recorded = true;
            }
            rep.last_loss = loss_val;

            if (!std::isfinite(loss_val)) {
                rep.diverged = true;
                log.line({{"event", "diverged"},
                          {"step", global_step},
                          {"phase", phase_name},
                          {"loss", loss_val}});
                break;
            }

            double lr = cosine_lr(tcfg.lr, global_step, total_steps);
            std::vector<std::pair<std::string, const Mat*>> grads;
            grads.reserve(gsum.size());
            for (const auto& [name, g] : gsum) grads.emplace_back(name, &g);
            opt.step(rep.params, grads, lr, tcfg.weight_decay);
            ++rep.steps_run;

            json j{{"step", global_step}, {"phase", phase_name}, {"gamma", gamma},
                   {"lr", lr},           {"loss", loss_val}};
            const bool last = global_step + 1 == total_steps;
            if ((tcfg.val_every > 0 && (global_step + 1) % tcfg.val_every == 0) || last) {
                ValMetrics vm =
                    validate(rep.params, pcfg_target, Q, tcfg.val_sessions, tcfg.seed);
                j["val_bler"] = vm.bler;
                j["val_group_error_rate"] = vm.group_error_rate;
                j["val_avg_rate"] = vm.avg_rate;
                j["val_avg_power"] = vm.avg_power;
                j["val_forced_fraction"] = vm.forced_fraction;
                j["val_avg_rounds"] = vm.avg_rounds;
                if (improves(vm, rep.best, have_best)) {
                    rep.best = vm;
                    have_best = true;
                    if (!tcfg.checkpoint_path.empty()) {
                        codec::save_checkpoint(rep.params, tcfg.checkpoint_path);
                        rep.best_saved = true;
                        j["checkpoint"] = tcfg.checkpoint_path;
                    }
                }
            }
            log.line(j);
        }
    }
    return rep;
}

GradCheckReport grad_check(uint64_t seed, double tol_p95, double tol_max, double fd_step) {
    codec::CodecConfig ccfg;
    ccfg.m = 1;
    ccfg.t_max = 4;
    ccfg.d_latent = 8;
    ccfg.tau_vd = 3;  // round 4 exercises the deeper feature path
    protocol::ProtocolConfig pcfg;
    pcfg.gamma = 0.55;
    pcfg.tau_plus = 1;
    pcfg.ch.forward_snr_db = 1.0;
    pcfg.ch.feedback_mode = channel::FeedbackMode::awgn;
    pcfg.ch.feedback_snr_db = 20.0;
    const int Q = 2, B = 4, N = B * Q;
    LossConfig lcfg;
    lcfg.variant = LossConfig::Variant::exp_weight;
    lcfg.vartheta = 2.0;
    lcfg.epsilon = 2.0;
    lcfg.tau_plus = 1;

    codec::CodecParams params = codec::init_params(ccfg, seed);

    // Base run with live thresholds; its stopping rounds define the frozen
    // mask schedule every later run replays.
    std::vector<std::vector<uint8_t>> schedule;
    {
        ad::Tape tape;
        tape.recording = false;
        protocol::BatchSpec bs;
        bs.n_sessions = B;
        bs.master_seed = seed;
        bs.train_mode = true;
        protocol::BatchResult run = protocol::run_batch(tape, params, pcfg, Q, bs);
        int rounds = 0;
        std::vector<int> ts(N);
        for (int s = 0; s < B; ++s)
            for (int q = 0; q < Q; ++q) {
                ts[s * Q + q] = run.outcomes[s].stopping.tau_star[q];
                rounds = std::max(rounds, ts[s * Q + q]);
            }
        schedule.assign(rounds, std::vector<uint8_t>(N));
        for (int t = 1; t <= rounds; ++t)
            for (int r = 0; r < N; ++r) schedule[t - 1][r] = ts[r] > t ? 1 : 0;
    }

    auto run_loss = [&](const codec::CodecParams& p, double scale, bool want_grads,
                        std::vector<Mat>* grads_out) {
        ad::Tape tape;
        tape.recording = want_grads;
        protocol::BatchSpec bs;
        bs.n_sessions = B;
        bs.master_seed = seed;
        bs.train_mode = true;
        bs.forced_masks = &schedule;
        protocol::BatchResult run = protocol::run_batch(tape, p, pcfg, Q, bs);
        ad::Var L = batched_loss(tape, run, lcfg, Q, scale);
        double lv = tape.val(L)(0, 0);
        if (want_grads) {
            tape.backward(L);
            grads_out->clear();
            for (const auto& [name, var] : run.pv.all) grads_out->push_back(tape.grad(var));
        }
        return lv;
    };

    std::vector<Mat> g1, g2, g0;
    run_loss(params, 1.0, true, &g1);
    run_loss(params, 2.0, true, &g2);
    run_loss(params, 0.0, true, &g0);

    GradCheckReport rep;
    for (size_t k = 0; k < g1.size(); ++k)
        for (size_t i = 0; i < g1[k].a.size(); ++i) {
            rep.scale_linearity =
                std::max(rep.scale_linearity, std::abs(g2[k].a[i] - 2.0 * g1[k].a[i]));
            rep.zero_grad_max = std::max(rep.zero_grad_max, std::abs(g0[k].a[i]));
        }

    // Finite differences against every learnable coordinate.
    double gmax = 0.0;
    for (const auto& g : g1)
        for (double v : g.a) gmax = std::max(gmax, std::abs(v));
    const double floor = 1e-4 * gmax + 1e-300;

    std::vector<double> rel;
    codec::CodecParams work = params;
    size_t k = 0;
    for (auto& [name, arr] : work.arrays) {
        if (!codec::CodecParams::learnable(name)) continue;
        for (size_t i = 0; i < arr.a.size(); ++i) {
            const double keep = arr.a[i];
            arr.a[i] = keep + fd_step;
            double lp = run_loss(work, 1.0, false, nullptr);
            arr.a[i] = keep - fd_step;
            double lm = run_loss(work, 1.0, false, nullptr);
            arr.a[i] = keep;
            double fd = (lp - lm) / (2.0 * fd_step);
            double a = g1[k].a[i];
            rel.push_back(std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
        }
        ++k;
    }

    rep.n_coords = static_cast<int>(rel.size());
    std::sort(rel.begin(), rel.end());
    rep.max_rel = rel.empty() ? 0.0 : rel.back();
    rep.p95_rel = rel.empty() ? 0.0 : rel[static_cast<size_t>(0.95 * (rel.size() - 1))];
    rep.pass = rep.p95_rel < tol_p95 && rep.max_rel < tol_max &&
               rep.scale_linearity <= 1e-10 && rep.zero_grad_max <= 1e-15;
    return rep;
}

}  // namespace deepvlf::training
