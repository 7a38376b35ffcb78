#include <cmath>
#include <cstdio>
#include <fstream>

#include "deepvlf/rng.hpp"
#include "deepvlf/training.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace deepvlf;

namespace {

// History with p_true planted at chosen (round -> probability) points and 1
// everywhere else, so only the planted rounds contribute to a loss.
std::vector<core::BeliefMatrix> planted_history(int rounds, int m, int true_idx,
                                                const std::vector<std::pair<int, double>>& pts) {
    std::vector<core::BeliefMatrix> h;
    for (int t = 1; t <= rounds; ++t) {
        core::BeliefMatrix bm(1, 1 << m, t);
        bm.at(0, true_idx) = 1.0;
        for (const auto& [round, p] : pts)
            if (round == t) bm.at(0, true_idx) = p;
        h.push_back(bm);
    }
    return h;
}

core::BitGroup group_of_index(int idx, int m) {
    core::BitGroup g;
    g.bits = core::index_to_bits(idx, m);
    return g;
}

}  // namespace

TEST_CASE("per-round weights follow the exponential ladder") {
    training::LossConfig cfg;  // vartheta 10, epsilon 9
    cfg.tau_plus = 5;
    const double e1 = std::exp(-1.0);
    std::vector<core::BitGroup> truth = {group_of_index(2, 3)};

    for (auto [round, want] : std::vector<std::pair<int, double>>{
             {5, 1e-4}, {7, 1e-2}, {9, 1.0}, {10, 10.0}}) {
        auto h = planted_history(round, 3, 2, {{round, e1}});
        core::StoppingRecord rec(1);
        rec.tau_star[0] = round;
        CHECK(training::loss_exp_weight(h, truth, rec, cfg) ==
              doctest::Approx(want).epsilon(1e-12));
    }

    // All rounds planted at e^-1: the weights accumulate geometrically.
    auto h = planted_history(10, 3, 2, {{5, e1}, {6, e1}, {7, e1}, {8, e1}, {9, e1}, {10, e1}});
    core::StoppingRecord rec(1);
    rec.tau_star[0] = 10;
    double want = 1e-4 + 1e-3 + 1e-2 + 1e-1 + 1.0 + 10.0;
    CHECK(training::loss_exp_weight(h, truth, rec, cfg) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("single-round loss pins to the stopping round") {
    std::vector<core::BitGroup> truth = {group_of_index(5, 3)};
    core::StoppingRecord rec(1);
    rec.tau_star[0] = 9;

    auto h = planted_history(9, 3, 5, {{9, std::exp(-1.0)}});
    CHECK(training::loss_single(h, truth, rec) == doctest::Approx(1.0).epsilon(1e-12));

    // Uniform beliefs over an 8-letter alphabet cost log 8.
    auto hu = planted_history(9, 3, 5, {{9, 0.125}});
    CHECK(training::loss_single(hu, truth, rec) ==
          doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("equal weighting counts every round from the first") {
    std::vector<core::BitGroup> truth = {group_of_index(1, 2)};
    core::StoppingRecord rec(1);
    rec.tau_star[0] = 4;
    const double e1 = std::exp(-1.0);
    auto h = planted_history(4, 2, 1, {{1, e1}, {2, e1}, {3, e1}, {4, e1}});
    CHECK(training::loss_equal_weight(h, truth, rec) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("flat exponential weights degenerate to equal weighting") {
    training::LossConfig flat;
    flat.variant = training::LossConfig::Variant::exp_weight;
    flat.vartheta = 1.0;
    flat.epsilon = 0.0;
    flat.tau_plus = 1;

    rng::Stream s(71, 0);
    const int m = 2, A = 4, Q = 3;
    std::vector<core::BitGroup> truth;
    for (int q = 0; q < Q; ++q) {
        core::BitGroup g = group_of_index(static_cast<int>(s.pick(q, A)), m);
        g.index = q;
        truth.push_back(g);
    }
    core::StoppingRecord rec(Q);
    rec.tau_star = {2, 5, 3};
    std::vector<core::BeliefMatrix> h;
    uint64_t c = 100;
    for (int t = 1; t <= 5; ++t) {
        core::BeliefMatrix bm(Q, A, t);
        for (int q = 0; q < Q; ++q) {
            double sum = 0.0;
            for (int a = 0; a < A; ++a) {
                bm.at(q, a) = s.uniform(c++);
                sum += bm.at(q, a);
            }
            for (int a = 0; a < A; ++a) bm.at(q, a) /= sum;
        }
        h.push_back(bm);
    }
    CHECK(training::loss_exp_weight(h, truth, rec, flat) ==
          doctest::Approx(training::loss_equal_weight(h, truth, rec)).epsilon(1e-12));
}

TEST_CASE("loss rejects malformed inputs") {
    std::vector<core::BitGroup> truth = {group_of_index(0, 1)};
    core::StoppingRecord unset(1);
    auto h = planted_history(3, 1, 0, {});
    CHECK_THROWS(training::loss_single(h, truth, unset));

    core::StoppingRecord deep(1);
    deep.tau_star[0] = 4;  // beyond the recorded history
    CHECK_THROWS_AS(training::loss_single(h, truth, deep), core::ShapeError);

    // Beliefs below the clamp stay finite.
    auto hz = planted_history(2, 1, 0, {{2, 0.0}});
    core::StoppingRecord r2(1);
    r2.tau_star[0] = 2;
    double v = training::loss_single(hz, truth, r2);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
}

TEST_CASE("batched loss equals the summed per-session losses") {
    codec::CodecConfig cfg;
    cfg.m = 1;
    cfg.t_max = 4;
    cfg.d_latent = 8;
    codec::CodecParams params = codec::init_params(cfg, 3);
    protocol::ProtocolConfig pcfg;
    pcfg.gamma = 0.55;
    pcfg.tau_plus = 1;
    pcfg.ch.forward_snr_db = 1.0;
    const int Q = 2, B = 6;

    ad::Tape tape;
    protocol::BatchSpec spec;
    spec.n_sessions = B;
    spec.master_seed = 91;
    spec.train_mode = true;
    spec.want_transcripts = true;
    protocol::BatchResult run = protocol::run_batch(tape, params, pcfg, Q, spec);

    training::LossConfig lcfg;
    lcfg.vartheta = 2.0;
    lcfg.epsilon = 2.0;
    lcfg.tau_plus = 1;

    auto histories = [&](int s) {
        std::vector<core::BeliefMatrix> h;
        for (const auto& rec : run.transcripts[s].rounds) h.push_back(rec.beliefs);
        return h;
    };
    auto truths = [&](int s) {
        return core::partition_message(core::BitMessage{run.transcripts[s].message}, Q, cfg.m);
    };

    double sum_exp = 0.0, sum_eq = 0.0, sum_one = 0.0;
    for (int s = 0; s < B; ++s) {
        auto h = histories(s);
        auto tr = truths(s);
        const auto& rec = run.outcomes[s].stopping;
        sum_exp += training::loss_exp_weight(h, tr, rec, lcfg);
        sum_eq += training::loss_equal_weight(h, tr, rec);
        sum_one += training::loss_single(h, tr, rec);
    }

    ad::Var le = training::batched_loss(tape, run, lcfg, Q);
    CHECK(tape.val(le)(0, 0) == doctest::Approx(sum_exp / B).epsilon(1e-12));

    training::LossConfig eq = lcfg;
    eq.variant = training::LossConfig::Variant::equal_weight;
    CHECK(tape.val(training::batched_loss(tape, run, eq, Q))(0, 0) ==
          doctest::Approx(sum_eq / B).epsilon(1e-12));

    training::LossConfig one = lcfg;
    one.variant = training::LossConfig::Variant::single;
    CHECK(tape.val(training::batched_loss(tape, run, one, Q))(0, 0) ==
          doctest::Approx(sum_one / B).epsilon(1e-12));

    // The explicit scale hook is exactly linear.
    CHECK(tape.val(training::batched_loss(tape, run, lcfg, Q, 2.0))(0, 0) ==
          doctest::Approx(2.0 * sum_exp / B).epsilon(1e-14));
}

TEST_CASE("analytic gradients agree with finite differences end to end") {
    training::GradCheckReport rep = training::grad_check(5);
    CAPTURE(rep.n_coords);
    CAPTURE(rep.p95_rel);
    CAPTURE(rep.max_rel);
    CAPTURE(rep.scale_linearity);
    CAPTURE(rep.zero_grad_max);
    CHECK(rep.n_coords > 700);
    CHECK(rep.p95_rel < 1e-4);
    CHECK(rep.max_rel < 1e-3);
    CHECK(rep.scale_linearity <= 1e-10);
    CHECK(rep.zero_grad_max == 0.0);
    CHECK(rep.pass);
}

TEST_CASE("optimizer: first step moves by the step size, decay is decoupled") {
    codec::CodecParams p;
    p.arrays.emplace_back("w", Mat(1, 1, 1.0));
    Mat g(1, 1, 0.5);
    training::AdamW opt;
    opt.step(p, {{"w", &g}}, 0.1, 0.0);
    CHECK(p.at("w")(0, 0) == doctest::Approx(0.9).epsilon(1e-7));

    codec::CodecParams q;
    q.arrays.emplace_back("w", Mat(1, 1, 1.0));
    training::AdamW opt2;
    opt2.step(q, {{"w", &g}}, 0.1, 0.01);
    CHECK(q.at("w")(0, 0) == doctest::Approx(0.9 - 0.1 * 0.01).epsilon(1e-6));

    Mat bad(2, 1);
    CHECK_THROWS_AS(opt.step(p, {{"w", &bad}}, 0.1, 0.0), core::ShapeError);
}

TEST_CASE("learning-rate schedule decays smoothly to one percent") {
    CHECK(training::cosine_lr(1e-3, 0, 100) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(training::cosine_lr(1e-3, 99, 100) == doctest::Approx(1e-5).epsilon(1e-9));
    double prev = training::cosine_lr(1e-3, 0, 100);
    for (int s = 1; s < 100; ++s) {
        double cur = training::cosine_lr(1e-3, s, 100);
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK(training::cosine_lr(1e-3, 0, 1) == 1e-3);
}

TEST_CASE("short training runs are reproducible and checkpoint their best") {
    codec::CodecConfig cfg;
    cfg.m = 1;
    cfg.t_max = 4;
    cfg.d_latent = 8;
    protocol::ProtocolConfig pcfg;
    pcfg.tau_plus = 1;
    pcfg.ch.forward_snr_db = 1.0;

    training::TrainConfig tcfg;
    tcfg.batch = 8;
    tcfg.pretrain_steps = 3;
    tcfg.finetune_steps = 3;
    tcfg.gamma_grid = {0.6, 0.7};
    tcfg.gamma_target = 0.7;
    tcfg.seed = 5;
    tcfg.val_every = 2;
    tcfg.val_sessions = 16;
    tcfg.loss.vartheta = 2.0;
    tcfg.loss.epsilon = 2.0;
    tcfg.checkpoint_path = "train_best.ckpt";
    tcfg.metrics_path = "train_metrics.jsonl";

    training::TrainReport a = training::train(tcfg, pcfg, 2, cfg);
    CHECK_FALSE(a.diverged);
    CHECK(a.steps_run == 6);
    CHECK(std::isfinite(a.first_loss));
    CHECK(std::isfinite(a.last_loss));
    CHECK(a.best_saved);
    CHECK(a.best.sessions == 16);

    codec::CodecParams best = codec::load_checkpoint("train_best.ckpt", cfg);
    CHECK(codec::content_digest(best) != "");

    // Metrics log: one JSON object per step, phases in order.
    std::ifstream mf("train_metrics.jsonl");
    REQUIRE(mf.good());
    std::string line;
    int lines = 0, pretrain_seen = 0, finetune_seen = 0;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.contains("loss"));
        CHECK(j.contains("gamma"));
        if (j.at("phase") == "pretrain") ++pretrain_seen;
        if (j.at("phase") == "finetune") ++finetune_seen;
        ++lines;
    }
    CHECK(lines == 6);
    CHECK(pretrain_seen == 3);
    CHECK(finetune_seen == 3);

    training::TrainReport b = training::train(tcfg, pcfg, 2, cfg);
    CHECK(b.first_loss == a.first_loss);
    CHECK(b.last_loss == a.last_loss);
    CHECK(codec::content_digest(b.params) == codec::content_digest(a.params));

    std::remove("train_best.ckpt");
    std::remove("train_metrics.jsonl");
}

TEST_CASE("validation metrics aggregate chunk-independently") {
    codec::CodecConfig cfg;
    cfg.m = 2;
    cfg.t_max = 6;
    cfg.d_latent = 8;
    codec::CodecParams params = codec::init_params(cfg, 8);
    protocol::ProtocolConfig pcfg;
    pcfg.gamma = 0.999;
    pcfg.ch.forward_snr_db = 10.0;
    pcfg.tau_plus = 2;

    training::ValMetrics vm = training::validate(params, pcfg, 3, 96, 4);
    CHECK(vm.sessions == 96);
    CHECK(vm.bler >= 0.0);
    CHECK(vm.bler <= 1.0);
    CHECK(vm.avg_rate > 0.0);
    CHECK(vm.avg_rounds >= 3 * pcfg.tau_plus / 3.0);

    training::ValMetrics again = training::validate(params, pcfg, 3, 96, 4);
    CHECK(vm.bler == again.bler);
    CHECK(vm.avg_rate == again.avg_rate);
    CHECK(vm.avg_power == again.avg_power);
}
