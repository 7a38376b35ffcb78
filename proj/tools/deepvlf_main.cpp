#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deepvlf/config.hpp"
#include "deepvlf/eval.hpp"
#include "deepvlf/training.hpp"
#include "json.hpp"

using namespace deepvlf;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;    // bad flags or configuration
constexpr int kExitNumeric = 3;  // divergence or a failed verification
constexpr int kExitIo = 4;       // unreadable/unwritable files

uint64_t resolve_seed(const CLI::Option* seed_opt, uint64_t cli_seed, const config::Kv& kv) {
    if (seed_opt->count() > 0) return cli_seed;
    if (kv.has("seed")) return kv.get_u64("seed", 1);
    if (const char* env = std::getenv("DEEPVLF_SEED")) {
        try {
            size_t used = 0;
            uint64_t s = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument("");
            return s;
        } catch (const std::exception&) {
            throw config::KvError("DEEPVLF_SEED must be an unsigned integer (got '" +
                                  std::string(env) + "')");
        }
    }
    return 1;
}

json estimate_json(const eval::Estimate& e) {
    // JSON has no literal for infinity; noiseless feedback becomes the string "inf".
    json fb;
    if (std::isfinite(e.snr_fb_db))
        fb = e.snr_fb_db;
    else
        fb = "inf";
    return json{{"gamma", e.gamma},
                {"snr_fwd_db", e.snr_fwd_db},
                {"snr_fb_db", fb},
                {"n_sessions", e.n_sessions},
                {"bler", e.bler},
                {"bler_ci", {e.bler_ci.low, e.bler_ci.high}},
                {"group_error_rate", e.group_error_rate},
                {"avg_code_rate", e.avg_code_rate},
                {"avg_power", e.avg_power},
                {"forced_fraction", e.forced_fraction},
                {"avg_rounds", e.avg_rounds},
                {"seed", e.seed}};
}

void write_eval_transcripts(const std::string& path, const codec::CodecParams& params,
                            const protocol::ProtocolConfig& pcfg, int Q,
                            const eval::EstimateConfig& ecfg) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("transcripts: cannot open for writing: " + path);
    for (int start = 0; start < ecfg.n_sessions; start += ecfg.chunk) {
        ad::Tape tape;
        tape.recording = false;
        protocol::BatchSpec bs;
        bs.n_sessions = std::min(ecfg.chunk, ecfg.n_sessions - start);
        bs.master_seed = ecfg.seed;
        bs.first_session_index = static_cast<uint64_t>(start);
        bs.stub = ecfg.stub;
        bs.want_transcripts = true;
        protocol::BatchResult r = protocol::run_batch(tape, params, pcfg, Q, bs);
        for (const auto& t : r.transcripts) f << protocol::transcript_to_json(t);
    }
    if (!f) throw std::runtime_error("transcripts: write failed: " + path);
}

protocol::StubMode parse_stub(const std::string& s) {
    if (s == "oracle") return protocol::StubMode::oracle;
    if (s == "adversarial") return protocol::StubMode::adversarial;
    return protocol::StubMode::none;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"variable-length feedback coding over a deep-learned codec"};
    app.require_subcommand(1);
    app.fallthrough();  // global --config/--set/--seed may follow the subcommand

    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t cli_seed = 0;
    app.add_option("--config", config_path, "configuration file (dotted keys)")
        ->check(CLI::ExistingFile);
    CLI::Option* seed_opt =
        app.add_option("--seed", cli_seed, "master seed (overrides config and DEEPVLF_SEED)");
    app.add_option("--set", overrides, "override one config entry, e.g. --set code.q=3");

    // --- train ---
    auto* cmd_train = app.add_subcommand("train", "two-phase training run");
    std::string train_ckpt = "deepvlf_best.ckpt", train_metrics, train_phase = "both";
    cmd_train->add_option("--checkpoint", train_ckpt, "where the best checkpoint lands");
    cmd_train->add_option("--metrics", train_metrics, "JSONL metrics log");
    cmd_train->add_option("--phase", train_phase, "both|pretrain|finetune")
        ->check(CLI::IsMember({"both", "pretrain", "finetune"}));

    // --- eval ---
    auto* cmd_eval = app.add_subcommand("eval", "Monte-Carlo performance estimate");
    std::string eval_ckpt, eval_stub, eval_csv, eval_transcripts;
    int eval_sessions = 0, eval_workers = 1;
    double eval_gamma = 0.0;
    cmd_eval->add_option("--checkpoint", eval_ckpt, "trained parameters");
    cmd_eval->add_option("--stub", eval_stub, "bypass the networks: oracle|adversarial")
        ->check(CLI::IsMember({"oracle", "adversarial"}));
    cmd_eval->add_option("--sessions", eval_sessions, "session count (default from config)");
    CLI::Option* eval_gamma_opt =
        cmd_eval->add_option("--gamma", eval_gamma, "stopping threshold override");
    cmd_eval->add_option("--workers", eval_workers, "worker threads")
        ->check(CLI::PositiveNumber);
    cmd_eval->add_option("--csv", eval_csv, "append-ready CSV output path");
    cmd_eval->add_option("--transcripts", eval_transcripts, "JSONL transcript dump path");

    // --- sweep ---
    auto* cmd_sweep = app.add_subcommand("sweep", "evaluate a set of stopping thresholds");
    std::vector<double> sweep_gammas;
    std::string sweep_pattern, sweep_csv, sweep_stub;
    int sweep_sessions = 0, sweep_workers = 1;
    cmd_sweep->add_option("--gammas", sweep_gammas, "thresholds to evaluate")
        ->delimiter(',')
        ->required();
    cmd_sweep->add_option("--checkpoint-pattern", sweep_pattern,
                          "checkpoint path; '{gamma}' expands per threshold");
    cmd_sweep->add_option("--stub", sweep_stub, "oracle|adversarial")
        ->check(CLI::IsMember({"oracle", "adversarial"}));
    cmd_sweep->add_option("--sessions", sweep_sessions, "sessions per point");
    cmd_sweep->add_option("--workers", sweep_workers, "worker threads")
        ->check(CLI::PositiveNumber);
    cmd_sweep->add_option("--csv", sweep_csv, "CSV output path");

    // --- gradcheck ---
    auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");

    // --- replay ---
    auto* cmd_replay = app.add_subcommand("replay", "re-run and verify recorded transcripts");
    std::string replay_path, replay_ckpt;
    cmd_replay->add_option("--transcripts", replay_path, "JSONL transcript file")->required();
    cmd_replay->add_option("--checkpoint", replay_ckpt,
                           "parameters the transcripts were made with");

    // --- baseline ---
    auto* cmd_base = app.add_subcommand("baseline", "uncoded sign-decision error rates");
    std::vector<double> base_snrs = {0.0, 1.0, 3.0, 6.0};
    int64_t base_bits = 100000;
    cmd_base->add_option("--snrs", base_snrs, "forward SNRs in dB")->delimiter(',');
    cmd_base->add_option("--bits", base_bits, "bits per point")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
            return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        config::Kv kv;
        if (!config_path.empty()) kv = config::Kv::parse_file(config_path);
        for (const std::string& ov : overrides) {
            size_t eq = ov.find('=');
            if (eq == std::string::npos)
                throw config::KvError("--set expects key=value (got '" + ov + "')");
            kv.set(ov.substr(0, eq), ov.substr(eq + 1));
        }
        uint64_t seed = resolve_seed(seed_opt, cli_seed, kv);
        kv.set("seed", std::to_string(seed));
        config::RunConfig rc = config::RunConfig::from_kv(kv);

        if (app.got_subcommand(cmd_train)) {
            training::TrainConfig tcfg = rc.train;
            tcfg.checkpoint_path = train_ckpt;
            tcfg.metrics_path = train_metrics;
            tcfg.phase_pretrain = train_phase != "finetune";
            tcfg.phase_finetune = train_phase != "pretrain";
            training::TrainReport rep = training::train(tcfg, rc.protocol, rc.Q, rc.codec);
            json out{{"steps_run", rep.steps_run},
                     {"diverged", rep.diverged},
                     {"first_loss", rep.first_loss},
                     {"last_loss", rep.last_loss},
                     {"best_saved", rep.best_saved}};
            if (rep.best_saved) {
                out["checkpoint"] = train_ckpt;
                out["best_bler"] = rep.best.bler;
                out["best_avg_rate"] = rep.best.avg_rate;
                out["best_avg_power"] = rep.best.avg_power;
            }
            std::cout << out.dump() << "\n";
            return rep.diverged ? kExitNumeric : kExitOk;
        }

        if (app.got_subcommand(cmd_eval)) {
            eval::EstimateConfig ecfg;
            ecfg.n_sessions = eval_sessions > 0 ? eval_sessions : rc.eval_sessions;
            ecfg.seed = seed;
            ecfg.chunk = rc.eval_chunk;
            ecfg.workers = eval_workers;
            ecfg.stub = parse_stub(eval_stub);
            codec::CodecParams params;
            if (ecfg.stub == protocol::StubMode::none) {
                if (eval_ckpt.empty())
                    throw config::KvError("eval: --checkpoint is required without --stub");
                params = codec::load_checkpoint(eval_ckpt, rc.codec);
            } else {
                params = codec::init_params(rc.codec, seed);
            }
            protocol::ProtocolConfig pcfg = rc.protocol;
            if (eval_gamma_opt->count() > 0) pcfg.gamma = eval_gamma;
            eval::Estimate e = eval::estimate(params, pcfg, rc.Q, ecfg);
            std::cout << estimate_json(e).dump() << "\n";
            if (!eval_csv.empty()) eval::write_csv({e}, eval_csv);
            if (!eval_transcripts.empty())
                write_eval_transcripts(eval_transcripts, params, pcfg, rc.Q, ecfg);
            return kExitOk;
        }

        if (app.got_subcommand(cmd_sweep)) {
            eval::SweepConfig scfg;
            scfg.gammas = sweep_gammas;
            scfg.checkpoint_pattern = sweep_pattern;
            scfg.est.n_sessions = sweep_sessions > 0 ? sweep_sessions : rc.eval_sessions;
            scfg.est.seed = seed;
            scfg.est.chunk = rc.eval_chunk;
            scfg.est.workers = sweep_workers;
            scfg.est.stub = parse_stub(sweep_stub);
            if (scfg.est.stub == protocol::StubMode::none && sweep_pattern.empty())
                throw config::KvError("sweep: --checkpoint-pattern is required without --stub");
            eval::SweepResult res = eval::sweep(rc.codec, rc.protocol, rc.Q, scfg);
            for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";
            for (const auto& e : res.points) std::cout << estimate_json(e).dump() << "\n";
            if (!sweep_csv.empty()) eval::write_csv(res.points, sweep_csv);
            return res.points.empty() ? kExitNumeric : kExitOk;
        }

        if (app.got_subcommand(cmd_gc)) {
            training::GradCheckReport rep = training::grad_check(seed);
            json out{{"n_coords", rep.n_coords},
                     {"p95_rel", rep.p95_rel},
                     {"max_rel", rep.max_rel},
                     {"scale_linearity", rep.scale_linearity},
                     {"zero_grad_max", rep.zero_grad_max},
                     {"pass", rep.pass}};
            std::cout << out.dump() << "\n";
            return rep.pass ? kExitOk : kExitNumeric;
        }

        if (app.got_subcommand(cmd_replay)) {
            std::vector<protocol::SessionTranscript> ts =
                protocol::read_transcripts(replay_path);
            if (ts.empty()) throw std::runtime_error("replay: no transcripts in " + replay_path);
            codec::CodecParams params;
            bool have_params = false;
            if (!replay_ckpt.empty()) {
                codec::CodecConfig expect = rc.codec;
                expect.m = ts[0].m;
                expect.t_max = ts[0].t_max;
                params = codec::load_checkpoint(replay_ckpt, expect);
                have_params = true;
            }
            int failures = 0;
            for (const auto& t : ts) {
                if (!have_params) {
                    if (t.stub == 0)
                        throw config::KvError(
                            "replay: --checkpoint is required for non-stub transcripts");
                    codec::CodecConfig cfg = rc.codec;
                    cfg.m = t.m;
                    cfg.t_max = t.t_max;
                    params = codec::init_params(cfg, seed);
                }
                protocol::ReplayReport r = protocol::replay_verify(t, params);
                json out{{"session", t.session_index}, {"pass", r.pass}};
                if (!r.pass) {
                    out["field"] = r.field;
                    out["round"] = r.first_diff_round;
                    ++failures;
                }
                std::cout << out.dump() << "\n";
            }
            std::cout << json{{"total", ts.size()}, {"failures", failures}}.dump() << "\n";
            return failures == 0 ? kExitOk : kExitNumeric;
        }

        if (app.got_subcommand(cmd_base)) {
            for (double snr : base_snrs) {
                eval::UncodedPoint p = eval::baseline_uncoded(snr, base_bits, seed);
                std::cout << json{{"snr_db", p.snr_db},
                                  {"bits", p.bits},
                                  {"errors", p.errors},
                                  {"ber", p.ber},
                                  {"ber_theory", p.ber_theory}}
                                 .dump()
                          << "\n";
            }
            return kExitOk;
        }

        return kExitUsage;
    } catch (const config::KvError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
}
