#include "deepvlf/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "deepvlf/channel.hpp"
#include "deepvlf/rng.hpp"

namespace deepvlf::eval {

Ci wilson_interval(int64_t successes, int64_t trials, double z) {
    if (trials <= 0) return {0.0, 1.0};
    if (successes < 0 || successes > trials)
        throw std::invalid_argument("wilson_interval: successes out of [0, trials]");
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    Ci ci;
    // The edges are exact when every trial agreed; don't let rounding dust in.
    ci.low = successes == 0 ? 0.0 : std::max(0.0, center - half);
    ci.high = successes == trials ? 1.0 : std::min(1.0, center + half);
    return ci;
}

Estimate estimate(const codec::CodecParams& params, const protocol::ProtocolConfig& pcfg,
                  int Q, const EstimateConfig& ecfg) {
    if (ecfg.n_sessions < 1) throw std::invalid_argument("estimate: need at least one session");
    if (ecfg.chunk < 1) throw std::invalid_argument("estimate: chunk must be >= 1");
    const int K = Q * params.cfg.m;

    const int n_chunks = (ecfg.n_sessions + ecfg.chunk - 1) / ecfg.chunk;
    std::vector<protocol::Aggregate> parts(n_chunks);

    auto run_chunk = [&](int c) {
        const int start = c * ecfg.chunk;
        const int bsz = std::min(ecfg.chunk, ecfg.n_sessions - start);
        ad::Tape tape;
        tape.recording = false;
        protocol::BatchSpec bs;
        bs.n_sessions = bsz;
        bs.master_seed = ecfg.seed;
        bs.first_session_index = static_cast<uint64_t>(start);
        bs.stub = ecfg.stub;
        protocol::BatchResult r = protocol::run_batch(tape, params, pcfg, Q, bs);
        for (const auto& o : r.outcomes) parts[c].add(o, Q);
    };

    const int workers = std::max(1, std::min(ecfg.workers, n_chunks));
    if (workers == 1) {
        for (int c = 0; c < n_chunks; ++c) run_chunk(c);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1))
                    run_chunk(c);
            });
        for (auto& t : pool) t.join();
    }

    protocol::Aggregate agg;
    for (const auto& p : parts) agg.merge(p);  // session order, not completion order

    Estimate e;
    e.gamma = pcfg.gamma;
    e.snr_fwd_db = pcfg.ch.forward_snr_db;
    e.snr_fb_db = pcfg.ch.feedback_mode == channel::FeedbackMode::awgn
                      ? pcfg.ch.feedback_snr_db
                      : std::numeric_limits<double>::infinity();
    e.n_sessions = agg.n_sessions;
    e.bler = agg.bler();
    e.bler_ci = wilson_interval(agg.block_errors, agg.n_sessions);
    e.group_error_rate = agg.group_error_rate();
    e.avg_code_rate = agg.avg_rate(K);
    e.avg_power = agg.avg_power();
    e.forced_fraction = agg.forced_fraction();
    e.avg_rounds = agg.avg_rounds();
    e.seed = ecfg.seed;
    e.agg = agg;
    return e;
}

std::string sweep_checkpoint_path(const std::string& pattern, double gamma) {
    std::string out = pattern;
    const std::string tag = "{gamma}";
    size_t pos = out.find(tag);
    if (pos == std::string::npos) return out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", gamma);
    out.replace(pos, tag.size(), buf);
    return out;
}

SweepResult sweep(const codec::CodecConfig& ccfg, const protocol::ProtocolConfig& base,
                  int Q, const SweepConfig& scfg) {
    if (scfg.gammas.empty()) throw std::invalid_argument("sweep: no thresholds given");
    SweepResult res;
    for (double gamma : scfg.gammas) {
        std::string path = sweep_checkpoint_path(scfg.checkpoint_pattern, gamma);
        codec::CodecParams params;
        if (scfg.est.stub == protocol::StubMode::none) {
            std::ifstream probe(path, std::ios::binary);
            if (!probe) {
                std::ostringstream w;
                w << "skipping gamma=" << gamma << ": no checkpoint at " << path;
                res.warnings.push_back(w.str());
                continue;
            }
            probe.close();
            params = codec::load_checkpoint(path, ccfg);
        } else {
            params = codec::init_params(ccfg, scfg.est.seed);
        }
        protocol::ProtocolConfig pcfg = base;
        pcfg.gamma = gamma;
        res.points.push_back(estimate(params, pcfg, Q, scfg.est));
    }
    return res;
}

UncodedPoint baseline_uncoded(double snr_db, int64_t n_bits, uint64_t seed) {
    if (n_bits < 1) throw std::invalid_argument("baseline_uncoded: need at least one bit");
    const double sigma = std::sqrt(channel::snr_db_to_sigma2(snr_db));
    rng::Stream bits(seed, 0xB17ULL);
    rng::Stream noise(seed, 0x4E01ULL);
    int64_t errors = 0;
    for (int64_t i = 0; i < n_bits; ++i) {
        double x = bits.pick(static_cast<uint64_t>(i), 2) ? 1.0 : -1.0;
        double y = x + sigma * noise.gaussian(static_cast<uint64_t>(i));
        double xhat = y >= 0.0 ? 1.0 : -1.0;
        if (xhat != x) ++errors;
    }
    UncodedPoint p;
    p.snr_db = snr_db;
    p.bits = n_bits;
    p.errors = errors;
    p.ber = static_cast<double>(errors) / static_cast<double>(n_bits);
    p.ber_theory = 0.5 * std::erfc(1.0 / (sigma * std::sqrt(2.0)));
    return p;
}

const char* const kCsvHeader =
    "gamma,snr_fwd_db,snr_fb_db,n_sessions,bler,bler_ci_low,bler_ci_high,"
    "group_error_rate,avg_code_rate,avg_power,forced_fraction,seed";

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_csv(const std::vector<Estimate>& points, const std::string& path) {
    std::vector<Estimate> rows = points;
    std::sort(rows.begin(), rows.end(), [](const Estimate& a, const Estimate& b) {
        if (a.avg_code_rate != b.avg_code_rate) return a.avg_code_rate < b.avg_code_rate;
        return a.gamma < b.gamma;
    });
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("csv: cannot open for writing: " + path);
    f << kCsvHeader << "\n";
    for (const auto& e : rows) {
        f << fmt_double(e.gamma) << ',' << fmt_double(e.snr_fwd_db) << ','
          << fmt_double(e.snr_fb_db) << ',' << e.n_sessions << ',' << fmt_double(e.bler) << ','
          << fmt_double(e.bler_ci.low) << ',' << fmt_double(e.bler_ci.high) << ','
          << fmt_double(e.group_error_rate) << ',' << fmt_double(e.avg_code_rate) << ','
          << fmt_double(e.avg_power) << ',' << fmt_double(e.forced_fraction) << ',' << e.seed
          << "\n";
    }
    if (!f) throw std::runtime_error("csv: write failed: " + path);
}

std::vector<Estimate> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("csv: cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("csv: empty file: " + path);
    if (line != kCsvHeader) throw std::runtime_error("csv: unexpected header in " + path);
    std::vector<Estimate> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 12) throw std::runtime_error("csv: malformed row in " + path);
        Estimate e;
        e.gamma = std::stod(cells[0]);
        e.snr_fwd_db = std::stod(cells[1]);
        e.snr_fb_db = std::stod(cells[2]);
        e.n_sessions = std::stoll(cells[3]);
        e.bler = std::stod(cells[4]);
        e.bler_ci.low = std::stod(cells[5]);
        e.bler_ci.high = std::stod(cells[6]);
        e.group_error_rate = std::stod(cells[7]);
        e.avg_code_rate = std::stod(cells[8]);
        e.avg_power = std::stod(cells[9]);
        e.forced_fraction = std::stod(cells[10]);
        e.seed = std::stoull(cells[11]);
        out.push_back(e);
    }
    return out;
}

}  // namespace deepvlf::eval
