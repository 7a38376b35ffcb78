#include "deepvlf/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "deepvlf/channel.hpp"

namespace deepvlf::config {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.') return false;
    return true;
}

}  // namespace

Kv Kv::parse_text(const std::string& text) {
    Kv kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw KvError("config: line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key))
            throw KvError("config: line " + std::to_string(lineno) + ": bad key '" + key + "'");
        kv.set(key, value);
    }
    return kv;
}

Kv Kv::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

std::string Kv::emit() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
    return out;
}

bool Kv::has(const std::string& key) const { return find(key) != nullptr; }

void Kv::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_)
        if (k == key) {
            v = value;
            return;
        }
    items_.emplace_back(key, value);
}

const std::string* Kv::find(const std::string& key) const {
    for (const auto& [k, v] : items_)
        if (k == key) return &v;
    return nullptr;
}

std::string Kv::get_str(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

int Kv::get_int(const std::string& key, int fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        int r = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw KvError("config: " + key + " expects an integer (got '" + *v + "')");
    }
}

uint64_t Kv::get_u64(const std::string& key, uint64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        unsigned long long r = std::stoull(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw KvError("config: " + key + " expects an unsigned integer (got '" + *v + "')");
    }
}

double Kv::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        double r = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw KvError("config: " + key + " expects a number (got '" + *v + "')");
    }
}

bool Kv::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::string s = *v;
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw KvError("config: " + key + " expects a boolean (got '" + *v + "')");
}

std::vector<double> Kv::get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    std::stringstream ss(*v);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (cell.empty()) continue;
        try {
            size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw KvError("config: " + key + " expects comma-separated numbers (got '" + *v +
                          "')");
        }
    }
    if (out.empty())
        throw KvError("config: " + key + " expects comma-separated numbers (got '" + *v + "')");
    return out;
}

RunConfig::RunConfig() {
    train.batch = 8192;
    train.pretrain_steps = 2000;
    train.finetune_steps = 2000;
    train.gamma_target = protocol.gamma;
}

RunConfig RunConfig::from_kv(const Kv& kv) {
    static const char* known[] = {
        "code.m",          "code.q",
        "code.k",          "code.t_max",
        "code.d_latent",   "code.tau_vd",
        "code.attn_scale", "code.attn_proj",
        "protocol.gamma",  "protocol.tau_plus",
        "channel.snr_fwd_db", "channel.feedback",
        "channel.snr_fb_db",  "channel.forward_noiseless",
        "train.batch",     "train.lr",
        "train.weight_decay", "train.pretrain_steps",
        "train.finetune_steps", "train.val_every",
        "train.val_sessions",   "train.loss",
        "train.vartheta",  "train.epsilon",
        "train.gamma_grid", "train.gamma_target",
        "eval.sessions",   "eval.chunk",
        "seed",
    };
    for (const auto& [k, v] : kv.items()) {
        bool ok = false;
        for (const char* name : known)
            if (k == name) ok = true;
        if (!ok) throw KvError("config: unknown key '" + k + "'");
    }

    RunConfig rc;
    rc.codec.m = kv.get_int("code.m", rc.codec.m);
    rc.Q = kv.get_int("code.q", rc.Q);
    rc.codec.t_max = kv.get_int("code.t_max", rc.codec.t_max);
    rc.codec.d_latent = kv.get_int("code.d_latent", rc.codec.d_latent);
    rc.codec.tau_vd = kv.get_int("code.tau_vd", rc.codec.tau_vd);
    rc.codec.attn_scale = kv.get_bool("code.attn_scale", rc.codec.attn_scale);
    rc.codec.attn_proj = kv.get_bool("code.attn_proj", rc.codec.attn_proj);
    if (kv.has("code.k")) {
        int k = kv.get_int("code.k", 0);
        if (k != rc.Q * rc.codec.m)
            throw KvError("config: code.k (" + std::to_string(k) +
                          ") must equal code.q * code.m (" +
                          std::to_string(rc.Q * rc.codec.m) + ")");
    }

    rc.protocol.gamma = kv.get_double("protocol.gamma", rc.protocol.gamma);
    rc.protocol.tau_plus = kv.get_int("protocol.tau_plus", rc.protocol.tau_plus);

    rc.protocol.ch.forward_snr_db =
        kv.get_double("channel.snr_fwd_db", rc.protocol.ch.forward_snr_db);
    std::string fb = kv.get_str("channel.feedback", "noiseless");
    if (fb == "noiseless")
        rc.protocol.ch.feedback_mode = channel::FeedbackMode::noiseless;
    else if (fb == "awgn")
        rc.protocol.ch.feedback_mode = channel::FeedbackMode::awgn;
    else
        throw KvError("config: channel.feedback must be 'noiseless' or 'awgn' (got '" + fb +
                      "')");
    rc.protocol.ch.feedback_snr_db =
        kv.get_double("channel.snr_fb_db", rc.protocol.ch.feedback_snr_db);
    rc.protocol.ch.forward_noiseless =
        kv.get_bool("channel.forward_noiseless", rc.protocol.ch.forward_noiseless);

    rc.train.batch = kv.get_int("train.batch", rc.train.batch);
    rc.train.lr = kv.get_double("train.lr", rc.train.lr);
    rc.train.weight_decay = kv.get_double("train.weight_decay", rc.train.weight_decay);
    rc.train.pretrain_steps = kv.get_int("train.pretrain_steps", rc.train.pretrain_steps);
    rc.train.finetune_steps = kv.get_int("train.finetune_steps", rc.train.finetune_steps);
    rc.train.val_every = kv.get_int("train.val_every", rc.train.val_every);
    rc.train.val_sessions = kv.get_int("train.val_sessions", rc.train.val_sessions);
    std::string loss = kv.get_str("train.loss", "exp");
    if (loss == "exp")
        rc.train.loss.variant = training::LossConfig::Variant::exp_weight;
    else if (loss == "equal")
        rc.train.loss.variant = training::LossConfig::Variant::equal_weight;
    else if (loss == "single")
        rc.train.loss.variant = training::LossConfig::Variant::single;
    else
        throw KvError("config: train.loss must be 'exp', 'equal' or 'single' (got '" + loss +
                      "')");
    rc.train.loss.vartheta = kv.get_double("train.vartheta", rc.train.loss.vartheta);
    rc.train.loss.epsilon = kv.get_double("train.epsilon", rc.train.loss.epsilon);
    rc.train.gamma_grid = kv.get_double_list("train.gamma_grid", rc.train.gamma_grid);
    rc.train.gamma_target = kv.get_double("train.gamma_target", rc.protocol.gamma);

    rc.eval_sessions = kv.get_int("eval.sessions", rc.eval_sessions);
    rc.eval_chunk = kv.get_int("eval.chunk", rc.eval_chunk);
    rc.seed = kv.get_u64("seed", rc.seed);
    rc.train.seed = rc.seed;

    rc.validate();
    return rc;
}

void RunConfig::validate() const {
    try {
        codec.validate();
    } catch (const std::invalid_argument& e) {
        throw KvError(std::string("config: ") + e.what());
    }
    if (Q < 1) throw KvError("config: code.q must be >= 1 (got " + std::to_string(Q) + ")");
    if (!(protocol.gamma > 0.0 && protocol.gamma < 1.0))
        throw KvError("config: protocol.gamma must lie strictly between 0 and 1");
    if (protocol.tau_plus < 0)
        throw KvError("config: protocol.tau_plus must be >= 0 (0 = derive)");
    int gate = protocol.effective_tau_plus(codec.m);
    if (gate > codec.t_max)
        throw KvError("config: the first allowed decode round (" + std::to_string(gate) +
                      ") exceeds code.t_max (" + std::to_string(codec.t_max) + ")");
    if (train.batch < 1) throw KvError("config: train.batch must be >= 1");
    if (!(train.lr > 0.0)) throw KvError("config: train.lr must be positive");
    if (train.weight_decay < 0.0) throw KvError("config: train.weight_decay must be >= 0");
    if (train.pretrain_steps < 0 || train.finetune_steps < 0)
        throw KvError("config: training step counts must be >= 0");
    if (train.val_sessions < 1) throw KvError("config: train.val_sessions must be >= 1");
    for (double g : train.gamma_grid)
        if (!(g > 0.0 && g < 1.0))
            throw KvError("config: train.gamma_grid entries must lie strictly between 0 and 1");
    if (!(train.gamma_target > 0.0 && train.gamma_target < 1.0))
        throw KvError("config: train.gamma_target must lie strictly between 0 and 1");
    if (eval_sessions < 1) throw KvError("config: eval.sessions must be >= 1");
    if (eval_chunk < 1) throw KvError("config: eval.chunk must be >= 1");
}

}  // namespace deepvlf::config
