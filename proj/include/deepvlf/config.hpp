#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepvlf/codec.hpp"
#include "deepvlf/protocol.hpp"
#include "deepvlf/training.hpp"

namespace deepvlf::config {

struct KvError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Flat dotted-key configuration text: one `key = value` per line, `#` starts
// a comment, later assignments win. Emission is canonical (winning value at
// the key's first position), so emit(parse(emit(x))) == emit(x).
class Kv {
  public:
    static Kv parse_text(const std::string& text);
    static Kv parse_file(const std::string& path);

    std::string emit() const;
    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  private:
    const std::string* find(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> items_;
};

// Everything one run needs, with the large-scale setup as the default.
struct RunConfig {
    int Q = 17;
    codec::CodecConfig codec;          // 3-bit groups, 15-round cap
    protocol::ProtocolConfig protocol; // threshold, gate, channel
    training::TrainConfig train;
    int eval_sessions = 1000;
    int eval_chunk = 64;
    uint64_t seed = 1;

    RunConfig();

    // Field-level messages name the offending key; unknown keys are errors.
    static RunConfig from_kv(const Kv& kv);
    void validate() const;
};

}  // namespace deepvlf::config
