#pragma once

#include <span>
#include <vector>

#include "deepvlf/rng.hpp"

namespace deepvlf::channel {

enum class FeedbackMode { noiseless, awgn };

struct ChannelParams {
    double forward_snr_db = 1.0;
    FeedbackMode feedback_mode = FeedbackMode::noiseless;
    double feedback_snr_db = 20.0;
    // Exact pass-through on the forward link (infinite-SNR limit); used by
    // harness self-tests.
    bool forward_noiseless = false;

    double sigma2_forward() const;
    double sigma2_feedback() const;
};

double snr_db_to_sigma2(double snr_db);

// y = x + w, w ~ N(0, sigma2_forward) i.i.d., drawn from the stream at
// counters [counter_base, counter_base + len).
std::vector<double> transmit_forward(std::span<const double> x, const ChannelParams& params,
                                     const rng::Stream& stream, uint64_t counter_base = 0);

// Noiseless mode returns y exactly; awgn mode adds noise at feedback_snr_db.
std::vector<double> transmit_feedback(std::span<const double> y, const ChannelParams& params,
                                      const rng::Stream& stream, uint64_t counter_base = 0);

// Mean squared value per transmitted symbol.
double measure_avg_power(std::span<const double> symbols);

}  // namespace deepvlf::channel
