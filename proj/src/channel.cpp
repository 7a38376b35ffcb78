#include "deepvlf/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace deepvlf::channel {

double snr_db_to_sigma2(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

double ChannelParams::sigma2_forward() const {
    return forward_noiseless ? 0.0 : snr_db_to_sigma2(forward_snr_db);
}

double ChannelParams::sigma2_feedback() const {
    return feedback_mode == FeedbackMode::noiseless ? 0.0 : snr_db_to_sigma2(feedback_snr_db);
}

std::vector<double> transmit_forward(std::span<const double> x, const ChannelParams& params,
                                     const rng::Stream& stream, uint64_t counter_base) {
    std::vector<double> y(x.begin(), x.end());
    double sigma2 = params.sigma2_forward();
    if (sigma2 == 0.0) return y;
    double sigma = std::sqrt(sigma2);
    for (size_t i = 0; i < y.size(); ++i) y[i] += sigma * stream.gaussian(counter_base + i);
    return y;
}

std::vector<double> transmit_feedback(std::span<const double> y, const ChannelParams& params,
                                      const rng::Stream& stream, uint64_t counter_base) {
    std::vector<double> fb(y.begin(), y.end());
    if (params.feedback_mode == FeedbackMode::noiseless) return fb;
    double sigma = std::sqrt(snr_db_to_sigma2(params.feedback_snr_db));
    for (size_t i = 0; i < fb.size(); ++i) fb[i] += sigma * stream.gaussian(counter_base + i);
    return fb;
}

double measure_avg_power(std::span<const double> symbols) {
    if (symbols.empty())
        throw std::invalid_argument("measure_avg_power: no transmitted symbols");
    double s = 0.0;
    for (double x : symbols) s += x * x;
    return s / static_cast<double>(symbols.size());
}

}  // namespace deepvlf::channel
