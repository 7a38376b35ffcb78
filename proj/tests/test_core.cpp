#include <vector>

#include "deepvlf/core.hpp"
#include "deepvlf/rng.hpp"
#include "doctest.h"

using namespace deepvlf::core;

namespace {

BitMessage random_message(int K, uint64_t seed) {
    deepvlf::rng::Stream s(seed, 0);
    BitMessage msg;
    msg.bits.resize(K);
    for (int i = 0; i < K; ++i) msg.bits[i] = static_cast<uint8_t>(s.pick(i, 2));
    return msg;
}

}  // namespace

TEST_CASE("partition splits K bits into Q ordered groups of m") {
    BitMessage msg;
    msg.bits = {1, 0, 1, 1, 1, 0};
    auto groups = partition_message(msg, 3, 2);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].index == 0);
    CHECK(groups[1].index == 1);
    CHECK(groups[2].index == 2);
    CHECK(groups[0].bits == Bits{1, 0});
    CHECK(groups[1].bits == Bits{1, 1});
    CHECK(groups[2].bits == Bits{1, 0});
}

TEST_CASE("partition rejects mismatched sizes") {
    BitMessage msg;
    msg.bits = {1, 0, 1};
    CHECK_THROWS_AS(partition_message(msg, 2, 2), ShapeError);
    CHECK_THROWS_AS(partition_message(msg, 0, 3), ShapeError);
}

TEST_CASE("partition round-trips for a thousand random messages") {
    const int Q = 17, m = 3, K = Q * m;
    for (uint64_t trial = 0; trial < 1000; ++trial) {
        BitMessage msg = random_message(K, trial);
        auto groups = partition_message(msg, Q, m);
        Bits rebuilt;
        for (const auto& g : groups) rebuilt.insert(rebuilt.end(), g.bits.begin(), g.bits.end());
        CHECK(rebuilt == msg.bits);
    }
}

TEST_CASE("bit patterns map to lexicographic indices, first bit most significant") {
    CHECK(bits_to_index(std::vector<uint8_t>{0, 0, 0}) == 0);
    CHECK(bits_to_index(std::vector<uint8_t>{0, 0, 1}) == 1);
    CHECK(bits_to_index(std::vector<uint8_t>{1, 0, 1}) == 5);
    CHECK(bits_to_index(std::vector<uint8_t>{1, 1, 1}) == 7);

    for (int m = 1; m <= 6; ++m)
        for (int idx = 0; idx < (1 << m); ++idx) {
            Bits b = index_to_bits(idx, m);
            CHECK(static_cast<int>(b.size()) == m);
            CHECK(bits_to_index(b) == idx);
        }
}

TEST_CASE("group_to_index agrees with bits_to_index") {
    BitGroup g;
    g.bits = {1, 1, 0};
    CHECK(group_to_index(g) == 6);
}

TEST_CASE("threshold check fires exactly at gamma") {
    std::vector<double> p = {0.05, 0.9, 0.05};
    CHECK(threshold_check(p, 0.9));
    CHECK(threshold_check(p, 0.85));
    CHECK_FALSE(threshold_check(p, 0.90001));
}

TEST_CASE("threshold check rejects vectors off the simplex") {
    std::vector<double> neg = {-0.1, 1.1};
    CHECK_THROWS(threshold_check(neg, 0.5));
    std::vector<double> bad_sum = {0.5, 0.6};
    CHECK_THROWS(threshold_check(bad_sum, 0.5));
}

TEST_CASE("mask updates clear crossed groups and never resurrect") {
    BeliefMatrix beliefs(3, 2, 1);
    beliefs.at(0, 0) = 0.95;
    beliefs.at(0, 1) = 0.05;
    beliefs.at(1, 0) = 0.5;
    beliefs.at(1, 1) = 0.5;
    beliefs.at(2, 0) = 0.1;
    beliefs.at(2, 1) = 0.9;

    DecodeMask mask;
    mask.m = {1, 1, 1};
    mask.round = 0;
    DecodeMask next = update_mask(mask, beliefs, 0.9);
    CHECK(next.m == std::vector<uint8_t>{0, 1, 0});
    CHECK(next.round == 1);
    CHECK(next.active_count() == 1);
    CHECK_FALSE(next.all_zero());

    // Group 0's belief collapses next round; it must stay cleared anyway.
    BeliefMatrix later(3, 2, 2);
    later.at(0, 0) = 0.5;
    later.at(0, 1) = 0.5;
    later.at(1, 0) = 0.99;
    later.at(1, 1) = 0.01;
    later.at(2, 0) = 0.5;
    later.at(2, 1) = 0.5;
    DecodeMask final_mask = update_mask(next, later, 0.9);
    CHECK(final_mask.m == std::vector<uint8_t>{0, 0, 0});
    CHECK(final_mask.all_zero());
}

TEST_CASE("code rate is K over summed stopping rounds") {
    StoppingRecord rec(3);
    rec.tau_star = {5, 5, 5};
    CHECK(compute_code_rate(rec, 6) == doctest::Approx(0.4));

    rec.tau_star = {1, 2, 3};
    CHECK(rec.total_rounds() == 6);
    CHECK(compute_code_rate(rec, 6) == doctest::Approx(1.0));
}

TEST_CASE("code rate refuses unset stopping rounds") {
    StoppingRecord rec(2);
    rec.tau_star = {3, 0};
    CHECK_THROWS(compute_code_rate(rec, 4));
}
