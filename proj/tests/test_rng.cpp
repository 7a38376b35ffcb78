#include <cmath>
#include <cstdint>
#include <set>

#include "deepvlf/rng.hpp"
#include "doctest.h"

using namespace deepvlf::rng;

TEST_CASE("identical keys reproduce identical sequences") {
    Stream a(42, 7), b(42, 7);
    for (uint64_t i = 0; i < 100; ++i) {
        CHECK(a.uniform(i) == b.uniform(i));
        CHECK(a.gaussian(i) == b.gaussian(i));
    }
}

TEST_CASE("samples are pure functions of the counter") {
    Stream s(42, 7);
    double later = s.uniform(500);
    // Reading other counters first (in any order) must not change counter 500.
    Stream s2(42, 7);
    for (uint64_t i = 0; i < 500; ++i) (void)s2.uniform(499 - i);
    CHECK(s2.uniform(500) == later);
}

TEST_CASE("different stream ids and seeds decorrelate") {
    Stream a(42, 7), b(42, 8), c(43, 7);
    int same_ab = 0, same_ac = 0;
    for (uint64_t i = 0; i < 1000; ++i) {
        if (a.uniform(i) == b.uniform(i)) ++same_ab;
        if (a.uniform(i) == c.uniform(i)) ++same_ac;
    }
    CHECK(same_ab == 0);
    CHECK(same_ac == 0);
}

TEST_CASE("uniform stays inside (0, 1]") {
    Stream s(1, 1);
    for (uint64_t i = 0; i < 20000; ++i) {
        double u = s.uniform(i);
        CHECK(u > 0.0);
        CHECK(u <= 1.0);
    }
}

TEST_CASE("gaussian moments") {
    Stream s(5, 99);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0, sum3 = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = s.gaussian(i);
        sum += g;
        sum2 += g * g;
        sum3 += g * g * g;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    double skew = sum3 / n;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
    CHECK(std::fabs(skew) < 0.03);
}

TEST_CASE("cross-stream correlation is negligible") {
    Stream a(5, 1), b(5, 2);
    const int n = 100000;
    double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < n; ++i) {
        double x = a.gaussian(i), y = b.gaussian(i);
        sa += x;
        sb += y;
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    double cov = sab / n - (sa / n) * (sb / n);
    double corr = cov / std::sqrt((saa / n - sa / n * sa / n) * (sbb / n - sb / n * sb / n));
    CHECK(std::fabs(corr) < 0.01);
}

TEST_CASE("pick lands in range and covers it") {
    Stream s(3, 3);
    std::set<uint64_t> seen;
    for (uint64_t i = 0; i < 1000; ++i) {
        uint64_t v = s.pick(i, 8);
        CHECK(v < 8);
        seen.insert(v);
    }
    CHECK(seen.size() == 8);
}

TEST_CASE("session stream ids separate session, round and direction") {
    std::set<uint64_t> ids;
    for (uint64_t sess = 0; sess < 4; ++sess)
        for (uint32_t round = 0; round < 4; ++round)
            for (auto dir : {Dir::forward, Dir::feedback, Dir::message, Dir::aux})
                ids.insert(session_stream_id(sess, round, dir));
    CHECK(ids.size() == 4u * 4u * 4u);
}

TEST_CASE("mix64 spreads consecutive inputs") {
    // Avalanche sanity: hamming distance between mixes of adjacent integers
    // should hover around 32 of 64 bits.
    int total = 0;
    for (uint64_t i = 0; i < 256; ++i) {
        uint64_t d = mix64(i) ^ mix64(i + 1);
        total += __builtin_popcountll(d);
    }
    double avg = total / 256.0;
    CHECK(avg > 28.0);
    CHECK(avg < 36.0);
}
