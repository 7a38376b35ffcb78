#include <cstdio>
#include <fstream>

#include "deepvlf/codec.hpp"
#include "deepvlf/rng.hpp"
#include "doctest.h"

using namespace deepvlf;

namespace {

codec::CodecConfig tiny_cfg() {
    codec::CodecConfig c;
    c.m = 2;
    c.t_max = 5;
    c.d_latent = 8;
    c.tau_vd = 3;
    return c;
}

codec::CodecParams zeroed_params(const codec::CodecConfig& cfg) {
    codec::CodecParams p = codec::init_params(cfg, 1);
    for (auto& [name, m] : p.arrays)
        if (name != "norm_var")
            for (double& v : m.a) v = 0.0;
    return p;
}

}  // namespace

TEST_CASE("config fingerprint and knowledge widths") {
    codec::CodecConfig c;
    CHECK(c.digest() == "m3_t15_d32_vd3_s1_p0");
    CHECK(c.alphabet() == 8);
    CHECK(c.enc_in() == 3 + 2 * 15);
    CHECK(c.dec_in() == 15 + 8);

    codec::CodecConfig bad = c;
    bad.m = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.m = 17;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.t_max = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.d_latent = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.tau_vd = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter init is seeded and bounded") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams a = codec::init_params(cfg, 42);
    codec::CodecParams b = codec::init_params(cfg, 42);
    codec::CodecParams c = codec::init_params(cfg, 43);
    CHECK(codec::content_digest(a) == codec::content_digest(b));
    CHECK(codec::content_digest(a) != codec::content_digest(c));

    // Biases and running means start at zero, running variances at one.
    for (const auto& [name, m] : a.arrays) {
        if (name == "norm_var") {
            for (double v : m.a) CHECK(v == 1.0);
        } else if (name == "norm_mean" || name.find("_b") != std::string::npos) {
            for (double v : m.a) CHECK(v == 0.0);
        }
    }
    const Mat& w1 = a.at("enc_fv_w1");
    double lim = std::sqrt(6.0 / (cfg.enc_in() + cfg.d_latent));
    bool nonzero = false;
    for (double v : w1.a) {
        CHECK(std::abs(v) <= lim);
        if (v != 0.0) nonzero = true;
    }
    CHECK(nonzero);
    CHECK_FALSE(codec::CodecParams::learnable("norm_mean"));
    CHECK_FALSE(codec::CodecParams::learnable("norm_var"));
    CHECK(codec::CodecParams::learnable("enc_fv_w1"));
}

TEST_CASE("checkpoint round trip and mismatch rejection") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 7);
    const std::string path = "ckpt_roundtrip.bin";
    codec::save_checkpoint(p, path);

    codec::CodecParams q = codec::load_checkpoint(path, cfg);
    CHECK(codec::content_digest(q) == codec::content_digest(p));
    for (size_t i = 0; i < p.arrays.size(); ++i) {
        CHECK(q.arrays[i].first == p.arrays[i].first);
        CHECK(q.arrays[i].second.a == p.arrays[i].second.a);
    }

    codec::CodecConfig other = cfg;
    other.d_latent = 16;
    CHECK_THROWS(codec::load_checkpoint(path, other));
    other = cfg;
    other.t_max = 6;
    CHECK_THROWS(codec::load_checkpoint(path, other));
    other = cfg;
    other.attn_scale = false;
    CHECK_THROWS(codec::load_checkpoint(path, other));

    // Flip one payload byte: the stored content digest must catch it.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        in.close();
        bytes[bytes.size() / 2] ^= 0x20;
        std::ofstream out("ckpt_corrupt.bin", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS(codec::load_checkpoint("ckpt_corrupt.bin", cfg));

    // Truncation.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        in.close();
        bytes.resize(bytes.size() - 16);
        std::ofstream out("ckpt_short.bin", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS(codec::load_checkpoint("ckpt_short.bin", cfg));
    CHECK_THROWS(codec::load_checkpoint("no_such_file.bin", cfg));

    std::remove(path.c_str());
    std::remove("ckpt_corrupt.bin");
    std::remove("ckpt_short.bin");
}

TEST_CASE("feature stack: zero weights give zero output at every depth") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = zeroed_params(cfg);
    Mat know(3, cfg.enc_in());
    for (int round : {1, 3, 4, 5}) {
        Mat out = codec::vdfe_forward(p, know, round, codec::Side::encoder);
        CHECK(out.rows == 3);
        CHECK(out.cols == cfg.d_latent);
        for (double v : out.a) CHECK(v == 0.0);
    }
}

TEST_CASE("feature stack: depth switches after the configured round") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 11);
    Mat know(2, cfg.enc_in());
    rng::Stream s(3, 4);
    for (size_t i = 0; i < know.a.size(); ++i) know.a[i] = s.gaussian(i);

    Mat r1 = codec::vdfe_forward(p, know, 1, codec::Side::encoder);
    Mat r3 = codec::vdfe_forward(p, know, 3, codec::Side::encoder);
    Mat r4 = codec::vdfe_forward(p, know, 4, codec::Side::encoder);
    Mat r5 = codec::vdfe_forward(p, know, 5, codec::Side::encoder);
    CHECK(r1.a == r3.a);  // same shallow path up to the switch round
    CHECK(r4.a == r5.a);  // same deep path past it
    bool differ = false;
    for (size_t i = 0; i < r3.a.size(); ++i)
        if (r3.a[i] != r4.a[i]) differ = true;
    CHECK(differ);
}

TEST_CASE("attention: identical latents spread weight uniformly") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 5);
    for (int Q : {2, 3}) {
        Mat lat(Q, cfg.d_latent);
        rng::Stream s(9, Q);
        for (int j = 0; j < cfg.d_latent; ++j) {
            double v = s.gaussian(j);
            for (int i = 0; i < Q; ++i) lat(i, j) = v;
        }
        core::DecodeMask mask{std::vector<uint8_t>(Q, 1), 1};
        codec::AttentionCoeffs ac = codec::attention_coeffs(p, lat, mask, codec::Side::encoder);
        for (size_t i = 0; i < ac.rho.a.size(); ++i)
            CHECK(ac.rho.a[i] == doctest::Approx(1.0 / Q).epsilon(1e-12));
    }
}

TEST_CASE("attention: every check column is a simplex over the nodes") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 6);
    const int Q = 4;
    Mat lat(Q, cfg.d_latent);
    rng::Stream s(10, 0);
    for (size_t i = 0; i < lat.a.size(); ++i) lat.a[i] = s.gaussian(i);
    core::DecodeMask mask{{1, 0, 1, 1}, 2};
    codec::AttentionCoeffs ac = codec::attention_coeffs(p, lat, mask, codec::Side::decoder);
    CHECK(ac.active == mask.m);
    for (int j = 0; j < Q; ++j) {
        if (!ac.active[j]) continue;
        double sum = 0.0;
        for (int i = 0; i < Q; ++i) {
            CHECK(ac.rho(i, j) > 0.0);  // no node is ever excluded as an input
            sum += ac.rho(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("encoder knowledge layout fills exactly the elapsed rounds") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::EncSessionState st;
    st.bits_bipolar = Mat(2, 2);
    st.bits_bipolar(0, 0) = 1.0;
    st.bits_bipolar(0, 1) = -1.0;
    st.bits_bipolar(1, 0) = -1.0;
    st.bits_bipolar(1, 1) = 1.0;

    Mat k1 = codec::assemble_knowledge(codec::Side::encoder, &st, nullptr, 1, cfg);
    CHECK(k1.cols == cfg.enc_in());
    CHECK(k1(0, 0) == 1.0);
    CHECK(k1(0, 1) == -1.0);
    CHECK(k1(1, 0) == -1.0);
    for (int j = cfg.m; j < cfg.enc_in(); ++j) {
        CHECK(k1(0, j) == 0.0);
        CHECK(k1(1, j) == 0.0);
    }

    st.c_cols = {Mat(2, 1), Mat(2, 1)};
    st.y_cols = {Mat(2, 1), Mat(2, 1)};
    st.c_cols[0](0, 0) = 1.0;
    st.c_cols[0](1, 0) = 2.0;
    st.y_cols[0](0, 0) = 3.0;
    st.y_cols[0](1, 0) = 4.0;
    st.c_cols[1](0, 0) = 5.0;
    st.c_cols[1](1, 0) = 6.0;
    st.y_cols[1](0, 0) = 7.0;
    st.y_cols[1](1, 0) = 8.0;

    Mat k3 = codec::assemble_knowledge(codec::Side::encoder, &st, nullptr, 3, cfg);
    CHECK(k3(0, 2) == 1.0);  // round-1 parity slot
    CHECK(k3(0, 3) == 3.0);  // round-1 feedback slot
    CHECK(k3(0, 4) == 5.0);  // round-2 parity slot
    CHECK(k3(0, 5) == 7.0);
    CHECK(k3(1, 2) == 2.0);
    CHECK(k3(1, 3) == 4.0);
    CHECK(k3(1, 4) == 6.0);
    CHECK(k3(1, 5) == 8.0);
    for (int j = cfg.m + 4; j < cfg.enc_in(); ++j) CHECK(k3(0, j) == 0.0);

    // Only rounds before the current one may occupy slots.
    Mat k2 = codec::assemble_knowledge(codec::Side::encoder, &st, nullptr, 2, cfg);
    CHECK(k2(0, 4) == 0.0);
    CHECK(k2(0, 5) == 0.0);

    CHECK_THROWS_AS(codec::assemble_knowledge(codec::Side::encoder, &st, nullptr, 0, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        codec::assemble_knowledge(codec::Side::encoder, &st, nullptr, cfg.t_max + 1, cfg),
        std::invalid_argument);
}

TEST_CASE("decoder knowledge layout: received slots then belief slots") {
    codec::CodecConfig cfg = tiny_cfg();
    const int Q = 2, A = cfg.alphabet();
    codec::DecSessionState st;
    st.p_know = Mat(Q, A);
    st.p_record = Mat(Q, A);
    st.y_cols = {Mat(Q, 1), Mat(Q, 1)};
    st.y_cols[0](0, 0) = 0.5;
    st.y_cols[1](0, 0) = -0.5;
    st.p_know(0, 2) = 0.25;

    Mat k2 = codec::assemble_knowledge(codec::Side::decoder, nullptr, &st, 2, cfg);
    CHECK(k2.cols == cfg.dec_in());
    CHECK(k2(0, 0) == 0.5);
    CHECK(k2(0, 1) == -0.5);
    for (int j = 2; j < cfg.t_max; ++j) CHECK(k2(0, j) == 0.0);
    CHECK(k2(0, cfg.t_max + 2) == 0.25);

    // At the first round the belief slots are still all zero.
    codec::DecSessionState st1;
    st1.p_know = Mat(Q, A);
    st1.p_record = Mat(Q, A);
    st1.y_cols = {Mat(Q, 1)};
    Mat k1 = codec::assemble_knowledge(codec::Side::decoder, nullptr, &st1, 1, cfg);
    for (int j = cfg.t_max; j < cfg.dec_in(); ++j) CHECK(k1(0, j) == 0.0);
}

TEST_CASE("decode and commit: frozen groups keep their decision-round beliefs") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 21);
    const int Q = 2, A = cfg.alphabet();
    codec::DecSessionState st;
    st.p_know = Mat(Q, A);
    st.p_record = Mat(Q, A);

    core::DecodeMask mask{{1, 1}, 0};
    core::BeliefMatrix b1 = codec::decode_round(p, st, {0.7, -0.3}, mask, 1);
    for (int i = 0; i < Q; ++i) {
        double sum = 0.0;
        for (int a = 0; a < A; ++a) {
            CHECK(b1.at(i, a) >= 0.0);
            sum += b1.at(i, a);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }

    // Freeze group 0 after round 1.
    core::DecodeMask after{{0, 1}, 1};
    codec::commit_round(st, b1, after);
    for (int a = 0; a < A; ++a) {
        CHECK(st.p_record(0, a) == b1.at(0, a));
        CHECK(st.p_know(0, a) == 0.0);  // knowledge slots lag by one round
        CHECK(st.p_know(1, a) == b1.at(1, a));
    }

    core::BeliefMatrix b2 = codec::decode_round(p, st, {0.1}, after, 2);
    for (int a = 0; a < A; ++a) CHECK(b2.at(0, a) == b1.at(0, a));
    bool changed = false;
    for (int a = 0; a < A; ++a)
        if (b2.at(1, a) != b1.at(1, a)) changed = true;
    CHECK(changed);

    CHECK_THROWS_AS(codec::decode_round(p, st, {0.1, 0.2}, after, 3), core::ShapeError);
}

TEST_CASE("encoder round emits one symbol per active group, in group order") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 33);
    const int Q = 3;
    codec::EncSessionState st;
    st.bits_bipolar = Mat(Q, cfg.m, 1.0);
    st.bits_bipolar(1, 0) = -1.0;

    core::DecodeMask full{{1, 1, 1}, 0};
    std::vector<double> all = codec::encode_round(p, st, full, 1);
    CHECK(all.size() == 3);

    core::DecodeMask part{{1, 0, 1}, 1};
    std::vector<double> some = codec::encode_round(p, st, part, 1);
    REQUIRE(some.size() == 2);
    CHECK(some[0] == all[0]);
    CHECK(some[1] == all[2]);

    std::vector<double> again = codec::encode_round(p, st, part, 1);
    CHECK(again == some);
}

TEST_CASE("training normalization uses the masked batch statistics") {
    ad::Tape t;
    Mat raw(5, 1);
    raw(0, 0) = 1.0;
    raw(1, 0) = -1.0;
    raw(2, 0) = 3.0;
    raw(3, 0) = -3.0;
    raw(4, 0) = 5.0;  // frozen row, excluded from the statistics
    Mat mask(5, 1);
    mask(0, 0) = mask(1, 0) = mask(2, 0) = mask(3, 0) = 1.0;

    codec::NormResult nr = codec::normalize_train(t, ad::constant(t, raw), mask);
    CHECK(nr.batch_mean == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(nr.batch_var == doctest::Approx(5.0).epsilon(1e-12));
    const Mat& x = t.val(nr.x);
    double r5 = std::sqrt(5.0 + codec::kNormEps);
    CHECK(x(0, 0) == doctest::Approx(1.0 / r5).epsilon(1e-12));
    CHECK(x(2, 0) == doctest::Approx(3.0 / r5).epsilon(1e-12));
    CHECK(x(3, 0) == doctest::Approx(-3.0 / r5).epsilon(1e-12));

    Mat none(5, 1);
    CHECK_THROWS(codec::normalize_train(t, ad::constant(t, raw), none));
}

TEST_CASE("inference normalization reads the stored per-round statistics") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 2);
    p.at("norm_mean")(1, 0) = 1.0;
    p.at("norm_var")(1, 0) = 4.0;

    ad::Tape t;
    t.recording = false;
    Mat raw(2, 1);
    raw(0, 0) = 3.0;
    raw(1, 0) = -1.0;
    ad::Var x = codec::normalize_eval(t, ad::constant(t, raw), p, 2);
    CHECK(t.val(x)(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(t.val(x)(1, 0) == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("running statistics fold in with fixed momentum") {
    codec::CodecConfig cfg = tiny_cfg();
    codec::CodecParams p = codec::init_params(cfg, 2);
    codec::update_running_stats(p, 1, 1.0, 2.0);
    CHECK(p.at("norm_mean")(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p.at("norm_var")(0, 0) == doctest::Approx(0.9 + 0.2).epsilon(1e-12));
    codec::update_running_stats(p, 1, 1.0, 2.0);
    CHECK(p.at("norm_mean")(0, 0) == doctest::Approx(0.19).epsilon(1e-12));
    // Other rounds untouched.
    CHECK(p.at("norm_mean")(2, 0) == 0.0);
    CHECK(p.at("norm_var")(2, 0) == 1.0);
}
