#include <doctest.h>

#include <cmath>

#include "hocr/error.hpp"
#include "hocr/lite_decoder.hpp"
#include "hocr/sizing.hpp"

using namespace hocr;

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::vector<double> published_deltas(const Ladder& l) {
    std::vector<double> out;
    double prev = *l.base_reference_mib;
    for (const auto& s : l.steps) {
        out.push_back(prev - *s.reference_mib);
        prev = *s.reference_mib;
    }
    return out;
}

}  // namespace

TEST_CASE("softmax head storage") {
    CHECK(softmax_head_bytes(20000, 512, Precision::fp32) == 40960000);
    CHECK(round2(to_mib(softmax_head_bytes(20000, 512, Precision::fp32))) == 39.06);
    CHECK(std::round(to_mib(softmax_head_bytes(20948, 512, Precision::fp32)) * 10) / 10 == 40.9);
    CHECK(softmax_head_bytes(20948, 512, Precision::fp16) * 2 == softmax_head_bytes(20948, 512, Precision::fp32));
    CHECK_THROWS_AS(softmax_head_bytes(0, 512, Precision::fp32), ContractViolation);
}

TEST_CASE("hamming head storage") {
    CHECK(codebook_bytes(20000, 512) == 20000u * 64u);
    CHECK(round2(to_mib(codebook_bytes(20000, 512))) == 1.22);
    CHECK(codebook_bytes(3, 9) == 6);  // two bytes per 9-bit row
    const auto r = hamming_head_report(20000, 512, 512, Precision::fp32);
    REQUIRE(r.find("hamming projection"));
    CHECK(r.find("hamming projection")->bytes == 512u * 512u * 4u);
    CHECK(to_mib(r.find("hamming projection")->bytes) == 1.0);
    CHECK(r.find("codebook")->bit_packed);
    CHECK(r.total_bytes() == 512u * 512u * 4u + 20000u * 64u);
    CHECK(hamming_head_bytes(20000, 512, 512, Precision::fp32) == r.total_bytes());

    const double ratio = static_cast<double>(softmax_head_bytes(20000, 512, Precision::fp32)) /
                         static_cast<double>(r.total_bytes());
    CHECK(ratio == doctest::Approx(17.6).epsilon(0.005));
    CHECK(softmax_head_bytes(20000, 512, Precision::fp32) / codebook_bytes(20000, 512) == 32);
}

TEST_CASE("embedding and factorized storage") {
    CHECK(std::round(to_mib(embedding_bytes(20948, 512, Precision::fp32)) * 10) / 10 == 40.9);
    CHECK(factorized_bytes(20948, 512, 64, Precision::fp32) == 1373440u * 4u);
    CHECK(round2(to_mib(factorized_bytes(20948, 512, 64, Precision::fp32))) == 5.24);

    // The Hamming embedding reuses the classifier's codebook: no extra bytes.
    ModelSizeConfig c;
    c.backbone_params = 1000;
    c.hamming_classifier = true;
    const auto hc = model_size(c);
    c.hamming_embedding = true;
    const auto hche = model_size(c);
    CHECK(hc.total_bytes() - hche.total_bytes() == embedding_bytes(20948, 512, Precision::fp32));
    CHECK(hche.find("codebook") != nullptr);
    CHECK(hche.find("learned embedding") == nullptr);
}

TEST_CASE("hamming head grows with a slope of one code row per class") {
    for (std::size_t width : {64u, 100u, 512u}) {
        const auto a = hamming_head_bytes(1000, 256, width, Precision::fp32);
        const auto b = hamming_head_bytes(1001, 256, width, Precision::fp32);
        CHECK(b - a == (width + 7) / 8);
        CHECK(softmax_head_bytes(1001, 256, Precision::fp32) - softmax_head_bytes(1000, 256, Precision::fp32) == 1024);
    }
}

TEST_CASE("crossover is the first class count where the hamming head is smaller") {
    for (Precision p : {Precision::fp32, Precision::fp16})
        for (std::size_t d : {16u, 64u, 512u})
            for (std::size_t width : {32u, 128u, 512u}) {
                const auto x = hamming_crossover_classes(d, width, p);
                if (d * bytes_per_value(p) <= (width + 7) / 8) {
                    CHECK_FALSE(x.has_value());
                    continue;
                }
                REQUIRE(x.has_value());
                CHECK(hamming_head_bytes(*x, d, width, p) < softmax_head_bytes(*x, d, p));
                if (*x > 1) CHECK(hamming_head_bytes(*x - 1, d, width, p) >= softmax_head_bytes(*x - 1, d, p));
            }
    // 1-value rows narrower than the packed code never pay off.
    CHECK_FALSE(hamming_crossover_classes(1, 512, Precision::fp16).has_value());
}

TEST_CASE("model size report invariants") {
    ModelSizeConfig c;
    c.backbone_params = 123457;
    c.hamming_classifier = true;
    c.hamming_embedding = true;
    c.code_width = 300;
    const auto r32 = model_size(c);
    std::uint64_t sum = 0;
    for (const auto& i : r32.items) {
        sum += i.bytes;
        if (i.bit_packed)
            CHECK(i.bytes == c.classes * ((c.code_width + 7) / 8));
        else
            CHECK(i.bytes == i.count * 4);
    }
    CHECK(sum == r32.total_bytes());
    CHECK(r32.find("embedding projection") != nullptr);

    c.precision = Precision::fp16;
    const auto r16 = model_size(c);
    const auto packed = r32.find("codebook")->bytes;
    CHECK(r16.total_bytes() == (r32.total_bytes() - packed) / 2 + packed);
    CHECK(r16.find("codebook")->bytes == packed);

    c.store_embedding_projection = false;
    CHECK(model_size(c).find("embedding projection") == nullptr);
}

TEST_CASE("decoder items follow the parameter count") {
    ModelSizeConfig c;
    c.backbone_params = 0;
    DecoderConfig dc;
    dc.use_ffn = true;
    dc.share_layers = false;
    const auto r = model_size(c);
    const auto p = count_parameters(dc);
    CHECK(r.find("decoder attention")->count == p.attention_total());
    CHECK(r.find("decoder feed-forward")->count == p.ffn_total());
    CHECK(r.find("decoder layer norms")->count == p.layer_norm_total());
}

TEST_CASE("parameter sharing step in the mobile ladder is two attention layers") {
    const auto l = mobile_ladder();
    const auto rows = ladder_report(l.base, l.base_reference_mib, l.steps);
    REQUIRE(rows.size() == 7);
    // Row 5 turns on sharing at d = 256 without the FFN.
    const std::uint64_t d = 256;
    CHECK(rows[5].delta_bytes == static_cast<std::int64_t>(2 * (8 * d * d + 2 * 2 * d) * 4));
    CHECK(to_mib(2 * 8 * d * d * 4) == 4.0);
}

TEST_CASE("mobile ladder deltas stay within 5% of the published table") {
    const auto l = mobile_ladder();
    const auto rows = ladder_report(l.base, l.base_reference_mib, l.steps);
    const auto expected = published_deltas(l);
    REQUIRE(rows.size() == expected.size() + 1);
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const double got = to_mib(static_cast<std::uint64_t>(rows[i + 1].delta_bytes));
        INFO("step ", l.steps[i].label, ": ", got, " MiB vs ", expected[i]);
        CHECK(std::abs(got - expected[i]) <= 0.05 * expected[i]);
    }
    CHECK(std::abs(rows[1].report.total_mib() - rows[2].report.total_mib() - 18.9) <= 0.05 * 18.9);
    CHECK(std::abs(rows[2].report.total_mib() - rows[3].report.total_mib() - 20.1) <= 0.05 * 20.1);
}

TEST_CASE("resnet ladder deltas stay within 5% of the published table") {
    for (const auto& l : resnet_ladders()) {
        const auto rows = ladder_report(l.base, l.base_reference_mib, l.steps);
        const auto expected = published_deltas(l);
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const double got = to_mib(static_cast<std::uint64_t>(rows[i + 1].delta_bytes));
            INFO(l.name, " step ", l.steps[i].label, ": ", got, " MiB vs ", expected[i]);
            CHECK(std::abs(got - expected[i]) <= 0.05 * expected[i]);
        }
    }
}

TEST_CASE("ladder rows are pure functions of their config") {
    const auto l = mobile_ladder();
    const auto a = ladder_report(l.base, l.base_reference_mib, l.steps);
    const auto b = ladder_report(l.base, l.base_reference_mib, l.steps);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].report.total_bytes() == b[i].report.total_bytes());
        CHECK(a[i].report.total_bytes() == model_size(a[i].report.assumptions).total_bytes());
    }
    CHECK(a.front().delta_bytes == 0);
}

TEST_CASE("documented backbone constants") {
    CHECK(std::round(to_mib(mobilenet_backbone_params() * 4) * 10) / 10 == 2.3);
    // The 62-class reference model reconstructs to 223.9 MiB.
    auto c = resnet_baseline_config();
    c.backbone_params = resnet_backbone_params();
    c.classes = 62;
    CHECK(std::abs(model_size(c).total_mib() - 223.9) < 0.001);
    const auto swap = mobilenet_swap();
    CHECK(swap.d == 256);
    CHECK(swap.ffn_inner == 1024);
}

TEST_CASE("toggle and precision names round trip") {
    for (auto t : {Toggle::swap_backbone, Toggle::hamming_classifier, Toggle::hamming_embedding, Toggle::no_ffn,
                   Toggle::share_layers, Toggle::half_precision})
        CHECK(parse_toggle(to_string(t)) == t);
    CHECK_THROWS_AS(parse_toggle("ffn"), ContractViolation);
    CHECK(parse_precision("fp16") == Precision::fp16);
    CHECK_THROWS_AS(parse_precision("int8"), ContractViolation);
}
