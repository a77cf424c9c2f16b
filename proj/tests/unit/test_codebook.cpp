#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "hocr/codebook.hpp"
#include "hocr/error.hpp"
#include "hocr/harness.hpp"
#include "test_support.hpp"

using namespace hocr;
using hocr::testing::random_matrix;
using hocr::testing::random_vector;

namespace {

BitCode dot_oracle(const std::vector<double>& h, const Matrix& psi) {
    std::string bits(psi.cols(), '0');
    for (std::size_t k = 0; k < psi.cols(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * psi(i, k);
        if (s > 0.0) bits[k] = '1';
    }
    return BitCode::from_string(bits);
}

std::vector<std::pair<std::size_t, std::size_t>> pairwise_conflicts(const Codebook& book) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < book.size(); ++i)
        for (std::size_t j = i + 1; j < book.size(); ++j)
            if (book.code(i).to_string() == book.code(j).to_string()) out.emplace_back(i, j);
    return out;
}

}  // namespace

TEST_CASE("lsh_project: zero feature gives the all-zero code") {
    const auto psi = ProjectionMatrix::draw(6, 40, 3);
    const std::vector<double> zero(6, 0.0);
    CHECK(lsh_project(zero, psi).popcount() == 0);
}

TEST_CASE("lsh_project: negating the projection flips every bit") {
    Rng rng(11);
    const auto entries = random_matrix(5, 64, rng);
    Matrix negated = entries;
    for (auto& v : negated.data()) v = -v;
    for (int t = 0; t < 20; ++t) {
        const auto h = random_vector(5, rng);
        CHECK(lsh_project(h, ProjectionMatrix(negated)) == lsh_project(h, ProjectionMatrix(entries)).complement());
    }
}

TEST_CASE("lsh_project matches a per-bit dot product oracle") {
    const auto psi = ProjectionMatrix::draw(4, 8, 2024);
    Rng rng(12);
    for (int t = 0; t < 100; ++t) {
        const auto h = random_vector(4, rng);
        CHECK(lsh_project(h, psi) == dot_oracle(h, psi.entries()));
    }
}

TEST_CASE("lsh_project is invariant to positive scaling") {
    const auto psi = ProjectionMatrix::draw(16, 128, 5);
    Rng rng(13);
    for (int t = 0; t < 50; ++t) {
        auto h = random_vector(16, rng);
        const auto base = lsh_project(h, psi);
        const double c = std::exp(4.0 * rng.uniform() - 2.0);
        for (auto& x : h) x *= c;
        CHECK(lsh_project(h, psi) == base);
    }
}

TEST_CASE("lsh_project rejects dimension mismatch") {
    const auto psi = ProjectionMatrix::draw(4, 8, 1);
    const std::vector<double> h(5, 1.0);
    CHECK_THROWS_AS(lsh_project(h, psi), ContractViolation);
}

TEST_CASE("projection draw is reproducible and finite") {
    const auto a = ProjectionMatrix::draw(7, 33, 99);
    const auto b = ProjectionMatrix::draw(7, 33, 99);
    const auto c = ProjectionMatrix::draw(7, 33, 100);
    CHECK(a.entries() == b.entries());
    CHECK_FALSE(a.entries() == c.entries());
    CHECK(all_finite(a.entries().data()));
    Matrix bad(2, 2);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(ProjectionMatrix{bad}, ContractViolation);
}

TEST_CASE("majority_vote uses a strict majority") {
    const std::vector<BitCode> three = {BitCode::from_string("1"), BitCode::from_string("1"), BitCode::from_string("0")};
    CHECK(majority_vote(three) == BitCode::from_string("1"));
    const std::vector<BitCode> four = {BitCode::from_string("1"), BitCode::from_string("1"), BitCode::from_string("0"),
                                       BitCode::from_string("0")};
    CHECK(majority_vote(four) == BitCode::from_string("0"));
    const auto same = BitCode::from_string("0110100111");
    const std::vector<BitCode> copies(5, same);
    CHECK(majority_vote(copies) == same);
}

TEST_CASE("majority_vote matches a counting oracle") {
    Rng rng(14);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 1 + rng.below(9);
        std::vector<BitCode> codes;
        for (std::size_t j = 0; j < n; ++j) codes.push_back(hocr::testing::random_code(37, rng));
        std::string expected(37, '0');
        for (std::size_t k = 0; k < 37; ++k) {
            std::size_t ones = 0;
            for (const auto& c : codes) ones += c.to_string()[k] == '1';
            if (static_cast<double>(ones) > static_cast<double>(n) / 2.0) expected[k] = '1';
        }
        CHECK(majority_vote(codes).to_string() == expected);
    }
}

TEST_CASE("majority_vote contract violations") {
    CHECK_THROWS_AS(majority_vote(std::vector<BitCode>{}), ContractViolation);
    const std::vector<BitCode> mixed = {BitCode(3), BitCode(4)};
    CHECK_THROWS_AS(majority_vote(mixed), ContractViolation);
}

TEST_CASE("build_codebook hand trace on a three-class bank") {
    // Columns of Ψ: (1,0), (0,1), (1,-1).
    const ProjectionMatrix psi(Matrix::from_rows({{1, 0, 1}, {0, 1, -1}}), 42);
    const FeatureBank bank(2,
                           {Matrix::from_rows({{1, 2}, {2, 1}, {-1, 1}}),  // 110, 111, 010 -> 110
                            Matrix::from_rows({{-1, -1}}),                 // -1, -1, 0 -> 000
                            Matrix::from_rows({{0.5, -2}, {-0.5, -1}})},   // 101, 001 -> 001
                           {"a", "b", "c"});
    const auto book = build_codebook(bank, psi);
    CHECK(book.code(0).to_string() == "110");
    CHECK(book.code(1).to_string() == "000");
    CHECK(book.code(2).to_string() == "001");
    CHECK(book.label(2) == "c");
    CHECK(book.provenance().kind == CodebookProvenance::Kind::lsh);
    CHECK(book.provenance().seed == 42);
    CHECK(book.provenance().feature_dim == 2);
}

TEST_CASE("build_codebook with one sample per class equals the projection") {
    Rng rng(15);
    std::vector<Matrix> classes;
    for (int i = 0; i < 10; ++i) classes.push_back(random_matrix(1, 12, rng));
    const FeatureBank bank(12, classes, index_labels(10));
    const auto psi = ProjectionMatrix::draw(12, 96, 8);
    const auto book = build_codebook(bank, psi);
    for (std::size_t i = 0; i < 10; ++i) CHECK(book.code(i) == lsh_project(bank.samples(i).row(0), psi));
}

TEST_CASE("duplicate classes collide and are reported") {
    Rng rng(16);
    const auto shared = random_matrix(4, 8, rng);
    const FeatureBank bank(8, {random_matrix(4, 8, rng), shared, random_matrix(4, 8, rng), shared}, index_labels(4));
    const auto book = build_codebook(bank, ProjectionMatrix::draw(8, 64, 1));
    const auto conflicts = detect_conflicts(book);
    REQUIRE(conflicts.size() == 1);
    CHECK(conflicts[0] == std::pair<std::size_t, std::size_t>{1, 3});
    CHECK_THROWS_AS(build_codebook_resolving(bank, 64, 1, 3), CodebookConflictError);
}

TEST_CASE("build_codebook is deterministic and thread-count independent") {
    SyntheticBankSpec spec;
    spec.classes = 40;
    spec.dim = 16;
    spec.samples_per_class = 9;
    const auto bank = generate_bank(spec);
    const auto psi = ProjectionMatrix::draw(16, 128, 3);
    const auto one = build_codebook(bank, psi);
    CHECK(build_codebook(bank, psi).to_bytes() == one.to_bytes());
    CHECK(build_codebook(bank, psi, BuildOptions{4}).to_bytes() == one.to_bytes());
    CHECK(build_codebook(bank, psi, BuildOptions{64}).to_bytes() == one.to_bytes());
}

TEST_CASE("build_codebook_resolving re-draws until codes are distinct") {
    // 24 classes cannot fit in 8 distinct 3-bit codes.
    SyntheticBankSpec spec;
    spec.classes = 24;
    spec.dim = 8;
    spec.samples_per_class = 3;
    const auto bank = generate_bank(spec);
    CHECK_THROWS_AS(build_codebook_resolving(bank, 3, 0, 5), CodebookConflictError);

    spec.classes = 6;
    const auto small = generate_bank(spec);
    std::uint64_t seed = 0;
    while (detect_conflicts(build_codebook(small, ProjectionMatrix::draw(8, 4, seed))).empty()) ++seed;
    const auto book = build_codebook_resolving(small, 4, seed, 200);
    CHECK(book.provenance().retries >= 1);
    CHECK(book.provenance().seed == seed + book.provenance().retries);
    CHECK(detect_conflicts(book).empty());
}

TEST_CASE("detect_conflicts examples") {
    Rng rng(17);
    CHECK(detect_conflicts(random_codebook(50, 64, 1)).empty());
    std::vector<BitCode> codes;
    for (int i = 0; i < 8; ++i) codes.push_back(hocr::testing::random_code(64, rng));
    codes[5] = codes[2];
    const Codebook book(64, codes, index_labels(8));
    CHECK(detect_conflicts(book) == std::vector<std::pair<std::size_t, std::size_t>>{{2, 5}});
}

TEST_CASE("detect_conflicts agrees with a pairwise scan on narrow codes") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto book = random_codebook(300, 9, seed);  // only 512 possible codes
        CHECK(detect_conflicts(book) == pairwise_conflicts(book));
    }
}

TEST_CASE("random 512-bit codebook subsample has no conflicts by pairwise scan") {
    const auto book = random_codebook(20000, 512, 77);
    CHECK(detect_conflicts(book).empty());
    std::vector<BitCode> sub(book.codes().begin(), book.codes().begin() + 2000);
    CHECK(pairwise_conflicts(Codebook(512, sub, index_labels(2000))).empty());
}

TEST_CASE("random_codebook determinism and statistics") {
    const auto a = random_codebook(400, 512, 5);
    CHECK(a.to_bytes() == random_codebook(400, 512, 5).to_bytes());
    CHECK_FALSE(a.to_bytes() == random_codebook(400, 512, 6).to_bytes());
    CHECK(a.provenance().kind == CodebookProvenance::Kind::random);

    std::size_t ones = 0;
    for (const auto& c : a.codes()) ones += c.popcount();
    const double freq = static_cast<double>(ones) / (400.0 * 512.0);
    CHECK(freq >= 0.45);
    CHECK(freq <= 0.55);

    // Disjoint pairs (0,1), (2,3), ... give independent Binomial(512, 1/2) draws.
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < 400; i += 2) sum += static_cast<double>(hamming_distance(a.code(i), a.code(i + 1)));
    const double mean = sum / 200.0;
    const double sigma = std::sqrt(512.0 / 4.0 / 200.0);
    CHECK(std::abs(mean - 256.0) <= 3.0 * sigma);
}

TEST_CASE("random_codebook single-bit outcomes are all reachable") {
    bool seen[2][2] = {};
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const auto book = random_codebook(2, 1, seed);
        seen[book.code(0).get(0)][book.code(1).get(0)] = true;
    }
    CHECK(seen[0][0]);
    CHECK(seen[0][1]);
    CHECK(seen[1][0]);
    CHECK(seen[1][1]);
}

TEST_CASE("random_codebook contract violations") {
    CHECK_THROWS_AS(random_codebook(1, 8, 0), ContractViolation);
    CHECK_THROWS_AS(random_codebook(4, 0, 0), ContractViolation);
    CHECK_THROWS_AS(random_codebook(3, 8, 0, {"a"}), ContractViolation);
}

TEST_CASE("special tokens are appended after the vocabulary") {
    const auto base = random_codebook(10, 64, 1);
    const auto [book, tokens] = append_special_tokens(base, 9);
    CHECK(book.size() == 13);
    CHECK(tokens.start == 10);
    CHECK(tokens.end == 11);
    CHECK(tokens.pad == 12);
    CHECK(book.label(10) == "<s>");
    CHECK(book.label(12) == "<pad>");
    const auto extra = random_codebook(3, 64, mix_seed(9, kSpecialTokenStream));
    CHECK(book.code(11) == extra.code(1));
    for (std::size_t i = 0; i < 10; ++i) CHECK(book.code(i) == base.code(i));
}

TEST_CASE("LSH keeps same-class samples closer than different classes") {
    SyntheticBankSpec spec;
    spec.classes = 30;
    spec.dim = 32;
    spec.samples_per_class = 10;
    spec.sigma = 0.2;
    const auto bank = generate_bank(spec);
    const auto psi = ProjectionMatrix::draw(32, 256, 4);
    const auto book = build_codebook(bank, psi);

    double intra = 0.0;
    std::size_t intra_n = 0;
    for (std::size_t i = 0; i < bank.num_classes(); ++i) {
        const auto& s = bank.samples(i);
        for (std::size_t a = 0; a < s.rows(); ++a)
            for (std::size_t b = a + 1; b < s.rows(); ++b, ++intra_n)
                intra += static_cast<double>(hamming_distance(lsh_project(s.row(a), psi), lsh_project(s.row(b), psi)));
    }
    double inter = 0.0;
    std::size_t inter_n = 0;
    for (std::size_t i = 0; i < book.size(); ++i)
        for (std::size_t j = i + 1; j < book.size(); ++j, ++inter_n)
            inter += static_cast<double>(hamming_distance(book.code(i), book.code(j)));
    CHECK(intra / static_cast<double>(intra_n) < inter / static_cast<double>(inter_n));
}

TEST_CASE("feature bank file layout and round trip") {
    const FeatureBank bank(2, {Matrix::from_rows({{1.5, -2.0}}), Matrix::from_rows({{0.25, 0.0}, {3.0, 4.0}})},
                           {"x", "yz"});
    const auto bytes = bank.to_bytes();
    // header 4+2+4+4, class 0: 4+2+1+8, class 1: 4+2+2+16
    CHECK(bytes.size() == 14 + 15 + 24);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HOFB");
    CHECK(bytes[6] == 2);
    CHECK(bytes[10] == 2);
    CHECK(bytes[14] == 1);
    CHECK(bytes[18] == 1);
    CHECK(bytes[20] == 'x');
    // 1.5f = 0x3FC00000 little-endian
    CHECK(bytes[21] == 0x00);
    CHECK(bytes[23] == 0xC0);
    CHECK(bytes[24] == 0x3F);

    const auto back = FeatureBank::from_bytes(bytes);
    CHECK(back.dim() == 2);
    CHECK(back.num_classes() == 2);
    CHECK(back.label(1) == "yz");
    CHECK(back.samples(1) == bank.samples(1));
    CHECK(back.total_samples() == 3);
}

TEST_CASE("feature bank rejects malformed input") {
    const FeatureBank bank(2, {Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3, 4}})}, {"a", "b"});
    auto bytes = bank.to_bytes();
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(FeatureBank::from_bytes(trailing), FormatError);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(FeatureBank::from_bytes(truncated), FormatError);
    auto one_class = bytes;
    one_class[6] = 1;
    CHECK_THROWS_AS(FeatureBank::from_bytes(one_class), FormatError);

    CHECK_THROWS_AS(FeatureBank(2, {Matrix::from_rows({{1, 2}})}, {"a"}), ContractViolation);
    CHECK_THROWS_AS(FeatureBank(2, {Matrix(0, 2), Matrix(1, 2)}, {"a", "b"}), ContractViolation);
    CHECK_THROWS_AS(FeatureBank(3, {Matrix(1, 2), Matrix(1, 2)}, {"a", "b"}), ContractViolation);
}

TEST_CASE("feature bank survives a file round trip") {
    const auto path = (std::filesystem::temp_directory_path() / "hocr_codebook_bank.hofb").string();
    SyntheticBankSpec spec;
    spec.classes = 5;
    spec.dim = 6;
    spec.samples_per_class = 4;
    const auto bank = generate_bank(spec);
    bank.save(path);
    const auto back = FeatureBank::load(path);
    CHECK(back.to_bytes() == bank.to_bytes());
}
