#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hocr/bitcode.hpp"
#include "hocr/error.hpp"
#include "test_support.hpp"

using namespace hocr;
using hocr::testing::naive_distance;
using hocr::testing::random_code;

TEST_CASE("hamming_distance on hand-checked codes") {
    Rng rng(1);
    const auto c = random_code(512, rng);
    CHECK(hamming_distance(c, c) == 0);
    CHECK(hamming_distance(c, c.complement()) == 512);
    CHECK(hamming_distance(BitCode::from_string("1011"), BitCode::from_string("0010")) == 2);
}

TEST_CASE("hamming_distance rejects mismatched widths") {
    CHECK_THROWS_AS(hamming_distance(BitCode(8), BitCode(9)), ContractViolation);
}

TEST_CASE("bit k lands in bit k mod 8 of byte k / 8") {
    BitCode c(20);
    c.set(9, true);
    c.set(19, true);
    const auto bytes = c.to_bytes();
    REQUIRE(bytes.size() == 3);
    CHECK(bytes[0] == 0x00);
    CHECK(bytes[1] == 0x02);
    CHECK(bytes[2] == 0x08);
}

TEST_CASE("padding bits stay zero and are excluded from distance") {
    const auto zero = BitCode(13);
    const auto ones = zero.complement();
    CHECK(ones.popcount() == 13);
    CHECK(hamming_distance(zero, ones) == 13);
    const auto bytes = ones.to_bytes();
    REQUIRE(bytes.size() == 2);
    CHECK(bytes[1] == 0x1F);

    const std::uint8_t dirty[] = {0xFF, 0xFF};
    CHECK_THROWS_AS(BitCode::from_bytes(13, dirty), FormatError);
}

TEST_CASE("distance is a metric on random codes of odd and even widths") {
    Rng rng(2);
    for (std::size_t width : {1u, 7u, 8u, 63u, 64u, 65u, 200u, 512u}) {
        for (int trial = 0; trial < 40; ++trial) {
            const auto a = random_code(width, rng);
            const auto b = random_code(width, rng);
            const auto c = random_code(width, rng);
            const auto ab = hamming_distance(a, b);
            CHECK(ab == hamming_distance(b, a));
            CHECK(ab == naive_distance(a, b));
            CHECK((ab == 0) == (a == b));
            CHECK(hamming_distance(a, c) <= ab + hamming_distance(b, c));
        }
    }
}

namespace {

Codebook random_book(std::size_t count, std::size_t width, Rng& rng) {
    std::vector<BitCode> codes;
    for (std::size_t i = 0; i < count; ++i) codes.push_back(random_code(width, rng));
    return Codebook(width, std::move(codes), index_labels(count));
}

CodeSearchResult scan_oracle(const BitCode& q, const Codebook& book) {
    CodeSearchResult best{0, naive_distance(q, book.code(0))};
    for (std::size_t i = 1; i < book.size(); ++i) {
        const auto d = naive_distance(q, book.code(i));
        if (d < best.distance) best = {i, d};
    }
    return best;
}

}  // namespace

TEST_CASE("nearest_code exact match and tie rule") {
    Rng rng(3);
    const auto book = random_book(20, 64, rng);
    CHECK(nearest_code(book.code(7), book) == CodeSearchResult{7, 0});

    const Codebook tie(6, {BitCode::from_string("111000"), BitCode::from_string("000111"), BitCode::from_string("000000")},
                       index_labels(3));
    // 000000 vs 111000: 3, vs 000111: 3 -> lower index.
    const Codebook tie_only(6, {BitCode::from_string("111000"), BitCode::from_string("000111")}, index_labels(2));
    CHECK(nearest_code(BitCode::from_string("000000"), tie_only) == CodeSearchResult{0, 3});
    CHECK(nearest_code(BitCode::from_string("000000"), tie) == CodeSearchResult{2, 0});
}

TEST_CASE("nearest_code agrees with a linear scan on 1000 random 512-bit codes") {
    Rng rng(4);
    const auto book = random_book(1000, 512, rng);
    for (int q = 0; q < 50; ++q) {
        auto query = random_code(512, rng);
        if (q % 5 == 0) query = book.code(rng.below(1000));
        const auto expected = scan_oracle(query, book);
        CHECK(nearest_code(query, book) == expected);
        CHECK(nearest_code(query, book, SearchOptions{4}) == expected);
    }
}

TEST_CASE("parallel scan keeps the lowest-index tie winner") {
    // Many duplicate codes: every worker sees an exact match.
    Rng rng(5);
    const auto base = random_code(32, rng);
    std::vector<BitCode> codes(97, random_code(32, rng));
    codes[40] = base;
    codes[41] = base;
    codes[90] = base;
    const Codebook book(32, codes, index_labels(codes.size()));
    for (unsigned t : {1u, 2u, 3u, 8u, 200u}) CHECK(nearest_code(base, book, SearchOptions{t}) == CodeSearchResult{40, 0});
}

TEST_CASE("nearest_code contract violations and exclusions") {
    CHECK_THROWS_AS(nearest_code(BitCode(8), std::span<const BitCode>{}), ContractViolation);
    const Codebook book(4, {BitCode::from_string("0000"), BitCode::from_string("0001")}, index_labels(2));
    CHECK_THROWS_AS(nearest_code(BitCode(5), book), ContractViolation);
    const std::size_t skip[] = {0};
    CHECK(nearest_code(BitCode::from_string("0000"), book, SearchOptions{1, skip}) == CodeSearchResult{1, 1});
    const std::size_t all[] = {0, 1};
    CHECK_THROWS_AS(nearest_code(BitCode::from_string("0000"), book, SearchOptions{1, all}), ContractViolation);
}

TEST_CASE("top_k_neighbors ordering") {
    const Codebook book(3, {BitCode::from_string("000"), BitCode::from_string("100"), BitCode::from_string("110")},
                        index_labels(3));
    const auto n = top_k_neighbors(0, book, 2);
    REQUIRE(n.size() == 2);
    CHECK(n[0] == CodeSearchResult{1, 1});
    CHECK(n[1] == CodeSearchResult{2, 2});
    CHECK(top_k_neighbors(0, book, 0).empty());
    CHECK_THROWS_AS(top_k_neighbors(3, book, 1), ContractViolation);
    CHECK_THROWS_AS(top_k_neighbors(0, book, 3), ContractViolation);
}

TEST_CASE("top_k_neighbors matches sort-everything oracle") {
    Rng rng(6);
    const auto book = random_book(100, 24, rng);  // narrow codes force many distance ties
    for (std::size_t q = 0; q < 100; q += 7) {
        std::vector<std::pair<std::size_t, std::size_t>> all;
        for (std::size_t i = 0; i < 100; ++i)
            if (i != q) all.emplace_back(naive_distance(book.code(q), book.code(i)), i);
        std::sort(all.begin(), all.end());
        const auto got = top_k_neighbors(q, book, 5);
        REQUIRE(got.size() == 5);
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(got[j].distance == all[j].first);
            CHECK(got[j].class_index == all[j].second);
        }
    }
}

TEST_CASE("codebook file layout is exact") {
    const Codebook book(10, {BitCode::from_string("1000000001"), BitCode::from_string("0100000000")}, {"a", "b"});
    const std::vector<std::uint8_t> expected = {'H', 'O', 'C', 'B', 0x01, 0x00, 0x02, 0x00, 0x00, 0x00,
                                                0x0A, 0x00, 0x00, 0x00, 0x01, 0x02, 0x02, 0x00};
    CHECK(book.to_bytes() == expected);
}

TEST_CASE("codebook serialization round-trips bit-exactly") {
    Rng rng(7);
    for (std::size_t width : {1u, 5u, 8u, 13u, 64u, 100u, 512u}) {
        const auto book = random_book(1 + rng.below(30), width, rng);
        const auto back = Codebook::from_bytes(book.to_bytes());
        REQUIRE(back.size() == book.size());
        CHECK(back.width() == width);
        for (std::size_t i = 0; i < book.size(); ++i) CHECK(back.code(i) == book.code(i));
        CHECK(back.to_bytes() == book.to_bytes());
    }
}

TEST_CASE("codebook files carry a label manifest") {
    const auto dir = std::filesystem::temp_directory_path() / "hocr_bitcode_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "book.hocb").string();
    const Codebook book(9, {BitCode::from_string("101010101"), BitCode::from_string("010101010")}, {"zero", "\xe4\xb8\xad"});
    book.save_with_labels(path);
    const auto back = Codebook::load(path);
    CHECK(back.label(0) == "zero");
    CHECK(back.label(1) == "\xe4\xb8\xad");
    CHECK(back.provenance().kind == CodebookProvenance::Kind::loaded);

    std::ofstream(path + ".labels") << "only-one\n";
    CHECK_THROWS_AS(Codebook::load(path), FormatError);
}

TEST_CASE("corrupt codebook bytes are rejected") {
    const Codebook book(8, {BitCode::from_string("10000000")}, {"a"});
    auto bytes = book.to_bytes();
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(Codebook::from_bytes(truncated), FormatError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(Codebook::from_bytes(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(Codebook::from_bytes(bad_version), FormatError);
}
