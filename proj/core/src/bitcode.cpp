#include "hocr/bitcode.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <limits>
#include <thread>

#include "binary_io.hpp"
#include "hocr/error.hpp"

namespace hocr {

namespace {

constexpr std::size_t kWordBits = 64;

std::size_t word_count(std::size_t width) { return (width + kWordBits - 1) / kWordBits; }

}  // namespace

BitCode::BitCode(std::size_t width) : width_(width), words_(word_count(width), 0) {}

BitCode BitCode::from_string(std::string_view bits) {
    BitCode code(bits.size());
    for (std::size_t k = 0; k < bits.size(); ++k) {
        if (bits[k] != '0' && bits[k] != '1') throw ContractViolation("BitCode::from_string: expected '0' or '1'");
        code.set(k, bits[k] == '1');
    }
    return code;
}

BitCode BitCode::from_bytes(std::size_t width, std::span<const std::uint8_t> bytes) {
    BitCode code(width);
    if (bytes.size() != code.byte_size()) throw FormatError("BitCode::from_bytes: wrong byte count");
    for (std::size_t b = 0; b < bytes.size(); ++b)
        code.words_[b / 8] |= static_cast<std::uint64_t>(bytes[b]) << (8 * (b % 8));
    if (width % kWordBits != 0 && !code.words_.empty()) {
        const std::uint64_t pad_mask = ~((std::uint64_t{1} << (width % kWordBits)) - 1);
        if (code.words_.back() & pad_mask) throw FormatError("BitCode::from_bytes: nonzero padding bits");
    }
    return code;
}

bool BitCode::get(std::size_t k) const {
    if (k >= width_) throw ContractViolation("BitCode::get: bit index out of range");
    return (words_[k / kWordBits] >> (k % kWordBits)) & 1u;
}

void BitCode::set(std::size_t k, bool value) {
    if (k >= width_) throw ContractViolation("BitCode::set: bit index out of range");
    const std::uint64_t mask = std::uint64_t{1} << (k % kWordBits);
    if (value)
        words_[k / kWordBits] |= mask;
    else
        words_[k / kWordBits] &= ~mask;
}

std::size_t BitCode::popcount() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

BitCode BitCode::complement() const {
    BitCode out(width_);
    for (std::size_t i = 0; i < words_.size(); ++i) out.words_[i] = ~words_[i];
    if (width_ % kWordBits != 0 && !out.words_.empty())
        out.words_.back() &= (std::uint64_t{1} << (width_ % kWordBits)) - 1;
    return out;
}

void BitCode::append_bytes(std::vector<std::uint8_t>& out) const {
    const std::size_t n = byte_size();
    for (std::size_t b = 0; b < n; ++b) out.push_back(static_cast<std::uint8_t>(words_[b / 8] >> (8 * (b % 8))));
}

std::vector<std::uint8_t> BitCode::to_bytes() const {
    std::vector<std::uint8_t> out;
    out.reserve(byte_size());
    append_bytes(out);
    return out;
}

std::string BitCode::to_string() const {
    std::string s(width_, '0');
    for (std::size_t k = 0; k < width_; ++k)
        if (get(k)) s[k] = '1';
    return s;
}

std::size_t hamming_distance(const BitCode& a, const BitCode& b) {
    if (a.width() != b.width()) throw ContractViolation("hamming_distance: code widths differ");
    const auto wa = a.words();
    const auto wb = b.words();
    std::size_t d = 0;
    for (std::size_t i = 0; i < wa.size(); ++i) d += static_cast<std::size_t>(std::popcount(wa[i] ^ wb[i]));
    return d;
}

const char* to_string(CodebookProvenance::Kind kind) {
    switch (kind) {
        case CodebookProvenance::Kind::lsh: return "lsh";
        case CodebookProvenance::Kind::random: return "random";
        case CodebookProvenance::Kind::loaded: return "loaded";
    }
    return "unknown";
}

std::vector<std::string> index_labels(std::size_t count) {
    std::vector<std::string> labels;
    labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) labels.push_back(std::to_string(i));
    return labels;
}

Codebook::Codebook(std::size_t width, std::vector<BitCode> codes, std::vector<std::string> labels,
                   CodebookProvenance provenance)
    : width_(width), codes_(std::move(codes)), labels_(std::move(labels)), provenance_(provenance) {
    require(width_ > 0, "Codebook: width must be positive");
    require(codes_.size() == labels_.size(), "Codebook: codes and labels differ in length");
    for (const auto& c : codes_) require(c.width() == width_, "Codebook: code width differs from codebook width");
}

std::vector<std::uint8_t> Codebook::to_bytes() const {
    io::ByteWriter w;
    w.magic("HOCB");
    w.u16(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(codes_.size()));
    w.u32(static_cast<std::uint32_t>(width_));
    auto out = w.take();
    out.reserve(out.size() + codes_.size() * ((width_ + 7) / 8));
    for (const auto& c : codes_) c.append_bytes(out);
    return out;
}

Codebook Codebook::from_bytes(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
    io::ByteReader r(bytes.data(), bytes.size());
    r.expect_magic("HOCB");
    const auto version = r.u16();
    if (version != kFormatVersion) throw FormatError("HOCB: unsupported version " + std::to_string(version));
    const std::size_t count = r.u32();
    const std::size_t width = r.u32();
    if (width == 0) throw FormatError("HOCB: zero code width");
    const std::size_t row = (width + 7) / 8;
    if (r.remaining() / row < count) throw FormatError("HOCB: truncated code rows");
    std::vector<BitCode> codes;
    codes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) codes.push_back(BitCode::from_bytes(width, {r.take(row), row}));
    if (consumed) *consumed = r.position();
    return Codebook(width, std::move(codes), index_labels(count), {});
}

void Codebook::save(const std::string& path) const { io::write_file(path, to_bytes()); }

void Codebook::save_with_labels(const std::string& path) const {
    save(path);
    write_label_manifest(path, labels_);
}

Codebook Codebook::relabeled(std::vector<std::string> labels) const {
    return Codebook(width_, codes_, std::move(labels), provenance_);
}

void write_label_manifest(const std::string& path, std::span<const std::string> labels) {
    std::ofstream out(path + ".labels", std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write label manifest for '" + path + "'");
    for (const auto& l : labels) {
        if (l.find('\n') != std::string::npos) throw ContractViolation("label manifest: label contains a newline");
        out << l << '\n';
    }
}

std::optional<std::vector<std::string>> read_label_manifest(const std::string& path, std::size_t expected) {
    std::ifstream in(path + ".labels", std::ios::binary);
    if (!in) return std::nullopt;
    std::vector<std::string> labels;
    for (std::string line; std::getline(in, line);) labels.push_back(line);
    if (labels.size() != expected) throw FormatError("label manifest length differs from codebook size");
    return labels;
}

Codebook Codebook::load(const std::string& path) {
    const auto bytes = io::read_file(path);
    std::size_t consumed = 0;
    Codebook book = from_bytes(bytes, &consumed);
    if (consumed != bytes.size()) throw FormatError("HOCB: trailing bytes in '" + path + "'");
    if (auto labels = read_label_manifest(path, book.size())) book.labels_ = std::move(*labels);
    return book;
}

namespace {

CodeSearchResult scan_range(const BitCode& query, std::span<const BitCode> codes, std::size_t begin,
                            std::size_t end, const std::vector<bool>& excluded) {
    CodeSearchResult best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::size_t>::max()};
    for (std::size_t i = begin; i < end; ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        const std::size_t d = hamming_distance(query, codes[i]);
        if (d < best.distance) {
            best = {i, d};
            if (d == 0) break;  // nothing later can beat an exact match under the tie rule
        }
    }
    return best;
}

}  // namespace

CodeSearchResult nearest_code(const BitCode& query, std::span<const BitCode> codes, const SearchOptions& options) {
    if (codes.empty()) throw ContractViolation("nearest_code: empty codebook");
    if (query.width() != codes.front().width()) throw ContractViolation("nearest_code: query width differs from codebook");

    std::vector<bool> excluded;
    if (!options.excluded.empty()) {
        excluded.assign(codes.size(), false);
        for (auto i : options.excluded) {
            if (i >= codes.size()) throw ContractViolation("nearest_code: excluded index out of range");
            excluded[i] = true;
        }
    }

    const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(codes.size())));
    CodeSearchResult best;
    if (workers == 1) {
        best = scan_range(query, codes, 0, codes.size(), excluded);
    } else {
        std::vector<CodeSearchResult> partial(workers);
        std::vector<std::jthread> pool;
        const std::size_t chunk = (codes.size() + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(codes.size(), w * chunk);
            const std::size_t end = std::min(codes.size(), begin + chunk);
            pool.emplace_back([&, w, begin, end] { partial[w] = scan_range(query, codes, begin, end, excluded); });
        }
        pool.clear();
        best = partial.front();
        // Chunks are in index order, so strict < keeps the lowest index on ties.
        for (unsigned w = 1; w < workers; ++w)
            if (partial[w].distance < best.distance) best = partial[w];
    }
    if (best.class_index == std::numeric_limits<std::size_t>::max())
        throw ContractViolation("nearest_code: every class is excluded");
    return best;
}

CodeSearchResult nearest_code(const BitCode& query, const Codebook& codebook, const SearchOptions& options) {
    return nearest_code(query, codebook.codes(), options);
}

std::vector<CodeSearchResult> top_k_neighbors(std::size_t class_index, const Codebook& codebook, std::size_t k) {
    if (class_index >= codebook.size()) throw ContractViolation("top_k_neighbors: class index out of range");
    if (k >= codebook.size()) throw ContractViolation("top_k_neighbors: k must be smaller than the codebook size");
    std::vector<CodeSearchResult> all;
    all.reserve(codebook.size() - 1);
    const auto& query = codebook.code(class_index);
    for (std::size_t i = 0; i < codebook.size(); ++i)
        if (i != class_index) all.push_back({i, hamming_distance(query, codebook.code(i))});
    auto by_distance = [](const CodeSearchResult& a, const CodeSearchResult& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.class_index < b.class_index;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), by_distance);
    all.resize(k);
    return all;
}

}  // namespace hocr
