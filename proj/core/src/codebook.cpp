#include "hocr/codebook.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "binary_io.hpp"
#include "hocr/error.hpp"
#include "hocr/rng.hpp"

namespace hocr {

FeatureBank::FeatureBank(std::size_t dim, std::vector<Matrix> classes, std::vector<std::string> labels)
    : dim_(dim), classes_(std::move(classes)), labels_(std::move(labels)) {
    require(dim_ > 0, "FeatureBank: dimension must be positive");
    require(classes_.size() >= 2, "FeatureBank: at least two classes required");
    require(labels_.size() == classes_.size(), "FeatureBank: one label per class required");
    for (const auto& c : classes_) {
        require(c.rows() >= 1, "FeatureBank: every class needs at least one sample");
        require(c.cols() == dim_, "FeatureBank: sample dimension differs from bank dimension");
    }
}

std::size_t FeatureBank::total_samples() const noexcept {
    std::size_t n = 0;
    for (const auto& c : classes_) n += c.rows();
    return n;
}

std::vector<std::uint8_t> FeatureBank::to_bytes() const {
    io::ByteWriter w;
    w.magic("HOFB");
    w.u16(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(classes_.size()));
    w.u32(static_cast<std::uint32_t>(dim_));
    for (std::size_t i = 0; i < classes_.size(); ++i) {
        const auto& m = classes_[i];
        if (labels_[i].size() > 0xFFFF) throw ContractViolation("FeatureBank: label longer than 65535 bytes");
        w.u32(static_cast<std::uint32_t>(m.rows()));
        w.u16(static_cast<std::uint16_t>(labels_[i].size()));
        w.bytes(labels_[i].data(), labels_[i].size());
        for (double v : m.data()) w.f32(static_cast<float>(v));
    }
    return w.take();
}

FeatureBank FeatureBank::from_bytes(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes.data(), bytes.size());
    r.expect_magic("HOFB");
    const auto version = r.u16();
    if (version != kFormatVersion) throw FormatError("HOFB: unsupported version " + std::to_string(version));
    const std::size_t count = r.u32();
    const std::size_t dim = r.u32();
    std::vector<Matrix> classes;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t n = r.u32();
        labels.push_back(r.str(r.u16()));
        if (dim != 0 && r.remaining() / 4 / dim < n) throw FormatError("HOFB: truncated sample block");
        Matrix m(n, dim);
        for (auto& v : m.data()) v = static_cast<double>(r.f32());
        classes.push_back(std::move(m));
    }
    if (!r.at_end()) throw FormatError("HOFB: trailing bytes");
    try {
        return FeatureBank(dim, std::move(classes), std::move(labels));
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("HOFB: ") + e.what());
    }
}

void FeatureBank::save(const std::string& path) const { io::write_file(path, to_bytes()); }

FeatureBank FeatureBank::load(const std::string& path) { return from_bytes(io::read_file(path)); }

ProjectionMatrix::ProjectionMatrix(Matrix entries, std::uint64_t seed) : entries_(std::move(entries)), seed_(seed) {
    require(entries_.rows() > 0 && entries_.cols() > 0, "ProjectionMatrix: empty matrix");
    require(all_finite(entries_.data()), "ProjectionMatrix: non-finite entry");
}

ProjectionMatrix ProjectionMatrix::draw(std::size_t input_dim, std::size_t width, std::uint64_t seed) {
    require(input_dim > 0 && width > 0, "ProjectionMatrix::draw: dimensions must be positive");
    Rng rng(seed);
    Matrix m(input_dim, width);
    for (auto& v : m.data()) v = rng.normal();
    return ProjectionMatrix(std::move(m), seed);
}

BitCode sign_bits(std::span<const double> scores) {
    BitCode code(scores.size());
    for (std::size_t k = 0; k < scores.size(); ++k)
        if (scores[k] > 0.0) code.set(k, true);
    return code;
}

BitCode lsh_project(std::span<const double> feature, const ProjectionMatrix& psi) {
    if (feature.size() != psi.input_dim()) throw ContractViolation("lsh_project: feature dimension differs from Ψ");
    return sign_bits(vec_mat(feature, psi.entries()));
}

BitCode majority_vote(std::span<const BitCode> codes) {
    if (codes.empty()) throw ContractViolation("majority_vote: no codes to vote over");
    const std::size_t width = codes.front().width();
    std::vector<std::size_t> counts(width, 0);
    for (const auto& c : codes) {
        if (c.width() != width) throw ContractViolation("majority_vote: mixed code widths");
        for (std::size_t k = 0; k < width; ++k) counts[k] += c.get(k) ? 1 : 0;
    }
    BitCode out(width);
    // 2·count > n is the strict "more than n/2" test without fractions.
    for (std::size_t k = 0; k < width; ++k)
        if (2 * counts[k] > codes.size()) out.set(k, true);
    return out;
}

namespace {

BitCode class_code(const Matrix& samples, const ProjectionMatrix& psi) {
    std::vector<BitCode> projected;
    projected.reserve(samples.rows());
    for (std::size_t j = 0; j < samples.rows(); ++j) projected.push_back(lsh_project(samples.row(j), psi));
    return majority_vote(projected);
}

}  // namespace

Codebook build_codebook(const FeatureBank& bank, const ProjectionMatrix& psi, const BuildOptions& options) {
    if (bank.dim() != psi.input_dim()) throw ContractViolation("build_codebook: bank dimension differs from Ψ");
    const std::size_t count = bank.num_classes();
    std::vector<BitCode> codes(count);
    const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) codes[i] = class_code(bank.samples(i), psi);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < count; i += workers) codes[i] = class_code(bank.samples(i), psi);
            });
    }
    std::vector<std::string> labels(bank.labels().begin(), bank.labels().end());
    CodebookProvenance prov{CodebookProvenance::Kind::lsh, psi.seed(), bank.dim(), 0};
    return Codebook(psi.width(), std::move(codes), std::move(labels), prov);
}

Codebook build_codebook_resolving(const FeatureBank& bank, std::size_t width, std::uint64_t seed,
                                  std::size_t max_retries, const BuildOptions& options) {
    for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
        const auto psi = ProjectionMatrix::draw(bank.dim(), width, seed + attempt);
        Codebook book = build_codebook(bank, psi, options);
        if (detect_conflicts(book).empty()) {
            auto prov = book.provenance();
            prov.retries = attempt;
            std::vector<BitCode> codes(book.codes().begin(), book.codes().end());
            std::vector<std::string> labels(book.labels().begin(), book.labels().end());
            return Codebook(width, std::move(codes), std::move(labels), prov);
        }
    }
    throw CodebookConflictError("build_codebook_resolving: conflicts persist after " + std::to_string(max_retries) +
                                " re-draws of the projection");
}

std::vector<std::pair<std::size_t, std::size_t>> detect_conflicts(const Codebook& codebook) {
    const auto codes = codebook.codes();
    std::vector<std::size_t> order(codes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t g = 0; g < order.size();) {
        std::size_t e = g + 1;
        while (e < order.size() && codes[order[e]] == codes[order[g]]) ++e;
        // stable_sort leaves each group in ascending index order.
        for (std::size_t a = g; a < e; ++a)
            for (std::size_t b = a + 1; b < e; ++b) pairs.emplace_back(order[a], order[b]);
        g = e;
    }
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

Codebook random_codebook(std::size_t count, std::size_t width, std::uint64_t seed, std::vector<std::string> labels) {
    require(count >= 2, "random_codebook: at least two classes required");
    require(width >= 1, "random_codebook: width must be positive");
    if (labels.empty()) labels = index_labels(count);
    require(labels.size() == count, "random_codebook: label count differs from class count");
    Rng rng(seed);
    std::vector<BitCode> codes;
    codes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        BitCode c(width);
        for (std::size_t k = 0; k < width; ++k) c.set(k, rng.bit());
        codes.push_back(std::move(c));
    }
    return Codebook(width, std::move(codes), std::move(labels), {CodebookProvenance::Kind::random, seed, 0, 0});
}

std::pair<Codebook, SpecialTokens> append_special_tokens(const Codebook& codebook, std::uint64_t seed) {
    const auto extra = random_codebook(3, codebook.width(), mix_seed(seed, kSpecialTokenStream));
    std::vector<BitCode> codes(codebook.codes().begin(), codebook.codes().end());
    std::vector<std::string> labels(codebook.labels().begin(), codebook.labels().end());
    const SpecialTokens tokens{codes.size(), codes.size() + 1, codes.size() + 2};
    for (std::size_t i = 0; i < 3; ++i) codes.push_back(extra.code(i));
    labels.insert(labels.end(), {"<s>", "</s>", "<pad>"});
    return {Codebook(codebook.width(), std::move(codes), std::move(labels), codebook.provenance()), tokens};
}

}  // namespace hocr
