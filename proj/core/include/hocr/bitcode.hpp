#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hocr {

/// Fixed-width packed bit vector. Bit k lives in bit (k mod 64) of word
/// k/64, which serializes to bit (k mod 8) of byte k/8. Bits at positions
/// >= width are always zero.
class BitCode {
public:
    BitCode() = default;
    explicit BitCode(std::size_t width);

    /// Parses a string of '0'/'1' characters; character k becomes bit k.
    static BitCode from_string(std::string_view bits);
    /// Unpacks ceil(width/8) bytes. Nonzero padding bits are rejected.
    static BitCode from_bytes(std::size_t width, std::span<const std::uint8_t> bytes);

    std::size_t width() const noexcept { return width_; }
    std::size_t byte_size() const noexcept { return (width_ + 7) / 8; }

    bool get(std::size_t k) const;
    void set(std::size_t k, bool value);

    std::size_t popcount() const noexcept;
    BitCode complement() const;

    std::span<const std::uint64_t> words() const noexcept { return words_; }
    std::vector<std::uint8_t> to_bytes() const;
    void append_bytes(std::vector<std::uint8_t>& out) const;
    std::string to_string() const;

    bool operator==(const BitCode&) const = default;
    auto operator<=>(const BitCode& other) const = default;

private:
    std::size_t width_ = 0;
    std::vector<std::uint64_t> words_;
};

/// popcount(a XOR b). Throws ContractViolation on width mismatch.
std::size_t hamming_distance(const BitCode& a, const BitCode& b);

struct CodeSearchResult {
    std::size_t class_index = 0;
    std::size_t distance = 0;

    bool operator==(const CodeSearchResult&) const = default;
};

struct CodebookProvenance {
    enum class Kind { lsh, random, loaded };
    Kind kind = Kind::loaded;
    std::uint64_t seed = 0;
    std::size_t feature_dim = 0;  // d of the projected bank; 0 unless kind == lsh
    std::size_t retries = 0;      // Ψ re-draws spent resolving conflicts
};

const char* to_string(CodebookProvenance::Kind kind);

/// Ordered list of equal-width codes with one label per class.
/// Immutable once built; concurrent reads are safe.
class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t width, std::vector<BitCode> codes, std::vector<std::string> labels,
             CodebookProvenance provenance = {});

    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return codes_.size(); }
    bool empty() const noexcept { return codes_.empty(); }

    const BitCode& code(std::size_t i) const { return codes_.at(i); }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    std::span<const BitCode> codes() const noexcept { return codes_; }
    std::span<const std::string> labels() const noexcept { return labels_; }
    const CodebookProvenance& provenance() const noexcept { return provenance_; }

    /// Binary layout: "HOCB", u16 version, u32 L, u32 width, then L rows of
    /// ceil(width/8) bytes. Little-endian throughout.
    std::vector<std::uint8_t> to_bytes() const;
    static Codebook from_bytes(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

    void save(const std::string& path) const;
    /// Writes the codebook plus `<path>.labels` (one UTF-8 label per line).
    void save_with_labels(const std::string& path) const;
    /// Reads `<path>.labels` when present; otherwise labels are class indices.
    static Codebook load(const std::string& path);

    /// Same codes and provenance under new labels.
    Codebook relabeled(std::vector<std::string> labels) const;

    static constexpr std::uint16_t kFormatVersion = 1;

private:
    std::size_t width_ = 0;
    std::vector<BitCode> codes_;
    std::vector<std::string> labels_;
    CodebookProvenance provenance_;
};

std::vector<std::string> index_labels(std::size_t count);

/// `<path>.labels`: one UTF-8 label per line.
void write_label_manifest(const std::string& path, std::span<const std::string> labels);
/// nullopt when `<path>.labels` does not exist; FormatError when it has the
/// wrong number of lines.
std::optional<std::vector<std::string>> read_label_manifest(const std::string& path, std::size_t expected);

struct SearchOptions {
    /// Worker threads for the scan. Results are identical for every value.
    unsigned threads = 1;
    /// Class indices never returned (e.g. start/padding tokens).
    std::span<const std::size_t> excluded = {};
};

/// Exhaustive minimum-Hamming-distance search; ties go to the lowest index.
CodeSearchResult nearest_code(const BitCode& query, const Codebook& codebook,
                              const SearchOptions& options = {});
CodeSearchResult nearest_code(const BitCode& query, std::span<const BitCode> codes,
                              const SearchOptions& options = {});

/// The k closest other classes to `class_index`, ascending by (distance, index).
std::vector<CodeSearchResult> top_k_neighbors(std::size_t class_index, const Codebook& codebook,
                                              std::size_t k);

}  // namespace hocr
