#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hocr/bitcode.hpp"
#include "hocr/matrix.hpp"

namespace hocr {

/// Labeled feature vectors grouped by class: class i holds an n_i × d matrix.
class FeatureBank {
public:
    FeatureBank() = default;
    FeatureBank(std::size_t dim, std::vector<Matrix> classes, std::vector<std::string> labels);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_classes() const noexcept { return classes_.size(); }
    std::size_t total_samples() const noexcept;

    const Matrix& samples(std::size_t class_index) const { return classes_.at(class_index); }
    const std::string& label(std::size_t class_index) const { return labels_.at(class_index); }
    std::span<const std::string> labels() const noexcept { return labels_; }

    /// "HOFB", u16 version, u32 L, u32 d, then per class: u32 n_i,
    /// u16 label length, label bytes, n_i·d float32 values.
    std::vector<std::uint8_t> to_bytes() const;
    static FeatureBank from_bytes(std::span<const std::uint8_t> bytes);
    void save(const std::string& path) const;
    static FeatureBank load(const std::string& path);

    static constexpr std::uint16_t kFormatVersion = 1;

private:
    std::size_t dim_ = 0;
    std::vector<Matrix> classes_;
    std::vector<std::string> labels_;
};

/// d × d′ random hyperplane matrix Ψ; column k is the hyperplane normal ψ_k.
class ProjectionMatrix {
public:
    ProjectionMatrix() = default;
    explicit ProjectionMatrix(Matrix entries, std::uint64_t seed = 0);

    /// Entries i.i.d. standard normal, reproducible from (seed, d, width).
    static ProjectionMatrix draw(std::size_t input_dim, std::size_t width, std::uint64_t seed);

    std::size_t input_dim() const noexcept { return entries_.rows(); }
    std::size_t width() const noexcept { return entries_.cols(); }
    std::uint64_t seed() const noexcept { return seed_; }
    const Matrix& entries() const noexcept { return entries_; }

private:
    Matrix entries_;
    std::uint64_t seed_ = 0;
};

/// bit k = 1 iff scores[k] > 0. Shared by hashing and classification.
BitCode sign_bits(std::span<const double> scores);

BitCode lsh_project(std::span<const double> feature, const ProjectionMatrix& psi);

/// bit k = 1 iff strictly more than half of the inputs have bit k set.
BitCode majority_vote(std::span<const BitCode> codes);

struct BuildOptions {
    unsigned threads = 1;
};

Codebook build_codebook(const FeatureBank& bank, const ProjectionMatrix& psi, const BuildOptions& options = {});

/// Builds with Ψ drawn from `seed`; on conflict re-draws with seed+1, seed+2, ...
/// up to `max_retries` times, then throws CodebookConflictError.
Codebook build_codebook_resolving(const FeatureBank& bank, std::size_t width, std::uint64_t seed,
                                  std::size_t max_retries, const BuildOptions& options = {});

/// Every unordered pair (i, j), i < j, whose codes are identical; sorted.
std::vector<std::pair<std::size_t, std::size_t>> detect_conflicts(const Codebook& codebook);

/// Each bit i.i.d. Bernoulli(1/2).
Codebook random_codebook(std::size_t count, std::size_t width, std::uint64_t seed,
                         std::vector<std::string> labels = {});

struct SpecialTokens {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t pad = 0;
};

inline constexpr std::uint64_t kSpecialTokenStream = 0x5350;

/// Appends sequence-start, sequence-end and padding classes with random codes
/// drawn from mix_seed(seed, kSpecialTokenStream).
std::pair<Codebook, SpecialTokens> append_special_tokens(const Codebook& codebook, std::uint64_t seed);

}  // namespace hocr
