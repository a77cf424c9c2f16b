#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hocr/bitcode.hpp"
#include "hocr/codebook.hpp"
#include "hocr/hamming_head.hpp"
#include "hocr/sizing.hpp"

namespace hocr {

/// Gaussian class clusters standing in for trained character features.
struct SyntheticBankSpec {
    std::size_t classes = 100;
    std::size_t dim = 64;
    std::size_t samples_per_class = 50;
    double center_scale = 1.0;
    double sigma = 0.1;
    /// Pairs (a, b): b's center is a's center rotated by confusable_angle_deg.
    std::vector<std::pair<std::size_t, std::size_t>> confusable_pairs;
    double confusable_angle_deg = 5.0;
    std::uint64_t seed = 1;

    void validate() const;
};

/// (0,1), (2,3), ... for the first `count` pairs.
std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(std::size_t count);

/// Class centers depend only on spec.seed; `stream` selects an independent
/// sample draw around the same centers (0 = training, 1 = held-out).
FeatureBank generate_bank(const SyntheticBankSpec& spec, std::uint64_t stream = 0);

enum class CodeKind { lsh, random };
const char* to_string(CodeKind k);

struct ExperimentConfig {
    SyntheticBankSpec bank;
    std::size_t held_out_per_class = 20;
    std::size_t code_width = 128;
    CodeKind code_kind = CodeKind::lsh;
    std::uint64_t projection_seed = 7;
    std::size_t max_conflict_retries = 8;
    /// Re-draw Ψ on codebook conflicts; when false, conflicts are only counted.
    bool redraw_on_conflict = true;
    double theta = 1.0;
    TrainConfig softmax;
    TrainConfig hamming;
    std::size_t neighbor_classes = 10;
    std::size_t neighbor_k = 5;
    /// Threads for every parallel section; reports do not depend on it.
    unsigned workers = 1;

    ExperimentConfig();
    void validate() const;
};

/// Sets one knob by dotted name (e.g. "bank.sigma", "hamming.epochs").
/// Unknown keys and unparsable values throw ContractViolation.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

/// `key = value` lines; '#' starts a comment; blank lines ignored.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in);
void apply_config_file(ExperimentConfig& config, const std::string& path);

struct NeighborRow {
    std::size_t class_index = 0;
    std::string label;
    std::vector<CodeSearchResult> neighbors;
};

struct ExperimentReport {
    static constexpr const char* kSchema = "hocr.experiment/1";

    ExperimentConfig config;
    std::size_t conflict_count = 0;
    std::size_t projection_retries = 0;
    double softmax_train_accuracy = 0.0;
    double softmax_held_out_accuracy = 0.0;
    double initial_decode_accuracy = 0.0;  // held-out, W = Ψ before hinge training
    double train_decode_accuracy = 0.0;
    double decode_accuracy = 0.0;          // held-out
    double mean_intra_class_distance = 0.0;
    double mean_inter_class_distance = 0.0;
    std::vector<NeighborRow> neighbors;
    std::vector<EpochStat> softmax_history;
    std::vector<EpochStat> hamming_history;
    SizeReport head_size;
    std::uint64_t softmax_head_bytes = 0;
};

/// Stage 1: softmax head with cross-entropy on the bank. Codebook from the
/// bank via sign hashing and majority vote (or random codes). Stage 2:
/// Hamming head initialized at Ψ, trained with the hinge loss.
ExperimentReport run_two_stage(const ExperimentConfig& config);

struct SweepRow {
    std::size_t code_width = 0;
    double decode_accuracy = 0.0;
    std::uint64_t head_bytes = 0;
    std::uint64_t codebook_bytes = 0;
    std::optional<double> reference_accuracy;
};

/// One run_two_stage per distinct width, in first-occurrence order.
std::vector<SweepRow> sweep_code_length(const ExperimentConfig& config, const std::vector<std::size_t>& widths);

/// Large-vocabulary accuracies reported for code widths 256/512/1024/2048;
/// context only, not reproducible on synthetic banks.
std::optional<double> published_code_length_accuracy(std::size_t width);

// --- JSON (two-space indented, keys in declaration order) ---

std::string to_json(const ExperimentConfig& config);
std::string to_json(const SizeReport& report);
std::string to_json(const ExperimentReport& report);
std::string ladder_to_json(const std::string& name, std::span<const LadderRow> rows);
std::string sweep_to_json(const ExperimentConfig& config, std::span<const SweepRow> rows);

/// Rejects unknown fields and schema mismatches with FormatError.
ExperimentReport experiment_report_from_json(const std::string& text);

/// Fixed-width text rendering of a ladder.
void print_ladder(std::ostream& out, const std::string& name, std::span<const LadderRow> rows);
void print_size_report(std::ostream& out, const SizeReport& report);

}  // namespace hocr
