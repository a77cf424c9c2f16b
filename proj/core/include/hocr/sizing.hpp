#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hocr {

enum class Precision { fp32, fp16 };

constexpr std::uint64_t bytes_per_value(Precision p) noexcept { return p == Precision::fp32 ? 4 : 2; }
const char* to_string(Precision p);
Precision parse_precision(const std::string& s);

inline constexpr double kBytesPerMiB = 1024.0 * 1024.0;
constexpr double to_mib(std::uint64_t bytes) noexcept { return static_cast<double>(bytes) / kBytesPerMiB; }

struct SizeItem {
    std::string name;
    std::uint64_t count = 0;  // parameters, or bits for packed items
    std::uint64_t bytes = 0;
    bool bit_packed = false;
};

/// Knobs for a whole recognizer: opaque backbone plus decoder and heads.
struct ModelSizeConfig {
    std::string backbone = "resnet31-gcnet";
    std::uint64_t backbone_params = 0;
    std::size_t d = 512;
    std::size_t code_width = 512;
    std::size_t classes = 20948;
    std::size_t layers = 3;
    std::size_t heads = 8;
    std::size_t ffn_inner = 2048;
    bool hamming_classifier = false;
    bool hamming_embedding = false;
    bool use_ffn = true;
    bool share_layers = false;
    /// Count the d′ → d embedding projection as stored weights when d′ ≠ d.
    bool store_embedding_projection = true;
    Precision precision = Precision::fp32;
};

struct SizeReport {
    std::string title;
    Precision precision = Precision::fp32;
    std::vector<SizeItem> items;
    ModelSizeConfig assumptions;

    std::uint64_t total_bytes() const noexcept;
    double total_mib() const noexcept { return to_mib(total_bytes()); }
    const SizeItem* find(const std::string& name) const noexcept;
};

std::uint64_t softmax_head_bytes(std::size_t classes, std::size_t d, Precision p);
/// L rows of ceil(d′/8) bytes.
std::uint64_t codebook_bytes(std::size_t classes, std::size_t code_width);
/// W (d × d′ floats) plus the packed codebook, itemized.
SizeReport hamming_head_report(std::size_t classes, std::size_t d, std::size_t code_width, Precision p);
std::uint64_t hamming_head_bytes(std::size_t classes, std::size_t d, std::size_t code_width, Precision p);
std::uint64_t embedding_bytes(std::size_t classes, std::size_t d, Precision p);
std::uint64_t factorized_bytes(std::size_t classes, std::size_t d, std::size_t bottleneck, Precision p);

/// Smallest class count at which the Hamming head is strictly smaller than
/// a softmax head of the same d; nullopt when it never is.
std::optional<std::uint64_t> hamming_crossover_classes(std::size_t d, std::size_t code_width, Precision p);

SizeReport model_size(const ModelSizeConfig& config);

struct BackboneSwap {
    std::string name;
    std::uint64_t params = 0;
    std::size_t d = 0;
    std::size_t ffn_inner = 0;
};

enum class Toggle { swap_backbone, hamming_classifier, hamming_embedding, no_ffn, share_layers, half_precision };
const char* to_string(Toggle t);
Toggle parse_toggle(const std::string& s);

struct LadderStep {
    std::string label;
    std::vector<Toggle> toggles;
    BackboneSwap swap;                      // read when toggles contain swap_backbone
    std::optional<double> reference_mib;    // published size for this column, if any
};

struct LadderRow {
    SizeReport report;
    std::int64_t delta_bytes = 0;  // previous total − this total; 0 for the first row
    std::optional<double> reference_mib;
};

/// Row 0 is `base`; row i applies step i−1's toggles on top of row i−1.
std::vector<LadderRow> ladder_report(const ModelSizeConfig& base, std::optional<double> base_reference_mib,
                                     std::span<const LadderStep> steps);

// Documented configurations for the reference ladders.

/// ResNet31+GCNet parameter count implied by a 223.9 MiB 62-class model
/// with the d=512, 3-layer FFN decoder and learned embedding.
std::uint64_t resnet_backbone_params();
/// MobileNetV2 at 2.3 MiB fp32.
std::uint64_t mobilenet_backbone_params();

ModelSizeConfig resnet_baseline_config();
BackboneSwap mobilenet_swap();  // d = 256, ffn_inner = 1024

struct Ladder {
    std::string name;
    ModelSizeConfig base;
    std::optional<double> base_reference_mib;
    std::vector<LadderStep> steps;
};

/// Mobile ladder: backbone swap, HC, HE, no FFN, sharing, fp16.
Ladder mobile_ladder();
/// ResNet ladders: base → HC → HC+HE, and base → NoFFN+PS → +HC+HE.
std::vector<Ladder> resnet_ladders();

}  // namespace hocr
