#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hocr/bitcode.hpp"
#include "hocr/codebook.hpp"
#include "hocr/hamming_head.hpp"
#include "hocr/matrix.hpp"

namespace hocr {

struct DecoderConfig {
    std::size_t d = 512;
    std::size_t heads = 8;
    std::size_t layers = 3;
    bool use_ffn = false;
    std::size_t ffn_inner = 2048;
    bool share_layers = true;
    std::size_t max_len = 64;

    std::size_t head_dim() const noexcept { return d / heads; }
    void validate() const;
};

/// Row-major boolean mask; allowed(r, c) says whether query r may see key c.
class AttentionMask {
public:
    AttentionMask(std::size_t rows, std::size_t cols, bool fill = true)
        : rows_(rows), cols_(cols), allowed_(rows * cols, fill ? 1 : 0) {}

    static AttentionMask causal(std::size_t length);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool allowed(std::size_t r, std::size_t c) const { return allowed_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { allowed_[r * cols_ + c] = v ? 1 : 0; }

private:
    std::size_t rows_, cols_;
    std::vector<std::uint8_t> allowed_;
};

/// Row-normalized weights softmax(Q·Kᵀ/√dk) with masked entries at exactly 0.
/// A row with no allowed key is a ContractViolation.
Matrix attention_weights(const Matrix& queries, const Matrix& keys, const AttentionMask* mask = nullptr);

Matrix scaled_dot_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                            const AttentionMask* mask = nullptr);

/// Four d × d projections. Head k reads columns [k·d/H, (k+1)·d/H) of the
/// query/key/value matrices; the concatenated heads go through `output`.
struct AttentionWeights {
    Matrix query, key, value, output;
};

struct LayerNormParams {
    std::vector<double> scale, shift;
};

struct FeedForwardWeights {
    Matrix inner;  // d × ffn_inner
    std::vector<double> inner_bias;
    Matrix outer;  // ffn_inner × d
    std::vector<double> outer_bias;
};

struct LayerWeights {
    AttentionWeights self_attention;
    AttentionWeights cross_attention;
    LayerNormParams self_norm;
    LayerNormParams cross_norm;
    std::optional<FeedForwardWeights> ffn;
    std::optional<LayerNormParams> ffn_norm;

    std::size_t parameter_count() const;
};

/// Per-layer parameter sets for an N-layer decoder. With sharing, every
/// logical layer points at one physical LayerWeights, so mutating layer 0
/// changes all of them.
class DecoderWeights {
public:
    DecoderWeights() = default;
    DecoderWeights(const DecoderConfig& config, std::vector<std::shared_ptr<LayerWeights>> physical);

    /// Xavier-style N(0, 1/d) projections, unit norms; FFN tensors only
    /// when config.use_ffn.
    static DecoderWeights random(const DecoderConfig& config, std::uint64_t seed);

    std::size_t logical_layers() const noexcept { return logical_.size(); }
    std::size_t physical_layers() const noexcept { return physical_.size(); }
    bool shared() const noexcept { return physical_.size() == 1 && logical_.size() > 1; }

    const LayerWeights& layer(std::size_t l) const { return *logical_.at(l); }
    LayerWeights& mutable_layer(std::size_t l) { return *logical_.at(l); }

    std::size_t parameter_count() const;

    /// "HODW", u16 version, config, then per tensor: u16 name length, name,
    /// u8 rank, u32 dims, float32 data. Shared weights are stored once.
    std::vector<std::uint8_t> to_bytes() const;
    static DecoderWeights from_bytes(std::span<const std::uint8_t> bytes);
    void save(const std::string& path) const;
    static DecoderWeights load(const std::string& path);

    const DecoderConfig& config() const noexcept { return config_; }

    static constexpr std::uint16_t kFormatVersion = 1;

private:
    DecoderConfig config_;
    std::vector<std::shared_ptr<LayerWeights>> physical_;
    std::vector<LayerWeights*> logical_;
};

/// Decoder input: embedded targets Y (T × d) and encoder features X (S × d).
/// Self-attention always uses the causal mask.
struct SequenceState {
    Matrix targets;
    Matrix memory;
};

inline constexpr double kLayerNormEpsilon = 1e-5;

Matrix layer_norm(const Matrix& x, const LayerNormParams& params, double epsilon = kLayerNormEpsilon);

Matrix multi_head_attention(const Matrix& query_input, const Matrix& kv_input, const AttentionWeights& weights,
                            std::size_t heads, const AttentionMask* mask = nullptr);

/// LayerNorm(x + Sublayer(x)) around masked self-attention, cross-attention,
/// and the FFN when config.use_ffn.
Matrix decoder_layer_forward(const SequenceState& state, const LayerWeights& layer, const DecoderConfig& config);

Matrix decoder_forward(const SequenceState& state, const DecoderWeights& weights, const DecoderConfig& config);

/// Runs independent sequences, optionally on several threads.
std::vector<Matrix> decoder_forward_batch(std::span<const SequenceState> states, const DecoderWeights& weights,
                                          const DecoderConfig& config, unsigned threads = 1);

/// Set bit -> +1/√d, clear bit -> −1/√d. Requires code.width() == d.
std::vector<double> hamming_embed(const BitCode& code, std::size_t d);

/// Maps codes to model-width vectors. Equal widths use hamming_embed
/// directly; a width ≠ d needs `allow_projection`, which applies a fixed
/// seeded N(0, 1/width) projection to the ±1/√width vector.
class CodeEmbedder {
public:
    CodeEmbedder(std::size_t code_width, std::size_t d, bool allow_projection = false, std::uint64_t seed = 0);

    std::vector<double> embed(const BitCode& code) const;
    std::size_t code_width() const noexcept { return code_width_; }
    std::size_t d() const noexcept { return d_; }
    bool projects() const noexcept { return !projection_.empty(); }

private:
    std::size_t code_width_;
    std::size_t d_;
    Matrix projection_;
};

/// Fixed sinusoidal position table, T × d.
Matrix sinusoidal_positions(std::size_t length, std::size_t d);

/// Autoregressive loop: start token, decode the last position with `head`,
/// feed the predicted class's code back in. Stops at the end token,
/// after `max_steps` outputs, or when the sequence reaches config.max_len.
/// Returned indices exclude the start and end tokens.
std::vector<std::size_t> greedy_decode(const Matrix& encoder_features, const DecoderWeights& weights,
                                       const DecoderConfig& config, const HammingClassifier& head,
                                       const CodeEmbedder& embedder, const SpecialTokens& tokens,
                                       std::size_t max_steps);

struct ParameterBreakdown {
    std::size_t attention_per_layer = 0;
    std::size_t ffn_per_layer = 0;
    std::size_t layer_norm_per_layer = 0;
    std::size_t logical_layers = 0;
    std::size_t physical_layers = 0;

    std::size_t per_layer() const noexcept { return attention_per_layer + ffn_per_layer + layer_norm_per_layer; }
    std::size_t attention_total() const noexcept { return attention_per_layer * physical_layers; }
    std::size_t ffn_total() const noexcept { return ffn_per_layer * physical_layers; }
    std::size_t layer_norm_total() const noexcept { return layer_norm_per_layer * physical_layers; }
    std::size_t physical_total() const noexcept { return per_layer() * physical_layers; }
    std::size_t logical_total() const noexcept { return per_layer() * logical_layers; }
};

ParameterBreakdown count_parameters(const DecoderConfig& config);

}  // namespace hocr
