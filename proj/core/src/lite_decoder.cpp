#include "hocr/lite_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include "binary_io.hpp"
#include "hocr/error.hpp"
#include "hocr/rng.hpp"

namespace hocr {

void DecoderConfig::validate() const {
    require(d > 0 && heads > 0, "DecoderConfig: d and heads must be positive");
    require(d % heads == 0, "DecoderConfig: d must be divisible by the head count");
    require(layers >= 1, "DecoderConfig: at least one layer required");
    require(ffn_inner >= 1, "DecoderConfig: ffn_inner must be positive");
    require(max_len >= 1, "DecoderConfig: max_len must be positive");
}

AttentionMask AttentionMask::causal(std::size_t length) {
    AttentionMask m(length, length, false);
    for (std::size_t r = 0; r < length; ++r)
        for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
    return m;
}

Matrix attention_weights(const Matrix& queries, const Matrix& keys, const AttentionMask* mask) {
    require(queries.cols() == keys.cols(), "attention: query and key widths differ");
    if (mask)
        require(mask->rows() == queries.rows() && mask->cols() == keys.rows(), "attention: mask shape mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    Matrix w = matmul_transposed(queries, keys);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        auto row = w.row(r);
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (mask && !mask->allowed(r, c)) continue;
            row[c] *= scale;
            peak = std::max(peak, row[c]);
        }
        if (peak == -std::numeric_limits<double>::infinity())
            throw ContractViolation("attention: query row has no visible key");
        double total = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (mask && !mask->allowed(r, c)) {
                row[c] = 0.0;
                continue;
            }
            total += (row[c] = std::exp(row[c] - peak));
        }
        for (auto& v : row) v /= total;
    }
    return w;
}

Matrix scaled_dot_attention(const Matrix& queries, const Matrix& keys, const Matrix& values, const AttentionMask* mask) {
    require(keys.rows() == values.rows(), "attention: key and value counts differ");
    return matmul(attention_weights(queries, keys, mask), values);
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& params, double epsilon) {
    require(params.scale.size() == x.cols() && params.shift.size() == x.cols(), "layer_norm: parameter length mismatch");
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + epsilon);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) dst[c] = (in[c] - mean) * inv * params.scale[c] + params.shift[c];
    }
    return out;
}

namespace {

Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, begin + c);
    return out;
}

void add_in_place(Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "residual: shape mismatch");
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
}

Matrix feed_forward(const Matrix& x, const FeedForwardWeights& ffn) {
    Matrix hidden = matmul(x, ffn.inner);
    for (std::size_t r = 0; r < hidden.rows(); ++r) {
        auto row = hidden.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + ffn.inner_bias[c]);
    }
    Matrix out = matmul(hidden, ffn.outer);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += ffn.outer_bias[c];
    }
    return out;
}

}  // namespace

Matrix multi_head_attention(const Matrix& query_input, const Matrix& kv_input, const AttentionWeights& weights,
                            std::size_t heads, const AttentionMask* mask) {
    const std::size_t d = query_input.cols();
    require(kv_input.cols() == d, "multi_head_attention: input widths differ");
    require(heads > 0 && d % heads == 0, "multi_head_attention: d must be divisible by the head count");
    const Matrix q = matmul(query_input, weights.query);
    const Matrix k = matmul(kv_input, weights.key);
    const Matrix v = matmul(kv_input, weights.value);
    const std::size_t dh = d / heads;
    Matrix concat(query_input.rows(), d);
    for (std::size_t h = 0; h < heads; ++h) {
        const Matrix out =
            scaled_dot_attention(column_slice(q, h * dh, dh), column_slice(k, h * dh, dh), column_slice(v, h * dh, dh), mask);
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < dh; ++c) concat(r, h * dh + c) = out(r, c);
    }
    return matmul(concat, weights.output);
}

Matrix decoder_layer_forward(const SequenceState& state, const LayerWeights& layer, const DecoderConfig& config) {
    const auto& y = state.targets;
    const auto& x = state.memory;
    require(y.cols() == config.d, "decoder_layer_forward: target width differs from d");
    require(y.rows() <= config.max_len, "decoder_layer_forward: sequence longer than max_len");
    if (y.rows() == 0) return Matrix(0, config.d);
    require(x.cols() == config.d && x.rows() >= 1, "decoder_layer_forward: memory must be S × d with S >= 1");

    const auto mask = AttentionMask::causal(y.rows());
    Matrix a = multi_head_attention(y, y, layer.self_attention, config.heads, &mask);
    add_in_place(a, y);
    a = layer_norm(a, layer.self_norm);

    Matrix b = multi_head_attention(a, x, layer.cross_attention, config.heads);
    add_in_place(b, a);
    b = layer_norm(b, layer.cross_norm);

    if (!config.use_ffn) return b;
    if (!layer.ffn || !layer.ffn_norm) throw ContractViolation("decoder_layer_forward: use_ffn set but layer has no FFN");
    Matrix c = feed_forward(b, *layer.ffn);
    add_in_place(c, b);
    return layer_norm(c, *layer.ffn_norm);
}

Matrix decoder_forward(const SequenceState& state, const DecoderWeights& weights, const DecoderConfig& config) {
    config.validate();
    require(weights.logical_layers() == config.layers, "decoder_forward: weight layer count differs from config");
    SequenceState current{state.targets, state.memory};
    for (std::size_t l = 0; l < config.layers; ++l)
        current.targets = decoder_layer_forward(current, weights.layer(l), config);
    return current.targets;
}

std::vector<Matrix> decoder_forward_batch(std::span<const SequenceState> states, const DecoderWeights& weights,
                                          const DecoderConfig& config, unsigned threads) {
    std::vector<Matrix> out(states.size());
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(states.size())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < states.size(); ++i) out[i] = decoder_forward(states[i], weights, config);
        return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < states.size(); i += workers)
                        out[i] = decoder_forward(states[i], weights, config);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// --- weights ---

namespace {

std::size_t attention_count(const AttentionWeights& a) {
    return a.query.data().size() + a.key.data().size() + a.value.data().size() + a.output.data().size();
}

std::size_t norm_count(const LayerNormParams& n) { return n.scale.size() + n.shift.size(); }

Matrix random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = stddev * rng.normal();
    return m;
}

LayerNormParams unit_norm(std::size_t d) { return {std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)}; }

AttentionWeights random_attention(std::size_t d, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return {random_matrix(d, d, s, rng), random_matrix(d, d, s, rng), random_matrix(d, d, s, rng),
            random_matrix(d, d, s, rng)};
}

void check_layer(const LayerWeights& l, const DecoderConfig& c) {
    auto square = [&](const Matrix& m) { return m.rows() == c.d && m.cols() == c.d; };
    for (const auto* a : {&l.self_attention, &l.cross_attention})
        require(square(a->query) && square(a->key) && square(a->value) && square(a->output),
                "DecoderWeights: attention projections must be d × d");
    for (const auto* n : {&l.self_norm, &l.cross_norm})
        require(n->scale.size() == c.d && n->shift.size() == c.d, "DecoderWeights: layer norm length must be d");
    require(l.ffn.has_value() == l.ffn_norm.has_value(), "DecoderWeights: FFN and its norm must come together");
    if (l.ffn) {
        const auto& f = *l.ffn;
        require(f.inner.rows() == c.d && f.outer.cols() == c.d && f.inner.cols() == f.outer.rows() &&
                    f.inner_bias.size() == f.inner.cols() && f.outer_bias.size() == c.d,
                "DecoderWeights: inconsistent FFN shapes");
        require(l.ffn_norm->scale.size() == c.d && l.ffn_norm->shift.size() == c.d,
                "DecoderWeights: layer norm length must be d");
    }
    if (c.use_ffn) require(l.ffn.has_value(), "DecoderWeights: config uses the FFN but weights have none");
}

}  // namespace

std::size_t LayerWeights::parameter_count() const {
    std::size_t n = attention_count(self_attention) + attention_count(cross_attention) + norm_count(self_norm) +
                    norm_count(cross_norm);
    if (ffn)
        n += ffn->inner.data().size() + ffn->inner_bias.size() + ffn->outer.data().size() + ffn->outer_bias.size();
    if (ffn_norm) n += norm_count(*ffn_norm);
    return n;
}

DecoderWeights::DecoderWeights(const DecoderConfig& config, std::vector<std::shared_ptr<LayerWeights>> physical)
    : config_(config), physical_(std::move(physical)) {
    config_.validate();
    const std::size_t expected = config_.share_layers ? 1 : config_.layers;
    require(physical_.size() == expected, "DecoderWeights: physical layer count must be 1 (shared) or N");
    for (const auto& p : physical_) {
        require(p != nullptr, "DecoderWeights: null layer");
        check_layer(*p, config_);
    }
    for (std::size_t l = 0; l < config_.layers; ++l)
        logical_.push_back(physical_[config_.share_layers ? 0 : l].get());
}

DecoderWeights DecoderWeights::random(const DecoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t count = config.share_layers ? 1 : config.layers;
    std::vector<std::shared_ptr<LayerWeights>> physical;
    for (std::size_t p = 0; p < count; ++p) {
        auto l = std::make_shared<LayerWeights>();
        l->self_attention = random_attention(config.d, rng);
        l->cross_attention = random_attention(config.d, rng);
        l->self_norm = unit_norm(config.d);
        l->cross_norm = unit_norm(config.d);
        if (config.use_ffn) {
            FeedForwardWeights f;
            f.inner = random_matrix(config.d, config.ffn_inner, 1.0 / std::sqrt(static_cast<double>(config.d)), rng);
            f.inner_bias.assign(config.ffn_inner, 0.0);
            f.outer = random_matrix(config.ffn_inner, config.d, 1.0 / std::sqrt(static_cast<double>(config.ffn_inner)), rng);
            f.outer_bias.assign(config.d, 0.0);
            l->ffn = std::move(f);
            l->ffn_norm = unit_norm(config.d);
        }
        physical.push_back(std::move(l));
    }
    return DecoderWeights(config, std::move(physical));
}

std::size_t DecoderWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : physical_) n += p->parameter_count();
    return n;
}

namespace {

void write_tensor(io::ByteWriter& w, const std::string& name, std::span<const std::size_t> dims,
                  std::span<const double> data) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) w.u32(static_cast<std::uint32_t>(d));
    for (double v : data) w.f32(static_cast<float>(v));
}

void write_matrix(io::ByteWriter& w, const std::string& name, const Matrix& m) {
    const std::size_t dims[] = {m.rows(), m.cols()};
    write_tensor(w, name, dims, m.data());
}

void write_vector(io::ByteWriter& w, const std::string& name, const std::vector<double>& v) {
    const std::size_t dims[] = {v.size()};
    write_tensor(w, name, dims, v);
}

struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;
};

}  // namespace

std::vector<std::uint8_t> DecoderWeights::to_bytes() const {
    io::ByteWriter w;
    w.magic("HODW");
    w.u16(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(config_.d));
    w.u32(static_cast<std::uint32_t>(config_.heads));
    w.u32(static_cast<std::uint32_t>(config_.layers));
    w.u8(config_.use_ffn ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(config_.ffn_inner));
    w.u8(config_.share_layers ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(config_.max_len));
    for (std::size_t p = 0; p < physical_.size(); ++p) {
        const auto& l = *physical_[p];
        const std::string pre = "layer" + std::to_string(p) + ".";
        for (const auto& [tag, att] : {std::pair{"self", &l.self_attention}, std::pair{"cross", &l.cross_attention}}) {
            write_matrix(w, pre + tag + ".query", att->query);
            write_matrix(w, pre + tag + ".key", att->key);
            write_matrix(w, pre + tag + ".value", att->value);
            write_matrix(w, pre + tag + ".output", att->output);
        }
        write_vector(w, pre + "self_norm.scale", l.self_norm.scale);
        write_vector(w, pre + "self_norm.shift", l.self_norm.shift);
        write_vector(w, pre + "cross_norm.scale", l.cross_norm.scale);
        write_vector(w, pre + "cross_norm.shift", l.cross_norm.shift);
        if (l.ffn) {
            write_matrix(w, pre + "ffn.inner", l.ffn->inner);
            write_vector(w, pre + "ffn.inner_bias", l.ffn->inner_bias);
            write_matrix(w, pre + "ffn.outer", l.ffn->outer);
            write_vector(w, pre + "ffn.outer_bias", l.ffn->outer_bias);
            write_vector(w, pre + "ffn_norm.scale", l.ffn_norm->scale);
            write_vector(w, pre + "ffn_norm.shift", l.ffn_norm->shift);
        }
    }
    return w.take();
}

DecoderWeights DecoderWeights::from_bytes(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes.data(), bytes.size());
    r.expect_magic("HODW");
    const auto version = r.u16();
    if (version != kFormatVersion) throw FormatError("HODW: unsupported version " + std::to_string(version));
    DecoderConfig c;
    c.d = r.u32();
    c.heads = r.u32();
    c.layers = r.u32();
    c.use_ffn = r.u8() != 0;
    c.ffn_inner = r.u32();
    c.share_layers = r.u8() != 0;
    c.max_len = r.u32();

    std::map<std::string, Tensor> tensors;
    while (!r.at_end()) {
        std::string name = r.str(r.u16());
        Tensor t;
        const std::size_t rank = r.u8();
        std::size_t count = 1;
        for (std::size_t i = 0; i < rank; ++i) {
            t.dims.push_back(r.u32());
            count *= t.dims.back();
        }
        if (r.remaining() / 4 < count) throw FormatError("HODW: truncated tensor '" + name + "'");
        t.data.resize(count);
        for (auto& v : t.data) v = static_cast<double>(r.f32());
        if (!tensors.emplace(std::move(name), std::move(t)).second) throw FormatError("HODW: duplicate tensor");
    }

    auto take = [&](const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("HODW: missing tensor '" + name + "'");
        Tensor t = std::move(it->second);
        tensors.erase(it);
        return t;
    };
    auto matrix = [&](const std::string& name) {
        Tensor t = take(name);
        if (t.dims.size() != 2) throw FormatError("HODW: tensor '" + name + "' is not rank 2");
        Matrix m(t.dims[0], t.dims[1]);
        std::copy(t.data.begin(), t.data.end(), m.data().begin());
        return m;
    };
    auto vector = [&](const std::string& name) {
        Tensor t = take(name);
        if (t.dims.size() != 1) throw FormatError("HODW: tensor '" + name + "' is not rank 1");
        return t.data;
    };

    const std::size_t count = c.share_layers ? 1 : c.layers;
    std::vector<std::shared_ptr<LayerWeights>> physical;
    for (std::size_t p = 0; p < count; ++p) {
        const std::string pre = "layer" + std::to_string(p) + ".";
        auto l = std::make_shared<LayerWeights>();
        for (const auto& [tag, att] : {std::pair{"self", &l->self_attention}, std::pair{"cross", &l->cross_attention}}) {
            att->query = matrix(pre + tag + ".query");
            att->key = matrix(pre + tag + ".key");
            att->value = matrix(pre + tag + ".value");
            att->output = matrix(pre + tag + ".output");
        }
        l->self_norm = {vector(pre + "self_norm.scale"), vector(pre + "self_norm.shift")};
        l->cross_norm = {vector(pre + "cross_norm.scale"), vector(pre + "cross_norm.shift")};
        if (tensors.count(pre + "ffn.inner")) {
            FeedForwardWeights f;
            f.inner = matrix(pre + "ffn.inner");
            f.inner_bias = vector(pre + "ffn.inner_bias");
            f.outer = matrix(pre + "ffn.outer");
            f.outer_bias = vector(pre + "ffn.outer_bias");
            l->ffn = std::move(f);
            l->ffn_norm = LayerNormParams{vector(pre + "ffn_norm.scale"), vector(pre + "ffn_norm.shift")};
        }
        physical.push_back(std::move(l));
    }
    if (!tensors.empty()) throw FormatError("HODW: unexpected tensor '" + tensors.begin()->first + "'");
    try {
        return DecoderWeights(c, std::move(physical));
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("HODW: ") + e.what());
    }
}

void DecoderWeights::save(const std::string& path) const { io::write_file(path, to_bytes()); }

DecoderWeights DecoderWeights::load(const std::string& path) { return from_bytes(io::read_file(path)); }

// --- embedding ---

std::vector<double> hamming_embed(const BitCode& code, std::size_t d) {
    if (code.width() != d) throw ContractViolation("hamming_embed: code width must equal the model width");
    const double unit = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> e(d);
    for (std::size_t k = 0; k < d; ++k) e[k] = code.get(k) ? unit : -unit;
    return e;
}

CodeEmbedder::CodeEmbedder(std::size_t code_width, std::size_t d, bool allow_projection, std::uint64_t seed)
    : code_width_(code_width), d_(d) {
    require(code_width > 0 && d > 0, "CodeEmbedder: widths must be positive");
    if (code_width == d) return;
    if (!allow_projection)
        throw ContractViolation("CodeEmbedder: code width differs from d and projection is not enabled");
    Rng rng(seed);
    projection_ = random_matrix(code_width, d, 1.0 / std::sqrt(static_cast<double>(code_width)), rng);
}

std::vector<double> CodeEmbedder::embed(const BitCode& code) const {
    if (code.width() != code_width_) throw ContractViolation("CodeEmbedder: code width mismatch");
    if (projection_.empty()) return hamming_embed(code, d_);
    return vec_mat(hamming_embed(code, code_width_), projection_);
}

Matrix sinusoidal_positions(std::size_t length, std::size_t d) {
    Matrix pe(length, d);
    for (std::size_t pos = 0; pos < length; ++pos)
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            const double angle = static_cast<double>(pos) * freq;
            pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

std::vector<std::size_t> greedy_decode(const Matrix& encoder_features, const DecoderWeights& weights,
                                       const DecoderConfig& config, const HammingClassifier& head,
                                       const CodeEmbedder& embedder, const SpecialTokens& tokens,
                                       std::size_t max_steps) {
    require(head.dim() == config.d, "greedy_decode: head input width differs from d");
    require(embedder.d() == config.d, "greedy_decode: embedder output width differs from d");
    const auto& book = head.codebook();
    require(tokens.start < book.size() && tokens.end < book.size(), "greedy_decode: special tokens out of range");

    std::vector<std::size_t> sequence{tokens.start};
    std::vector<std::size_t> output;
    const Matrix positions = sinusoidal_positions(config.max_len, config.d);
    while (output.size() < max_steps && sequence.size() <= config.max_len) {
        SequenceState state{Matrix(sequence.size(), config.d), encoder_features};
        for (std::size_t t = 0; t < sequence.size(); ++t) {
            const auto e = embedder.embed(book.code(sequence[t]));
            for (std::size_t c = 0; c < config.d; ++c) state.targets(t, c) = e[c] + positions(t, c);
        }
        const Matrix features = decoder_forward(state, weights, config);
        const auto next = decode(head, features.row(features.rows() - 1)).class_index;
        if (next == tokens.end) break;
        output.push_back(next);
        sequence.push_back(next);
    }
    return output;
}

ParameterBreakdown count_parameters(const DecoderConfig& config) {
    config.validate();
    ParameterBreakdown b;
    const std::size_t d = config.d;
    b.attention_per_layer = 8 * d * d;
    b.ffn_per_layer = config.use_ffn ? 2 * d * config.ffn_inner + config.ffn_inner + d : 0;
    b.layer_norm_per_layer = (config.use_ffn ? 3 : 2) * 2 * d;
    b.logical_layers = config.layers;
    b.physical_layers = config.share_layers ? 1 : config.layers;
    return b;
}

}  // namespace hocr
