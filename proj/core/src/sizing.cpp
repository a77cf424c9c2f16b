#include "hocr/sizing.hpp"

#include <cmath>

#include "hocr/error.hpp"
#include "hocr/lite_decoder.hpp"

namespace hocr {

const char* to_string(Precision p) { return p == Precision::fp32 ? "fp32" : "fp16"; }

Precision parse_precision(const std::string& s) {
    if (s == "fp32") return Precision::fp32;
    if (s == "fp16") return Precision::fp16;
    throw ContractViolation("unknown precision '" + s + "' (expected fp32 or fp16)");
}

std::uint64_t SizeReport::total_bytes() const noexcept {
    std::uint64_t t = 0;
    for (const auto& i : items) t += i.bytes;
    return t;
}

const SizeItem* SizeReport::find(const std::string& name) const noexcept {
    for (const auto& i : items)
        if (i.name == name) return &i;
    return nullptr;
}

namespace {

void require_positive(std::initializer_list<std::size_t> dims) {
    for (auto v : dims) require(v > 0, "sizing: dimensions must be positive");
}

SizeItem float_item(std::string name, std::uint64_t count, Precision p) {
    return {std::move(name), count, count * bytes_per_value(p), false};
}

SizeItem codebook_item(std::size_t classes, std::size_t code_width) {
    return {"codebook", static_cast<std::uint64_t>(classes) * code_width, codebook_bytes(classes, code_width), true};
}

}  // namespace

std::uint64_t softmax_head_bytes(std::size_t classes, std::size_t d, Precision p) {
    require_positive({classes, d});
    return static_cast<std::uint64_t>(classes) * d * bytes_per_value(p);
}

std::uint64_t codebook_bytes(std::size_t classes, std::size_t code_width) {
    require_positive({classes, code_width});
    return static_cast<std::uint64_t>(classes) * ((code_width + 7) / 8);
}

SizeReport hamming_head_report(std::size_t classes, std::size_t d, std::size_t code_width, Precision p) {
    require_positive({classes, d, code_width});
    SizeReport r;
    r.title = "hamming head";
    r.precision = p;
    r.items.push_back(float_item("hamming projection", static_cast<std::uint64_t>(d) * code_width, p));
    r.items.push_back(codebook_item(classes, code_width));
    r.assumptions.d = d;
    r.assumptions.code_width = code_width;
    r.assumptions.classes = classes;
    r.assumptions.precision = p;
    return r;
}

std::uint64_t hamming_head_bytes(std::size_t classes, std::size_t d, std::size_t code_width, Precision p) {
    return hamming_head_report(classes, d, code_width, p).total_bytes();
}

std::uint64_t embedding_bytes(std::size_t classes, std::size_t d, Precision p) {
    return softmax_head_bytes(classes, d, p);
}

std::uint64_t factorized_bytes(std::size_t classes, std::size_t d, std::size_t bottleneck, Precision p) {
    require_positive({classes, d, bottleneck});
    return (static_cast<std::uint64_t>(d) * bottleneck + static_cast<std::uint64_t>(bottleneck) * classes) *
           bytes_per_value(p);
}

std::optional<std::uint64_t> hamming_crossover_classes(std::size_t d, std::size_t code_width, Precision p) {
    require_positive({d, code_width});
    // d·d′·w + L·row < L·d·w  <=>  L·(d·w − row) > d·d′·w
    const std::uint64_t w = bytes_per_value(p);
    const std::uint64_t row = (code_width + 7) / 8;
    const std::uint64_t per_class_saving = d * w;
    if (per_class_saving <= row) return std::nullopt;
    const std::uint64_t fixed = static_cast<std::uint64_t>(d) * code_width * w;
    return fixed / (per_class_saving - row) + 1;
}

SizeReport model_size(const ModelSizeConfig& c) {
    require_positive({c.d, c.code_width, c.classes, c.layers, c.heads, c.ffn_inner});
    const Precision p = c.precision;
    SizeReport r;
    r.title = "model";
    r.precision = p;
    r.assumptions = c;

    r.items.push_back(float_item("backbone (" + c.backbone + ")", c.backbone_params, p));

    DecoderConfig dc;
    dc.d = c.d;
    dc.heads = c.heads;
    dc.layers = c.layers;
    dc.use_ffn = c.use_ffn;
    dc.ffn_inner = c.ffn_inner;
    dc.share_layers = c.share_layers;
    const auto params = count_parameters(dc);
    r.items.push_back(float_item("decoder attention", params.attention_total(), p));
    if (c.use_ffn) r.items.push_back(float_item("decoder feed-forward", params.ffn_total(), p));
    r.items.push_back(float_item("decoder layer norms", params.layer_norm_total(), p));

    if (c.hamming_classifier)
        r.items.push_back(float_item("hamming projection", static_cast<std::uint64_t>(c.d) * c.code_width, p));
    else
        r.items.push_back(float_item("softmax classifier", static_cast<std::uint64_t>(c.d) * c.classes, p));

    if (c.hamming_embedding) {
        if (c.code_width != c.d && c.store_embedding_projection)
            r.items.push_back(
                float_item("embedding projection", static_cast<std::uint64_t>(c.code_width) * c.d, p));
    } else {
        r.items.push_back(float_item("learned embedding", static_cast<std::uint64_t>(c.classes) * c.d, p));
    }
    // One codebook serves both the classifier and the embedding.
    if (c.hamming_classifier || c.hamming_embedding) r.items.push_back(codebook_item(c.classes, c.code_width));
    return r;
}

const char* to_string(Toggle t) {
    switch (t) {
        case Toggle::swap_backbone: return "swap-backbone";
        case Toggle::hamming_classifier: return "hc";
        case Toggle::hamming_embedding: return "he";
        case Toggle::no_ffn: return "no-ffn";
        case Toggle::share_layers: return "ps";
        case Toggle::half_precision: return "fp16";
    }
    return "unknown";
}

Toggle parse_toggle(const std::string& s) {
    for (auto t : {Toggle::swap_backbone, Toggle::hamming_classifier, Toggle::hamming_embedding, Toggle::no_ffn,
                   Toggle::share_layers, Toggle::half_precision})
        if (s == to_string(t)) return t;
    throw ContractViolation("unknown ladder toggle '" + s + "'");
}

std::vector<LadderRow> ladder_report(const ModelSizeConfig& base, std::optional<double> base_reference_mib,
                                     std::span<const LadderStep> steps) {
    std::vector<LadderRow> rows;
    ModelSizeConfig c = base;
    auto report = model_size(c);
    report.title = "baseline";
    rows.push_back({report, 0, base_reference_mib});
    for (const auto& step : steps) {
        for (auto t : step.toggles) {
            switch (t) {
                case Toggle::swap_backbone:
                    c.backbone = step.swap.name;
                    c.backbone_params = step.swap.params;
                    if (step.swap.d) c.d = step.swap.d;
                    if (step.swap.ffn_inner) c.ffn_inner = step.swap.ffn_inner;
                    break;
                case Toggle::hamming_classifier: c.hamming_classifier = true; break;
                case Toggle::hamming_embedding: c.hamming_embedding = true; break;
                case Toggle::no_ffn: c.use_ffn = false; break;
                case Toggle::share_layers: c.share_layers = true; break;
                case Toggle::half_precision: c.precision = Precision::fp16; break;
            }
        }
        auto r = model_size(c);
        r.title = step.label;
        const auto prev = rows.back().report.total_bytes();
        const auto delta = static_cast<std::int64_t>(prev) - static_cast<std::int64_t>(r.total_bytes());
        rows.push_back({std::move(r), delta, step.reference_mib});
    }
    return rows;
}

namespace {

std::uint64_t params_for_mib(double mib) { return static_cast<std::uint64_t>(std::llround(mib * kBytesPerMiB / 4.0)); }

}  // namespace

std::uint64_t resnet_backbone_params() {
    // 223.9 MiB is the 62-class model: backbone + unshared FFN decoder +
    // softmax and learned embedding over 62 classes.
    ModelSizeConfig small = resnet_baseline_config();
    small.backbone_params = 0;
    small.classes = 62;
    const auto rest = model_size(small).total_bytes() / 4;
    return params_for_mib(223.9) - rest;
}

std::uint64_t mobilenet_backbone_params() { return params_for_mib(2.3); }

ModelSizeConfig resnet_baseline_config() {
    ModelSizeConfig c;
    c.backbone = "resnet31-gcnet";
    c.d = 512;
    c.code_width = 512;
    c.classes = 20948;
    c.layers = 3;
    c.heads = 8;
    c.ffn_inner = 2048;
    c.use_ffn = true;
    c.share_layers = false;
    c.precision = Precision::fp32;
    // Filled last: resnet_backbone_params() calls back into this function.
    c.backbone_params = 0;
    return c;
}

BackboneSwap mobilenet_swap() { return {"mobilenet-v2", mobilenet_backbone_params(), 256, 1024}; }

Ladder mobile_ladder() {
    Ladder l;
    l.name = "mobile";
    l.base = resnet_baseline_config();
    l.base.backbone_params = resnet_backbone_params();
    l.base_reference_mib = 305.8;
    l.steps = {
        {"+mobilenet-v2", {Toggle::swap_backbone}, mobilenet_swap(), 55.6},
        {"+hamming classifier", {Toggle::hamming_classifier}, {}, 36.7},
        {"+hamming embedding", {Toggle::hamming_embedding}, {}, 16.6},
        {"+no feed-forward", {Toggle::no_ffn}, {}, 10.6},
        {"+parameter sharing", {Toggle::share_layers}, {}, 6.6},
        {"+fp16", {Toggle::half_precision}, {}, 3.9},
    };
    return l;
}

std::vector<Ladder> resnet_ladders() {
    auto base = resnet_baseline_config();
    base.backbone_params = resnet_backbone_params();
    Ladder heads{"resnet-heads", base, 305.9,
                 {{"HC", {Toggle::hamming_classifier}, {}, 267.0},
                  {"HC+HE", {Toggle::hamming_embedding}, {}, 226.9}}};
    Ladder decoder{"resnet-decoder", base, 305.9,
                   {{"NoFFN+PS", {Toggle::no_ffn, Toggle::share_layers}, {}, 266.1},
                    {"NoFFN+PS+HC+HE", {Toggle::hamming_classifier, Toggle::hamming_embedding}, {}, 187.1}}};
    return {heads, decoder};
}

}  // namespace hocr
