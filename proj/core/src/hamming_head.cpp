#include "hocr/hamming_head.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <thread>

#include "binary_io.hpp"
#include "hocr/error.hpp"
#include "hocr/rng.hpp"

namespace hocr {

HammingClassifier::HammingClassifier(Matrix weights, double theta, Codebook codebook)
    : weights_(std::move(weights)), theta_(theta), codebook_(std::move(codebook)) {
    require(weights_.rows() > 0 && weights_.cols() > 0, "HammingClassifier: empty weight matrix");
    require(theta_ > 0.0 && std::isfinite(theta_), "HammingClassifier: margin must be positive and finite");
    require(all_finite(weights_.data()), "HammingClassifier: non-finite weight");
    require(codebook_.width() == weights_.cols(), "HammingClassifier: codebook width differs from weight columns");
}

void HammingClassifier::set_excluded(std::vector<std::size_t> classes) {
    for (auto c : classes) require(c < codebook_.size(), "HammingClassifier::set_excluded: class out of range");
    excluded_ = std::move(classes);
}

std::vector<std::uint8_t> HammingClassifier::to_bytes() const {
    io::ByteWriter w;
    w.magic("HOCL");
    w.u16(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(dim()));
    w.u32(static_cast<std::uint32_t>(width()));
    w.f64(theta_);
    for (double v : weights_.data()) w.f32(static_cast<float>(v));
    auto out = w.take();
    const auto book = codebook_.to_bytes();
    out.insert(out.end(), book.begin(), book.end());
    return out;
}

HammingClassifier HammingClassifier::from_bytes(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes.data(), bytes.size());
    r.expect_magic("HOCL");
    const auto version = r.u16();
    if (version != kFormatVersion) throw FormatError("HOCL: unsupported version " + std::to_string(version));
    const std::size_t d = r.u32();
    const std::size_t width = r.u32();
    const double theta = r.f64();
    if (d == 0 || width == 0) throw FormatError("HOCL: zero dimension");
    if (r.remaining() / 4 / width < d) throw FormatError("HOCL: truncated weights");
    Matrix w(d, width);
    for (auto& v : w.data()) v = static_cast<double>(r.f32());
    std::size_t consumed = 0;
    auto book = Codebook::from_bytes(bytes.subspan(r.position()), &consumed);
    if (consumed != r.remaining()) throw FormatError("HOCL: trailing bytes");
    try {
        return HammingClassifier(std::move(w), theta, std::move(book));
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("HOCL: ") + e.what());
    }
}

void HammingClassifier::save(const std::string& path) const {
    io::write_file(path, to_bytes());
    write_label_manifest(path, codebook_.labels());
}

HammingClassifier HammingClassifier::load(const std::string& path) {
    auto clf = from_bytes(io::read_file(path));
    if (auto labels = read_label_manifest(path, clf.codebook_.size()))
        clf.codebook_ = clf.codebook_.relabeled(std::move(*labels));
    return clf;
}

std::vector<double> bit_scores(const HammingClassifier& clf, std::span<const double> feature) {
    if (feature.size() != clf.dim()) throw ContractViolation("Hamming head: feature dimension differs from W rows");
    return vec_mat(feature, clf.weights());
}

BitCode classify_bits(const HammingClassifier& clf, std::span<const double> feature) {
    return sign_bits(bit_scores(clf, feature));
}

namespace {

void check_target(const HammingClassifier& clf, const BitCode& target) {
    if (target.width() != clf.width()) throw ContractViolation("Hamming head: target code width differs from W columns");
}

/// -1 pushes the score up, +1 pushes it down, 0 is inactive.
int hinge_direction(double score, bool target_bit, double theta) {
    if (target_bit) return score < theta ? -1 : 0;
    return score > -theta ? 1 : 0;
}

double hinge_term(double score, bool target_bit, double theta) {
    return target_bit ? std::max(0.0, theta - score) : std::max(0.0, theta + score);
}

/// Adds one sample's hinge subgradient into a row-major d × d′ buffer and
/// returns the sample's loss.
double accumulate_hinge(std::span<const double> scores, std::span<const double> feature, const BitCode& target,
                        double theta, double* grad) {
    const std::size_t width = scores.size();
    double loss = 0.0;
    std::vector<double> coeff(width, 0.0);
    bool any = false;
    for (std::size_t k = 0; k < width; ++k) {
        const bool bit = target.get(k);
        loss += hinge_term(scores[k], bit, theta);
        const int dir = hinge_direction(scores[k], bit, theta);
        coeff[k] = static_cast<double>(dir);
        any = any || dir != 0;
    }
    if (!any) return loss;
    for (std::size_t i = 0; i < feature.size(); ++i) {
        const double h = feature[i];
        if (h == 0.0) continue;
        double* row = grad + i * width;
        for (std::size_t k = 0; k < width; ++k) row[k] += coeff[k] * h;
    }
    return loss;
}

}  // namespace

double hinge_loss(const HammingClassifier& clf, std::span<const double> feature, const BitCode& target) {
    check_target(clf, target);
    const auto scores = bit_scores(clf, feature);
    double loss = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) loss += hinge_term(scores[k], target.get(k), clf.theta());
    return loss;
}

Matrix hinge_grad(const HammingClassifier& clf, std::span<const double> feature, const BitCode& target) {
    check_target(clf, target);
    Matrix grad(clf.dim(), clf.width());
    accumulate_hinge(bit_scores(clf, feature), feature, target, clf.theta(), grad.data().data());
    return grad;
}

CodeSearchResult decode(const HammingClassifier& clf, std::span<const double> feature, unsigned threads) {
    return nearest_code(classify_bits(clf, feature), clf.codebook(), SearchOptions{threads, clf.excluded()});
}

void TrainConfig::validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "TrainConfig: learning rate must be non-negative");
    require(decay_rate > 0.0 && decay_rate <= 1.0, "TrainConfig: decay rate must lie in (0, 1]");
    require(batch_size >= 1, "TrainConfig: batch size must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "TrainConfig: Adam betas must lie in [0, 1)");
    require(epsilon > 0.0, "TrainConfig: epsilon must be positive");
}

void write_loss_csv(std::ostream& out, std::span<const EpochStat> history) {
    out << "epoch,mean_loss,lr\n";
    char buf[96];
    for (const auto& s : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", s.epoch, s.mean_loss, s.learning_rate);
        out << buf;
    }
}

Adam::Adam(std::size_t size, const TrainConfig& cfg)
    : m_(size, 0.0), v_(size, 0.0), beta1_(cfg.beta1), beta2_(cfg.beta2), epsilon_(cfg.epsilon) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double learning_rate) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "Adam::step: size mismatch");
    beta1_power_ *= beta1_;
    beta2_power_ *= beta2_;
    const double c1 = 1.0 - beta1_power_;
    const double c2 = 1.0 - beta2_power_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + epsilon_);
    }
}

namespace {

struct SampleRef {
    std::size_t cls;
    std::size_t row;
};

std::vector<SampleRef> enumerate_samples(const FeatureBank& bank) {
    std::vector<SampleRef> refs;
    refs.reserve(bank.total_samples());
    for (std::size_t c = 0; c < bank.num_classes(); ++c)
        for (std::size_t r = 0; r < bank.samples(c).rows(); ++r) refs.push_back({c, r});
    return refs;
}

// A batch is always cut into this many contiguous slices, each summed in
// sample order, then slices are summed in slice order. The floating-point
// result is therefore the same for every thread count.
constexpr std::size_t kGradientSlices = 8;

/// One training run: `accumulate(sample, grad_slot)` adds a sample's gradient
/// to its slot and returns its loss; `apply(mean_grad, lr)` updates params.
template <typename Accumulate, typename Apply>
std::vector<EpochStat> run_minibatch(const std::vector<SampleRef>& samples, std::size_t param_size,
                                     const TrainConfig& cfg, const std::string& stage, Accumulate&& accumulate,
                                     Apply&& apply) {
    std::vector<EpochStat> history;
    std::vector<SampleRef> order = samples;
    std::vector<std::vector<double>> slots(kGradientSlices, std::vector<double>(param_size));
    std::vector<double> slice_loss(kGradientSlices);
    std::vector<double> mean_grad(param_size);
    double lr = cfg.learning_rate;
    double best = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const std::size_t n = stop - start;
            const std::size_t per_slice = (n + kGradientSlices - 1) / kGradientSlices;

            auto run_slice = [&](std::size_t s) {
                auto& slot = slots[s];
                std::fill(slot.begin(), slot.end(), 0.0);
                double loss = 0.0;
                const std::size_t b = start + std::min(n, s * per_slice);
                const std::size_t e = start + std::min(n, (s + 1) * per_slice);
                for (std::size_t i = b; i < e; ++i) loss += accumulate(order[i], slot);
                slice_loss[s] = loss;
            };
            const unsigned workers = std::max(1u, std::min<unsigned>(cfg.threads, kGradientSlices));
            if (workers == 1) {
                for (std::size_t s = 0; s < kGradientSlices; ++s) run_slice(s);
            } else {
                std::vector<std::jthread> pool;
                for (unsigned w = 0; w < workers; ++w)
                    pool.emplace_back([&, w] {
                        for (std::size_t s = w; s < kGradientSlices; s += workers) run_slice(s);
                    });
            }

            std::fill(mean_grad.begin(), mean_grad.end(), 0.0);
            for (std::size_t s = 0; s < kGradientSlices; ++s) {
                epoch_loss += slice_loss[s];
                for (std::size_t j = 0; j < param_size; ++j) mean_grad[j] += slots[s][j];
            }
            const double inv = 1.0 / static_cast<double>(n);
            for (auto& g : mean_grad) g *= inv;
            if (!all_finite(mean_grad)) throw TrainingDiverged(stage, epoch);
            apply(mean_grad, lr);
        }

        const double mean = epoch_loss / static_cast<double>(order.size());
        if (!std::isfinite(mean)) throw TrainingDiverged(stage, epoch);
        history.push_back({epoch, mean, lr});
        if (best - mean < cfg.plateau_tolerance * best) lr *= cfg.decay_rate;
        best = std::min(best, mean);
    }
    return history;
}

}  // namespace

HammingTrainResult train_hamming(const FeatureBank& bank, const Codebook& codebook, const TrainConfig& cfg,
                                 double theta, const std::optional<Matrix>& init) {
    cfg.validate();
    if (codebook.size() < bank.num_classes())
        throw ContractViolation("train_hamming: codebook has fewer classes than the bank");
    for (std::size_t i = 0; i < bank.num_classes(); ++i)
        if (codebook.label(i) != bank.label(i))
            throw ContractViolation("train_hamming: codebook label '" + codebook.label(i) +
                                    "' does not match bank label '" + bank.label(i) + "'");

    const std::size_t d = bank.dim();
    const std::size_t width = codebook.width();
    Matrix w;
    if (init) {
        if (init->rows() != d || init->cols() != width)
            throw ContractViolation("train_hamming: initial W has the wrong shape");
        w = *init;
    } else {
        Rng rng(mix_seed(cfg.seed, 0x1417));
        w = Matrix(d, width);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& v : w.data()) v = scale * rng.normal();
    }
    HammingClassifier clf(std::move(w), theta, codebook);
    Adam adam(d * width, cfg);

    auto hinge_into_slot = [&](const SampleRef& s, std::vector<double>& slot) {
        const auto feature = bank.samples(s.cls).row(s.row);
        return accumulate_hinge(vec_mat(feature, clf.weights()), feature, codebook.code(s.cls), theta, slot.data());
    };
    auto apply = [&](const std::vector<double>& grad, double lr) { adam.step(clf.mutable_weights().data(), grad, lr); };

    auto history = run_minibatch(enumerate_samples(bank), d * width, cfg, "hamming", hinge_into_slot, apply);
    if (!all_finite(clf.weights().data())) throw TrainingDiverged("hamming", cfg.epochs == 0 ? 0 : cfg.epochs - 1);
    return {std::move(clf), std::move(history)};
}

double decode_accuracy(const HammingClassifier& clf, const FeatureBank& bank) {
    std::size_t correct = 0;
    for (std::size_t c = 0; c < bank.num_classes(); ++c) {
        const auto& m = bank.samples(c);
        for (std::size_t r = 0; r < m.rows(); ++r)
            if (decode(clf, m.row(r)).class_index == c) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(bank.total_samples());
}

// --- softmax ---

SoftmaxClassifier::SoftmaxClassifier(Matrix weights, std::vector<double> bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
    require(weights_.rows() > 0 && weights_.cols() > 0, "SoftmaxClassifier: empty weight matrix");
    require(bias_.empty() || bias_.size() == weights_.cols(), "SoftmaxClassifier: bias length differs from class count");
    require(all_finite(weights_.data()) && all_finite(bias_), "SoftmaxClassifier: non-finite parameter");
}

std::vector<double> softmax_logits(const SoftmaxClassifier& clf, std::span<const double> feature) {
    if (feature.size() != clf.dim()) throw ContractViolation("softmax: feature dimension differs from W rows");
    auto logits = vec_mat(feature, clf.weights());
    const auto bias = clf.bias();
    for (std::size_t j = 0; j < bias.size(); ++j) logits[j] += bias[j];
    return logits;
}

std::vector<double> softmax(std::span<const double> logits) {
    require(!logits.empty(), "softmax: empty logits");
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) total += (p[j] = std::exp(logits[j] - peak));
    for (auto& v : p) v /= total;
    return p;
}

std::vector<double> softmax_forward(const SoftmaxClassifier& clf, std::span<const double> feature) {
    return softmax(softmax_logits(clf, feature));
}

std::size_t softmax_predict(const SoftmaxClassifier& clf, std::span<const double> feature) {
    const auto logits = softmax_logits(clf, feature);
    // max_element returns the first maximum.
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double cross_entropy_loss(const SoftmaxClassifier& clf, std::span<const double> feature, std::size_t label) {
    require(label < clf.num_classes(), "cross_entropy_loss: label out of range");
    const auto logits = softmax_logits(clf, feature);
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double z : logits) total += std::exp(z - peak);
    return std::log(total) + peak - logits[label];
}

SoftmaxGrad cross_entropy_grad(const SoftmaxClassifier& clf, std::span<const double> feature, std::size_t label) {
    require(label < clf.num_classes(), "cross_entropy_grad: label out of range");
    auto p = softmax_forward(clf, feature);
    p[label] -= 1.0;
    SoftmaxGrad g{Matrix(clf.dim(), clf.num_classes()), {}};
    for (std::size_t i = 0; i < feature.size(); ++i) {
        auto row = g.weights.row(i);
        for (std::size_t j = 0; j < p.size(); ++j) row[j] = feature[i] * p[j];
    }
    if (!clf.bias().empty()) g.bias = p;
    return g;
}

SoftmaxTrainResult train_softmax(const FeatureBank& bank, const TrainConfig& cfg,
                                 const std::optional<SoftmaxClassifier>& init) {
    cfg.validate();
    const std::size_t d = bank.dim();
    const std::size_t classes = bank.num_classes();
    SoftmaxClassifier clf;
    if (init) {
        if (init->dim() != d || init->num_classes() != classes)
            throw ContractViolation("train_softmax: initial classifier has the wrong shape");
        clf = *init;
    } else {
        Rng rng(mix_seed(cfg.seed, 0x50f7));
        Matrix w(d, classes);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& v : w.data()) v = scale * rng.normal();
        clf = SoftmaxClassifier(std::move(w), std::vector<double>(classes, 0.0));
    }
    const std::size_t wsize = d * classes;
    const std::size_t psize = wsize + clf.bias().size();
    Adam adam(psize, cfg);
    std::vector<double> params(psize);

    auto accumulate = [&](const SampleRef& s, std::vector<double>& slot) {
        const auto feature = bank.samples(s.cls).row(s.row);
        const auto logits = softmax_logits(clf, feature);
        auto p = softmax(logits);
        const double loss = -std::log(std::max(p[s.cls], std::numeric_limits<double>::min()));
        p[s.cls] -= 1.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double h = feature[i];
            if (h == 0.0) continue;
            double* row = slot.data() + i * classes;
            for (std::size_t j = 0; j < classes; ++j) row[j] += h * p[j];
        }
        for (std::size_t j = 0; j < clf.bias().size(); ++j) slot[wsize + j] += p[j];
        return loss;
    };
    auto apply = [&](const std::vector<double>& grad, double lr) {
        auto w = clf.mutable_weights().data();
        auto b = clf.mutable_bias();
        std::copy(w.begin(), w.end(), params.begin());
        std::copy(b.begin(), b.end(), params.begin() + static_cast<std::ptrdiff_t>(wsize));
        adam.step(params, grad, lr);
        std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(wsize), w.begin());
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(wsize), params.end(), b.begin());
    };

    auto history = run_minibatch(enumerate_samples(bank), psize, cfg, "softmax", accumulate, apply);
    return {std::move(clf), std::move(history)};
}

double softmax_accuracy(const SoftmaxClassifier& clf, const FeatureBank& bank) {
    std::size_t correct = 0;
    for (std::size_t c = 0; c < bank.num_classes(); ++c) {
        const auto& m = bank.samples(c);
        for (std::size_t r = 0; r < m.rows(); ++r)
            if (softmax_predict(clf, m.row(r)) == c) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(bank.total_samples());
}

// --- factorized ---

FactorizedClassifier::FactorizedClassifier(Matrix first, Matrix second)
    : first_(std::move(first)), second_(std::move(second)) {
    require(first_.cols() == second_.rows(), "FactorizedClassifier: factor shapes do not chain");
    require(first_.cols() <= std::min(first_.rows(), second_.cols()),
            "FactorizedClassifier: bottleneck must not exceed min(d, L)");
    require(all_finite(first_.data()) && all_finite(second_.data()), "FactorizedClassifier: non-finite parameter");
}

std::vector<double> factorized_forward(const FactorizedClassifier& clf, std::span<const double> feature) {
    if (feature.size() != clf.dim()) throw ContractViolation("factorized_forward: feature dimension differs from W1 rows");
    return softmax(vec_mat(vec_mat(feature, clf.first()), clf.second()));
}

}  // namespace hocr
