#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hocr/bitcode.hpp"
#include "hocr/codebook.hpp"
#include "hocr/matrix.hpp"

namespace hocr {

/// Linear binary-output head: d × d′ weights (column k scores bit k), a
/// hinge margin, and the codebook predictions are decoded against.
class HammingClassifier {
public:
    HammingClassifier() = default;
    HammingClassifier(Matrix weights, double theta, Codebook codebook);

    std::size_t dim() const noexcept { return weights_.rows(); }
    std::size_t width() const noexcept { return weights_.cols(); }
    double theta() const noexcept { return theta_; }
    const Matrix& weights() const noexcept { return weights_; }
    Matrix& mutable_weights() noexcept { return weights_; }
    const Codebook& codebook() const noexcept { return codebook_; }

    /// Classes decode() never returns (start/padding tokens).
    std::span<const std::size_t> excluded() const noexcept { return excluded_; }
    void set_excluded(std::vector<std::size_t> classes);

    /// "HOCL", u16 version, u32 d, u32 d′, f64 θ, W row-major float32,
    /// then the codebook in HOCB layout.
    std::vector<std::uint8_t> to_bytes() const;
    static HammingClassifier from_bytes(std::span<const std::uint8_t> bytes);
    /// Also writes/reads the codebook labels as `<path>.labels`.
    void save(const std::string& path) const;
    static HammingClassifier load(const std::string& path);

    static constexpr std::uint16_t kFormatVersion = 1;

private:
    Matrix weights_;
    double theta_ = 1.0;
    Codebook codebook_;
    std::vector<std::size_t> excluded_;
};

/// Per-bit scores w_kᵀh.
std::vector<double> bit_scores(const HammingClassifier& clf, std::span<const double> feature);
BitCode classify_bits(const HammingClassifier& clf, std::span<const double> feature);

/// Σ_k max{0, θ − s_k}·η^k + max{0, θ + s_k}·(1 − η^k)
double hinge_loss(const HammingClassifier& clf, std::span<const double> feature, const BitCode& target);

/// Subgradient of hinge_loss w.r.t. W. Zero is taken at the kinks.
Matrix hinge_grad(const HammingClassifier& clf, std::span<const double> feature, const BitCode& target);

CodeSearchResult decode(const HammingClassifier& clf, std::span<const double> feature, unsigned threads = 1);

/// Adaptive-moment optimizer settings plus the plateau-decay schedule.
struct TrainConfig {
    double learning_rate = 1e-3;
    double decay_rate = 0.5;
    std::size_t batch_size = 64;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// lr *= decay_rate when the epoch-mean loss improves by less than this
    /// fraction of the best loss so far.
    double plateau_tolerance = 1e-4;
    /// Gradient slices run on up to this many threads; the result does not
    /// depend on it.
    unsigned threads = 1;

    void validate() const;
};

struct EpochStat {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double learning_rate = 0.0;
};

void write_loss_csv(std::ostream& out, std::span<const EpochStat> history);

class Adam {
public:
    Adam(std::size_t size, const TrainConfig& cfg);
    void step(std::span<double> params, std::span<const double> grad, double learning_rate);

private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, epsilon_;
    double beta1_power_ = 1.0, beta2_power_ = 1.0;
};

struct HammingTrainResult {
    HammingClassifier classifier;
    std::vector<EpochStat> history;
};

/// Minibatch Adam on the per-sample mean hinge loss. Class i of the bank is
/// trained toward codebook code i. Without `init`, W ~ N(0, 1/d).
HammingTrainResult train_hamming(const FeatureBank& bank, const Codebook& codebook, const TrainConfig& cfg,
                                 double theta = 1.0, const std::optional<Matrix>& init = std::nullopt);

/// Fraction of bank samples whose decoded class equals their own class.
double decode_accuracy(const HammingClassifier& clf, const FeatureBank& bank);

// --- softmax baseline ---

class SoftmaxClassifier {
public:
    SoftmaxClassifier() = default;
    explicit SoftmaxClassifier(Matrix weights, std::vector<double> bias = {});

    std::size_t dim() const noexcept { return weights_.rows(); }
    std::size_t num_classes() const noexcept { return weights_.cols(); }
    const Matrix& weights() const noexcept { return weights_; }
    Matrix& mutable_weights() noexcept { return weights_; }
    std::span<const double> bias() const noexcept { return bias_; }
    std::span<double> mutable_bias() noexcept { return bias_; }

private:
    Matrix weights_;
    std::vector<double> bias_;
};

std::vector<double> softmax_logits(const SoftmaxClassifier& clf, std::span<const double> feature);
/// Numerically stable softmax (max subtracted).
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> softmax_forward(const SoftmaxClassifier& clf, std::span<const double> feature);
/// argmax of the logits; ties resolve to the lowest index.
std::size_t softmax_predict(const SoftmaxClassifier& clf, std::span<const double> feature);

double cross_entropy_loss(const SoftmaxClassifier& clf, std::span<const double> feature, std::size_t label);

struct SoftmaxGrad {
    Matrix weights;
    std::vector<double> bias;
};
SoftmaxGrad cross_entropy_grad(const SoftmaxClassifier& clf, std::span<const double> feature, std::size_t label);

struct SoftmaxTrainResult {
    SoftmaxClassifier classifier;
    std::vector<EpochStat> history;
};

SoftmaxTrainResult train_softmax(const FeatureBank& bank, const TrainConfig& cfg,
                                 const std::optional<SoftmaxClassifier>& init = std::nullopt);

double softmax_accuracy(const SoftmaxClassifier& clf, const FeatureBank& bank);

// --- factorized softmax baseline ---

class FactorizedClassifier {
public:
    FactorizedClassifier() = default;
    FactorizedClassifier(Matrix first, Matrix second);

    std::size_t dim() const noexcept { return first_.rows(); }
    std::size_t bottleneck() const noexcept { return first_.cols(); }
    std::size_t num_classes() const noexcept { return second_.cols(); }
    const Matrix& first() const noexcept { return first_; }
    const Matrix& second() const noexcept { return second_; }

    std::size_t parameter_count() const noexcept { return factorized_parameter_count(dim(), bottleneck(), num_classes()); }
    static std::size_t factorized_parameter_count(std::size_t d, std::size_t p, std::size_t classes) noexcept {
        return d * p + p * classes;
    }

private:
    Matrix first_;   // d × p
    Matrix second_;  // p × L
};

std::vector<double> factorized_forward(const FactorizedClassifier& clf, std::span<const double> feature);

}  // namespace hocr
