#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hocr {

/// Raised when a caller breaks an operation's precondition (width or
/// dimension mismatch, empty input, index out of range).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated binary/JSON input.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Codebook construction could not produce conflict-free codes.
class CodebookConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::string stage, std::size_t epoch)
        : std::runtime_error("training diverged in stage '" + stage + "' at epoch " +
                             std::to_string(epoch)),
          stage_(std::move(stage)),
          epoch_(epoch) {}

    const std::string& stage() const noexcept { return stage_; }
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::string stage_;
    std::size_t epoch_;
};

inline void require(bool cond, const char* what) {
    if (!cond) throw ContractViolation(what);
}

}  // namespace hocr
