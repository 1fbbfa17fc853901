#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ensel {

enum class Errc {
    invalid_shape,
    numeric,
    invalid_argument,
    invalid_state,
    decode,
    unsupported_format,
    bad_magic,
    bad_version,
    checksum,
    truncated,
    shape_mismatch,
    metadata,
    io,
    missing_file,
    duplicate_id,
    role_mismatch,
    unknown_id,
    alignment,
    degenerate_distribution,
    precondition,
    training,
    pipeline,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// Raised by image decoders; offset is the byte position where parsing failed.
class DecodeError : public Error {
public:
    DecodeError(std::size_t offset, const std::string& message)
        : Error(Errc::decode, message + " (at byte " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class TrainingError : public Error {
public:
    TrainingError(int epoch, const std::string& message)
        : Error(Errc::training, "epoch " + std::to_string(epoch) + ": " + message),
          epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

// Wraps a failure inside the diagnosis pipeline with the stage it came from.
class PipelineError : public Error {
public:
    PipelineError(std::string stage, const std::string& message)
        : Error(Errc::pipeline, stage + ": " + message), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace ensel
