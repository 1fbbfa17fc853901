#include "ensel/error.hpp"

namespace ensel {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::invalid_shape: return "invalid_shape";
        case Errc::numeric: return "numeric";
        case Errc::invalid_argument: return "invalid_argument";
        case Errc::invalid_state: return "invalid_state";
        case Errc::decode: return "decode";
        case Errc::unsupported_format: return "unsupported_format";
        case Errc::bad_magic: return "bad_magic";
        case Errc::bad_version: return "bad_version";
        case Errc::checksum: return "checksum";
        case Errc::truncated: return "truncated";
        case Errc::shape_mismatch: return "shape_mismatch";
        case Errc::metadata: return "metadata";
        case Errc::io: return "io";
        case Errc::missing_file: return "missing_file";
        case Errc::duplicate_id: return "duplicate_id";
        case Errc::role_mismatch: return "role_mismatch";
        case Errc::unknown_id: return "unknown_id";
        case Errc::alignment: return "alignment";
        case Errc::degenerate_distribution: return "degenerate_distribution";
        case Errc::precondition: return "precondition";
        case Errc::training: return "training";
        case Errc::pipeline: return "pipeline";
    }
    return "unknown";
}

}  // namespace ensel
