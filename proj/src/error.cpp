#include "sohnet/error.hpp"

namespace sohnet {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Schema: return "schema error";
        case ErrorKind::Reference: return "reference error";
        case ErrorKind::Input: return "input error";
        case ErrorKind::Split: return "split error";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Index: return "index error";
        case ErrorKind::Aggregation: return "aggregation error";
        case ErrorKind::Numeric: return "numeric error";
        case ErrorKind::Divergence: return "divergence error";
        case ErrorKind::Loss: return "loss error";
        case ErrorKind::Version: return "version error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Config: return "config error";
    }
    return "error";
}

}  // namespace sohnet
