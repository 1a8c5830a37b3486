#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace swtr {

// Distinct failure classes. The numeric values double as CLI exit codes.
enum class ErrorCode : int {
  kConfig = 10,
  kDimension = 11,
  kDegenerateInput = 12,
  kContract = 13,
  kNumerical = 14,
  kIo = 20,
  kFormat = 21,    // bad magic, version, malformed header or manifest
  kLength = 22,    // truncated file or manifest/payload length disagreement
  kChecksum = 23,
  kTensorName = 24,  // unknown, missing or duplicate tensor names
  kPlacement = 30,
};

constexpr std::string_view error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kDegenerateInput: return "degenerate_input";
    case ErrorCode::kContract: return "contract";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kLength: return "length";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kTensorName: return "tensor_name";
    case ErrorCode::kPlacement: return "placement";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace swtr
