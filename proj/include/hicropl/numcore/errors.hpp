// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hicropl {

enum class ErrorKind {
  kDimension,
  kNumeric,
  kContract,
  kDegenerateVector,
  kVocabulary,
  kConfiguration,
  kTemplate,
  kProtocol,
  kSpec,
  kDomain,
  kIo,
};

constexpr std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kDegenerateVector: return "degenerate_vector";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kTemplate: return "template";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kSpec: return "spec";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define HICROPL_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

HICROPL_DEFINE_ERROR(DimensionError, kDimension)
HICROPL_DEFINE_ERROR(NumericError, kNumeric)
HICROPL_DEFINE_ERROR(ContractError, kContract)
HICROPL_DEFINE_ERROR(DegenerateVectorError, kDegenerateVector)
HICROPL_DEFINE_ERROR(VocabularyError, kVocabulary)
HICROPL_DEFINE_ERROR(ConfigError, kConfiguration)
HICROPL_DEFINE_ERROR(TemplateError, kTemplate)
HICROPL_DEFINE_ERROR(ProtocolError, kProtocol)
HICROPL_DEFINE_ERROR(SpecError, kSpec)
HICROPL_DEFINE_ERROR(DomainError, kDomain)
HICROPL_DEFINE_ERROR(IoError, kIo)

#undef HICROPL_DEFINE_ERROR

}  // namespace hicropl
