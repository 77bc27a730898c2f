#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sage {

enum class ErrorKind {
  SpecValidation,
  RemoteCapabilityExceeded,
  Transport,
  Protocol,
  InvalidBudget,
  EmptyCandidate,
  Config,
  GroupTooSmall,
  ShapeMismatch,
  Verifier,
  EmptyResponse,
  ZeroLength,
  EmptyGrid,
  NoObservations,
  Ingest,
  Bind,
  Tokenize,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SpecValidation: return "SpecValidation";
    case ErrorKind::RemoteCapabilityExceeded: return "RemoteCapabilityExceeded";
    case ErrorKind::Transport: return "TransportError";
    case ErrorKind::Protocol: return "ProtocolError";
    case ErrorKind::InvalidBudget: return "InvalidBudget";
    case ErrorKind::EmptyCandidate: return "EmptyCandidate";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::GroupTooSmall: return "GroupTooSmall";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::Verifier: return "VerifierError";
    case ErrorKind::EmptyResponse: return "EmptyResponse";
    case ErrorKind::ZeroLength: return "ZeroLength";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::NoObservations: return "NoObservations";
    case ErrorKind::Ingest: return "IngestError";
    case ErrorKind::Bind: return "BindError";
    case ErrorKind::Tokenize: return "TokenizeError";
  }
  return "Error";
}

/// Base of every error thrown by the library. The kind is stable and meant
/// for programmatic dispatch; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& message, bool auth, bool retryable)
      : Error(ErrorKind::Transport, message), auth_(auth), retryable_(retryable) {}

  bool auth() const noexcept { return auth_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  bool auth_;
  bool retryable_;
};

class IngestError : public Error {
 public:
  IngestError(std::size_t line, const std::string& message)
      : Error(ErrorKind::Ingest, "line " + std::to_string(line) + ": " + message), line_(line) {}

  /// 1-based line number of the offending record.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace sage
