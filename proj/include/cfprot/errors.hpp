#pragma once

#include <stdexcept>
#include <string>

namespace cfprot {

// Base class for all tool-level failures. Analysis results that are data
// (scan violations, verifier violations, permission verdicts) are returned
// as values, not thrown.
class ToolError : public std::runtime_error {
 public:
  explicit ToolError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public ToolError {
 public:
  ParseError(int line, int col, const std::string& msg)
      : ToolError("line " + std::to_string(line) + ":" + std::to_string(col) +
                  ": " + msg),
        line(line),
        col(col) {}
  int line;
  int col;
};

class ConfigError : public ToolError {
 public:
  using ToolError::ToolError;
};

class PolicyError : public ToolError {
 public:
  enum class Kind {
    BadParams,
    HugePageConflict,
    AddressExhausted,
    MalformedLayout,
    PinnedRegion,
  };
  PolicyError(Kind kind, const std::string& msg) : ToolError(msg), kind(kind) {}
  Kind kind;
};

class RewriteError : public ToolError {
 public:
  enum class Kind {
    X28Clobbered,
    UnconstrainedIndirectJump,
    JumpToEntry,
    MaskRequiresCfi,
    AlreadyInstrumented,
    ScratchRegClash,
    UnsupportedEpilogue,
  };
  RewriteError(Kind kind, const std::string& msg) : ToolError(msg), kind(kind) {}
  Kind kind;
};

class ScanError : public ToolError {
 public:
  using ToolError::ToolError;
};

}  // namespace cfprot
