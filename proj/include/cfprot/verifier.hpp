#pragma once

#include <string>
#include <vector>

#include "cfprot/asm_ir.hpp"
#include "cfprot/decoder.hpp"
#include "cfprot/rewriter.hpp"

namespace cfprot {

// Compliance rules:
//   V1  LR-spilling prologues carry the exact shadow-stack push pair
//   V2  every exit of a spilling function pops the matching slot; X28 is
//       written nowhere else and the prologue cannot be re-entered
//   V3  the only LSU instructions are the vetted push/pop patterns
//   V4  indirect calls/jumps are label-checked then masked; returns masked
//   V5  BTI C heads every function, BTI J heads every declared jump target
//   V6  no forbidden privileged instruction words
enum class Rule : uint8_t { V1, V2, V3, V4, V5, V6 };

struct Violation {
  Rule rule;
  std::string function;
  std::string block;
  size_t instr_index = 0;
  std::string message;

  std::string to_string() const;
};

struct VerifyPolicy {
  enum class Mode { Full, SsOnly };
  Mode mode = Mode::Full;
  std::string trap_symbol = kDefaultTrapSymbol;
  Allowlist allowlist = Allowlist::el0_default();

  static VerifyPolicy full() { return {}; }
  static VerifyPolicy ss_only() {
    VerifyPolicy p;
    p.mode = Mode::SsOnly;
    return p;
  }
};

// Pure check; violations are data. Empty result means compliant.
std::vector<Violation> verify(const Program& p, const VerifyPolicy& policy);

const char* rule_name(Rule r);

}  // namespace cfprot
