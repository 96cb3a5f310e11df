#pragma once

#include <string>

#include "cfprot/asm_ir.hpp"

namespace cfprot {

inline constexpr uint64_t kTopBitMask = 0x7FFFFFFFFFFFFFFFull;
inline constexpr uint32_t kBtiCWord = 0xD503245F;
inline constexpr uint32_t kBtiJWord = 0xD503249F;
inline constexpr uint16_t kCfiTrapBrkImm = 0xC4;
inline constexpr const char* kDefaultTrapSymbol = "__cfi_trap";

struct RewriteOptions {
  bool enable_ss = true;
  bool enable_cfi = true;
  bool enable_mask = true;
  std::string trap_symbol = kDefaultTrapSymbol;
};

// Compact shadow stack: LR-spilling functions push LR via STTR in the
// prologue and reload it via LDTR right before every exit, with the regular
// stack reload of LR removed. X28 is the reserved shadow stack pointer and
// must be unused by the input (RewriteError{X28Clobbered} otherwise).
Function apply_shadow_stack(const Function& f);

// Label-based forward-edge CFI: BTI C at every function entry, BTI J at
// every declared target of in-function indirect jumps, and a label-probing
// check (compare the word at the target, branch to the trap on mismatch)
// before every indirect call or jump. Synthesizes the trap function when the
// program has none.
Program apply_cfi(const Program& p,
                  const std::string& trap_symbol = kDefaultTrapSymbol);

// Clears bit 63 of the target register directly before every indirect call,
// indirect jump, and return.
Program apply_bitmask(const Program& p);

// CFI, then shadow stack, then bit-masking, honoring the option toggles.
// Rejects already-instrumented inputs and masking without CFI on programs
// with indirect calls or jumps.
Program rewrite(const Program& p, const RewriteOptions& opts);

}  // namespace cfprot
