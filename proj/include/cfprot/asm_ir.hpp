#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfprot/decoder.hpp"  // BtiKind

namespace cfprot {

// General registers are plain indices: 0..30 for x0..x30, 31 for sp where sp
// is architecturally valid (add/sub/compare and load/store bases).
using RegIdx = uint8_t;
inline constexpr RegIdx kRegLr = 30;
inline constexpr RegIdx kRegShadow = 28;  // reserved shadow stack pointer
inline constexpr RegIdx kRegSp = 31;
inline constexpr RegIdx kRegScratch0 = 16;  // intra-call-sequence temporaries
inline constexpr RegIdx kRegScratch1 = 17;

enum class Cond : uint8_t {
  Eq = 0, Ne = 1, Hs = 2, Lo = 3, Mi = 4, Pl = 5, Vs = 6, Vc = 7,
  Hi = 8, Ls = 9, Ge = 10, Lt = 11, Gt = 12, Le = 13, Al = 14,
};

enum class AddrMode : uint8_t { Offset, PreIndex, PostIndex };

enum class Op : uint8_t {
  Nop,
  Bti,      // bti / bti c / bti j / bti jc
  Movz,     // also accepts the `mov xN, #imm` spelling
  Movk,
  MovReg,
  AddImm,
  AddReg,
  SubImm,
  SubReg,
  CmpImm,
  CmpReg,
  Mul,
  AndImm,   // 64-bit bitmask immediate
  Adr,
  Ldr,      // 64-bit, offset/pre/post addressing
  LdrW,     // 32-bit load, unsigned offset (the CFI label probe)
  Str,
  Ldtr,     // unprivileged, unscaled signed offset only
  Sttr,
  Ldp,
  Stp,
  B,        // direct branch to a block label or a function
  BCond,    // conditional, falls through
  Bl,
  Blr,
  BrTable,  // indirect jump with a declared in-function target set
  BrTail,   // tail-call indirect jump (targets function entries)
  BrUncon,  // free-form indirect jump; rejected by the CFI pass
  Ret,
  Svc,
  Brk,
  Word,     // raw 32-bit encoding escape
};

struct Instr {
  Op op = Op::Nop;
  RegIdx rd = 0;
  RegIdx rn = 0;
  RegIdx rm = 0;
  RegIdx rt2 = 0;
  uint64_t imm = 0;                  // movz/movk imm16, add/sub imm12,
                                     // and-mask imm64, svc/brk/word value
  uint8_t shift = 0;                 // movz/movk left shift (0/16/32/48)
  int32_t offset = 0;                // load/store offset
  AddrMode mode = AddrMode::Offset;
  Cond cond = Cond::Eq;
  BtiKind bti = BtiKind::None;
  std::string label;                 // branch/adr target
  std::vector<std::string> targets;  // BrTable target set

  bool operator==(const Instr&) const = default;

  // True for the ops that may only appear last in a block.
  bool is_terminator() const;
  // Registers written by this instruction (destinations, writeback bases,
  // and the link register for calls).
  std::vector<RegIdx> written_regs() const;
};

struct Block {
  std::string label;
  std::vector<Instr> instrs;

  bool operator==(const Block&) const = default;
};

struct Function {
  std::string name;
  bool address_taken = false;
  std::vector<Block> blocks;

  bool operator==(const Function&) const = default;

  // A function spills its return address iff its entry block stores LR.
  bool spills_lr() const;
  const Block* find_block(std::string_view label) const;
};

struct Program {
  std::string source_name;  // metadata only; ignored by equality
  std::vector<Function> functions;

  bool operator==(const Program& other) const {
    return functions == other.functions;
  }

  const Function* find_function(std::string_view name) const;
};

// Builders used by the rewriter; each returns a fully populated Instr.
namespace ins {
Instr nop();
Instr bti(BtiKind kind);
Instr movz(RegIdx rd, uint16_t imm, uint8_t shift = 0);
Instr movk(RegIdx rd, uint16_t imm, uint8_t shift);
Instr mov_reg(RegIdx rd, RegIdx rn);
Instr add_imm(RegIdx rd, RegIdx rn, uint32_t imm);
Instr sub_imm(RegIdx rd, RegIdx rn, uint32_t imm);
Instr cmp_reg(RegIdx rn, RegIdx rm);
Instr mul(RegIdx rd, RegIdx rn, RegIdx rm);
Instr and_imm(RegIdx rd, RegIdx rn, uint64_t mask);
Instr adr(RegIdx rd, std::string label);
Instr ldr(RegIdx rt, RegIdx rn, int32_t offset, AddrMode mode = AddrMode::Offset);
Instr ldr_w(RegIdx rt, RegIdx rn, int32_t offset = 0);
Instr str(RegIdx rt, RegIdx rn, int32_t offset, AddrMode mode = AddrMode::Offset);
Instr ldtr(RegIdx rt, RegIdx rn, int32_t offset = 0);
Instr sttr(RegIdx rt, RegIdx rn, int32_t offset = 0);
Instr b(std::string label);
Instr b_cond(Cond cond, std::string label);
Instr bl(std::string label);
Instr blr(RegIdx rn);
Instr ret(RegIdx rn = kRegLr);
Instr svc(uint16_t imm);
Instr brk(uint16_t imm);
Instr word(uint32_t value);
}  // namespace ins

const char* cond_name(Cond c);

}  // namespace cfprot
