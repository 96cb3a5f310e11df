#include "cfprot/asm_ir.hpp"

namespace cfprot {

bool Instr::is_terminator() const {
  switch (op) {
    case Op::B:
    case Op::BrTable:
    case Op::BrTail:
    case Op::BrUncon:
    case Op::Ret:
      return true;
    default:
      return false;
  }
}

std::vector<RegIdx> Instr::written_regs() const {
  std::vector<RegIdx> regs;
  switch (op) {
    case Op::Movz:
    case Op::Movk:
    case Op::MovReg:
    case Op::AddImm:
    case Op::AddReg:
    case Op::SubImm:
    case Op::SubReg:
    case Op::AndImm:
    case Op::Adr:
    case Op::Mul:
      regs.push_back(rd);
      break;
    case Op::Ldr:
    case Op::LdrW:
    case Op::Ldtr:
      regs.push_back(rd);
      if (op == Op::Ldr && mode != AddrMode::Offset) regs.push_back(rn);
      break;
    case Op::Str:
      if (mode != AddrMode::Offset) regs.push_back(rn);
      break;
    case Op::Ldp:
      regs.push_back(rd);
      regs.push_back(rt2);
      if (mode != AddrMode::Offset) regs.push_back(rn);
      break;
    case Op::Stp:
      if (mode != AddrMode::Offset) regs.push_back(rn);
      break;
    case Op::Bl:
    case Op::Blr:
      regs.push_back(kRegLr);
      break;
    default:
      break;
  }
  return regs;
}

bool Function::spills_lr() const {
  if (blocks.empty()) return false;
  for (const Instr& i : blocks.front().instrs) {
    if (i.op == Op::Str && i.rd == kRegLr) return true;
    if (i.op == Op::Stp && (i.rd == kRegLr || i.rt2 == kRegLr)) return true;
  }
  return false;
}

const Block* Function::find_block(std::string_view label) const {
  for (const Block& b : blocks)
    if (b.label == label) return &b;
  return nullptr;
}

const Function* Program::find_function(std::string_view name) const {
  for (const Function& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

namespace ins {

Instr nop() { return {}; }

Instr bti(BtiKind kind) {
  Instr i;
  i.op = Op::Bti;
  i.bti = kind;
  return i;
}

Instr movz(RegIdx rd, uint16_t imm, uint8_t shift) {
  Instr i;
  i.op = Op::Movz;
  i.rd = rd;
  i.imm = imm;
  i.shift = shift;
  return i;
}

Instr movk(RegIdx rd, uint16_t imm, uint8_t shift) {
  Instr i = movz(rd, imm, shift);
  i.op = Op::Movk;
  return i;
}

Instr mov_reg(RegIdx rd, RegIdx rn) {
  Instr i;
  i.op = Op::MovReg;
  i.rd = rd;
  i.rn = rn;
  return i;
}

Instr add_imm(RegIdx rd, RegIdx rn, uint32_t imm) {
  Instr i;
  i.op = Op::AddImm;
  i.rd = rd;
  i.rn = rn;
  i.imm = imm;
  return i;
}

Instr sub_imm(RegIdx rd, RegIdx rn, uint32_t imm) {
  Instr i = add_imm(rd, rn, imm);
  i.op = Op::SubImm;
  return i;
}

Instr cmp_reg(RegIdx rn, RegIdx rm) {
  Instr i;
  i.op = Op::CmpReg;
  i.rn = rn;
  i.rm = rm;
  return i;
}

Instr mul(RegIdx rd, RegIdx rn, RegIdx rm) {
  Instr i;
  i.op = Op::Mul;
  i.rd = rd;
  i.rn = rn;
  i.rm = rm;
  return i;
}

Instr and_imm(RegIdx rd, RegIdx rn, uint64_t mask) {
  Instr i;
  i.op = Op::AndImm;
  i.rd = rd;
  i.rn = rn;
  i.imm = mask;
  return i;
}

Instr adr(RegIdx rd, std::string label) {
  Instr i;
  i.op = Op::Adr;
  i.rd = rd;
  i.label = std::move(label);
  return i;
}

Instr ldr(RegIdx rt, RegIdx rn, int32_t offset, AddrMode mode) {
  Instr i;
  i.op = Op::Ldr;
  i.rd = rt;
  i.rn = rn;
  i.offset = offset;
  i.mode = mode;
  return i;
}

Instr ldr_w(RegIdx rt, RegIdx rn, int32_t offset) {
  Instr i;
  i.op = Op::LdrW;
  i.rd = rt;
  i.rn = rn;
  i.offset = offset;
  return i;
}

Instr str(RegIdx rt, RegIdx rn, int32_t offset, AddrMode mode) {
  Instr i = ldr(rt, rn, offset, mode);
  i.op = Op::Str;
  return i;
}

Instr ldtr(RegIdx rt, RegIdx rn, int32_t offset) {
  Instr i;
  i.op = Op::Ldtr;
  i.rd = rt;
  i.rn = rn;
  i.offset = offset;
  return i;
}

Instr sttr(RegIdx rt, RegIdx rn, int32_t offset) {
  Instr i = ldtr(rt, rn, offset);
  i.op = Op::Sttr;
  return i;
}

Instr b(std::string label) {
  Instr i;
  i.op = Op::B;
  i.label = std::move(label);
  return i;
}

Instr b_cond(Cond cond, std::string label) {
  Instr i = b(std::move(label));
  i.op = Op::BCond;
  i.cond = cond;
  return i;
}

Instr bl(std::string label) {
  Instr i = b(std::move(label));
  i.op = Op::Bl;
  return i;
}

Instr blr(RegIdx rn) {
  Instr i;
  i.op = Op::Blr;
  i.rn = rn;
  return i;
}

Instr ret(RegIdx rn) {
  Instr i;
  i.op = Op::Ret;
  i.rn = rn;
  return i;
}

Instr svc(uint16_t imm) {
  Instr i;
  i.op = Op::Svc;
  i.imm = imm;
  return i;
}

Instr brk(uint16_t imm) {
  Instr i = svc(imm);
  i.op = Op::Brk;
  return i;
}

Instr word(uint32_t value) {
  Instr i;
  i.op = Op::Word;
  i.imm = value;
  return i;
}

}  // namespace ins

const char* cond_name(Cond c) {
  switch (c) {
    case Cond::Eq: return "eq";
    case Cond::Ne: return "ne";
    case Cond::Hs: return "hs";
    case Cond::Lo: return "lo";
    case Cond::Mi: return "mi";
    case Cond::Pl: return "pl";
    case Cond::Vs: return "vs";
    case Cond::Vc: return "vc";
    case Cond::Hi: return "hi";
    case Cond::Ls: return "ls";
    case Cond::Ge: return "ge";
    case Cond::Lt: return "lt";
    case Cond::Gt: return "gt";
    case Cond::Le: return "le";
    case Cond::Al: return "al";
  }
  return "?";
}

}  // namespace cfprot
