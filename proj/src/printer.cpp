#include <sstream>

#include "cfprot/asm_text.hpp"

namespace cfprot {

namespace {

std::string reg_name(RegIdx r) {
  if (r == kRegSp) return "sp";
  return "x" + std::to_string(int(r));
}

std::string wreg_name(RegIdx r) { return "w" + std::to_string(int(r)); }

std::string address(const Instr& i) {
  std::ostringstream os;
  switch (i.mode) {
    case AddrMode::Offset:
      os << "[" << reg_name(i.rn);
      if (i.offset != 0) os << ", #" << i.offset;
      os << "]";
      break;
    case AddrMode::PreIndex:
      os << "[" << reg_name(i.rn) << ", #" << i.offset << "]!";
      break;
    case AddrMode::PostIndex:
      os << "[" << reg_name(i.rn) << "], #" << i.offset;
      break;
  }
  return os.str();
}

std::string print_instr(const Instr& i) {
  std::ostringstream os;
  switch (i.op) {
    case Op::Nop:
      os << "nop";
      break;
    case Op::Bti:
      os << "bti";
      if (i.bti == BtiKind::C) os << " c";
      else if (i.bti == BtiKind::J) os << " j";
      else if (i.bti == BtiKind::JC) os << " jc";
      break;
    case Op::Movz:
    case Op::Movk:
      os << (i.op == Op::Movz ? "movz " : "movk ") << reg_name(i.rd) << ", #0x"
         << std::hex << i.imm << std::dec;
      if (i.shift) os << ", lsl #" << int(i.shift);
      break;
    case Op::MovReg:
      os << "mov " << reg_name(i.rd) << ", " << reg_name(i.rn);
      break;
    case Op::AddImm:
    case Op::SubImm:
      os << (i.op == Op::AddImm ? "add " : "sub ") << reg_name(i.rd) << ", "
         << reg_name(i.rn) << ", #" << i.imm;
      break;
    case Op::AddReg:
    case Op::SubReg:
      os << (i.op == Op::AddReg ? "add " : "sub ") << reg_name(i.rd) << ", "
         << reg_name(i.rn) << ", " << reg_name(i.rm);
      break;
    case Op::CmpImm:
      os << "cmp " << reg_name(i.rn) << ", #" << i.imm;
      break;
    case Op::CmpReg:
      os << "cmp " << reg_name(i.rn) << ", " << reg_name(i.rm);
      break;
    case Op::Mul:
      os << "mul " << reg_name(i.rd) << ", " << reg_name(i.rn) << ", "
         << reg_name(i.rm);
      break;
    case Op::AndImm:
      os << "and " << reg_name(i.rd) << ", " << reg_name(i.rn) << ", #0x"
         << std::hex << i.imm << std::dec;
      break;
    case Op::Adr:
      os << "adr " << reg_name(i.rd) << ", " << i.label;
      break;
    case Op::Ldr:
      os << "ldr " << reg_name(i.rd) << ", " << address(i);
      break;
    case Op::LdrW:
      os << "ldr " << wreg_name(i.rd) << ", " << address(i);
      break;
    case Op::Str:
      os << "str " << reg_name(i.rd) << ", " << address(i);
      break;
    case Op::Ldtr:
    case Op::Sttr:
      os << (i.op == Op::Ldtr ? "ldtr " : "sttr ") << reg_name(i.rd) << ", "
         << address(i);
      break;
    case Op::Ldp:
    case Op::Stp:
      os << (i.op == Op::Ldp ? "ldp " : "stp ") << reg_name(i.rd) << ", "
         << reg_name(i.rt2) << ", " << address(i);
      break;
    case Op::B:
      os << "b " << i.label;
      break;
    case Op::BCond:
      os << "b." << cond_name(i.cond) << " " << i.label;
      break;
    case Op::Bl:
      os << "bl " << i.label;
      break;
    case Op::Blr:
      os << "blr " << reg_name(i.rn);
      break;
    case Op::BrTable: {
      os << "br " << reg_name(i.rn) << ", [";
      for (size_t t = 0; t < i.targets.size(); ++t)
        os << (t ? ", " : "") << i.targets[t];
      os << "]";
      break;
    }
    case Op::BrTail:
      os << "br " << reg_name(i.rn) << ", tail";
      break;
    case Op::BrUncon:
      os << "br " << reg_name(i.rn);
      break;
    case Op::Ret:
      os << "ret";
      if (i.rn != kRegLr) os << " " << reg_name(i.rn);
      break;
    case Op::Svc:
      os << "svc #" << i.imm;
      break;
    case Op::Brk:
      os << "brk #" << i.imm;
      break;
    case Op::Word:
      os << ".word #0x" << std::hex << i.imm << std::dec;
      break;
  }
  return os.str();
}

}  // namespace

std::string print_program(const Program& p) {
  std::ostringstream os;
  for (const Function& f : p.functions) {
    os << ".fn " << f.name << (f.address_taken ? " address_taken" : "")
       << "\n";
    for (const Block& b : f.blocks) {
      os << b.label << ":\n";
      for (const Instr& i : b.instrs) os << "  " << print_instr(i) << "\n";
    }
    os << ".endfn\n";
  }
  return os.str();
}

}  // namespace cfprot
