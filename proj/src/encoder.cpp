#include "cfprot/encoder.hpp"

#include <bit>

#include "cfprot/errors.hpp"

namespace cfprot {

namespace {

uint64_t ror64(uint64_t v, unsigned r, unsigned esize) {
  if (r == 0) return v;
  uint64_t mask = esize == 64 ? ~0ull : (1ull << esize) - 1;
  v &= mask;
  return ((v >> r) | (v << (esize - r))) & mask;
}

[[noreturn]] void unencodable(const std::string& what) {
  throw ToolError("unencodable instruction: " + what);
}

void check_range(int64_t v, int64_t lo, int64_t hi, const char* what) {
  if (v < lo || v > hi) unencodable(std::string(what) + " out of range");
}

}  // namespace

bool encode_bitmask_imm(uint64_t value, uint32_t* n, uint32_t* immr,
                        uint32_t* imms) {
  if (value == 0 || value == ~0ull) return false;
  // Smallest repeating element size.
  unsigned esize = 64;
  while (esize > 2) {
    unsigned half = esize / 2;
    uint64_t mask = (1ull << half) - 1;
    if ((value & mask) != ((value >> half) & mask)) break;
    esize = half;
  }
  uint64_t emask = esize == 64 ? ~0ull : (1ull << esize) - 1;
  uint64_t elem = value & emask;
  unsigned ones = static_cast<unsigned>(std::popcount(elem));
  if (ones == 0 || ones == esize) return false;
  uint64_t welem = ones == 64 ? ~0ull : (1ull << ones) - 1;
  for (unsigned r = 0; r < esize; ++r) {
    if (ror64(welem, r, esize) == elem) {
      *immr = r;
      switch (esize) {
        case 64: *n = 1; *imms = ones - 1; break;
        case 32: *n = 0; *imms = ones - 1; break;
        case 16: *n = 0; *imms = 0x20 | (ones - 1); break;
        case 8: *n = 0; *imms = 0x30 | (ones - 1); break;
        case 4: *n = 0; *imms = 0x38 | (ones - 1); break;
        case 2: *n = 0; *imms = 0x3C | (ones - 1); break;
        default: return false;
      }
      return true;
    }
  }
  return false;
}

uint32_t encode_instr(
    const Instr& i, uint64_t pc,
    const std::function<uint64_t(const std::string&)>& resolve) {
  auto rd = [&i] { return uint32_t(i.rd); };
  auto rn = [&i] { return uint32_t(i.rn); };
  auto rm = [&i] { return uint32_t(i.rm); };

  auto branch_delta = [&](int64_t scale_bits) -> uint32_t {
    int64_t delta = static_cast<int64_t>(resolve(i.label)) -
                    static_cast<int64_t>(pc);
    if (delta % 4) unencodable("misaligned branch target");
    int64_t units = delta / 4;
    int64_t lim = 1ll << (scale_bits - 1);
    check_range(units, -lim, lim - 1, "branch offset");
    return static_cast<uint32_t>(units & ((1ll << scale_bits) - 1));
  };

  switch (i.op) {
    case Op::Nop:
      return 0xD503201F;
    case Op::Bti:
      switch (i.bti) {
        case BtiKind::None: return 0xD503241F;
        case BtiKind::C: return 0xD503245F;
        case BtiKind::J: return 0xD503249F;
        case BtiKind::JC: return 0xD50324DF;
      }
      unencodable("bti");
    case Op::Movz:
    case Op::Movk: {
      check_range(i.imm, 0, 0xFFFF, "mov immediate");
      if (i.shift % 16 || i.shift > 48) unencodable("mov shift");
      uint32_t base = i.op == Op::Movz ? 0xD2800000 : 0xF2800000;
      return base | uint32_t(i.shift / 16) << 21 | uint32_t(i.imm) << 5 | rd();
    }
    case Op::MovReg:
      if (i.rd == kRegSp || i.rn == kRegSp) unencodable("mov with sp");
      return 0xAA0003E0 | rn() << 16 | rd();
    case Op::AddImm:
    case Op::SubImm: {
      check_range(i.imm, 0, 4095, "add/sub immediate");
      uint32_t base = i.op == Op::AddImm ? 0x91000000 : 0xD1000000;
      return base | uint32_t(i.imm) << 10 | rn() << 5 | rd();
    }
    case Op::AddReg:
    case Op::SubReg: {
      if (i.rd == kRegSp || i.rn == kRegSp || i.rm == kRegSp)
        unencodable("add/sub (register) with sp");
      uint32_t base = i.op == Op::AddReg ? 0x8B000000 : 0xCB000000;
      return base | rm() << 16 | rn() << 5 | rd();
    }
    case Op::CmpImm:
      check_range(i.imm, 0, 4095, "cmp immediate");
      return 0xF100001F | uint32_t(i.imm) << 10 | rn() << 5;
    case Op::CmpReg:
      if (i.rn == kRegSp || i.rm == kRegSp) unencodable("cmp with sp");
      return 0xEB00001F | rm() << 16 | rn() << 5;
    case Op::Mul:
      if (i.rd == kRegSp || i.rn == kRegSp || i.rm == kRegSp)
        unencodable("mul with sp");
      return 0x9B007C00 | rm() << 16 | rn() << 5 | rd();
    case Op::AndImm: {
      uint32_t n, immr, imms;
      if (i.rd == kRegSp || i.rn == kRegSp) unencodable("and with sp");
      if (!encode_bitmask_imm(i.imm, &n, &immr, &imms))
        unencodable("logical immediate");
      return 0x92000000 | n << 22 | immr << 16 | imms << 10 | rn() << 5 | rd();
    }
    case Op::Adr: {
      int64_t delta = static_cast<int64_t>(resolve(i.label)) -
                      static_cast<int64_t>(pc);
      check_range(delta, -(1 << 20), (1 << 20) - 1, "adr offset");
      uint32_t lo = delta & 3;
      uint32_t hi = (delta >> 2) & 0x7FFFF;
      return 0x10000000 | lo << 29 | hi << 5 | rd();
    }
    case Op::Ldr:
    case Op::Str: {
      bool load = i.op == Op::Ldr;
      if (i.mode == AddrMode::Offset) {
        if (i.offset < 0 || i.offset % 8) unencodable("ldr/str offset");
        check_range(i.offset / 8, 0, 4095, "ldr/str offset");
        return (load ? 0xF9400000 : 0xF9000000) |
               uint32_t(i.offset / 8) << 10 | rn() << 5 | rd();
      }
      check_range(i.offset, -256, 255, "ldr/str writeback offset");
      uint32_t base = load ? 0xF8400000 : 0xF8000000;
      uint32_t mode = i.mode == AddrMode::PreIndex ? 0xC00 : 0x400;
      return base | mode | (uint32_t(i.offset) & 0x1FF) << 12 | rn() << 5 |
             rd();
    }
    case Op::LdrW:
      if (i.offset < 0 || i.offset % 4) unencodable("ldr w offset");
      check_range(i.offset / 4, 0, 4095, "ldr w offset");
      return 0xB9400000 | uint32_t(i.offset / 4) << 10 | rn() << 5 | rd();
    case Op::Ldtr:
    case Op::Sttr:
      check_range(i.offset, -256, 255, "ldtr/sttr offset");
      return (i.op == Op::Ldtr ? 0xF8400800 : 0xF8000800) |
             (uint32_t(i.offset) & 0x1FF) << 12 | rn() << 5 | rd();
    case Op::Ldp:
    case Op::Stp: {
      if (i.offset % 8) unencodable("ldp/stp offset");
      check_range(i.offset / 8, -64, 63, "ldp/stp offset");
      uint32_t imm7 = uint32_t(i.offset / 8) & 0x7F;
      uint32_t base;
      if (i.op == Op::Ldp)
        base = i.mode == AddrMode::Offset
                   ? 0xA9400000
                   : (i.mode == AddrMode::PreIndex ? 0xA9C00000 : 0xA8C00000);
      else
        base = i.mode == AddrMode::Offset
                   ? 0xA9000000
                   : (i.mode == AddrMode::PreIndex ? 0xA9800000 : 0xA8800000);
      return base | imm7 << 15 | uint32_t(i.rt2) << 10 | rn() << 5 | rd();
    }
    case Op::B:
      return 0x14000000 | branch_delta(26);
    case Op::Bl:
      return 0x94000000 | branch_delta(26);
    case Op::BCond:
      return 0x54000000 | branch_delta(19) << 5 | uint32_t(i.cond);
    case Op::Blr:
      return 0xD63F0000 | rn() << 5;
    case Op::BrTable:
    case Op::BrTail:
    case Op::BrUncon:
      return 0xD61F0000 | rn() << 5;
    case Op::Ret:
      return 0xD65F0000 | rn() << 5;
    case Op::Svc:
      check_range(i.imm, 0, 0xFFFF, "svc immediate");
      return 0xD4000001 | uint32_t(i.imm) << 5;
    case Op::Brk:
      check_range(i.imm, 0, 0xFFFF, "brk immediate");
      return 0xD4200000 | uint32_t(i.imm) << 5;
    case Op::Word:
      return static_cast<uint32_t>(i.imm);
  }
  unencodable("unknown op");
}

std::optional<CodeImage::Site> CodeImage::site_at(uint64_t addr) const {
  if (addr < base || addr >= end() || (addr - base) % 4) return std::nullopt;
  return sites[(addr - base) / 4];
}

std::optional<uint64_t> CodeImage::resolve(uint32_t func_idx,
                                           const std::string& label) const {
  if (func_idx < block_addr.size()) {
    auto it = block_addr[func_idx].find(label);
    if (it != block_addr[func_idx].end()) return it->second;
  }
  auto it = function_addr.find(label);
  if (it != function_addr.end()) return it->second;
  return std::nullopt;
}

std::vector<uint8_t> CodeImage::bytes() const {
  std::vector<uint8_t> out;
  out.reserve(words.size() * 4);
  for (uint32_t w : words) {
    out.push_back(w & 0xFF);
    out.push_back((w >> 8) & 0xFF);
    out.push_back((w >> 16) & 0xFF);
    out.push_back((w >> 24) & 0xFF);
  }
  return out;
}

CodeImage encode_program(const Program& p, uint64_t base) {
  CodeImage image;
  image.base = base;

  // First pass: assign addresses.
  uint64_t addr = base;
  image.block_addr.resize(p.functions.size());
  for (size_t f = 0; f < p.functions.size(); ++f) {
    image.function_addr[p.functions[f].name] = addr;
    for (const Block& b : p.functions[f].blocks) {
      image.block_addr[f][b.label] = addr;
      addr += b.instrs.size() * 4;
    }
  }

  // Second pass: encode.
  addr = base;
  for (size_t f = 0; f < p.functions.size(); ++f) {
    auto resolver = [&image, f](const std::string& label) -> uint64_t {
      auto target = image.resolve(static_cast<uint32_t>(f), label);
      if (!target) throw ToolError("unresolved label '" + label + "'");
      return *target;
    };
    for (size_t b = 0; b < p.functions[f].blocks.size(); ++b) {
      const Block& block = p.functions[f].blocks[b];
      for (size_t k = 0; k < block.instrs.size(); ++k) {
        image.words.push_back(encode_instr(block.instrs[k], addr, resolver));
        image.sites.push_back({static_cast<uint32_t>(f),
                               static_cast<uint32_t>(b),
                               static_cast<uint32_t>(k)});
        addr += 4;
      }
    }
  }
  return image;
}

}  // namespace cfprot
