#include "cfprot/decoder.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "cfprot/errors.hpp"

namespace cfprot {

namespace {

constexpr uint32_t bits(uint32_t w, unsigned lsb, unsigned msb) {
  return (w >> lsb) & ((1u << (msb - lsb + 1)) - 1);
}

constexpr uint32_t bit(uint32_t w, unsigned n) { return (w >> n) & 1; }

int64_t sext(uint32_t value, unsigned width) {
  uint64_t sign = 1ull << (width - 1);
  uint64_t v = value;
  return static_cast<int64_t>((v ^ sign) - sign);
}

struct NamedSysreg {
  const char* name;
  SysregId id;
};

// Register-form system registers the toolkit knows by name. Anything else
// round-trips through the S-form spelling.
constexpr NamedSysreg kNamedSysregs[] = {
    {"TPIDR_EL0", {3, 3, 13, 0, 2}},
    {"TPIDRRO_EL0", {3, 3, 13, 0, 3}},
    {"NZCV", {3, 3, 4, 2, 0}},
    {"FPCR", {3, 3, 4, 4, 0}},
    {"FPSR", {3, 3, 4, 4, 1}},
    {"CNTVCT_EL0", {3, 3, 14, 0, 2}},
    {"CNTFRQ_EL0", {3, 3, 14, 0, 0}},
    {"CTR_EL0", {3, 3, 0, 0, 1}},
    {"DCZID_EL0", {3, 3, 0, 0, 7}},
    {"SCTLR_EL1", {3, 0, 1, 0, 0}},
    {"TTBR0_EL1", {3, 0, 2, 0, 0}},
    {"TTBR1_EL1", {3, 0, 2, 0, 1}},
    {"TCR_EL1", {3, 0, 2, 0, 2}},
    {"VBAR_EL1", {3, 0, 12, 0, 0}},
    {"ELR_EL1", {3, 0, 4, 0, 1}},
    {"SPSR_EL1", {3, 0, 4, 0, 0}},
    {"ESR_EL1", {3, 0, 5, 2, 0}},
    {"FAR_EL1", {3, 0, 6, 0, 0}},
};

// PSTATE fields reachable via the MSR immediate form, keyed by (op1, op2).
constexpr NamedSysreg kPstateFields[] = {
    {"PAN", {0, 0, 4, 0, 4}},     {"UAO", {0, 0, 4, 0, 3}},
    {"SPSEL", {0, 0, 4, 0, 5}},   {"SSBS", {0, 3, 4, 0, 1}},
    {"DIT", {0, 3, 4, 0, 2}},     {"TCO", {0, 3, 4, 0, 4}},
    {"DAIFSET", {0, 3, 4, 0, 6}}, {"DAIFCLR", {0, 3, 4, 0, 7}},
};

// IC/DC maintenance operations, as SYS (op0=1) tuples.
constexpr NamedSysreg kCacheOps[] = {
    {"DC_ZVA", {1, 3, 7, 4, 1}},    {"DC_CVAU", {1, 3, 7, 11, 1}},
    {"DC_CVAC", {1, 3, 7, 10, 1}},  {"DC_CVAP", {1, 3, 7, 12, 1}},
    {"DC_CIVAC", {1, 3, 7, 14, 1}}, {"DC_IVAC", {1, 0, 7, 6, 1}},
    {"DC_ISW", {1, 0, 7, 6, 2}},    {"DC_CSW", {1, 0, 7, 10, 2}},
    {"DC_CISW", {1, 0, 7, 14, 2}},  {"IC_IVAU", {1, 3, 7, 5, 1}},
    {"IC_IALLU", {1, 0, 7, 5, 0}},  {"IC_IALLUIS", {1, 0, 7, 1, 0}},
};

bool is_cache_op(const SysregId& id) {
  for (const auto& op : kCacheOps)
    if (op.id == id) return true;
  return false;
}

InstrClass make(InstrKind kind) {
  InstrClass c;
  c.kind = kind;
  return c;
}

// System space: bits[31:22] == 1101010100.
InstrClass decode_system(uint32_t w) {
  const uint32_t l = bit(w, 21);
  const uint8_t op0 = static_cast<uint8_t>(bits(w, 19, 20));
  const uint8_t op1 = static_cast<uint8_t>(bits(w, 16, 18));
  const uint8_t crn = static_cast<uint8_t>(bits(w, 12, 15));
  const uint8_t crm = static_cast<uint8_t>(bits(w, 8, 11));
  const uint8_t op2 = static_cast<uint8_t>(bits(w, 5, 7));
  const uint8_t rt = static_cast<uint8_t>(bits(w, 0, 4));

  if (op0 >= 2) {  // MRS / MSR (register)
    InstrClass c = make(l ? InstrKind::Mrs : InstrKind::Msr);
    c.sysreg = {op0, op1, crn, crm, op2};
    return c;
  }

  if (op0 == 1) {  // SYS / SYSL and their aliases
    if (l) return make(InstrKind::SysOther);  // SYSL
    SysregId id{1, op1, crn, crm, op2};
    if (crn == 7) {
      if (crm == 8 || crm == 9) return make(InstrKind::At);
      if (op1 == 1 && crm == 2 && (op2 == 4 || op2 == 5))
        return make(InstrKind::Brb);
      if (op1 == 3 && crm == 3 && (op2 == 4 || op2 == 5 || op2 == 7))
        return make(InstrKind::PredRestrict);
      if (is_cache_op(id)) {
        InstrClass c = make(InstrKind::CacheOp);
        c.sysreg = id;
        return c;
      }
      return make(InstrKind::SysOther);
    }
    if (crn == 8) return make(InstrKind::Tlbi);
    return make(InstrKind::SysOther);
  }

  // op0 == 0: PSTATE writes, hints, barriers.
  if (l) return make(InstrKind::Other);
  if (crn == 4 && rt == 0x1F) {  // MSR (immediate); CRm is the immediate
    InstrClass c = make(InstrKind::Msr);
    c.sysreg = {0, op1, 4, 0, op2};
    return c;
  }
  if (op1 == 3 && crn == 2 && rt == 0x1F) {  // hint space
    if (crm == 4 && (op2 & 1) == 0) {
      InstrClass c = make(InstrKind::BtiLabel);
      switch (op2) {
        case 0: c.bti = BtiKind::None; break;
        case 2: c.bti = BtiKind::C; break;
        case 4: c.bti = BtiKind::J; break;
        case 6: c.bti = BtiKind::JC; break;
      }
      return c;
    }
    return make(InstrKind::Other);  // NOP, YIELD, PAC hints, ...
  }
  return make(InstrKind::Other);  // barriers and unallocated
}

// 64-bit logical immediate decode (N:immr:imms -> value). Returns false for
// reserved patterns.
bool expand_bitmask_imm(uint32_t n, uint32_t immr, uint32_t imms,
                        uint64_t* out) {
  unsigned len;
  if (n == 1) {
    len = 6;
  } else {
    // Highest clear bit of imms determines the element size.
    uint32_t inverted = ~imms & 0x3F;
    if (inverted == 0) return false;
    len = 31 - __builtin_clz(inverted);
  }
  unsigned esize = 1u << len;
  uint32_t s = imms & (esize - 1);
  uint32_t r = immr & (esize - 1);
  if (s == esize - 1) return false;
  uint64_t welem = (s == 63) ? ~0ull : ((1ull << (s + 1)) - 1);
  // Rotate right within the element.
  if (r != 0)
    welem = ((welem >> r) | (welem << (esize - r))) &
            (esize == 64 ? ~0ull : ((1ull << esize) - 1));
  uint64_t result = 0;
  for (unsigned i = 0; i < 64; i += esize) result |= welem << i;
  *out = result;
  return true;
}

}  // namespace

InstrClass decode(uint32_t w) {
  // --- System space -------------------------------------------------------
  if ((w & 0xFFC00000u) == 0xD5000000u) return decode_system(w);

  // --- Exception generation (SVC/HVC/SMC/BRK/...) --------------------------
  if ((w & 0xFF000000u) == 0xD4000000u) {
    const uint32_t opc = bits(w, 21, 23);
    const uint32_t ll = bits(w, 0, 1);
    if (opc == 0 && ll == 1) return make(InstrKind::Svc);
    if (opc == 0 && ll == 2) return make(InstrKind::Hvc);
    if (opc == 0 && ll == 3) return make(InstrKind::Smc);
    return make(InstrKind::Other);  // BRK, HLT, DCPS encodings
  }

  // --- Unconditional branch (register) -------------------------------------
  if ((w & 0xFE000000u) == 0xD6000000u) {
    if (w == 0xD69F03E0u || w == 0xD69F0BFFu || w == 0xD69F0FFFu)
      return make(InstrKind::Eret);  // ERET / ERETAA / ERETAB
    const uint32_t opc = bits(w, 21, 24);
    if (bits(w, 10, 20) == 0x7C0 && bits(w, 0, 4) == 0) {
      InstrClass c;
      switch (opc) {
        case 0: c = make(InstrKind::Br); break;
        case 1: c = make(InstrKind::Blr); break;
        case 2: c = make(InstrKind::Ret); break;
        default: return make(InstrKind::Other);  // DRPS and pauth variants
      }
      c.reg = static_cast<uint8_t>(bits(w, 5, 9));
      return c;
    }
    return make(InstrKind::Other);
  }

  // --- Immediate branches ---------------------------------------------------
  if ((w & 0x7C000000u) == 0x14000000u) {  // B / BL
    InstrClass c = make(bit(w, 31) ? InstrKind::Bl : InstrKind::B);
    c.offset = sext(bits(w, 0, 25), 26) * 4;
    return c;
  }
  if ((w & 0xFF000010u) == 0x54000000u) {  // B.cond
    InstrClass c = make(InstrKind::BCond);
    c.cond = static_cast<uint8_t>(bits(w, 0, 3));
    c.offset = sext(bits(w, 5, 23), 19) * 4;
    return c;
  }

  // --- MTE bulk tag transfer (LDGM/STGM/STZGM) ------------------------------
  if ((w & 0xFF20FC00u) == 0xD9200000u) {
    const uint32_t opc = bits(w, 22, 23);
    if (opc == 0 || opc == 2 || opc == 3)  // STZGM / STGM / LDGM
      return make(InstrKind::MteTagMultiple);
    return make(InstrKind::Other);  // LDG has opc==1 and is a single-tag load
  }

  // --- Unprivileged load/store (LDTR*/STTR*) --------------------------------
  // Must precede the generic load/store families: it shares their top bits
  // and is selected by bits[11:10] == 10.
  if ((w & 0x3F200C00u) == 0x38000800u) {
    const uint32_t opc = bits(w, 22, 23);
    return make(opc == 0 ? InstrKind::LsuStore : InstrKind::LsuLoad);
  }

  // --- Regular load/store families ------------------------------------------
  // Register (unsigned immediate), V=0 and V=1.
  if ((w & 0x3B000000u) == 0x39000000u) {
    const uint32_t opc = bits(w, 22, 23);
    const uint32_t size = bits(w, 30, 31);
    if (bit(w, 26)) return make((opc & 1) ? InstrKind::RegularLoad
                                          : InstrKind::RegularStore);
    if (size == 3 && opc == 2) return make(InstrKind::Other);  // PRFM
    return make(opc == 0 ? InstrKind::RegularStore : InstrKind::RegularLoad);
  }
  // Register (unscaled / pre / post / register offset), V=0 and V=1.
  if ((w & 0x3B200000u) == 0x38000000u || (w & 0x3B200800u) == 0x38200800u) {
    const uint32_t opc = bits(w, 22, 23);
    const uint32_t size = bits(w, 30, 31);
    if (bit(w, 26)) return make((opc & 1) ? InstrKind::RegularLoad
                                          : InstrKind::RegularStore);
    if (size == 3 && opc == 2) return make(InstrKind::Other);  // PRFUM
    return make(opc == 0 ? InstrKind::RegularStore : InstrKind::RegularLoad);
  }
  // Load/store pair (incl. no-alloc).
  if ((w & 0x3A000000u) == 0x28000000u)
    return make(bit(w, 22) ? InstrKind::RegularLoad : InstrKind::RegularStore);
  // Load register (literal).
  if ((w & 0x3B000000u) == 0x18000000u) return make(InstrKind::RegularLoad);
  // Load/store exclusive and acquire/release.
  if ((w & 0x3F000000u) == 0x08000000u)
    return make(bit(w, 22) ? InstrKind::RegularLoad : InstrKind::RegularStore);

  // --- AND (immediate), 64-bit: the bit-masking instruction -----------------
  if ((w & 0xFF800000u) == 0x92000000u) {
    const uint32_t rd = bits(w, 0, 4);
    const uint32_t rn = bits(w, 5, 9);
    uint64_t value = 0;
    if (rd == rn && rd != 31 &&
        expand_bitmask_imm(bit(w, 22), bits(w, 16, 21), bits(w, 10, 15),
                           &value) &&
        value == 0x7FFFFFFFFFFFFFFFull) {
      InstrClass c = make(InstrKind::AndMaskTopBit);
      c.reg = static_cast<uint8_t>(rd);
      return c;
    }
    return make(InstrKind::Other);
  }

  return make(InstrKind::Other);
}

bool is_forbidden(const InstrClass& c, const Allowlist& allow) {
  switch (c.kind) {
    case InstrKind::Mrs:
    case InstrKind::Msr:
      return !allow.sysregs.contains(c.sysreg);
    case InstrKind::CacheOp:
      return !allow.cache_ops.contains(c.sysreg);
    case InstrKind::Tlbi:
    case InstrKind::Hvc:
    case InstrKind::Smc:
    case InstrKind::At:
    case InstrKind::Eret:
    case InstrKind::PredRestrict:
    case InstrKind::MteTagMultiple:
    case InstrKind::Brb:
    case InstrKind::SysOther:
      return true;
    default:
      return false;
  }
}

std::string SysregId::to_string() const {
  if (op0 == 0 && crn == 4) {  // PSTATE field
    for (const auto& f : kPstateFields)
      if (f.id == *this) return f.name;
    return "PSTATE_" + std::to_string(op1) + "_" + std::to_string(op2);
  }
  std::ostringstream os;
  os << "S" << int(op0) << "_" << int(op1) << "_C" << int(crn) << "_C"
     << int(crm) << "_" << int(op2);
  return os.str();
}

std::optional<SysregId> SysregId::from_name(std::string_view name) {
  std::string upper(name);
  for (char& ch : upper) ch = static_cast<char>(std::toupper(ch));
  for (const auto& r : kNamedSysregs)
    if (upper == r.name) return r.id;
  for (const auto& f : kPstateFields)
    if (upper == f.name) return f.id;
  for (const auto& op : kCacheOps)
    if (upper == op.name) return op.id;
  // S<op0>_<op1>_C<crn>_C<crm>_<op2>
  unsigned op0, op1, crn, crm, op2;
  if (std::sscanf(upper.c_str(), "S%u_%u_C%u_C%u_%u", &op0, &op1, &crn, &crm,
                  &op2) == 5 &&
      op0 <= 3 && op1 <= 7 && crn <= 15 && crm <= 15 && op2 <= 7) {
    return SysregId{static_cast<uint8_t>(op0), static_cast<uint8_t>(op1),
                    static_cast<uint8_t>(crn), static_cast<uint8_t>(crm),
                    static_cast<uint8_t>(op2)};
  }
  if (upper.starts_with("PSTATE_")) {
    unsigned p1, p2;
    if (std::sscanf(upper.c_str(), "PSTATE_%u_%u", &p1, &p2) == 2 && p1 <= 7 &&
        p2 <= 7)
      return SysregId{0, static_cast<uint8_t>(p1), 4, 0,
                      static_cast<uint8_t>(p2)};
  }
  return std::nullopt;
}

Allowlist Allowlist::el0_default() {
  Allowlist a;
  for (const char* name :
       {"TPIDR_EL0", "TPIDRRO_EL0", "NZCV", "FPCR", "FPSR", "CNTVCT_EL0",
        "CNTFRQ_EL0", "CTR_EL0", "DCZID_EL0"})
    a.sysregs.insert(*SysregId::from_name(name));
  for (const char* name : {"DC_ZVA", "DC_CVAU", "IC_IVAU"})
    a.cache_ops.insert(*SysregId::from_name(name));
  return a;
}

Allowlist Allowlist::parse(std::string_view text) {
  Allowlist a;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ls(line);
    std::string kind, name;
    if (!(ls >> kind)) continue;  // blank
    if (!(ls >> name))
      throw ConfigError("allowlist line " + std::to_string(lineno) +
                        ": missing name");
    auto id = SysregId::from_name(name);
    if (!id)
      throw ConfigError("allowlist line " + std::to_string(lineno) +
                        ": unknown name '" + name + "'");
    if (kind == "sysreg")
      a.sysregs.insert(*id);
    else if (kind == "cacheop")
      a.cache_ops.insert(*id);
    else
      throw ConfigError("allowlist line " + std::to_string(lineno) +
                        ": expected 'sysreg' or 'cacheop', got '" + kind + "'");
  }
  return a;
}

Allowlist Allowlist::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open allowlist file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const char* instr_kind_name(InstrKind kind) {
  switch (kind) {
    case InstrKind::LsuLoad: return "LsuLoad";
    case InstrKind::LsuStore: return "LsuStore";
    case InstrKind::Mrs: return "Mrs";
    case InstrKind::Msr: return "Msr";
    case InstrKind::CacheOp: return "CacheOp";
    case InstrKind::Tlbi: return "Tlbi";
    case InstrKind::Hvc: return "Hvc";
    case InstrKind::Smc: return "Smc";
    case InstrKind::Svc: return "Svc";
    case InstrKind::At: return "At";
    case InstrKind::Eret: return "Eret";
    case InstrKind::PredRestrict: return "PredRestrict";
    case InstrKind::MteTagMultiple: return "MteTagMultiple";
    case InstrKind::Brb: return "Brb";
    case InstrKind::SysOther: return "SysOther";
    case InstrKind::BtiLabel: return "BtiLabel";
    case InstrKind::Ret: return "Ret";
    case InstrKind::Br: return "Br";
    case InstrKind::Blr: return "Blr";
    case InstrKind::Bl: return "Bl";
    case InstrKind::B: return "B";
    case InstrKind::BCond: return "BCond";
    case InstrKind::AndMaskTopBit: return "AndMaskTopBit";
    case InstrKind::RegularLoad: return "RegularLoad";
    case InstrKind::RegularStore: return "RegularStore";
    case InstrKind::Other: return "Other";
  }
  return "?";
}

const char* bti_kind_name(BtiKind kind) {
  switch (kind) {
    case BtiKind::None: return "None";
    case BtiKind::C: return "C";
    case BtiKind::J: return "J";
    case BtiKind::JC: return "JC";
  }
  return "?";
}

std::string InstrClass::to_string() const {
  std::string s = instr_kind_name(kind);
  switch (kind) {
    case InstrKind::Mrs:
    case InstrKind::Msr:
    case InstrKind::CacheOp:
      s += " " + sysreg.to_string();
      break;
    case InstrKind::BtiLabel:
      s += std::string(" ") + bti_kind_name(bti);
      break;
    case InstrKind::Ret:
    case InstrKind::Br:
    case InstrKind::Blr:
    case InstrKind::AndMaskTopBit:
      s += " " + std::to_string(int(reg));
      break;
    case InstrKind::Bl:
    case InstrKind::B:
      s += " " + std::to_string(offset);
      break;
    case InstrKind::BCond:
      s += " " + std::to_string(int(cond)) + " " + std::to_string(offset);
      break;
    default:
      break;
  }
  return s;
}

}  // namespace cfprot
