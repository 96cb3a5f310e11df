#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace cfprot {

// Classification of one 32-bit A64 instruction word. The decoder covers
// exactly the categories the page scanner, the static verifier, and the
// machine model care about; everything else is `Other`. Decoding is total:
// any 32-bit value maps to some class.
enum class InstrKind : uint8_t {
  LsuLoad,         // LDTR/LDTRB/LDTRH/LDTRS* - unprivileged load
  LsuStore,        // STTR/STTRB/STTRH - unprivileged store
  Mrs,             // system register read (operand checked against allowlist)
  Msr,             // system register write, register or immediate form
  CacheOp,         // IC/DC cache maintenance (operand checked)
  Tlbi,            // TLB invalidate
  Hvc,             // hypervisor call
  Smc,             // secure monitor call
  Svc,             // supervisor call (not forbidden; the system call path)
  At,              // address translation
  Eret,            // exception return (incl. ERETAA/ERETAB)
  PredRestrict,    // CFP/CPP/DVP RCTX prediction restriction
  MteTagMultiple,  // LDGM/STGM/STZGM
  Brb,             // branch record buffer maintenance
  SysOther,        // any other SYS/SYSL encoding
  BtiLabel,        // BTI {,C,J,JC} landing pad
  Ret,
  Br,
  Blr,
  Bl,
  B,
  BCond,
  AndMaskTopBit,  // AND Xd, Xd, #0x7fffffffffffffff
  RegularLoad,
  RegularStore,
  Other,
};

// (op0, op1, CRn, CRm, op2) tuple naming a system register or a SYS
// operation. For the MSR immediate form (PSTATE field writes) op0 is 0,
// CRn is 4 and CRm (the immediate) is normalized to 0 so that e.g. every
// `MSR PAN, #x` carries the same id.
struct SysregId {
  uint8_t op0 = 0;
  uint8_t op1 = 0;
  uint8_t crn = 0;
  uint8_t crm = 0;
  uint8_t op2 = 0;

  auto operator<=>(const SysregId&) const = default;

  // "S3_3_C13_C0_2" style spelling; PSTATE fields print by name when known.
  std::string to_string() const;
  // Accepts the S-form above plus the common register and PSTATE names
  // (TPIDR_EL0, NZCV, PAN, ...). Returns nullopt for unknown names.
  static std::optional<SysregId> from_name(std::string_view name);
};

enum class BtiKind : uint8_t { None, C, J, JC };

struct InstrClass {
  InstrKind kind = InstrKind::Other;
  SysregId sysreg;       // Mrs/Msr/CacheOp
  BtiKind bti = BtiKind::None;
  uint8_t reg = 0;       // Ret/Br/Blr/AndMaskTopBit
  int64_t offset = 0;    // Bl/B/BCond, byte offset from the instruction
  uint8_t cond = 0;      // BCond

  bool operator==(const InstrClass&) const = default;

  std::string to_string() const;
};

// Total classification of one instruction word.
InstrClass decode(uint32_t word);

// Operand allowlist for MRS/MSR/IC/DC: the instructions a task could have
// executed in the unprivileged mode anyway. Loaded from a config file so the
// shipped set stays auditable.
struct Allowlist {
  std::set<SysregId> sysregs;
  std::set<SysregId> cache_ops;

  // System registers and cache ops accessible from EL0: TPIDR(RO)_EL0, NZCV,
  // FPCR, FPSR, CNT{VCT,FRQ}_EL0, CTR_EL0, DCZID_EL0; DC ZVA/CVAU, IC IVAU.
  static Allowlist el0_default();

  // Line-oriented config: `sysreg <NAME>` | `cacheop <NAME>`, `#` comments.
  // Throws ConfigError on unknown names or malformed lines.
  static Allowlist parse(std::string_view text);
  static Allowlist load_file(const std::string& path);
};

// True iff `c` is one of the forbidden privileged-instruction categories and
// its operand (if any) is not excused by the allowlist. SVC is never
// forbidden.
bool is_forbidden(const InstrClass& c, const Allowlist& allow);

const char* instr_kind_name(InstrKind kind);
const char* bti_kind_name(BtiKind kind);

}  // namespace cfprot
