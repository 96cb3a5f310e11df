#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cfprot/asm_ir.hpp"
#include "cfprot/encoder.hpp"
#include "cfprot/layout.hpp"

namespace cfprot {

struct TraceEvent {
  uint64_t step = 0;
  std::string kind;  // call ret jump store lsu-load svc-write fault trap exit
                     // attack-write attack-read attack-setreg
  uint64_t pc = 0;
  uint64_t a = 0;  // kind-specific operands (target/addr/...)
  uint64_t b = 0;
  std::string detail;

  bool operator==(const TraceEvent&) const = default;
  std::string to_string() const;
};

enum class RunStatus : uint8_t {
  Running,
  Exited,
  Faulted,
  Trapped,
  FuelExhausted,
};

struct RunResult {
  RunStatus status = RunStatus::Running;
  int64_t exit_code = 0;
  std::optional<Verdict> fault;
  uint64_t fault_pc = 0;
  uint64_t trap_imm = 0;
  std::vector<TraceEvent> trace;
  bool pc_entered_upper = false;
};

// Deterministic interpreter for one task over a policy-built layout. Every
// load, store and fetch consults the permission model before taking effect.
class Machine {
 public:
  Machine(const Program& program, const MemoryLayout& layout);

  void set_entry(std::string_view function);
  RunStatus step();
  // Runs until a terminal status or until `fuel` further steps elapsed.
  RunStatus run(uint64_t fuel);
  // Runs until the next event of the given kind ("call", "ret", ...) or a
  // terminal status.
  RunStatus run_until(std::string_view event_kind, uint64_t fuel);

  uint64_t reg(RegIdx r) const;
  void set_reg(RegIdx r, uint64_t value);
  uint64_t pc() const { return pc_; }
  uint64_t shadow_ptr() const { return x_[kRegShadow]; }
  void set_shadow_ptr(uint64_t v) { x_[kRegShadow] = v; }
  const CpuSecState& sec() const { return sec_; }
  RunStatus status() const { return status_; }

  // Attacker primitives: regular accesses issued at the task's privilege.
  // A denied access records a fault and makes the machine terminal.
  Verdict attacker_write(uint64_t addr, std::span<const uint8_t> bytes);
  Verdict attacker_read(uint64_t addr, size_t len,
                        std::vector<uint8_t>* out = nullptr);
  void attacker_setreg(RegIdx r, uint64_t value);

  // Raw memory inspection for oracles; bypasses permission checks and does
  // not trace. Returns false when the range is not mapped.
  bool peek(uint64_t addr, size_t len, std::vector<uint8_t>* out) const;
  bool peek_u64(uint64_t addr, uint64_t* out) const;

  RunResult result() const;
  const std::vector<TraceEvent>& trace() const { return trace_; }
  const CodeImage& image() const { return image_; }
  const MemoryLayout& layout() const { return layout_; }
  const ShadowSpan& shadow_span() const { return shadow_span_; }

 private:
  friend struct MachineTestPeer;

  std::optional<Verdict> mem_access(AccessKind kind, AccessVia via,
                                    uint64_t addr, size_t len,
                                    uint64_t* value, uint64_t store_value);
  void fault(Verdict v, const std::string& what);
  void record(std::string kind, uint64_t a = 0, uint64_t b = 0,
              std::string detail = {});
  bool eval_cond(Cond c) const;
  void exec(const Instr& i);

  Program program_;
  MemoryLayout layout_;
  CpuSecState sec_;
  CodeImage image_;
  ShadowSpan shadow_span_;

  std::array<uint64_t, 31> x_{};
  uint64_t sp_ = 0;
  uint64_t pc_ = 0;
  bool flag_n_ = false, flag_z_ = false, flag_c_ = false, flag_v_ = false;

  std::map<std::string, std::vector<uint8_t>> mem_;  // per mapped region
  RunStatus status_ = RunStatus::Running;
  int64_t exit_code_ = 0;
  std::optional<Verdict> fault_;
  uint64_t fault_pc_ = 0;
  uint64_t trap_imm_ = 0;
  uint64_t step_count_ = 0;
  uint32_t cur_func_ = 0;
  bool pc_entered_upper_ = false;
  std::vector<TraceEvent> trace_;
};

// --- Whole-program runs ----------------------------------------------------

// Interprets `program` over `layout` starting at `entry`. The program must
// pass full verification unless allow_unverified is set (negative
// demonstrations). Throws ToolError on verification failure.
RunResult run_program(const Program& program, const MemoryLayout& layout,
                      std::string_view entry, uint64_t fuel,
                      bool allow_unverified = false);

// --- Attack scripts ---------------------------------------------------------

struct AttackStep {
  enum class Kind { Write, Read, SetReg, ResumeUntil };
  Kind kind = Kind::ResumeUntil;
  uint64_t addr = 0;
  std::vector<uint8_t> bytes;  // Write
  size_t len = 0;              // Read
  RegIdx reg = 0;              // SetReg
  uint64_t value = 0;          // SetReg
  std::string event;           // ResumeUntil: ret|call|fault|exit
};

struct AttackScript {
  std::vector<AttackStep> steps;

  // Line-oriented: `write <hex-addr> <hex-bytes>` | `read <hex-addr> <len>` |
  // `setreg x<N> <hex>` | `resume-until <ret|call|fault|exit>`; # comments.
  static AttackScript parse(std::string_view text);
  static AttackScript load_file(const std::string& path);
};

enum class OutcomeKind : uint8_t { Neutralized, Hijacked, Faulted };

struct Outcome {
  OutcomeKind result = OutcomeKind::Neutralized;
  std::string reason;            // Neutralized
  uint64_t hijacked_pc = 0;      // Hijacked
  std::optional<Verdict> fault;  // Faulted
  std::vector<TraceEvent> trace;

  std::string to_string() const;
};

// Runs the verified program with scripted corruption interleaved. Hijacked
// is reported only when PC reaches an attacker-chosen value.
Outcome run_attack(const Program& program, const MemoryLayout& layout,
                   const AttackScript& script, std::string_view entry,
                   uint64_t fuel);

// --- Shadow stack unwinding -------------------------------------------------

struct UnwindResult {
  bool underflow = false;
  uint64_t x28 = 0;  // one slot above the matched return address
};

// Steps the shadow stack pointer down one slot at a time, comparing each
// stored return address against target_ra; stops at the first match or at
// the low guard (underflow). Never adopts saved_x28 as the new pointer (it
// is only bounds-checked against the shadow span). On success the machine's
// X28 is updated to the returned position.
UnwindResult longjmp_unwind(Machine& m, uint64_t target_ra,
                            uint64_t saved_x28);

}  // namespace cfprot
