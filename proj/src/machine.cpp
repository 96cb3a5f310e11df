#include "cfprot/machine.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cfprot/errors.hpp"
#include "cfprot/policy.hpp"
#include "cfprot/rewriter.hpp"
#include "cfprot/verifier.hpp"

namespace cfprot {

namespace {

constexpr uint32_t kEretWord = 0xD69F03E0;

uint64_t load_le(std::span<const uint8_t> bytes) {
  uint64_t v = 0;
  for (size_t i = 0; i < bytes.size(); ++i) v |= uint64_t(bytes[i]) << (8 * i);
  return v;
}

void store_le(std::span<uint8_t> bytes, uint64_t v) {
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<uint8_t>(v >> (8 * i));
}

std::string hex(uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

}  // namespace

Machine::Machine(const Program& program, const MemoryLayout& layout)
    : program_(program), layout_(layout) {
  sec_ = layout.elevated_state
             ? *layout.elevated_state
             : security_state_for(TaskKind::Elevated,
                                  layout.mode.value_or(IsolationMode::Hpds));

  const Region* code = nullptr;
  const Region* stack = nullptr;
  const Region* shadow = nullptr;
  for (const Region& r : layout_.regions) {
    if (!code && r.role == RegionRole::TaskCode &&
        r.owner == TaskKind::Elevated)
      code = &r;
    if (r.role == RegionRole::TaskData && r.owner == TaskKind::Elevated &&
        (r.name == "stack" || !stack))
      stack = &r;
    if (!shadow && r.role == RegionRole::ShadowStack) shadow = &r;
  }
  if (!code || !stack || !shadow)
    throw ToolError("layout lacks elevated code/stack/shadow-stack regions");

  image_ = encode_program(program_, code->base);
  if (image_.end() > code->end())
    throw ToolError("program image does not fit the code region");

  if (layout_.shadow_span)
    shadow_span_ = *layout_.shadow_span;
  else
    shadow_span_ = ShadowSpan{shadow->base, shadow->size, 0x1000};

  for (const Region& r : layout_.regions) {
    if (!r.mapped) continue;
    std::vector<uint8_t>& bytes = mem_[r.name];
    bytes.assign(r.size, 0);
    if (&r == code) {
      std::vector<uint8_t> img = image_.bytes();
      std::copy(img.begin(), img.end(), bytes.begin());
    } else if (r.role == RegionRole::KernelCode) {
      for (size_t off = 0; off + 4 <= bytes.size(); off += 4)
        store_le(std::span(bytes).subspan(off, 4), kEretWord);
    }
  }

  sp_ = stack->end();
  x_[kRegShadow] = shadow_span_.base;
}

void Machine::set_entry(std::string_view function) {
  auto it = image_.function_addr.find(std::string(function));
  if (it == image_.function_addr.end())
    throw ToolError("no function named '" + std::string(function) + "'");
  pc_ = it->second;
}

uint64_t Machine::reg(RegIdx r) const { return r == kRegSp ? sp_ : x_[r]; }

void Machine::set_reg(RegIdx r, uint64_t value) {
  if (r == kRegSp)
    sp_ = value;
  else
    x_[r] = value;
}

void Machine::record(std::string kind, uint64_t a, uint64_t b,
                     std::string detail) {
  trace_.push_back(
      {step_count_, std::move(kind), pc_, a, b, std::move(detail)});
}

void Machine::fault(Verdict v, const std::string& what) {
  status_ = RunStatus::Faulted;
  fault_ = v;
  fault_pc_ = pc_;
  record("fault", v.fault ? uint64_t(*v.fault) : ~0ull, 0,
         v.to_string() + " " + what);
}

std::optional<Verdict> Machine::mem_access(AccessKind kind, AccessVia via,
                                           uint64_t addr, size_t len,
                                           uint64_t* value,
                                           uint64_t store_value) {
  const Region* r = layout_.region_at(addr);
  if (!r || addr + len > r->end())
    return Verdict::deny(FaultReason::NotMapped);
  Verdict v = region_check(sec_, *r, kind, via);
  if (!v.allow) return v;
  std::vector<uint8_t>& bytes = mem_[r->name];
  size_t off = addr - r->base;
  if (kind == AccessKind::Write)
    store_le(std::span(bytes).subspan(off, len), store_value);
  else if (value)
    *value = load_le(std::span(bytes).subspan(off, len));
  return std::nullopt;
}

bool Machine::peek(uint64_t addr, size_t len, std::vector<uint8_t>* out) const {
  const Region* r = layout_.region_at(addr);
  if (!r || !r->mapped || addr + len > r->end()) return false;
  const std::vector<uint8_t>& bytes = mem_.at(r->name);
  size_t off = addr - r->base;
  out->assign(bytes.begin() + off, bytes.begin() + off + len);
  return true;
}

bool Machine::peek_u64(uint64_t addr, uint64_t* out) const {
  std::vector<uint8_t> bytes;
  if (!peek(addr, 8, &bytes)) return false;
  *out = load_le(bytes);
  return true;
}

bool Machine::eval_cond(Cond c) const {
  switch (c) {
    case Cond::Eq: return flag_z_;
    case Cond::Ne: return !flag_z_;
    case Cond::Hs: return flag_c_;
    case Cond::Lo: return !flag_c_;
    case Cond::Mi: return flag_n_;
    case Cond::Pl: return !flag_n_;
    case Cond::Vs: return flag_v_;
    case Cond::Vc: return !flag_v_;
    case Cond::Hi: return flag_c_ && !flag_z_;
    case Cond::Ls: return !flag_c_ || flag_z_;
    case Cond::Ge: return flag_n_ == flag_v_;
    case Cond::Lt: return flag_n_ != flag_v_;
    case Cond::Gt: return !flag_z_ && flag_n_ == flag_v_;
    case Cond::Le: return flag_z_ || flag_n_ != flag_v_;
    case Cond::Al: return true;
  }
  return false;
}

RunStatus Machine::step() {
  if (status_ != RunStatus::Running) return status_;
  ++step_count_;

  if (pc_ >> 63) pc_entered_upper_ = true;

  auto site = image_.site_at(pc_);
  const Region* r = layout_.region_at(pc_);
  if (!r) {
    fault(Verdict::deny(FaultReason::NotMapped),
          "instruction fetch from the address-space gap");
    return status_;
  }
  Verdict fetch = region_check(sec_, *r, AccessKind::InstrFetch,
                               AccessVia::Regular);
  if (!fetch.allow) {
    fault(fetch, "instruction fetch");
    return status_;
  }
  if (!site) {
    fault(Verdict::deny(FaultReason::NotMapped),
          "executable memory outside the program image");
    return status_;
  }
  const Instr& instr = program_.functions[site->func]
                           .blocks[site->block]
                           .instrs[site->instr];
  cur_func_ = site->func;
  exec(instr);
  return status_;
}

void Machine::exec(const Instr& i) {
  uint64_t next = pc_ + 4;

  auto resolve = [this](const std::string& label) -> uint64_t {
    auto addr = image_.resolve(cur_func_, label);
    if (!addr) throw ToolError("unresolved label '" + label + "'");
    return *addr;
  };

  switch (i.op) {
    case Op::Nop:
    case Op::Bti:
      break;
    case Op::Movz:
      x_[i.rd] = i.imm << i.shift;
      break;
    case Op::Movk:
      x_[i.rd] = (x_[i.rd] & ~(0xFFFFull << i.shift)) | (i.imm << i.shift);
      break;
    case Op::MovReg:
      x_[i.rd] = x_[i.rn];
      break;
    case Op::AddImm:
      set_reg(i.rd, reg(i.rn) + i.imm);
      break;
    case Op::SubImm:
      set_reg(i.rd, reg(i.rn) - i.imm);
      break;
    case Op::AddReg:
      x_[i.rd] = x_[i.rn] + x_[i.rm];
      break;
    case Op::SubReg:
      x_[i.rd] = x_[i.rn] - x_[i.rm];
      break;
    case Op::CmpImm:
    case Op::CmpReg: {
      uint64_t a = reg(i.rn);
      uint64_t b = i.op == Op::CmpImm ? i.imm : x_[i.rm];
      uint64_t res = a - b;
      flag_n_ = res >> 63;
      flag_z_ = res == 0;
      flag_c_ = a >= b;
      flag_v_ = (((a ^ b) & (a ^ res)) >> 63) != 0;
      break;
    }
    case Op::Mul:
      x_[i.rd] = x_[i.rn] * x_[i.rm];
      break;
    case Op::AndImm:
      x_[i.rd] = x_[i.rn] & i.imm;
      break;
    case Op::Adr:
      x_[i.rd] = resolve(i.label);
      break;
    case Op::Ldr:
    case Op::LdrW: {
      uint64_t base = reg(i.rn);
      uint64_t addr = base + (i.mode == AddrMode::PostIndex ? 0 : i.offset);
      size_t len = i.op == Op::LdrW ? 4 : 8;
      uint64_t value = 0;
      if (auto v = mem_access(AccessKind::Read, AccessVia::Regular, addr, len,
                              &value, 0)) {
        fault(*v, "load at " + hex(addr));
        return;
      }
      x_[i.rd] = value;
      if (i.mode != AddrMode::Offset) set_reg(i.rn, base + i.offset);
      break;
    }
    case Op::Str: {
      uint64_t base = reg(i.rn);
      uint64_t addr = base + (i.mode == AddrMode::PostIndex ? 0 : i.offset);
      if (auto v = mem_access(AccessKind::Write, AccessVia::Regular, addr, 8,
                              nullptr, x_[i.rd])) {
        fault(*v, "store at " + hex(addr));
        return;
      }
      record("store", addr, x_[i.rd], "str");
      if (i.mode != AddrMode::Offset) set_reg(i.rn, base + i.offset);
      break;
    }
    case Op::Ldtr: {
      uint64_t addr = x_[i.rn] + i.offset;
      uint64_t value = 0;
      if (auto v = mem_access(AccessKind::Read, AccessVia::Lsu, addr, 8,
                              &value, 0)) {
        fault(*v, "unprivileged load at " + hex(addr));
        return;
      }
      record("lsu-load", addr, value, "ldtr");
      x_[i.rd] = value;
      break;
    }
    case Op::Sttr: {
      uint64_t addr = x_[i.rn] + i.offset;
      if (auto v = mem_access(AccessKind::Write, AccessVia::Lsu, addr, 8,
                              nullptr, x_[i.rd])) {
        fault(*v, "unprivileged store at " + hex(addr));
        return;
      }
      record("store", addr, x_[i.rd], "sttr");
      break;
    }
    case Op::Ldp:
    case Op::Stp: {
      uint64_t base = reg(i.rn);
      uint64_t addr = base + (i.mode == AddrMode::PostIndex ? 0 : i.offset);
      if (i.op == Op::Ldp) {
        uint64_t v1 = 0, v2 = 0;
        if (auto v = mem_access(AccessKind::Read, AccessVia::Regular, addr, 8,
                                &v1, 0)) {
          fault(*v, "load at " + hex(addr));
          return;
        }
        if (auto v = mem_access(AccessKind::Read, AccessVia::Regular, addr + 8,
                                8, &v2, 0)) {
          fault(*v, "load at " + hex(addr + 8));
          return;
        }
        x_[i.rd] = v1;
        x_[i.rt2] = v2;
      } else {
        if (auto v = mem_access(AccessKind::Write, AccessVia::Regular, addr, 8,
                                nullptr, x_[i.rd])) {
          fault(*v, "store at " + hex(addr));
          return;
        }
        if (auto v = mem_access(AccessKind::Write, AccessVia::Regular,
                                addr + 8, 8, nullptr, x_[i.rt2])) {
          fault(*v, "store at " + hex(addr + 8));
          return;
        }
        record("store", addr, x_[i.rd], "stp");
        record("store", addr + 8, x_[i.rt2], "stp");
      }
      if (i.mode != AddrMode::Offset) set_reg(i.rn, base + i.offset);
      break;
    }
    case Op::B:
      next = resolve(i.label);
      break;
    case Op::BCond:
      if (eval_cond(i.cond)) next = resolve(i.label);
      break;
    case Op::Bl:
      x_[kRegLr] = pc_ + 4;
      next = resolve(i.label);
      record("call", next, pc_ + 4, i.label);
      break;
    case Op::Blr:
      x_[kRegLr] = pc_ + 4;
      next = x_[i.rn];
      record("call", next, pc_ + 4, "blr");
      break;
    case Op::BrTable:
    case Op::BrTail:
    case Op::BrUncon:
      next = x_[i.rn];
      record("jump", next);
      break;
    case Op::Ret:
      next = x_[i.rn];
      record("ret", next);
      break;
    case Op::Svc:
      if (i.imm == 0) {
        status_ = RunStatus::Exited;
        exit_code_ = static_cast<int64_t>(x_[0]);
        record("exit", x_[0]);
        return;
      }
      if (i.imm == 1) record("svc-write", x_[0]);
      break;
    case Op::Brk:
      status_ = RunStatus::Trapped;
      trap_imm_ = i.imm;
      record("trap", i.imm);
      return;
    case Op::Word: {
      InstrClass c = decode(static_cast<uint32_t>(i.imm));
      if (c.kind != InstrKind::Other && c.kind != InstrKind::BtiLabel) {
        fault(Verdict::deny(FaultReason::NotMapped),
              "raw word executes as " + c.to_string() +
                  "; model treats stray system instructions as undefined");
        return;
      }
      break;
    }
  }
  pc_ = next;
}

RunStatus Machine::run(uint64_t fuel) {
  for (uint64_t n = 0; n < fuel && status_ == RunStatus::Running; ++n) step();
  if (status_ == RunStatus::Running) status_ = RunStatus::FuelExhausted;
  return status_;
}

RunStatus Machine::run_until(std::string_view event_kind, uint64_t fuel) {
  for (uint64_t n = 0; n < fuel && status_ == RunStatus::Running; ++n) {
    size_t before = trace_.size();
    step();
    for (size_t k = before; k < trace_.size(); ++k)
      if (trace_[k].kind == event_kind) return status_;
  }
  if (status_ == RunStatus::Running) status_ = RunStatus::FuelExhausted;
  return status_;
}

Verdict Machine::attacker_write(uint64_t addr,
                                std::span<const uint8_t> bytes) {
  const Region* r = layout_.region_at(addr);
  if (!r || addr + bytes.size() > r->end()) {
    Verdict v = Verdict::deny(FaultReason::NotMapped);
    fault(v, "attacker write at " + hex(addr));
    return v;
  }
  Verdict v = region_check(sec_, *r, AccessKind::Write, AccessVia::Regular);
  if (!v.allow) {
    fault(v, "attacker write at " + hex(addr));
    return v;
  }
  std::vector<uint8_t>& m = mem_[r->name];
  std::copy(bytes.begin(), bytes.end(), m.begin() + (addr - r->base));
  record("attack-write", addr, bytes.size());
  return v;
}

Verdict Machine::attacker_read(uint64_t addr, size_t len,
                               std::vector<uint8_t>* out) {
  const Region* r = layout_.region_at(addr);
  if (!r || addr + len > r->end()) {
    Verdict v = Verdict::deny(FaultReason::NotMapped);
    fault(v, "attacker read at " + hex(addr));
    return v;
  }
  Verdict v = region_check(sec_, *r, AccessKind::Read, AccessVia::Regular);
  if (!v.allow) {
    fault(v, "attacker read at " + hex(addr));
    return v;
  }
  if (out) {
    const std::vector<uint8_t>& m = mem_.at(r->name);
    out->assign(m.begin() + (addr - r->base),
                m.begin() + (addr - r->base) + len);
  }
  record("attack-read", addr, len);
  return v;
}

void Machine::attacker_setreg(RegIdx r, uint64_t value) {
  set_reg(r, value);
  record("attack-setreg", r, value);
}

RunResult Machine::result() const {
  RunResult res;
  res.status = status_;
  res.exit_code = exit_code_;
  res.fault = fault_;
  res.fault_pc = fault_pc_;
  res.trap_imm = trap_imm_;
  res.trace = trace_;
  res.pc_entered_upper = pc_entered_upper_;
  return res;
}

std::string TraceEvent::to_string() const {
  std::ostringstream os;
  os << step << " " << kind << " pc=" << hex(pc) << " a=" << hex(a)
     << " b=" << hex(b);
  if (!detail.empty()) os << " " << detail;
  return os.str();
}

RunResult run_program(const Program& program, const MemoryLayout& layout,
                      std::string_view entry, uint64_t fuel,
                      bool allow_unverified) {
  std::vector<Violation> violations = verify(program, VerifyPolicy::full());
  if (!violations.empty() && !allow_unverified)
    throw ToolError("program fails verification (" +
                    violations.front().to_string() +
                    "); pass allow_unverified for negative demonstrations");
  Machine m(program, layout);
  m.set_entry(entry);
  m.run(fuel);
  return m.result();
}

AttackScript AttackScript::parse(std::string_view text) {
  AttackScript script;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    AttackStep step;
    auto parse_hex = [&](const std::string& s) -> uint64_t {
      uint64_t v = 0;
      std::string_view sv = s;
      if (sv.starts_with("0x") || sv.starts_with("0X")) sv.remove_prefix(2);
      auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v, 16);
      if (ec != std::errc() || p != sv.data() + sv.size())
        throw ToolError("attack script line " + std::to_string(lineno) +
                        ": bad hex value '" + s + "'");
      return v;
    };
    if (word == "write") {
      std::string addr, bytes;
      if (!(ls >> addr >> bytes))
        throw ToolError("attack script line " + std::to_string(lineno) +
                        ": write <hex-addr> <hex-bytes>");
      step.kind = AttackStep::Kind::Write;
      step.addr = parse_hex(addr);
      if (bytes.starts_with("0x") || bytes.starts_with("0X"))
        bytes = bytes.substr(2);
      if (bytes.empty() || bytes.size() % 2)
        throw ToolError("attack script line " + std::to_string(lineno) +
                        ": byte string must have even length");
      for (size_t k = 0; k < bytes.size(); k += 2)
        step.bytes.push_back(
            static_cast<uint8_t>(parse_hex(bytes.substr(k, 2))));
    } else if (word == "read") {
      std::string addr;
      size_t len;
      if (!(ls >> addr >> len))
        throw ToolError("attack script line " + std::to_string(lineno) +
                        ": read <hex-addr> <len>");
      step.kind = AttackStep::Kind::Read;
      step.addr = parse_hex(addr);
      step.len = len;
    } else if (word == "setreg") {
      std::string reg, value;
      if (!(ls >> reg >> value) || reg.size() < 2 ||
          (reg[0] != 'x' && reg[0] != 'X'))
        throw ToolError("attack script line " + std::to_string(lineno) +
                        ": setreg x<N> <hex>");
      step.kind = AttackStep::Kind::SetReg;
      step.reg = static_cast<RegIdx>(std::stoi(reg.substr(1)));
      step.value = parse_hex(value);
    } else if (word == "resume-until") {
      if (!(ls >> step.event) ||
          (step.event != "ret" && step.event != "call" &&
           step.event != "fault" && step.event != "exit"))
        throw ToolError("attack script line " + std::to_string(lineno) +
                        ": resume-until <ret|call|fault|exit>");
      step.kind = AttackStep::Kind::ResumeUntil;
    } else {
      throw ToolError("attack script line " + std::to_string(lineno) +
                      ": unknown step '" + word + "'");
    }
    script.steps.push_back(std::move(step));
  }
  return script;
}

AttackScript AttackScript::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ToolError("cannot open attack script: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Outcome::to_string() const {
  switch (result) {
    case OutcomeKind::Neutralized: return "neutralized: " + reason;
    case OutcomeKind::Hijacked: return "hijacked: pc=" + hex(hijacked_pc);
    case OutcomeKind::Faulted:
      return "faulted: " + (fault ? fault->to_string() : "undefined");
  }
  return "?";
}

Outcome run_attack(const Program& program, const MemoryLayout& layout,
                   const AttackScript& script, std::string_view entry,
                   uint64_t fuel) {
  std::vector<Violation> violations = verify(program, VerifyPolicy::full());
  if (!violations.empty())
    throw ToolError("attack runs need a verified program (" +
                    violations.front().to_string() + ")");

  Machine m(program, layout);
  m.set_entry(entry);

  std::set<uint64_t> attacker_targets;
  bool wrote_task_memory = false;
  uint64_t budget = fuel;

  auto hijacked = [&]() -> bool {
    return m.status() == RunStatus::Running &&
           attacker_targets.contains(m.pc());
  };

  auto make_outcome = [&]() -> Outcome {
    Outcome out;
    out.trace = m.trace();
    if (hijacked()) {
      out.result = OutcomeKind::Hijacked;
      out.hijacked_pc = m.pc();
      return out;
    }
    switch (m.status()) {
      case RunStatus::Faulted:
        out.result = OutcomeKind::Faulted;
        out.fault = m.result().fault;
        break;
      case RunStatus::Trapped:
        out.result = OutcomeKind::Neutralized;
        out.reason = m.result().trap_imm == kCfiTrapBrkImm
                         ? "cfi trap"
                         : "trap #" + std::to_string(m.result().trap_imm);
        break;
      case RunStatus::Exited:
        out.result = OutcomeKind::Neutralized;
        out.reason = wrote_task_memory ? "return uses shadow copy"
                                       : "no effect";
        break;
      case RunStatus::FuelExhausted:
        throw ToolError("fuel exhausted during attack run");
      case RunStatus::Running:
        out.result = OutcomeKind::Neutralized;
        out.reason = "attack script exhausted";
        break;
    }
    return out;
  };

  for (const AttackStep& step : script.steps) {
    if (m.status() != RunStatus::Running) break;
    switch (step.kind) {
      case AttackStep::Kind::Write: {
        if (step.bytes.size() == 8)
          attacker_targets.insert(load_le(step.bytes));
        const Region* r = layout.region_at(step.addr);
        if (r && r->owner == TaskKind::Elevated &&
            r->role == RegionRole::TaskData)
          wrote_task_memory = true;
        m.attacker_write(step.addr, step.bytes);
        break;
      }
      case AttackStep::Kind::Read:
        m.attacker_read(step.addr, step.len);
        break;
      case AttackStep::Kind::SetReg:
        attacker_targets.insert(step.value);
        m.attacker_setreg(step.reg, step.value);
        break;
      case AttackStep::Kind::ResumeUntil: {
        const bool to_terminal =
            step.event == "exit" || step.event == "fault";
        while (m.status() == RunStatus::Running && budget > 0) {
          size_t before = m.trace().size();
          m.step();
          --budget;
          if (hijacked()) return make_outcome();
          if (!to_terminal) {
            bool seen = false;
            for (size_t k = before; k < m.trace().size(); ++k)
              if (m.trace()[k].kind == step.event) seen = true;
            if (seen) break;
          }
        }
        if (budget == 0 && m.status() == RunStatus::Running)
          throw ToolError("fuel exhausted during attack run");
        break;
      }
    }
    if (hijacked()) return make_outcome();
  }
  return make_outcome();
}

UnwindResult longjmp_unwind(Machine& m, uint64_t target_ra,
                            uint64_t saved_x28) {
  const ShadowSpan& span = m.shadow_span();
  if (saved_x28 < span.base || saved_x28 > span.base + span.size)
    throw ToolError("saved shadow stack pointer lies outside the shadow span");

  uint64_t candidate = m.shadow_ptr();
  for (;;) {
    uint64_t slot = candidate - 8;
    const Region* r = m.layout().region_at(slot);
    if (!r || !r->mapped ||
        !region_check(m.sec(), *r, AccessKind::Read, AccessVia::Lsu).allow)
      return {true, 0};  // reached the low guard: shadow stack underflow
    uint64_t stored = 0;
    if (!m.peek_u64(slot, &stored)) return {true, 0};
    if (stored == target_ra) {
      m.set_shadow_ptr(candidate);
      return {false, candidate};
    }
    candidate -= 8;
  }
}

}  // namespace cfprot
