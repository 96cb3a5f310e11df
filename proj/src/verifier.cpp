#include "cfprot/verifier.hpp"

#include <optional>

namespace cfprot {

namespace {

bool is_push_sttr(const Instr& i) {
  return i.op == Op::Sttr && i.rd == kRegLr && i.rn == kRegShadow &&
         i.offset == 0;
}

bool is_push_add(const Instr& i) {
  return i.op == Op::AddImm && i.rd == kRegShadow && i.rn == kRegShadow &&
         i.imm == 8;
}

bool is_pop_sub(const Instr& i) {
  return i.op == Op::SubImm && i.rd == kRegShadow && i.rn == kRegShadow &&
         i.imm == 8;
}

bool is_pop_ldtr(const Instr& i) {
  return i.op == Op::Ldtr && i.rd == kRegLr && i.rn == kRegShadow &&
         i.offset == 0;
}

bool is_mask(const Instr& i, RegIdx reg) {
  return i.op == Op::AndImm && i.rd == reg && i.rn == reg &&
         i.imm == kTopBitMask;
}

bool is_exit_terminator(const Instr& i) {
  return i.op == Op::Ret || i.op == Op::BrTail;
}

class Checker {
 public:
  Checker(const Program& p, const VerifyPolicy& policy)
      : program_(p), policy_(policy) {}

  std::vector<Violation> run() {
    for (const Function& f : program_.functions) {
      check_shadow_stack(f);
      check_lsu(f);
      check_transfers(f);
      if (policy_.mode == VerifyPolicy::Mode::Full) check_labels(f);
      check_words(f);
    }
    return std::move(violations_);
  }

 private:
  void add(Rule rule, const Function& f, const Block& b, size_t idx,
           std::string msg) {
    violations_.push_back({rule, f.name, b.label, idx, std::move(msg)});
  }

  // V1 + V2.
  void check_shadow_stack(const Function& f) {
    if (f.blocks.empty()) return;
    const bool spills = f.spills_lr();
    const Block& entry = f.blocks.front();

    // Locate the push pair in the entry block.
    size_t push_at = entry.instrs.size();
    for (size_t k = 0; k + 1 < entry.instrs.size(); ++k) {
      if (is_push_sttr(entry.instrs[k]) && is_push_add(entry.instrs[k + 1])) {
        push_at = k;
        break;
      }
    }
    if (spills && push_at == entry.instrs.size())
      add(Rule::V1, f, entry, 0,
          "LR-spilling prologue lacks the shadow-stack push pair "
          "(sttr x30, [x28]; add x28, x28, #8)");

    // Every exit block of a spilling function must end with the pop pair,
    // optionally followed by a CFI check (tail calls), the mask, and the
    // terminator.
    for (const Block& b : f.blocks) {
      if (b.instrs.empty() || !is_exit_terminator(b.instrs.back())) continue;
      if (!spills) continue;
      size_t term = b.instrs.size() - 1;
      size_t before = term;
      if (before > 0 && is_mask(b.instrs[before - 1], b.instrs[term].rn))
        --before;
      if (before >= 5 && has_check_ending_at(b, before, b.instrs[term].rn))
        before -= 5;
      if (before < 2 || !is_pop_sub(b.instrs[before - 2]) ||
          !is_pop_ldtr(b.instrs[before - 1]))
        add(Rule::V2, f, b, term,
            "exit path lacks the shadow-stack pop pair "
            "(sub x28, x28, #8; ldtr x30, [x28])");
    }

    // X28 hygiene: the only writes are the located pairs.
    for (size_t bi = 0; bi < f.blocks.size(); ++bi) {
      const Block& b = f.blocks[bi];
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        bool writes_x28 = false;
        for (RegIdx r : i.written_regs())
          if (r == kRegShadow) writes_x28 = true;
        if (!writes_x28) continue;
        const bool allowed_push =
            spills && bi == 0 && k == push_at + 1 && is_push_add(i);
        const bool allowed_pop =
            spills && is_pop_sub(i) && k + 1 < b.instrs.size() &&
            is_pop_ldtr(b.instrs[k + 1]) &&
            is_exit_terminator(b.instrs.back());
        if (!allowed_push && !allowed_pop)
          add(Rule::V2, f, b, k,
              "write to the reserved shadow stack pointer X28");
      }
    }

    // The prologue must not be re-enterable: no branch may target the entry
    // label, or the push would repeat.
    for (const Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        bool to_entry = false;
        if ((i.op == Op::B || i.op == Op::BCond) && i.label == entry.label &&
            f.find_block(i.label))
          to_entry = true;
        if (i.op == Op::BrTable)
          for (const std::string& t : i.targets)
            if (t == entry.label) to_entry = true;
        if (to_entry && spills)
          add(Rule::V2, f, b, k, "branch re-enters the prologue");
      }
    }
  }

  // V3: LSU instructions must be exactly the vetted patterns, in place.
  void check_lsu(const Function& f) {
    for (const Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        if (i.op == Op::Sttr) {
          bool vetted = is_push_sttr(i) && k + 1 < b.instrs.size() &&
                        is_push_add(b.instrs[k + 1]);
          if (!vetted)
            add(Rule::V3, f, b, k,
                "unprivileged store outside the vetted shadow-stack push");
        } else if (i.op == Op::Ldtr) {
          bool vetted = is_pop_ldtr(i) && k > 0 && is_pop_sub(b.instrs[k - 1]);
          if (!vetted)
            add(Rule::V3, f, b, k,
                "unprivileged load outside the vetted shadow-stack pop");
        }
      }
    }
  }

  // V4: checks and masks in front of control transfers.
  void check_transfers(const Function& f) {
    const bool full = policy_.mode == VerifyPolicy::Mode::Full;
    for (const Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        if (i.op == Op::Ret) {
          if (k == 0 || !is_mask(b.instrs[k - 1], i.rn))
            add(Rule::V4, f, b, k, "return without a bit-masking instruction");
        } else if (i.op == Op::Blr || i.op == Op::BrTail ||
                   i.op == Op::BrTable) {
          if (!full) continue;
          uint32_t want = i.op == Op::BrTable ? kBtiJWord : kBtiCWord;
          if (k == 0 || !is_mask(b.instrs[k - 1], i.rn)) {
            add(Rule::V4, f, b, k,
                "indirect transfer without a bit-masking instruction");
            continue;
          }
          if (!has_check_ending_at(b, k - 1, i.rn, want))
            add(Rule::V4, f, b, k,
                "indirect transfer without a CFI label check");
        } else if (i.op == Op::BrUncon && full) {
          add(Rule::V4, f, b, k, "unconstrained indirect jump");
        }
      }
    }
  }

  // The five-instruction probe occupying positions [end-5, end).
  bool has_check_ending_at(const Block& b, size_t end, RegIdx target,
                           std::optional<uint32_t> want = std::nullopt) const {
    if (end < 5) return false;
    const Instr& ldr = b.instrs[end - 5];
    const Instr& movz = b.instrs[end - 4];
    const Instr& movk = b.instrs[end - 3];
    const Instr& cmp = b.instrs[end - 2];
    const Instr& bne = b.instrs[end - 1];
    bool shape = ldr.op == Op::LdrW && ldr.rd == kRegScratch0 &&
                 ldr.rn == target && ldr.offset == 0 && movz.op == Op::Movz &&
                 movz.rd == kRegScratch1 && movz.shift == 0 &&
                 movk.op == Op::Movk && movk.rd == kRegScratch1 &&
                 movk.shift == 16 && cmp.op == Op::CmpReg &&
                 cmp.rn == kRegScratch0 && cmp.rm == kRegScratch1 &&
                 bne.op == Op::BCond && bne.cond == Cond::Ne &&
                 bne.label == policy_.trap_symbol;
    if (!shape) return false;
    if (want && (movz.imm != (*want & 0xFFFF) || movk.imm != (*want >> 16)))
      return false;
    return true;
  }

  // V5: landing pads.
  void check_labels(const Function& f) {
    if (f.blocks.empty()) return;
    const Block& entry = f.blocks.front();
    if (entry.instrs.empty() || entry.instrs.front().op != Op::Bti ||
        entry.instrs.front().bti != BtiKind::C)
      add(Rule::V5, f, entry, 0, "function does not start with bti c");
    for (const Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        if (i.op != Op::BrTable) continue;
        for (const std::string& t : i.targets) {
          const Block* target = f.find_block(t);
          if (!target) {
            add(Rule::V5, f, b, k,
                "jump target '" + t + "' is outside the function");
            continue;
          }
          if (target->instrs.empty() ||
              target->instrs.front().op != Op::Bti ||
              (target->instrs.front().bti != BtiKind::J &&
               target->instrs.front().bti != BtiKind::JC))
            add(Rule::V5, f, *target, 0,
                "jump target '" + t + "' does not start with bti j");
        }
      }
    }
  }

  // V6: raw words must not hide privileged instructions.
  void check_words(const Function& f) {
    for (const Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        if (i.op != Op::Word) continue;
        InstrClass c = decode(static_cast<uint32_t>(i.imm));
        if (is_forbidden(c, policy_.allowlist))
          add(Rule::V6, f, b, k,
              "forbidden privileged instruction word: " + c.to_string());
      }
    }
  }

  const Program& program_;
  const VerifyPolicy& policy_;
  std::vector<Violation> violations_;
};

}  // namespace

std::vector<Violation> verify(const Program& p, const VerifyPolicy& policy) {
  return Checker(p, policy).run();
}

const char* rule_name(Rule r) {
  switch (r) {
    case Rule::V1: return "V1";
    case Rule::V2: return "V2";
    case Rule::V3: return "V3";
    case Rule::V4: return "V4";
    case Rule::V5: return "V5";
    case Rule::V6: return "V6";
  }
  return "?";
}

std::string Violation::to_string() const {
  return std::string(rule_name(rule)) + " " + function + ":" + block + ":" +
         std::to_string(instr_index) + " " + message;
}

}  // namespace cfprot
