#include "cfprot/rewriter.hpp"

#include <algorithm>

#include "cfprot/errors.hpp"

namespace cfprot {

namespace {

bool is_indirect_transfer(const Instr& i) {
  return i.op == Op::Blr || i.op == Op::BrTable || i.op == Op::BrTail ||
         i.op == Op::BrUncon;
}

bool is_exit_terminator(const Instr& i) {
  return i.op == Op::Ret || i.op == Op::BrTail;
}

bool is_lr_spill(const Instr& i) {
  return (i.op == Op::Str && i.rd == kRegLr) ||
         (i.op == Op::Stp && (i.rd == kRegLr || i.rt2 == kRegLr));
}

bool is_lr_reload(const Instr& i) {
  return (i.op == Op::Ldr && i.rd == kRegLr) ||
         (i.op == Op::Ldp && (i.rd == kRegLr || i.rt2 == kRegLr));
}

// Rewrites an epilogue LR reload so everything except the LR slot keeps its
// effect. Returns the replacement instructions (possibly none).
std::vector<Instr> drop_lr_from_reload(const Instr& i,
                                       const std::string& fname) {
  if (i.op == Op::Ldr) {
    switch (i.mode) {
      case AddrMode::Offset:
        return {};  // pure load of LR; nothing else to keep
      case AddrMode::PostIndex:
      case AddrMode::PreIndex:
        // Keep the base register update only.
        if (i.offset >= 0)
          return {ins::add_imm(i.rn, i.rn, static_cast<uint32_t>(i.offset))};
        return {ins::sub_imm(i.rn, i.rn, static_cast<uint32_t>(-i.offset))};
    }
  }
  // Pair load: keep the partner register's load and the writeback.
  const bool lr_is_second = i.rt2 == kRegLr;
  const RegIdx partner = lr_is_second ? i.rd : i.rt2;
  switch (i.mode) {
    case AddrMode::Offset: {
      int32_t slot = lr_is_second ? i.offset : i.offset + 8;
      return {ins::ldr(partner, i.rn, slot)};
    }
    case AddrMode::PostIndex: {
      if (!lr_is_second)
        throw RewriteError(RewriteError::Kind::UnsupportedEpilogue,
                           fname + ": ldp with LR first and writeback");
      // ldp xP, x30, [rn], #off  ->  ldr xP, [rn], #off
      return {ins::ldr(partner, i.rn, i.offset, AddrMode::PostIndex)};
    }
    case AddrMode::PreIndex: {
      if (!lr_is_second)
        throw RewriteError(RewriteError::Kind::UnsupportedEpilogue,
                           fname + ": ldp with LR first and writeback");
      return {ins::ldr(partner, i.rn, i.offset, AddrMode::PreIndex)};
    }
  }
  return {};
}

// Number of trailing instructions (before the terminator) that belong to a
// CFI check sequence, so later passes can insert ahead of it.
size_t check_len_before_terminator(const Block& b) {
  if (b.instrs.size() < 6) return 0;
  size_t term = b.instrs.size() - 1;
  const Instr& ldr = b.instrs[term - 5];
  const Instr& movz = b.instrs[term - 4];
  const Instr& movk = b.instrs[term - 3];
  const Instr& cmp = b.instrs[term - 2];
  const Instr& bne = b.instrs[term - 1];
  bool match = ldr.op == Op::LdrW && ldr.rd == kRegScratch0 &&
               movz.op == Op::Movz && movz.rd == kRegScratch1 &&
               movk.op == Op::Movk && movk.rd == kRegScratch1 &&
               cmp.op == Op::CmpReg && cmp.rn == kRegScratch0 &&
               cmp.rm == kRegScratch1 && bne.op == Op::BCond &&
               bne.cond == Cond::Ne;
  return match ? 5 : 0;
}

void insert_check_sequence(std::vector<Instr>& instrs, size_t pos, RegIdx target,
                           uint32_t required_word,
                           const std::string& trap_symbol) {
  std::vector<Instr> seq;
  seq.push_back(ins::ldr_w(kRegScratch0, target));
  seq.push_back(ins::movz(kRegScratch1, required_word & 0xFFFF));
  seq.push_back(ins::movk(kRegScratch1, required_word >> 16, 16));
  seq.push_back(ins::cmp_reg(kRegScratch0, kRegScratch1));
  seq.push_back(ins::b_cond(Cond::Ne, trap_symbol));
  instrs.insert(instrs.begin() + pos, seq.begin(), seq.end());
}

bool looks_instrumented(const Program& p, const RewriteOptions& opts) {
  for (const Function& f : p.functions) {
    if (f.blocks.empty()) continue;
    const std::vector<Instr>& entry = f.blocks.front().instrs;
    if (opts.enable_cfi && !entry.empty() && entry.front().op == Op::Bti)
      return true;
    if (opts.enable_ss) {
      for (const Block& b : f.blocks)
        for (const Instr& i : b.instrs)
          if (i.op == Op::Sttr && i.rd == kRegLr && i.rn == kRegShadow)
            return true;
    }
  }
  return false;
}

}  // namespace

Function apply_shadow_stack(const Function& f) {
  for (const Block& b : f.blocks)
    for (const Instr& i : b.instrs)
      for (RegIdx r : i.written_regs())
        if (r == kRegShadow)
          throw RewriteError(RewriteError::Kind::X28Clobbered,
                             f.name + ": body writes the reserved shadow "
                             "stack pointer X28");
  if (!f.spills_lr()) return f;

  Function out = f;

  // Prologue: push LR to the shadow stack right before it is spilled to the
  // regular stack.
  std::vector<Instr>& entry = out.blocks.front().instrs;
  auto spill = std::find_if(entry.begin(), entry.end(), is_lr_spill);
  std::vector<Instr> push = {ins::sttr(kRegLr, kRegShadow),
                             ins::add_imm(kRegShadow, kRegShadow, 8)};
  entry.insert(spill, push.begin(), push.end());

  // Epilogues: drop the regular-stack LR reload and pop from the shadow
  // stack instead, immediately before the exit.
  for (Block& b : out.blocks) {
    if (b.instrs.empty() || !is_exit_terminator(b.instrs.back())) continue;
    auto reload = std::find_if(b.instrs.begin(), b.instrs.end(), is_lr_reload);
    if (reload != b.instrs.end()) {
      std::vector<Instr> keep = drop_lr_from_reload(*reload, f.name);
      size_t at = reload - b.instrs.begin();
      b.instrs.erase(b.instrs.begin() + at);
      b.instrs.insert(b.instrs.begin() + at, keep.begin(), keep.end());
    }
    std::vector<Instr> pop = {ins::sub_imm(kRegShadow, kRegShadow, 8),
                              ins::ldtr(kRegLr, kRegShadow)};
    size_t back = 1 + check_len_before_terminator(b);
    b.instrs.insert(b.instrs.end() - back, pop.begin(), pop.end());
  }
  return out;
}

Program apply_cfi(const Program& p, const std::string& trap_symbol) {
  Program out = p;

  for (const Function& f : out.functions)
    for (const Block& b : f.blocks)
      for (const Instr& i : b.instrs) {
        if (i.op == Op::BrUncon)
          throw RewriteError(RewriteError::Kind::UnconstrainedIndirectJump,
                             f.name + ": indirect jump without a declared "
                             "target set");
        if (is_indirect_transfer(i) &&
            (i.rn == kRegScratch0 || i.rn == kRegScratch1))
          throw RewriteError(RewriteError::Kind::ScratchRegClash,
                             f.name + ": indirect transfer through the "
                             "x16/x17 check temporaries");
        if (i.op == Op::BrTable)
          for (const std::string& t : i.targets)
            if (t == f.blocks.front().label)
              throw RewriteError(RewriteError::Kind::JumpToEntry,
                                 f.name + ": indirect jump targets the entry "
                                 "block");
      }

  if (!out.find_function(trap_symbol)) {
    Function trap;
    trap.name = trap_symbol;
    trap.blocks.push_back(Block{"entry", {ins::brk(kCfiTrapBrkImm)}});
    out.functions.push_back(std::move(trap));
  }

  // Landing pads: BTI C at every function entry, BTI J at every declared
  // jump target.
  for (Function& f : out.functions)
    f.blocks.front().instrs.insert(f.blocks.front().instrs.begin(),
                                   ins::bti(BtiKind::C));
  for (Function& f : out.functions) {
    for (Block& b : f.blocks) {
      for (const Instr& i : b.instrs) {
        if (i.op != Op::BrTable) continue;
        for (const std::string& t : i.targets) {
          for (Block& target : f.blocks) {
            if (target.label != t) continue;
            if (target.instrs.empty() || target.instrs.front().op != Op::Bti)
              target.instrs.insert(target.instrs.begin(),
                                   ins::bti(BtiKind::J));
          }
        }
      }
    }
  }

  // Checks before every indirect call and jump.
  for (Function& f : out.functions) {
    for (Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        if (i.op == Op::Blr || i.op == Op::BrTail) {
          insert_check_sequence(b.instrs, k, i.rn, kBtiCWord, trap_symbol);
          k += 5;
        } else if (i.op == Op::BrTable) {
          insert_check_sequence(b.instrs, k, i.rn, kBtiJWord, trap_symbol);
          k += 5;
        }
      }
    }
  }
  return out;
}

Program apply_bitmask(const Program& p) {
  Program out = p;
  for (Function& f : out.functions) {
    for (Block& b : f.blocks) {
      for (size_t k = 0; k < b.instrs.size(); ++k) {
        const Instr& i = b.instrs[k];
        if (i.op == Op::Ret || is_indirect_transfer(i)) {
          b.instrs.insert(b.instrs.begin() + k,
                          ins::and_imm(i.rn, i.rn, kTopBitMask));
          ++k;
        }
      }
    }
  }
  return out;
}

Program rewrite(const Program& p, const RewriteOptions& opts) {
  if (!opts.enable_ss && !opts.enable_cfi && !opts.enable_mask) return p;

  if (looks_instrumented(p, opts))
    throw RewriteError(RewriteError::Kind::AlreadyInstrumented,
                       "program already carries instrumentation");

  if (opts.enable_mask && !opts.enable_cfi) {
    for (const Function& f : p.functions)
      for (const Block& b : f.blocks)
        for (const Instr& i : b.instrs)
          if (is_indirect_transfer(i))
            throw RewriteError(
                RewriteError::Kind::MaskRequiresCfi,
                f.name + ": bit-masking an indirect transfer is bypassable "
                "without a CFI check in front of it");
  }

  Program out = p;
  if (opts.enable_cfi) out = apply_cfi(out, opts.trap_symbol);
  if (opts.enable_ss) {
    for (Function& f : out.functions) f = apply_shadow_stack(f);
  }
  if (opts.enable_mask) out = apply_bitmask(out);
  return out;
}

}  // namespace cfprot
