#include "support.hpp"

namespace cfprot::test {

namespace {

// Register discipline for generated code: x0..x4 are scratch, x5/x9 hold
// code pointers, x19/x20 are the callee-saved pair (saved when used).
// x16/x17 (check temporaries) and x28 (shadow stack pointer) stay untouched.

class Gen {
 public:
  explicit Gen(uint64_t seed) : rng_(seed) {}

  Program run() {
    Program p;
    p.source_name = "<generated>";

    int leaves = 2 + pick(3);
    for (int i = 0; i < leaves; ++i)
      p.functions.push_back(make_leaf("leaf" + std::to_string(i)));

    int middles = 1 + pick(3);
    for (int i = 0; i < middles; ++i)
      p.functions.push_back(
          make_middle("mid" + std::to_string(i), p, leaves, i));

    Function main_fn;
    main_fn.name = "main";
    Block b{"entry", {}};
    b.instrs.push_back(ins::str(kRegLr, kRegSp, -16, AddrMode::PreIndex));
    b.instrs.push_back(ins::movz(0, static_cast<uint16_t>(pick(100))));
    b.instrs.push_back(ins::bl("mid" + std::to_string(pick(middles))));
    b.instrs.push_back(ins::svc(0));
    main_fn.blocks.push_back(std::move(b));
    p.functions.push_back(std::move(main_fn));
    return p;
  }

 private:
  uint32_t pick(uint32_t n) { return rng_() % n; }

  Instr random_arith(RegIdx rd) {
    switch (pick(5)) {
      case 0: return ins::add_imm(rd, rd, 1 + pick(64));
      case 1: return ins::sub_imm(rd, rd, 1 + pick(64));
      case 2: return ins::movz(rd, static_cast<uint16_t>(pick(1000)));
      case 3: return ins::and_imm(rd, rd, 0xFF);
      default: {
        Instr i = ins::movz(3, static_cast<uint16_t>(1 + pick(4)));
        return i;  // paired with a mul below when it lands on a move
      }
    }
  }

  Function make_leaf(const std::string& name) {
    Function f;
    f.name = name;
    f.address_taken = pick(2) == 0;
    Block b{"entry", {}};
    int n = 1 + pick(4);
    for (int i = 0; i < n; ++i) b.instrs.push_back(random_arith(0));
    if (pick(3) == 0) {
      b.instrs.push_back(ins::movz(3, static_cast<uint16_t>(1 + pick(3))));
      b.instrs.push_back(ins::mul(0, 0, 3));
    }
    b.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(b));
    return f;
  }

  // Middle functions only call leaves or lower-indexed middles, so call
  // graphs stay acyclic and every generated program terminates.
  std::string callee(const Program& p, int leaves, int mid_index) {
    if (mid_index > 0 && pick(3) == 0)
      return "mid" + std::to_string(pick(mid_index));
    (void)p;
    return "leaf" + std::to_string(pick(leaves));
  }

  std::string some_address_taken_leaf(const Program& p, int leaves) {
    for (int i = 0; i < leaves; ++i)
      if (p.functions[i].address_taken) return p.functions[i].name;
    return p.functions[0].name;  // caller fixes the attribute
  }

  Function make_middle(const std::string& name, Program& p, int leaves,
                       int mid_index) {
    switch (pick(5)) {
      case 0: return middle_plain(name, p, leaves, mid_index);
      case 1: return middle_two_calls(name, p, leaves, mid_index);
      case 2: return middle_loop(name, p, leaves, mid_index);
      case 3: return middle_two_returns(name, p, leaves, mid_index);
      default: return middle_indirect(name, p, leaves);
    }
  }

  Function middle_plain(const std::string& name, const Program& p, int leaves,
                        int mid_index) {
    Function f;
    f.name = name;
    Block b{"entry", {}};
    b.instrs.push_back(ins::str(kRegLr, kRegSp, -16, AddrMode::PreIndex));
    b.instrs.push_back(random_arith(0));
    b.instrs.push_back(ins::bl(callee(p, leaves, mid_index)));
    b.instrs.push_back(random_arith(0));
    b.instrs.push_back(ins::ldr(kRegLr, kRegSp, 16, AddrMode::PostIndex));
    b.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(b));
    return f;
  }

  Function middle_two_calls(const std::string& name, const Program& p,
                            int leaves, int mid_index) {
    Function f;
    f.name = name;
    Block b{"entry", {}};
    Instr save_frame;
    save_frame.op = Op::Stp;
    save_frame.rd = 29;
    save_frame.rt2 = kRegLr;
    save_frame.rn = kRegSp;
    save_frame.offset = -16;
    save_frame.mode = AddrMode::PreIndex;
    b.instrs.push_back(save_frame);
    Instr save_pair = save_frame;
    save_pair.rd = 19;
    save_pair.rt2 = 20;
    b.instrs.push_back(save_pair);
    b.instrs.push_back(ins::mov_reg(19, 0));
    b.instrs.push_back(ins::bl(callee(p, leaves, mid_index)));
    b.instrs.push_back(ins::mov_reg(20, 0));
    b.instrs.push_back(ins::mov_reg(0, 19));
    b.instrs.push_back(ins::bl(callee(p, leaves, mid_index)));
    Instr sum;
    sum.op = Op::AddReg;
    sum.rd = 0;
    sum.rn = 0;
    sum.rm = 20;
    b.instrs.push_back(sum);
    Instr restore_pair;
    restore_pair.op = Op::Ldp;
    restore_pair.rd = 19;
    restore_pair.rt2 = 20;
    restore_pair.rn = kRegSp;
    restore_pair.offset = 16;
    restore_pair.mode = AddrMode::PostIndex;
    b.instrs.push_back(restore_pair);
    Instr restore_frame = restore_pair;
    restore_frame.rd = 29;
    restore_frame.rt2 = kRegLr;
    b.instrs.push_back(restore_frame);
    b.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(b));
    return f;
  }

  Function middle_loop(const std::string& name, const Program& p, int leaves,
                       int mid_index) {
    Function f;
    f.name = name;
    uint16_t bound = static_cast<uint16_t>(2 + pick(8));
    Block entry{"entry", {}};
    Instr save_frame;
    save_frame.op = Op::Stp;
    save_frame.rd = 29;
    save_frame.rt2 = kRegLr;
    save_frame.rn = kRegSp;
    save_frame.offset = -16;
    save_frame.mode = AddrMode::PreIndex;
    entry.instrs.push_back(save_frame);
    Instr save_pair = save_frame;
    save_pair.rd = 19;
    save_pair.rt2 = 20;
    entry.instrs.push_back(save_pair);
    entry.instrs.push_back(ins::movz(19, 0));
    entry.instrs.push_back(ins::movz(20, 0));
    f.blocks.push_back(std::move(entry));

    Block loop{"loop", {}};
    loop.instrs.push_back(Instr{});  // placeholder replaced below
    loop.instrs.back() = [&] {
      Instr c;
      c.op = Op::CmpImm;
      c.rn = 19;
      c.imm = bound;
      return c;
    }();
    loop.instrs.push_back(ins::b_cond(Cond::Hs, "done"));
    loop.instrs.push_back(ins::mov_reg(0, 19));
    loop.instrs.push_back(ins::bl(callee(p, leaves, mid_index)));
    Instr acc;
    acc.op = Op::AddReg;
    acc.rd = 20;
    acc.rn = 20;
    acc.rm = 0;
    loop.instrs.push_back(acc);
    loop.instrs.push_back(ins::add_imm(19, 19, 1));
    loop.instrs.push_back(ins::b("loop"));
    f.blocks.push_back(std::move(loop));

    Block done{"done", {}};
    done.instrs.push_back(ins::mov_reg(0, 20));
    Instr restore_pair;
    restore_pair.op = Op::Ldp;
    restore_pair.rd = 19;
    restore_pair.rt2 = 20;
    restore_pair.rn = kRegSp;
    restore_pair.offset = 16;
    restore_pair.mode = AddrMode::PostIndex;
    done.instrs.push_back(restore_pair);
    Instr restore_frame = restore_pair;
    restore_frame.rd = 29;
    restore_frame.rt2 = kRegLr;
    done.instrs.push_back(restore_frame);
    done.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(done));
    return f;
  }

  Function middle_two_returns(const std::string& name, const Program& p,
                              int leaves, int mid_index) {
    Function f;
    f.name = name;
    Block entry{"entry", {}};
    entry.instrs.push_back(ins::str(kRegLr, kRegSp, -16, AddrMode::PreIndex));
    entry.instrs.push_back(ins::bl(callee(p, leaves, mid_index)));
    Instr cmp;
    cmp.op = Op::CmpImm;
    cmp.rn = 0;
    cmp.imm = pick(200);
    entry.instrs.push_back(cmp);
    entry.instrs.push_back(ins::b_cond(Cond::Hs, "big"));
    entry.instrs.push_back(ins::add_imm(0, 0, 2));
    entry.instrs.push_back(ins::ldr(kRegLr, kRegSp, 16, AddrMode::PostIndex));
    entry.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(entry));

    Block big{"big", {}};
    big.instrs.push_back(ins::and_imm(0, 0, 0x3F));
    big.instrs.push_back(ins::ldr(kRegLr, kRegSp, 16, AddrMode::PostIndex));
    big.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(big));
    return f;
  }

  Function middle_indirect(const std::string& name, Program& p, int leaves) {
    Function f;
    f.name = name;
    std::string target = some_address_taken_leaf(p, leaves);
    for (Function& fn : p.functions)
      if (fn.name == target) fn.address_taken = true;
    Block b{"entry", {}};
    b.instrs.push_back(ins::str(kRegLr, kRegSp, -16, AddrMode::PreIndex));
    b.instrs.push_back(ins::adr(5, target));
    b.instrs.push_back(ins::blr(5));
    b.instrs.push_back(random_arith(0));
    b.instrs.push_back(ins::ldr(kRegLr, kRegSp, 16, AddrMode::PostIndex));
    b.instrs.push_back(ins::ret());
    f.blocks.push_back(std::move(b));
    return f;
  }

  std::mt19937_64 rng_;
};

}  // namespace

Program generate_program(uint64_t seed) { return Gen(seed).run(); }

}  // namespace cfprot::test
