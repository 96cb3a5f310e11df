#include "cfprot/asm_text.hpp"
#include "cfprot/rewriter.hpp"
#include "cfprot/verifier.hpp"
#include "doctest.h"
#include "support/support.hpp"

using namespace cfprot;

namespace {

bool has_rule(const std::vector<Violation>& vs, Rule rule) {
  for (const Violation& v : vs)
    if (v.rule == rule) return true;
  return false;
}

Program rewritten(const std::string& name) {
  return rewrite(cfprot::test::load_corpus_program(name), RewriteOptions{});
}

}  // namespace

TEST_CASE("rewritten corpus verifies cleanly") {
  for (const auto& entry : cfprot::test::corpus()) {
    Program p = rewritten(entry.name);
    std::vector<Violation> vs = verify(p, VerifyPolicy::full());
    std::string all;
    for (const Violation& v : vs) all += v.to_string() + "; ";
    CHECK_MESSAGE(vs.empty(), entry.name, ": ", all);
  }
}

TEST_CASE("rewritten generated programs verify cleanly") {
  for (uint64_t seed = 1000; seed < 1100; ++seed) {
    Program p = rewrite(cfprot::test::generate_program(seed),
                        RewriteOptions{});
    std::vector<Violation> vs = verify(p, VerifyPolicy::full());
    CHECK_MESSAGE(vs.empty(), "seed ", seed,
                  vs.empty() ? "" : (": " + vs.front().to_string()));
  }
}

TEST_CASE("uninstrumented programs report the expected rules") {
  Program p = cfprot::test::load_corpus_program("fib");
  std::vector<Violation> vs = verify(p, VerifyPolicy::full());
  CHECK(has_rule(vs, Rule::V1));  // missing push pair
  CHECK(has_rule(vs, Rule::V2));  // missing pop pair
  CHECK(has_rule(vs, Rule::V4));  // unmasked returns
  CHECK(has_rule(vs, Rule::V5));  // missing landing pads
}

TEST_CASE("stray unprivileged stores violate the vetting rule") {
  Program p = parse_program(
      ".fn f\n  sttr x0, [x1]\n  ret\n.endfn\n");
  std::vector<Violation> vs = verify(p, VerifyPolicy::full());
  CHECK(has_rule(vs, Rule::V3));
  // Even a correctly-shaped push outside the pair pattern is flagged.
  Program lone = parse_program(".fn f\n  sttr x30, [x28]\n  ret\n.endfn\n");
  CHECK(has_rule(verify(lone, VerifyPolicy::full()), Rule::V3));
}

TEST_CASE("mutation suite: each class trips its rule") {
  Program base = rewritten("two_returns");

  SUBCASE("deleting the prologue push trips V1") {
    Program m = base;
    for (Function& f : m.functions) {
      if (!f.spills_lr()) continue;
      auto& instrs = f.blocks[0].instrs;
      for (size_t k = 0; k + 1 < instrs.size(); ++k)
        if (instrs[k] == ins::sttr(kRegLr, kRegShadow)) {
          instrs.erase(instrs.begin() + k, instrs.begin() + k + 2);
          break;
        }
      break;
    }
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V1));
  }

  SUBCASE("deleting one epilogue pop trips V2") {
    Program m = base;
    Function* classify = nullptr;
    for (Function& f : m.functions)
      if (f.name == "classify") classify = &f;
    REQUIRE(classify);
    bool removed = false;
    for (Block& b : classify->blocks) {
      if (removed || b.instrs.empty() || b.instrs.back().op != Op::Ret)
        continue;
      for (size_t k = 0; k + 1 < b.instrs.size(); ++k)
        if (b.instrs[k] == ins::sub_imm(kRegShadow, kRegShadow, 8)) {
          b.instrs.erase(b.instrs.begin() + k, b.instrs.begin() + k + 2);
          removed = true;
          break;
        }
    }
    REQUIRE(removed);
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V2));
  }

  SUBCASE("a stray x28 write trips V2") {
    Program m = base;
    for (Function& f : m.functions)
      if (f.name == "classify")
        f.blocks[0].instrs.insert(f.blocks[0].instrs.begin() + 4,
                                  ins::movz(kRegShadow, 0));
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V2));
  }

  SUBCASE("a stray unprivileged load trips V3") {
    Program m = base;
    for (Function& f : m.functions)
      if (f.name == "nudge")
        f.blocks[0].instrs.insert(f.blocks[0].instrs.begin() + 1,
                                  ins::ldtr(0, 1));
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V3));
  }

  SUBCASE("reordering mask before check trips V4") {
    Program m = rewritten("indirect_call");
    bool swapped = false;
    for (Function& f : m.functions)
      for (Block& b : f.blocks)
        for (size_t k = 0; k < b.instrs.size(); ++k)
          if (!swapped && b.instrs[k].op == Op::Blr && k >= 6) {
            std::swap(b.instrs[k - 1], b.instrs[k - 6]);
            swapped = true;
          }
    REQUIRE(swapped);
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V4));
  }

  SUBCASE("dropping the mask before a return trips V4") {
    Program m = base;
    for (Function& f : m.functions)
      for (Block& b : f.blocks)
        for (size_t k = 0; k < b.instrs.size(); ++k)
          if (b.instrs[k].op == Op::Ret && k > 0 &&
              b.instrs[k - 1].op == Op::AndImm) {
            b.instrs.erase(b.instrs.begin() + k - 1);
            CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V4));
            return;
          }
    FAIL("no masked return found");
  }

  SUBCASE("removing a landing pad trips V5") {
    Program m = base;
    for (Function& f : m.functions)
      if (f.name == "nudge") f.blocks[0].instrs.erase(
          f.blocks[0].instrs.begin());
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V5));
  }

  SUBCASE("an embedded privileged word trips V6") {
    Program m = base;
    for (Function& f : m.functions)
      if (f.name == "nudge")
        f.blocks[0].instrs.insert(f.blocks[0].instrs.begin() + 1,
                                  ins::word(0xD69F03E0));  // exception return
    std::vector<Violation> vs = verify(m, VerifyPolicy::full());
    CHECK(has_rule(vs, Rule::V6));
    // Benign raw words do not.
    Program benign = base;
    for (Function& f : benign.functions)
      if (f.name == "nudge")
        f.blocks[0].instrs.insert(f.blocks[0].instrs.begin() + 1,
                                  ins::word(0xD503201F));  // hint
    CHECK_FALSE(has_rule(verify(benign, VerifyPolicy::full()), Rule::V6));
  }

  SUBCASE("branch back to the prologue trips V2") {
    Program m = base;
    for (Function& f : m.functions)
      if (f.name == "classify") {
        // Replace the terminator of the entry block path with a loop back.
        Block extra{"loopback", {ins::b("entry")}};
        f.blocks.push_back(extra);
      }
    CHECK(has_rule(verify(m, VerifyPolicy::full()), Rule::V2));
  }
}

TEST_CASE("ss-only policy checks shadow stack and return masks only") {
  Program p = cfprot::test::load_corpus_program("call_chain");
  RewriteOptions opts;
  opts.enable_cfi = false;  // measurement configuration
  Program out = rewrite(p, opts);

  CHECK(verify(out, VerifyPolicy::ss_only()).empty());
  // The full policy still wants landing pads.
  CHECK(has_rule(verify(out, VerifyPolicy::full()), Rule::V5));
  // And the ss-only policy still wants return masks.
  RewriteOptions bare;
  bare.enable_cfi = false;
  bare.enable_mask = false;
  Program unmasked = rewrite(p, bare);
  CHECK(has_rule(verify(unmasked, VerifyPolicy::ss_only()), Rule::V4));
  // V6 applies under every policy.
  Program withword = out;
  withword.functions[0].blocks[0].instrs.push_back(ins::word(0xD5087210));
  CHECK(has_rule(verify(withword, VerifyPolicy::ss_only()), Rule::V6));
}

TEST_CASE("violations carry locations") {
  Program p = parse_program(".fn f\n  sttr x0, [x1]\n  ret\n.endfn\n");
  std::vector<Violation> vs = verify(p, VerifyPolicy::full());
  REQUIRE_FALSE(vs.empty());
  const Violation* v3 = nullptr;
  for (const Violation& v : vs)
    if (v.rule == Rule::V3) v3 = &v;
  REQUIRE(v3);
  CHECK_EQ(v3->function, "f");
  CHECK_EQ(v3->block, "entry");
  CHECK_EQ(v3->instr_index, 0u);
  CHECK(v3->to_string().starts_with("V3 f:entry:0"));
}
