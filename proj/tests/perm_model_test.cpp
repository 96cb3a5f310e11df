#include "cfprot/perm_model.hpp"
#include "doctest.h"
#include "support/support.hpp"

using namespace cfprot;
using cfprot::test::enumerate_oracle_cases;
using cfprot::test::OracleCase;
using cfprot::test::reference_check;

namespace {

CpuSecState elevated_state() {
  CpuSecState s;
  s.el = El::El1t;
  s.pan = true;
  s.uao = false;
  return s;
}

AccessRequest req(AccessKind kind, bool privileged, AccessVia via,
                  AddrHalf half = AddrHalf::Lower) {
  return AccessRequest{kind, privileged, via, half};
}

}  // namespace

TEST_CASE("effective attrs: hierarchy folds toward restrictive") {
  WalkPath path;
  path.leaf.ap1 = true;
  TableAttrs t;
  t.aptable0 = true;
  path.tables.push_back(t);

  SUBCASE("hpd disables the hierarchy: leaf wins") {
    EffectiveAttrs eff = effective_attrs(path, /*hpd_enabled=*/true);
    CHECK(eff.ap1);
  }
  SUBCASE("without hpd, aptable0 removes unprivileged access") {
    EffectiveAttrs eff = effective_attrs(path, /*hpd_enabled=*/false);
    CHECK_FALSE(eff.ap1);
  }
  SUBCASE("empty hierarchy leaves the leaf unchanged") {
    WalkPath flat;
    flat.leaf = {true, true, false, true, false};
    EffectiveAttrs eff = effective_attrs(flat, /*hpd_enabled=*/false);
    CHECK(eff.ap1);
    CHECK(eff.ap2);
    CHECK_FALSE(eff.uxn);
    CHECK(eff.pxn);
  }
}

TEST_CASE("pan and lsu interplay") {
  CpuSecState s = elevated_state();
  WalkPath user_page;
  user_page.leaf = {/*ap1=*/true, /*ap2=*/false, true, true, false};

  SUBCASE("pan faults privileged regular writes to user-accessible pages") {
    Verdict v = check_access(s, user_page,
                             req(AccessKind::Write, true, AccessVia::Regular));
    CHECK_FALSE(v.allow);
    CHECK_EQ(*v.fault, FaultReason::PanFault);
  }
  SUBCASE("lsu bypasses pan with uao off") {
    Verdict v = check_access(s, user_page,
                             req(AccessKind::Write, true, AccessVia::Lsu));
    CHECK(v.allow);
  }
  SUBCASE("lsu cannot reach privileged-only memory") {
    WalkPath priv_page;
    priv_page.leaf = {/*ap1=*/false, false, true, true, false};
    Verdict v = check_access(s, priv_page,
                             req(AccessKind::Read, true, AccessVia::Lsu));
    CHECK_FALSE(v.allow);
    CHECK_EQ(*v.fault, FaultReason::UnprivDataFault);
  }
  SUBCASE("uao lifts lsu to regular behavior") {
    CpuSecState uao_on = s;
    uao_on.uao = true;
    WalkPath priv_page;
    priv_page.leaf = {/*ap1=*/false, false, true, true, false};
    CHECK(check_access(uao_on, priv_page,
                       req(AccessKind::Read, true, AccessVia::Lsu))
              .allow);
  }
}

TEST_CASE("e0pd blocks unprivileged access to the covered half") {
  CpuSecState s;
  s.el = El::El0;
  s.e0pd1 = true;
  WalkPath open_page;
  open_page.leaf = {true, false, false, false, false};
  Verdict v = check_access(
      s, open_page, req(AccessKind::Read, false, AccessVia::Regular,
                        AddrHalf::Upper));
  CHECK_EQ(*v.fault, FaultReason::E0pdFault);
  // The other half stays reachable.
  CHECK(check_access(s, open_page,
                     req(AccessKind::Read, false, AccessVia::Regular,
                         AddrHalf::Lower))
            .allow);
  // Privileged execution is unaffected by E0PD.
  CpuSecState priv = s;
  priv.el = El::El1t;
  CHECK(check_access(priv, open_page,
                     req(AccessKind::Read, true, AccessVia::Regular,
                         AddrHalf::Upper))
            .allow);
}

TEST_CASE("model agrees with the reference oracle everywhere") {
  auto cases = enumerate_oracle_cases();
  CHECK_GE(cases.size(), 40000u);
  CHECK_LE(cases.size(), 65536u);
  size_t mismatches = 0;
  for (const auto& c : cases) {
    Verdict got = check_access(c.state, c.path, c.req);
    Verdict want = reference_check(c.state, c.path, c.req);
    if (!(got == want)) ++mismatches;
  }
  CHECK_EQ(mismatches, 0u);
}

TEST_CASE("upper-half requests select the upper-half control bits") {
  for (int hpd1 = 0; hpd1 < 2; ++hpd1)
    for (int e0pd1 = 0; e0pd1 < 2; ++e0pd1)
      for (int el0 = 0; el0 < 2; ++el0)
        for (int leaf_bits = 0; leaf_bits < 16; ++leaf_bits)
          for (int table_bits = 0; table_bits < 16; ++table_bits) {
            CpuSecState s;
            s.el = el0 ? El::El0 : El::El1t;
            s.pan = true;
            s.hpd1 = hpd1;
            s.hpd0 = !hpd1;
            s.e0pd1 = e0pd1;
            s.e0pd0 = !e0pd1;
            WalkPath path;
            path.leaf.ap1 = leaf_bits & 1;
            path.leaf.ap2 = leaf_bits & 2;
            path.leaf.uxn = leaf_bits & 4;
            path.leaf.pxn = leaf_bits & 8;
            TableAttrs t;
            t.aptable0 = table_bits & 1;
            t.aptable1 = table_bits & 2;
            t.uxntable = table_bits & 4;
            t.pxntable = table_bits & 8;
            path.tables.push_back(t);
            for (AccessKind kind :
                 {AccessKind::Read, AccessKind::Write, AccessKind::InstrFetch})
              for (AccessVia via : {AccessVia::Regular, AccessVia::Lsu}) {
                if (kind == AccessKind::InstrFetch && via == AccessVia::Lsu)
                  continue;
                AccessRequest r = req(kind, !el0, via, AddrHalf::Upper);
                CHECK(check_access(s, path, r) ==
                      reference_check(s, path, r));
              }
          }
}

TEST_CASE("multi-level hierarchies behave like their union") {
  CpuSecState s = elevated_state();
  for (int bits1 = 0; bits1 < 16; ++bits1)
    for (int bits2 = 0; bits2 < 16; ++bits2) {
      TableAttrs t1{bool(bits1 & 1), bool(bits1 & 2), bool(bits1 & 4),
                    bool(bits1 & 8)};
      TableAttrs t2{bool(bits2 & 1), bool(bits2 & 2), bool(bits2 & 4),
                    bool(bits2 & 8)};
      TableAttrs u{t1.aptable0 || t2.aptable0, t1.aptable1 || t2.aptable1,
                   t1.uxntable || t2.uxntable, t1.pxntable || t2.pxntable};
      WalkPath two, one;
      two.leaf = {true, false, false, false, false};
      one.leaf = two.leaf;
      two.tables = {t1, t2};
      one.tables = {u};
      for (AccessKind kind : {AccessKind::Read, AccessKind::Write,
                              AccessKind::InstrFetch})
        CHECK(check_access(s, two, req(kind, true, AccessVia::Lsu)) ==
              check_access(s, one, req(kind, true, AccessVia::Lsu)));
    }
}

TEST_CASE("restrictive bits never turn a fault into an allow") {
  auto cases = enumerate_oracle_cases();
  size_t pan_inversions = 0;
  for (const auto& c : cases) {
    Verdict before = check_access(c.state, c.path, c.req);

    auto check_still_denied = [&](const OracleCase& mutated) {
      Verdict after =
          check_access(mutated.state, mutated.path, mutated.req);
      if (!before.allow && after.allow) {
        // The only architectural exception: removing unprivileged
        // accessibility (APTable[0]) also removes PAN faults for privileged
        // regular accesses. That inversion is the mechanism the elevated
        // task design leans on, so assert it precisely instead of failing.
        bool pan_exception = before.fault == FaultReason::PanFault;
        CHECK_MESSAGE(pan_exception, "non-PAN fault became allow");
        ++pan_inversions;
      }
    };

    {
      auto m = c;
      m.path.leaf.ap2 = true;
      check_still_denied(m);
    }
    {
      auto m = c;
      m.path.leaf.uxn = true;
      check_still_denied(m);
    }
    {
      auto m = c;
      m.path.leaf.pxn = true;
      check_still_denied(m);
    }
    if (!c.path.tables.empty()) {
      for (int bit = 0; bit < 4; ++bit) {
        auto m = c;
        if (bit == 0) m.path.tables[0].aptable0 = true;
        if (bit == 1) m.path.tables[0].aptable1 = true;
        if (bit == 2) m.path.tables[0].uxntable = true;
        if (bit == 3) m.path.tables[0].pxntable = true;
        check_still_denied(m);
      }
    }
    if (!c.req.privileged) {
      auto m = c;
      m.state.e0pd0 = true;  // lower-half requests in the enumeration
      check_still_denied(m);
    }
  }
  CHECK_GT(pan_inversions, 0u);  // the inversion exists and is PAN-only
}

TEST_CASE("hpd makes verdicts independent of table attributes") {
  auto cases = enumerate_oracle_cases();
  for (const auto& c : cases) {
    if (!c.state.hpd0 || c.path.tables.empty()) continue;
    auto stripped = c;
    stripped.path.tables.clear();
    CHECK(check_access(c.state, c.path, c.req) ==
          check_access(stripped.state, stripped.path, stripped.req));
  }
}

TEST_CASE("descriptor bit 63 never affects any verdict") {
  auto cases = enumerate_oracle_cases();
  for (const auto& c : cases) {
    auto tagged = c;
    tagged.path.leaf.kernel_tag = !c.path.leaf.kernel_tag;
    CHECK(check_access(c.state, c.path, c.req) ==
          check_access(tagged.state, tagged.path, tagged.req));
  }
}
