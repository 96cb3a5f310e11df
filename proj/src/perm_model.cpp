#include "cfprot/perm_model.hpp"

namespace cfprot {

EffectiveAttrs effective_attrs(const WalkPath& path, bool hpd_enabled) {
  EffectiveAttrs eff;
  eff.ap1 = path.leaf.ap1;
  eff.ap2 = path.leaf.ap2;
  eff.uxn = path.leaf.uxn;
  eff.pxn = path.leaf.pxn;
  if (hpd_enabled) return eff;
  for (const TableAttrs& t : path.tables) {
    if (t.aptable0) eff.ap1 = false;
    if (t.aptable1) eff.ap2 = true;
    if (t.uxntable) eff.uxn = true;
    if (t.pxntable) eff.pxn = true;
  }
  return eff;
}

Verdict check_access(const CpuSecState& state, const WalkPath& path,
                     const AccessRequest& req) {
  // E0PD blocks every unprivileged access to the covered half outright.
  if (!req.privileged) {
    const bool e0pd = req.half == AddrHalf::Lower ? state.e0pd0 : state.e0pd1;
    if (e0pd) return Verdict::deny(FaultReason::E0pdFault);
  }

  const bool hpd = req.half == AddrHalf::Lower ? state.hpd0 : state.hpd1;
  const EffectiveAttrs eff = effective_attrs(path, hpd);

  if (req.kind == AccessKind::InstrFetch) {
    if (!req.privileged && eff.uxn) return Verdict::deny(FaultReason::UxnFault);
    if (req.privileged && eff.pxn) return Verdict::deny(FaultReason::PxnFault);
    return Verdict::ok();
  }

  // LSU accesses check the unprivileged permissions even from the privileged
  // mode, unless UAO makes them behave as regular accesses.
  const bool check_as_unpriv =
      !req.privileged || (req.via == AccessVia::Lsu && !state.uao);

  if (check_as_unpriv) {
    if (!eff.ap1) return Verdict::deny(FaultReason::UnprivDataFault);
    if (req.kind == AccessKind::Write && eff.ap2)
      return Verdict::deny(FaultReason::WriteFault);
    return Verdict::ok();
  }

  // Privileged regular (or UAO-lifted LSU) access. PAN faults accesses to
  // memory that the unprivileged mode could reach, for regular instructions
  // only.
  if (state.pan && req.via == AccessVia::Regular && eff.ap1)
    return Verdict::deny(FaultReason::PanFault);
  if (req.kind == AccessKind::Write && eff.ap2)
    return Verdict::deny(FaultReason::WriteFault);
  return Verdict::ok();
}

const char* fault_reason_name(FaultReason r) {
  switch (r) {
    case FaultReason::E0pdFault: return "E0pdFault";
    case FaultReason::PanFault: return "PanFault";
    case FaultReason::UnprivDataFault: return "UnprivDataFault";
    case FaultReason::WriteFault: return "WriteFault";
    case FaultReason::UxnFault: return "UxnFault";
    case FaultReason::PxnFault: return "PxnFault";
    case FaultReason::HierTableFault: return "HierTableFault";
    case FaultReason::NotMapped: return "NotMapped";
  }
  return "?";
}

std::string Verdict::to_string() const {
  if (allow) return "allow";
  return std::string("fault:") + fault_reason_name(*fault);
}

}  // namespace cfprot
