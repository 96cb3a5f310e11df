#include "cfprot/audit.hpp"

#include <iomanip>
#include <sstream>

#include "cfprot/errors.hpp"
#include "cfprot/policy.hpp"

namespace cfprot {

namespace {

const char* access_kind_name(AccessKind k) {
  switch (k) {
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
    case AccessKind::InstrFetch: return "fetch";
  }
  return "?";
}

const char* via_name(AccessVia v) {
  return v == AccessVia::Regular ? "regular" : "lsu";
}

const char* channel_name(AuditChannel c) {
  switch (c) {
    case AuditChannel::MustFault: return "must-fault";
    case AuditChannel::MustAllow: return "must-allow";
    case AuditChannel::VettedLsu: return "vetted-lsu";
    case AuditChannel::CfiGuarded: return "cfi-guarded";
  }
  return "?";
}

void add_row(AuditReport& report, const CpuSecState& state, TaskKind task,
             const Region& region, AccessKind kind, AccessVia via,
             AuditChannel channel) {
  AuditRow row;
  row.task = task;
  row.region = region.name;
  row.kind = kind;
  row.via = via;
  row.channel = channel;
  row.verdict = region_check(state, region, kind, via);
  row.violation = (channel == AuditChannel::MustFault && row.verdict.allow) ||
                  (channel == AuditChannel::MustAllow && !row.verdict.allow);
  report.rows.push_back(std::move(row));
}

}  // namespace

bool AuditReport::clean() const {
  for (const AuditRow& row : rows)
    if (row.violation) return false;
  return true;
}

std::vector<AuditRow> AuditReport::violations() const {
  std::vector<AuditRow> out;
  for (const AuditRow& row : rows)
    if (row.violation) out.push_back(row);
  return out;
}

std::string AuditReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(9) << "task" << std::setw(12) << "region"
     << std::setw(7) << "access" << std::setw(9) << "via" << std::setw(13)
     << "channel" << std::setw(22) << "verdict" << "status\n";
  for (const AuditRow& row : rows) {
    os << std::left << std::setw(9) << task_kind_name(row.task)
       << std::setw(12) << row.region << std::setw(7)
       << access_kind_name(row.kind) << std::setw(9) << via_name(row.via)
       << std::setw(13) << channel_name(row.channel) << std::setw(22)
       << row.verdict.to_string()
       << (row.violation ? "VIOLATION" : "ok") << "\n";
  }
  return os.str();
}

AuditReport audit_isolation(const MemoryLayout& layout,
                            const CpuSecState& elevated,
                            const CpuSecState& legacy) {
  validate_layout(layout);
  if (!layout.has_role(RegionRole::KernelCode) ||
      !layout.has_role(RegionRole::KernelData))
    throw PolicyError(PolicyError::Kind::MalformedLayout,
                      "audit needs kernel regions in the layout");

  AuditReport report;
  constexpr AccessKind kData[] = {AccessKind::Read, AccessKind::Write};
  constexpr AccessVia kVias[] = {AccessVia::Regular, AccessVia::Lsu};

  for (const Region& region : layout.regions) {
    const bool kernel = region.role == RegionRole::KernelCode ||
                        region.role == RegionRole::KernelData;
    if (kernel) {
      // Legacy tasks must be unable to touch kernel memory at all.
      for (AccessKind kind : kData)
        for (AccessVia via : kVias)
          add_row(report, legacy, TaskKind::Legacy, region, kind, via,
                  AuditChannel::MustFault);
      add_row(report, legacy, TaskKind::Legacy, region,
              AccessKind::InstrFetch, AccessVia::Regular,
              AuditChannel::MustFault);

      // Elevated regular data accesses are stopped by PAN. LSU data
      // accesses reach kernel memory by construction; only vetted LSU
      // instructions survive the verifier, so those rows are informational.
      for (AccessKind kind : kData) {
        add_row(report, elevated, TaskKind::Elevated, region, kind,
                AccessVia::Regular, AuditChannel::MustFault);
        add_row(report, elevated, TaskKind::Elevated, region, kind,
                AccessVia::Lsu, AuditChannel::VettedLsu);
      }
      // Kernel code is privileged-executable for the kernel itself; CFI and
      // bit-masking keep elevated control flow out of it. Kernel data must
      // never be executable from the elevated task.
      add_row(report, elevated, TaskKind::Elevated, region,
              AccessKind::InstrFetch, AccessVia::Regular,
              region.role == RegionRole::KernelCode ? AuditChannel::CfiGuarded
                                                    : AuditChannel::MustFault);
    } else if (region.role == RegionRole::ShadowStack) {
      // Regular accesses must fault (PAN); vetted LSU must get through.
      for (AccessKind kind : kData) {
        add_row(report, elevated, TaskKind::Elevated, region, kind,
                AccessVia::Regular, AuditChannel::MustFault);
        add_row(report, elevated, TaskKind::Elevated, region, kind,
                AccessVia::Lsu, AuditChannel::MustAllow);
      }
      add_row(report, elevated, TaskKind::Elevated, region,
              AccessKind::InstrFetch, AccessVia::Regular,
              AuditChannel::MustFault);
    } else if (region.role == RegionRole::Guard) {
      for (AccessKind kind : kData)
        for (AccessVia via : kVias)
          add_row(report, elevated, TaskKind::Elevated, region, kind, via,
                  AuditChannel::MustFault);
      add_row(report, elevated, TaskKind::Elevated, region,
              AccessKind::InstrFetch, AccessVia::Regular,
              AuditChannel::MustFault);
    }
  }
  return report;
}

AuditReport audit_isolation(const MemoryLayout& layout, IsolationMode mode) {
  const CpuSecState elevated =
      layout.elevated_state ? *layout.elevated_state
                            : security_state_for(TaskKind::Elevated, mode);
  const CpuSecState legacy = layout.legacy_state
                                 ? *layout.legacy_state
                                 : security_state_for(TaskKind::Legacy, mode);
  return audit_isolation(layout, elevated, legacy);
}

}  // namespace cfprot
