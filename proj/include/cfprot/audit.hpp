#pragma once

#include <string>
#include <vector>

#include "cfprot/layout.hpp"

namespace cfprot {

// How each enumerated access is justified. Hardware channels must fault;
// the functional channel (vetted LSU to the task's own shadow stack) must be
// allowed; software channels are enforced by the verifier/CFI rather than
// the permission bits and are reported for information only.
enum class AuditChannel : uint8_t {
  MustFault,
  MustAllow,
  VettedLsu,   // elevated LSU data access to kernel memory
  CfiGuarded,  // elevated instruction fetch from kernel code
};

struct AuditRow {
  TaskKind task;
  std::string region;
  AccessKind kind;
  AccessVia via;
  AuditChannel channel;
  Verdict verdict;
  bool violation = false;
};

struct AuditReport {
  std::vector<AuditRow> rows;

  bool clean() const;
  std::vector<AuditRow> violations() const;
  std::string to_text() const;  // aligned matrix, one row per check
};

// Exhaustively enumerates task-kind x access-kind x via over the kernel,
// shadow-stack and guard regions and flags every hardware-blockable access
// that is allowed, every elevated-task regular access to a shadow stack that
// is allowed, and every vetted shadow-stack access that is denied. An empty
// violation list means the isolation argument holds for this layout.
//
// Security states come from the layout when embedded, else from the
// canonical per-mode states. Throws PolicyError{MalformedLayout} when the
// layout has no kernel regions or fails validation.
AuditReport audit_isolation(const MemoryLayout& layout, IsolationMode mode);
AuditReport audit_isolation(const MemoryLayout& layout,
                            const CpuSecState& elevated,
                            const CpuSecState& legacy);

}  // namespace cfprot
