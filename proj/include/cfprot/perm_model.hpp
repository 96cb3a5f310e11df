#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cfprot {

// Last-level descriptor attributes. kernel_tag models the software use of
// descriptor bit 63 to distinguish kernel from user pages; the MMU (and this
// model's permission checks) ignore it entirely.
struct LeafAttrs {
  bool ap1 = false;  // unprivileged data access enabled when set
  bool ap2 = false;  // write disabled when set
  bool uxn = false;
  bool pxn = false;
  bool kernel_tag = false;

  bool operator==(const LeafAttrs&) const = default;
};

// Hierarchical attributes of one top- or mid-level descriptor.
struct TableAttrs {
  bool aptable0 = false;  // disallows unprivileged data access when set
  bool aptable1 = false;  // disallows write access when set
  bool uxntable = false;
  bool pxntable = false;

  bool operator==(const TableAttrs&) const = default;
};

enum class El : uint8_t { El0, El1t, El1h };

struct CpuSecState {
  El el = El::El0;
  bool pan = false;
  bool uao = false;
  bool hpd0 = false;  // hierarchical checks disabled for the lower half
  bool hpd1 = false;  // ... for the upper half
  bool e0pd0 = false;  // EL0 access to the lower half blocked
  bool e0pd1 = false;  // ... to the upper half

  bool privileged() const { return el != El::El0; }

  bool operator==(const CpuSecState&) const = default;
};

enum class AccessKind : uint8_t { Read, Write, InstrFetch };
enum class AccessVia : uint8_t { Regular, Lsu };
enum class AddrHalf : uint8_t { Lower, Upper };  // TTBR0 / TTBR1

struct AccessRequest {
  AccessKind kind = AccessKind::Read;
  bool privileged = false;  // privilege of the executing context
  AccessVia via = AccessVia::Regular;
  AddrHalf half = AddrHalf::Lower;
};

// The translation walk relevant to one access: the hierarchical attributes
// encountered (possibly none, as with the largest huge pages) and the leaf.
struct WalkPath {
  std::vector<TableAttrs> tables;
  LeafAttrs leaf;

  bool operator==(const WalkPath&) const = default;
};

// Leaf attributes after folding in the hierarchical bits.
struct EffectiveAttrs {
  bool ap1 = false;
  bool ap2 = false;
  bool uxn = false;
  bool pxn = false;

  bool operator==(const EffectiveAttrs&) const = default;
};

// Fault categories. Denials forced by hierarchical bits report the same
// category as their leaf counterpart (hierarchical faults are ordinary
// permission faults); HierTableFault is kept for layout files and tools that
// want to name the hierarchy explicitly.
enum class FaultReason : uint8_t {
  E0pdFault,
  PanFault,
  UnprivDataFault,
  WriteFault,
  UxnFault,
  PxnFault,
  HierTableFault,
  NotMapped,  // guard regions and the address-space gap (no descriptor)
};

struct Verdict {
  bool allow = false;
  std::optional<FaultReason> fault;

  static Verdict ok() { return {true, std::nullopt}; }
  static Verdict deny(FaultReason r) { return {false, r}; }

  bool operator==(const Verdict&) const = default;
  std::string to_string() const;
};

// Fold hierarchical attributes into the leaf. With hpd_enabled the result is
// the leaf unmodified; otherwise any set table bit tightens the corresponding
// leaf permission for the whole range.
EffectiveAttrs effective_attrs(const WalkPath& path, bool hpd_enabled);

// One architectural permission check, in decision order:
//   1. E0PD for the requested half (unprivileged requests only)
//   2. hierarchy/leaf merge under the half's HPD bit
//   3. instruction fetch: UXN/PXN
//   4. data: LSU and unprivileged requests check the unprivileged
//      permissions (unless UAO lifts LSU to regular); privileged regular
//      accesses to unprivileged-accessible memory fault under PAN.
Verdict check_access(const CpuSecState& state, const WalkPath& path,
                     const AccessRequest& req);

const char* fault_reason_name(FaultReason r);

}  // namespace cfprot
