#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfprot/perm_model.hpp"

namespace cfprot {

enum class TaskKind : uint8_t { Legacy, Elevated };
enum class IsolationMode : uint8_t { Hpds, E0pd };

enum class RegionRole : uint8_t {
  TaskCode,
  TaskData,
  ShadowStack,
  Guard,
  KernelCode,
  KernelData,
};

// One named span of attributed memory. The security argument lives in the
// attributes; base/size give the simulator a concrete address map. Guard
// regions are modeled as unmapped (no valid descriptor), which is what makes
// them inaccessible to every kind of access.
struct Region {
  std::string name;
  RegionRole role = RegionRole::TaskData;
  AddrHalf half = AddrHalf::Lower;
  WalkPath path;
  bool mapped = true;
  bool pinned = false;  // immune to munmap/mremap/mprotect-style requests
  std::optional<TaskKind> owner;  // kernel regions are shared
  uint64_t base = 0;
  uint64_t size = 0;

  uint64_t end() const { return base + size; }
  bool contains(uint64_t addr) const { return addr >= base && addr < end(); }

  bool operator==(const Region&) const = default;
};

struct ShadowSpan {
  uint64_t base = 0;
  uint64_t size = 0;
  uint64_t guard_size = 0;

  bool operator==(const ShadowSpan&) const = default;
};

struct MemoryLayout {
  std::vector<Region> regions;
  std::optional<ShadowSpan> shadow_span;  // primary thread's shadow stack
  std::optional<IsolationMode> mode;
  std::optional<CpuSecState> elevated_state;
  std::optional<CpuSecState> legacy_state;

  const Region* find(std::string_view name) const;
  Region* find(std::string_view name);
  const Region* region_at(uint64_t addr) const;
  bool has_role(RegionRole role) const;

  std::string to_text() const;
  static MemoryLayout from_text(std::string_view text);
  static MemoryLayout load_file(const std::string& path);

  bool operator==(const MemoryLayout&) const = default;
};

// Region-level access check: unmapped regions fault on everything, mapped
// regions defer to the architectural model.
Verdict region_check(const CpuSecState& state, const Region& region,
                     AccessKind kind, AccessVia via);

// Throws PolicyError{MalformedLayout} when a region violates its role
// invariants (shadow-stack attributes, guard inaccessibility and adjacency,
// elevated code privileged-executable, kernel memory unprivileged-accessible
// and tagged).
void validate_layout(const MemoryLayout& layout);

const char* task_kind_name(TaskKind k);
const char* region_role_name(RegionRole r);
const char* isolation_mode_name(IsolationMode m);
std::optional<RegionRole> region_role_from_name(std::string_view name);

}  // namespace cfprot
