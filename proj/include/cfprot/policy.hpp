#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfprot/decoder.hpp"
#include "cfprot/layout.hpp"
#include "cfprot/scanner.hpp"

namespace cfprot {

// Region sizing for the builders below. Defaults are desk-scale: a 64 KiB
// shadow stack span growing upward, one 4 KiB guard page on each side.
struct LayoutParams {
  uint64_t code_size = 0x10000;
  uint64_t data_size = 0x10000;
  uint64_t stack_size = 0x10000;
  uint64_t shadow_stack_size = 0x10000;
  uint64_t guard_size = 0x1000;
  // Table levels above kernel leaf descriptors. 0 models mapping the kernel
  // with the largest huge pages, which have no top- or mid-level descriptors.
  int kernel_table_levels = 2;
};

struct TaskSetup {
  MemoryLayout layout;
  CpuSecState state;
};

struct LaunchRequest {
  std::map<std::string, std::string> env;
  std::vector<std::vector<uint8_t>> binary_pages;
};

struct LaunchDecision {
  TaskKind kind = TaskKind::Legacy;
  bool loadable = true;
  std::vector<ScanVerdict> scans;  // per page; empty for legacy tasks
};

// Canonical security state for running one kind of task under one
// compatibility mode.
CpuSecState security_state_for(TaskKind kind, IsolationMode mode);

// Elevated task: privileged thread mode, PAN on, UAO off; task pages
// unprivileged-inaccessible except the shadow stack domain; kernel mapped
// unprivileged-accessible in the upper half. Includes the first thread's
// shadow stack. Throws PolicyError{BadParams} for zero-sized shadow stacks
// and {HugePageConflict} in HPDS mode when the kernel has no table levels.
TaskSetup configure_elevated(const LayoutParams& params, IsolationMode mode);

// Legacy task at EL0. HPDS mode isolates the kernel by APTable[0] in every
// kernel table level with HPD1 clear; E0PD mode sets E0PD1 instead.
TaskSetup configure_legacy(const LayoutParams& params, IsolationMode mode);

// Both tasks plus the shared kernel view in one layout, for the auditor and
// the layout file.
MemoryLayout combined_layout(const LayoutParams& params, IsolationMode mode);

// Adds one shadow stack with its two guards for a new thread. Throws
// PolicyError{AddressExhausted} when the modeled lower-half pool is full.
MemoryLayout allocate_shadow_stack(const MemoryLayout& layout, int thread_id);

// Elevated iff the environment carries exactly INVERSOS=1.
TaskKind decide_task_kind(const LaunchRequest& req);

// Launch-time gate: decide the kind and, for elevated tasks, scan every code
// page; the task is loadable only if all pages pass.
LaunchDecision vet_launch(const LaunchRequest& req, const Allowlist& allow);

// munmap/mprotect-style requests from the task; pinned regions (shadow
// stacks and guards) reject with PolicyError{PinnedRegion}.
MemoryLayout apply_mprotect(const MemoryLayout& layout, std::string_view name,
                            const LeafAttrs& new_attrs);
MemoryLayout apply_munmap(const MemoryLayout& layout, std::string_view name);

}  // namespace cfprot
