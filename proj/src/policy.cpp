#include "cfprot/policy.hpp"

#include "cfprot/errors.hpp"

namespace cfprot {

namespace {

// Concrete address map. Task memory sits in the lower half; kernel spans sit
// in the upper half with bit 63 set so that clearing the top bit of a kernel
// pointer lands in the unmapped gap between the halves.
constexpr uint64_t kElevatedCodeBase = 0x0000000000400000ull;
constexpr uint64_t kElevatedDataBase = 0x0000000000500000ull;
constexpr uint64_t kElevatedStackBase = 0x0000000000600000ull;
constexpr uint64_t kLegacyCodeBase = 0x0000000000200000ull;
constexpr uint64_t kLegacyDataBase = 0x0000000000300000ull;
constexpr uint64_t kShadowPoolBase = 0x0000700000000000ull;
constexpr uint64_t kShadowPoolSize = 0x0000000000100000ull;
constexpr uint64_t kKernelCodeBase = 0xFFFF000000100000ull;
constexpr uint64_t kKernelDataBase = 0xFFFF000000300000ull;
constexpr uint64_t kKernelRegionSize = 0x0000000000100000ull;

void check_params(const LayoutParams& p, IsolationMode mode) {
  if (p.shadow_stack_size == 0 || p.guard_size == 0)
    throw PolicyError(PolicyError::Kind::BadParams,
                      "shadow stack and guard sizes must be nonzero");
  if (p.code_size == 0 || p.stack_size == 0)
    throw PolicyError(PolicyError::Kind::BadParams,
                      "code and stack sizes must be nonzero");
  if (mode == IsolationMode::Hpds && p.kernel_table_levels == 0)
    throw PolicyError(
        PolicyError::Kind::HugePageConflict,
        "HPDS isolation needs APTable[0] in top- or mid-level descriptors; "
        "the largest huge pages have none");
}

std::vector<TableAttrs> kernel_tables(const LayoutParams& p,
                                      IsolationMode mode) {
  std::vector<TableAttrs> tables(static_cast<size_t>(p.kernel_table_levels));
  if (mode == IsolationMode::Hpds)
    for (TableAttrs& t : tables) t.aptable0 = true;
  return tables;
}

void add_kernel_regions(MemoryLayout& layout, const LayoutParams& p,
                        IsolationMode mode) {
  Region kcode;
  kcode.name = "kcode";
  kcode.role = RegionRole::KernelCode;
  kcode.half = AddrHalf::Upper;
  kcode.path.leaf = {/*ap1=*/true, /*ap2=*/true, /*uxn=*/true, /*pxn=*/false,
                     /*kernel_tag=*/true};
  kcode.path.tables = kernel_tables(p, mode);
  kcode.base = kKernelCodeBase;
  kcode.size = kKernelRegionSize;
  layout.regions.push_back(kcode);

  Region kdata;
  kdata.name = "kdata";
  kdata.role = RegionRole::KernelData;
  kdata.half = AddrHalf::Upper;
  kdata.path.leaf = {/*ap1=*/true, /*ap2=*/false, /*uxn=*/true, /*pxn=*/true,
                     /*kernel_tag=*/true};
  kdata.path.tables = kernel_tables(p, mode);
  kdata.base = kKernelDataBase;
  kdata.size = kKernelRegionSize;
  layout.regions.push_back(kdata);
}

void add_elevated_task_regions(MemoryLayout& layout, const LayoutParams& p) {
  Region code;
  code.name = "code";
  code.role = RegionRole::TaskCode;
  code.owner = TaskKind::Elevated;
  code.path.leaf = {/*ap1=*/false, /*ap2=*/true, /*uxn=*/true, /*pxn=*/false,
                    false};
  code.base = kElevatedCodeBase;
  code.size = p.code_size;
  layout.regions.push_back(code);

  Region data;
  data.name = "data";
  data.role = RegionRole::TaskData;
  data.owner = TaskKind::Elevated;
  data.path.leaf = {false, false, /*uxn=*/true, /*pxn=*/true, false};
  data.base = kElevatedDataBase;
  data.size = p.data_size;
  layout.regions.push_back(data);

  Region stack = data;
  stack.name = "stack";
  stack.base = kElevatedStackBase;
  stack.size = p.stack_size;
  layout.regions.push_back(stack);
}

void add_legacy_task_regions(MemoryLayout& layout, const LayoutParams& p) {
  Region code;
  code.name = "lcode";
  code.role = RegionRole::TaskCode;
  code.owner = TaskKind::Legacy;
  code.path.leaf = {/*ap1=*/true, /*ap2=*/true, /*uxn=*/false, /*pxn=*/true,
                    false};
  code.base = kLegacyCodeBase;
  code.size = p.code_size;
  layout.regions.push_back(code);

  Region data;
  data.name = "ldata";
  data.role = RegionRole::TaskData;
  data.owner = TaskKind::Legacy;
  data.path.leaf = {/*ap1=*/true, false, /*uxn=*/true, /*pxn=*/true, false};
  data.base = kLegacyDataBase;
  data.size = p.data_size;
  layout.regions.push_back(data);
}

MemoryLayout add_shadow_stack(const MemoryLayout& in, int thread_id,
                              uint64_t ss_size, uint64_t guard_size) {
  MemoryLayout layout = in;
  std::string suffix = "_t" + std::to_string(thread_id);
  if (layout.find("shadow" + suffix))
    throw PolicyError(PolicyError::Kind::BadParams,
                      "thread " + std::to_string(thread_id) +
                          " already has a shadow stack");
  // Next free slot in the pool, after any existing guard/shadow regions.
  uint64_t cursor = kShadowPoolBase;
  for (const Region& r : layout.regions)
    if ((r.role == RegionRole::ShadowStack || r.role == RegionRole::Guard) &&
        r.end() > cursor)
      cursor = r.end();
  uint64_t slot = guard_size * 2 + ss_size;
  if (cursor + slot > kShadowPoolBase + kShadowPoolSize)
    throw PolicyError(PolicyError::Kind::AddressExhausted,
                      "no lower-half space left for another shadow stack");

  Region glo;
  glo.name = "guard_lo" + suffix;
  glo.role = RegionRole::Guard;
  glo.mapped = false;
  glo.pinned = true;
  glo.base = cursor;
  glo.size = guard_size;

  Region ss;
  ss.name = "shadow" + suffix;
  ss.role = RegionRole::ShadowStack;
  ss.owner = TaskKind::Elevated;
  ss.path.leaf = {/*ap1=*/true, /*ap2=*/false, /*uxn=*/true, /*pxn=*/true,
                  false};
  ss.pinned = true;
  ss.base = cursor + guard_size;
  ss.size = ss_size;

  Region ghi = glo;
  ghi.name = "guard_hi" + suffix;
  ghi.base = ss.end();

  layout.regions.push_back(glo);
  layout.regions.push_back(ss);
  layout.regions.push_back(ghi);
  if (!layout.shadow_span)
    layout.shadow_span = ShadowSpan{ss.base, ss.size, guard_size};
  return layout;
}

}  // namespace

CpuSecState security_state_for(TaskKind kind, IsolationMode mode) {
  CpuSecState s;
  if (kind == TaskKind::Elevated) {
    s.el = El::El1t;
    s.pan = true;
    s.uao = false;
    s.hpd1 = mode == IsolationMode::Hpds;
  } else {
    s.el = El::El0;
    s.e0pd1 = mode == IsolationMode::E0pd;
  }
  return s;
}

TaskSetup configure_elevated(const LayoutParams& params, IsolationMode mode) {
  check_params(params, mode);
  MemoryLayout layout;
  layout.mode = mode;
  add_kernel_regions(layout, params, mode);
  add_elevated_task_regions(layout, params);
  layout = add_shadow_stack(layout, 0, params.shadow_stack_size,
                            params.guard_size);
  CpuSecState state = security_state_for(TaskKind::Elevated, mode);
  layout.elevated_state = state;
  validate_layout(layout);
  return {std::move(layout), state};
}

TaskSetup configure_legacy(const LayoutParams& params, IsolationMode mode) {
  check_params(params, mode);
  MemoryLayout layout;
  layout.mode = mode;
  add_kernel_regions(layout, params, mode);
  add_legacy_task_regions(layout, params);
  CpuSecState state = security_state_for(TaskKind::Legacy, mode);
  layout.legacy_state = state;
  validate_layout(layout);
  return {std::move(layout), state};
}

MemoryLayout combined_layout(const LayoutParams& params, IsolationMode mode) {
  TaskSetup elevated = configure_elevated(params, mode);
  MemoryLayout layout = std::move(elevated.layout);
  add_legacy_task_regions(layout, params);
  layout.legacy_state = security_state_for(TaskKind::Legacy, mode);
  validate_layout(layout);
  return layout;
}

MemoryLayout allocate_shadow_stack(const MemoryLayout& layout, int thread_id) {
  uint64_t ss_size = layout.shadow_span ? layout.shadow_span->size : 0x10000;
  uint64_t guard_size =
      layout.shadow_span ? layout.shadow_span->guard_size : 0x1000;
  MemoryLayout out = add_shadow_stack(layout, thread_id, ss_size, guard_size);
  validate_layout(out);
  return out;
}

TaskKind decide_task_kind(const LaunchRequest& req) {
  auto it = req.env.find("INVERSOS");
  if (it != req.env.end() && it->second == "1") return TaskKind::Elevated;
  return TaskKind::Legacy;
}

LaunchDecision vet_launch(const LaunchRequest& req, const Allowlist& allow) {
  LaunchDecision decision;
  decision.kind = decide_task_kind(req);
  if (decision.kind == TaskKind::Elevated) {
    decision.scans = scan_task(req.binary_pages, allow);
    for (const ScanVerdict& v : decision.scans)
      if (!v.allowed) decision.loadable = false;
  }
  return decision;
}

MemoryLayout apply_mprotect(const MemoryLayout& layout, std::string_view name,
                            const LeafAttrs& new_attrs) {
  MemoryLayout out = layout;
  Region* r = out.find(name);
  if (!r)
    throw PolicyError(PolicyError::Kind::MalformedLayout,
                      "no region named '" + std::string(name) + "'");
  if (r->pinned)
    throw PolicyError(PolicyError::Kind::PinnedRegion,
                      "region '" + std::string(name) +
                          "' is unmodifiable by mprotect requests");
  r->path.leaf = new_attrs;
  return out;
}

MemoryLayout apply_munmap(const MemoryLayout& layout, std::string_view name) {
  MemoryLayout out = layout;
  Region* r = out.find(name);
  if (!r)
    throw PolicyError(PolicyError::Kind::MalformedLayout,
                      "no region named '" + std::string(name) + "'");
  if (r->pinned)
    throw PolicyError(PolicyError::Kind::PinnedRegion,
                      "region '" + std::string(name) +
                          "' is unmodifiable by munmap requests");
  std::erase_if(out.regions, [&](const Region& x) { return x.name == name; });
  return out;
}

}  // namespace cfprot
