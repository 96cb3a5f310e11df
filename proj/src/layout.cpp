#include "cfprot/layout.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "cfprot/errors.hpp"

namespace cfprot {

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.emplace_back(s.substr(pos));
      break;
    }
    out.emplace_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

uint64_t parse_u64(std::string_view s, int lineno) {
  uint64_t v = 0;
  int base = 10;
  if (s.starts_with("0x") || s.starts_with("0X")) {
    s.remove_prefix(2);
    base = 16;
  }
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size())
    throw PolicyError(PolicyError::Kind::MalformedLayout,
                      "layout line " + std::to_string(lineno) +
                          ": bad number '" + std::string(s) + "'");
  return v;
}

bool parse_bool(std::string_view s, int lineno) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw PolicyError(PolicyError::Kind::MalformedLayout,
                    "layout line " + std::to_string(lineno) + ": bad flag '" +
                        std::string(s) + "'");
}

std::vector<TableAttrs> parse_tables(std::string_view body, int lineno) {
  std::vector<TableAttrs> out;
  if (body.empty()) return out;
  for (const std::string& level : split(body, ',')) {
    TableAttrs t;
    if (level != "none") {
      for (const std::string& attr : split(level, '+')) {
        if (attr == "aptable0") t.aptable0 = true;
        else if (attr == "aptable1") t.aptable1 = true;
        else if (attr == "uxntable") t.uxntable = true;
        else if (attr == "pxntable") t.pxntable = true;
        else
          throw PolicyError(PolicyError::Kind::MalformedLayout,
                            "layout line " + std::to_string(lineno) +
                                ": unknown table attribute '" + attr + "'");
      }
    }
    out.push_back(t);
  }
  return out;
}

std::string tables_to_text(const std::vector<TableAttrs>& tables) {
  std::string out = "[";
  for (size_t i = 0; i < tables.size(); ++i) {
    if (i) out += ',';
    std::string level;
    auto add = [&level](const char* name) {
      if (!level.empty()) level += '+';
      level += name;
    };
    if (tables[i].aptable0) add("aptable0");
    if (tables[i].aptable1) add("aptable1");
    if (tables[i].uxntable) add("uxntable");
    if (tables[i].pxntable) add("pxntable");
    out += level.empty() ? "none" : level;
  }
  return out + "]";
}

const char* el_name(El el) {
  switch (el) {
    case El::El0: return "el0";
    case El::El1t: return "el1t";
    case El::El1h: return "el1h";
  }
  return "?";
}

El el_from_name(std::string_view s, int lineno) {
  if (s == "el0") return El::El0;
  if (s == "el1t") return El::El1t;
  if (s == "el1h") return El::El1h;
  throw PolicyError(PolicyError::Kind::MalformedLayout,
                    "layout line " + std::to_string(lineno) +
                        ": bad exception level '" + std::string(s) + "'");
}

}  // namespace

const Region* MemoryLayout::find(std::string_view name) const {
  for (const Region& r : regions)
    if (r.name == name) return &r;
  return nullptr;
}

Region* MemoryLayout::find(std::string_view name) {
  for (Region& r : regions)
    if (r.name == name) return &r;
  return nullptr;
}

const Region* MemoryLayout::region_at(uint64_t addr) const {
  for (const Region& r : regions)
    if (r.contains(addr)) return &r;
  return nullptr;
}

bool MemoryLayout::has_role(RegionRole role) const {
  return std::any_of(regions.begin(), regions.end(),
                     [role](const Region& r) { return r.role == role; });
}

Verdict region_check(const CpuSecState& state, const Region& region,
                     AccessKind kind, AccessVia via) {
  if (!region.mapped) return Verdict::deny(FaultReason::NotMapped);
  AccessRequest req;
  req.kind = kind;
  req.privileged = state.privileged();
  req.via = via;
  req.half = region.half;
  return check_access(state, region.path, req);
}

// Structural validation only. Attribute weaknesses (a reachable guard, a
// shadow stack the vetted LSU path cannot reach, ...) are the auditor's job
// to report, not a reason to reject the layout.
void validate_layout(const MemoryLayout& layout) {
  std::set<std::string> names;
  for (const Region& r : layout.regions) {
    if (r.name.empty())
      throw PolicyError(PolicyError::Kind::MalformedLayout,
                        "region with empty name");
    if (!names.insert(r.name).second)
      throw PolicyError(PolicyError::Kind::MalformedLayout,
                        "duplicate region name '" + r.name + "'");
    if (r.size == 0)
      throw PolicyError(PolicyError::Kind::MalformedLayout,
                        "region '" + r.name + "' has no extent");
  }
  // Every shadow stack must sit between two guard regions.
  for (const Region& r : layout.regions) {
    if (r.role != RegionRole::ShadowStack) continue;
    bool low = false, high = false;
    for (const Region& g : layout.regions) {
      if (g.role != RegionRole::Guard) continue;
      if (g.end() == r.base) low = true;
      if (g.base == r.end()) high = true;
    }
    if (!low || !high)
      throw PolicyError(PolicyError::Kind::MalformedLayout,
                        "shadow stack '" + r.name +
                            "' is not surrounded by guard regions");
  }
}

std::string MemoryLayout::to_text() const {
  std::ostringstream os;
  os << "# memory layout\n";
  if (mode) os << "mode " << isolation_mode_name(*mode) << "\n";
  auto emit_state = [&os](const char* which, const CpuSecState& s) {
    os << "state " << which << " el=" << el_name(s.el) << " pan=" << s.pan
       << " uao=" << s.uao << " hpd0=" << s.hpd0 << " hpd1=" << s.hpd1
       << " e0pd0=" << s.e0pd0 << " e0pd1=" << s.e0pd1 << "\n";
  };
  if (elevated_state) emit_state("elevated", *elevated_state);
  if (legacy_state) emit_state("legacy", *legacy_state);
  if (shadow_span) {
    os << "span shadow base=0x" << std::hex << shadow_span->base << " size=0x"
       << shadow_span->size << " guard=0x" << shadow_span->guard_size
       << std::dec << "\n";
  }
  for (const Region& r : regions) {
    os << "region " << r.name << " " << region_role_name(r.role) << " "
       << (r.half == AddrHalf::Lower ? "lower" : "upper");
    os << " owner="
       << (r.owner ? task_kind_name(*r.owner) : "none");
    const LeafAttrs& a = r.path.leaf;
    os << " ap1=" << a.ap1 << " ap2=" << a.ap2 << " uxn=" << a.uxn
       << " pxn=" << a.pxn << " ktag=" << a.kernel_tag
       << " mapped=" << r.mapped << " pinned=" << r.pinned;
    os << " base=0x" << std::hex << r.base << " size=0x" << r.size << std::dec;
    os << " tables=" << tables_to_text(r.path.tables) << "\n";
  }
  return os.str();
}

MemoryLayout MemoryLayout::from_text(std::string_view text) {
  MemoryLayout layout;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "mode") {
      std::string m;
      ls >> m;
      if (m == "hpds") layout.mode = IsolationMode::Hpds;
      else if (m == "e0pd") layout.mode = IsolationMode::E0pd;
      else
        throw PolicyError(PolicyError::Kind::MalformedLayout,
                          "layout line " + std::to_string(lineno) +
                              ": unknown mode '" + m + "'");
    } else if (word == "state") {
      std::string which;
      ls >> which;
      CpuSecState s;
      std::string kv;
      while (ls >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw PolicyError(PolicyError::Kind::MalformedLayout,
                            "layout line " + std::to_string(lineno) +
                                ": expected key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "el") s.el = el_from_name(val, lineno);
        else if (key == "pan") s.pan = parse_bool(val, lineno);
        else if (key == "uao") s.uao = parse_bool(val, lineno);
        else if (key == "hpd0") s.hpd0 = parse_bool(val, lineno);
        else if (key == "hpd1") s.hpd1 = parse_bool(val, lineno);
        else if (key == "e0pd0") s.e0pd0 = parse_bool(val, lineno);
        else if (key == "e0pd1") s.e0pd1 = parse_bool(val, lineno);
        else
          throw PolicyError(PolicyError::Kind::MalformedLayout,
                            "layout line " + std::to_string(lineno) +
                                ": unknown state key '" + key + "'");
      }
      if (which == "elevated") layout.elevated_state = s;
      else if (which == "legacy") layout.legacy_state = s;
      else
        throw PolicyError(PolicyError::Kind::MalformedLayout,
                          "layout line " + std::to_string(lineno) +
                              ": unknown state '" + which + "'");
    } else if (word == "span") {
      std::string which;
      ls >> which;
      ShadowSpan span;
      std::string kv;
      while (ls >> kv) {
        auto eq = kv.find('=');
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "base") span.base = parse_u64(val, lineno);
        else if (key == "size") span.size = parse_u64(val, lineno);
        else if (key == "guard") span.guard_size = parse_u64(val, lineno);
      }
      layout.shadow_span = span;
    } else if (word == "region") {
      Region r;
      std::string role, half;
      if (!(ls >> r.name >> role >> half))
        throw PolicyError(PolicyError::Kind::MalformedLayout,
                          "layout line " + std::to_string(lineno) +
                              ": region needs <name> <role> <half>");
      auto rr = region_role_from_name(role);
      if (!rr)
        throw PolicyError(PolicyError::Kind::MalformedLayout,
                          "layout line " + std::to_string(lineno) +
                              ": unknown role '" + role + "'");
      r.role = *rr;
      if (half == "lower") r.half = AddrHalf::Lower;
      else if (half == "upper") r.half = AddrHalf::Upper;
      else
        throw PolicyError(PolicyError::Kind::MalformedLayout,
                          "layout line " + std::to_string(lineno) +
                              ": bad half '" + half + "'");
      bool saw_ap1 = false, saw_ap2 = false, saw_uxn = false, saw_pxn = false;
      std::string kv;
      while (ls >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw PolicyError(PolicyError::Kind::MalformedLayout,
                            "layout line " + std::to_string(lineno) +
                                ": expected key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "ap1") { r.path.leaf.ap1 = parse_bool(val, lineno); saw_ap1 = true; }
        else if (key == "ap2") { r.path.leaf.ap2 = parse_bool(val, lineno); saw_ap2 = true; }
        else if (key == "uxn") { r.path.leaf.uxn = parse_bool(val, lineno); saw_uxn = true; }
        else if (key == "pxn") { r.path.leaf.pxn = parse_bool(val, lineno); saw_pxn = true; }
        else if (key == "ktag") r.path.leaf.kernel_tag = parse_bool(val, lineno);
        else if (key == "mapped") r.mapped = parse_bool(val, lineno);
        else if (key == "pinned") r.pinned = parse_bool(val, lineno);
        else if (key == "base") r.base = parse_u64(val, lineno);
        else if (key == "size") r.size = parse_u64(val, lineno);
        else if (key == "owner") {
          if (val == "elevated") r.owner = TaskKind::Elevated;
          else if (val == "legacy") r.owner = TaskKind::Legacy;
          else if (val == "none") r.owner = std::nullopt;
          else
            throw PolicyError(PolicyError::Kind::MalformedLayout,
                              "layout line " + std::to_string(lineno) +
                                  ": bad owner '" + val + "'");
        } else if (key == "tables") {
          if (!val.starts_with('[') || !val.ends_with(']'))
            throw PolicyError(PolicyError::Kind::MalformedLayout,
                              "layout line " + std::to_string(lineno) +
                                  ": tables=[...] expected");
          r.path.tables =
              parse_tables(std::string_view(val).substr(1, val.size() - 2),
                           lineno);
        } else {
          throw PolicyError(PolicyError::Kind::MalformedLayout,
                            "layout line " + std::to_string(lineno) +
                                ": unknown region key '" + key + "'");
        }
      }
      if (r.mapped && !(saw_ap1 && saw_ap2 && saw_uxn && saw_pxn))
        throw PolicyError(PolicyError::Kind::MalformedLayout,
                          "layout line " + std::to_string(lineno) +
                              ": region lacks attributes");
      layout.regions.push_back(std::move(r));
    } else {
      throw PolicyError(PolicyError::Kind::MalformedLayout,
                        "layout line " + std::to_string(lineno) +
                            ": unknown directive '" + word + "'");
    }
  }
  return layout;
}

MemoryLayout MemoryLayout::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw PolicyError(PolicyError::Kind::MalformedLayout,
                      "cannot open layout file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

const char* task_kind_name(TaskKind k) {
  return k == TaskKind::Legacy ? "legacy" : "elevated";
}

const char* region_role_name(RegionRole r) {
  switch (r) {
    case RegionRole::TaskCode: return "TaskCode";
    case RegionRole::TaskData: return "TaskData";
    case RegionRole::ShadowStack: return "ShadowStack";
    case RegionRole::Guard: return "Guard";
    case RegionRole::KernelCode: return "KernelCode";
    case RegionRole::KernelData: return "KernelData";
  }
  return "?";
}

const char* isolation_mode_name(IsolationMode m) {
  return m == IsolationMode::Hpds ? "hpds" : "e0pd";
}

std::optional<RegionRole> region_role_from_name(std::string_view name) {
  if (name == "TaskCode") return RegionRole::TaskCode;
  if (name == "TaskData") return RegionRole::TaskData;
  if (name == "ShadowStack") return RegionRole::ShadowStack;
  if (name == "Guard") return RegionRole::Guard;
  if (name == "KernelCode") return RegionRole::KernelCode;
  if (name == "KernelData") return RegionRole::KernelData;
  return std::nullopt;
}

}  // namespace cfprot
