#include "cfprot/scanner.hpp"

#include <atomic>

#include "cfprot/errors.hpp"

namespace cfprot {

namespace {
std::atomic<uint64_t> g_decode_count{0};
}

ScanVerdict scan_page(std::span<const uint8_t> bytes, const Allowlist& allow) {
  if (bytes.empty() || bytes.size() % 4 != 0)
    throw ScanError("page length " + std::to_string(bytes.size()) +
                    " is not a positive multiple of 4");
  ScanVerdict verdict;
  for (size_t off = 0; off < bytes.size(); off += 4) {
    uint32_t w = static_cast<uint32_t>(bytes[off]) |
                 static_cast<uint32_t>(bytes[off + 1]) << 8 |
                 static_cast<uint32_t>(bytes[off + 2]) << 16 |
                 static_cast<uint32_t>(bytes[off + 3]) << 24;
    InstrClass c = decode(w);
    g_decode_count.fetch_add(1, std::memory_order_relaxed);
    if (is_forbidden(c, allow)) {
      verdict.allowed = false;
      verdict.violations.push_back({off, c});
    }
  }
  return verdict;
}

std::vector<ScanVerdict> scan_task(
    const std::vector<std::vector<uint8_t>>& pages, const Allowlist& allow) {
  std::vector<ScanVerdict> verdicts;
  verdicts.reserve(pages.size());
  for (size_t i = 0; i < pages.size(); ++i) {
    try {
      verdicts.push_back(scan_page(pages[i], allow));
    } catch (const ScanError& e) {
      throw ScanError("page " + std::to_string(i) + ": " + e.what());
    }
  }
  return verdicts;
}

uint64_t scan_decode_count() { return g_decode_count.load(); }

}  // namespace cfprot
