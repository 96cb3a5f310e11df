#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfprot/decoder.hpp"

namespace cfprot {

// Result of scanning one code page. A single forbidden instruction anywhere
// denies execution of the whole page.
struct ScanVerdict {
  bool allowed = true;
  struct Violation {
    size_t offset;  // byte offset of the word within the page
    InstrClass instr;
  };
  std::vector<Violation> violations;
};

// Linear non-overlapping scan: decodes each aligned 4-byte word once, in
// order. Length must be a positive multiple of 4 (throws ScanError
// otherwise).
ScanVerdict scan_page(std::span<const uint8_t> bytes, const Allowlist& allow);

// Independent per-page verdicts; a task is loadable iff every page is
// allowed. Propagates the unaligned-length error with the page index.
std::vector<ScanVerdict> scan_task(
    const std::vector<std::vector<uint8_t>>& pages, const Allowlist& allow);

// Test hook: number of decode() calls made by scan_page since process start.
uint64_t scan_decode_count();

}  // namespace cfprot
