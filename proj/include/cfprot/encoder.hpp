#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfprot/asm_ir.hpp"

namespace cfprot {

// A program laid out as A64 words at a concrete base address: functions and
// blocks in order, four bytes per instruction, no padding. The simulator
// interprets the IR but serves loads from these bytes, so CFI label probes
// read the genuine encodings.
struct CodeImage {
  struct Site {
    uint32_t func = 0;
    uint32_t block = 0;
    uint32_t instr = 0;
  };

  uint64_t base = 0;
  std::vector<uint32_t> words;
  std::vector<Site> sites;  // one per word
  std::unordered_map<std::string, uint64_t> function_addr;
  std::vector<std::unordered_map<std::string, uint64_t>> block_addr;

  uint64_t end() const { return base + words.size() * 4; }
  std::optional<Site> site_at(uint64_t addr) const;
  // Block label of the given function first, then any function name.
  std::optional<uint64_t> resolve(uint32_t func_idx,
                                  const std::string& label) const;
  std::vector<uint8_t> bytes() const;
};

CodeImage encode_program(const Program& p, uint64_t base);

// Encodes one instruction; label operands are resolved to absolute addresses
// through `resolve`. Throws ToolError for unencodable operands (out-of-range
// offsets, invalid bitmask immediates).
uint32_t encode_instr(
    const Instr& instr, uint64_t pc,
    const std::function<uint64_t(const std::string&)>& resolve);

// AND-immediate helper: value -> (N, immr, imms). False if the value is not
// representable as a logical immediate.
bool encode_bitmask_imm(uint64_t value, uint32_t* n, uint32_t* immr,
                        uint32_t* imms);

}  // namespace cfprot
