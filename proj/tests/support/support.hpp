#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfprot/asm_ir.hpp"
#include "cfprot/perm_model.hpp"

namespace cfprot::test {

inline std::string test_dir() { return CFPROT_TEST_DIR; }

// --- Committed corpus -------------------------------------------------------

struct CorpusEntry {
  std::string name;
  uint64_t expected_x0;
};

const std::vector<CorpusEntry>& corpus();
std::string corpus_path(const std::string& name);
Program load_corpus_program(const std::string& name);

// --- Decode fixtures ---------------------------------------------------------

struct DecodeFixture {
  uint32_t word;
  std::string expected;  // class + operands, space separated
};

std::vector<DecodeFixture> load_decode_fixtures();

// --- Random well-formed programs ---------------------------------------------

// Structured, terminating, x16/x17/x28-free programs with calls, bounded
// loops, indirect calls and switch-style jumps. Deterministic per seed.
Program generate_program(uint64_t seed);

// --- Independent permission oracle -------------------------------------------

// Declarative re-statement of the architectural access rules, written
// separately from the library's merge-then-check implementation.
Verdict reference_check(const CpuSecState& s, const WalkPath& path,
                        const AccessRequest& r);

struct OracleCase {
  CpuSecState state;
  WalkPath path;
  AccessRequest req;
};

// The exhaustive enumeration used for the model-vs-oracle comparison:
// state bits x EL x access kind/via x leaf bits x one-level table bits
// (plus the no-table variant), all on the lower half.
std::vector<OracleCase> enumerate_oracle_cases();

}  // namespace cfprot::test
