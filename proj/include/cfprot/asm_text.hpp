#pragma once

#include <string>
#include <string_view>

#include "cfprot/asm_ir.hpp"

namespace cfprot {

// Parses the documented assembly subset. Throws ParseError (with line and
// column) on malformed input, including DuplicateFunction and
// UnknownMnemonic conditions; unresolved branch targets are parse errors
// too, so a returned Program is structurally valid.
Program parse_program(std::string_view text,
                      std::string source_name = "<memory>");
Program load_program(const std::string& path);

// Canonical text. parse_program(print_program(p)) equals p.
std::string print_program(const Program& p);

}  // namespace cfprot
