#pragma once

#include <stdexcept>
#include <string>

#include "shadowlab/isa.hpp"

namespace shadowlab {

struct ParseError : std::runtime_error {
  ParseError(std::string msg, int line, int col)
      : std::runtime_error("line " + std::to_string(line) + ":" +
                           std::to_string(col) + ": " + msg),
        line(line),
        col(col) {}
  int line;
  int col;
};

Program parse_program(const std::string& text);
std::string emit_program(const Program& p);

// Structural equality over the round-trip model (labels, opcodes, operands,
// privilege tags, protection flags; instrumentation annotations excluded).
bool programs_equal(const Program& a, const Program& b);

} // namespace shadowlab
