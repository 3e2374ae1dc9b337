#pragma once

#include <string>

#include "shadowlab/config.hpp"
#include "shadowlab/isa.hpp"

namespace shadowlab {

// Applies the configured integrity scheme to an already shadow-instrumented
// program:
//   KeyScheme    - brackets every shadow-writing sequence with wrkperm
//                  toggles (4 instructions before, 4 after, per toggle)
//   BoundsScheme - 2-instruction bounds check before every application store
//   PrivMove     - privilege tags on shadow-maintenance stores, no new code
//   InfoHiding/None - unchanged
Program apply_integrity(const Program& p, const ShadowConfig& cfg);

struct IntegrityCostRow {
  std::string scheme;
  int64_t static_added = 0;
  int64_t dynamic_added = 0;
  double per_call_delta = 0.0;
};

IntegrityCostRow integrity_cost(const std::string& scheme,
                                const Program& without, const Program& with,
                                uint64_t dyn_without, uint64_t dyn_with,
                                uint64_t calls);

// wrkperm bracket halves, exposed for tests.
std::vector<Instruction> key_bracket_open();
std::vector<Instruction> key_bracket_close(uint8_t shadow_key);

} // namespace shadowlab
