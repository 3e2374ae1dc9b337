#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "shadowlab/config.hpp"
#include "shadowlab/isa.hpp"

namespace shadowlab {

struct InstrumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InstrumentationReport {
  std::map<std::string, int> added_per_function;
  int total_added = 0;
};

// Prologue / epilogue sequences for one configuration. The epilogue is the
// full replacement for a ret: shadow maintenance followed by the validation
// policy core.
std::vector<Instruction> make_prologue(const ShadowConfig& cfg);
std::vector<Instruction> make_epilogue(const ShadowConfig& cfg);

// Shadow maintenance + validation for a marked tail-call site; the final
// indirect jump is omitted and the original tail jump follows. Fault policy
// falls back to the LBP check here (no jump left to poison).
std::vector<Instruction> rewrite_tail_call(const ShadowConfig& cfg);

// Injects prologues, epilogues, and tail-call maintenance into every
// protected function. Unprotected functions are untouched.
Program instrument(const Program& p, const ShadowConfig& cfg,
                   InstrumentationReport* report = nullptr);

// setjmp/longjmp support: snapshots the top shadow entry into the jump
// buffer and unwinds the compact shadow stack by (RA, SP) match on longjmp.
// Parallel mappings are returned unchanged.
Program hook_unwind(const Program& p, const ShadowConfig& cfg);

// Thread support is enacted by the loader's spawn policy; this pass only
// validates that spawn sites are usable under the configuration.
Program hook_threads(const Program& p, const ShadowConfig& cfg);

// Full pipeline: instrument + hook_unwind + hook_threads (integrity is
// applied separately; see integrity.hpp).
Program build_protected(const Program& p, const ShadowConfig& cfg,
                        InstrumentationReport* report = nullptr);

} // namespace shadowlab
