#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shadowlab/config.hpp"
#include "shadowlab/isa.hpp"
#include "shadowlab/loader.hpp"
#include "shadowlab/machine.hpp"

namespace shadowlab {

struct RunOptions {
  uint64_t seed = 0;
  bool record_trace = false;
  uint64_t max_steps = 50'000'000;
  SpawnMode spawn_mode = SpawnMode::Hooked;
  std::map<uint64_t, int> schedule;
};

struct RunResult {
  bool clean = false; // halted with no fault and no finding
  std::optional<Fault> fault;
  std::optional<std::string> finding;
  std::vector<uint64_t> output;

  uint64_t dynamic_total = 0;
  uint64_t by_role[5] = {};
  uint64_t calls = 0;
  uint64_t returns = 0;
  uint64_t max_oracle_depth = 0;
  std::vector<OracleDivergence> divergences;
  std::vector<std::string> trace;

  uint64_t shadow_alloc_bytes = 0;
  uint64_t shadow_high_water = 0; // compact mappings; bytes of entries used
  uint64_t stack_high_water = 0;
  bool shadow_balanced = true;

  size_t baseline_instructions = 0;
  size_t instrumented_instructions = 0;
};

// Instrumented image ready to execute (or being executed by the attack
// engine / compat runner).
struct PreparedRun {
  Program instrumented;
  LoadedImage image;
};

// instrument + integrity + load. Throws InstrumentError / LoadError /
// ParseError on malformed inputs.
PreparedRun prepare(const Program& src, const ShadowConfig& cfg,
                    const RunOptions& opt);

// Summarizes a finished machine into a RunResult.
RunResult summarize(const PreparedRun& pr, size_t baseline_instructions);

// prepare + run + summarize.
RunResult run_program(const Program& src, const ShadowConfig& cfg,
                      const RunOptions& opt = {});

} // namespace shadowlab
