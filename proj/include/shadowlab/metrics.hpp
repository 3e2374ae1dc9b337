#pragma once

#include <array>
#include <string>
#include <vector>

#include "shadowlab/attacks.hpp"
#include "shadowlab/runner.hpp"

namespace shadowlab {

struct OracleVerdict {
  bool clean = true;
  std::vector<OracleDivergence> divergences;
};

OracleVerdict compare_to_oracle(const RunResult& r);

struct BreakdownRow {
  Variant variant;
  uint64_t dynamic_total = 0;
  int64_t delta = 0; // vs baseline
};

// Runs baseline / pop-jmp-only / maintain-only / full on one workload.
std::vector<BreakdownRow> overhead_breakdown(const Program& workload,
                                             ShadowConfig cfg, uint64_t seed);

struct MemoryOverheadRow {
  uint64_t shadow_alloc = 0;
  uint64_t shadow_high_water = 0;
  uint64_t stack_high_water = 0;
  double alloc_to_stack_ratio = 0.0;
};

MemoryOverheadRow memory_overhead(const ShadowConfig& cfg, const RunResult& r);

// Compatibility matrix (threading / unwinding / unprotected code), derived
// from run outcomes. '+' supported, 'x' not supported, '*' depends on the
// convention or runtime hooks.
struct CompatSuite {
  Program threads_cross;
  Program sjlj;
  Program callback_conv;
  Program callback_clobber;
};

struct CompatCell {
  char mark = '?';
  std::string note;
};

struct CompatMatrixResult {
  // rows: mappings in Table order; cols: threading, unwinding, unprotected
  std::array<std::array<CompatCell, 3>, 5> cells;
};

inline constexpr Mapping kMatrixRows[5] = {
    Mapping::CompactGlobal, Mapping::CompactSegment, Mapping::CompactRegister,
    Mapping::ParallelConstant, Mapping::ParallelRegister};
inline constexpr const char* kMatrixCols[3] = {"threading", "unwinding",
                                               "unprotected-code"};

CompatMatrixResult compat_matrix(const CompatSuite& suite, uint64_t seed);
std::string compat_mark_str(char m); // UTF-8 rendering

// Deterministic report document: human table text plus machine-readable
// JSON with identical content and ordering.
struct Report {
  struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
  };
  std::string title;
  std::vector<std::pair<std::string, std::string>> params;
  std::vector<Table> tables;
  std::vector<std::string> notes;
};

std::string report_text(const Report& r);
std::string report_json(const Report& r);

// Metrics table rows for one run.
std::vector<std::pair<std::string, std::string>> metrics_rows(
    const RunResult& r);

} // namespace shadowlab
