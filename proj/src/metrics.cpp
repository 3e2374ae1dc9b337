#include "shadowlab/metrics.hpp"

#include <json.hpp>

namespace shadowlab {

OracleVerdict compare_to_oracle(const RunResult& r) {
  OracleVerdict v;
  v.divergences = r.divergences;
  v.clean = r.divergences.empty();
  return v;
}

std::vector<BreakdownRow> overhead_breakdown(const Program& workload,
                                             ShadowConfig cfg, uint64_t seed) {
  std::vector<BreakdownRow> rows;
  uint64_t baseline = 0;
  for (Variant v : {Variant::Baseline, Variant::PopJmpOnly,
                    Variant::MaintainOnly, Variant::Full}) {
    cfg.variant = v;
    RunOptions opt;
    opt.seed = seed;
    RunResult r = run_program(workload, cfg, opt);
    if (v == Variant::Baseline) baseline = r.dynamic_total;
    rows.push_back({v, r.dynamic_total,
                    int64_t(r.dynamic_total) - int64_t(baseline)});
  }
  return rows;
}

MemoryOverheadRow memory_overhead(const ShadowConfig& cfg, const RunResult& r) {
  MemoryOverheadRow row;
  row.shadow_alloc = r.shadow_alloc_bytes;
  row.shadow_high_water = cfg.compact() ? r.shadow_high_water : 0;
  row.stack_high_water = r.stack_high_water;
  if (r.stack_high_water)
    row.alloc_to_stack_ratio =
        double(r.shadow_alloc_bytes) / double(r.stack_high_water);
  return row;
}

namespace {

// One compatibility sub-test: pass iff the run is clean, transparent
// against the baseline output, and shadow-balanced.
bool compat_pass(const Program& workload, const ShadowConfig& cfg,
                 uint64_t seed, SpawnMode mode, std::string* note) {
  RunOptions base_opt;
  base_opt.seed = seed;
  ShadowConfig base_cfg = cfg;
  base_cfg.variant = Variant::Baseline;
  RunResult base = run_program(workload, base_cfg, base_opt);

  RunOptions opt;
  opt.seed = seed;
  opt.spawn_mode = mode;
  RunResult r = run_program(workload, cfg, opt);
  if (!r.clean) {
    *note = r.fault ? fault_kind_name(r.fault->kind)
                    : r.finding.value_or("finding");
    return false;
  }
  if (r.output != base.output) {
    *note = "output diverges from baseline";
    return false;
  }
  if (!r.shadow_balanced) {
    *note = "shadow stack pointer not at base on exit";
    return false;
  }
  return true;
}

CompatCell judge(const std::vector<bool>& passes,
                 const std::vector<std::string>& notes) {
  CompatCell cell;
  bool all = true, none = true;
  for (bool p : passes) {
    all = all && p;
    none = none && !p;
  }
  cell.mark = all ? '+' : none ? 'x' : '*';
  for (size_t i = 0; i < notes.size(); i++)
    if (!notes[i].empty()) {
      if (!cell.note.empty()) cell.note += "; ";
      cell.note += notes[i];
    }
  return cell;
}

} // namespace

CompatMatrixResult compat_matrix(const CompatSuite& suite, uint64_t seed) {
  CompatMatrixResult mat;
  for (int row = 0; row < 5; row++) {
    ShadowConfig cfg;
    cfg.mapping = kMatrixRows[row];
    cfg.validation = Validation::Cmp;
    cfg.integrity = IntegrityKind::InfoHiding;

    // threading
    {
      std::vector<bool> passes;
      std::vector<std::string> notes(2);
      ShadowConfig tcfg = cfg;
      if (cfg.mapping == Mapping::ParallelConstant) {
        // One shared offset must suit every thread's stack at once; this
        // layout places the first child's mirror on the main stack.
        tcfg.parallel_offset = kCollidingParallelOffset;
      }
      passes.push_back(compat_pass(suite.threads_cross, tcfg, seed,
                                   SpawnMode::Hooked, &notes[0]));
      if (cfg.mapping == Mapping::ParallelRegister) {
        // Without runtime thread hooks the child inherits the parent's
        // offset; support depends on the implementation shipping them.
        passes.push_back(compat_pass(suite.threads_cross, cfg, seed,
                                     SpawnMode::PrInheritOffset, &notes[1]));
      }
      mat.cells[row][0] = judge(passes, notes);
    }
    // stack unwinding
    {
      std::vector<bool> passes;
      std::vector<std::string> notes(1);
      passes.push_back(
          compat_pass(suite.sjlj, cfg, seed, SpawnMode::Hooked, &notes[0]));
      mat.cells[row][1] = judge(passes, notes);
    }
    // unprotected code
    {
      std::vector<bool> passes;
      std::vector<std::string> notes(2);
      passes.push_back(compat_pass(suite.callback_conv, cfg, seed,
                                   SpawnMode::Hooked, &notes[0]));
      passes.push_back(compat_pass(suite.callback_clobber, cfg, seed,
                                   SpawnMode::Hooked, &notes[1]));
      mat.cells[row][2] = judge(passes, notes);
    }
  }
  return mat;
}

std::string compat_mark_str(char m) {
  switch (m) {
    case '+': return "✓";
    case 'x': return "✗";
    case '*': return "✷";
    default: return "?";
  }
}

std::string report_text(const Report& r) {
  std::string out;
  out += "== " + r.title + " ==\n";
  for (auto& [k, v] : r.params) out += k + " = " + v + "\n";
  for (auto& t : r.tables) {
    out += "\n-- " + t.name + " --\n";
    std::vector<size_t> w(t.columns.size());
    for (size_t c = 0; c < t.columns.size(); c++) w[c] = t.columns[c].size();
    for (auto& row : t.rows)
      for (size_t c = 0; c < row.size() && c < w.size(); c++)
        w[c] = std::max(w[c], row[c].size());
    auto emit_row = [&](const std::vector<std::string>& row) {
      for (size_t c = 0; c < row.size(); c++) {
        out += row[c];
        if (c + 1 < row.size())
          out += std::string(w[c] - std::min(w[c], row[c].size()) + 2, ' ');
      }
      out += "\n";
    };
    emit_row(t.columns);
    for (auto& row : t.rows) emit_row(row);
  }
  if (!r.notes.empty()) {
    out += "\n-- notes --\n";
    for (auto& n : r.notes) out += "- " + n + "\n";
  }
  return out;
}

std::string report_json(const Report& r) {
  nlohmann::ordered_json j;
  j["schema"] = "shadowlab-report/1";
  j["title"] = r.title;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (auto& [k, v] : r.params) params[k] = v;
  j["params"] = params;
  j["tables"] = nlohmann::ordered_json::array();
  for (auto& t : r.tables) {
    nlohmann::ordered_json tj;
    tj["name"] = t.name;
    tj["columns"] = t.columns;
    tj["rows"] = t.rows;
    j["tables"].push_back(tj);
  }
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

std::vector<std::pair<std::string, std::string>> metrics_rows(
    const RunResult& r) {
  std::vector<std::pair<std::string, std::string>> rows;
  auto add = [&](const std::string& k, uint64_t v) {
    rows.emplace_back(k, std::to_string(v));
  };
  add("dynamic_total", r.dynamic_total);
  add("application", r.by_role[int(Role::App)]);
  add("prologue", r.by_role[int(Role::Prologue)]);
  add("epilogue", r.by_role[int(Role::Epilogue)]);
  add("validation", r.by_role[int(Role::Validation)]);
  add("integrity", r.by_role[int(Role::Integrity)]);
  add("calls", r.calls);
  add("returns", r.returns);
  add("static_baseline", r.baseline_instructions);
  add("static_instrumented", r.instrumented_instructions);
  add("shadow_alloc_bytes", r.shadow_alloc_bytes);
  add("shadow_high_water", r.shadow_high_water);
  add("stack_high_water", r.stack_high_water);
  add("max_call_depth", r.max_oracle_depth);
  rows.emplace_back("shadow_balanced", r.shadow_balanced ? "yes" : "no");
  rows.emplace_back("oracle_divergences",
                    std::to_string(r.divergences.size()));
  return rows;
}

} // namespace shadowlab
