// shadowlab: assemble, instrument, run, attack, and measure MiniISA
// programs under the shadow-stack design-space configurations.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "shadowlab/asm.hpp"
#include "shadowlab/attacks.hpp"
#include "shadowlab/integrity.hpp"
#include "shadowlab/loader.hpp"
#include "shadowlab/metrics.hpp"
#include "shadowlab/runner.hpp"
#include "shadowlab/shadow_pass.hpp"

using namespace shadowlab;

namespace {

constexpr int kExitClean = 0;
constexpr int kExitPrevented = 1;
constexpr int kExitUsage = 2;
constexpr int kExitHijacked = 3;
constexpr int kExitInternal = 4;
constexpr int kExitFaultBase = 10; // 10 + FaultKind for plain-run faults

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

uint64_t default_seed() {
  if (const char* env = std::getenv("SHADOWLAB_SEED")) {
    return std::strtoull(env, nullptr, 0);
  }
  return 0;
}

struct CfgFlags {
  std::string map = "compact-register";
  std::string validate = "use-shadow";
  std::string integrity = "info-hiding";
  std::string variant = "full";
  int64_t offset = 0x3f000000;
  uint64_t seed = default_seed();

  void attach(CLI::App* cmd) {
    cmd->add_option("--map", map, "mapping mechanism");
    cmd->add_option("--validate", validate, "validation policy");
    cmd->add_option("--integrity", integrity, "integrity scheme");
    cmd->add_option("--variant", variant,
                    "baseline|pop-jmp-only|maintain-only|full");
    cmd->add_option("--offset", offset, "parallel-constant offset");
    cmd->add_option("--seed", seed, "run seed (SHADOWLAB_SEED overrides 0)");
  }

  ShadowConfig to_config() const {
    ShadowConfig cfg;
    auto m = mapping_from_name(map);
    auto v = validation_from_name(validate);
    auto i = integrity_from_name(integrity);
    auto va = variant_from_name(variant);
    if (!m || !v || !i || !va)
      throw CLI::ValidationError("unknown --map/--validate/--integrity/--variant");
    cfg.mapping = *m;
    cfg.validation = *v;
    cfg.integrity = *i;
    cfg.variant = *va;
    if (offset > INT32_MAX || offset < INT32_MIN)
      throw CLI::ValidationError("--offset exceeds 32 bits");
    cfg.parallel_offset = offset;
    return cfg;
  }
};

Report run_report(const RunResult& r, const ShadowConfig& cfg,
                  uint64_t seed) {
  Report rep;
  rep.title = "shadowlab run";
  rep.params = {{"mapping", mapping_name(cfg.mapping)},
                {"validation", validation_name(cfg.validation)},
                {"integrity", integrity_name(cfg.integrity)},
                {"variant", variant_name(cfg.variant)},
                {"seed", std::to_string(seed)}};
  Report::Table t;
  t.name = "metrics";
  t.columns = {"metric", "value"};
  for (auto& [k, v] : metrics_rows(r)) t.rows.push_back({k, v});
  rep.tables.push_back(std::move(t));
  Report::Table o;
  o.name = "output";
  o.columns = {"index", "value"};
  for (size_t i = 0; i < r.output.size(); i++)
    o.rows.push_back({std::to_string(i), std::to_string(r.output[i])});
  rep.tables.push_back(std::move(o));
  if (r.fault) {
    rep.notes.push_back(std::string("fault: ") +
                        fault_kind_name(r.fault->kind) + " at step " +
                        std::to_string(r.fault->step));
  }
  if (r.finding) rep.notes.push_back("finding: " + *r.finding);
  return rep;
}

void print_report(const Report& rep, const std::string& format) {
  if (format == "json")
    std::cout << report_json(rep);
  else
    std::cout << report_text(rep);
}

int cmd_run(const std::string& path, const CfgFlags& flags,
            const std::string& attack_path, const std::string& trace_path,
            const std::string& format) {
  Program p = parse_program(read_file(path));
  ShadowConfig cfg = flags.to_config();
  if (!attack_path.empty()) {
    AttackScenario s = parse_scenario(read_file(attack_path));
    AttackResult res = run_scenario(p, cfg, s, flags.seed);
    Report rep;
    rep.title = "shadowlab attack run";
    rep.params = {{"mapping", mapping_name(cfg.mapping)},
                  {"validation", validation_name(cfg.validation)},
                  {"integrity", integrity_name(cfg.integrity)},
                  {"scenario", attack_kind_name(s.kind)},
                  {"seed", std::to_string(flags.seed)}};
    Report::Table t;
    t.name = "attack-result";
    t.columns = {"field", "value"};
    t.rows.push_back({"outcome", outcome_name(res.outcome)});
    t.rows.push_back(
        {"fault", res.fault_kind ? fault_kind_name(*res.fault_kind) : "-"});
    t.rows.push_back({"steps", std::to_string(res.steps_to_outcome)});
    t.rows.push_back({"interventions", std::to_string(res.interventions)});
    if (!res.note.empty()) t.rows.push_back({"note", res.note});
    rep.tables.push_back(std::move(t));
    print_report(rep, format);
    switch (res.outcome) {
      case Outcome::Hijacked: return kExitHijacked;
      case Outcome::Prevented: return kExitPrevented;
      case Outcome::Crashed: return kExitPrevented;
      case Outcome::NoEffect: return kExitClean;
    }
    return kExitInternal;
  }
  RunOptions opt;
  opt.seed = flags.seed;
  opt.record_trace = !trace_path.empty();
  RunResult r = run_program(p, cfg, opt);
  if (!trace_path.empty()) {
    std::string text;
    for (auto& line : r.trace) text += line + "\n";
    write_file(trace_path, text);
  }
  print_report(run_report(r, cfg, flags.seed), format);
  if (r.fault) return kExitFaultBase + int(r.fault->kind);
  if (r.finding) return kExitFaultBase + int(FaultKind::Unmapped);
  return kExitClean;
}

int cmd_asm(const std::string& in_path, const std::string& out_path) {
  Program p = parse_program(read_file(in_path));
  std::string text = emit_program(p);
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text);
  return kExitClean;
}

int cmd_instrument(const std::string& in_path, const CfgFlags& flags,
                   const std::string& out_path) {
  Program p = parse_program(read_file(in_path));
  ShadowConfig cfg = flags.to_config();
  InstrumentationReport report;
  Program out = apply_integrity(build_protected(p, cfg, &report), cfg);
  std::string text = emit_program(out);
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text);
  std::cerr << "instrumentation report (added instructions per function):\n";
  for (auto& [fn, n] : report.added_per_function)
    std::cerr << "  " << fn << ": " << n << "\n";
  std::cerr << "  total: " << report.total_added << "\n";
  return kExitClean;
}

int cmd_matrix(const std::string& dir, uint64_t seed,
               const std::string& format) {
  CompatSuite suite;
  suite.threads_cross = parse_program(read_file(dir + "/threads_cross.msa"));
  suite.sjlj = parse_program(read_file(dir + "/sjlj.msa"));
  suite.callback_conv = parse_program(read_file(dir + "/callback_conv.msa"));
  suite.callback_clobber =
      parse_program(read_file(dir + "/callback_clobber.msa"));
  CompatMatrixResult mat = compat_matrix(suite, seed);
  Report rep;
  rep.title = "compatibility matrix";
  rep.params = {{"seed", std::to_string(seed)}};
  Report::Table t;
  t.name = "matrix";
  t.columns = {"mapping", kMatrixCols[0], kMatrixCols[1], kMatrixCols[2]};
  for (int row = 0; row < 5; row++) {
    std::vector<std::string> cells = {mapping_name(kMatrixRows[row])};
    for (int col = 0; col < 3; col++)
      cells.push_back(compat_mark_str(mat.cells[row][col].mark));
    t.rows.push_back(std::move(cells));
  }
  rep.tables.push_back(std::move(t));
  for (int row = 0; row < 5; row++)
    for (int col = 0; col < 3; col++)
      if (!mat.cells[row][col].note.empty())
        rep.notes.push_back(std::string(mapping_name(kMatrixRows[row])) + "/" +
                            kMatrixCols[col] + ": " +
                            mat.cells[row][col].note);
  print_report(rep, format);
  return kExitClean;
}

struct SweepConfig {
  std::vector<std::string> maps;
  std::vector<std::string> validations;
  std::vector<std::string> integrities;
  std::vector<std::string> workloads;
  std::vector<std::pair<std::string, std::string>> attacks; // victim:scenario
  std::string breakdown;
  std::string matrix_dir;
  int jobs = 1;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

SweepConfig parse_sweep_config(const std::string& text) {
  SweepConfig sc;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && std::isspace((unsigned char)s.front()))
        s.erase(s.begin());
      while (!s.empty() && std::isspace((unsigned char)s.back())) s.pop_back();
    };
    trim(key);
    trim(val);
    if (key == "maps") sc.maps = split_list(val);
    else if (key == "validations") sc.validations = split_list(val);
    else if (key == "integrities") sc.integrities = split_list(val);
    else if (key == "workloads") sc.workloads = split_list(val);
    else if (key == "attacks") {
      for (auto& pair : split_list(val)) {
        auto colon = pair.find(':');
        if (colon == std::string::npos)
          throw std::runtime_error("attacks entries are victim.msa:file.atk");
        sc.attacks.emplace_back(pair.substr(0, colon), pair.substr(colon + 1));
      }
    } else if (key == "breakdown") sc.breakdown = val;
    else if (key == "matrix") sc.matrix_dir = val;
    else if (key == "jobs") sc.jobs = std::stoi(val);
    else throw std::runtime_error("unknown sweep key: " + key);
  }
  if (sc.maps.empty())
    sc.maps = {"compact-global", "compact-segment", "compact-register",
               "parallel-constant", "parallel-register"};
  if (sc.validations.empty())
    sc.validations = {"cmp", "fault", "lbp", "use-shadow"};
  if (sc.integrities.empty()) sc.integrities = {"info-hiding"};
  return sc;
}

int cmd_sweep(const std::string& config_path, uint64_t seed, int jobs_flag,
              const std::string& format) {
  SweepConfig sc = parse_sweep_config(read_file(config_path));
  if (jobs_flag > 0) sc.jobs = jobs_flag;
  Report rep;
  rep.title = "shadowlab sweep";
  rep.params = {{"config", config_path}, {"seed", std::to_string(seed)}};

  // Workload grid: one row per (config, workload), cells computed
  // independently (optionally in parallel), assembled in order.
  if (!sc.workloads.empty()) {
    struct Cell {
      std::string map, val, integ, workload;
      std::string status;
      uint64_t dyn = 0;
      int64_t delta = 0;
    };
    std::vector<Cell> cells;
    for (auto& m : sc.maps)
      for (auto& v : sc.validations)
        for (auto& i : sc.integrities)
          for (auto& w : sc.workloads) cells.push_back({m, v, i, w, "", 0, 0});
    auto work = [&](size_t idx) {
      Cell& c = cells[idx];
      try {
        Program p = parse_program(read_file(c.workload));
        ShadowConfig cfg;
        cfg.mapping = *mapping_from_name(c.map);
        cfg.validation = *validation_from_name(c.val);
        cfg.integrity = *integrity_from_name(c.integ);
        RunOptions opt;
        opt.seed = seed;
        ShadowConfig base = cfg;
        base.variant = Variant::Baseline;
        RunResult rb = run_program(p, base, opt);
        RunResult r = run_program(p, cfg, opt);
        c.dyn = r.dynamic_total;
        c.delta = int64_t(r.dynamic_total) - int64_t(rb.dynamic_total);
        c.status = r.clean ? (r.output == rb.output ? "ok" : "output-diverged")
                           : (r.fault ? fault_kind_name(r.fault->kind)
                                      : "finding");
      } catch (const std::exception& e) {
        c.status = std::string("error: ") + e.what();
      }
    };
    if (sc.jobs <= 1) {
      for (size_t i = 0; i < cells.size(); i++) work(i);
    } else {
      std::vector<std::thread> pool;
      std::atomic<size_t> next{0};
      for (int j = 0; j < sc.jobs; j++)
        pool.emplace_back([&] {
          for (size_t i = next++; i < cells.size(); i = next++) work(i);
        });
      for (auto& th : pool) th.join();
    }
    Report::Table t;
    t.name = "workload-grid";
    t.columns = {"mapping", "validation", "integrity",
                 "workload", "status",    "dynamic",
                 "delta-vs-baseline"};
    for (auto& c : cells)
      t.rows.push_back({c.map, c.val, c.integ, c.workload, c.status,
                        std::to_string(c.dyn), std::to_string(c.delta)});
    rep.tables.push_back(std::move(t));
  }

  if (!sc.attacks.empty()) {
    Report::Table t;
    t.name = "attack-outcomes";
    t.columns = {"mapping", "validation", "scenario", "outcome", "fault"};
    for (auto& [victim_path, atk_path] : sc.attacks) {
      Program victim = parse_program(read_file(victim_path));
      AttackScenario s = parse_scenario(read_file(atk_path));
      for (auto& m : sc.maps) {
        for (auto& v : sc.validations) {
          ShadowConfig cfg;
          cfg.mapping = *mapping_from_name(m);
          cfg.validation = *validation_from_name(v);
          cfg.integrity = IntegrityKind::InfoHiding;
          AttackResult res = run_scenario(victim, cfg, s, seed);
          t.rows.push_back(
              {m, v, attack_kind_name(s.kind), outcome_name(res.outcome),
               res.fault_kind ? fault_kind_name(*res.fault_kind) : "-"});
        }
      }
      ShadowConfig base;
      base.variant = Variant::Baseline;
      AttackResult res = run_scenario(victim, base, s, seed);
      t.rows.push_back({"baseline", "-", attack_kind_name(s.kind),
                        outcome_name(res.outcome),
                        res.fault_kind ? fault_kind_name(*res.fault_kind)
                                       : "-"});
    }
    rep.tables.push_back(std::move(t));
    rep.notes.push_back(
        "toctou rows, when present, demonstrate window existence under a "
        "deterministic schedule, not an exploitability probability");
  }

  if (!sc.breakdown.empty()) {
    Program p = parse_program(read_file(sc.breakdown));
    ShadowConfig cfg;
    cfg.mapping = Mapping::CompactRegister;
    cfg.validation = Validation::UseShadow;
    auto rows = overhead_breakdown(p, cfg, seed);
    Report::Table t;
    t.name = "overhead-breakdown";
    t.columns = {"variant", "dynamic", "delta-vs-baseline"};
    for (auto& row : rows)
      t.rows.push_back({variant_name(row.variant),
                        std::to_string(row.dynamic_total),
                        std::to_string(row.delta)});
    rep.tables.push_back(std::move(t));
  }

  if (!sc.matrix_dir.empty()) {
    CompatSuite suite;
    suite.threads_cross =
        parse_program(read_file(sc.matrix_dir + "/threads_cross.msa"));
    suite.sjlj = parse_program(read_file(sc.matrix_dir + "/sjlj.msa"));
    suite.callback_conv =
        parse_program(read_file(sc.matrix_dir + "/callback_conv.msa"));
    suite.callback_clobber =
        parse_program(read_file(sc.matrix_dir + "/callback_clobber.msa"));
    CompatMatrixResult mat = compat_matrix(suite, seed);
    Report::Table t;
    t.name = "compatibility-matrix";
    t.columns = {"mapping", kMatrixCols[0], kMatrixCols[1], kMatrixCols[2]};
    for (int row = 0; row < 5; row++) {
      std::vector<std::string> cells = {mapping_name(kMatrixRows[row])};
      for (int col = 0; col < 3; col++)
        cells.push_back(compat_mark_str(mat.cells[row][col].mark));
      t.rows.push_back(std::move(cells));
    }
    rep.tables.push_back(std::move(t));
  }

  print_report(rep, format);
  return kExitClean;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"shadow-stack design-space simulator"};
  app.require_subcommand(1);
  std::string format = "text";
  app.add_option("--format", format, "text|json")->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "assemble, instrument, execute");
  std::string run_path, attack_path, trace_path;
  CfgFlags run_flags;
  run->add_option("program", run_path, "MiniISA source")->required();
  run_flags.attach(run);
  run->add_option("--attack", attack_path, "attack scenario file");
  run->add_option("--trace", trace_path, "write the step trace to a file");

  // asm / disasm
  auto* casm = app.add_subcommand("asm", "canonicalize a program");
  std::string asm_in, asm_out;
  casm->add_option("program", asm_in)->required();
  casm->add_option("-o,--out", asm_out);
  auto* cdis = app.add_subcommand("disasm", "canonicalize a program");
  std::string dis_in, dis_out;
  cdis->add_option("program", dis_in)->required();
  cdis->add_option("-o,--out", dis_out);

  // instrument
  auto* inst = app.add_subcommand("instrument", "emit the instrumented program");
  std::string inst_in, inst_out;
  CfgFlags inst_flags;
  inst->add_option("program", inst_in)->required();
  inst_flags.attach(inst);
  inst->add_option("-o,--out", inst_out);

  // matrix
  auto* mtx = app.add_subcommand("matrix", "compatibility matrix");
  std::string mtx_dir = "workloads";
  uint64_t mtx_seed = default_seed();
  mtx->add_option("--suite", mtx_dir, "directory with the compat workloads");
  mtx->add_option("--seed", mtx_seed);

  // sweep
  auto* swp = app.add_subcommand("sweep", "configuration sweep");
  std::string swp_config;
  uint64_t swp_seed = default_seed();
  int swp_jobs = 0;
  swp->add_option("config", swp_config, "key=value sweep config")->required();
  swp->add_option("--seed", swp_seed);
  swp->add_option("--jobs", swp_jobs, "parallel cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitClean : kExitUsage;
  }

  try {
    if (run->parsed())
      return cmd_run(run_path, run_flags, attack_path, trace_path, format);
    if (casm->parsed()) return cmd_asm(asm_in, asm_out);
    if (cdis->parsed()) return cmd_asm(dis_in, dis_out);
    if (inst->parsed()) return cmd_instrument(inst_in, inst_flags, inst_out);
    if (mtx->parsed()) return cmd_matrix(mtx_dir, mtx_seed, format);
    if (swp->parsed()) return cmd_sweep(swp_config, swp_seed, swp_jobs, format);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
