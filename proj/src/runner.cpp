#include "shadowlab/runner.hpp"

#include "shadowlab/integrity.hpp"
#include "shadowlab/shadow_pass.hpp"

namespace shadowlab {

PreparedRun prepare(const Program& src, const ShadowConfig& cfg,
                    const RunOptions& opt) {
  PreparedRun pr;
  pr.instrumented = apply_integrity(build_protected(src, cfg), cfg);
  pr.image = load(pr.instrumented, cfg, opt.seed, opt.spawn_mode);
  pr.image.machine.record_trace = opt.record_trace;
  pr.image.machine.schedule_script = opt.schedule;
  return pr;
}

RunResult summarize(const PreparedRun& pr, size_t baseline_instructions) {
  const Machine& m = pr.image.machine;
  const ShadowConfig& cfg = pr.image.cfg;
  RunResult r;
  r.fault = m.fault;
  r.finding = m.finding;
  r.clean = !m.fault && !m.finding;
  r.output = m.output;
  r.dynamic_total = m.counters.dynamic_total;
  for (int i = 0; i < 5; i++) r.by_role[i] = m.counters.by_role[i];
  r.calls = m.counters.calls;
  r.returns = m.counters.returns;
  r.divergences = m.divergences;
  r.trace = m.trace;
  r.baseline_instructions = baseline_instructions;
  r.instrumented_instructions = pr.instrumented.instruction_count();
  r.shadow_alloc_bytes = pr.image.shadow_region_size;

  for (size_t tid = 0; tid < m.threads.size(); tid++) {
    const Thread& t = m.threads[tid];
    r.max_oracle_depth = std::max(r.max_oracle_depth, t.max_oracle_depth);
    if (t.min_sp != ~0ull) {
      uint64_t top = tid == 0 ? pr.image.stack_top
                              : kThreadArenaTop +
                                    uint64_t(tid - 1) * kThreadArenaStride;
      if (top > t.min_sp)
        r.stack_high_water = std::max(r.stack_high_water, top - t.min_sp);
    }
    if (cfg.compact() && t.shadow_size) {
      uint64_t ptr = m.shadow_ptr(int(tid), cfg);
      if (ptr != t.shadow_start) r.shadow_balanced = false;
    }
  }
  if (cfg.compact()) {
    for (const auto& w : m.shadow_writes) {
      if (w.attacker) continue;
      for (const Thread& t : m.threads) {
        if (t.shadow_size && w.addr >= t.shadow_start &&
            w.addr < t.shadow_base + t.shadow_size) {
          uint64_t used = ((w.addr - t.shadow_start) / 16 + 1) * 16;
          r.shadow_high_water = std::max(r.shadow_high_water, used);
        }
      }
    }
  }
  return r;
}

RunResult run_program(const Program& src, const ShadowConfig& cfg,
                      const RunOptions& opt) {
  PreparedRun pr = prepare(src, cfg, opt);
  pr.image.machine.run(opt.max_steps);
  return summarize(pr, src.instruction_count());
}

} // namespace shadowlab
