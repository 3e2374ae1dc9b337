#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "shadowlab/config.hpp"
#include "shadowlab/isa.hpp"

namespace shadowlab {

inline constexpr uint64_t kPageSize = 4096;
inline constexpr uint64_t kInstrSlot = 16; // code bytes per instruction
inline constexpr size_t kMaxThreads = 64;

inline constexpr uint64_t page_base_of(uint64_t addr) {
  return addr & ~(kPageSize - 1);
}

// True iff bits 48..63 are all zero (user-space address model).
bool is_canonical(uint64_t addr);
int popcnt64(uint64_t v);

enum class FaultKind {
  NonCanonicalAddress,
  PermissionDenied,
  KeyDenied,
  BoundsDenied,
  Unmapped,
  ShadowMismatchAbort,
};

const char* fault_kind_name(FaultKind k);

struct Fault {
  FaultKind kind;
  uint64_t addr = 0;
  int thread = 0;
  uint64_t step = 0;
};

struct Page {
  uint64_t base = 0;
  bool readable = true;
  bool writable = true;
  bool is_code = false; // code pages are never readable or writable as data
  uint8_t key = 0;      // protection key, 0..15
  std::vector<uint8_t> bytes; // lazily sized to kPageSize
};

// KPERM bit layout: bit 2k = write-disable(key k), bit 2k+1 = read-disable.
inline constexpr uint32_t kperm_write_disable(uint8_t key) {
  return 1u << (2 * key);
}
inline constexpr uint32_t kperm_read_disable(uint8_t key) {
  return 1u << (2 * key + 1);
}

struct Thread {
  uint64_t regs[kNumRegs] = {};
  uint64_t ip = 0;
  uint64_t seg = 0;     // segment base, thread-local
  uint32_t kperm = 0;   // key-permission word, thread-local
  bool eq_flag = false;
  bool alive = true;
  // Ground-truth call-stack oracle: (return address, SP at call).
  std::vector<std::pair<uint64_t, uint64_t>> oracle;
  uint64_t max_oracle_depth = 0;
  uint64_t min_sp = ~0ull;
  uint64_t shadow_base = 0;  // compact region base (0 if none)
  uint64_t shadow_start = 0; // address of first entry slot
  uint64_t shadow_size = 0;
  uint64_t max_shadow_ptr = 0;
};

struct AccessContext {
  int thread = 0;
  Role role = Role::App;
  uint8_t priv_tag = 0;
  bool checked = false;   // subject to the bounds-scheme backstop
  bool attacker = false;  // attacker intervention (always checked, untagged,
                          // adjudicated against an armed KPERM)
};

// Integrity parameters installed by the loader.
struct IntegrityEnv {
  IntegrityKind kind = IntegrityKind::None;
  uint64_t protected_lo = 0; // [lo, hi) protected region, page-aligned
  uint64_t protected_hi = 0;
  uint64_t array_lo = 0; // allowed store array for bndcl/bndcu
  uint64_t array_hi = ~0ull;
  uint8_t region_id = 1;
  uint32_t armed_kperm = 0; // KPERM value with the shadow key write-disabled
  bool in_protected(uint64_t a) const {
    return a >= protected_lo && a < protected_hi;
  }
};

struct OracleDivergence {
  uint64_t step;
  int thread;
  uint64_t target;
  uint64_t expected;
};

struct ShadowWriteRecord {
  uint64_t step;
  uint64_t addr;
  Role role;
  bool attacker;
};

struct StepEvent {
  uint64_t step = 0;
  int thread = 0;
  // Function containing the executed instruction plus its marker, used by
  // the attack engine to position interventions.
  std::string function;
  Marker marker = Marker::None;
  bool was_call = false;
  std::string call_target; // resolved function name for direct/indirect calls
  uint64_t sp_after = 0;   // SP after the instruction retired
};

class Machine;

struct SpawnPolicy {
  // Returns false if thread setup fails (layout collision); the machine
  // records a compatibility finding and halts.
  std::function<bool(Machine&, Thread&, int tid)> setup;
};

struct RunCounters {
  uint64_t dynamic_total = 0;
  uint64_t by_role[5] = {}; // indexed by Role
  uint64_t calls = 0;       // oracle push events (incl. seeded frames)
  uint64_t returns = 0;     // oracle pop events
};

class Machine {
 public:
  Machine() = default;

  // --- construction-time plumbing (used by the loader) ---
  Page& map_page(uint64_t base, bool readable, bool writable, uint8_t key = 0,
                 bool is_code = false);
  bool is_mapped(uint64_t addr) const;
  bool range_free(uint64_t lo, uint64_t hi) const; // [lo, hi)
  void set_code(std::vector<Instruction> code, uint64_t code_base,
                std::unordered_map<std::string, uint64_t> symbols,
                std::vector<std::string> instr_function);
  int add_thread();
  void seed_oracle(int tid, uint64_t ra, uint64_t sp);

  // Raw (unadjudicated) memory access for the loader and for tests.
  void poke64(uint64_t addr, uint64_t v);
  void poke_bytes(uint64_t addr, const std::vector<uint8_t>& bytes);
  uint64_t peek64(uint64_t addr) const;

  // --- execution ---
  enum class StepStatus { Executed, Faulted, AllHalted };
  StepStatus step();
  // Runs until fault, clean halt of all threads, or the step limit.
  void run(uint64_t max_steps = 50'000'000);

  // Adjudicated access used by instruction execution and attacker pokes.
  // Returns nullopt and latches the fault on denial.
  std::optional<uint64_t> load(uint64_t addr, unsigned size,
                               const AccessContext& ctx);
  bool store(uint64_t addr, uint64_t value, unsigned size,
             const AccessContext& ctx);

  // Attacker intervention: adjudicated store with attacker context.
  // Returns true if the write landed.
  bool attacker_store(uint64_t addr, uint64_t value);

  // --- state ---
  std::vector<Thread> threads;
  std::optional<Fault> fault;
  std::vector<uint64_t> output;
  uint64_t step_count = 0;
  RunCounters counters;
  std::vector<OracleDivergence> divergences;
  bool oracle_desynced = false;
  std::vector<ShadowWriteRecord> shadow_writes;
  std::optional<std::string> finding; // load/spawn compatibility finding
  bool goal_stop = false;             // set by the attack engine
  uint64_t goal_addr = 0;
  bool goal_hit = false;
  uint64_t goal_hit_step = 0;
  uint64_t goal_hit_arg = 0; // g1 at the moment the goal was reached

  IntegrityEnv integrity;
  SpawnPolicy spawn_policy;
  uint64_t proc_exit_addr = 0;
  uint64_t thread_exit_addr = 0;

  // Deterministic interleaving: explicit picks with a round-robin tail.
  std::map<uint64_t, int> schedule_script;
  int schedule_next();

  // Trace capture (optional; line-oriented, stable field order).
  bool record_trace = false;
  std::vector<std::string> trace;

  // Last executed instruction metadata, for the attack engine.
  StepEvent last_event;

  const std::unordered_map<std::string, uint64_t>& symbols() const {
    return symbols_;
  }
  const std::map<uint64_t, Page>& pages() const { return pages_; }
  uint64_t symbol(const std::string& name) const;
  const Instruction* instr_at(uint64_t addr) const;
  std::string function_at(uint64_t addr) const;
  uint64_t code_base() const { return code_base_; }
  uint64_t code_end() const {
    return code_base_ + code_.size() * kInstrSlot;
  }

  // Current compact shadow pointer for a thread under the given config
  // (reads the encoding: register, segment word, or global word).
  uint64_t shadow_ptr(int tid, const ShadowConfig& cfg) const;
  uint64_t global_word_addr = 0; // CompactGlobal pointer word

 private:
  void exec(const Instruction& ins, int tid);
  std::optional<std::pair<FaultKind, uint64_t>> store_denial(
      uint64_t addr, unsigned size, const AccessContext& ctx) const;
  void latch_fault(FaultKind kind, uint64_t addr, int tid);
  void transfer(uint64_t target, int tid, bool is_return);
  void oracle_push(int tid, uint64_t ra, uint64_t sp);
  void oracle_return(int tid, uint64_t target);
  uint64_t effective_addr(const MemRef& m, const Thread& t) const;
  const Page* page_for(uint64_t addr) const;
  Page* page_for(uint64_t addr);
  void trace_line(std::string s);

  std::vector<Instruction> code_;
  std::vector<std::string> instr_function_;
  uint64_t code_base_ = 0;
  std::unordered_map<std::string, uint64_t> symbols_;
  std::map<uint64_t, Page> pages_;
  int rr_last_ = -1;
};

} // namespace shadowlab
