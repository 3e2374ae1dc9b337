#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "shadowlab/runner.hpp"

namespace shadowlab {

enum class AttackKind {
  SeqOverflow,
  ArbWriteRA,
  StackPivot,
  ToctouWrite,
  ShadowDisclose,
  ShadowOverwrite,
  CallbackClobber,
};

const char* attack_kind_name(AttackKind k);
std::optional<AttackKind> attack_kind_from_name(const std::string& s);

enum class Outcome { Hijacked, Prevented, Crashed, NoEffect };
const char* outcome_name(Outcome o);

struct Trigger {
  enum class Event { Step, CallRetired, RaLoaded, PrologueDone, RaPopped };
  Event event = Event::Step;
  uint64_t step = 0;
  std::string function;
  int occurrence = 1; // n-th matching event
  int offset = 0;     // extra committed steps after the event
};

// Attacker-computable address/value expressions over the declared
// knowledge set.
struct Expr {
  enum class Kind { Number, LabelAddr, RaSlot, ShadowTop, ShadowSlot };
  Kind kind = Kind::Number;
  uint64_t number = 0;
  std::string label;
  int64_t addend = 0;
};

struct AttackScenario {
  AttackKind kind = AttackKind::ArbWriteRA;
  Trigger trigger;
  std::vector<std::pair<Expr, Expr>> writes; // (address, value)
  std::string goal_label;                    // "win" function
  std::optional<Expr> goal_arg;              // required g1 at the goal
};

struct AttackResult {
  Outcome outcome = Outcome::NoEffect;
  std::optional<FaultKind> fault_kind;
  uint64_t steps_to_outcome = 0;
  int interventions = 0;
  std::string note;
};

AttackScenario parse_scenario(const std::string& text);
std::string scenario_kind_string(const AttackScenario& s);

AttackResult run_scenario(const Program& victim, const ShadowConfig& cfg,
                          const AttackScenario& s, uint64_t seed,
                          const RunOptions& base_opt = {});

// Fig.-1-style payload: [&pop-arg gadget, argument, &goal], consumed by
// successive returns. Empty when the gadget table lacks the pop gadget.
std::optional<std::vector<uint64_t>> build_rop_chain(
    const std::unordered_map<std::string, uint64_t>& gadgets,
    uint64_t arg_value, uint64_t goal_addr);

// TOCTTOU probe: in-window write / write after the prologue RA load /
// write to the popped slot after validation.
struct ToctouReport {
  AttackResult in_window;
  AttackResult one_step_later;
  AttackResult post_validation;
};
ToctouReport toctou_probe(const Program& victim, const ShadowConfig& cfg,
                          const std::string& target_fn, uint64_t seed);

// Scans program-readable memory (outside the shadow region itself) for the
// shadow base or any pointer into the region.
enum class LeakResult { NotFound, FoundWord, FoundByComputation };
struct LeakScan {
  LeakResult result = LeakResult::NotFound;
  uint64_t at_addr = 0;
};
LeakScan leak_scan(const PreparedRun& pr);

} // namespace shadowlab
