#include "shadowlab/attacks.hpp"

#include <sstream>

namespace shadowlab {

const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::SeqOverflow: return "seq-overflow";
    case AttackKind::ArbWriteRA: return "arb-write-ra";
    case AttackKind::StackPivot: return "stack-pivot";
    case AttackKind::ToctouWrite: return "toctou-write";
    case AttackKind::ShadowDisclose: return "shadow-disclose";
    case AttackKind::ShadowOverwrite: return "shadow-overwrite";
    case AttackKind::CallbackClobber: return "callback-clobber";
  }
  return "?";
}

std::optional<AttackKind> attack_kind_from_name(const std::string& s) {
  for (AttackKind k :
       {AttackKind::SeqOverflow, AttackKind::ArbWriteRA, AttackKind::StackPivot,
        AttackKind::ToctouWrite, AttackKind::ShadowDisclose,
        AttackKind::ShadowOverwrite, AttackKind::CallbackClobber})
    if (s == attack_kind_name(k)) return k;
  return std::nullopt;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Hijacked: return "Hijacked";
    case Outcome::Prevented: return "Prevented";
    case Outcome::Crashed: return "Crashed";
    case Outcome::NoEffect: return "NoEffect";
  }
  return "?";
}

namespace {

struct ScenarioParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool parse_u64(const std::string& t, uint64_t& out) {
  try {
    size_t pos = 0;
    if (t.size() > 2 && (t.substr(0, 2) == "0x" || t.substr(0, 2) == "0X")) {
      out = std::stoull(t.substr(2), &pos, 16);
      return pos == t.size() - 2;
    }
    out = std::stoull(t, &pos, 10);
    return pos == t.size();
  } catch (...) {
    return false;
  }
}

Expr parse_expr(const std::string& tok) {
  // token [+N | -N] written without spaces, e.g. ra_slot+8, &win, 0x40
  Expr e;
  size_t split = std::string::npos;
  for (size_t i = 1; i < tok.size(); i++) {
    if (tok[i] == '+' || tok[i] == '-') split = i;
  }
  std::string head = tok.substr(0, split);
  if (split != std::string::npos) {
    uint64_t n;
    std::string rest = tok.substr(split + 1);
    if (!parse_u64(rest, n)) throw ScenarioParseError("bad offset: " + tok);
    e.addend = tok[split] == '-' ? -int64_t(n) : int64_t(n);
  }
  if (head == "ra_slot") {
    e.kind = Expr::Kind::RaSlot;
  } else if (head == "shadow_top") {
    e.kind = Expr::Kind::ShadowTop;
  } else if (head == "shadow_slot") {
    e.kind = Expr::Kind::ShadowSlot;
  } else if (!head.empty() && head[0] == '&') {
    e.kind = Expr::Kind::LabelAddr;
    e.label = head.substr(1);
  } else {
    uint64_t n;
    if (!parse_u64(head, n)) throw ScenarioParseError("bad expr: " + tok);
    e.kind = Expr::Kind::Number;
    e.number = n;
  }
  return e;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

} // namespace

AttackScenario parse_scenario(const std::string& text) {
  AttackScenario s;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    lineno++;
    auto hash = raw.find(';');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    auto toks = split_ws(raw);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    auto need = [&](size_t n) {
      if (toks.size() < n)
        throw ScenarioParseError("line " + std::to_string(lineno) +
                                 ": too few fields for " + key);
    };
    if (key == "kind") {
      need(2);
      auto k = attack_kind_from_name(toks[1]);
      if (!k) throw ScenarioParseError("unknown attack kind: " + toks[1]);
      s.kind = *k;
    } else if (key == "trigger") {
      need(2);
      Trigger t;
      std::string ev = toks[1];
      size_t i = 2;
      if (ev == "step") {
        need(3);
        t.event = Trigger::Event::Step;
        if (!parse_u64(toks[2], t.step))
          throw ScenarioParseError("bad step index");
        i = 3;
      } else {
        if (ev == "call") t.event = Trigger::Event::CallRetired;
        else if (ev == "ra-loaded") t.event = Trigger::Event::RaLoaded;
        else if (ev == "prologue-done") t.event = Trigger::Event::PrologueDone;
        else if (ev == "ra-popped") t.event = Trigger::Event::RaPopped;
        else throw ScenarioParseError("unknown trigger event: " + ev);
        need(4);
        t.function = toks[2];
        uint64_t n;
        if (!parse_u64(toks[3], n))
          throw ScenarioParseError("bad trigger occurrence");
        t.occurrence = int(n);
        i = 4;
      }
      if (i + 1 < toks.size() && toks[i] == "offset") {
        uint64_t n;
        if (!parse_u64(toks[i + 1], n))
          throw ScenarioParseError("bad trigger offset");
        t.offset = int(n);
      }
      s.trigger = t;
    } else if (key == "goal") {
      need(2);
      s.goal_label = toks[1];
      if (toks.size() >= 3) s.goal_arg = parse_expr(toks[2]);
    } else if (key == "write") {
      need(3);
      s.writes.emplace_back(parse_expr(toks[1]), parse_expr(toks[2]));
    } else {
      throw ScenarioParseError("line " + std::to_string(lineno) +
                               ": unknown key " + key);
    }
  }
  return s;
}

std::string scenario_kind_string(const AttackScenario& s) {
  return attack_kind_name(s.kind);
}

std::optional<std::vector<uint64_t>> build_rop_chain(
    const std::unordered_map<std::string, uint64_t>& gadgets,
    uint64_t arg_value, uint64_t goal_addr) {
  auto it = gadgets.find("pop_arg");
  if (it == gadgets.end()) return std::nullopt;
  return std::vector<uint64_t>{it->second, arg_value, goal_addr};
}

namespace {

class ScenarioEngine {
 public:
  ScenarioEngine(const Program& victim, const ShadowConfig& cfg,
                 const AttackScenario& s, uint64_t seed,
                 const RunOptions& base_opt)
      : scenario_(s), cfg_(cfg) {
    // Without a prologue the corruption window degenerates to the call
    // itself; prologue-relative triggers anchor there on baseline runs.
    if (cfg.variant == Variant::Baseline &&
        (scenario_.trigger.event == Trigger::Event::PrologueDone ||
         scenario_.trigger.event == Trigger::Event::RaLoaded)) {
      scenario_.trigger.event = Trigger::Event::CallRetired;
    }
    RunOptions opt = base_opt;
    opt.seed = seed;
    pr_ = prepare(victim, cfg, opt);
    max_steps_ = opt.max_steps;
  }

  AttackResult run() {
    Machine& m = pr_.image.machine;
    if (!scenario_.goal_label.empty()) {
      m.goal_stop = true;
      m.goal_addr = m.symbol(scenario_.goal_label);
    }
    AttackResult res;
    bool fired = false;
    int countdown = -1;

    while (m.step_count < max_steps_) {
      Machine::StepStatus st = m.step();
      if (st != Machine::StepStatus::Executed) break;
      if (m.goal_hit) break;
      if (!fired && trigger_matches(m)) {
        fired = true;
        countdown = scenario_.trigger.offset;
      } else if (fired && countdown > 0) {
        countdown--;
      }
      if (fired && countdown == 0) {
        countdown = -1;
        apply_writes(res);
        if (m.fault) break;
      }
    }
    return adjudicate(res);
  }

 private:
  bool trigger_matches(Machine& m) {
    const Trigger& t = scenario_.trigger;
    const StepEvent& e = m.last_event;
    switch (t.event) {
      case Trigger::Event::Step:
        return e.step == t.step;
      case Trigger::Event::CallRetired:
        if (e.was_call && e.call_target == t.function &&
            ++call_seen_ == t.occurrence) {
          ra_slot_ = e.sp_after; // the just-pushed return address slot
          thread_ = e.thread;
          return true;
        }
        return false;
      case Trigger::Event::RaLoaded:
        if (e.function == t.function && e.marker == Marker::PrologueRaLoad &&
            ++mark_seen_ == t.occurrence) {
          ra_slot_ = e.sp_after;
          thread_ = e.thread;
          return true;
        }
        return false;
      case Trigger::Event::PrologueDone:
        if (e.function == t.function && e.marker == Marker::PrologueEnd &&
            ++mark_seen_ == t.occurrence) {
          ra_slot_ = e.sp_after;
          thread_ = e.thread;
          return true;
        }
        return false;
      case Trigger::Event::RaPopped:
        if (e.function == t.function && e.marker == Marker::RaPop &&
            ++mark_seen_ == t.occurrence) {
          ra_slot_ = e.sp_after - 8; // pop moved SP past the slot
          thread_ = e.thread;
          return true;
        }
        return false;
    }
    return false;
  }

  uint64_t eval(const Expr& e) {
    Machine& m = pr_.image.machine;
    uint64_t base = 0;
    switch (e.kind) {
      case Expr::Kind::Number: base = e.number; break;
      case Expr::Kind::LabelAddr: base = m.symbol(e.label); break;
      case Expr::Kind::RaSlot: base = ra_slot_; break;
      case Expr::Kind::ShadowTop:
        if (cfg_.compact()) {
          base = m.shadow_ptr(thread_, cfg_) - 16;
        } else {
          base = ra_slot_ + mirror_offset(m);
        }
        break;
      case Expr::Kind::ShadowSlot:
        base = ra_slot_ + mirror_offset(m);
        break;
    }
    return base + uint64_t(e.addend);
  }

  uint64_t mirror_offset(Machine& m) {
    if (cfg_.mapping == Mapping::ParallelRegister)
      return m.threads[thread_].regs[cfg_.reserved_reg];
    return uint64_t(pr_.image.parallel_offset);
  }

  void apply_writes(AttackResult& res) {
    Machine& m = pr_.image.machine;
    for (auto& [addr_e, val_e] : scenario_.writes) {
      uint64_t addr = eval(addr_e);
      uint64_t val = eval(val_e);
      res.interventions++;
      if (!m.attacker_store(addr, val)) return; // fault latched
    }
  }

  AttackResult adjudicate(AttackResult res) {
    Machine& m = pr_.image.machine;
    res.steps_to_outcome = m.step_count;
    if (m.goal_hit) {
      uint64_t want =
          scenario_.goal_arg ? eval(*scenario_.goal_arg) : m.goal_hit_arg;
      if (m.goal_hit_arg == want) {
        res.outcome = Outcome::Hijacked;
        res.steps_to_outcome = m.goal_hit_step;
        return res;
      }
      res.note = "goal reached without the attacker argument";
      res.outcome = Outcome::Prevented;
      return res;
    }
    if (m.fault) {
      res.fault_kind = m.fault->kind;
      res.steps_to_outcome = m.fault->step;
      res.outcome =
          res.interventions > 0 ? Outcome::Prevented : Outcome::Crashed;
      return res;
    }
    if (m.finding) {
      res.note = *m.finding;
      res.outcome = Outcome::Crashed;
      return res;
    }
    res.outcome =
        res.interventions > 0 ? Outcome::Prevented : Outcome::NoEffect;
    return res;
  }

  AttackScenario scenario_;
  ShadowConfig cfg_;
  PreparedRun pr_;
  uint64_t max_steps_ = 0;
  int call_seen_ = 0;
  int mark_seen_ = 0;
  uint64_t ra_slot_ = 0;
  int thread_ = 0;
};

} // namespace

AttackResult run_scenario(const Program& victim, const ShadowConfig& cfg,
                          const AttackScenario& s, uint64_t seed,
                          const RunOptions& base_opt) {
  if (s.kind == AttackKind::ShadowDisclose) {
    RunOptions opt = base_opt;
    opt.seed = seed;
    PreparedRun pr = prepare(victim, cfg, opt);
    pr.image.machine.run(opt.max_steps);
    LeakScan scan = leak_scan(pr);
    AttackResult res;
    res.outcome = Outcome::NoEffect;
    res.note = scan.result == LeakResult::NotFound ? "no shadow reference found"
               : scan.result == LeakResult::FoundWord
                   ? "shadow pointer word disclosed"
                   : "shadow location recoverable from the static offset";
    return res;
  }
  return ScenarioEngine(victim, cfg, s, seed, base_opt).run();
}

ToctouReport toctou_probe(const Program& victim, const ShadowConfig& cfg,
                          const std::string& target_fn, uint64_t seed) {
  auto chain_writes = [] {
    std::vector<std::pair<Expr, Expr>> w;
    auto at = [](Expr::Kind k, int64_t add) {
      Expr e;
      e.kind = k;
      e.addend = add;
      return e;
    };
    auto lab = [](const std::string& l) {
      Expr e;
      e.kind = Expr::Kind::LabelAddr;
      e.label = l;
      return e;
    };
    w.emplace_back(at(Expr::Kind::RaSlot, 0), lab("g_pop_arg"));
    w.emplace_back(at(Expr::Kind::RaSlot, 8), lab("binsh"));
    w.emplace_back(at(Expr::Kind::RaSlot, 16), lab("win"));
    return w;
  };
  AttackScenario s;
  s.kind = AttackKind::ToctouWrite;
  s.goal_label = "win";
  Expr arg;
  arg.kind = Expr::Kind::LabelAddr;
  arg.label = "binsh";
  s.goal_arg = arg;
  s.writes = chain_writes();

  ToctouReport rep;
  s.trigger = {Trigger::Event::CallRetired, 0, target_fn, 1, 0};
  rep.in_window = run_scenario(victim, cfg, s, seed);
  s.trigger = {Trigger::Event::RaLoaded, 0, target_fn, 1, 0};
  rep.one_step_later = run_scenario(victim, cfg, s, seed);
  s.trigger = {Trigger::Event::RaPopped, 0, target_fn, 1, 0};
  s.writes = {{[] {
                 Expr e;
                 e.kind = Expr::Kind::RaSlot;
                 return e;
               }(),
               [] {
                 Expr e;
                 e.kind = Expr::Kind::LabelAddr;
                 e.label = "g_pop_arg";
                 return e;
               }()}};
  rep.post_validation = run_scenario(victim, cfg, s, seed);
  return rep;
}

LeakScan leak_scan(const PreparedRun& pr) {
  const Machine& m = pr.image.machine;
  const ShadowConfig& cfg = pr.image.cfg;
  LeakScan scan;
  if (cfg.mapping == Mapping::ParallelConstant) {
    // The constant offset is recoverable from the binary; together with a
    // leaked stack address it discloses the region.
    scan.result = LeakResult::FoundByComputation;
    return scan;
  }
  uint64_t lo = pr.image.shadow_region_base;
  uint64_t hi = lo + pr.image.shadow_region_size;
  if (lo == hi) return scan;
  for (const auto& [base, page] : m.pages()) {
    if (!page.readable || page.is_code) continue;
    bool in_region = false;
    for (const Thread& t : m.threads) {
      if (t.shadow_size && base >= page_base_of(t.shadow_base) &&
          base < t.shadow_base + t.shadow_size)
        in_region = true;
    }
    if (in_region) continue;
    for (uint64_t a = base; a < base + kPageSize; a += 8) {
      uint64_t w = m.peek64(a);
      if (w >= lo && w <= hi && w != 0) {
        scan.result = LeakResult::FoundWord;
        scan.at_addr = a;
        return scan;
      }
    }
  }
  return scan;
}

} // namespace shadowlab
