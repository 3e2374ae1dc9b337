#include "shadowlab/shadow_pass.hpp"

#include <algorithm>

namespace shadowlab {

namespace {

using namespace ins;

Instruction tag(Instruction i, Role role, Marker m = Marker::None,
                bool shadow_store = false) {
  i.role = role;
  i.marker = m;
  i.shadow_store = shadow_store;
  return i;
}

bool operand_uses_reg(const Operand& o, Reg r) {
  if (o.kind == Operand::Kind::Reg && o.reg == r) return true;
  if (o.kind == Operand::Kind::Mem)
    return (o.mem.base && *o.mem.base == r) ||
           (o.mem.index && *o.mem.index == r);
  return false;
}

bool instr_uses_reg(const Instruction& i, Reg r) {
  return operand_uses_reg(i.a, r) || operand_uses_reg(i.b, r);
}

std::vector<Instruction> shadow_pop_sequence(const ShadowConfig& cfg) {
  // Retracts the compact shadow stack pointer and leaves the shadow RA in
  // g11; parallel mappings only load the mirror slot.
  std::vector<Instruction> s;
  Reg rr = cfg.reserved_reg;
  switch (cfg.mapping) {
    case Mapping::CompactRegister:
      s.push_back(tag(lea(rr, mem_base(rr, -16)), Role::Epilogue));
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(mem_base(rr))),
                      Role::Epilogue));
      break;
    case Mapping::CompactSegment:
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(mem_seg(0))),
                      Role::Epilogue));
      s.push_back(tag(lea(kG11, mem_base(kG11, -16)), Role::Epilogue));
      s.push_back(tag(mov(Operand::make_mem(mem_seg(0)),
                          Operand::make_reg(kG11)),
                      Role::Epilogue, Marker::None, /*shadow_store=*/true));
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(mem_base(kG11))),
                      Role::Epilogue));
      break;
    case Mapping::CompactGlobal:
      s.push_back(tag(mov(Operand::make_reg(kG10),
                          Operand::make_label("__shadow_sp")),
                      Role::Epilogue));
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(mem_base(kG10))),
                      Role::Epilogue));
      s.push_back(tag(lea(kG11, mem_base(kG11, -16)), Role::Epilogue));
      s.push_back(tag(mov(Operand::make_mem(mem_base(kG10)),
                          Operand::make_reg(kG11)),
                      Role::Epilogue));
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(mem_base(kG11))),
                      Role::Epilogue));
      break;
    case Mapping::ParallelConstant:
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(
                              mem_base(kSP, cfg.parallel_offset))),
                      Role::Epilogue));
      break;
    case Mapping::ParallelRegister:
      s.push_back(tag(mov(Operand::make_reg(kG11),
                          Operand::make_mem(mem_base_index(kSP, rr))),
                      Role::Epilogue));
      break;
  }
  return s;
}

std::vector<Instruction> validation_core(const ShadowConfig& cfg) {
  // g11 holds the shadow RA on entry; pops the program RA into g10 and
  // never re-reads it from memory afterwards.
  std::vector<Instruction> s;
  s.push_back(tag(pop(kG10), Role::Epilogue, Marker::RaPop));
  switch (cfg.validation) {
    case Validation::UseShadow: {
      Instruction j = jmp_reg(kG11);
      j.ret_jump = true;
      s.push_back(tag(std::move(j), Role::Epilogue));
      break;
    }
    case Validation::Cmp: {
      s.push_back(tag(cmp(kG10, Operand::make_reg(kG11)), Role::Validation));
      s.push_back(tag(jne("__shadow_abort"), Role::Validation));
      Instruction j = jmp_reg(kG10);
      j.ret_jump = true;
      s.push_back(tag(std::move(j), Role::Epilogue));
      break;
    }
    case Validation::Fault: {
      s.push_back(tag(xor_(kG11, Operand::make_reg(kG10)), Role::Validation));
      s.push_back(tag(popcnt(kG11, kG11), Role::Validation));
      s.push_back(tag(shl(kG11, 48), Role::Validation));
      s.push_back(tag(or_(kG11, Operand::make_reg(kG10)), Role::Validation));
      Instruction j = jmp_reg(kG11); // faults non-canonically on mismatch
      j.ret_jump = true;
      s.push_back(tag(std::move(j), Role::Epilogue));
      break;
    }
    case Validation::Lbp: {
      s.push_back(tag(xor_(kG11, Operand::make_reg(kG10)), Role::Validation));
      s.push_back(tag(popcnt(kG11, kG11), Role::Validation));
      s.push_back(tag(movb(Operand::make_reg(kG11),
                           Operand::make_mem(mem_label("__lbp_last", kG11))),
                      Role::Validation));
      Instruction j = jmp_reg(kG10);
      j.ret_jump = true;
      s.push_back(tag(std::move(j), Role::Epilogue));
      break;
    }
  }
  return s;
}

// Tail-call validation: reads the program RA in place (the callee still
// needs it on the stack) and emits no final jump.
std::vector<Instruction> tail_validation(const ShadowConfig& cfg) {
  std::vector<Instruction> s;
  auto load_ra = [&] {
    s.push_back(tag(mov(Operand::make_reg(kG10),
                        Operand::make_mem(mem_base(kSP))),
                    Role::Epilogue));
  };
  switch (cfg.validation) {
    case Validation::UseShadow:
      break; // nothing to compare against a jump that is not a return
    case Validation::Cmp:
      load_ra();
      s.push_back(tag(cmp(kG10, Operand::make_reg(kG11)), Role::Validation));
      s.push_back(tag(jne("__shadow_abort"), Role::Validation));
      break;
    case Validation::Fault: // no jmp left to poison: LBP form
    case Validation::Lbp:
      load_ra();
      s.push_back(tag(xor_(kG11, Operand::make_reg(kG10)), Role::Validation));
      s.push_back(tag(popcnt(kG11, kG11), Role::Validation));
      s.push_back(tag(movb(Operand::make_reg(kG11),
                           Operand::make_mem(mem_label("__lbp_last", kG11))),
                      Role::Validation));
      break;
  }
  return s;
}

Function make_abort_stub() {
  Function f;
  f.name = "__shadow_abort";
  f.is_protected = false;
  f.instrs.push_back(tag(abort_(), Role::Validation));
  return f;
}

bool has_function(const Program& p, const std::string& name) {
  return p.find_function(name) != nullptr;
}

} // namespace

std::vector<Instruction> make_prologue(const ShadowConfig& cfg) {
  std::vector<Instruction> s;
  if (cfg.variant == Variant::Baseline || cfg.variant == Variant::PopJmpOnly)
    return s;
  Reg rr = cfg.reserved_reg;
  auto ra_load = [&] {
    s.push_back(tag(mov(Operand::make_reg(kG0),
                        Operand::make_mem(mem_base(kSP))),
                    Role::Prologue, Marker::PrologueRaLoad));
  };
  switch (cfg.mapping) {
    case Mapping::ParallelConstant:
      ra_load();
      s.push_back(tag(mov(Operand::make_mem(mem_base(kSP,
                                                     cfg.parallel_offset)),
                          Operand::make_reg(kG0)),
                      Role::Prologue, Marker::PrologueEnd, true));
      break;
    case Mapping::ParallelRegister:
      ra_load();
      s.push_back(tag(mov(Operand::make_mem(mem_base_index(kSP, rr)),
                          Operand::make_reg(kG0)),
                      Role::Prologue, Marker::PrologueEnd, true));
      break;
    case Mapping::CompactRegister:
      ra_load();
      s.push_back(tag(mov(Operand::make_mem(mem_base(rr)),
                          Operand::make_reg(kG0)),
                      Role::Prologue, Marker::None, true));
      s.push_back(tag(mov(Operand::make_mem(mem_base(rr, 8)),
                          Operand::make_reg(kSP)),
                      Role::Prologue, Marker::None, true));
      s.push_back(tag(lea(rr, mem_base(rr, 16)), Role::Prologue,
                      Marker::PrologueEnd));
      break;
    case Mapping::CompactSegment:
      ra_load();
      s.push_back(tag(mov(Operand::make_reg(kG10),
                          Operand::make_mem(mem_seg(0))),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_mem(mem_base(kG10)),
                          Operand::make_reg(kG0)),
                      Role::Prologue, Marker::None, true));
      s.push_back(tag(mov(Operand::make_mem(mem_base(kG10, 8)),
                          Operand::make_reg(kSP)),
                      Role::Prologue, Marker::None, true));
      s.push_back(tag(add(Operand::make_reg(kG10), Operand::make_imm(16)),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_mem(mem_seg(0)),
                          Operand::make_reg(kG10)),
                      Role::Prologue, Marker::PrologueEnd, true));
      break;
    case Mapping::CompactGlobal:
      // Caller-save shuffle around the pointer-word indirection.
      s.push_back(tag(mov(Operand::make_reg(kG10), Operand::make_reg(kG1)),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_reg(kG11), Operand::make_reg(kG2)),
                      Role::Prologue));
      ra_load();
      s.push_back(tag(mov(Operand::make_reg(kG2),
                          Operand::make_label("__shadow_sp")),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_reg(kG1),
                          Operand::make_mem(mem_base(kG2))),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_mem(mem_base(kG1)),
                          Operand::make_reg(kG0)),
                      Role::Prologue, Marker::None, true));
      s.push_back(tag(mov(Operand::make_mem(mem_base(kG1, 8)),
                          Operand::make_reg(kSP)),
                      Role::Prologue, Marker::None, true));
      s.push_back(tag(add(Operand::make_mem(mem_base(kG2)),
                          Operand::make_imm(16)),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_reg(kG1), Operand::make_reg(kG10)),
                      Role::Prologue));
      s.push_back(tag(mov(Operand::make_reg(kG2), Operand::make_reg(kG11)),
                      Role::Prologue, Marker::PrologueEnd));
      break;
  }
  return s;
}

std::vector<Instruction> make_epilogue(const ShadowConfig& cfg) {
  std::vector<Instruction> s;
  switch (cfg.variant) {
    case Variant::Baseline:
      s.push_back(ret());
      return s;
    case Variant::PopJmpOnly: {
      s.push_back(tag(pop(kG10), Role::Epilogue, Marker::RaPop));
      Instruction j = jmp_reg(kG10);
      j.ret_jump = true;
      s.push_back(tag(std::move(j), Role::Epilogue));
      return s;
    }
    case Variant::MaintainOnly:
      s = shadow_pop_sequence(cfg);
      s.push_back(ret());
      return s;
    case Variant::Full:
      s = shadow_pop_sequence(cfg);
      for (auto& i : validation_core(cfg)) s.push_back(std::move(i));
      return s;
  }
  return s;
}

std::vector<Instruction> rewrite_tail_call(const ShadowConfig& cfg) {
  std::vector<Instruction> s;
  if (cfg.variant == Variant::Baseline || cfg.variant == Variant::PopJmpOnly)
    return s;
  // Parallel mappings keep no pointer; with nothing to check there is
  // nothing to emit.
  if (cfg.parallel() && (cfg.variant == Variant::MaintainOnly ||
                         cfg.validation == Validation::UseShadow))
    return s;
  s = shadow_pop_sequence(cfg);
  if (cfg.variant == Variant::Full)
    for (auto& i : tail_validation(cfg)) s.push_back(std::move(i));
  return s;
}

Program instrument(const Program& p, const ShadowConfig& cfg,
                   InstrumentationReport* report) {
  Program out = p;
  if (cfg.variant == Variant::Baseline) return out;

  bool any_protected = false;
  for (auto& f : out.functions) {
    if (!f.is_protected) continue;
    any_protected = true;
    if (cfg.variant != Variant::PopJmpOnly) {
      if (cfg.uses_reserved_reg()) {
        for (const auto& i : f.instrs)
          if (instr_uses_reg(i, cfg.reserved_reg))
            throw InstrumentError("protected function " + f.name +
                                  " uses the reserved register " +
                                  reg_name(cfg.reserved_reg));
      }
      if (cfg.integrity == IntegrityKind::KeyScheme) {
        for (const auto& i : f.instrs)
          for (Reg r : {kG12, kG13, kG14})
            if (instr_uses_reg(i, r))
              throw InstrumentError("protected function " + f.name +
                                    " uses key-toggle register " +
                                    reg_name(r));
      }
    }

    std::vector<Instruction> body;
    auto prologue = make_prologue(cfg);
    auto epilogue = make_epilogue(cfg);
    auto tail = rewrite_tail_call(cfg);
    body.reserve(f.instrs.size() + prologue.size());
    bool first = true;
    auto append = [&](const std::vector<Instruction>& seq,
                      const std::string& label) {
      bool lbl = !label.empty();
      for (auto i : seq) {
        if (lbl) {
          i.label = label;
          lbl = false;
        }
        body.push_back(std::move(i));
      }
    };
    append(prologue, "");
    (void)first;
    for (auto& i : f.instrs) {
      if (i.op == Op::Ret) {
        append(epilogue, i.label);
      } else if (i.op == Op::TailJmp) {
        bool label_consumed = !tail.empty() && !i.label.empty();
        append(tail, i.label);
        Instruction j = i;
        if (label_consumed) j.label.clear();
        body.push_back(std::move(j));
      } else {
        body.push_back(std::move(i));
      }
    }
    int added = int(body.size()) - int(f.instrs.size());
    if (report) {
      report->added_per_function[f.name] = added;
      report->total_added += added;
    }
    f.instrs = std::move(body);
  }

  bool needs_abort_stub =
      any_protected && cfg.variant == Variant::Full &&
      cfg.validation == Validation::Cmp;
  if (needs_abort_stub && !has_function(out, "__shadow_abort"))
    out.functions.push_back(make_abort_stub());
  if (cfg.mapping == Mapping::CompactGlobal && any_protected &&
      cfg.variant != Variant::PopJmpOnly && !out.find_data("__shadow_sp")) {
    DataObject word;
    word.name = "__shadow_sp";
    word.size = 8;
    out.data.push_back(std::move(word));
  }
  return out;
}

Program hook_unwind(const Program& p, const ShadowConfig& cfg) {
  if (!cfg.compact() || cfg.variant == Variant::Baseline ||
      cfg.variant == Variant::PopJmpOnly)
    return p; // parallel mappings need no shadow adjustment

  bool uses_unwind = false;
  Program out = p;
  for (auto& f : out.functions) {
    std::vector<Instruction> body;
    for (auto& i : f.instrs) {
      if (i.op == Op::Setjmp) {
        uses_unwind = true;
        body.push_back(i);
        // Snapshot the top shadow entry (RA, SP) into the jump buffer.
        Reg rr = cfg.reserved_reg;
        auto emit = [&](Instruction ins) {
          body.push_back(tag(std::move(ins), Role::Epilogue));
        };
        switch (cfg.mapping) {
          case Mapping::CompactRegister:
            emit(mov(Operand::make_reg(kG10),
                     Operand::make_mem(mem_base(rr, -16))));
            emit(mov(Operand::make_reg(kG11),
                     Operand::make_mem(mem_base(rr, -8))));
            break;
          case Mapping::CompactSegment:
            emit(mov(Operand::make_reg(kG10),
                     Operand::make_mem(mem_seg(0))));
            emit(mov(Operand::make_reg(kG11),
                     Operand::make_mem(mem_base(kG10, -8))));
            emit(mov(Operand::make_reg(kG10),
                     Operand::make_mem(mem_base(kG10, -16))));
            break;
          case Mapping::CompactGlobal:
            emit(mov(Operand::make_reg(kG10),
                     Operand::make_label("__shadow_sp")));
            emit(mov(Operand::make_reg(kG10),
                     Operand::make_mem(mem_base(kG10))));
            emit(mov(Operand::make_reg(kG11),
                     Operand::make_mem(mem_base(kG10, -8))));
            emit(mov(Operand::make_reg(kG10),
                     Operand::make_mem(mem_base(kG10, -16))));
            break;
          default: break;
        }
        body.push_back(tag(mov(Operand::make_mem(mem_base(kG1, 16)),
                               Operand::make_reg(kG10)),
                           Role::Epilogue));
        body.push_back(tag(mov(Operand::make_mem(mem_base(kG1, 24)),
                               Operand::make_reg(kG11)),
                           Role::Epilogue));
      } else if (i.op == Op::Longjmp) {
        uses_unwind = true;
        Instruction call;
        call.op = Op::Call;
        call.a = Operand::make_label("__shadow_unwind");
        call.role = Role::Epilogue;
        call.label = i.label;
        body.push_back(std::move(call));
        Instruction lj = i;
        lj.label.clear();
        body.push_back(std::move(lj));
      } else {
        body.push_back(i);
      }
    }
    f.instrs = std::move(body);
  }
  if (!uses_unwind) return p;

  // Unwind helper: pops entries until the recorded (RA, SP) pair is on top.
  Function h;
  h.name = "__shadow_unwind";
  h.is_protected = false;
  auto emit = [&](Instruction ins, const std::string& label = "") {
    ins.label = label;
    h.instrs.push_back(tag(std::move(ins), Role::Epilogue));
  };
  Reg rr = cfg.reserved_reg;
  emit(mov(Operand::make_reg(kG0), Operand::make_mem(mem_base(kG1, 16))));
  emit(mov(Operand::make_reg(kG3), Operand::make_mem(mem_base(kG1, 24))));
  switch (cfg.mapping) {
    case Mapping::CompactRegister:
      emit(mov(Operand::make_reg(kG10),
               Operand::make_mem(mem_base(rr, -16))),
           "__su_check");
      emit(cmp(kG10, Operand::make_reg(kG0)));
      emit(jne("__su_pop"));
      emit(mov(Operand::make_reg(kG10), Operand::make_mem(mem_base(rr, -8))));
      emit(cmp(kG10, Operand::make_reg(kG3)));
      emit(jne("__su_pop"));
      emit(ret());
      emit(lea(rr, mem_base(rr, -16)), "__su_pop");
      emit(jmp_label("__su_check"));
      break;
    case Mapping::CompactSegment: {
      emit(mov(Operand::make_reg(kG11), Operand::make_mem(mem_seg(0))));
      emit(mov(Operand::make_reg(kG10),
               Operand::make_mem(mem_base(kG11, -16))),
           "__su_check");
      emit(cmp(kG10, Operand::make_reg(kG0)));
      emit(jne("__su_pop"));
      emit(mov(Operand::make_reg(kG10),
               Operand::make_mem(mem_base(kG11, -8))));
      emit(cmp(kG10, Operand::make_reg(kG3)));
      emit(jne("__su_pop"));
      Instruction wb = mov(Operand::make_mem(mem_seg(0)),
                           Operand::make_reg(kG11));
      wb.shadow_store = true;
      emit(std::move(wb));
      emit(ret());
      emit(lea(kG11, mem_base(kG11, -16)), "__su_pop");
      emit(jmp_label("__su_check"));
      break;
    }
    case Mapping::CompactGlobal:
      emit(mov(Operand::make_reg(kG10), Operand::make_label("__shadow_sp")));
      emit(mov(Operand::make_reg(kG11), Operand::make_mem(mem_base(kG10))));
      emit(mov(Operand::make_reg(kG10),
               Operand::make_mem(mem_base(kG11, -16))),
           "__su_check");
      emit(cmp(kG10, Operand::make_reg(kG0)));
      emit(jne("__su_pop"));
      emit(mov(Operand::make_reg(kG10),
               Operand::make_mem(mem_base(kG11, -8))));
      emit(cmp(kG10, Operand::make_reg(kG3)));
      emit(jne("__su_pop"));
      emit(mov(Operand::make_reg(kG10), Operand::make_label("__shadow_sp")));
      emit(mov(Operand::make_mem(mem_base(kG10)), Operand::make_reg(kG11)));
      emit(ret());
      emit(lea(kG11, mem_base(kG11, -16)), "__su_pop");
      emit(jmp_label("__su_check"));
      break;
    default: break;
  }
  Program out2 = std::move(out);
  out2.functions.push_back(std::move(h));
  return out2;
}

Program hook_threads(const Program& p, const ShadowConfig& cfg) {
  // Per-thread shadow setup happens in the loader's spawn policy (the
  // runtime-hook analog). CompactGlobal deliberately performs none.
  (void)cfg;
  return p;
}

Program build_protected(const Program& p, const ShadowConfig& cfg,
                        InstrumentationReport* report) {
  Program out = instrument(p, cfg, report);
  out = hook_unwind(out, cfg);
  out = hook_threads(out, cfg);
  return out;
}

} // namespace shadowlab
