#include "shadowlab/machine.hpp"

#include <bit>
#include <cassert>
#include <cinttypes>
#include <cstdio>
#include <stdexcept>

namespace shadowlab {

bool is_canonical(uint64_t addr) { return (addr >> 48) == 0; }

int popcnt64(uint64_t v) { return std::popcount(v); }

const char* fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::NonCanonicalAddress: return "NonCanonicalAddress";
    case FaultKind::PermissionDenied: return "PermissionDenied";
    case FaultKind::KeyDenied: return "KeyDenied";
    case FaultKind::BoundsDenied: return "BoundsDenied";
    case FaultKind::Unmapped: return "Unmapped";
    case FaultKind::ShadowMismatchAbort: return "ShadowMismatchAbort";
  }
  return "?";
}

Page& Machine::map_page(uint64_t base, bool readable, bool writable,
                        uint8_t key, bool is_code) {
  assert(base % kPageSize == 0);
  Page& p = pages_[base];
  p.base = base;
  p.readable = readable;
  p.writable = writable;
  p.key = key;
  p.is_code = is_code;
  if (p.bytes.empty()) p.bytes.assign(kPageSize, 0);
  return p;
}

bool Machine::is_mapped(uint64_t addr) const {
  return pages_.count(page_base_of(addr)) != 0;
}

bool Machine::range_free(uint64_t lo, uint64_t hi) const {
  for (uint64_t b = page_base_of(lo); b < hi; b += kPageSize)
    if (pages_.count(b)) return false;
  return true;
}

void Machine::set_code(std::vector<Instruction> code, uint64_t code_base,
                       std::unordered_map<std::string, uint64_t> symbols,
                       std::vector<std::string> instr_function) {
  code_ = std::move(code);
  code_base_ = code_base;
  symbols_ = std::move(symbols);
  instr_function_ = std::move(instr_function);
  uint64_t end = code_base_ + code_.size() * kInstrSlot;
  for (uint64_t b = page_base_of(code_base_); b < end; b += kPageSize)
    map_page(b, /*readable=*/false, /*writable=*/false, 0, /*is_code=*/true);
}

int Machine::add_thread() {
  // Capacity is fixed up front so Thread references stay valid across spawn.
  if (threads.capacity() < kMaxThreads) threads.reserve(kMaxThreads);
  assert(threads.size() < kMaxThreads);
  threads.emplace_back();
  return static_cast<int>(threads.size()) - 1;
}

void Machine::seed_oracle(int tid, uint64_t ra, uint64_t sp) {
  oracle_push(tid, ra, sp);
}

const Page* Machine::page_for(uint64_t addr) const {
  auto it = pages_.find(page_base_of(addr));
  return it == pages_.end() ? nullptr : &it->second;
}

Page* Machine::page_for(uint64_t addr) {
  auto it = pages_.find(page_base_of(addr));
  return it == pages_.end() ? nullptr : &it->second;
}

void Machine::poke64(uint64_t addr, uint64_t v) {
  for (int i = 0; i < 8; i++) {
    Page* p = page_for(addr + i);
    assert(p && "poke to unmapped page");
    p->bytes[(addr + i) % kPageSize] = uint8_t(v >> (8 * i));
  }
}

void Machine::poke_bytes(uint64_t addr, const std::vector<uint8_t>& bytes) {
  for (size_t i = 0; i < bytes.size(); i++) {
    Page* p = page_for(addr + i);
    assert(p && "poke to unmapped page");
    p->bytes[(addr + i) % kPageSize] = bytes[i];
  }
}

uint64_t Machine::peek64(uint64_t addr) const {
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) {
    const Page* p = page_for(addr + i);
    if (!p) return 0;
    v |= uint64_t(p->bytes[(addr + i) % kPageSize]) << (8 * i);
  }
  return v;
}

uint64_t Machine::symbol(const std::string& name) const {
  auto it = symbols_.find(name);
  if (it == symbols_.end())
    throw std::runtime_error("unknown symbol: " + name);
  return it->second;
}

const Instruction* Machine::instr_at(uint64_t addr) const {
  if (addr < code_base_ || (addr - code_base_) % kInstrSlot != 0)
    return nullptr;
  uint64_t idx = (addr - code_base_) / kInstrSlot;
  if (idx >= code_.size()) return nullptr;
  return &code_[idx];
}

std::string Machine::function_at(uint64_t addr) const {
  if (addr < code_base_ || (addr - code_base_) % kInstrSlot != 0) return {};
  uint64_t idx = (addr - code_base_) / kInstrSlot;
  if (idx >= instr_function_.size()) return {};
  return instr_function_[idx];
}

uint64_t Machine::shadow_ptr(int tid, const ShadowConfig& cfg) const {
  const Thread& t = threads[tid];
  switch (cfg.mapping) {
    case Mapping::CompactRegister: return t.regs[cfg.reserved_reg];
    case Mapping::CompactSegment: return peek64(t.seg);
    case Mapping::CompactGlobal: return peek64(global_word_addr);
    default: return 0;
  }
}

void Machine::latch_fault(FaultKind kind, uint64_t addr, int tid) {
  if (fault) return;
  fault = Fault{kind, addr, tid, step_count};
  if (record_trace) {
    char buf[128];
    snprintf(buf, sizeof buf, "FAULT,%s,0x%" PRIx64 ",%" PRIu64,
             fault_kind_name(kind), addr, step_count);
    trace.emplace_back(buf);
  }
}

std::optional<uint64_t> Machine::load(uint64_t addr, unsigned size,
                                      const AccessContext& ctx) {
  if (!is_canonical(addr) || !is_canonical(addr + size - 1)) {
    latch_fault(FaultKind::NonCanonicalAddress, addr, ctx.thread);
    return std::nullopt;
  }
  uint64_t v = 0;
  for (unsigned i = 0; i < size; i++) {
    const Page* p = page_for(addr + i);
    if (!p) {
      latch_fault(FaultKind::Unmapped, addr + i, ctx.thread);
      return std::nullopt;
    }
    if (!p->readable || p->is_code) {
      latch_fault(FaultKind::PermissionDenied, addr + i, ctx.thread);
      return std::nullopt;
    }
    uint32_t kperm = ctx.attacker ? integrity.armed_kperm
                                  : threads[ctx.thread].kperm;
    if (kperm & kperm_read_disable(p->key)) {
      latch_fault(FaultKind::KeyDenied, addr + i, ctx.thread);
      return std::nullopt;
    }
    v |= uint64_t(p->bytes[(addr + i) % kPageSize]) << (8 * i);
  }
  return v;
}

std::optional<std::pair<FaultKind, uint64_t>> Machine::store_denial(
    uint64_t addr, unsigned size, const AccessContext& ctx) const {
  if (!is_canonical(addr) || !is_canonical(addr + size - 1))
    return std::make_pair(FaultKind::NonCanonicalAddress, addr);
  // Enforcement order: canonicality, mapping, page permission, key
  // permission, bounds backstop, privilege tag.
  for (unsigned i = 0; i < size; i++) {
    const Page* p = page_for(addr + i);
    if (!p) return std::make_pair(FaultKind::Unmapped, addr + i);
    if (!p->writable || p->is_code)
      return std::make_pair(FaultKind::PermissionDenied, addr + i);
    if (integrity.kind == IntegrityKind::KeyScheme) {
      uint32_t kperm = ctx.attacker ? integrity.armed_kperm
                                    : threads[ctx.thread].kperm;
      if (kperm & kperm_write_disable(p->key))
        return std::make_pair(FaultKind::KeyDenied, addr + i);
    }
    if (integrity.kind == IntegrityKind::BoundsScheme && ctx.checked &&
        integrity.in_protected(addr + i))
      return std::make_pair(FaultKind::BoundsDenied, addr + i);
    if (integrity.kind == IntegrityKind::PrivMove &&
        integrity.in_protected(addr + i) &&
        ctx.priv_tag != integrity.region_id)
      return std::make_pair(FaultKind::BoundsDenied, addr + i);
  }
  return std::nullopt;
}

bool Machine::store(uint64_t addr, uint64_t value, unsigned size,
                    const AccessContext& ctx) {
  if (auto denial = store_denial(addr, size, ctx)) {
    latch_fault(denial->first, denial->second, ctx.thread);
    return false;
  }
  for (unsigned i = 0; i < size; i++) {
    Page* p = page_for(addr + i);
    p->bytes[(addr + i) % kPageSize] = uint8_t(value >> (8 * i));
  }
  for (const Thread& th : threads) {
    if (th.shadow_size && addr >= th.shadow_base &&
        addr < th.shadow_base + th.shadow_size) {
      shadow_writes.push_back({step_count, addr, ctx.role, ctx.attacker});
      break;
    }
  }
  return true;
}

bool Machine::attacker_store(uint64_t addr, uint64_t value) {
  AccessContext ctx;
  ctx.thread = last_event.thread;
  ctx.role = Role::App;
  ctx.checked = true;
  ctx.attacker = true;
  return store(addr, value, 8, ctx);
}

int Machine::schedule_next() {
  auto alive = [&](int tid) {
    return tid >= 0 && tid < int(threads.size()) && threads[tid].alive;
  };
  auto it = schedule_script.find(step_count);
  if (it != schedule_script.end()) {
    if (alive(it->second)) {
      rr_last_ = it->second;
      return it->second;
    }
    if (record_trace) {
      char buf[64];
      snprintf(buf, sizeof buf, "SCHED,skip,%" PRIu64 ",%d", step_count,
               it->second);
      trace.emplace_back(buf);
    }
  }
  int n = static_cast<int>(threads.size());
  for (int k = 1; k <= n; k++) {
    int tid = (rr_last_ + k) % n;
    if (alive(tid)) {
      rr_last_ = tid;
      return tid;
    }
  }
  return -1;
}

uint64_t Machine::effective_addr(const MemRef& m, const Thread& t) const {
  uint64_t a = uint64_t(m.disp);
  if (m.base) a += t.regs[*m.base];
  if (m.index) a += t.regs[*m.index];
  if (m.seg_rel) a += t.seg;
  return a;
}

void Machine::oracle_push(int tid, uint64_t ra, uint64_t sp) {
  Thread& t = threads[tid];
  t.oracle.emplace_back(ra, sp);
  t.max_oracle_depth = std::max<uint64_t>(t.max_oracle_depth, t.oracle.size());
  counters.calls++;
}

void Machine::oracle_return(int tid, uint64_t target) {
  Thread& t = threads[tid];
  counters.returns++;
  if (t.oracle.empty()) {
    if (!oracle_desynced) {
      divergences.push_back({step_count, tid, target, 0});
      oracle_desynced = true;
    }
    return;
  }
  auto [ra, sp] = t.oracle.back();
  t.oracle.pop_back();
  if (target != ra && !oracle_desynced) {
    divergences.push_back({step_count, tid, target, ra});
    oracle_desynced = true;
  }
}

void Machine::transfer(uint64_t target, int tid, bool is_return) {
  if (!is_canonical(target)) {
    latch_fault(FaultKind::NonCanonicalAddress, target, tid);
    return;
  }
  if (is_return) oracle_return(tid, target);
  Thread& t = threads[tid];
  if (target == proc_exit_addr || target == thread_exit_addr) {
    t.ip = target;
    return;
  }
  if (!instr_at(target)) {
    latch_fault(FaultKind::Unmapped, target, tid);
    return;
  }
  t.ip = target;
}

void Machine::trace_line(std::string s) {
  if (record_trace) trace.push_back(std::move(s));
}

Machine::StepStatus Machine::step() {
  if (fault) return StepStatus::Faulted;
  // Retire cleanly exited threads before scheduling.
  for (auto& t : threads) {
    if (t.alive && (t.ip == proc_exit_addr || t.ip == thread_exit_addr))
      t.alive = false;
  }
  int tid = schedule_next();
  if (tid < 0) return StepStatus::AllHalted;
  Thread& t = threads[tid];
  const Instruction* ins = instr_at(t.ip);
  if (!ins) {
    latch_fault(is_canonical(t.ip) ? FaultKind::Unmapped
                                   : FaultKind::NonCanonicalAddress,
                t.ip, tid);
    return StepStatus::Faulted;
  }
  if (goal_stop && t.ip == goal_addr && !goal_hit) {
    goal_hit = true;
    goal_hit_step = step_count;
    goal_hit_arg = t.regs[kG1];
    return StepStatus::AllHalted;
  }
  last_event = StepEvent{};
  last_event.step = step_count;
  last_event.thread = tid;
  last_event.function = function_at(t.ip);
  last_event.marker = ins->marker;
  exec(*ins, tid);
  if (fault) return StepStatus::Faulted;
  counters.dynamic_total++;
  counters.by_role[int(ins->role)]++;
  t.min_sp = std::min(t.min_sp, t.regs[kSP]);
  last_event.sp_after = t.regs[kSP];
  step_count++;
  return StepStatus::Executed;
}

void Machine::run(uint64_t max_steps) {
  while (step_count < max_steps) {
    StepStatus st = step();
    if (st != StepStatus::Executed) return;
    if (goal_hit) return;
  }
  throw std::runtime_error("step limit exceeded (runaway program)");
}

namespace {
std::string fmt_reg(Reg r) {
  if (r == kSP) return "sp";
  return "g" + std::to_string(r);
}
std::string fmt_hex(uint64_t v) {
  char buf[32];
  snprintf(buf, sizeof buf, "0x%" PRIx64, v);
  return buf;
}
} // namespace

void Machine::exec(const Instruction& ins, int tid) {
  Thread& t = threads[tid];
  AccessContext ctx;
  ctx.thread = tid;
  ctx.role = ins.role;
  ctx.priv_tag = ins.priv_tag;
  ctx.checked = ins.role == Role::App &&
                integrity.kind == IntegrityKind::BoundsScheme;

  const uint64_t at_ip = t.ip;
  uint64_t next_ip = t.ip + kInstrSlot;
  std::string effects;
  auto eff = [&](const std::string& s) {
    if (record_trace) effects += "," + s;
  };
  auto set_reg = [&](Reg r, uint64_t v) {
    t.regs[r] = v;
    eff(fmt_reg(r) + "=" + fmt_hex(v));
  };
  auto do_store = [&](uint64_t addr, uint64_t v, unsigned size) {
    if (!store(addr, v, size, ctx)) return false;
    eff("[" + fmt_hex(addr) + "]=" + fmt_hex(v));
    return true;
  };
  // Reads an operand value (register, immediate, or memory).
  auto read_val = [&](const Operand& o,
                      unsigned size = 8) -> std::optional<uint64_t> {
    switch (o.kind) {
      case Operand::Kind::Reg: return t.regs[o.reg];
      case Operand::Kind::Imm: return uint64_t(o.imm);
      case Operand::Kind::Mem:
        return load(effective_addr(o.mem, t), size, ctx);
      default: return 0;
    }
  };

  switch (ins.op) {
    case Op::Mov:
    case Op::MovB: {
      unsigned size = ins.op == Op::MovB ? 1 : 8;
      auto v = read_val(ins.b, size);
      if (!v) return;
      if (ins.a.kind == Operand::Kind::Reg) {
        set_reg(ins.a.reg, *v);
      } else {
        if (!do_store(effective_addr(ins.a.mem, t), *v, size)) return;
      }
      break;
    }
    case Op::Lea:
      set_reg(ins.a.reg, effective_addr(ins.b.mem, t));
      break;
    case Op::Push: {
      uint64_t v = t.regs[ins.a.reg];
      if (!do_store(t.regs[kSP] - 8, v, 8)) return;
      set_reg(kSP, t.regs[kSP] - 8);
      break;
    }
    case Op::Pop: {
      auto v = load(t.regs[kSP], 8, ctx);
      if (!v) return;
      uint64_t sp = t.regs[kSP];
      set_reg(ins.a.reg, *v);
      if (ins.a.reg != kSP) set_reg(kSP, sp + 8);
      break;
    }
    case Op::Call: {
      uint64_t target;
      if (ins.a.kind == Operand::Kind::Reg) {
        target = t.regs[ins.a.reg];
      } else {
        target = uint64_t(ins.a.imm);
      }
      if (!is_canonical(target)) {
        latch_fault(FaultKind::NonCanonicalAddress, target, tid);
        return;
      }
      if (!instr_at(target)) {
        latch_fault(FaultKind::Unmapped, target, tid);
        return;
      }
      if (!do_store(t.regs[kSP] - 8, next_ip, 8)) return;
      set_reg(kSP, t.regs[kSP] - 8);
      oracle_push(tid, next_ip, t.regs[kSP]);
      next_ip = target;
      last_event.was_call = true;
      last_event.call_target = function_at(target);
      break;
    }
    case Op::Ret: {
      auto v = load(t.regs[kSP], 8, ctx);
      if (!v) return;
      uint64_t target = *v;
      uint64_t sp_before = t.regs[kSP];
      if (!is_canonical(target)) {
        latch_fault(FaultKind::NonCanonicalAddress, target, tid);
        return;
      }
      if (target != proc_exit_addr && target != thread_exit_addr &&
          !instr_at(target)) {
        latch_fault(FaultKind::Unmapped, target, tid);
        return;
      }
      set_reg(kSP, sp_before + 8);
      oracle_return(tid, target);
      next_ip = target;
      break;
    }
    case Op::Jmp:
    case Op::TailJmp: {
      uint64_t target = ins.a.kind == Operand::Kind::Reg
                            ? t.regs[ins.a.reg]
                            : uint64_t(ins.a.imm);
      if (!is_canonical(target)) {
        latch_fault(FaultKind::NonCanonicalAddress, target, tid);
        return;
      }
      if (ins.ret_jump) oracle_return(tid, target);
      if (target != proc_exit_addr && target != thread_exit_addr &&
          !instr_at(target)) {
        latch_fault(FaultKind::Unmapped, target, tid);
        return;
      }
      next_ip = target;
      break;
    }
    case Op::Jne:
      if (!t.eq_flag) next_ip = uint64_t(ins.a.imm);
      break;
    case Op::Cmp: {
      auto b = read_val(ins.b);
      if (!b) return;
      t.eq_flag = t.regs[ins.a.reg] == *b;
      eff(std::string("eq=") + (t.eq_flag ? "1" : "0"));
      break;
    }
    case Op::Xor: {
      auto b = read_val(ins.b);
      if (!b) return;
      set_reg(ins.a.reg, t.regs[ins.a.reg] ^ *b);
      break;
    }
    case Op::Or: {
      auto b = read_val(ins.b);
      if (!b) return;
      set_reg(ins.a.reg, t.regs[ins.a.reg] | *b);
      break;
    }
    case Op::Add:
    case Op::Sub: {
      auto b = read_val(ins.b);
      if (!b) return;
      uint64_t delta = ins.op == Op::Add ? *b : uint64_t(-int64_t(*b));
      if (ins.a.kind == Operand::Kind::Reg) {
        set_reg(ins.a.reg, t.regs[ins.a.reg] + delta);
      } else {
        uint64_t addr = effective_addr(ins.a.mem, t);
        auto cur = load(addr, 8, ctx);
        if (!cur) return;
        if (!do_store(addr, *cur + delta, 8)) return;
      }
      break;
    }
    case Op::Shl:
      set_reg(ins.a.reg, t.regs[ins.a.reg] << (ins.b.imm & 63));
      break;
    case Op::Popcnt:
      set_reg(ins.a.reg, uint64_t(popcnt64(t.regs[ins.b.reg])));
      break;
    case Op::Wrkperm:
      if (t.regs[kG13] != 0 || t.regs[kG14] != 0)
        throw std::runtime_error(
            "wrkperm executed with nonzero argument registers g13/g14");
      t.kperm = uint32_t(t.regs[kG12]);
      eff("kperm=" + fmt_hex(t.kperm));
      break;
    case Op::Setjmp: {
      uint64_t buf = t.regs[kG1];
      if (auto denial = store_denial(buf, 16, ctx)) {
        latch_fault(denial->first, denial->second, tid);
        return;
      }
      do_store(buf, next_ip, 8);
      do_store(buf + 8, t.regs[kSP], 8);
      set_reg(kG0, 0);
      break;
    }
    case Op::Longjmp: {
      uint64_t buf = t.regs[kG1];
      auto rip = load(buf, 8, ctx);
      if (!rip) return;
      auto rsp = load(buf + 8, 8, ctx);
      if (!rsp) return;
      if (!instr_at(*rip)) {
        latch_fault(FaultKind::Unmapped, *rip, tid);
        return;
      }
      uint64_t val = t.regs[kG2];
      set_reg(kSP, *rsp);
      set_reg(kG0, val == 0 ? 1 : val);
      // Ground-truth unwind: frames below the restored SP are gone.
      while (!t.oracle.empty() && t.oracle.back().second < *rsp) {
        t.oracle.pop_back();
        counters.returns++;
      }
      next_ip = *rip;
      break;
    }
    case Op::Spawn: {
      uint64_t fn = t.regs[kG1];
      uint64_t arg = t.regs[kG2];
      if (!instr_at(fn)) {
        latch_fault(FaultKind::Unmapped, fn, tid);
        return;
      }
      int child = add_thread();
      Thread& c = threads[child];
      c.ip = fn;
      c.regs[kG1] = arg;
      if (spawn_policy.setup && !spawn_policy.setup(*this, c, child)) {
        threads.pop_back();
        // Layout failure: recorded as a compatibility finding; the run stops.
        if (!finding) finding = "thread spawn failed: shadow layout collision";
        for (auto& th : threads) th.alive = false;
        return;
      }
      oracle_push(child, thread_exit_addr, threads[child].regs[kSP]);
      set_reg(kG0, uint64_t(child));
      eff("spawn=" + std::to_string(child));
      break;
    }
    case Op::Out: {
      auto v = read_val(ins.a);
      if (!v) return;
      output.push_back(*v);
      eff("out=" + fmt_hex(*v));
      break;
    }
    case Op::Halt:
      t.alive = false;
      eff("halt");
      break;
    case Op::Abort:
      latch_fault(FaultKind::ShadowMismatchAbort, t.ip, tid);
      return;
    case Op::Bndcl: {
      uint64_t ea = effective_addr(ins.a.mem, t);
      if (ea < integrity.array_lo) {
        latch_fault(FaultKind::BoundsDenied, ea, tid);
        return;
      }
      break;
    }
    case Op::Bndcu: {
      uint64_t ea = effective_addr(ins.a.mem, t);
      if (ea >= integrity.array_hi) {
        latch_fault(FaultKind::BoundsDenied, ea, tid);
        return;
      }
      break;
    }
  }
  t.ip = next_ip;
  if (record_trace) {
    trace.push_back(std::to_string(step_count) + "," + std::to_string(tid) +
                    "," + fmt_hex(at_ip) + "," + op_name(ins.op) + effects);
  }
}

} // namespace shadowlab
