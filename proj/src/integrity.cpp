#include "shadowlab/integrity.hpp"

#include "shadowlab/machine.hpp"

namespace shadowlab {

namespace {

using namespace ins;

Instruction itag(Instruction i) {
  i.role = Role::Integrity;
  return i;
}

bool is_app_store(const Instruction& i) {
  if (i.role != Role::App) return false;
  switch (i.op) {
    case Op::Mov:
    case Op::Add:
    case Op::Sub:
      return i.a.kind == Operand::Kind::Mem;
    case Op::Push:
      return true;
    default:
      return false;
  }
}

MemRef store_target(const Instruction& i) {
  if (i.op == Op::Push) return mem_base(kSP, -8);
  return i.a.mem;
}

void bracket_runs(std::vector<Instruction>& body, uint8_t shadow_key) {
  std::vector<Instruction> out;
  size_t n = body.size();
  size_t i = 0;
  while (i < n) {
    Role r = body[i].role;
    size_t j = i;
    while (j < n && body[j].role == r) j++;
    // Find the shadow-store span inside this role run.
    size_t first = j, last = j;
    for (size_t k = i; k < j; k++) {
      if (body[k].shadow_store) {
        if (first == j) first = k;
        last = k;
      }
    }
    for (size_t k = i; k < j; k++) {
      if (k == first)
        for (auto& b : key_bracket_open()) out.push_back(b);
      out.push_back(std::move(body[k]));
      if (k == last && first != j)
        for (auto& b : key_bracket_close(shadow_key)) out.push_back(b);
    }
    i = j;
  }
  body = std::move(out);
}

} // namespace

std::vector<Instruction> key_bracket_open() {
  return {
      itag(mov(Operand::make_reg(kG12), Operand::make_imm(0))),
      itag(xor_(kG13, Operand::make_reg(kG13))),
      itag(xor_(kG14, Operand::make_reg(kG14))),
      itag(wrkperm()),
  };
}

std::vector<Instruction> key_bracket_close(uint8_t shadow_key) {
  return {
      itag(mov(Operand::make_reg(kG12),
               Operand::make_imm(int64_t(kperm_write_disable(shadow_key))))),
      itag(xor_(kG13, Operand::make_reg(kG13))),
      itag(xor_(kG14, Operand::make_reg(kG14))),
      itag(wrkperm()),
  };
}

Program apply_integrity(const Program& p, const ShadowConfig& cfg) {
  Program out = p;
  switch (cfg.integrity) {
    case IntegrityKind::InfoHiding:
    case IntegrityKind::None:
      return out;
    case IntegrityKind::KeyScheme:
      for (auto& f : out.functions) bracket_runs(f.instrs, cfg.shadow_key);
      return out;
    case IntegrityKind::BoundsScheme:
      for (auto& f : out.functions) {
        std::vector<Instruction> body;
        for (auto& i : f.instrs) {
          if (is_app_store(i)) {
            MemRef t = store_target(i);
            Instruction lo = itag(bndcl(t));
            Instruction hi = itag(bndcu(t));
            // A jump to the store must land on its check.
            lo.label = i.label;
            i.label.clear();
            body.push_back(std::move(lo));
            body.push_back(std::move(hi));
          }
          body.push_back(std::move(i));
        }
        f.instrs = std::move(body);
      }
      return out;
    case IntegrityKind::PrivMove:
      for (auto& f : out.functions)
        for (auto& i : f.instrs)
          if (i.shadow_store) i.priv_tag = cfg.region_id;
      return out;
  }
  return out;
}

IntegrityCostRow integrity_cost(const std::string& scheme,
                                const Program& without, const Program& with,
                                uint64_t dyn_without, uint64_t dyn_with,
                                uint64_t calls) {
  IntegrityCostRow row;
  row.scheme = scheme;
  row.static_added =
      int64_t(with.instruction_count()) - int64_t(without.instruction_count());
  row.dynamic_added = int64_t(dyn_with) - int64_t(dyn_without);
  row.per_call_delta = calls ? double(row.dynamic_added) / double(calls) : 0.0;
  return row;
}

} // namespace shadowlab
