#include "shadowlab/isa.hpp"

namespace shadowlab {

const char* op_name(Op op) {
  switch (op) {
    case Op::Mov: return "mov";
    case Op::MovB: return "mov.b";
    case Op::Push: return "push";
    case Op::Pop: return "pop";
    case Op::Call: return "call";
    case Op::Ret: return "ret";
    case Op::Jmp: return "jmp";
    case Op::TailJmp: return "tailjmp";
    case Op::Jne: return "jne";
    case Op::Cmp: return "cmp";
    case Op::Xor: return "xor";
    case Op::Or: return "or";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Shl: return "shl";
    case Op::Lea: return "lea";
    case Op::Popcnt: return "popcnt";
    case Op::Wrkperm: return "wrkperm";
    case Op::Setjmp: return "setjmp";
    case Op::Longjmp: return "longjmp";
    case Op::Spawn: return "spawn";
    case Op::Out: return "out";
    case Op::Halt: return "halt";
    case Op::Abort: return "abort";
    case Op::Bndcl: return "bndcl";
    case Op::Bndcu: return "bndcu";
  }
  return "?";
}

std::string reg_name(Reg r) {
  if (r == kSP) return "sp";
  return "g" + std::to_string(r);
}

const char* role_name(Role r) {
  switch (r) {
    case Role::App: return "application";
    case Role::Prologue: return "prologue";
    case Role::Epilogue: return "epilogue";
    case Role::Validation: return "validation";
    case Role::Integrity: return "integrity";
  }
  return "?";
}

Function* Program::find_function(const std::string& name) {
  for (auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

const Function* Program::find_function(const std::string& name) const {
  for (auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

DataObject* Program::find_data(const std::string& name) {
  for (auto& d : data)
    if (d.name == name) return &d;
  return nullptr;
}

size_t Program::instruction_count() const {
  size_t n = 0;
  for (auto& f : functions) n += f.instrs.size();
  return n;
}

namespace ins {

static Instruction make(Op op, Operand a = Operand::none(),
                        Operand b = Operand::none()) {
  Instruction i;
  i.op = op;
  i.a = std::move(a);
  i.b = std::move(b);
  return i;
}

Instruction mov(Operand dst, Operand src) {
  return make(Op::Mov, std::move(dst), std::move(src));
}
Instruction movb(Operand dst, Operand src) {
  return make(Op::MovB, std::move(dst), std::move(src));
}
Instruction lea(Reg dst, MemRef m) {
  return make(Op::Lea, Operand::make_reg(dst), Operand::make_mem(std::move(m)));
}
Instruction push(Reg r) { return make(Op::Push, Operand::make_reg(r)); }
Instruction pop(Reg r) { return make(Op::Pop, Operand::make_reg(r)); }
Instruction add(Operand dst, Operand src) {
  return make(Op::Add, std::move(dst), std::move(src));
}
Instruction sub(Operand dst, Operand src) {
  return make(Op::Sub, std::move(dst), std::move(src));
}
Instruction xor_(Reg dst, Operand src) {
  return make(Op::Xor, Operand::make_reg(dst), std::move(src));
}
Instruction or_(Reg dst, Operand src) {
  return make(Op::Or, Operand::make_reg(dst), std::move(src));
}
Instruction shl(Reg dst, int64_t amount) {
  return make(Op::Shl, Operand::make_reg(dst), Operand::make_imm(amount));
}
Instruction popcnt(Reg dst, Reg src) {
  return make(Op::Popcnt, Operand::make_reg(dst), Operand::make_reg(src));
}
Instruction cmp(Reg a, Operand b) {
  return make(Op::Cmp, Operand::make_reg(a), std::move(b));
}
Instruction jne(std::string label) {
  return make(Op::Jne, Operand::make_label(std::move(label)));
}
Instruction jmp_reg(Reg r) { return make(Op::Jmp, Operand::make_reg(r)); }
Instruction jmp_label(std::string label) {
  return make(Op::Jmp, Operand::make_label(std::move(label)));
}
Instruction ret() { return make(Op::Ret); }
Instruction wrkperm() { return make(Op::Wrkperm); }
Instruction out(Reg r) { return make(Op::Out, Operand::make_reg(r)); }
Instruction halt() { return make(Op::Halt); }
Instruction abort_() { return make(Op::Abort); }
Instruction bndcl(MemRef m) {
  return make(Op::Bndcl, Operand::make_mem(std::move(m)));
}
Instruction bndcu(MemRef m) {
  return make(Op::Bndcu, Operand::make_mem(std::move(m)));
}

} // namespace ins

} // namespace shadowlab
