#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace shadowlab {

// Minimal 64-bit ISA. One instruction per 16-byte code slot; SP is a
// dedicated register next to the sixteen general registers.
enum class Op {
  Mov,
  MovB, // byte load, zero-extended
  Push,
  Pop,
  Call,
  Ret,
  Jmp,
  TailJmp, // marked tail-call jump, direct only
  Jne,
  Cmp,
  Xor,
  Or,
  Add,
  Sub,
  Shl,
  Lea,
  Popcnt,
  Wrkperm, // KPERM <- low32(g12); requires g13 == g14 == 0
  Setjmp,  // buf = g1; saves resume IP and SP; g0 <- 0
  Longjmp, // buf = g1, val = g2; restores IP/SP; g0 <- val ? val : 1
  Spawn,   // fn = g1, arg = g2; g0 <- new thread id
  Out,     // append register value to observable output
  Halt,
  Abort, // raises ShadowMismatchAbort
  Bndcl, // fault if effective address < array low bound
  Bndcu, // fault if effective address >= array high bound
};

const char* op_name(Op op);

// Register ids. 0..15 are g0..g15, 16 is SP.
using Reg = int;
inline constexpr Reg kG0 = 0;
inline constexpr Reg kG1 = 1;
inline constexpr Reg kG2 = 2;
inline constexpr Reg kG3 = 3;
inline constexpr Reg kG10 = 10;
inline constexpr Reg kG11 = 11;
inline constexpr Reg kG12 = 12;
inline constexpr Reg kG13 = 13;
inline constexpr Reg kG14 = 14;
inline constexpr Reg kG15 = 15;
inline constexpr Reg kSP = 16;
inline constexpr int kNumRegs = 17;

std::string reg_name(Reg r);

struct MemRef {
  std::optional<Reg> base;
  std::optional<Reg> index;
  int64_t disp = 0;        // signed 32-bit by construction
  std::string disp_label;  // resolved at load, added to disp
  bool seg_rel = false;    // address relative to the thread's SEG base
};

struct Operand {
  enum class Kind { None, Reg, Imm, Mem };
  Kind kind = Kind::None;
  Reg reg = 0;
  int64_t imm = 0;
  std::string imm_label; // label-valued immediate, resolved at load
  MemRef mem;

  static Operand none() { return {}; }
  static Operand make_reg(Reg r) {
    Operand o;
    o.kind = Kind::Reg;
    o.reg = r;
    return o;
  }
  static Operand make_imm(int64_t v) {
    Operand o;
    o.kind = Kind::Imm;
    o.imm = v;
    return o;
  }
  static Operand make_label(std::string l) {
    Operand o;
    o.kind = Kind::Imm;
    o.imm_label = std::move(l);
    return o;
  }
  static Operand make_mem(MemRef m) {
    Operand o;
    o.kind = Kind::Mem;
    o.mem = std::move(m);
    return o;
  }
  bool is_reg(Reg r) const { return kind == Kind::Reg && reg == r; }
  bool is_mem() const { return kind == Kind::Mem; }
};

// Instrumentation category for per-category dynamic counts.
enum class Role { App, Prologue, Epilogue, Validation, Integrity };

const char* role_name(Role r);

// Markers used by the attack engine to position interventions.
enum class Marker { None, PrologueRaLoad, PrologueEnd, RaPop };

struct Instruction {
  Op op;
  Operand a; // dst / first
  Operand b; // src / second
  uint8_t priv_tag = 0; // privileged-move region id; 0 = untagged
  Role role = Role::App;
  Marker marker = Marker::None;
  bool ret_jump = false;     // emitted epilogue jump that retires a frame
  bool shadow_store = false; // emitted store targeting the shadow region
  std::string label;         // source label attached to this instruction
  int line = 0;
};

struct Function {
  std::string name;
  bool is_protected = true;
  std::vector<Instruction> instrs;
};

struct DataObject {
  std::string name;
  uint64_t size = 0;
  std::vector<uint8_t> bytes; // may be shorter than size; rest is zero
  std::optional<uint64_t> fixed_addr;
};

struct Program {
  std::vector<Function> functions;
  std::vector<DataObject> data;
  std::string entry;
  uint64_t stack_size = 64 * 1024;

  Function* find_function(const std::string& name);
  const Function* find_function(const std::string& name) const;
  DataObject* find_data(const std::string& name);
  size_t instruction_count() const;
};

// Builder shorthands used by the instrumentation passes.
namespace ins {
Instruction mov(Operand dst, Operand src);
Instruction movb(Operand dst, Operand src);
Instruction lea(Reg dst, MemRef m);
Instruction push(Reg r);
Instruction pop(Reg r);
Instruction add(Operand dst, Operand src);
Instruction sub(Operand dst, Operand src);
Instruction xor_(Reg dst, Operand src);
Instruction or_(Reg dst, Operand src);
Instruction shl(Reg dst, int64_t amount);
Instruction popcnt(Reg dst, Reg src);
Instruction cmp(Reg a, Operand b);
Instruction jne(std::string label);
Instruction jmp_reg(Reg r);
Instruction jmp_label(std::string label);
Instruction ret();
Instruction wrkperm();
Instruction out(Reg r);
Instruction halt();
Instruction abort_();
Instruction bndcl(MemRef m);
Instruction bndcu(MemRef m);
} // namespace ins

inline MemRef mem_base(Reg base, int64_t disp = 0) {
  MemRef m;
  m.base = base;
  m.disp = disp;
  return m;
}
inline MemRef mem_base_index(Reg base, Reg index, int64_t disp = 0) {
  MemRef m;
  m.base = base;
  m.index = index;
  m.disp = disp;
  return m;
}
inline MemRef mem_seg(int64_t disp) {
  MemRef m;
  m.disp = disp;
  m.seg_rel = true;
  return m;
}
inline MemRef mem_label(std::string label, std::optional<Reg> index = {},
                        int64_t disp = 0) {
  MemRef m;
  m.disp_label = std::move(label);
  m.index = index;
  m.disp = disp;
  return m;
}

} // namespace shadowlab
