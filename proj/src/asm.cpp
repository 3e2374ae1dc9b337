#include "shadowlab/asm.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

namespace shadowlab {

namespace {

constexpr int64_t kImm32Min = -(int64_t(1) << 31);
constexpr int64_t kImm32Max = (int64_t(1) << 31) - 1;

bool fits_imm32(int64_t v) { return v >= kImm32Min && v <= kImm32Max; }

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

struct Tok {
  std::string text;
  int col;
};

// Splits an instruction line into tokens; punctuation ',' '[' ']' '+' '-'
// ':' '@' are single-char tokens, quoted strings stay whole.
std::vector<Tok> lex(const std::string& line, int lineno) {
  std::vector<Tok> out;
  size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      i++;
      continue;
    }
    if (c == ';') break;
    int col = int(i) + 1;
    if (c == '"') {
      size_t j = i + 1;
      while (j < line.size() && line[j] != '"') j++;
      if (j == line.size())
        throw ParseError("unterminated string", lineno, col);
      out.push_back({line.substr(i, j - i + 1), col});
      i = j + 1;
      continue;
    }
    if (std::string(",[]+-:@").find(c) != std::string::npos) {
      out.push_back({std::string(1, c), col});
      i++;
      continue;
    }
    size_t j = i;
    while (j < line.size() &&
           (std::isalnum(static_cast<unsigned char>(line[j])) ||
            line[j] == '_' || line[j] == '.')) {
      j++;
    }
    if (j == i) throw ParseError("unexpected character", lineno, col);
    out.push_back({line.substr(i, j - i), col});
    i = j;
  }
  return out;
}

std::optional<Reg> reg_from(const std::string& t) {
  std::string s = lower(t);
  if (s == "sp") return kSP;
  if (s.size() >= 2 && s[0] == 'g') {
    int n = 0;
    for (size_t i = 1; i < s.size(); i++) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
      n = n * 10 + (s[i] - '0');
    }
    if (n <= 15) return Reg(n);
  }
  return std::nullopt;
}

bool parse_int(const std::string& t, int64_t& out) {
  if (t.empty()) return false;
  size_t pos = 0;
  try {
    if (t.size() > 2 && (t.substr(0, 2) == "0x" || t.substr(0, 2) == "0X")) {
      out = int64_t(std::stoull(t.substr(2), &pos, 16));
      return pos == t.size() - 2;
    }
    if (!std::isdigit(static_cast<unsigned char>(t[0]))) return false;
    out = int64_t(std::stoull(t, &pos, 10));
    return pos == t.size();
  } catch (...) {
    return false;
  }
}

std::optional<Op> op_from(const std::string& t) {
  static const std::map<std::string, Op> ops = {
      {"mov", Op::Mov},         {"mov.b", Op::MovB},
      {"push", Op::Push},       {"pop", Op::Pop},
      {"call", Op::Call},       {"ret", Op::Ret},
      {"jmp", Op::Jmp},         {"tailjmp", Op::TailJmp},
      {"jne", Op::Jne},         {"cmp", Op::Cmp},
      {"xor", Op::Xor},         {"or", Op::Or},
      {"add", Op::Add},         {"sub", Op::Sub},
      {"shl", Op::Shl},         {"lea", Op::Lea},
      {"popcnt", Op::Popcnt},   {"wrkperm", Op::Wrkperm},
      {"setjmp", Op::Setjmp},   {"longjmp", Op::Longjmp},
      {"spawn", Op::Spawn},     {"out", Op::Out},
      {"halt", Op::Halt},       {"abort", Op::Abort},
      {"bndcl", Op::Bndcl},     {"bndcu", Op::Bndcu},
  };
  auto it = ops.find(lower(t));
  if (it == ops.end()) return std::nullopt;
  return it->second;
}

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  Program run() {
    std::istringstream in(text_);
    std::string raw;
    while (std::getline(in, raw)) {
      lineno_++;
      auto toks = lex(raw, lineno_);
      if (toks.empty()) continue;
      if (toks[0].text[0] == '.') {
        directive(toks);
      } else {
        instruction_line(toks);
      }
    }
    if (in_func_) throw ParseError("missing .endfunc", lineno_, 1);
    finish();
    return std::move(prog_);
  }

 private:
  void expect(bool cond, const std::string& msg, int col) {
    if (!cond) throw ParseError(msg, lineno_, col);
  }

  void define_label(const std::string& name, int col) {
    expect(!labels_.count(name), "duplicate label: " + name, col);
    labels_.insert(name);
  }

  void directive(const std::vector<Tok>& toks) {
    std::string d = lower(toks[0].text);
    if (d == ".entry") {
      expect(toks.size() == 2, ".entry takes one name", toks[0].col);
      expect(prog_.entry.empty(), "duplicate .entry", toks[0].col);
      prog_.entry = toks[1].text;
    } else if (d == ".stack") {
      int64_t v;
      expect(toks.size() == 2 && parse_int(toks[1].text, v),
             ".stack takes a byte count", toks[0].col);
      prog_.stack_size = uint64_t(v);
    } else if (d == ".data") {
      data_directive(toks);
    } else if (d == ".func") {
      expect(!in_func_, "nested .func", toks[0].col);
      expect(toks.size() >= 2, ".func takes a name", toks[0].col);
      Function f;
      f.name = toks[1].text;
      define_label(f.name, toks[1].col);
      f.is_protected = true;
      if (toks.size() >= 3) {
        std::string flag = lower(toks[2].text);
        expect(flag == "protected" || flag == "unprotected",
               "expected protected|unprotected", toks[2].col);
        f.is_protected = flag == "protected";
      }
      prog_.functions.push_back(std::move(f));
      in_func_ = true;
    } else if (d == ".endfunc") {
      expect(in_func_, ".endfunc outside .func", toks[0].col);
      in_func_ = false;
    } else {
      throw ParseError("unknown directive: " + d, lineno_, toks[0].col);
    }
  }

  void data_directive(const std::vector<Tok>& toks) {
    expect(toks.size() >= 3, ".data takes name and size", toks[0].col);
    DataObject obj;
    obj.name = toks[1].text;
    define_label(obj.name, toks[1].col);
    size_t i = 2;
    if (toks[i].text.front() == '"') {
      std::string s = toks[i].text.substr(1, toks[i].text.size() - 2);
      obj.bytes.assign(s.begin(), s.end());
      obj.bytes.push_back(0);
      obj.size = obj.bytes.size();
      i++;
    } else {
      int64_t sz;
      expect(parse_int(toks[i].text, sz) && sz > 0, "bad data size",
             toks[i].col);
      obj.size = uint64_t(sz);
      i++;
      if (i < toks.size() && toks[i].text == "@") {
        int64_t addr;
        expect(i + 1 < toks.size() && parse_int(toks[i + 1].text, addr),
               "bad data address", toks[i].col);
        obj.fixed_addr = uint64_t(addr);
        i += 2;
      }
      while (i < toks.size()) {
        int64_t b;
        expect(parse_int(toks[i].text, b) && b >= 0 && b <= 255,
               "bad data byte", toks[i].col);
        obj.bytes.push_back(uint8_t(b));
        i++;
      }
      expect(obj.bytes.size() <= obj.size, "initializer exceeds size",
             toks[0].col);
    }
    prog_.data.push_back(std::move(obj));
  }

  void instruction_line(std::vector<Tok> toks) {
    expect(in_func_, "instruction outside .func", toks[0].col);
    std::string label;
    if (toks.size() >= 2 && toks[1].text == ":") {
      label = toks[0].text;
      expect(!reg_from(label) && !op_from(label),
             "label shadows a register or opcode", toks[0].col);
      expect(pending_label_.empty(), "consecutive labels", toks[0].col);
      define_label(label, toks[0].col);
      toks.erase(toks.begin(), toks.begin() + 2);
      if (toks.empty()) {
        pending_label_ = label;
        return;
      }
    }
    if (!pending_label_.empty() && label.empty()) {
      label = pending_label_;
      pending_label_.clear();
    }
    auto op = op_from(toks[0].text);
    expect(bool(op), "unknown opcode: " + toks[0].text, toks[0].col);

    Instruction ins;
    ins.op = *op;
    ins.label = label;
    ins.line = lineno_;
    size_t i = 1;
    std::vector<Operand> operands;
    while (i < toks.size()) {
      if (toks[i].text == "@") {
        int64_t tag;
        expect(i + 1 < toks.size() && parse_int(toks[i + 1].text, tag) &&
                   tag >= 0 && tag <= 255,
               "bad privilege tag", toks[i].col);
        ins.priv_tag = uint8_t(tag);
        i += 2;
        continue;
      }
      operands.push_back(parse_operand(toks, i));
      if (i < toks.size() && toks[i].text == ",") i++;
    }
    if (!operands.empty()) ins.a = operands[0];
    if (operands.size() > 1) ins.b = operands[1];
    expect(operands.size() <= 2, "too many operands", toks[0].col);
    check_shape(ins, toks[0].col);
    prog_.functions.back().instrs.push_back(std::move(ins));
  }

  Operand parse_operand(const std::vector<Tok>& toks, size_t& i) {
    const Tok& t = toks[i];
    if (t.text == "[" || (lower(t.text) == "seg" && i + 2 < toks.size() &&
                          toks[i + 1].text == ":")) {
      return Operand::make_mem(parse_mem(toks, i));
    }
    if (auto r = reg_from(t.text)) {
      i++;
      return Operand::make_reg(*r);
    }
    int64_t v;
    if (parse_int(t.text, v)) {
      i++;
      return Operand::make_imm(v);
    }
    if (t.text == "-") {
      expect(i + 1 < toks.size() && parse_int(toks[i + 1].text, v),
             "bad negative immediate", t.col);
      i += 2;
      return Operand::make_imm(-v);
    }
    // Bare identifier: label-valued immediate.
    expect(std::isalpha(static_cast<unsigned char>(t.text[0])) ||
               t.text[0] == '_',
           "bad operand: " + t.text, t.col);
    refs_.emplace_back(t.text, lineno_);
    i++;
    return Operand::make_label(t.text);
  }

  MemRef parse_mem(const std::vector<Tok>& toks, size_t& i) {
    MemRef m;
    if (lower(toks[i].text) == "seg") {
      m.seg_rel = true;
      i += 2; // seg :
    }
    expect(i < toks.size() && toks[i].text == "[", "expected [", toks[i].col);
    i++;
    int sign = 1;
    bool want_term = true;
    while (i < toks.size() && toks[i].text != "]") {
      const Tok& t = toks[i];
      if (t.text == "+") {
        sign = 1;
        i++;
        want_term = true;
        continue;
      }
      if (t.text == "-") {
        sign = -1;
        i++;
        want_term = true;
        continue;
      }
      expect(want_term, "expected + or -", t.col);
      if (auto r = reg_from(t.text)) {
        expect(sign == 1, "registers cannot be subtracted", t.col);
        if (!m.base && !m.index) {
          m.base = *r;
        } else if (!m.index) {
          m.index = *r;
        } else {
          throw ParseError("too many registers in address", lineno_, t.col);
        }
      } else {
        int64_t v;
        if (parse_int(t.text, v)) {
          m.disp += sign * v;
        } else {
          expect(m.disp_label.empty() && sign == 1,
                 "bad address term: " + t.text, t.col);
          m.disp_label = t.text;
          refs_.emplace_back(t.text, lineno_);
        }
      }
      want_term = false;
      i++;
    }
    expect(i < toks.size(), "missing ]", toks.back().col);
    i++;
    expect(!m.seg_rel || (!m.base && !m.index && m.disp_label.empty()),
           "segment operands take a constant displacement", toks[i - 1].col);
    expect(fits_imm32(m.disp), "displacement exceeds 32 bits", toks[i - 1].col);
    return m;
  }

  void check_shape(const Instruction& ins, int col) {
    auto is_reg = [](const Operand& o) { return o.kind == Operand::Kind::Reg; };
    auto is_imm = [](const Operand& o) { return o.kind == Operand::Kind::Imm; };
    auto is_mem = [](const Operand& o) { return o.kind == Operand::Kind::Mem; };
    auto is_none = [](const Operand& o) {
      return o.kind == Operand::Kind::None;
    };
    auto imm32_ok = [&](const Operand& o) {
      return !is_imm(o) || !o.imm_label.empty() || fits_imm32(o.imm);
    };
    expect(!(is_mem(ins.a) && is_mem(ins.b)),
           "at most one memory operand", col);
    switch (ins.op) {
      case Op::Mov:
        expect((is_reg(ins.a) || is_mem(ins.a)) && !is_none(ins.b),
               "mov dst must be register or memory", col);
        expect(is_reg(ins.a) || imm32_ok(ins.b),
               "immediate exceeds 32 bits (load it through a register)", col);
        break;
      case Op::MovB:
        expect(is_reg(ins.a) && is_mem(ins.b), "mov.b loads a byte into a register",
               col);
        break;
      case Op::Push:
      case Op::Pop:
        expect(is_reg(ins.a) && is_none(ins.b), "expected one register", col);
        break;
      case Op::Out:
        expect((is_reg(ins.a) || is_imm(ins.a)) && is_none(ins.b),
               "expected register or immediate", col);
        expect(imm32_ok(ins.a), "immediate exceeds 32 bits", col);
        break;
      case Op::Call:
      case Op::Jmp:
        expect((is_reg(ins.a) || is_imm(ins.a)) && is_none(ins.b),
               "expected label or register", col);
        break;
      case Op::TailJmp:
      case Op::Jne:
        expect(is_imm(ins.a) && !ins.a.imm_label.empty() && is_none(ins.b),
               "expected label", col);
        break;
      case Op::Cmp:
      case Op::Xor:
      case Op::Or:
        expect(is_reg(ins.a) && (is_reg(ins.b) || is_imm(ins.b)),
               "expected register, register|immediate", col);
        expect(imm32_ok(ins.b), "immediate exceeds 32 bits", col);
        break;
      case Op::Add:
      case Op::Sub:
        expect((is_reg(ins.a) || is_mem(ins.a)) &&
                   (is_reg(ins.b) || is_imm(ins.b)),
               "expected register|memory, register|immediate", col);
        expect(imm32_ok(ins.b), "immediate exceeds 32 bits", col);
        break;
      case Op::Shl:
        expect(is_reg(ins.a) && is_imm(ins.b) && ins.b.imm_label.empty() &&
                   ins.b.imm >= 0 && ins.b.imm <= 63,
               "expected register, shift count 0..63", col);
        break;
      case Op::Lea:
        expect(is_reg(ins.a) && is_mem(ins.b), "expected register, memory",
               col);
        break;
      case Op::Popcnt:
        expect(is_reg(ins.a) && is_reg(ins.b), "expected two registers", col);
        break;
      case Op::Bndcl:
      case Op::Bndcu:
        expect(is_mem(ins.a) && is_none(ins.b), "expected memory operand",
               col);
        break;
      case Op::Ret:
      case Op::Wrkperm:
      case Op::Setjmp:
      case Op::Longjmp:
      case Op::Spawn:
      case Op::Halt:
      case Op::Abort:
        expect(is_none(ins.a) && is_none(ins.b), "takes no operands", col);
        break;
    }
  }

  void finish() {
    if (!pending_label_.empty())
      throw ParseError("dangling label: " + pending_label_, lineno_, 1);
    std::vector<std::string> unresolved;
    for (auto& [name, line] : refs_) {
      if (!labels_.count(name)) {
        unresolved.push_back(name + " (line " + std::to_string(line) + ")");
      }
    }
    if (!unresolved.empty()) {
      std::string msg = "unresolved labels:";
      for (auto& u : unresolved) msg += " " + u;
      throw ParseError(msg, lineno_, 1);
    }
    if (prog_.entry.empty() && !prog_.functions.empty())
      prog_.entry = prog_.functions.front().name;
    if (!prog_.entry.empty()) {
      if (!prog_.find_function(prog_.entry))
        throw ParseError("entry function not defined: " + prog_.entry,
                         lineno_, 1);
    }
  }

  const std::string& text_;
  Program prog_;
  bool in_func_ = false;
  int lineno_ = 0;
  std::string pending_label_;
  std::set<std::string> labels_;
  std::vector<std::pair<std::string, int>> refs_;
};

std::string fmt_int(int64_t v) {
  if (v < 0) return "-" + fmt_int(-v);
  if (v < 4096) return std::to_string(v);
  char buf[32];
  snprintf(buf, sizeof buf, "0x%" PRIx64, uint64_t(v));
  return buf;
}

std::string fmt_mem(const MemRef& m) {
  if (m.seg_rel) return "seg:[" + fmt_int(m.disp) + "]";
  std::string s = "[";
  bool first = true;
  auto join = [&](const std::string& t) {
    if (!first) s += "+";
    s += t;
    first = false;
  };
  if (m.base) join(reg_name(*m.base));
  if (m.index) join(reg_name(*m.index));
  if (!m.disp_label.empty()) join(m.disp_label);
  if (m.disp != 0 || first) {
    if (m.disp < 0) {
      s += "-" + fmt_int(-m.disp);
      first = false;
    } else {
      join(fmt_int(m.disp));
    }
  }
  return s + "]";
}

std::string fmt_operand(const Operand& o) {
  switch (o.kind) {
    case Operand::Kind::Reg: return reg_name(o.reg);
    case Operand::Kind::Imm:
      return o.imm_label.empty() ? fmt_int(o.imm) : o.imm_label;
    case Operand::Kind::Mem: return fmt_mem(o.mem);
    default: return "";
  }
}

} // namespace

Program parse_program(const std::string& text) { return Parser(text).run(); }

std::string emit_program(const Program& p) {
  std::string out;
  if (!p.entry.empty()) out += ".entry " + p.entry + "\n";
  out += ".stack " + std::to_string(p.stack_size) + "\n";
  for (const auto& d : p.data) {
    out += ".data " + d.name + " " + std::to_string(d.size);
    if (d.fixed_addr) out += " @ " + fmt_int(int64_t(*d.fixed_addr));
    for (uint8_t b : d.bytes) out += " " + std::to_string(int(b));
    out += "\n";
  }
  for (const auto& f : p.functions) {
    out += "\n.func " + f.name + (f.is_protected ? " protected" : " unprotected") +
           "\n";
    for (const auto& ins : f.instrs) {
      if (!ins.label.empty()) out += ins.label + ":\n";
      std::string line = "  ";
      line += op_name(ins.op);
      std::string a = fmt_operand(ins.a);
      std::string b = fmt_operand(ins.b);
      if (!a.empty()) line += " " + a;
      if (!b.empty()) line += ", " + b;
      if (ins.priv_tag) line += " @ " + std::to_string(int(ins.priv_tag));
      if (ins.role != Role::App) {
        line += "  ; " + std::string(role_name(ins.role));
        if (ins.ret_jump) line += " return";
      }
      out += line + "\n";
    }
    out += ".endfunc\n";
  }
  return out;
}

namespace {

bool operands_equal(const Operand& x, const Operand& y) {
  if (x.kind != y.kind) return false;
  switch (x.kind) {
    case Operand::Kind::Reg: return x.reg == y.reg;
    case Operand::Kind::Imm:
      return x.imm == y.imm && x.imm_label == y.imm_label;
    case Operand::Kind::Mem:
      return x.mem.base == y.mem.base && x.mem.index == y.mem.index &&
             x.mem.disp == y.mem.disp && x.mem.disp_label == y.mem.disp_label &&
             x.mem.seg_rel == y.mem.seg_rel;
    default: return true;
  }
}

} // namespace

bool programs_equal(const Program& a, const Program& b) {
  if (a.entry != b.entry || a.stack_size != b.stack_size) return false;
  if (a.functions.size() != b.functions.size() || a.data.size() != b.data.size())
    return false;
  for (size_t i = 0; i < a.data.size(); i++) {
    const auto& x = a.data[i];
    const auto& y = b.data[i];
    if (x.name != y.name || x.size != y.size || x.bytes != y.bytes ||
        x.fixed_addr != y.fixed_addr)
      return false;
  }
  for (size_t i = 0; i < a.functions.size(); i++) {
    const auto& f = a.functions[i];
    const auto& g = b.functions[i];
    if (f.name != g.name || f.is_protected != g.is_protected ||
        f.instrs.size() != g.instrs.size())
      return false;
    for (size_t j = 0; j < f.instrs.size(); j++) {
      const auto& x = f.instrs[j];
      const auto& y = g.instrs[j];
      if (x.op != y.op || x.label != y.label || x.priv_tag != y.priv_tag ||
          !operands_equal(x.a, y.a) || !operands_equal(x.b, y.b))
        return false;
    }
  }
  return true;
}

} // namespace shadowlab
