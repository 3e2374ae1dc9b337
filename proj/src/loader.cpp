#include "shadowlab/loader.hpp"

#include <random>
#include <set>

namespace shadowlab {

namespace {

constexpr int64_t kImm32Min = -(int64_t(1) << 31);
constexpr int64_t kImm32Max = (int64_t(1) << 31) - 1;

uint64_t resolve_label(const std::unordered_map<std::string, uint64_t>& syms,
                       const std::string& name) {
  auto it = syms.find(name);
  if (it == syms.end()) throw LoadError("unresolved label: " + name);
  return it->second;
}

void resolve_operand(Operand& o,
                     const std::unordered_map<std::string, uint64_t>& syms,
                     bool wide_ok) {
  if (o.kind == Operand::Kind::Imm && !o.imm_label.empty()) {
    o.imm = int64_t(resolve_label(syms, o.imm_label));
    if (!wide_ok && (o.imm < kImm32Min || o.imm > kImm32Max))
      throw LoadError("label value exceeds 32-bit immediate: " + o.imm_label);
  }
  if (o.kind == Operand::Kind::Mem && !o.mem.disp_label.empty()) {
    int64_t v = o.mem.disp + int64_t(resolve_label(syms, o.mem.disp_label));
    if (v < kImm32Min || v > kImm32Max)
      throw LoadError("displacement exceeds 32 bits: " + o.mem.disp_label);
    o.mem.disp = v;
    o.mem.disp_label.clear();
  }
}

void map_range(Machine& m, uint64_t lo, uint64_t hi, bool r, bool w,
               uint8_t key, const char* what) {
  if (!m.range_free(page_base_of(lo), hi))
    throw LoadError(std::string("layout collision mapping ") + what);
  for (uint64_t b = page_base_of(lo); b < hi; b += kPageSize)
    m.map_page(b, r, w, key);
}

// Base of the compact/parallel-register shadow extent for a scheme.
uint64_t shadow_extent_base(const ShadowConfig& cfg, uint64_t seed) {
  if (cfg.integrity == IntegrityKind::BoundsScheme ||
      cfg.integrity == IntegrityKind::PrivMove)
    return kShadowBaseBounds;
  if (cfg.integrity == IntegrityKind::InfoHiding) {
    // 24 bits of page-aligned entropy above the 4 GiB line.
    std::mt19937_64 rng(seed);
    uint64_t slot = rng() & ((uint64_t(1) << 24) - 1);
    return kShadowBaseDefault + slot * kPageSize;
  }
  return kShadowBaseDefault;
}

} // namespace

LoadedImage load(const Program& p, const ShadowConfig& cfg, uint64_t seed,
                 SpawnMode spawn_mode) {
  LoadedImage img;
  img.cfg = cfg;
  Machine& m = img.machine;

  // Lay out code: one 16-byte slot per instruction, functions in order.
  std::unordered_map<std::string, uint64_t> syms;
  syms["__lbp_last"] = kLbpLastByte;
  std::vector<Instruction> code;
  std::vector<std::string> code_fn;
  {
    uint64_t addr = kCodeBase;
    for (const auto& f : p.functions) {
      if (syms.count(f.name)) throw LoadError("duplicate symbol: " + f.name);
      syms[f.name] = addr;
      for (const auto& ins : f.instrs) {
        if (!ins.label.empty()) {
          if (syms.count(ins.label))
            throw LoadError("duplicate symbol: " + ins.label);
          syms[ins.label] = addr;
        }
        code.push_back(ins);
        code_fn.push_back(f.name);
        addr += kInstrSlot;
      }
    }
  }

  // Lay out data.
  uint64_t data_cursor = kDataBase;
  std::vector<std::pair<uint64_t, const DataObject*>> placed;
  for (const auto& d : p.data) {
    uint64_t at;
    if (d.fixed_addr) {
      at = *d.fixed_addr;
    } else {
      at = data_cursor;
      data_cursor = (at + d.size + 15) & ~uint64_t(15);
    }
    if (syms.count(d.name)) throw LoadError("duplicate symbol: " + d.name);
    syms[d.name] = at;
    placed.emplace_back(at, &d);
  }

  // Resolve label operands against the final symbol table.
  for (auto& ins : code) {
    bool wide_ok = ins.op == Op::Mov && ins.a.kind == Operand::Kind::Reg;
    bool jump_like = ins.op == Op::Call || ins.op == Op::Jmp ||
                     ins.op == Op::TailJmp || ins.op == Op::Jne;
    resolve_operand(ins.a, syms, wide_ok || jump_like);
    resolve_operand(ins.b, syms, wide_ok);
  }

  m.set_code(std::move(code), kCodeBase, syms, std::move(code_fn));
  m.proc_exit_addr = kProcExit;
  m.thread_exit_addr = kThreadExit;

  // Data objects are packed and may share pages; only collisions with
  // non-data mappings are layout errors.
  {
    std::set<uint64_t> data_pages;
    for (auto& [at, d] : placed) {
      uint64_t hi = at + std::max<uint64_t>(d->size, 1);
      for (uint64_t b = page_base_of(at); b < hi; b += kPageSize) {
        if (m.is_mapped(b) && !data_pages.count(b))
          throw LoadError("layout collision mapping data object " + d->name);
        m.map_page(b, true, true, 0);
        data_pages.insert(b);
      }
      m.poke_bytes(at, d->bytes);
    }
  }

  // LBP pages: one readable page followed by one no-permission page.
  map_range(m, kLbpReadablePage, kLbpReadablePage + kPageSize, true, false, 0,
            "lbp readable page");
  map_range(m, kLbpGuardPage, kLbpGuardPage + kPageSize, false, false, 0,
            "lbp guard page");

  // Main stack.
  uint64_t stack_size = p.stack_size;
  if (stack_size % kPageSize) throw LoadError("stack size not page-aligned");
  img.stack_top = kMainStackTop;
  img.stack_base = img.stack_top - stack_size;
  map_range(m, img.stack_base, img.stack_top, true, true, 0, "stack");

  int tid = m.add_thread();
  Thread& t0 = m.threads[tid];
  t0.ip = resolve_label(syms, p.entry.empty() ? p.functions.at(0).name
                                              : p.entry);
  t0.regs[kSP] = img.stack_top - 8;
  m.poke64(t0.regs[kSP], kProcExit);
  m.seed_oracle(tid, kProcExit, t0.regs[kSP]);

  bool wants_shadow = cfg.variant == Variant::MaintainOnly ||
                      cfg.variant == Variant::Full;
  uint64_t extent_base = shadow_extent_base(cfg, seed);
  uint8_t region_key =
      cfg.integrity == IntegrityKind::KeyScheme ? cfg.shadow_key : 0;

  if (wants_shadow) {
    if (cfg.compact()) {
      uint64_t base = extent_base;
      map_range(m, base, base + kCompactRegionBytes, true, true, region_key,
                "shadow region");
      img.shadow_region_base = base;
      img.shadow_region_size = kCompactRegionBytes;
      t0.shadow_base = base;
      t0.shadow_size = kCompactRegionBytes;
      switch (cfg.mapping) {
        case Mapping::CompactRegister:
          t0.shadow_start = base;
          t0.regs[cfg.reserved_reg] = base;
          break;
        case Mapping::CompactSegment:
          // The shadow stack pointer lives at the region base; entries
          // start one slot above it.
          t0.shadow_start = base + 16;
          t0.seg = base;
          m.poke64(base, base + 16);
          break;
        case Mapping::CompactGlobal: {
          t0.shadow_start = base;
          uint64_t word = resolve_label(syms, "__shadow_sp");
          m.global_word_addr = word;
          m.poke64(word, base);
          break;
        }
        default: break;
      }
    } else {
      // Mirror region, exactly stack-sized.
      int64_t off;
      if (cfg.mapping == Mapping::ParallelConstant) {
        off = cfg.parallel_offset;
        if (off < kImm32Min || off > kImm32Max)
          throw LoadError("parallel offset exceeds 32 bits");
      } else {
        off = int64_t(extent_base) - int64_t(img.stack_base);
      }
      uint64_t lo = img.stack_base + off;
      uint64_t hi = img.stack_top + off;
      if (!is_canonical(lo) || !is_canonical(hi))
        throw LoadError("parallel shadow region is non-canonical");
      map_range(m, lo, hi, true, true, region_key, "parallel shadow region");
      img.shadow_region_base = lo;
      img.shadow_region_size = stack_size;
      img.parallel_offset = off;
      t0.shadow_base = lo;
      t0.shadow_start = lo;
      t0.shadow_size = stack_size;
      if (cfg.mapping == Mapping::ParallelRegister)
        t0.regs[cfg.reserved_reg] = uint64_t(off);
    }
  }

  // Integrity environment.
  m.integrity.kind = cfg.integrity;
  m.integrity.region_id = cfg.region_id;
  if (wants_shadow &&
      (cfg.integrity == IntegrityKind::BoundsScheme ||
       cfg.integrity == IntegrityKind::PrivMove)) {
    uint64_t lo = img.shadow_region_base;
    uint64_t hi = cfg.compact() ? extent_base + kShadowExtentBytes
                                : img.shadow_region_base + stack_size;
    m.integrity.protected_lo = lo;
    m.integrity.protected_hi = hi;
    m.integrity.array_lo = 0;
    m.integrity.array_hi = lo; // unprivileged stores stay below the region
  }
  if (cfg.integrity == IntegrityKind::KeyScheme) {
    m.integrity.armed_kperm = kperm_write_disable(cfg.shadow_key);
    t0.kperm = m.integrity.armed_kperm;
    if (wants_shadow) {
      m.integrity.protected_lo = img.shadow_region_base;
      m.integrity.protected_hi =
          img.shadow_region_base + img.shadow_region_size;
    }
  }

  // Thread hooks: per-thread stacks from the arena, per-mapping shadow setup.
  ShadowConfig pcfg = cfg;
  int64_t poff = img.parallel_offset;
  m.spawn_policy.setup = [pcfg, stack_size, extent_base, region_key, poff,
                          wants_shadow, spawn_mode](Machine& mm, Thread& c,
                                                    int ctid) -> bool {
    uint64_t top = kThreadArenaTop + uint64_t(ctid - 1) * kThreadArenaStride;
    uint64_t base = top - stack_size;
    if (!mm.range_free(base, top)) {
      mm.finding = "thread stack arena collision";
      return false;
    }
    for (uint64_t b = base; b < top; b += kPageSize)
      mm.map_page(b, true, true, 0);
    c.regs[kSP] = top - 8;
    mm.poke64(c.regs[kSP], mm.thread_exit_addr);
    if (mm.integrity.kind == IntegrityKind::KeyScheme)
      c.kperm = mm.integrity.armed_kperm;
    if (!wants_shadow) return true;
    switch (pcfg.mapping) {
      case Mapping::CompactGlobal:
        // No per-thread setup: the pointer word and region stay shared.
        c.shadow_base = mm.threads[0].shadow_base;
        c.shadow_start = mm.threads[0].shadow_start;
        c.shadow_size = mm.threads[0].shadow_size;
        break;
      case Mapping::CompactRegister:
      case Mapping::CompactSegment: {
        uint64_t rbase = extent_base + uint64_t(ctid) * 2 * kPageSize;
        if (!mm.range_free(rbase, rbase + kCompactRegionBytes)) {
          mm.finding = "child shadow region collision";
          return false;
        }
        for (uint64_t b = rbase; b < rbase + kCompactRegionBytes;
             b += kPageSize)
          mm.map_page(b, true, true, region_key);
        c.shadow_base = rbase;
        c.shadow_size = kCompactRegionBytes;
        if (pcfg.mapping == Mapping::CompactRegister) {
          c.shadow_start = rbase;
          c.regs[pcfg.reserved_reg] = rbase;
        } else {
          c.shadow_start = rbase + 16;
          c.seg = rbase;
          mm.poke64(rbase, rbase + 16);
        }
        break;
      }
      case Mapping::ParallelConstant: {
        uint64_t lo = base + uint64_t(poff);
        uint64_t hi = top + uint64_t(poff);
        if (!mm.range_free(lo, hi)) {
          mm.finding =
              "parallel-constant: child shadow at stack+offset collides "
              "with an existing mapping";
          return false;
        }
        for (uint64_t b = page_base_of(lo); b < hi; b += kPageSize)
          mm.map_page(b, true, true, region_key);
        c.shadow_base = lo;
        c.shadow_start = lo;
        c.shadow_size = stack_size;
        break;
      }
      case Mapping::ParallelRegister: {
        if (spawn_mode == SpawnMode::PrInheritOffset) {
          // Models a runtime without thread hooks: the child inherits the
          // creating thread's offset, which maps its stack nowhere useful.
          c.regs[pcfg.reserved_reg] = mm.threads[0].regs[pcfg.reserved_reg];
          c.shadow_base = 0;
          c.shadow_size = 0;
          break;
        }
        uint64_t lo = kPrMirrorArena + uint64_t(ctid - 1) * kPrMirrorStride;
        uint64_t hi = lo + stack_size;
        if (!mm.range_free(lo, hi)) {
          mm.finding = "parallel-register child mirror collision";
          return false;
        }
        for (uint64_t b = lo; b < hi; b += kPageSize)
          mm.map_page(b, true, true, region_key);
        c.shadow_base = lo;
        c.shadow_start = lo;
        c.shadow_size = stack_size;
        c.regs[pcfg.reserved_reg] = lo - base;
        break;
      }
    }
    return true;
  };

  return img;
}

} // namespace shadowlab
