#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "shadowlab/isa.hpp"

namespace shadowlab {

enum class Mapping {
  CompactGlobal,
  CompactSegment,
  CompactRegister,
  ParallelConstant,
  ParallelRegister,
};

enum class Validation { Cmp, Fault, Lbp, UseShadow };

enum class IntegrityKind { InfoHiding, KeyScheme, BoundsScheme, PrivMove, None };

// Instrumentation variants for the overhead breakdown.
enum class Variant { Baseline, PopJmpOnly, MaintainOnly, Full };

struct ShadowConfig {
  Mapping mapping = Mapping::CompactRegister;
  Validation validation = Validation::UseShadow;
  IntegrityKind integrity = IntegrityKind::InfoHiding;
  Variant variant = Variant::Full;
  int64_t parallel_offset = 0x3f000000; // ParallelConstant only; signed 32-bit
  Reg reserved_reg = kG15;
  uint8_t shadow_key = 1; // KeyScheme page key
  uint8_t region_id = 1;  // PrivMove region id

  bool compact() const {
    return mapping == Mapping::CompactGlobal ||
           mapping == Mapping::CompactSegment ||
           mapping == Mapping::CompactRegister;
  }
  bool parallel() const { return !compact(); }
  bool uses_reserved_reg() const {
    return mapping == Mapping::CompactRegister ||
           mapping == Mapping::ParallelRegister;
  }
};

const char* mapping_name(Mapping m);
const char* validation_name(Validation v);
const char* integrity_name(IntegrityKind k);
const char* variant_name(Variant v);

std::optional<Mapping> mapping_from_name(const std::string& s);
std::optional<Validation> validation_from_name(const std::string& s);
std::optional<IntegrityKind> integrity_from_name(const std::string& s);
std::optional<Variant> variant_from_name(const std::string& s);

} // namespace shadowlab
