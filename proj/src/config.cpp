#include "shadowlab/config.hpp"

namespace shadowlab {

const char* mapping_name(Mapping m) {
  switch (m) {
    case Mapping::CompactGlobal: return "compact-global";
    case Mapping::CompactSegment: return "compact-segment";
    case Mapping::CompactRegister: return "compact-register";
    case Mapping::ParallelConstant: return "parallel-constant";
    case Mapping::ParallelRegister: return "parallel-register";
  }
  return "?";
}

const char* validation_name(Validation v) {
  switch (v) {
    case Validation::Cmp: return "cmp";
    case Validation::Fault: return "fault";
    case Validation::Lbp: return "lbp";
    case Validation::UseShadow: return "use-shadow";
  }
  return "?";
}

const char* integrity_name(IntegrityKind k) {
  switch (k) {
    case IntegrityKind::InfoHiding: return "info-hiding";
    case IntegrityKind::KeyScheme: return "key";
    case IntegrityKind::BoundsScheme: return "bounds";
    case IntegrityKind::PrivMove: return "priv-move";
    case IntegrityKind::None: return "none";
  }
  return "?";
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::PopJmpOnly: return "pop-jmp-only";
    case Variant::MaintainOnly: return "maintain-only";
    case Variant::Full: return "full";
  }
  return "?";
}

std::optional<Mapping> mapping_from_name(const std::string& s) {
  for (Mapping m : {Mapping::CompactGlobal, Mapping::CompactSegment,
                    Mapping::CompactRegister, Mapping::ParallelConstant,
                    Mapping::ParallelRegister})
    if (s == mapping_name(m)) return m;
  return std::nullopt;
}

std::optional<Validation> validation_from_name(const std::string& s) {
  for (Validation v : {Validation::Cmp, Validation::Fault, Validation::Lbp,
                       Validation::UseShadow})
    if (s == validation_name(v)) return v;
  return std::nullopt;
}

std::optional<IntegrityKind> integrity_from_name(const std::string& s) {
  for (IntegrityKind k :
       {IntegrityKind::InfoHiding, IntegrityKind::KeyScheme,
        IntegrityKind::BoundsScheme, IntegrityKind::PrivMove,
        IntegrityKind::None})
    if (s == integrity_name(k)) return k;
  return std::nullopt;
}

std::optional<Variant> variant_from_name(const std::string& s) {
  for (Variant v : {Variant::Baseline, Variant::PopJmpOnly,
                    Variant::MaintainOnly, Variant::Full})
    if (s == variant_name(v)) return v;
  return std::nullopt;
}

} // namespace shadowlab
