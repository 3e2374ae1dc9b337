#pragma once

#include <stdexcept>
#include <string>

#include "shadowlab/config.hpp"
#include "shadowlab/isa.hpp"
#include "shadowlab/machine.hpp"

namespace shadowlab {

// Fixed layout constants (addresses are canonical by construction).
inline constexpr uint64_t kCodeBase = 0x10000;
inline constexpr uint64_t kLbpReadablePage = 0xe0000;
inline constexpr uint64_t kLbpGuardPage = 0xe1000;
inline constexpr uint64_t kLbpLastByte = kLbpReadablePage + kPageSize - 1;
inline constexpr uint64_t kDataBase = 0x200000;
inline constexpr uint64_t kMainStackTop = 0x40000000;
inline constexpr uint64_t kThreadArenaTop = 0x02000000; // first child stack top
inline constexpr uint64_t kThreadArenaStride = 0x20000;
// A parallel-constant offset that maps the first child stack's mirror image
// exactly onto the main stack; the compat suite uses it to exhibit the
// fixed-offset layout constraint.
inline constexpr int64_t kCollidingParallelOffset =
    int64_t(kMainStackTop) - int64_t(kThreadArenaTop);
inline constexpr uint64_t kProcExit = 0x0f0f0000;
inline constexpr uint64_t kThreadExit = 0x0f0f1000;
inline constexpr uint64_t kCompactRegionBytes = kPageSize;
// Compact regions for additional threads live in one reserved extent, one
// region page plus one unmapped guard page per thread.
inline constexpr int kMaxShadowRegions = 16;
inline constexpr uint64_t kShadowExtentBytes =
    kMaxShadowRegions * 2 * kPageSize;
inline constexpr uint64_t kShadowBaseDefault = 0x100000000;
inline constexpr uint64_t kShadowBaseBounds = 0x7ffe00000000;
inline constexpr uint64_t kPrMirrorArena = 0x50000000;
inline constexpr uint64_t kPrMirrorStride = 0x01000000;

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thread-hook behavior, driven by the compatibility suite.
enum class SpawnMode {
  Hooked,          // per-thread shadow setup (the shipped runtime behavior)
  PrInheritOffset, // parallel-register child inherits the parent's offset
};

struct LoadedImage {
  Machine machine;
  ShadowConfig cfg;
  uint64_t stack_base = 0;
  uint64_t stack_top = 0;
  uint64_t shadow_region_base = 0; // main thread region (0 when none)
  uint64_t shadow_region_size = 0;
  int64_t parallel_offset = 0; // effective offset for parallel mappings
};

LoadedImage load(const Program& p, const ShadowConfig& cfg, uint64_t seed,
                 SpawnMode spawn_mode = SpawnMode::Hooked);

} // namespace shadowlab
