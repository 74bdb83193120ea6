#ifndef PATTN_FLOPS_HPP
#define PATTN_FLOPS_HPP

#include <cstdint>

namespace pattn {

/// Instrumentation filled in by the forward passes when a counter is passed.
/// `attention` counts multiply-adds (or transcendental evaluations) of the
/// attention mechanism proper, after the q/k/v projections. Projections and the
/// one-time data-dependent weight fold are tallied separately.
struct FlopCounter {
  std::uint64_t attention = 0;
  std::uint64_t projection = 0;
  std::uint64_t fold = 0;
  /// Bytes of intermediate buffers materialized by the attention mechanism.
  std::uint64_t buffer_bytes = 0;

  std::uint64_t total() const { return attention + projection + fold; }
};

namespace detail {

inline void count(FlopCounter* c, std::uint64_t FlopCounter::*field, std::uint64_t n) {
  if (c) c->*field += n;
}

template <typename Scalar>
inline void count_buffer(FlopCounter* c, std::uint64_t entries) {
  if (c) c->buffer_bytes += entries * sizeof(Scalar);
}

}  // namespace detail
}  // namespace pattn

#endif  // PATTN_FLOPS_HPP
