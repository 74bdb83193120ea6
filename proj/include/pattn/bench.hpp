#ifndef PATTN_BENCH_HPP
#define PATTN_BENCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pattn/linalg.hpp"

namespace pattn {

struct BenchConfig {
  /// Sequence lengths, ascending.
  std::vector<Index> sizes = {1024, 2048};
  Index d = 64;
  Index s = 32;
  Index d_v = 64;
  Index heads = 1;
  Index repeats = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchRow {
  std::string mechanism;
  Index n = 0;
  double median_seconds = 0.0;
  /// Attention-core FLOPs (projections excluded).
  std::uint64_t flops = 0;
  std::uint64_t buffer_bytes = 0;
};

/// Times the attention cores on pre-projected Q, K, V: canonical softmax
/// attention and data-independent cosine Primal-Attention.
std::vector<BenchRow> run_bench(const BenchConfig& cfg);

/// Columns mechanism, N, median_seconds, flops, buffer_bytes.
std::string bench_csv(const std::vector<BenchRow>& rows);

const BenchRow& find_row(const std::vector<BenchRow>& rows, const std::string& mechanism, Index n);

}  // namespace pattn

#endif  // PATTN_BENCH_HPP
