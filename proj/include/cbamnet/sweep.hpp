#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbamnet {

struct SweepResult {
  std::string kind;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t probes = 0;

  bool pass() const { return max_rel_err < tolerance; }
};

/// Finite-difference check of every layer kind and attention block on small
/// random 64-bit inputs. Each loss is a fixed random weighting of the
/// layer output so no gradient is structurally uniform.
std::vector<SweepResult> gradcheck_sweep(std::uint64_t seed = 7);

}  // namespace cbamnet
