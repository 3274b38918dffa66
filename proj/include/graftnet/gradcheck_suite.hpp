#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace graftnet {

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kNetworkTolerance = 1e-4;

struct SuiteResult {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input[index]"
  bool passed() const { return max_rel_error < tolerance; }
};

/// Every check in the suite: the differentiable ops, then the composites
/// cmgm, agl, total_loss and network.
const std::vector<std::string>& gradcheck_names();

/// 64-bit central-difference checks. `only` restricts the run to the named
/// checks (empty runs all); an unknown name raises ConfigError. `on_result`
/// sees each result as soon as it is computed.
std::vector<SuiteResult> run_gradcheck_suite(const std::vector<std::string>& only,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::function<void(const SuiteResult&)>& on_result = {});

}  // namespace graftnet
