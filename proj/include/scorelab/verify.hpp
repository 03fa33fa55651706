#pragma once

#include "scorelab/core.hpp"
#include "scorelab/generators.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace scorelab {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::string suite;
  std::vector<CheckResult> checks;
  std::string csv;  // per-trial rows, suite specific
  double seconds = 0.0;

  bool passed() const;
  void add(std::string name, bool passed, std::string detail);
  void merge(const VerifyReport& other);
};

/// Knobs shared by the suites. Zero means "suite default".
struct VerifyOptions {
  std::uint64_t seed = 20240611;
  int trials = 0;     // gn: Gaussian series; identities: models per generator; gelu: audit nets
  int dim = 0;        // gn: fixed series dimension (0: random in 1..3)
  int degree = 0;     // gn: max degree (0: up to 8, weighted up to 4)
  int alpha = 0;      // gn: fixed alpha (0: random 2 or 3)
  int weighted_series = 0;  // gn: random series per (generator, alpha) for the weighted lemma
  Index n_mc = 0;     // identities / weighted gn Monte Carlo size
  long grid = 0;      // gelu: grid points on [-20, 20]
  bool ism = true;    // identities: run the ISM part
  bool dsm = true;    // identities: run the DSM part
  bool negate_divergence = false;  // identities: corrupt every model (sensitivity fixture)
};

/// The three D = 2 generators used by the randomized suites: a constant, an
/// affine line and a circle.
std::vector<GeneratorSpec> verification_generators();

VerifyReport verify_gn_suite(const VerifyOptions& options);
VerifyReport verify_gelu_suite(const VerifyOptions& options);
VerifyReport verify_identities_suite(const VerifyOptions& options);
VerifyReport verify_oracle_suite(const VerifyOptions& options);
VerifyReport verify_gradients_suite(const VerifyOptions& options);

/// Suite by name (gn, gelu, identities, oracle, gradients); unknown names
/// throw std::invalid_argument.
VerifyReport run_verify(const std::string& suite, const VerifyOptions& options);

}  // namespace scorelab
