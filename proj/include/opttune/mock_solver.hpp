#pragma once

// Deterministic stand-in solver used by tests and demos. It sleeps for a
// runtime derived from how far its received parameters are from a hidden
// optimum and prints a solver-style log.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opttune/paramspace.hpp"

namespace opttune {

enum class SurfaceFamily { linear, quadratic, exponential };

struct MockSolverSpec {
  ParamSpace space;
  ParamConfig optimum;
  double base_time = 0.1;
  SurfaceFamily family = SurfaceFamily::quadratic;
  double steepness = 9.0;                   // surface coefficient, >= 0
  std::map<std::string, double> weights;    // per-parameter distance weight, default 1
  double noise_lo = 1.0;                    // multiplicative runtime noise range
  double noise_hi = 1.0;
  std::optional<double> force_time;         // fixed runtime; negative sleeps forever
  int exit_code = 0;                        // exit status after a normal run
};

/// Parses a spec document. `base_dir` resolves a relative "space" path.
MockSolverSpec parse_mock_spec(const nlohmann::json& doc, const std::filesystem::path& base_dir);
MockSolverSpec load_mock_spec(const std::filesystem::path& spec_file);

/// Weighted mean per-parameter distance to the optimum, in [0, 1].
double mock_distance(const MockSolverSpec& spec, const ParamConfig& config);
/// Runtime multiplier at a distance; 1 at the optimum, nondecreasing.
double mock_surface(const MockSolverSpec& spec, double distance);
/// base_time x surface x deterministic noise(config, seed).
double mock_runtime(const MockSolverSpec& spec, const ParamConfig& config, std::uint64_t seed);

/// Entry point of the `mocksolver` executable:
///   mocksolver --spec FILE [--seed N] PROBLEM [-name value | --name=value | --params-file F]...
/// Returns 2 for an unreadable or malformed spec and 3 for bad arguments.
int mock_solver_main(const std::vector<std::string>& args);

}  // namespace opttune
