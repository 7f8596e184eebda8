#include "opttune/mock_solver.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "opttune/digest.hpp"
#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"

namespace opttune {

namespace fs = std::filesystem;
using nlohmann::json;

MockSolverSpec parse_mock_spec(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ParseError("mock solver spec must be an object");
  MockSolverSpec spec;
  if (!doc.contains("space")) throw ParseError("mock solver spec needs 'space'");
  if (doc["space"].is_string()) {
    fs::path p = doc["space"].get<std::string>();
    spec.space = load_space(p.is_absolute() ? p : base_dir / p);
  } else {
    spec.space = parse_space(doc["space"]);
  }
  ParamConfig::Map opt;
  if (doc.contains("optimum")) {
    for (const auto& [name, v] : doc["optimum"].items()) {
      const ParamDef* def = spec.space.find(name);
      if (!def) throw ValidationError(name, "optimum names an unknown parameter");
      auto value = def->parse_value(v);
      if (!def->contains(value)) throw ValidationError(name, "optimum value is outside the domain");
      opt.emplace(name, std::move(value));
    }
  }
  spec.optimum = resolve(spec.space, std::move(opt));
  spec.base_time = doc.value("base_time", spec.base_time);
  if (!(spec.base_time >= 0.0)) throw ValidationError("base_time", "must be >= 0");
  if (doc.contains("surface")) {
    const auto& s = doc["surface"];
    const auto family = s.value("family", "quadratic");
    if (family == "linear") spec.family = SurfaceFamily::linear;
    else if (family == "quadratic") spec.family = SurfaceFamily::quadratic;
    else if (family == "exponential") spec.family = SurfaceFamily::exponential;
    else throw ValidationError("surface", "unknown family '" + family + "'");
    if (s.contains("coefficients") && !s["coefficients"].empty()) spec.steepness = s["coefficients"][0].get<double>();
    if (!(spec.steepness >= 0.0)) throw ValidationError("surface", "coefficient must be >= 0");
  }
  if (doc.contains("weights")) {
    for (const auto& [name, w] : doc["weights"].items()) {
      if (!spec.space.find(name)) throw ValidationError(name, "weight names an unknown parameter");
      spec.weights[name] = w.get<double>();
    }
  }
  if (doc.contains("noise")) {
    spec.noise_lo = doc["noise"].at(0).get<double>();
    spec.noise_hi = doc["noise"].at(1).get<double>();
    if (spec.noise_lo <= 0.0 || spec.noise_hi < spec.noise_lo) throw ValidationError("noise", "need 0 < lo <= hi");
  }
  if (doc.contains("force_time")) spec.force_time = doc["force_time"].get<double>();
  spec.exit_code = doc.value("exit_code", 0);
  return spec;
}

MockSolverSpec load_mock_spec(const fs::path& spec_file) {
  return parse_mock_spec(read_json_file(spec_file), fs::absolute(spec_file).parent_path());
}

double mock_distance(const MockSolverSpec& spec, const ParamConfig& config) {
  double total = 0.0, weight_sum = 0.0;
  for (const auto& def : spec.space.params()) {
    const auto wit = spec.weights.find(def.name);
    const double w = wit == spec.weights.end() ? 1.0 : wit->second;
    weight_sum += w;
    const ParamValue* a = config.get(def.name);
    const ParamValue* b = spec.optimum.get(def.name);
    double d = 0.0;
    if (!a || !b) {
      d = (a || b) ? 1.0 : 0.0;
    } else if (def.numeric()) {
      auto as_double = [](const ParamValue& v) {
        return std::holds_alternative<double>(v) ? std::get<double>(v) : static_cast<double>(std::get<std::int64_t>(v));
      };
      d = std::abs(to_unit(def, as_double(*a)) - to_unit(def, as_double(*b)));
    } else {
      d = *a == *b ? 0.0 : 1.0;
    }
    total += w * d;
  }
  return weight_sum > 0.0 ? std::clamp(total / weight_sum, 0.0, 1.0) : 0.0;
}

double mock_surface(const MockSolverSpec& spec, double distance) {
  switch (spec.family) {
    case SurfaceFamily::linear: return 1.0 + spec.steepness * distance;
    case SurfaceFamily::quadratic: return 1.0 + spec.steepness * distance * distance;
    case SurfaceFamily::exponential: return std::exp(spec.steepness * distance);
  }
  return 1.0;
}

double mock_runtime(const MockSolverSpec& spec, const ParamConfig& config, std::uint64_t seed) {
  if (spec.force_time) return *spec.force_time;
  double noise = 1.0;
  if (spec.noise_hi > spec.noise_lo) {
    const auto h = sha256_hex(config.id() + "/" + std::to_string(seed));
    Rng rng(std::stoull(h.substr(0, 16), nullptr, 16));
    noise = spec.noise_lo + (spec.noise_hi - spec.noise_lo) * uniform01(rng);
  }
  return spec.base_time * mock_surface(spec, mock_distance(spec, config)) * noise;
}

int mock_solver_main(const std::vector<std::string>& args) {
  std::string spec_file, problem, params_file;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> raw;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    auto next = [&]() -> std::optional<std::string> {
      if (i + 1 >= args.size()) return std::nullopt;
      return args[++i];
    };
    if (a == "--spec") {
      auto v = next();
      if (!v) return std::cerr << "mocksolver: --spec needs a value\n", 3;
      spec_file = *v;
    } else if (a == "--seed") {
      auto v = next();
      if (!v) return std::cerr << "mocksolver: --seed needs a value\n", 3;
      seed = std::stoull(*v);
    } else if (a == "--params-file") {
      auto v = next();
      if (!v) return std::cerr << "mocksolver: --params-file needs a value\n", 3;
      params_file = *v;
    } else if (a.rfind("--", 0) == 0 && a.find('=') != std::string::npos) {
      const auto eq = a.find('=');
      raw.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else if (a.size() > 1 && a[0] == '-' && !(a[1] >= '0' && a[1] <= '9')) {
      auto v = next();
      if (!v) return std::cerr << "mocksolver: option " << a << " needs a value\n", 3;
      raw.emplace_back(a.substr(1), *v);
    } else if (problem.empty()) {
      problem = a;
    } else {
      std::cerr << "mocksolver: unexpected argument '" << a << "'\n";
      return 3;
    }
  }

  MockSolverSpec spec;
  try {
    if (spec_file.empty()) throw Error("no --spec given");
    spec = load_mock_spec(spec_file);
  } catch (const std::exception& e) {
    std::cerr << "mocksolver: bad spec: " << e.what() << "\n";
    return 2;
  }
  if (problem.empty()) return std::cerr << "mocksolver: no problem file given\n", 3;
  if (!std::ifstream(problem)) return std::cerr << "mocksolver: cannot read problem " << problem << "\n", 1;

  if (!params_file.empty()) {
    std::ifstream in(params_file);
    if (!in) return std::cerr << "mocksolver: cannot read params file " << params_file << "\n", 3;
    std::string name, value;
    while (in >> name >> value) raw.emplace_back(name, value);
  }

  ParamConfig::Map values;
  try {
    for (const auto& [name, text] : raw) {
      const ParamDef* def = spec.space.find(name);
      if (!def) throw ValidationError(name, "unknown option");
      auto value = def->parse_text(text);
      if (!def->contains(value)) throw ValidationError(name, "'" + text + "' is outside the domain");
      values[name] = std::move(value);
    }
  } catch (const Error& e) {
    std::cerr << "mocksolver: " << e.what() << "\n";
    return 3;
  }
  const ParamConfig config = resolve(spec.space, std::move(values));
  const double distance = mock_distance(spec, config);
  const double runtime = mock_runtime(spec, config, seed);

  std::printf("Mock solver (simulated MILP)\nProblem: %s\nSeed: %llu\n", problem.c_str(),
              static_cast<unsigned long long>(seed));
  for (const auto& [name, value] : config.values()) std::printf("Option %s = %s\n", name.c_str(), format_value(value).c_str());
  std::fflush(stdout);

  if (runtime < 0) {
    while (true) std::this_thread::sleep_for(std::chrono::hours(1));
  }
  std::this_thread::sleep_for(std::chrono::duration<double>(runtime));

  std::printf("Enumerated nodes: %lld\n", static_cast<long long>(std::llround(1000.0 * distance)));
  std::printf("Objective value: %.10g\n", 1234.5);
  std::printf("Solve time: %.9g\n", runtime);
  std::printf("Result - Optimal solution found\n");
  std::fflush(stdout);
  return spec.exit_code;
}

}  // namespace opttune
