#include "opttune/paramspace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <unordered_map>

#include "opttune/digest.hpp"
#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"

namespace opttune {

using nlohmann::json;

std::string_view to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::categorical: return "categorical";
    case ParamKind::integer: return "integer";
    case ParamKind::real: return "real";
    case ParamKind::boolean: return "boolean";
  }
  return "?";
}

std::string_view to_string(Scale scale) { return scale == Scale::log ? "log" : "linear"; }

namespace {

std::string shortest_repr(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

ParamKind parse_kind(const std::string& name, const std::string& text) {
  if (text == "categorical") return ParamKind::categorical;
  if (text == "integer") return ParamKind::integer;
  if (text == "real") return ParamKind::real;
  if (text == "boolean") return ParamKind::boolean;
  throw ValidationError(name, "unknown kind '" + text + "'");
}

std::optional<bool> parse_bool_text(std::string_view t) {
  if (t == "true" || t == "on" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "off" || t == "0" || t == "no") return false;
  return std::nullopt;
}

}  // namespace

double canonical_real(double x) {
  if (!std::isfinite(x)) return x;
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 10);
  double y = 0.0;
  std::from_chars(buf, end, y);
  return y == 0.0 ? 0.0 : y;
}

std::string format_value(const ParamValue& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          return shortest_repr(v);
        } else {
          return v;
        }
      },
      value);
}

// ---------------------------------------------------------------- ParamDef

bool ParamDef::contains(const ParamValue& value) const {
  switch (kind) {
    case ParamKind::categorical: {
      const auto* s = std::get_if<std::string>(&value);
      return s && std::find(choices.begin(), choices.end(), *s) != choices.end();
    }
    case ParamKind::boolean: return std::holds_alternative<bool>(value);
    case ParamKind::integer: {
      const auto* i = std::get_if<std::int64_t>(&value);
      return i && static_cast<double>(*i) >= lo && static_cast<double>(*i) <= hi;
    }
    case ParamKind::real: {
      const auto* d = std::get_if<double>(&value);
      return d && std::isfinite(*d) && *d >= lo && *d <= hi;
    }
  }
  return false;
}

std::size_t ParamDef::width() const { return kind == ParamKind::categorical ? choices.size() : 1; }

ParamValue ParamDef::parse_value(const json& j) const {
  switch (kind) {
    case ParamKind::categorical:
      if (j.is_string()) return j.get<std::string>();
      if (j.is_number() || j.is_boolean()) return j.dump();
      break;
    case ParamKind::boolean:
      if (j.is_boolean()) return j.get<bool>();
      if (j.is_string()) return parse_text(j.get<std::string>());
      if (j.is_number_integer()) return j.get<std::int64_t>() != 0;
      break;
    case ParamKind::integer:
      if (j.is_number_integer()) return j.get<std::int64_t>();
      if (j.is_number_float()) {
        double d = j.get<double>();
        if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<std::int64_t>(d);
      }
      if (j.is_string()) return parse_text(j.get<std::string>());
      break;
    case ParamKind::real:
      if (j.is_number()) return canonical_real(j.get<double>());
      if (j.is_string()) return parse_text(j.get<std::string>());
      break;
  }
  throw ValidationError(name, "value " + j.dump() + " is not a valid " + std::string(to_string(kind)));
}

ParamValue ParamDef::parse_text(std::string_view text) const {
  auto fail = [&] {
    return ValidationError(name, "'" + std::string(text) + "' is not a valid " + std::string(to_string(kind)));
  };
  switch (kind) {
    case ParamKind::categorical: return std::string(text);
    case ParamKind::boolean: {
      if (auto b = parse_bool_text(text)) return *b;
      throw fail();
    }
    case ParamKind::integer: {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) throw fail();
      return v;
    }
    case ParamKind::real: {
      double v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) throw fail();
      return canonical_real(v);
    }
  }
  throw fail();
}

// -------------------------------------------------------------- ParamSpace

ParamSpace::ParamSpace(std::string solver, std::string version, std::vector<ParamDef> params)
    : solver_(std::move(solver)), version_(std::move(version)), params_(std::move(params)) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.name.empty()) throw ValidationError("", "parameter #" + std::to_string(i + 1) + " has no name");
    if (!index.emplace(p.name, i).second) throw ValidationError(p.name, "duplicate parameter name");
    switch (p.kind) {
      case ParamKind::categorical: {
        if (p.choices.empty()) throw ValidationError(p.name, "categorical domain is empty");
        std::set<std::string> seen(p.choices.begin(), p.choices.end());
        if (seen.size() != p.choices.size()) throw ValidationError(p.name, "categorical values are not distinct");
        if (p.scale != Scale::linear) throw ValidationError(p.name, "scale applies to numeric kinds only");
        break;
      }
      case ParamKind::boolean:
        if (p.scale != Scale::linear) throw ValidationError(p.name, "scale applies to numeric kinds only");
        break;
      case ParamKind::integer:
      case ParamKind::real:
        if (!std::isfinite(p.lo) || !std::isfinite(p.hi)) throw ValidationError(p.name, "bounds must be finite");
        if (p.lo > p.hi) throw ValidationError(p.name, "lower bound exceeds upper bound");
        if (p.scale == Scale::log && p.lo <= 0.0) throw ValidationError(p.name, "log scale requires lo > 0");
        if (p.kind == ParamKind::integer && (std::floor(p.lo) != p.lo || std::floor(p.hi) != p.hi))
          throw ValidationError(p.name, "integer bounds must be integral");
        break;
    }
    if (!p.contains(p.default_value))
      throw ValidationError(p.name, "default " + format_value(p.default_value) + " is outside the domain");
  }

  for (auto& p : params_) {
    if (!p.condition) continue;
    auto it = index.find(p.condition->parent);
    if (it == index.end()) throw ValidationError(p.name, "condition parent '" + p.condition->parent + "' does not exist");
    if (it->second == static_cast<std::size_t>(&p - params_.data()))
      throw ValidationError(p.name, "parameter cannot be conditioned on itself");
    if (!params_[it->second].contains(p.condition->equals))
      throw ValidationError(p.name, "condition value is outside the parent's domain");
  }

  // Parents before children; a back edge is a cycle.
  enum class Mark { none, active, done };
  std::vector<Mark> mark(params_.size(), Mark::none);
  std::function<void(std::size_t)> visit = [&](std::size_t i) {
    if (mark[i] == Mark::done) return;
    if (mark[i] == Mark::active) throw ValidationError(params_[i].name, "cyclic condition");
    mark[i] = Mark::active;
    if (params_[i].condition) visit(index.at(params_[i].condition->parent));
    mark[i] = Mark::done;
    order_.push_back(i);
  };
  for (std::size_t i = 0; i < params_.size(); ++i) visit(i);

  offsets_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    offsets_[i] = width_;
    width_ += params_[i].width();
  }
}

const ParamDef* ParamSpace::find(std::string_view name) const {
  auto i = index_of(name);
  return i ? &params_[*i] : nullptr;
}

std::optional<std::size_t> ParamSpace::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return std::nullopt;
}

bool ParamSpace::is_active(const ParamDef& def, const std::map<std::string, ParamValue>& assigned) const {
  if (!def.condition) return true;
  auto it = assigned.find(def.condition->parent);
  return it != assigned.end() && it->second == def.condition->equals;
}

void ParamSpace::validate(const ParamConfig& config) const {
  const auto& values = config.values();
  for (const auto& [name, value] : values)
    if (!find(name)) throw ValidationError(name, "not a parameter of solver '" + solver_ + "'");
  for (std::size_t i : order_) {
    const auto& def = params_[i];
    const ParamValue* v = config.get(def.name);
    if (is_active(def, values)) {
      if (!v) throw ValidationError(def.name, "active parameter has no value");
      if (!def.contains(*v)) throw ValidationError(def.name, "value " + format_value(*v) + " is outside the domain");
    } else if (v) {
      throw ValidationError(def.name, "inactive parameter must not be assigned");
    }
  }
}

std::optional<std::size_t> ParamSpace::finite_size(std::size_t limit) const {
  auto all = enumerate(*this, limit);
  if (!all) return std::nullopt;
  return all->size();
}

ParamSpace ParamSpace::restrict_to(const std::vector<std::string>& names) const {
  if (names.empty()) return *this;
  std::set<std::string> keep;
  for (const auto& n : names) {
    if (!find(n)) throw ValidationError(n, "not a parameter of solver '" + solver_ + "'");
    keep.insert(n);
  }
  std::vector<ParamDef> out;
  for (const auto& def : params_) {
    if (!keep.count(def.name)) continue;
    ParamDef d = def;
    bool reachable = true;
    // Walk up through parents that are fixed at their defaults.
    while (d.condition && !keep.count(d.condition->parent)) {
      const ParamDef* parent = find(d.condition->parent);
      if (!(parent->default_value == d.condition->equals)) {
        reachable = false;
        break;
      }
      d.condition = parent->condition;
    }
    if (reachable) out.push_back(std::move(d));
  }
  return ParamSpace(solver_, version_, std::move(out));
}

// ------------------------------------------------------------- ParamConfig

ParamConfig::ParamConfig(Map values) : values_(std::move(values)) {
  id_ = sha256_hex(canonical_text(values_)).substr(0, 16);
}

const ParamValue* ParamConfig::get(std::string_view name) const {
  auto it = values_.find(std::string(name));
  return it == values_.end() ? nullptr : &it->second;
}

std::string ParamConfig::canonical_text(const Map& values) {
  static constexpr char kTags[] = {'b', 'i', 'r', 'c'};
  std::string out;
  for (const auto& [name, value] : values) {
    out += name;
    out += '=';
    out += kTags[value.index()];
    out += ':';
    out += format_value(value);
    out += '\n';
  }
  return out;
}

// -------------------------------------------------------------------- RNG

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n <= 1) return 0;
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// -------------------------------------------------------------- documents

ParamSpace parse_space(const json& doc) {
  if (!doc.is_object()) throw ParseError("parameter descriptor must be an object");
  std::string solver = doc.value("solver", "");
  std::string version = doc.contains("version") ? (doc["version"].is_string() ? doc["version"].get<std::string>()
                                                                               : doc["version"].dump())
                                                : "";
  if (!doc.contains("parameters") || !doc["parameters"].is_array())
    throw ParseError("parameter descriptor needs a 'parameters' list");

  std::vector<ParamDef> defs;
  for (const auto& e : doc["parameters"]) {
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string())
      throw ParseError("every parameter entry needs a string 'name'");
    ParamDef d;
    d.name = e["name"].get<std::string>();
    if (!e.contains("kind") || !e["kind"].is_string()) throw ValidationError(d.name, "missing 'kind'");
    d.kind = parse_kind(d.name, e["kind"].get<std::string>());

    if (e.contains("scale")) {
      auto s = e["scale"].get<std::string>();
      if (s == "log") d.scale = Scale::log;
      else if (s != "linear") throw ValidationError(d.name, "unknown scale '" + s + "'");
    }

    const json* domain = e.contains("domain") ? &e["domain"] : nullptr;
    switch (d.kind) {
      case ParamKind::categorical:
        if (!domain || !domain->is_array()) throw ValidationError(d.name, "categorical parameter needs a 'domain' list");
        for (const auto& v : *domain) d.choices.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        break;
      case ParamKind::boolean:
        break;
      case ParamKind::integer:
      case ParamKind::real:
        if (!domain || !domain->is_array() || domain->size() != 2 || !(*domain)[0].is_number() ||
            !(*domain)[1].is_number())
          throw ValidationError(d.name, "numeric parameter needs a 'domain' of [lo, hi]");
        d.lo = (*domain)[0].get<double>();
        d.hi = (*domain)[1].get<double>();
        if (d.kind == ParamKind::real) {
          d.lo = canonical_real(d.lo);
          d.hi = canonical_real(d.hi);
        }
        break;
    }
    if (!e.contains("default")) throw ValidationError(d.name, "missing 'default'");
    d.default_value = d.parse_value(e["default"]);
    if (e.contains("condition")) {
      const auto& c = e["condition"];
      if (!c.is_object() || !c.contains("parent") || !c.contains("equals"))
        throw ValidationError(d.name, "condition needs 'parent' and 'equals'");
      d.condition = Condition{c["parent"].get<std::string>(), ParamValue{}};
      // Typed against the parent once all entries are known.
      d.condition->equals = c["equals"].is_string() ? ParamValue{c["equals"].get<std::string>()}
                                                    : ParamValue{c["equals"].dump()};
    }
    defs.push_back(std::move(d));
  }

  for (auto& d : defs) {
    if (!d.condition) continue;
    auto parent = std::find_if(defs.begin(), defs.end(), [&](const ParamDef& p) { return p.name == d.condition->parent; });
    if (parent == defs.end()) throw ValidationError(d.name, "condition parent '" + d.condition->parent + "' does not exist");
    try {
      d.condition->equals = parent->parse_text(std::get<std::string>(d.condition->equals));
    } catch (const ValidationError&) {
      throw ValidationError(d.name, "condition value is outside the parent's domain");
    }
  }
  return ParamSpace(std::move(solver), std::move(version), std::move(defs));
}

ParamSpace load_space(const std::filesystem::path& descriptor) { return parse_space(read_json_file(descriptor)); }

namespace {

json value_to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

}  // namespace

json space_to_json(const ParamSpace& space) {
  json params = json::array();
  for (const auto& d : space.params()) {
    json e{{"name", d.name}, {"kind", to_string(d.kind)}};
    if (d.kind == ParamKind::categorical) e["domain"] = d.choices;
    if (d.kind == ParamKind::integer) e["domain"] = {static_cast<std::int64_t>(d.lo), static_cast<std::int64_t>(d.hi)};
    if (d.kind == ParamKind::real) e["domain"] = {d.lo, d.hi};
    e["default"] = value_to_json(d.default_value);
    if (d.numeric()) e["scale"] = to_string(d.scale);
    if (d.condition) e["condition"] = {{"parent", d.condition->parent}, {"equals", value_to_json(d.condition->equals)}};
    params.push_back(std::move(e));
  }
  return json{{"solver", space.solver()}, {"version", space.version()}, {"parameters", std::move(params)}};
}

json config_to_json(const ParamConfig& config) {
  json out = json::object();
  for (const auto& [name, value] : config.values()) out[name] = value_to_json(value);
  return out;
}

ParamConfig config_from_json(const ParamSpace& space, const json& j) {
  if (!j.is_object()) throw ParseError("configuration must be an object");
  ParamConfig::Map values;
  for (const auto& [name, v] : j.items()) {
    const ParamDef* def = space.find(name);
    if (!def) throw ValidationError(name, "not a parameter of solver '" + space.solver() + "'");
    values.emplace(name, def->parse_value(v));
  }
  ParamConfig config(std::move(values));
  space.validate(config);
  return config;
}

// ------------------------------------------------------ configs & sampling

ParamConfig resolve(const ParamSpace& space, ParamConfig::Map values, Rng* fill) {
  ParamConfig::Map out;
  for (std::size_t i : space.resolution_order()) {
    const auto& def = space.params()[i];
    if (!space.is_active(def, out)) continue;
    auto it = values.find(def.name);
    if (it != values.end() && def.contains(it->second)) {
      out.emplace(def.name, std::move(it->second));
    } else {
      out.emplace(def.name, fill ? sample_value(def, *fill) : def.default_value);
    }
  }
  return ParamConfig(std::move(out));
}

ParamConfig default_config(const ParamSpace& space) { return resolve(space, {}, nullptr); }

ParamValue sample_value(const ParamDef& def, Rng& rng) {
  switch (def.kind) {
    case ParamKind::categorical: return def.choices[uniform_index(rng, def.choices.size())];
    case ParamKind::boolean: return uniform01(rng) < 0.5;
    case ParamKind::integer:
      if (def.scale == Scale::linear) {
        auto span = static_cast<std::size_t>(def.hi - def.lo) + 1;
        return static_cast<std::int64_t>(def.lo) + static_cast<std::int64_t>(uniform_index(rng, span));
      }
      return from_unit(def, uniform01(rng));
    case ParamKind::real: return from_unit(def, uniform01(rng));
  }
  return def.default_value;
}

ParamConfig sample_one(const ParamSpace& space, Rng& rng) {
  ParamConfig::Map out;
  for (std::size_t i : space.resolution_order()) {
    const auto& def = space.params()[i];
    if (space.is_active(def, out)) out.emplace(def.name, sample_value(def, rng));
  }
  return ParamConfig(std::move(out));
}

std::vector<ParamConfig> sample(const ParamSpace& space, std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<ParamConfig> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(sample_one(space, rng));
  return out;
}

std::optional<std::vector<ParamConfig>> enumerate(const ParamSpace& space, std::size_t limit) {
  std::vector<std::vector<ParamValue>> domains(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& d = space.params()[i];
    switch (d.kind) {
      case ParamKind::categorical:
        for (const auto& c : d.choices) domains[i].emplace_back(c);
        break;
      case ParamKind::boolean:
        domains[i] = {false, true};
        break;
      case ParamKind::integer:
        if (d.hi - d.lo + 1 > static_cast<double>(limit)) return std::nullopt;
        for (auto v = static_cast<std::int64_t>(d.lo); v <= static_cast<std::int64_t>(d.hi); ++v) domains[i].emplace_back(v);
        break;
      case ParamKind::real:
        if (d.lo != d.hi) return std::nullopt;
        domains[i] = {d.lo};
        break;
    }
  }

  const auto& order = space.resolution_order();
  std::vector<ParamConfig> out;
  ParamConfig::Map partial;
  bool overflow = false;
  std::function<void(std::size_t)> rec = [&](std::size_t k) {
    if (overflow) return;
    if (k == order.size()) {
      if (out.size() >= limit) {
        overflow = true;
        return;
      }
      out.emplace_back(partial);
      return;
    }
    const auto& def = space.params()[order[k]];
    if (!space.is_active(def, partial)) {
      rec(k + 1);
      return;
    }
    for (const auto& v : domains[order[k]]) {
      partial[def.name] = v;
      rec(k + 1);
      if (overflow) return;
    }
    partial.erase(def.name);
  };
  rec(0);
  if (overflow) return std::nullopt;
  return out;
}

// --------------------------------------------------------------- encoding

double to_unit(const ParamDef& def, double x) {
  if (def.hi == def.lo) return 0.0;
  if (def.scale == Scale::log) return (std::log(x) - std::log(def.lo)) / (std::log(def.hi) - std::log(def.lo));
  return (x - def.lo) / (def.hi - def.lo);
}

ParamValue from_unit(const ParamDef& def, double u) {
  u = std::clamp(u, 0.0, 1.0);
  double x = def.scale == Scale::log ? std::exp(std::log(def.lo) + u * (std::log(def.hi) - std::log(def.lo)))
                                     : def.lo + u * (def.hi - def.lo);
  if (def.kind == ParamKind::integer) {
    double n = std::ceil(x - 0.5);
    return static_cast<std::int64_t>(std::clamp(n, def.lo, def.hi));
  }
  return std::clamp(canonical_real(x), def.lo, def.hi);
}

std::vector<double> encode(const ParamSpace& space, const ParamConfig& config) {
  space.validate(config);
  std::vector<double> out(space.encoding_width(), kInactiveSlot);
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& def = space.params()[i];
    const ParamValue* v = config.get(def.name);
    if (!v) continue;
    const std::size_t at = space.slot_offset(i);
    switch (def.kind) {
      case ParamKind::categorical: {
        const auto& s = std::get<std::string>(*v);
        for (std::size_t c = 0; c < def.choices.size(); ++c) out[at + c] = def.choices[c] == s ? 1.0 : 0.0;
        break;
      }
      case ParamKind::boolean: out[at] = std::get<bool>(*v) ? 1.0 : 0.0; break;
      case ParamKind::integer: out[at] = to_unit(def, static_cast<double>(std::get<std::int64_t>(*v))); break;
      case ParamKind::real: out[at] = to_unit(def, std::get<double>(*v)); break;
    }
  }
  return out;
}

ParamConfig decode(const ParamSpace& space, std::span<const double> vector) {
  if (vector.size() != space.encoding_width())
    throw ValidationError("", "encoded vector has width " + std::to_string(vector.size()) + ", expected " +
                                  std::to_string(space.encoding_width()));
  ParamConfig::Map out;
  for (std::size_t i : space.resolution_order()) {
    const auto& def = space.params()[i];
    if (!space.is_active(def, out)) continue;
    const std::size_t at = space.slot_offset(i);
    switch (def.kind) {
      case ParamKind::categorical: {
        auto first = vector.begin() + static_cast<std::ptrdiff_t>(at);
        auto best = std::max_element(first, first + static_cast<std::ptrdiff_t>(def.choices.size()));
        out.emplace(def.name, def.choices[static_cast<std::size_t>(best - first)]);
        break;
      }
      case ParamKind::boolean: out.emplace(def.name, vector[at] >= 0.5); break;
      case ParamKind::integer:
      case ParamKind::real: out.emplace(def.name, from_unit(def, vector[at])); break;
    }
  }
  return ParamConfig(std::move(out));
}

}  // namespace opttune
