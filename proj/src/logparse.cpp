#include "opttune/logparse.hpp"

#include <array>
#include <charconv>
#include <fstream>

#include <boost/regex.hpp>

#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"

namespace opttune {

using nlohmann::json;

LogRule::LogRule(std::string name, std::string pattern, ValueKind kind, Pick pick, bool required)
    : name_(std::move(name)), pattern_(std::move(pattern)), kind_(kind), pick_(pick), required_(required) {
  if (name_.empty()) throw ValidationError("", "log rule has no name");
  try {
    regex_ = std::make_shared<const boost::regex>(pattern_, boost::regex::perl);
  } catch (const boost::regex_error& e) {
    throw ValidationError(name_, std::string("pattern does not compile: ") + e.what());
  }
  if (regex_->mark_count() != 1)
    throw ValidationError(name_, "pattern must have exactly one capture group, has " +
                                     std::to_string(regex_->mark_count()));
}

std::optional<std::pair<std::string, std::size_t>> LogRule::match(std::string_view line) const {
  boost::match_results<std::string_view::const_iterator> m;
  if (!boost::regex_search(line.begin(), line.end(), m, *regex_)) return std::nullopt;
  if (!m[1].matched) return std::nullopt;
  return std::make_pair(m[1].str(), static_cast<std::size_t>(m[1].first - line.begin()));
}

std::optional<double> Metric::as_real() const {
  if (!value) return std::nullopt;
  if (const auto* d = std::get_if<double>(&*value)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&*value)) return static_cast<double>(*i);
  return std::nullopt;
}

const Metric* MetricSet::find(std::string_view name) const {
  auto it = metrics.find(std::string(name));
  return it == metrics.end() ? nullptr : &it->second;
}

json metrics_to_json(const MetricSet& set) {
  json values = json::object();
  for (const auto& [name, m] : set.metrics) {
    json e{{"offset", m.offset}};
    if (m.value) e["value"] = std::visit([](const auto& v) { return json(v); }, *m.value);
    if (!m.error.empty()) e["error"] = m.error;
    values[name] = std::move(e);
  }
  return json{{"values", std::move(values)}, {"missing", set.missing}};
}

MetricSet metrics_from_json(const json& j) {
  MetricSet set;
  for (const auto& [name, e] : j.at("values").items()) {
    Metric m;
    m.offset = e.value("offset", std::size_t{0});
    if (e.contains("value")) {
      const auto& v = e["value"];
      if (v.is_number_float()) m.value = v.get<double>();
      else if (v.is_number_integer()) m.value = v.get<std::int64_t>();
      else m.value = v.get<std::string>();
    }
    m.error = e.value("error", "");
    set.metrics.emplace(name, std::move(m));
  }
  set.missing = j.value("missing", std::vector<std::string>{});
  return set;
}

namespace {

ValueKind parse_value_kind(const std::string& rule, const std::string& s) {
  if (s == "real") return ValueKind::real;
  if (s == "integer") return ValueKind::integer;
  if (s == "string") return ValueKind::string;
  throw ValidationError(rule, "unknown value kind '" + s + "'");
}

Pick parse_pick(const std::string& rule, const std::string& s) {
  if (s == "first") return Pick::first;
  if (s == "last") return Pick::last;
  throw ValidationError(rule, "pick must be 'first' or 'last'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

void convert(const LogRule& rule, const std::string& text, Metric& out) {
  out.value.reset();
  out.error.clear();
  const auto t = trim(text);
  const char* end = t.data() + t.size();
  switch (rule.kind()) {
    case ValueKind::string: out.value = text; return;
    case ValueKind::real: {
      double v = 0;
      auto [p, ec] = std::from_chars(t.data(), end, v);
      if (ec == std::errc() && p == end && !t.empty()) {
        out.value = v;
        return;
      }
      break;
    }
    case ValueKind::integer: {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(t.data(), end, v);
      if (ec == std::errc() && p == end && !t.empty()) {
        out.value = v;
        return;
      }
      break;
    }
  }
  out.error = "cannot convert '" + text + "'";
}

// Length of the valid UTF-8 sequence starting at s[i], or 0 if invalid.
std::size_t utf8_sequence(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  std::size_t n = 0;
  unsigned min = 0;
  if (c < 0x80) return 1;
  if ((c & 0xE0) == 0xC0) n = 2, min = 0x80;
  else if ((c & 0xF0) == 0xE0) n = 3, min = 0x800;
  else if ((c & 0xF8) == 0xF0) n = 4, min = 0x10000;
  else return 0;
  if (i + n > s.size()) return 0;
  unsigned cp = c & (0x7F >> n);
  for (std::size_t k = 1; k < n; ++k) {
    const auto cc = static_cast<unsigned char>(s[i + k]);
    if ((cc & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (cc & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return n;
}

}  // namespace

std::vector<LogRule> parse_rules(const json& doc) {
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("rules")) throw ParseError("rules document needs a 'rules' list");
    list = &doc["rules"];
  }
  if (!list->is_array()) throw ParseError("rules must be a list");
  std::vector<LogRule> rules;
  for (const auto& r : *list) {
    if (!r.is_object() || !r.contains("name") || !r.contains("pattern"))
      throw ParseError("every rule needs 'name' and 'pattern'");
    const auto name = r["name"].get<std::string>();
    rules.emplace_back(name, r["pattern"].get<std::string>(), parse_value_kind(name, r.value("kind", "real")),
                       parse_pick(name, r.value("pick", "last")), r.value("required", false));
  }
  return rules;
}

std::vector<LogRule> load_rules(const std::filesystem::path& rules_file) {
  const auto text = read_text_file(rules_file);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  return parse_rules(parse_json(text, rules_file.string()));
}

// --------------------------------------------------------------- LogParser

LogParser::LogParser(std::vector<LogRule> rules) : rules_(std::move(rules)) {}

void LogParser::feed(std::string_view chunk) {
  while (!chunk.empty()) {
    const auto nl = chunk.find('\n');
    if (nl == std::string_view::npos) {
      if (pending_.empty()) pending_start_ = consumed_;
      pending_.append(chunk);
      consumed_ += chunk.size();
      peak_ = std::max(peak_, pending_.size());
      return;
    }
    const auto piece = chunk.substr(0, nl);
    if (pending_.empty()) {
      line(piece, consumed_);
    } else {
      pending_.append(piece);
      peak_ = std::max(peak_, pending_.size());
      line(pending_, pending_start_);
      pending_.clear();
    }
    consumed_ += nl + 1;
    chunk.remove_prefix(nl + 1);
  }
}

void LogParser::line(std::string_view raw, std::size_t start) {
  if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);

  // Drop invalid UTF-8 bytes, remembering where each kept byte came from.
  std::string cleaned;
  std::vector<std::size_t> origin;
  bool dirty = false;
  for (std::size_t i = 0; i < raw.size();) {
    const auto n = utf8_sequence(raw, i);
    if (n == 0) {
      if (!dirty) {
        dirty = true;
        cleaned.assign(raw.substr(0, i));
        origin.resize(i);
        for (std::size_t k = 0; k < i; ++k) origin[k] = k;
      }
      ++i;
      continue;
    }
    if (dirty) {
      for (std::size_t k = 0; k < n; ++k) {
        cleaned.push_back(raw[i + k]);
        origin.push_back(i + k);
      }
    }
    i += n;
  }
  const std::string_view text = dirty ? std::string_view(cleaned) : raw;

  for (const auto& rule : rules_) {
    if (rule.pick() == Pick::first && result_.metrics.count(rule.name())) continue;
    auto hit = rule.match(text);
    if (!hit) continue;
    Metric& m = result_.metrics[rule.name()];
    convert(rule, hit->first, m);
    const auto pos = dirty && hit->second < origin.size() ? origin[hit->second] : hit->second;
    m.offset = start + pos;
  }
}

MetricSet LogParser::finish() {
  if (!pending_.empty()) {
    line(pending_, pending_start_);
    pending_.clear();
  }
  result_.missing.clear();
  for (const auto& rule : rules_) {
    if (rule.required() && !result_.metrics.count(rule.name())) result_.missing.push_back(rule.name());
  }
  return result_;
}

MetricSet parse_log(const std::vector<LogRule>& rules, std::string_view text) {
  LogParser p(rules);
  p.feed(text);
  return p.finish();
}

MetricSet parse_log_file(const std::vector<LogRule>& rules, const std::filesystem::path& log_file) {
  std::ifstream in(log_file, std::ios::binary);
  if (!in) throw Error("cannot read " + log_file.string());
  LogParser p(rules);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    p.feed(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return p.finish();
}

}  // namespace opttune
