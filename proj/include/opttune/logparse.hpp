#pragma once

// Rule-driven metric extraction from solver logs. Rules apply per line; input is
// consumed as a byte stream so memory is bounded by the longest line.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include <boost/regex_fwd.hpp>

namespace opttune {

enum class ValueKind { real, integer, string };
enum class Pick { first, last };

class LogRule {
 public:
  /// Compiles `pattern`; throws ValidationError naming the rule when it does not
  /// compile or does not have exactly one capture group.
  LogRule(std::string name, std::string pattern, ValueKind kind = ValueKind::real, Pick pick = Pick::last,
          bool required = false);

  const std::string& name() const { return name_; }
  const std::string& pattern() const { return pattern_; }
  ValueKind kind() const { return kind_; }
  Pick pick() const { return pick_; }
  bool required() const { return required_; }

  /// Searches one line; returns the capture and its offset within the line.
  std::optional<std::pair<std::string, std::size_t>> match(std::string_view line) const;

 private:
  std::string name_;
  std::string pattern_;
  ValueKind kind_;
  Pick pick_;
  bool required_;
  std::shared_ptr<const boost::regex> regex_;
};

using MetricValue = std::variant<double, std::int64_t, std::string>;

struct Metric {
  std::optional<MetricValue> value;  // empty when conversion failed
  std::string error;                 // conversion failure, if any
  std::size_t offset = 0;            // byte offset of the capture in the log

  std::optional<double> as_real() const;
  friend bool operator==(const Metric&, const Metric&) = default;
};

struct MetricSet {
  std::map<std::string, Metric> metrics;
  std::vector<std::string> missing;  // required rules without a match

  bool complete() const { return missing.empty(); }
  const Metric* find(std::string_view name) const;
  friend bool operator==(const MetricSet&, const MetricSet&) = default;
};

nlohmann::json metrics_to_json(const MetricSet& metrics);
MetricSet metrics_from_json(const nlohmann::json& j);

std::vector<LogRule> parse_rules(const nlohmann::json& doc);
std::vector<LogRule> load_rules(const std::filesystem::path& rules_file);

/// Incremental parser: feed arbitrary chunks, then finish().
class LogParser {
 public:
  explicit LogParser(std::vector<LogRule> rules);

  void feed(std::string_view chunk);
  MetricSet finish();

  /// Largest number of bytes held for an incomplete line.
  std::size_t peak_buffer() const { return peak_; }

 private:
  void line(std::string_view raw, std::size_t start);

  std::vector<LogRule> rules_;
  MetricSet result_;
  std::string pending_;
  std::size_t pending_start_ = 0;
  std::size_t consumed_ = 0;
  std::size_t peak_ = 0;
};

MetricSet parse_log(const std::vector<LogRule>& rules, std::string_view text);
MetricSet parse_log_file(const std::vector<LogRule>& rules, const std::filesystem::path& log_file);

}  // namespace opttune
