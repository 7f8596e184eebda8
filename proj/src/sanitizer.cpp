#include "opttune/sanitizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "opttune/digest.hpp"
#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"

namespace opttune {

namespace fs = std::filesystem;

std::string_view to_string(ModelFormat format) { return format == ModelFormat::mps ? "mps" : "lp"; }

ModelFormat parse_model_format(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "mps") return ModelFormat::mps;
  if (t == "lp") return ModelFormat::lp;
  throw ValidationError("format", "unsupported model format '" + std::string(text) + "'; supported formats: mps, lp");
}

ModelFormat format_from_path(const fs::path& path) {
  auto ext = path.extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  if (ext.empty()) throw ValidationError("format", "cannot tell the format of '" + path.string() + "'; supported formats: mps, lp");
  return parse_model_format(ext);
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_number(std::string_view s) {
  if (s.empty()) return false;
  const std::string t(s);
  char* end = nullptr;
  std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return false;
  const auto l = lower(t);
  return l.find("nan") == std::string::npos;
}

/// Splits the text into lines without the terminator; '\r' is dropped.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

// ----------------------------------------------------------------------- MPS

struct Field {
  std::string text;
  std::size_t col = 0;  // 1-based
  bool operator==(const Field&) const = default;
};

std::vector<Field> free_fields(std::string_view line) {
  std::vector<Field> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    const auto start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (line[start] == '$' && out.size() >= 2) break;  // trailing comment
    out.push_back({std::string(line.substr(start, i - start)), start + 1});
  }
  return out;
}

/// Fixed-format fields: columns 2-3, 5-12, 15-22, 25-36, 40-47, 50-61.
std::vector<Field> fixed_fields(std::string_view line) {
  static constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kSpans{
      {{1, 2}, {4, 8}, {14, 8}, {24, 12}, {39, 8}, {49, 12}}};
  std::vector<Field> out;
  for (const auto& [start, len] : kSpans) {
    if (start >= line.size()) {
      out.push_back({"", start + 1});
      continue;
    }
    out.push_back({std::string(trim(line.substr(start, len))), start + 1});
  }
  while (!out.empty() && out.back().text.empty()) out.pop_back();
  return out;
}

class MpsReader {
 public:
  explicit MpsReader(std::string_view text) : text_(text) {}

  Model read() {
    enum class Section { none, objsense, rows, columns, rhs, ranges, bounds, done };
    Section section = Section::none;
    const auto lines = split_lines(text_);
    for (std::size_t n = 0; n < lines.size() && section != Section::done; ++n) {
      line_ = n + 1;
      const auto line = lines[n];
      if (trim(line).empty()) continue;
      if (line[0] == '*') {
        m_.comments.emplace_back(line);
        continue;
      }
      const auto fields = free_fields(line);
      const auto head = upper(fields.front().text);
      if (!std::isspace(static_cast<unsigned char>(line[0])) && is_section(head)) {
        if (head == "NAME") {
          m_.name = std::string(trim(line.substr(4)));
          section = Section::none;
        } else if (head == "OBJSENSE") {
          if (fields.size() > 1) set_sense(fields[1]);
          else section = Section::objsense;
        } else if (head == "ROWS") section = Section::rows;
        else if (head == "COLUMNS") section = Section::columns;
        else if (head == "RHS") section = Section::rhs;
        else if (head == "RANGES") section = Section::ranges;
        else if (head == "BOUNDS") section = Section::bounds;
        else if (head == "ENDATA") section = Section::done;
        continue;
      }
      if (!std::isspace(static_cast<unsigned char>(line[0])) && section == Section::none)
        throw ParseError("unknown MPS section '" + fields.front().text + "'", line_, 1);

      switch (section) {
        case Section::none: throw ParseError("data line outside of a section", line_, fields.front().col);
        case Section::objsense: set_sense(fields.front()); break;
        case Section::rows: with_fallback(line, fields, [&](const auto& f) { return row(f); }); break;
        case Section::columns: with_fallback(line, fields, [&](const auto& f) { return column(f); }); break;
        case Section::rhs: with_fallback(line, fields, [&](const auto& f) { return values(f, true); }); break;
        case Section::ranges: with_fallback(line, fields, [&](const auto& f) { return values(f, false); }); break;
        case Section::bounds: with_fallback(line, fields, [&](const auto& f) { return bound(f); }); break;
        case Section::done: break;
      }
    }
    return std::move(m_);
  }

 private:
  static bool is_section(const std::string& h) {
    static const std::set<std::string> kSections{"NAME",   "ROWS",   "COLUMNS", "RHS",
                                                 "RANGES", "BOUNDS", "ENDATA",  "OBJSENSE"};
    if (h == "SOS" || h == "QUADOBJ" || h == "QMATRIX" || h == "QSECTION" || h == "QCMATRIX" || h == "INDICATORS")
      throw ParseError("unsupported MPS section '" + h + "'");
    return kSections.count(h) != 0;
  }

  void set_sense(const Field& f) {
    const auto s = upper(f.text);
    if (s == "MAX" || s == "MAXIMIZE") m_.maximize = true;
    else if (s == "MIN" || s == "MINIMIZE") m_.maximize = false;
    else throw ParseError("OBJSENSE must be MAX or MIN, got '" + f.text + "'", line_, f.col);
  }

  /// Applies `parse` to the free-format fields, then to fixed columns if the
  /// free reading does not fit. A parse function validates before mutating.
  template <typename F>
  void with_fallback(std::string_view line, const std::vector<Field>& fields, F parse) {
    try {
      parse(fields);
    } catch (const ParseError& free_error) {
      auto fixed = fixed_fields(line);
      if (fixed.empty() || fixed == fields) throw;
      try {
        parse(fixed);
      } catch (const ParseError&) {
        throw free_error;
      }
    }
  }

  std::size_t row_index(const Field& f) const {
    auto it = rows_.find(f.text);
    if (it == rows_.end()) throw ParseError("unknown row '" + f.text + "'", line_, f.col);
    return it->second;
  }

  std::size_t column_index(const Field& f) const {
    auto it = cols_.find(f.text);
    if (it == cols_.end()) throw ParseError("unknown column '" + f.text + "'", line_, f.col);
    return it->second;
  }

  void check_number(const Field& f) const {
    if (!is_number(f.text)) throw ParseError("expected a number, got '" + f.text + "'", line_, f.col);
  }

  void row(std::vector<Field> f) {
    if (!f.empty() && f.front().text.empty()) f.erase(f.begin());
    if (f.size() != 2) throw ParseError("ROWS line needs a sense and a name", line_, f.empty() ? 1 : f.front().col);
    const auto sense = upper(f[0].text);
    if (sense.size() != 1 || std::string("NLGE").find(sense[0]) == std::string::npos)
      throw ParseError("row sense must be N, L, G or E, got '" + f[0].text + "'", line_, f[0].col);
    if (rows_.count(f[1].text)) throw ParseError("duplicate row '" + f[1].text + "'", line_, f[1].col);
    rows_[f[1].text] = m_.rows.size();
    if (sense[0] == 'N' && !m_.objective) m_.objective = m_.rows.size();
    m_.rows.push_back({f[1].text, sense[0], std::nullopt, std::nullopt});
  }

  void column(std::vector<Field> f) {
    if (!f.empty() && f.front().text.empty()) f.erase(f.begin());
    if (f.size() >= 3 && upper(f[1].text) == "'MARKER'") {
      const auto kind = upper(f[2].text);
      if (kind == "'INTORG'") integer_ = true;
      else if (kind == "'INTEND'") integer_ = false;
      else throw ParseError("unknown marker " + f[2].text, line_, f[2].col);
      return;
    }
    if (f.size() != 3 && f.size() != 5)
      throw ParseError("COLUMNS line needs a column and one or two (row, value) pairs", line_, f.empty() ? 1 : f.front().col);
    std::vector<std::pair<std::size_t, std::string>> entries;
    for (std::size_t k = 1; k + 1 < f.size(); k += 2) {
      entries.emplace_back(row_index(f[k]), f[k + 1].text);
      check_number(f[k + 1]);
    }
    auto [it, inserted] = cols_.try_emplace(f[0].text, m_.columns.size());
    if (inserted) m_.columns.push_back({f[0].text, integer_, {}});
    auto& col = m_.columns[it->second];
    for (auto& e : entries) col.coefficients.push_back(std::move(e));
  }

  void values(std::vector<Field> f, bool rhs) {
    std::string set;
    if (!f.empty() && f.front().text.empty()) f.erase(f.begin());
    if (f.size() % 2 == 1) {
      set = f.front().text;
      f.erase(f.begin());
    }
    if (f.size() != 2 && f.size() != 4)
      throw ParseError(std::string(rhs ? "RHS" : "RANGES") + " line needs one or two (row, value) pairs", line_,
                       f.empty() ? 1 : f.front().col);
    std::vector<std::pair<std::size_t, std::string>> entries;
    for (std::size_t k = 0; k + 1 < f.size(); k += 2) {
      entries.emplace_back(row_index(f[k]), f[k + 1].text);
      check_number(f[k + 1]);
    }
    auto& set_name = rhs ? m_.rhs_set : m_.range_set;
    if (set_name.empty()) set_name = set;
    for (auto& [r, v] : entries) (rhs ? m_.rows[r].rhs : m_.rows[r].range) = std::move(v);
  }

  void bound(std::vector<Field> f) {
    if (f.empty()) throw ParseError("empty BOUNDS line", line_, 1);
    const auto type = upper(f[0].text);
    static const std::set<std::string> kValued{"UP", "LO", "FX", "LI", "UI"};
    static const std::set<std::string> kBare{"FR", "MI", "PL"};
    static const std::set<std::string> kOptional{"BV", "SC"};
    std::string set;
    std::size_t ci = 0;
    std::optional<std::size_t> vi;
    if (kValued.count(type)) {
      if (f.size() == 4) ci = 2, vi = 3, set = f[1].text;
      else if (f.size() == 3) ci = 1, vi = 2;
      else throw ParseError("bound " + type + " needs a column and a value", line_, f[0].col);
    } else if (kBare.count(type)) {
      if (f.size() == 3) ci = 2, set = f[1].text;
      else if (f.size() == 2) ci = 1;
      else throw ParseError("bound " + type + " takes a column only", line_, f[0].col);
    } else if (kOptional.count(type)) {
      if (f.size() == 4) ci = 2, vi = 3, set = f[1].text;
      else if (f.size() == 3 && cols_.count(f[1].text) && is_number(f[2].text)) ci = 1, vi = 2;
      else if (f.size() == 3) ci = 2, set = f[1].text;
      else if (f.size() == 2) ci = 1;
      else throw ParseError("malformed " + type + " bound", line_, f[0].col);
    } else {
      throw ParseError("unknown bound type '" + f[0].text + "'", line_, f[0].col);
    }
    const auto col = column_index(f[ci]);
    if (vi) check_number(f[*vi]);
    if (m_.bound_set.empty()) m_.bound_set = set;
    m_.bounds.push_back({type, col, vi ? std::optional(f[*vi].text) : std::nullopt});
  }

  std::string_view text_;
  Model m_;
  std::map<std::string, std::size_t> rows_;
  std::map<std::string, std::size_t> cols_;
  bool integer_ = false;
  std::size_t line_ = 0;
};


// ------------------------------------------------------------------------ LP

struct Token {
  enum Kind { ident, number, op, plus, minus, colon } kind;
  std::string text;
  std::size_t line = 0;
  std::size_t col = 0;
};

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || std::string_view("_!\"#$%&()/,;?@`'{}|~[]").find(c) != std::string_view::npos;
}
bool ident_char(char c) { return ident_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '.'; }

void tokenize_lp(std::string_view line, std::size_t line_no, std::vector<Token>& out) {
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < line.size() && std::isdigit(static_cast<unsigned char>(line[i + 1])))) {
      while (i < line.size() && (std::isdigit(static_cast<unsigned char>(line[i])) || line[i] == '.')) ++i;
      if (i < line.size() && (line[i] == 'e' || line[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < line.size() && (line[j] == '+' || line[j] == '-')) ++j;
        if (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) {
          i = j;
          while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
        }
      }
      const auto num = line.substr(start, i - start);
      if (!is_number(num)) throw ParseError("malformed number '" + std::string(num) + "'", line_no, start + 1);
      out.push_back({Token::number, std::string(num), line_no, start + 1});
    } else if (c == '<' || c == '>' || c == '=') {
      ++i;
      if (i < line.size() && (line[i] == '=' || (c == '=' && (line[i] == '<' || line[i] == '>')))) ++i;
      std::string op(line.substr(start, i - start));
      if (op == "=<") op = "<=";
      if (op == "=>") op = ">=";
      if (op == "<") op = "<=";
      if (op == ">") op = ">=";
      out.push_back({Token::op, op, line_no, start + 1});
    } else if (c == '+' || c == '-') {
      ++i;
      out.push_back({c == '+' ? Token::plus : Token::minus, std::string(1, c), line_no, start + 1});
    } else if (c == ':') {
      ++i;
      out.push_back({Token::colon, ":", line_no, start + 1});
    } else if (ident_start(c)) {
      while (i < line.size() && ident_char(line[i])) ++i;
      out.push_back({Token::ident, std::string(line.substr(start, i - start)), line_no, start + 1});
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", line_no, start + 1);
    }
  }
}

enum class LpSection { none, objective, constraints, bounds, generals, binaries, end };

std::optional<std::pair<LpSection, bool>> lp_header(std::string_view line) {
  std::string l = lower(trim(line));
  std::string collapsed;
  for (char c : l) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!collapsed.empty() && collapsed.back() != ' ') collapsed += ' ';
    } else {
      collapsed += c;
    }
  }
  static const std::map<std::string, std::pair<LpSection, bool>> kHeaders{
      {"minimize", {LpSection::objective, false}}, {"minimise", {LpSection::objective, false}},
      {"minimum", {LpSection::objective, false}},  {"min", {LpSection::objective, false}},
      {"maximize", {LpSection::objective, true}},  {"maximise", {LpSection::objective, true}},
      {"maximum", {LpSection::objective, true}},   {"max", {LpSection::objective, true}},
      {"subject to", {LpSection::constraints, false}}, {"such that", {LpSection::constraints, false}},
      {"st", {LpSection::constraints, false}},     {"s.t.", {LpSection::constraints, false}},
      {"st.", {LpSection::constraints, false}},    {"bounds", {LpSection::bounds, false}},
      {"bound", {LpSection::bounds, false}},       {"general", {LpSection::generals, false}},
      {"generals", {LpSection::generals, false}},  {"gen", {LpSection::generals, false}},
      {"integer", {LpSection::generals, false}},   {"integers", {LpSection::generals, false}},
      {"binary", {LpSection::binaries, false}},    {"binaries", {LpSection::binaries, false}},
      {"bin", {LpSection::binaries, false}},       {"end", {LpSection::end, false}}};
  auto it = kHeaders.find(collapsed);
  if (it == kHeaders.end()) {
    if (collapsed == "semi-continuous" || collapsed == "semis" || collapsed == "semi" || collapsed == "sos")
      throw ParseError("unsupported LP section '" + std::string(trim(line)) + "'");
    return std::nullopt;
  }
  return it->second;
}

class LpReader {
 public:
  Model read(std::string_view text) {
    std::map<LpSection, std::vector<Token>> bodies;
    std::vector<LpSection> order;
    LpSection section = LpSection::none;
    const auto lines = split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
      std::string_view line = lines[n];
      if (const auto bs = line.find('\\'); bs != std::string_view::npos) {
        m_.comments.emplace_back(line.substr(bs));
        line = line.substr(0, bs);
      }
      if (trim(line).empty()) continue;
      if (section == LpSection::end) throw ParseError("text after End", n + 1, 1);
      if (auto h = lp_header(line)) {
        section = h->first;
        if (section == LpSection::objective) {
          if (seen_.count(section)) throw ParseError("second objective section", n + 1, 1);
          m_.maximize = h->second;
        }
        if (section != LpSection::end && !seen_.insert(section).second && section != LpSection::generals &&
            section != LpSection::binaries && section != LpSection::bounds)
          throw ParseError("repeated section", n + 1, 1);
        order.push_back(section);
        continue;
      }
      if (section == LpSection::none) throw ParseError("expected Minimize or Maximize", n + 1, 1);
      tokenize_lp(line, n + 1, bodies[section]);
    }

    // Sections in a fixed order so columns are numbered by first appearance.
    if (auto it = bodies.find(LpSection::objective); it != bodies.end()) objective(it->second);
    if (auto it = bodies.find(LpSection::constraints); it != bodies.end()) constraints(it->second);
    if (auto it = bodies.find(LpSection::bounds); it != bodies.end()) bounds(it->second);
    if (auto it = bodies.find(LpSection::generals); it != bodies.end()) names(it->second, false);
    if (auto it = bodies.find(LpSection::binaries); it != bodies.end()) names(it->second, true);
    return std::move(m_);
  }

 private:
  using Toks = std::vector<Token>;

  [[noreturn]] static void fail(const Toks& t, std::size_t i, const std::string& what) {
    if (i < t.size()) throw ParseError(what + " near '" + t[i].text + "'", t[i].line, t[i].col);
    if (!t.empty()) throw ParseError(what + " at end of section", t.back().line, t.back().col + t.back().text.size());
    throw ParseError(what);
  }

  std::size_t column(const std::string& name) {
    auto [it, inserted] = cols_.try_emplace(name, m_.columns.size());
    if (inserted) m_.columns.push_back({name, false, {}});
    return it->second;
  }

  static bool named(const Toks& t, std::size_t i) {
    return i + 1 < t.size() && t[i].kind == Token::ident && t[i + 1].kind == Token::colon;
  }

  /// Linear terms up to a relational operator, a new named row or the end.
  void terms(const Toks& t, std::size_t& i, std::size_t row) {
    bool first = true;
    while (i < t.size() && t[i].kind != Token::op && !named(t, i)) {
      bool negative = false, signed_term = false;
      while (i < t.size() && (t[i].kind == Token::plus || t[i].kind == Token::minus)) {
        negative ^= t[i].kind == Token::minus;
        signed_term = true;
        ++i;
      }
      if (!first && !signed_term) fail(t, i, "expected + or -");
      std::string coef = "1";
      if (i < t.size() && t[i].kind == Token::number) {
        coef = t[i].text;
        ++i;
      }
      if (i >= t.size() || t[i].kind != Token::ident) fail(t, i, "expected a variable name");
      const auto col = column(t[i].text);
      ++i;
      m_.columns[col].coefficients.emplace_back(row, negative ? "-" + coef : coef);
      first = false;
    }
  }

  std::string signed_number(const Toks& t, std::size_t& i, bool allow_inf) {
    bool negative = false;
    while (i < t.size() && (t[i].kind == Token::plus || t[i].kind == Token::minus)) {
      negative ^= t[i].kind == Token::minus;
      ++i;
    }
    if (i < t.size() && t[i].kind == Token::number) return (negative ? "-" : "") + t[i++].text;
    if (allow_inf && i < t.size() && t[i].kind == Token::ident) {
      const auto l = lower(t[i].text);
      if (l == "inf" || l == "infinity") {
        ++i;
        return negative ? "-inf" : "+inf";
      }
    }
    fail(t, i, "expected a number");
  }

  void objective(const Toks& t) {
    if (t.empty()) return;
    std::size_t i = 0;
    std::string name;
    if (named(t, 0)) {
      name = t[0].text;
      i = 2;
    }
    m_.objective = m_.rows.size();
    m_.rows.push_back({name, 'N', std::nullopt, std::nullopt});
    terms(t, i, *m_.objective);
    if (i < t.size()) fail(t, i, "unexpected token in objective");
  }

  void constraints(const Toks& t) {
    std::size_t i = 0;
    std::set<std::string> seen;
    while (i < t.size()) {
      std::string name;
      if (named(t, i)) {
        name = t[i].text;
        if (!seen.insert(name).second) fail(t, i, "duplicate constraint name");
        i += 2;
      }
      const auto row = m_.rows.size();
      m_.rows.push_back({name, 'L', std::nullopt, std::nullopt});
      const auto start = i;
      terms(t, i, row);
      if (i == start) fail(t, i, "expected a linear expression");
      if (i >= t.size() || t[i].kind != Token::op) fail(t, i, "expected <=, >= or =");
      const auto& op = t[i].text;
      m_.rows[row].sense = op == "<=" ? 'L' : op == ">=" ? 'G' : 'E';
      ++i;
      m_.rows[row].rhs = signed_number(t, i, false);
    }
  }

  void add_bound(const std::string& type, std::size_t col, std::optional<std::string> value) {
    m_.bounds.push_back({type, col, std::move(value)});
  }

  /// `value op x` or `x op value`, with x's side given by `var_left`.
  void bound_from(std::size_t col, const std::string& op, const std::string& value, bool var_left) {
    std::string rel = op;
    if (!var_left) rel = op == "<=" ? ">=" : op == ">=" ? "<=" : op;  // normalise to "x rel value"
    if (rel == "=") return add_bound("FX", col, value);
    if (rel == "<=") {
      if (value == "+inf") return add_bound("PL", col, std::nullopt);
      return add_bound("UP", col, value);
    }
    if (value == "-inf") return add_bound("MI", col, std::nullopt);
    add_bound("LO", col, value);
  }

  void bounds(const Toks& t) {
    std::size_t i = 0;
    while (i < t.size()) {
      if (t[i].kind == Token::ident && !(lower(t[i].text) == "inf" || lower(t[i].text) == "infinity")) {
        const auto col = column(t[i].text);
        ++i;
        if (i < t.size() && t[i].kind == Token::ident && lower(t[i].text) == "free") {
          ++i;
          add_bound("FR", col, std::nullopt);
          continue;
        }
        if (i >= t.size() || t[i].kind != Token::op) fail(t, i, "expected a relation or 'free'");
        const auto op = t[i++].text;
        bound_from(col, op, signed_number(t, i, true), true);
        continue;
      }
      const auto left = signed_number(t, i, true);
      if (i >= t.size() || t[i].kind != Token::op) fail(t, i, "expected a relation");
      const auto op1 = t[i++].text;
      if (i >= t.size() || t[i].kind != Token::ident) fail(t, i, "expected a variable name");
      const auto col = column(t[i++].text);
      bound_from(col, op1, left, false);
      if (i < t.size() && t[i].kind == Token::op) {
        const auto op2 = t[i++].text;
        bound_from(col, op2, signed_number(t, i, true), true);
      }
    }
  }

  void names(const Toks& t, bool binary) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i].kind != Token::ident) fail(t, i, "expected a variable name");
      const auto col = column(t[i].text);
      m_.columns[col].integer = true;
      if (binary) add_bound("BV", col, std::nullopt);
    }
  }

  Model m_;
  std::map<std::string, std::size_t> cols_;
  std::set<LpSection> seen_;
};

void check_writable_name(const std::string& name, const char* what) {
  if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos)
    throw Error(std::string("cannot write ") + what + " '" + name + "' in free-format MPS");
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

Model parse_mps(std::string_view text) { return MpsReader(text).read(); }
Model parse_lp(std::string_view text) { return LpReader().read(text); }

Model parse_model(std::string_view text, ModelFormat format) {
  return format == ModelFormat::mps ? parse_mps(text) : parse_lp(text);
}

Model read_model(const fs::path& path, ModelFormat format) { return parse_model(read_text_file(path), format); }

std::string write_mps(const Model& m) {
  std::ostringstream out;
  out << (m.name.empty() ? "NAME" : "NAME          " + m.name) << "\n";
  if (m.maximize) out << "OBJSENSE\n    MAX\n";
  out << "ROWS\n";
  for (const auto& r : m.rows) {
    check_writable_name(r.name, "row");
    out << " " << r.sense << "  " << r.name << "\n";
  }
  out << "COLUMNS\n";
  bool in_int = false;
  for (const auto& c : m.columns) {
    check_writable_name(c.name, "column");
    if (c.integer != in_int) {
      out << "    MARKER                 'MARKER'                 " << (c.integer ? "'INTORG'" : "'INTEND'") << "\n";
      in_int = c.integer;
    }
    for (const auto& [row, value] : c.coefficients)
      out << "    " << pad(c.name, 10) << pad(m.rows[row].name, 10) << value << "\n";
  }
  if (in_int) out << "    MARKER                 'MARKER'                 'INTEND'\n";
  const std::string rhs_set = m.rhs_set.empty() ? "RHS" : m.rhs_set;
  out << "RHS\n";
  for (const auto& r : m.rows)
    if (r.rhs) out << "    " << pad(rhs_set, 10) << pad(r.name, 10) << *r.rhs << "\n";
  if (std::any_of(m.rows.begin(), m.rows.end(), [](const ModelRow& r) { return r.range.has_value(); })) {
    const std::string set = m.range_set.empty() ? "RNG" : m.range_set;
    out << "RANGES\n";
    for (const auto& r : m.rows)
      if (r.range) out << "    " << pad(set, 10) << pad(r.name, 10) << *r.range << "\n";
  }
  if (!m.bounds.empty()) {
    const std::string set = m.bound_set.empty() ? "BND" : m.bound_set;
    out << "BOUNDS\n";
    for (const auto& b : m.bounds) {
      out << " " << pad(b.type, 3) << pad(set, 10) << (b.value ? pad(m.columns[b.column].name, 10) : m.columns[b.column].name);
      if (b.value) out << *b.value;
      out << "\n";
    }
  }
  out << "ENDATA\n";
  return out.str();
}

std::string write_lp(const Model& m) {
  std::vector<std::vector<std::pair<std::size_t, std::string>>> by_row(m.rows.size());
  for (std::size_t c = 0; c < m.columns.size(); ++c)
    for (const auto& [row, value] : m.columns[c].coefficients) by_row[row].emplace_back(c, value);
  auto expr = [&](std::size_t row) {
    std::string s;
    for (const auto& [c, value] : by_row[row]) {
      const bool neg = !value.empty() && value[0] == '-';
      const std::string mag = neg || (!value.empty() && value[0] == '+') ? value.substr(1) : value;
      if (s.empty()) s += (neg ? "-" : "") + mag + " " + m.columns[c].name;
      else s += std::string(neg ? " - " : " + ") + mag + " " + m.columns[c].name;
    }
    return s;
  };

  std::ostringstream out;
  out << (m.maximize ? "Maximize\n" : "Minimize\n");
  if (m.objective) {
    const auto& r = m.rows[*m.objective];
    if (r.rhs) throw Error("objective constant cannot be written in LP format");
    out << " " << (r.name.empty() ? "" : r.name + ": ") << expr(*m.objective) << "\n";
  }
  out << "Subject To\n";
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    if (m.objective && i == *m.objective) continue;
    const auto& r = m.rows[i];
    if (r.sense == 'N') throw Error("free row '" + r.name + "' cannot be written in LP format");
    if (r.range) throw Error("ranged row '" + r.name + "' cannot be written in LP format");
    if (by_row[i].empty()) throw Error("empty row '" + r.name + "' cannot be written in LP format");
    const char* op = r.sense == 'L' ? "<=" : r.sense == 'G' ? ">=" : "=";
    out << " " << (r.name.empty() ? "" : r.name + ": ") << expr(i) << " " << op << " " << r.rhs.value_or("0") << "\n";
  }
  bool any_bounds = false;
  std::ostringstream bounds;
  for (const auto& b : m.bounds) {
    const auto& name = m.columns[b.column].name;
    if (b.type == "BV") continue;
    any_bounds = true;
    if (b.type == "FR") bounds << " " << name << " free\n";
    else if (b.type == "MI") bounds << " " << name << " >= -inf\n";
    else if (b.type == "PL") bounds << " " << name << " <= +inf\n";
    else if (b.type == "UP" || b.type == "UI") bounds << " " << name << " <= " << b.value.value_or("0") << "\n";
    else if (b.type == "LO" || b.type == "LI") bounds << " " << name << " >= " << b.value.value_or("0") << "\n";
    else if (b.type == "FX") bounds << " " << name << " = " << b.value.value_or("0") << "\n";
    else throw Error("bound type " + b.type + " cannot be written in LP format");
  }
  if (any_bounds) out << "Bounds\n" << bounds.str();
  std::set<std::size_t> binary;
  for (const auto& b : m.bounds)
    if (b.type == "BV") binary.insert(b.column);
  std::string generals;
  for (std::size_t c = 0; c < m.columns.size(); ++c)
    if (m.columns[c].integer && !binary.count(c)) generals += " " + m.columns[c].name + "\n";
  if (!generals.empty()) out << "Generals\n" << generals;
  if (!binary.empty()) {
    out << "Binaries\n";
    for (auto c : binary) out << " " << m.columns[c].name << "\n";
  }
  out << "End\n";
  return out.str();
}

std::string write_model(const Model& model, ModelFormat format) {
  return format == ModelFormat::mps ? write_mps(model) : write_lp(model);
}

// ------------------------------------------------------------------- NameMap

void NameMap::add(Partition partition, std::string generic, std::string original) {
  if (original.find_first_of("\t\r\n") != std::string::npos)
    throw ValidationError(original, "names with tabs or line breaks cannot be mapped");
  if (by_generic_.count(generic)) throw ValidationError(generic, "generic name mapped twice");
  auto& list = partition == Partition::objective   ? objective_
               : partition == Partition::variables ? variables_
                                                   : constraints_;
  for (const auto& [g, o] : list)
    if (o == original) throw ValidationError(original, "original name mapped twice");
  by_generic_.emplace(generic, original);
  by_original_.emplace(original, generic);
  list.emplace_back(std::move(generic), std::move(original));
}

const std::vector<std::pair<std::string, std::string>>& NameMap::pairs(Partition p) const {
  return p == Partition::objective ? objective_ : p == Partition::variables ? variables_ : constraints_;
}

std::size_t NameMap::size() const { return objective_.size() + variables_.size() + constraints_.size(); }

std::optional<std::string> NameMap::original_of(std::string_view generic) const {
  auto it = by_generic_.find(generic);
  if (it == by_generic_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> NameMap::generic_of(std::string_view original) const {
  auto it = by_original_.find(original);
  if (it == by_original_.end()) return std::nullopt;
  return it->second;
}

namespace {
constexpr std::string_view kMapHeader = "# opttune-namemap v1";

std::optional<NameMap::Partition> partition_of(std::string_view generic) {
  auto numbered = [&](std::string_view prefix) {
    if (generic.substr(0, prefix.size()) != prefix || generic.size() == prefix.size()) return false;
    const auto digits = generic.substr(prefix.size());
    return digits[0] != '0' && std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  };
  if (generic == "OBJ" || generic == "MODEL") return NameMap::Partition::objective;
  if (numbered("CON")) return NameMap::Partition::constraints;
  if (numbered("X")) return NameMap::Partition::variables;
  return std::nullopt;
}
}  // namespace

std::string write_namemap(const NameMap& map) {
  std::string out = std::string(kMapHeader) + " sha256=" + map.source_digest + " sanitized=" + map.sanitized_digest +
                    " source=" + map.source_name + "\n";
  for (auto p : {NameMap::Partition::objective, NameMap::Partition::variables, NameMap::Partition::constraints})
    for (const auto& [g, o] : map.pairs(p)) out += g + "\t" + o + "\n";
  out += "# end " + std::to_string(map.size()) + "\n";
  return out;
}

NameMap parse_namemap(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0].substr(0, kMapHeader.size()) != kMapHeader)
    throw ParseError("not a name map (missing header)", 1, 1);
  NameMap map;
  const std::string header(lines[0]);
  auto field = [&](const std::string& key) -> std::string {
    const auto pos = header.find(" " + key + "=");
    if (pos == std::string::npos) throw ParseError("name map header lacks " + key, 1, 1);
    const auto start = pos + key.size() + 2;
    if (key == "source") return header.substr(start);
    return header.substr(start, header.find(' ', start) - start);
  };
  map.source_digest = field("sha256");
  map.sanitized_digest = field("sanitized");
  map.source_name = field("source");

  bool ended = false;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto line = lines[n];
    if (line.empty()) continue;
    if (ended) throw ParseError("content after end marker", n + 1, 1);
    if (line.substr(0, 6) == "# end ") {
      const std::string count(line.substr(6));
      if (count.empty() || !std::all_of(count.begin(), count.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
          std::stoull(count) != map.size())
        throw ParseError("name map entry count does not match its end marker", n + 1, 7);
      ended = true;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError("expected generic<TAB>original", n + 1, 1);
    const std::string generic(line.substr(0, tab));
    const auto partition = partition_of(generic);
    if (!partition) throw ParseError("'" + generic + "' is not a generic name", n + 1, 1);
    try {
      map.add(*partition, generic, std::string(line.substr(tab + 1)));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), n + 1, 1);
    }
  }
  if (!ended) throw ParseError("name map is truncated (no end marker)", lines.size(), 1);
  return map;
}

NameMap read_namemap(const fs::path& path) { return parse_namemap(read_text_file(path)); }

std::pair<Model, NameMap> anonymize(const Model& model) {
  Model out = model;
  NameMap map;
  out.comments.clear();
  if (!model.name.empty()) {
    out.name = "MODEL";
    map.add(NameMap::Partition::objective, "MODEL", model.name);
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < model.rows.size(); ++i) {
    const auto& original = model.rows[i].name;
    if (model.objective && i == *model.objective) {
      out.rows[i].name = "OBJ";
      if (!original.empty()) map.add(NameMap::Partition::objective, "OBJ", original);
    } else {
      out.rows[i].name = "CON" + std::to_string(++k);
      if (!original.empty()) map.add(NameMap::Partition::constraints, out.rows[i].name, original);
    }
  }
  for (std::size_t j = 0; j < model.columns.size(); ++j) {
    out.columns[j].name = "X" + std::to_string(j + 1);
    map.add(NameMap::Partition::variables, out.columns[j].name, model.columns[j].name);
  }
  out.rhs_set = "RHS";
  out.range_set = "RNG";
  out.bound_set = "BND";
  return {std::move(out), std::move(map)};
}

SanitizeResult sanitize_file(const fs::path& input, ModelFormat format, const fs::path& out_dir) {
  const std::string original = read_text_file(input);
  auto [model, map] = anonymize(parse_model(original, format));
  const std::string text = write_model(model, format);
  map.source_digest = sha256_hex(original);
  map.sanitized_digest = sha256_hex(text);
  map.source_name = input.filename().string();

  const fs::path dir = out_dir.empty() ? input.parent_path() : out_dir;
  SanitizeResult r;
  r.sanitized = dir / (input.filename().string() + ".san." + std::string(to_string(format)));
  r.map = dir / (input.filename().string() + ".namemap");
  if (!dir.empty()) fs::create_directories(dir);
  write_file_atomic(r.sanitized, text);
  write_file_atomic(r.map, write_namemap(map));
  r.names = std::move(map);
  return r;
}

std::string deanonymize(std::string_view text, const NameMap& map) {
  auto token_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (!token_char(text[i])) {
      out += text[i++];
      continue;
    }
    const auto start = i;
    while (i < text.size() && token_char(text[i])) ++i;
    const auto token = text.substr(start, i - start);
    if (auto original = map.original_of(token)) out += *original;
    else out += token;
  }
  return out;
}

bool verify_map(const NameMap& map, const fs::path& model_file) {
  std::string text;
  try {
    text = read_text_file(model_file);
  } catch (const Error&) {
    return false;
  }
  if (sha256_hex(text) != map.source_digest) return false;
  for (auto p : {NameMap::Partition::objective, NameMap::Partition::variables, NameMap::Partition::constraints})
    for (const auto& [g, o] : map.pairs(p))
      if (text.find(o) == std::string::npos) return false;
  return true;
}

}  // namespace opttune
