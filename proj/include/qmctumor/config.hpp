#ifndef QMCTUMOR_CONFIG_HPP
#define QMCTUMOR_CONFIG_HPP

// Study configuration: flat "section.key=value" text, '#' comments.
// Every key has a default; the resolved table is echoed into run metadata so
// a run can be repeated without the original file.

#include <qmctumor/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qmctumor {

/// Collected validation problems, reported together.
class ConfigError : public ValidationError {
public:
  explicit ConfigError(std::vector<std::string> problems)
      : ValidationError(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
  static std::string join(const std::vector<std::string>& p) {
    std::string out = "invalid configuration:";
    for (const auto& s : p) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> problems_;
};

/// Key/value table with defaults. Unknown keys are rejected.
class ConfigTable {
public:
  ConfigTable() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"mode", "uniform"},
        {"seed", "2024"},
        {"workers", "1"},
        {"output.dir", "out"},
        {"mesh.source", "structured"},
        {"mesh.length", "100"},
        {"mesh.cells", "25"},
        {"mesh.path", ""},
        {"time.dt", "0.125"},
        {"time.final", "7"},
        {"solver.newton_tol", "1e-10"},
        {"solver.newton_max_iter", "25"},
        {"solver.mass_lumping", "true"},
        {"solver.lambda_shift", "off"},
        {"initial.amplitude", "0.8"},
        {"initial.width", "5"},
        {"initial.center", "auto"},
        {"treatment.rt_times", "0,1,2,3,4"},
        {"treatment.rt_dose", "2"},
        {"treatment.rt_alpha", "0.025"},
        {"treatment.rt_beta", "0.0025"},
        {"treatment.rt_gamma", "auto"},
        {"treatment.ct_times", "0,1,2,3,4,5,6"},
        {"treatment.ct_concentration", "1"},
        {"treatment.ct_alpha", "0.9"},
        {"treatment.ct_beta", "13.333333333333334"},
        {"field.a0", "0.05"},
        {"field.kappa0", "0.3"},
        {"field.s", "16"},
        {"field.nu", "2"},
        {"kl.correlation_length", "180"},
        {"kl.variance_a", "0.2336"},
        {"kl.variance_kappa", "0.0682"},
        {"kl.oversample", "10"},
        {"kl.power_iterations", "1"},
        {"kl.seed", "1"},
        {"kl.modes", "auto"},
        {"kl.cache_a", ""},
        {"kl.cache_kappa", ""},
        {"qmc.m_min", "4"},
        {"qmc.m_max", "10"},
        {"qmc.shifts", "8"},
        {"qmc.vector", "cbc"},
        {"qmc.weight_decay", "2"},
        {"mc.enabled", "true"},
        {"cbc.n", "auto"},
        {"cbc.s", "auto"},
        {"cbc.embedded", "false"},
    };
    return d;
  }

  static ConfigTable parse(std::istream& in) {
    ConfigTable t;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> problems;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError("expected 'key=value'", line_no);
      }
      try {
        t.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ValidationError& e) {
        problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (!problems.empty()) throw ConfigError(problems);
    return t;
  }

  static ConfigTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) {
    if (!defaults().count(key)) throw ValidationError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  /// Applies "key=value".
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  const std::string& get(const std::string& key) const { return values_.at(key); }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Resolved table as "key=value" lines, sorted by key.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

private:
  std::map<std::string, std::string> values_;
};

/// Typed accessors that record failures instead of throwing, so every bad
/// field is reported at once.
class ConfigReader {
public:
  explicit ConfigReader(const ConfigTable& t) : table_(&t) {}

  double number(const std::string& key) {
    const auto& s = table_->get(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument("x");
      return v;
    } catch (const std::exception&) {
      fail(key, "'" + s + "' is not a finite number");
      return 0.0;
    }
  }

  long long integer(const std::string& key) {
    const auto& s = table_->get(key);
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("x");
      return v;
    } catch (const std::exception&) {
      fail(key, "'" + s + "' is not an integer");
      return 0;
    }
  }

  bool boolean(const std::string& key) {
    const auto& s = table_->get(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(key, "'" + s + "' is not a boolean");
    return false;
  }

  std::vector<double> number_list(const std::string& key) {
    std::vector<double> out;
    const auto& s = table_->get(key);
    if (ConfigTable::trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = ConfigTable::trim(item);
      try {
        std::size_t pos = 0;
        const double v = std::stod(item, &pos);
        if (pos != item.size() || !std::isfinite(v)) throw std::invalid_argument("x");
        out.push_back(v);
      } catch (const std::exception&) {
        fail(key, "'" + item + "' is not a finite number");
      }
    }
    return out;
  }

  const std::string& text(const std::string& key) const { return table_->get(key); }

  void require(bool ok, const std::string& key, const std::string& message) {
    if (!ok) fail(key, message);
  }

  void fail(const std::string& key, const std::string& message) {
    problems_.push_back(key + ": " + message);
  }

  void throw_if_failed() const {
    if (!problems_.empty()) throw ConfigError(problems_);
  }

private:
  const ConfigTable* table_;
  std::vector<std::string> problems_;
};

} // namespace qmctumor

#endif
