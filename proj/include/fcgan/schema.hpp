// Column definitions for the bench tables: 52 continuous measurement channels
// plus the categorical test context (day, step).
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "fcgan/errors.hpp"
#include "fcgan/util.hpp"

namespace fcgan {

using json = nlohmann::json;

enum class ColumnKind { Continuous, Categorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::string unit;
  double lo = 0.0, hi = 0.0;        // valid range (continuous)
  std::vector<std::string> classes;  // class labels (categorical)

  static ColumnSpec continuous(std::string name, std::string unit, double lo,
                               double hi) {
    if (!(lo < hi))
      throw SchemaError("column '" + name + "': range [" +
                        format_double(lo) + ", " + format_double(hi) +
                        "] is empty");
    ColumnSpec c;
    c.name = std::move(name);
    c.kind = ColumnKind::Continuous;
    c.unit = std::move(unit);
    c.lo = lo;
    c.hi = hi;
    return c;
  }

  static ColumnSpec categorical(std::string name,
                                std::vector<std::string> classes) {
    if (classes.empty())
      throw SchemaError("column '" + name + "': empty class list");
    std::set<std::string> uniq(classes.begin(), classes.end());
    if (uniq.size() != classes.size())
      throw SchemaError("column '" + name + "': duplicate class labels");
    ColumnSpec c;
    c.name = std::move(name);
    c.kind = ColumnKind::Categorical;
    c.classes = std::move(classes);
    return c;
  }

  std::size_t class_index(const std::string& label) const {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end())
      throw SchemaError("column '" + name + "': unknown class '" + label +
                        "'");
    return static_cast<std::size_t>(it - classes.begin());
  }
};

class TableSchema {
 public:
  TableSchema() = default;
  explicit TableSchema(std::vector<ColumnSpec> cols)
      : cols_(std::move(cols)) {
    std::set<std::string> seen;
    for (const auto& c : cols_)
      if (!seen.insert(c.name).second)
        throw SchemaError("duplicate column name '" + c.name + "'");
  }

  const std::vector<ColumnSpec>& columns() const { return cols_; }
  std::size_t column_count() const { return cols_.size(); }
  const ColumnSpec& column(std::size_t i) const { return cols_.at(i); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < cols_.size(); ++i)
      if (cols_[i].name == name) return i;
    throw SchemaError("no column named '" + name + "'");
  }

  bool has_column(const std::string& name) const {
    for (const auto& c : cols_)
      if (c.name == name) return true;
    return false;
  }

  // Continuous count d.
  std::size_t continuous_count() const {
    std::size_t n = 0;
    for (const auto& c : cols_)
      if (c.kind == ColumnKind::Continuous) ++n;
    return n;
  }

  std::vector<std::size_t> continuous_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cols_.size(); ++i)
      if (cols_[i].kind == ColumnKind::Continuous) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> categorical_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cols_.size(); ++i)
      if (cols_[i].kind == ColumnKind::Categorical) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> out;
    for (const auto& c : cols_)
      if (c.kind == ColumnKind::Categorical) out.push_back(c.classes.size());
    return out;
  }

  // One-hot encoded width D = d + sum(k_i).
  std::size_t encoded_width() const {
    std::size_t w = continuous_count();
    for (std::size_t k : class_counts()) w += k;
    return w;
  }

  json to_json() const {
    json cols = json::array();
    for (const auto& c : cols_) {
      json jc;
      jc["name"] = c.name;
      if (c.kind == ColumnKind::Continuous) {
        jc["kind"] = "continuous";
        jc["unit"] = c.unit;
        jc["range"] = {c.lo, c.hi};
      } else {
        jc["kind"] = "categorical";
        jc["classes"] = c.classes;
      }
      cols.push_back(jc);
    }
    return json{{"columns", cols}};
  }

  static TableSchema from_json(const json& j) {
    if (!j.contains("columns") || !j["columns"].is_array())
      throw SchemaError("schema json: missing 'columns' array");
    std::vector<ColumnSpec> cols;
    for (const auto& jc : j["columns"]) {
      const std::string name = jc.at("name").get<std::string>();
      const std::string kind = jc.at("kind").get<std::string>();
      if (kind == "continuous") {
        const auto& r = jc.at("range");
        cols.push_back(ColumnSpec::continuous(
            name, jc.value("unit", ""), r.at(0).get<double>(),
            r.at(1).get<double>()));
      } else if (kind == "categorical") {
        cols.push_back(ColumnSpec::categorical(
            name, jc.at("classes").get<std::vector<std::string>>()));
      } else {
        throw SchemaError("schema json: column '" + name + "' has unknown kind '" +
                          kind + "'");
      }
    }
    return TableSchema(std::move(cols));
  }

  std::uint64_t digest() const { return fnv1a64(to_json().dump()); }

  bool operator==(const TableSchema& o) const {
    return to_json() == o.to_json();
  }

  // The default bench table: 10 regulated inputs, stack voltage, load
  // current, 40 per-cell voltages, plus test day and step labels.
  static TableSchema default_bench() {
    std::vector<ColumnSpec> cols;
    cols.push_back(ColumnSpec::continuous("Tout_cooling_water", "degC", 25, 95));
    cols.push_back(ColumnSpec::continuous("Tin_H2", "degC", 25, 95));
    cols.push_back(ColumnSpec::continuous("Tin_Air", "degC", 25, 95));
    cols.push_back(ColumnSpec::continuous("Pin_Air", "mbarg", 0, 1000));
    cols.push_back(ColumnSpec::continuous("Pin_H2", "mbarg", 0, 1000));
    cols.push_back(ColumnSpec::continuous("Qin_Air", "Nl/min", 0, 300));
    cols.push_back(ColumnSpec::continuous("Qin_H2", "Nl/min", 0, 100));
    cols.push_back(ColumnSpec::continuous("RHin_Air", "%", 0, 100));
    cols.push_back(ColumnSpec::continuous("RHin_H2", "%", 0, 100));
    cols.push_back(ColumnSpec::continuous("Q_cooling_water", "l/min", 0, 15));
    cols.push_back(ColumnSpec::continuous("V_stack", "V", 0, 40));
    cols.push_back(ColumnSpec::continuous("I_load", "A", 0, 200));
    for (int i = 1; i <= 40; ++i)
      cols.push_back(
          ColumnSpec::continuous("Vcell_" + std::to_string(i), "V", 0, 1));
    cols.push_back(ColumnSpec::categorical("day", {"1", "2", "3", "4", "5"}));
    cols.push_back(
        ColumnSpec::categorical("step", {"stabilization", "polarization"}));
    return TableSchema(std::move(cols));
  }

  // Names of the 10 experimentally regulated inputs (the default feature set
  // for neighborhood search and correlation displays).
  static std::vector<std::string> bench_input_names() {
    return {"Tout_cooling_water", "Tin_H2",   "Tin_Air",  "Pin_Air",
            "Pin_H2",             "Qin_Air",  "Qin_H2",   "RHin_Air",
            "RHin_H2",            "Q_cooling_water"};
  }

 private:
  std::vector<ColumnSpec> cols_;
};

}  // namespace fcgan
