// In-memory tables in physical units, CSV ingestion with validation, and the
// stratified subsampler used by the data-volume study.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fcgan/rng.hpp"
#include "fcgan/schema.hpp"
#include "fcgan/util.hpp"

namespace fcgan {

// Row-major table; categorical cells hold the 0-based class index.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(TableSchema schema)
      : schema_(std::move(schema)), ncols_(schema_.column_count()) {}

  const TableSchema& schema() const { return schema_; }
  std::size_t row_count() const { return ncols_ ? cells_.size() / ncols_ : 0; }
  std::size_t column_count() const { return ncols_; }

  double cell(std::size_t r, std::size_t c) const {
    return cells_[r * ncols_ + c];
  }
  double& cell(std::size_t r, std::size_t c) { return cells_[r * ncols_ + c]; }

  void append_row(const std::vector<double>& row) {
    if (row.size() != ncols_)
      throw DimensionError("append_row: row has " + std::to_string(row.size()) +
                           " cells, schema has " + std::to_string(ncols_));
    cells_.insert(cells_.end(), row.begin(), row.end());
  }

  void reserve_rows(std::size_t n) { cells_.reserve(n * ncols_); }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(row_count());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = cell(r, c);
    return out;
  }

  std::vector<double> column(const std::string& name) const {
    return column(schema_.index_of(name));
  }

  Dataset select_rows(const std::vector<std::size_t>& rows) const {
    Dataset out(schema_);
    out.reserve_rows(rows.size());
    for (std::size_t r : rows)
      out.cells_.insert(out.cells_.end(), cells_.begin() + r * ncols_,
                        cells_.begin() + (r + 1) * ncols_);
    return out;
  }

  // Rows whose categorical column equals the given class label.
  Dataset filter_equal(const std::string& column_name,
                       const std::string& label) const {
    const std::size_t c = schema_.index_of(column_name);
    const auto idx =
        static_cast<double>(schema_.column(c).class_index(label));
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < row_count(); ++r)
      if (cell(r, c) == idx) keep.push_back(r);
    return select_rows(keep);
  }

  // Rows whose continuous column lies inside [lo, hi].
  Dataset filter_range(const std::string& column_name, double lo,
                       double hi) const {
    const std::size_t c = schema_.index_of(column_name);
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < row_count(); ++r)
      if (cell(r, c) >= lo && cell(r, c) <= hi) keep.push_back(r);
    return select_rows(keep);
  }

 private:
  TableSchema schema_;
  std::size_t ncols_ = 0;
  std::vector<double> cells_;
};

struct ValidationEntry {
  std::size_t row;  // 1-based data row (header excluded)
  std::string column;
  std::string value;
  std::string violation;
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  std::size_t rejected_rows = 0;

  bool clean() const { return entries.empty(); }

  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& e : entries) {
      json j{{"row", e.row},
             {"column", e.column},
             {"value", e.value},
             {"violation", e.violation}};
      os << j.dump() << '\n';
    }
    return os.str();
  }
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(std::string_view(line).substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}
}  // namespace detail

// Header-matched (order-insensitive) typed CSV ingestion. Unparseable cells
// reject the whole row with a diagnostic; out-of-range continuous values are
// reported and kept, unless strict mode upgrades them to an error.
inline Dataset load_csv(const TableSchema& schema,
                        const std::filesystem::path& path,
                        ValidationReport* report = nullptr,
                        bool strict_ranges = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw CsvError("'" + path.string() + "': empty file");

  const auto header = detail::split_csv_line(line);
  std::vector<std::size_t> col_of_field(header.size());
  std::vector<char> seen(schema.column_count(), 0);
  for (std::size_t f = 0; f < header.size(); ++f) {
    if (!schema.has_column(header[f]))
      throw SchemaError("'" + path.string() + "': unexpected column '" +
                        header[f] + "'");
    const std::size_t c = schema.index_of(header[f]);
    if (seen[c])
      throw SchemaError("'" + path.string() + "': duplicate column '" +
                        header[f] + "'");
    seen[c] = 1;
    col_of_field[f] = c;
  }
  for (std::size_t c = 0; c < schema.column_count(); ++c)
    if (!seen[c])
      throw SchemaError("'" + path.string() + "': missing column '" +
                        schema.column(c).name + "'");

  ValidationReport local;
  ValidationReport& rep = report ? *report : local;
  Dataset ds(schema);
  std::vector<double> row(schema.column_count());
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      rep.entries.push_back({lineno, "", std::to_string(fields.size()),
                             "expected " + std::to_string(header.size()) +
                                 " fields"});
      ++rep.rejected_rows;
      continue;
    }
    bool ok = true;
    for (std::size_t f = 0; f < fields.size() && ok; ++f) {
      const std::size_t c = col_of_field[f];
      const ColumnSpec& spec = schema.column(c);
      if (spec.kind == ColumnKind::Continuous) {
        double v;
        if (!parse_double(fields[f], v)) {
          rep.entries.push_back({lineno, spec.name, fields[f], "unparseable"});
          ok = false;
          break;
        }
        if (v < spec.lo || v > spec.hi)
          rep.entries.push_back(
              {lineno, spec.name, fields[f],
               "outside [" + format_double(spec.lo) + ", " +
                   format_double(spec.hi) + "]"});
        row[c] = v;
      } else {
        auto it = std::find(spec.classes.begin(), spec.classes.end(),
                            fields[f]);
        if (it == spec.classes.end()) {
          rep.entries.push_back(
              {lineno, spec.name, fields[f], "unknown class"});
          ok = false;
          break;
        }
        row[c] = static_cast<double>(it - spec.classes.begin());
      }
    }
    if (!ok) {
      ++rep.rejected_rows;
      continue;
    }
    ds.append_row(row);
  }
  if (strict_ranges && !rep.entries.empty())
    throw SchemaError("'" + path.string() + "': " +
                      std::to_string(rep.entries.size()) +
                      " validation violations in strict mode");
  return ds;
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ostringstream os;
  const TableSchema& schema = ds.schema();
  for (std::size_t c = 0; c < schema.column_count(); ++c) {
    if (c) os << ',';
    os << schema.column(c).name;
  }
  os << '\n';
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    for (std::size_t c = 0; c < schema.column_count(); ++c) {
      if (c) os << ',';
      const ColumnSpec& spec = schema.column(c);
      if (spec.kind == ColumnKind::Continuous)
        os << format_double(ds.cell(r, c));
      else
        os << spec.classes[static_cast<std::size_t>(ds.cell(r, c))];
    }
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

// Seeded stratified subsample keeping floor(f*n) rows overall: each stratum
// contributes ceil(f*n_s), then the largest strata are trimmed one row at a
// time down to the total, so per-class proportions stay within one row.
// Output preserves the original row order (f=1 returns the rows unchanged).
inline Dataset subsample(const Dataset& ds, double f,
                         const std::string& stratify_column,
                         std::uint64_t seed) {
  if (!(f > 0.0 && f <= 1.0))
    throw ConfigError("subsample: factor must lie in (0, 1], got " +
                      format_double(f));
  const std::size_t c = ds.schema().index_of(stratify_column);
  if (ds.schema().column(c).kind != ColumnKind::Categorical)
    throw ConfigError("subsample: stratify column '" + stratify_column +
                      "' is not categorical");
  const std::size_t n = ds.row_count();
  const auto total =
      static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));

  std::map<std::size_t, std::vector<std::size_t>> strata;
  for (std::size_t r = 0; r < n; ++r)
    strata[static_cast<std::size_t>(ds.cell(r, c))].push_back(r);

  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> picked;
  std::size_t grand = 0;
  for (auto& [cls, rows] : strata) {
    // Fisher-Yates prefix selection.
    std::vector<std::size_t> perm = rows;
    const auto want = static_cast<std::size_t>(
        std::ceil(f * static_cast<double>(perm.size()) - 1e-9));
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + rng.uniform_index(perm.size() - i);
      std::swap(perm[i], perm[j]);
    }
    perm.resize(want);
    grand += want;
    picked.emplace_back(cls, std::move(perm));
  }
  while (grand > total) {
    auto largest = std::max_element(
        picked.begin(), picked.end(), [](const auto& a, const auto& b) {
          return a.second.size() < b.second.size();
        });
    largest->second.pop_back();
    --grand;
  }

  std::vector<std::size_t> keep;
  keep.reserve(total);
  for (const auto& [cls, rows] : picked)
    keep.insert(keep.end(), rows.begin(), rows.end());
  std::sort(keep.begin(), keep.end());
  return ds.select_rows(keep);
}

}  // namespace fcgan
