// Standardization + one-hot encoding between physical-unit tables and the
// numeric matrices the networks consume.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fcgan/dataset.hpp"
#include "fcgan/schema.hpp"
#include "fcgan/tensor.hpp"

namespace fcgan {

// Per-column statistics fitted on a training table. Encoded layout: the d
// standardized continuous columns in schema order, then one one-hot block per
// categorical column in schema order.
class Encoder {
 public:
  Encoder() = default;

  static Encoder fit(const Dataset& ds) {
    if (ds.row_count() < 2)
      throw Error("encoder: need at least 2 rows, got " +
                  std::to_string(ds.row_count()));
    Encoder e;
    e.schema_ = ds.schema();
    const auto cont = e.schema_.continuous_indices();
    e.mean_.resize(cont.size());
    e.std_.resize(cont.size());
    const auto n = static_cast<double>(ds.row_count());
    for (std::size_t k = 0; k < cont.size(); ++k) {
      double mean = 0.0;
      for (std::size_t r = 0; r < ds.row_count(); ++r)
        mean += ds.cell(r, cont[k]);
      mean /= n;
      double var = 0.0;
      for (std::size_t r = 0; r < ds.row_count(); ++r) {
        const double d = ds.cell(r, cont[k]) - mean;
        var += d * d;
      }
      var /= n;  // population variance
      if (var <= 0.0)
        throw ZeroVarianceError("encoder: column '" +
                                e.schema_.column(cont[k]).name +
                                "' is constant");
      e.mean_[k] = mean;
      e.std_[k] = std::sqrt(var);
    }
    return e;
  }

  const TableSchema& schema() const { return schema_; }
  const std::vector<double>& means() const { return mean_; }
  const std::vector<double>& stds() const { return std_; }
  std::size_t encoded_width() const { return schema_.encoded_width(); }

  Tensor encode(const Dataset& ds) const {
    if (!(ds.schema() == schema_))
      throw SchemaError("encode: dataset schema differs from fitted schema");
    const std::size_t n = ds.row_count();
    const auto cont = schema_.continuous_indices();
    const auto cats = schema_.categorical_indices();
    Tensor out = Tensor::matrix(n, encoded_width());
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t j = 0;
      for (std::size_t k = 0; k < cont.size(); ++k, ++j)
        out.at(r, j) = (ds.cell(r, cont[k]) - mean_[k]) / std_[k];
      for (std::size_t ci : cats) {
        const auto& classes = schema_.column(ci).classes;
        const auto idx = static_cast<std::size_t>(ds.cell(r, ci));
        for (std::size_t c = 0; c < classes.size(); ++c, ++j)
          out.at(r, j) = c == idx ? 1.0 : 0.0;
      }
    }
    return out;
  }

  // Standardized continuous block only (for spectral / correlation work).
  Tensor encode_continuous(const Dataset& ds) const {
    if (!(ds.schema() == schema_))
      throw SchemaError("encode: dataset schema differs from fitted schema");
    const std::size_t n = ds.row_count();
    const auto cont = schema_.continuous_indices();
    Tensor out = Tensor::matrix(n, cont.size());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < cont.size(); ++k)
        out.at(r, k) = (ds.cell(r, cont[k]) - mean_[k]) / std_[k];
    return out;
  }

  // Inverts encode(); categorical blocks decode by argmax, so any row of
  // block scores (e.g. softmax output) maps to its top class.
  Dataset decode(const Tensor& m) const {
    if (m.ndim() != 2 || m.cols() != encoded_width())
      throw DimensionError("decode: expected width " +
                           std::to_string(encoded_width()) + ", got " +
                           m.shape_str());
    const auto cont = schema_.continuous_indices();
    const auto cats = schema_.categorical_indices();
    Dataset ds(schema_);
    ds.reserve_rows(m.rows());
    std::vector<double> row(schema_.column_count());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      std::size_t j = 0;
      for (std::size_t k = 0; k < cont.size(); ++k, ++j)
        row[cont[k]] = m.at(r, j) * std_[k] + mean_[k];
      for (std::size_t ci : cats) {
        const std::size_t kk = schema_.column(ci).classes.size();
        std::size_t best = 0;
        for (std::size_t c = 1; c < kk; ++c)
          if (m.at(r, j + c) > m.at(r, j + best)) best = c;
        row[ci] = static_cast<double>(best);
        j += kk;
      }
      ds.append_row(row);
    }
    return ds;
  }

  json to_json() const {
    return json{{"schema", schema_.to_json()},
                {"mean", mean_},
                {"std", std_}};
  }

  static Encoder from_json(const json& j) {
    Encoder e;
    e.schema_ = TableSchema::from_json(j.at("schema"));
    e.mean_ = j.at("mean").get<std::vector<double>>();
    e.std_ = j.at("std").get<std::vector<double>>();
    if (e.mean_.size() != e.schema_.continuous_count() ||
        e.std_.size() != e.mean_.size())
      throw SchemaError("encoder json: statistics do not match schema");
    return e;
  }

 private:
  TableSchema schema_;
  std::vector<double> mean_;
  std::vector<double> std_;
};

}  // namespace fcgan
