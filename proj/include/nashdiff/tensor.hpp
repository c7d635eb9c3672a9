#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nashdiff {

// Dense row-major matrix of doubles.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2D row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  bool same_shape(const Tensor2D& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  // Throws NumericError naming `what` if any entry is NaN or infinite.
  void check_finite(const char* what) const;

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Horizontal concatenation of equally-tall blocks.
Tensor2D hconcat(std::span<const Tensor2D* const> blocks);

// Columns [begin, begin + count).
Tensor2D column_slice(const Tensor2D& t, std::size_t begin, std::size_t count);

// A learnable array with its gradient buffer. `version` advances on every
// optimizer update so caches built against older values can be detected.
struct Parameter {
  std::string name;
  Tensor2D value;
  Tensor2D grad;
  std::uint64_t version = 0;

  Parameter() = default;
  Parameter(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace nashdiff
