#include "nashdiff/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "nashdiff/errors.hpp"

namespace nashdiff {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw ShapeError("tensor data length does not match shape");
}

Tensor2D Tensor2D::row_vector(std::span<const double> v) {
  return Tensor2D(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

void Tensor2D::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor2D::check_finite(const char* what) const {
  for (double v : data_)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
}

Tensor2D hconcat(std::span<const Tensor2D* const> blocks) {
  if (blocks.empty()) return {};
  const std::size_t rows = blocks.front()->rows();
  std::size_t cols = 0;
  for (const auto* b : blocks) {
    if (b->rows() != rows) throw ShapeError("hconcat: row counts differ");
    cols += b->cols();
  }
  Tensor2D out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t c0 = 0;
    for (const auto* b : blocks) {
      auto src = b->row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(c0));
      c0 += b->cols();
    }
  }
  return out;
}

Tensor2D column_slice(const Tensor2D& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.cols()) throw ShapeError("column_slice out of range");
  Tensor2D out(t.rows(), count);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = t(r, begin + c);
  return out;
}

}  // namespace nashdiff
