#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlvr {

/// Dense row-major 2-D array. Rows are CoT steps, columns are tasks
/// everywhere in this library.
template <typename T>
class Table {
 public:
  Table() = default;
  Table(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Table from_rows(const std::vector<std::vector<T>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Table out(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != cols) {
        throw std::invalid_argument("Table::from_rows: ragged row " + std::to_string(r));
      }
      for (std::size_t c = 0; c < cols; ++c) out(r, c) = rows[r][c];
    }
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool same_shape(const Table& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  T& at(std::size_t r, std::size_t c) {
    check(r, c);
    return (*this)(r, c);
  }
  const T& at(std::size_t r, std::size_t c) const {
    check(r, c);
    return (*this)(r, c);
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<const T> flat() const noexcept { return data_; }
  std::span<T> flat() noexcept { return data_; }

  friend bool operator==(const Table&, const Table&) = default;

 private:
  void check(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_) {
      throw std::out_of_range("Table index (" + std::to_string(r) + ", " + std::to_string(c) +
                              ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace rlvr
