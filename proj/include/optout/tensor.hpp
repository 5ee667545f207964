#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace optout {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct NamedMatrix {
  std::string name;
  Matrix value;

  friend bool operator==(const NamedMatrix&, const NamedMatrix&) = default;
};

/// Ordered collection of named matrices. Used for model parameters,
/// their gradients and optimizer moments alike.
class ParamSet {
 public:
  ParamSet() = default;

  Matrix& add(std::string name, std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  NamedMatrix& operator[](std::size_t i) { return entries_[i]; }
  const NamedMatrix& operator[](std::size_t i) const { return entries_[i]; }

  /// Throws ShapeError when absent.
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  const Matrix* find(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Same names in the same order with the same shapes.
  bool compatible(const ParamSet& other) const;
  /// Throws ShapeError describing the first mismatch.
  void require_compatible(const ParamSet& other, const std::string& context) const;

  /// Zero-valued set with this set's layout.
  ParamSet zeros_like() const;

  std::size_t total_size() const;
  /// Concatenation of all entries in order.
  std::vector<double> flatten() const;

  void fill(double value);
  /// this += scale * other (layouts must match).
  void add_scaled(const ParamSet& other, double scale);

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<NamedMatrix> entries_;
};

}  // namespace optout
