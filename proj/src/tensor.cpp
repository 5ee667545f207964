#include "optout/tensor.hpp"

#include "optout/common.hpp"

namespace optout {

Matrix& ParamSet::add(std::string name, std::size_t rows, std::size_t cols, double fill) {
  if (find(name) != nullptr) {
    throw ShapeError("duplicate parameter name '" + name + "'");
  }
  entries_.push_back({std::move(name), Matrix(rows, cols, fill)});
  return entries_.back().value;
}

const Matrix* ParamSet::find(const std::string& name) const {
  for (const auto& entry : entries_) {
    if (entry.name == name) {
      return &entry.value;
    }
  }
  return nullptr;
}

Matrix& ParamSet::at(const std::string& name) {
  return const_cast<Matrix&>(static_cast<const ParamSet&>(*this).at(name));
}

const Matrix& ParamSet::at(const std::string& name) const {
  const Matrix* m = find(name);
  if (m == nullptr) {
    throw ShapeError("no parameter named '" + name + "'");
  }
  return *m;
}

bool ParamSet::compatible(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        !entries_[i].value.same_shape(other.entries_[i].value)) {
      return false;
    }
  }
  return true;
}

void ParamSet::require_compatible(const ParamSet& other, const std::string& context) const {
  if (entries_.size() != other.entries_.size()) {
    throw ShapeError(context + ": parameter count " + std::to_string(entries_.size()) + " vs " +
                     std::to_string(other.entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name) {
      throw ShapeError(context + ": parameter " + std::to_string(i) + " is '" + a.name +
                       "' vs '" + b.name + "'");
    }
    if (!a.value.same_shape(b.value)) {
      throw ShapeError(context + ": '" + a.name + "' is " + std::to_string(a.value.rows) + "x" +
                       std::to_string(a.value.cols) + " vs " + std::to_string(b.value.rows) + "x" +
                       std::to_string(b.value.cols));
    }
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& entry : entries_) {
    out.add(entry.name, entry.value.rows, entry.value.cols);
  }
  return out;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& entry : entries_) {
    n += entry.value.size();
  }
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& entry : entries_) {
    out.insert(out.end(), entry.value.data.begin(), entry.value.data.end());
  }
  return out;
}

void ParamSet::fill(double value) {
  for (auto& entry : entries_) {
    std::fill(entry.value.data.begin(), entry.value.data.end(), value);
  }
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  require_compatible(other, "add_scaled");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].value.data;
    const auto& src = other.entries_[i].value.data;
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] += scale * src[k];
    }
  }
}

}  // namespace optout
