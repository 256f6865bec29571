#include "logoid/params.hpp"

#include "logoid/common.hpp"

#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <functional>
#include <numeric>

namespace logoid {

Tensor& ParameterSet::add(std::string name, std::vector<int> shape, float fill) {
  if (contains(name)) throw std::invalid_argument(fmt::format("duplicate parameter '{}'", name));
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        std::multiplies<std::size_t>());
  entries_.push_back({std::move(name), Tensor{std::move(shape), FloatBuffer(n, fill)}});
  return entries_.back().tensor;
}

Tensor& ParameterSet::at(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range(fmt::format("no parameter named '{}'", name));
}

const Tensor& ParameterSet::at(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.shape);
  return out;
}

void ParameterSet::set_zero() {
  for (auto& e : entries_) std::fill(e.tensor.data.begin(), e.tensor.data.end(), 0.0f);
}

double ParameterSet::l2_norm() const {
  double sum = 0.0;
  for (const auto& e : entries_) {
    for (float v : e.tensor.data) sum += static_cast<double>(v) * v;
  }
  return std::sqrt(sum);
}

std::uint64_t ParameterSet::content_hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& e : entries_) {
    h = fnv1a64(e.name, h);
    for (int d : e.tensor.shape) h = fnv1a64(std::to_string(d), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(e.tensor.data.data()),
                                 e.tensor.data.size() * sizeof(float)),
                h);
  }
  return h;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].tensor.shape != other.entries_[i].tensor.shape) {
      return false;
    }
  }
  return true;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i].tensor.data;
    const auto& y = b.entries_[i].tensor.data;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace logoid
