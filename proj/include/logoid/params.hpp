#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace logoid {

// Aligned so Eigen reductions over mapped tensors take the same path on
// every run; with plain malloc the peeling depends on the address.
using FloatBuffer = std::vector<float, Eigen::aligned_allocator<float>>;

struct Tensor {
  std::vector<int> shape;
  FloatBuffer data;

  std::size_t numel() const { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered, named collection of float tensors: model weights, their
/// gradients, or optimizer buffers. Insertion order is the serialization
/// order.
class ParameterSet {
 public:
  Tensor& add(std::string name, std::vector<int> shape, float fill = 0.0f);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor& tensor(std::size_t i) { return entries_[i].tensor; }
  const Tensor& tensor(std::size_t i) const { return entries_[i].tensor; }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  void set_zero();
  /// Sum of squares of all entries, as a square root.
  double l2_norm() const;
  /// FNV-1a over names, shapes and raw bytes.
  std::uint64_t content_hash() const;
  bool same_layout(const ParameterSet& other) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  struct Entry {
    std::string name;
    Tensor tensor;
  };
  std::vector<Entry> entries_;
};

}  // namespace logoid
