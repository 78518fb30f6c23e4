#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace leafvit {

/// Row-major tensor extents. Rank 0 denotes a scalar; extents of zero are
/// rejected at construction.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  [[nodiscard]] std::size_t rank() const noexcept { return dims_.size(); }
  [[nodiscard]] std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  [[nodiscard]] std::size_t numel() const noexcept;
  [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const;

  std::vector<std::size_t> dims_;
};

}  // namespace leafvit
