#pragma once

#include <stdexcept>
#include <vector>

namespace conest {

// Cross-classification of domains by one or more ordered factors.  Domains
// are numbered row-major over the factor tuples with the LAST factor varying
// fastest: for sizes (3,2) the order is (0,0),(0,1),(1,0),(1,1),(2,0),(2,1).
// The convention is fixed so constraint rows built from a grid are stable.
class DomainGrid {
 public:
  explicit DomainGrid(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.empty()) throw std::invalid_argument("DomainGrid: no factors");
    total_ = 1;
    for (int s : sizes_) {
      if (s < 1) throw std::invalid_argument("DomainGrid: factor size must be >= 1");
      total_ *= s;
    }
  }

  int factors() const { return static_cast<int>(sizes_.size()); }
  int size(int axis) const { return sizes_.at(static_cast<std::size_t>(axis)); }
  int domains() const { return total_; }

  int flatten(const std::vector<int>& levels) const {
    if (levels.size() != sizes_.size())
      throw std::invalid_argument("DomainGrid::flatten: wrong number of levels");
    int d = 0;
    for (std::size_t i = 0; i < sizes_.size(); ++i) {
      if (levels[i] < 0 || levels[i] >= sizes_[i])
        throw std::out_of_range("DomainGrid::flatten: level out of range");
      d = d * sizes_[i] + levels[i];
    }
    return d;
  }

  std::vector<int> unflatten(int d) const {
    if (d < 0 || d >= total_) throw std::out_of_range("DomainGrid::unflatten: domain out of range");
    std::vector<int> levels(sizes_.size());
    for (std::size_t i = sizes_.size(); i-- > 0;) {
      levels[i] = d % sizes_[i];
      d /= sizes_[i];
    }
    return levels;
  }

 private:
  std::vector<int> sizes_;
  int total_;
};

}  // namespace conest
