#pragma once

#include <cstddef>
#include <vector>

namespace crossflux {

/// Sparse matrix in triplet (coordinate) form; duplicate entries add up.
struct SparseTriplets {
  int rows = 0;
  int cols = 0;
  std::vector<int> row;
  std::vector<int> col;
  std::vector<double> val;

  SparseTriplets() = default;
  SparseTriplets(int r, int c) : rows(r), cols(c) {}

  void add(int r, int c, double v) {
    row.push_back(r);
    col.push_back(c);
    val.push_back(v);
  }

  void reserve(std::size_t n) {
    row.reserve(n);
    col.reserve(n);
    val.reserve(n);
  }

  std::size_t size() const { return val.size(); }

  void append(const SparseTriplets& o) {
    row.insert(row.end(), o.row.begin(), o.row.end());
    col.insert(col.end(), o.col.begin(), o.col.end());
    val.insert(val.end(), o.val.begin(), o.val.end());
  }
};

}  // namespace crossflux
