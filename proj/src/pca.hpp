#pragma once

#include <string>
#include <vector>

#include "train.hpp"

namespace geoloc {

// Cyclic Jacobi eigendecomposition of a symmetric n x n matrix. Eigenpairs
// are returned in descending eigenvalue order; deterministic rotation order.
struct EigenResult {
  std::vector<double> values;   // n, descending
  std::vector<double> vectors;  // n x n, row r = eigenvector of values[r]
};
EigenResult symmetric_eigen(std::vector<double> matrix, int n);

struct PcaRow {
  GeoPoint center{};
  double pc1 = 0.0, pc2 = 0.0, pc3 = 0.0;
};

struct PrototypePca {
  std::vector<PcaRow> rows;           // one per prototype cell
  std::vector<double> components;     // 3 x dim, orthonormal
  std::vector<double> explained;      // 3 eigenvalues, non-increasing
};

// Projects every prototype onto the top-3 principal components of the
// prototype covariance. Sign convention: the largest-magnitude loading of
// each component is positive. Requires at least 3 prototypes.
PrototypePca prototype_pca(const PrototypeTable& table);

// CSV: lat,lon,pc1,pc2,pc3 (radians for the cell center).
void write_pca_csv(const PrototypePca& pca, const std::string& path);

}  // namespace geoloc
