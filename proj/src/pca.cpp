#include "pca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "errors.hpp"

namespace geoloc {

EigenResult symmetric_eigen(std::vector<double> a, int n) {
  if (n < 1 || static_cast<int>(a.size()) != n * n)
    throw InvalidArgumentError("bad matrix shape");
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

  const auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r) * n + c];
  };

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
    if (off < 1e-24) break;

    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = at(v, k, p), vkq = at(v, k, q);
          at(v, k, p) = c * vkp - s * vkq;
          at(v, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return at(a, x, x) > at(a, y, y);
  });

  EigenResult out;
  out.values.resize(n);
  out.vectors.resize(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r) {
    out.values[r] = at(a, order[r], order[r]);
    for (int k = 0; k < n; ++k)
      out.vectors[static_cast<std::size_t>(r) * n + k] = at(v, k, order[r]);
  }
  return out;
}

PrototypePca prototype_pca(const PrototypeTable& table) {
  const std::uint32_t count = table.count();
  const int dim = table.dim;
  if (count < 3)
    throw InvalidArgumentError("PCA needs at least 3 prototypes");

  std::vector<double> mean(dim, 0.0);
  for (std::uint32_t r = 0; r < count; ++r)
    for (int c = 0; c < dim; ++c)
      mean[c] += table.values[static_cast<std::size_t>(r) * dim + c];
  for (double& m : mean) m /= static_cast<double>(count);

  std::vector<double> cov(static_cast<std::size_t>(dim) * dim, 0.0);
  for (std::uint32_t r = 0; r < count; ++r) {
    const double* row = table.values.data() + static_cast<std::size_t>(r) * dim;
    for (int i = 0; i < dim; ++i) {
      const double di = row[i] - mean[i];
      for (int j = i; j < dim; ++j)
        cov[static_cast<std::size_t>(i) * dim + j] += di * (row[j] - mean[j]);
    }
  }
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      const double val = cov[static_cast<std::size_t>(i) * dim + j] /
                         static_cast<double>(count);
      cov[static_cast<std::size_t>(i) * dim + j] = val;
      cov[static_cast<std::size_t>(j) * dim + i] = val;
    }

  const EigenResult eig = symmetric_eigen(cov, dim);

  PrototypePca out;
  out.components.resize(3 * static_cast<std::size_t>(dim));
  out.explained.resize(3);
  for (int k = 0; k < 3; ++k) {
    out.explained[k] = eig.values[k];
    const double* src = eig.vectors.data() + static_cast<std::size_t>(k) * dim;
    double* dst = out.components.data() + static_cast<std::size_t>(k) * dim;
    // sign convention: largest-magnitude loading positive
    int arg = 0;
    for (int c = 1; c < dim; ++c)
      if (std::fabs(src[c]) > std::fabs(src[arg])) arg = c;
    const double flip = src[arg] < 0 ? -1.0 : 1.0;
    for (int c = 0; c < dim; ++c) dst[c] = flip * src[c];
  }

  out.rows.resize(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    const double* row = table.values.data() + static_cast<std::size_t>(r) * dim;
    double pc[3] = {0.0, 0.0, 0.0};
    for (int k = 0; k < 3; ++k) {
      const double* comp = out.components.data() + static_cast<std::size_t>(k) * dim;
      for (int c = 0; c < dim; ++c) pc[k] += comp[c] * (row[c] - mean[c]);
    }
    out.rows[r] = {table.centers[r], pc[0], pc[1], pc[2]};
  }
  return out;
}

void write_pca_csv(const PrototypePca& pca, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for writing: " + path);
  out << "lat,lon,pc1,pc2,pc3\n";
  out.precision(12);
  for (const PcaRow& r : pca.rows)
    out << r.center.lat << ',' << r.center.lon << ',' << r.pc1 << ',' << r.pc2
        << ',' << r.pc3 << '\n';
}

}  // namespace geoloc
