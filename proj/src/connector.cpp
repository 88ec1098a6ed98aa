#include "editlab/connector.hpp"

#include <cmath>

#include "editlab/errors.hpp"

namespace editlab {

int64_t connector_param_count(const ConnectorWeights& connector, int d_model) {
  int64_t total = 0;
  for (const ConnectorWeights::LayerDelta& d : connector.deltas) {
    total += d.dq.down.value.size() + d.dq.up.value.size();
    total += d.dk.down.value.size() + d.dk.up.value.size();
  }
  (void)d_model;
  return total;
}

Tensor materialize_delta(const LoraAdapter& adapter) {
  Tensor full = matmul_value(adapter.down.value, adapter.up.value);
  if (adapter.scale != 1.0) {
    for (double& v : full.data) v *= adapter.scale;
  }
  return full;
}

namespace {

// Modified Gram-Schmidt over columns; returns an orthonormal basis of the
// column space as basis vectors of length m.
std::vector<std::vector<double>> column_basis(const Tensor& a) {
  int64_t m = a.rows(), n = a.cols();
  std::vector<std::vector<double>> basis;
  for (int64_t j = 0; j < n; ++j) {
    std::vector<double> v(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) v[static_cast<size_t>(i)] = a.at(i, j);
    for (const std::vector<double>& q : basis) {
      double dot = 0.0;
      for (int64_t i = 0; i < m; ++i) dot += q[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
      for (int64_t i = 0; i < m; ++i) v[static_cast<size_t>(i)] -= dot * q[static_cast<size_t>(i)];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 1e-10) {
      for (double& x : v) x /= norm;
      basis.push_back(std::move(v));
    }
  }
  return basis;
}

// Jacobi eigenvalue sweep for a small symmetric matrix; returns eigenvalues.
std::vector<double> symmetric_eigenvalues(std::vector<std::vector<double>> s) {
  size_t n = s.size();
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) off += s[i][j] * s[i][j];
    if (off < 1e-24) break;
    for (size_t p = 0; p < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        if (std::abs(s[p][q]) < 1e-18) continue;
        double theta = 0.5 * std::atan2(2.0 * s[p][q], s[q][q] - s[p][p]);
        double c = std::cos(theta), t = std::sin(theta);
        for (size_t k = 0; k < n; ++k) {
          double skp = s[k][p], skq = s[k][q];
          s[k][p] = c * skp - t * skq;
          s[k][q] = t * skp + c * skq;
        }
        for (size_t k = 0; k < n; ++k) {
          double spk = s[p][k], sqk = s[q][k];
          s[p][k] = c * spk - t * sqk;
          s[q][k] = t * spk + c * sqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (size_t i = 0; i < n; ++i) eig[i] = s[i][i];
  return eig;
}

}  // namespace

double smallest_principal_angle(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw DimensionError("principal angle needs matching row counts");
  auto qa = column_basis(a);
  auto qb = column_basis(b);
  if (qa.empty() || qb.empty()) {
    throw PreconditionError("principal angle of a zero subspace");
  }
  // cross-gram C = Qa^T Qb; largest singular value = cos(smallest angle)
  size_t ra = qa.size(), rb = qb.size();
  std::vector<std::vector<double>> c(ra, std::vector<double>(rb, 0.0));
  int64_t m = a.rows();
  for (size_t i = 0; i < ra; ++i)
    for (size_t j = 0; j < rb; ++j) {
      double dot = 0.0;
      for (int64_t k = 0; k < m; ++k)
        dot += qa[i][static_cast<size_t>(k)] * qb[j][static_cast<size_t>(k)];
      c[i][j] = dot;
    }
  // eigenvalues of C C^T give squared singular values
  std::vector<std::vector<double>> cct(ra, std::vector<double>(ra, 0.0));
  for (size_t i = 0; i < ra; ++i)
    for (size_t j = 0; j < ra; ++j) {
      double dot = 0.0;
      for (size_t k = 0; k < rb; ++k) dot += c[i][k] * c[j][k];
      cct[i][j] = dot;
    }
  double max_eig = 0.0;
  for (double e : symmetric_eigenvalues(std::move(cct))) max_eig = std::max(max_eig, e);
  double sigma = std::sqrt(std::max(0.0, max_eig));
  sigma = std::min(1.0, sigma);
  return std::acos(sigma);
}

}  // namespace editlab
