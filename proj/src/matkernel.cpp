#include "looptf/matkernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace looptf {

namespace {

constexpr double kPsdClamp = 1e-10;

void require_square_finite(const Matrix& m) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << "expected a square matrix, got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
  if (!m.allFinite()) throw NumericError("matrix has non-finite entries");
}

}  // namespace

SymMatrix::SymMatrix(const Matrix& m) {
  require_square_finite(m);
  m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::identity(int dim) { return SymMatrix(Matrix::Identity(dim, dim)); }

SymMatrix SymMatrix::zero(int dim) { return SymMatrix(Matrix::Zero(dim, dim)); }

SymMatrix SymMatrix::diagonal(const Vector& diag) { return SymMatrix(Matrix(diag.asDiagonal())); }

SymMatrix SymMatrix::scaled_identity(int dim, double value) {
  return SymMatrix(value * Matrix::Identity(dim, dim));
}

SymMatrix SymMatrix::operator+(const SymMatrix& o) const {
  if (o.dim() != dim()) throw DimensionError("SymMatrix sum: dimension mismatch");
  return SymMatrix(m_ + o.m_);
}

SymMatrix SymMatrix::operator-(const SymMatrix& o) const {
  if (o.dim() != dim()) throw DimensionError("SymMatrix difference: dimension mismatch");
  return SymMatrix(m_ - o.m_);
}

SymMatrix SymMatrix::operator*(double s) const { return SymMatrix(m_ * s); }

EigDecomp eig_sym(const SymMatrix& m) {
  require_square_finite(m.mat());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m.mat());
  if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition did not converge");
  EigDecomp out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

SymMatrix psd_sqrt(const SymMatrix& m) {
  return spectral_map(m, [](double v) {
    if (v < -kPsdClamp) {
      std::ostringstream os;
      os << "matrix is not PSD (eigenvalue " << v << ")";
      throw NotPsdError(os.str());
    }
    return std::sqrt(std::max(v, 0.0));
  });
}

SymMatrix psd_inv_sqrt(const SymMatrix& m) {
  return spectral_map(m, [](double v) {
    if (v <= 0.0) throw NotPsdError("matrix is not positive definite");
    return 1.0 / std::sqrt(v);
  });
}

SymMatrix spd_inverse(const SymMatrix& m) {
  return spectral_map(m, [](double v) {
    if (v <= 0.0) throw NotPsdError("matrix is not positive definite");
    return 1.0 / v;
  });
}

SymMatrix matrix_power(const SymMatrix& m, int k) {
  if (k < 0) throw std::invalid_argument("matrix_power: negative exponent");
  if (k == 0) return SymMatrix::identity(m.dim());
  return spectral_map(m, [k](double v) { return std::pow(v, k); });
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double spectral_norm(const SymMatrix& m) {
  const EigDecomp e = eig_sym(m);
  return std::max(std::abs(e.eigenvalues(0)), std::abs(e.eigenvalues(e.eigenvalues.size() - 1)));
}

double min_eigenvalue(const SymMatrix& m) {
  const EigDecomp e = eig_sym(m);
  return e.eigenvalues(e.eigenvalues.size() - 1);
}

double max_eigenvalue(const SymMatrix& m) { return eig_sym(m).eigenvalues(0); }

bool is_psd(const SymMatrix& m, double tol) { return min_eigenvalue(m) >= -tol; }

BandCheck loewner_band(const SymMatrix& a, const SymMatrix& ref, double lo, double hi,
                       double tol) {
  if (a.dim() != ref.dim()) throw DimensionError("loewner_band: dimension mismatch");
  if (min_eigenvalue(ref) <= 0.0) throw NotPsdError("loewner_band: reference is not PD");
  const SymMatrix w = psd_inv_sqrt(ref);
  const SymMatrix whitened(w.mat() * a.mat() * w.mat());
  const EigDecomp e = eig_sym(whitened);
  BandCheck out;
  out.max_ratio = e.eigenvalues(0);
  out.min_ratio = e.eigenvalues(e.eigenvalues.size() - 1);
  out.margin = std::min(out.min_ratio - lo, hi - out.max_ratio);
  out.inside = out.margin >= -tol;
  return out;
}

std::string to_string(const SymMatrix& m) {
  std::ostringstream os;
  os.precision(6);
  os << m.mat();
  return os.str();
}

}  // namespace looptf
