#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace looptf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPsdError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense symmetric matrix. Symmetrized and checked for finiteness on construction.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(const Matrix& m);

  static SymMatrix identity(int dim);
  static SymMatrix zero(int dim);
  static SymMatrix diagonal(const Vector& diag);
  static SymMatrix scaled_identity(int dim, double value);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  SymMatrix operator+(const SymMatrix& o) const;
  SymMatrix operator-(const SymMatrix& o) const;
  SymMatrix operator*(double s) const;

 private:
  Matrix m_;
};

inline SymMatrix operator*(double s, const SymMatrix& m) { return m * s; }

struct EigDecomp {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns, orthonormal
};

EigDecomp eig_sym(const SymMatrix& m);

/// Clamps eigenvalues in [-1e-10, 0) to zero; throws NotPsdError below that.
SymMatrix psd_sqrt(const SymMatrix& m);
SymMatrix psd_inv_sqrt(const SymMatrix& m);
SymMatrix spd_inverse(const SymMatrix& m);

/// m^k via the eigendecomposition; k >= 0.
SymMatrix matrix_power(const SymMatrix& m, int k);

/// Applies f to every eigenvalue: V f(Λ) Vᵀ.
template <class F>
SymMatrix spectral_map(const SymMatrix& m, F&& f) {
  const EigDecomp e = eig_sym(m);
  Vector mapped(e.eigenvalues.size());
  for (Eigen::Index i = 0; i < mapped.size(); ++i) mapped(i) = f(e.eigenvalues(i));
  return SymMatrix(e.eigenvectors * mapped.asDiagonal() * e.eigenvectors.transpose());
}

double spectral_norm(const Matrix& m);
double spectral_norm(const SymMatrix& m);
double min_eigenvalue(const SymMatrix& m);
double max_eigenvalue(const SymMatrix& m);
bool is_psd(const SymMatrix& m, double tol = 1e-10);

struct BandCheck {
  bool inside = false;
  /// Signed distance of the worst generalized eigenvalue to the band edge;
  /// non-negative when inside.
  double margin = 0.0;
  double min_ratio = 0.0;
  double max_ratio = 0.0;
};

/// lo·ref ≼ a ≼ hi·ref, via the eigenvalues of ref^{-1/2} a ref^{-1/2}.
BandCheck loewner_band(const SymMatrix& a, const SymMatrix& ref, double lo, double hi,
                       double tol = 1e-12);

std::string to_string(const SymMatrix& m);

}  // namespace looptf
