#include "looptf/rng.hpp"

namespace looptf {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
  return mix64(mix64(seed ^ mix64(static_cast<std::uint64_t>(tag))) + index);
}

Vector Stream::gaussian_vector(int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = gaussian();
  return v;
}

Matrix Stream::gaussian_matrix(int rows, int cols) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = gaussian();
  return m;
}

Matrix random_orthogonal(int dim, Stream& rng) {
  const Matrix g = rng.gaussian_matrix(dim, dim);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

SymMatrix random_symmetric_with_spectrum(const Vector& spectrum, Stream& rng) {
  const int d = static_cast<int>(spectrum.size());
  const Matrix r = random_orthogonal(d, rng);
  return SymMatrix(r * spectrum.asDiagonal() * r.transpose());
}

}  // namespace looptf
