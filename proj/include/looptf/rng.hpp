#pragma once

#include "looptf/matkernel.hpp"

#include <boost/random/chi_squared_distribution.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cstdint>

namespace looptf {

/// Stream tags keep sub-streams of one seed disjoint across subsystems.
enum class StreamTag : std::uint64_t {
  kInstance = 1,
  kCovariance = 2,
  kTrainStep = 3,
  kScan = 4,
  kInit = 5,
  kMoments = 6,
  kOod = 7,
  kEval = 8,
  kConfig = 9,
};

/// splitmix64 finalizer; a bijective 64-bit mix.
std::uint64_t mix64(std::uint64_t x);

std::uint64_t substream_seed(std::uint64_t seed, StreamTag tag, std::uint64_t index);

/// Random stream with a platform-stable contract: mt19937_64 seeded with a
/// mixed 64-bit value, Boost.Random distributions (fixed algorithms, unlike
/// the implementation-defined std:: distributions).
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}
  Stream(std::uint64_t seed, StreamTag tag, std::uint64_t index)
      : engine_(substream_seed(seed, tag, index)) {}

  double gaussian() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double chi_squared(double dof) {
    boost::random::chi_squared_distribution<double> chi(dof);
    return chi(engine_);
  }
  Vector gaussian_vector(int n);
  /// Column-major fill.
  Matrix gaussian_matrix(int rows, int cols);

  boost::random::mt19937_64& engine() { return engine_; }

 private:
  boost::random::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
  boost::random::uniform_01<double> uniform_;
};

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
Matrix random_orthogonal(int dim, Stream& rng);

/// Symmetric matrix R diag(spectrum) Rᵀ with R Haar-random.
SymMatrix random_symmetric_with_spectrum(const Vector& spectrum, Stream& rng);

}  // namespace looptf
