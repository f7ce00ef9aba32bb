#include "synlik/mathcore.hpp"

#include <algorithm>
#include <array>
#include <limits>

#include <boost/math/special_functions/erf.hpp>

namespace synlik {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorKind::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorKind::NonFiniteDensity: return "NonFiniteDensity";
    case ErrorKind::Divergence: return "Divergence";
    case ErrorKind::AllDivergent: return "AllDivergent";
    case ErrorKind::InsufficientDraws: return "InsufficientDraws";
    case ErrorKind::DegenerateMass: return "DegenerateMass";
    case ErrorKind::SingularAfterEscalation: return "SingularAfterEscalation";
    case ErrorKind::NonFiniteWeight: return "NonFiniteWeight";
    case ErrorKind::InsufficientTail: return "InsufficientTail";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::MissingCovariates: return "MissingCovariates";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::AllZeroLikelihood: return "AllZeroLikelihood";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ConsistencyError: return "ConsistencyError";
    case ErrorKind::NotIpdStudy: return "NotIpdStudy";
    case ErrorKind::MissingBundle: return "MissingBundle";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::InvalidArgument, "std_normal_quantile: p outside [0, 1]");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

namespace {

struct DirectionEntry {
  int degree;
  unsigned coeffs;  // interior coefficients of the primitive polynomial
  std::array<unsigned, 6> m;
};

// new-joe-kuo-6.21201, dimensions 2..16. Dimension 1 is the van der Corput
// sequence and needs no table entry.
constexpr std::array<DirectionEntry, kMaxSobolDim - 1> kDirections{{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
}};

constexpr int kBits = 32;

std::array<std::uint32_t, kBits> direction_numbers(int dim_index) {
  std::array<std::uint32_t, kBits> v{};
  if (dim_index == 0) {
    for (int i = 0; i < kBits; ++i) v[i] = 1u << (kBits - 1 - i);
    return v;
  }
  const DirectionEntry& e = kDirections[dim_index - 1];
  const int s = e.degree;
  for (int i = 0; i < s; ++i) v[i] = e.m[i] << (kBits - 1 - i);
  for (int i = s; i < kBits; ++i) {
    std::uint32_t value = v[i - s] ^ (v[i - s] >> s);
    for (int k = 1; k < s; ++k) {
      if ((e.coeffs >> (s - 1 - k)) & 1u) value ^= v[i - k];
    }
    v[i] = value;
  }
  return v;
}

}  // namespace

Matrix sobol_points(int dim, int n) {
  if (dim < 1 || dim > kMaxSobolDim) {
    throw Error(ErrorKind::UnsupportedDimension,
                "sobol_points supports 1.." + std::to_string(kMaxSobolDim) + " dimensions");
  }
  if (n < 0) throw Error(ErrorKind::InvalidArgument, "sobol_points: negative n");
  Matrix points(n, dim);
  constexpr double scale = 1.0 / 4294967296.0;
  for (int d = 0; d < dim; ++d) {
    const auto v = direction_numbers(d);
    std::uint32_t x = 0;
    for (int i = 0; i < n; ++i) {
      points(i, d) = static_cast<double>(x) * scale;
      // Gray-code update: flip the direction number of the lowest zero bit.
      int c = 0;
      for (unsigned value = static_cast<unsigned>(i); value & 1u; value >>= 1) ++c;
      if (c < kBits) x ^= v[c];
    }
  }
  return points;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 RngStream::engine() const {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream_id + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

RngStream RngStream::child(std::uint64_t tag) const {
  return RngStream{seed, splitmix64(stream_id ^ splitmix64(tag))};
}

}  // namespace synlik
