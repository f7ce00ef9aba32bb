#pragma once

#include <random>

#include "synlik/grad.hpp"

namespace synlik::test {

// Independent N(0, 1) coordinates.
class StdNormal final : public LogDensityModel {
 public:
  explicit StdNormal(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  LogDensity evaluate(const Vector& theta) const override {
    LogDensity out;
    out.value = -0.5 * dim_ * kLog2Pi - 0.5 * theta.squaredNorm();
    out.gradient = -theta;
    return out;
  }

 private:
  int dim_;
};

// -0.5 (theta - m)' A (theta - m) with a random SPD A.
class Quadratic final : public LogDensityModel {
 public:
  Quadratic(int dim, unsigned seed) : a_(dim, dim), m_(dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Matrix x(dim, dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    a_ = x * x.transpose() / dim + Matrix::Identity(dim, dim);
    for (int i = 0; i < dim; ++i) m_[i] = n(rng);
  }
  int dim() const override { return static_cast<int>(m_.size()); }
  LogDensity evaluate(const Vector& theta) const override {
    const Vector r = theta - m_;
    LogDensity out;
    out.value = -0.5 * r.dot(a_ * r);
    out.gradient = -(a_ * r);
    return out;
  }
  const Matrix& precision() const { return a_; }
  const Vector& mean() const { return m_; }

 private:
  Matrix a_;
  Vector m_;
};

// -|theta| with the branch exposed through the signature.
class Kink final : public LogDensityModel {
 public:
  int dim() const override { return 1; }
  LogDensity evaluate(const Vector& theta) const override {
    LogDensity out;
    out.value = -std::abs(theta[0]);
    out.gradient = Vector::Constant(1, theta[0] > 0 ? -1.0 : 1.0);
    out.branch_signature = theta[0] > 0 ? 1 : 2;
    return out;
  }
};

}  // namespace synlik::test
