#pragma once

// LTI plant model, LQG design and the controller-side estimator.
//
// Everything here is a pure function of explicit state. Types are templated on
// the scalar so the same code serves double simulations and long-double
// reference checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ncs/error.hpp"

namespace ncs {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace detail {

template <typename Derived>
bool is_symmetric_psd(const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar tol) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) return false;
  if (m.rows() == 0) return true;
  const Scalar scale = std::max(Scalar(1), m.cwiseAbs().maxCoeff());
  if (((m - m.transpose()).cwiseAbs().maxCoeff()) > tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -tol * scale;
}

}  // namespace detail

/// One control loop: x+ = A x + B u + w with w ~ N(0, Z), stage cost
/// x'Qx x + u'Qu u, sampled every `period` seconds.
template <typename Scalar = double>
struct PlantSpec {
  Matrix<Scalar> A;
  Matrix<Scalar> B;
  Matrix<Scalar> Z;
  Matrix<Scalar> Qx;
  Matrix<Scalar> Qu;
  Scalar period{1};
  Scalar weight{1};
  std::string label;

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return B.cols(); }
  bool is_scalar() const { return A.rows() == 1 && B.cols() == 1; }

  static PlantSpec scalar(Scalar a, Scalar b, Scalar z, Scalar qx, Scalar qu,
                          std::string label = {}) {
    PlantSpec s;
    s.A = Matrix<Scalar>::Constant(1, 1, a);
    s.B = Matrix<Scalar>::Constant(1, 1, b);
    s.Z = Matrix<Scalar>::Constant(1, 1, z);
    s.Qx = Matrix<Scalar>::Constant(1, 1, qx);
    s.Qu = Matrix<Scalar>::Constant(1, 1, qu);
    s.label = std::move(label);
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "plant";
    if (!label.empty()) os << " '" << label << "'";
    os << " (n=" << A.rows() << ", m=" << B.cols();
    if (is_scalar()) os << ", A=" << A(0, 0) << ", B=" << B(0, 0);
    os << ")";
    return os.str();
  }

  /// Throws ControlError on inconsistent dimensions or non-PSD weights.
  void validate() const {
    const auto n = A.rows();
    auto fail = [&](const std::string& what) { throw ControlError(describe() + ": " + what); };
    if (n == 0 || A.cols() != n) fail("A must be square and non-empty");
    if (B.rows() != n || B.cols() == 0) fail("B must have as many rows as A");
    if (Z.rows() != n || Z.cols() != n) fail("Z must be n x n");
    if (Qx.rows() != n || Qx.cols() != n) fail("Qx must be n x n");
    if (Qu.rows() != B.cols() || Qu.cols() != B.cols()) fail("Qu must be m x m");
    const Scalar tol = Scalar(1e-10);
    if (!detail::is_symmetric_psd(Z, tol)) fail("Z must be symmetric positive semi-definite");
    if (!detail::is_symmetric_psd(Qx, tol)) fail("Qx must be symmetric positive semi-definite");
    if (!detail::is_symmetric_psd(Qu, tol)) fail("Qu must be symmetric positive semi-definite");
    if (!(period > 0)) fail("period must be positive");
    if (!(weight >= 0)) fail("weight must be non-negative");
  }
};

template <typename Scalar = double>
struct LqgSolution {
  Matrix<Scalar> P;
  Matrix<Scalar> K;
  /// Weight of the un-transmitted estimation error in the stage cost.
  Matrix<Scalar> Qe;
  /// Tr(P Z): the average cost reached when every error is reset.
  Scalar floorCost{0};
};

struct RiccatiOptions {
  double tolerance = 1e-9;
  std::int64_t maxIterations = 1'000'000;
};

/// Right-hand side of the discrete algebraic Riccati equation evaluated at P.
template <typename Scalar>
Matrix<Scalar> riccati_rhs(const Matrix<Scalar>& P, const PlantSpec<Scalar>& spec) {
  const Matrix<Scalar> S = spec.Qu + spec.B.transpose() * P * spec.B;
  Eigen::FullPivLU<Matrix<Scalar>> lu(S);
  if (!lu.isInvertible()) {
    throw ControlError(spec.describe() + ": Qu + B'PB is singular during Riccati iteration");
  }
  const Matrix<Scalar> PB = P * spec.B;
  const Matrix<Scalar> inner = P - PB * lu.solve(PB.transpose());
  Matrix<Scalar> next = spec.Qx + spec.A.transpose() * inner * spec.A;
  return Scalar(0.5) * (next + next.transpose());
}

/// Fixed-point iteration from P0 = Qx until successive iterates agree to
/// `tolerance` in max-norm.
template <typename Scalar>
Matrix<Scalar> solve_riccati(const PlantSpec<Scalar>& spec, const RiccatiOptions& opts = {}) {
  spec.validate();
  Matrix<Scalar> P = spec.Qx;
  for (std::int64_t it = 0; it < opts.maxIterations; ++it) {
    Matrix<Scalar> next = riccati_rhs(P, spec);
    if (!next.allFinite()) break;
    const Scalar change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change <= Scalar(opts.tolerance)) return P;
  }
  throw ControlError(spec.describe() + ": Riccati iteration did not converge within " +
                     std::to_string(opts.maxIterations) + " iterations");
}

template <typename Scalar>
LqgSolution<Scalar> compute_gain(const Matrix<Scalar>& P, const PlantSpec<Scalar>& spec) {
  const Matrix<Scalar> S = spec.Qu + spec.B.transpose() * P * spec.B;
  Eigen::FullPivLU<Matrix<Scalar>> lu(S);
  if (!lu.isInvertible()) {
    throw ControlError(spec.describe() + ": Qu + B'PB is singular; gain undefined");
  }
  LqgSolution<Scalar> sol;
  sol.P = P;
  sol.K = lu.solve(spec.B.transpose() * P * spec.A);
  sol.Qe = sol.K.transpose() * S * sol.K;
  sol.floorCost = (P * spec.Z).trace();
  return sol;
}

template <typename Scalar>
LqgSolution<Scalar> lqg_design(const PlantSpec<Scalar>& spec, const RiccatiOptions& opts = {}) {
  return compute_gain(solve_riccati(spec, opts), spec);
}

template <typename Scalar>
Vector<Scalar> plant_step(const Vector<Scalar>& x, const Vector<Scalar>& u,
                          const Vector<Scalar>& w, const PlantSpec<Scalar>& spec) {
  return spec.A * x + spec.B * u + w;
}

template <typename Scalar>
Vector<Scalar> control_input(const Vector<Scalar>& xhat, const LqgSolution<Scalar>& sol) {
  return -(sol.K * xhat);
}

/// Estimate propagation when nothing was delivered: (A - BK) xhat.
template <typename Scalar>
Vector<Scalar> estimator_predict(const Vector<Scalar>& xhat, const PlantSpec<Scalar>& spec,
                                 const LqgSolution<Scalar>& sol) {
  return (spec.A - spec.B * sol.K) * xhat;
}

/// e+ = (1 - delta) A e + w, the sampler-side one-step-ahead error.
template <typename Scalar>
Vector<Scalar> error_step(const Vector<Scalar>& e, bool delta, const Vector<Scalar>& w,
                          const PlantSpec<Scalar>& spec) {
  if (delta) return w;
  return spec.A * e + w;
}

template <typename Scalar>
Scalar stage_cost(const Vector<Scalar>& x, const Vector<Scalar>& u,
                  const PlantSpec<Scalar>& spec) {
  return x.dot(spec.Qx * x) + u.dot(spec.Qu * u);
}

/// Lower-triangular L with L L' = Z; Z may be singular.
template <typename Scalar>
Matrix<Scalar> noise_factor(const Matrix<Scalar>& Z) {
  Eigen::LLT<Matrix<Scalar>> llt(Z);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(Z);
  const Vector<Scalar> root = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

/// Applied control inputs indexed by control step. Old entries are recycled
/// unless pinned; a pinned entry forces the buffer to grow instead.
template <typename Scalar = double>
class InputHistory {
 public:
  explicit InputHistory(std::size_t capacity = 16) : buf_(std::max<std::size_t>(capacity, 1)) {}

  void push(std::int64_t step, Vector<Scalar> u) {
    if (count_ == 0) {
      first_ = step;
    } else if (step != end_step()) {
      throw ControlError("input history: steps must be pushed consecutively (expected " +
                         std::to_string(end_step()) + ", got " + std::to_string(step) + ")");
    }
    if (count_ == buf_.size()) {
      if (first_ >= pin_) {
        grow();
      } else {
        head_ = (head_ + 1) % buf_.size();
        ++first_;
        --count_;
      }
    }
    buf_[(head_ + count_) % buf_.size()] = std::move(u);
    ++count_;
  }

  /// Entries at or after `step` survive until the pin moves past them.
  void pin(std::int64_t step) { pin_ = step; }
  void unpin() { pin_ = std::numeric_limits<std::int64_t>::max(); }

  bool covers(std::int64_t from, std::int64_t to) const {
    if (from >= to) return true;
    return count_ > 0 && from >= first_ && to <= end_step();
  }

  const Vector<Scalar>& at(std::int64_t step) const {
    if (!covers(step, step + 1)) {
      throw ControlError("input history does not hold step " + std::to_string(step));
    }
    return buf_[(head_ + static_cast<std::size_t>(step - first_)) % buf_.size()];
  }

  std::size_t capacity() const { return buf_.size(); }
  std::size_t size() const { return count_; }
  std::int64_t first_step() const { return first_; }
  std::int64_t end_step() const { return first_ + static_cast<std::int64_t>(count_); }

 private:
  void grow() {
    std::vector<Vector<Scalar>> next(buf_.size() * 2);
    for (std::size_t i = 0; i < count_; ++i) next[i] = std::move(buf_[(head_ + i) % buf_.size()]);
    buf_ = std::move(next);
    head_ = 0;
  }

  std::vector<Vector<Scalar>> buf_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::int64_t first_ = 0;
  std::int64_t pin_ = std::numeric_limits<std::int64_t>::max();
};

/// Estimate of x at `currentStep` from a sample of x taken at `birthStep`,
/// replaying the known inputs u_birth .. u_{current-1} open loop.
template <typename Scalar>
Vector<Scalar> estimator_deliver(const Vector<Scalar>& sampledState, std::int64_t birthStep,
                                 std::int64_t currentStep, const InputHistory<Scalar>& inputs,
                                 const PlantSpec<Scalar>& spec) {
  if (currentStep < birthStep) {
    throw ControlError("delivered sample is from the future (birth " + std::to_string(birthStep) +
                       ", now " + std::to_string(currentStep) + ")");
  }
  if (!inputs.covers(birthStep, currentStep)) {
    throw ControlError("input history too short to replay from step " + std::to_string(birthStep) +
                       " to " + std::to_string(currentStep));
  }
  Vector<Scalar> xhat = sampledState;
  for (std::int64_t j = birthStep; j < currentStep; ++j) {
    xhat = spec.A * xhat + spec.B * inputs.at(j);
  }
  return xhat;
}

/// Per-loop simulation state. `e` is the sampler's copy of the error, which
/// evolves as if every transmitted sample arrived within its own step.
template <typename Scalar = double>
struct LoopState {
  Vector<Scalar> x;
  Vector<Scalar> xhat;
  Vector<Scalar> e;
  std::int64_t k = 0;
  bool lastDecision = false;
  std::int64_t newestAppliedBirth = -1;
  InputHistory<Scalar> appliedInputs;

  static LoopState zero(const PlantSpec<Scalar>& spec, std::size_t historyCapacity = 16) {
    LoopState s{Vector<Scalar>::Zero(spec.state_dim()), Vector<Scalar>::Zero(spec.state_dim()),
                Vector<Scalar>::Zero(spec.state_dim()), 0, false, -1,
                InputHistory<Scalar>(historyCapacity)};
    return s;
  }
};

}  // namespace ncs
