#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace entsim::bell {

/// Bell-basis ordering used throughout the project: Phi+, Psi+, Phi-, Psi-.
/// The enum value doubles as the two-bit Pauli label of the state
/// (bit 0 = X, bit 1 = Z), which turns entanglement-swap composition into
/// an XOR convolution over the four indices.
enum class BellIndex : int { PhiPlus = 0, PsiPlus = 1, PhiMinus = 2, PsiMinus = 3 };

inline constexpr int kNumBellStates = 4;

constexpr int pauli_label(BellIndex i) { return static_cast<int>(i); }

template <typename Scalar>
using BellVector = Eigen::Matrix<Scalar, 4, 1>;

/// Two-qubit state diagonal in the Bell basis: four weights, non-negative,
/// summing to one. Index order follows BellIndex.
using BellState = BellVector<double>;

inline constexpr double kSumTolerance = 1e-12;
inline constexpr double kCoeffTolerance = 1e-12;

struct DepolarizingParams {
  double p = 0.0;  // depolarizing probability of the Pauli channel, in [0,1]
};

struct MemoryDecayParams {
  double decay_rate_per_ns = 0.0;  // exponential decoherence rate (1/ns)
  double elapsed_ns = 0.0;         // storage time (ns)
};

inline BellState maximally_mixed_state() { return BellState::Constant(0.25); }

inline BellState perfect_state() { return BellState{1.0, 0.0, 0.0, 0.0}; }

template <typename Derived>
bool is_valid_state(const Eigen::MatrixBase<Derived>& s, double tol = kSumTolerance) {
  if (s.size() != 4) return false;
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(s[i]) || s[i] < -kCoeffTolerance) return false;
  }
  return std::abs(s.sum() - 1.0) <= 4 * tol;
}

/// Clamps round-off negatives to zero and renormalizes the weights.
/// Coefficients below -1e-12 indicate a real violation and are rejected.
template <typename Scalar>
BellVector<Scalar> sanitized(BellVector<Scalar> v) {
  Scalar sum = 0;
  for (int i = 0; i < 4; ++i) {
    if (v[i] < Scalar(0)) {
      if (v[i] < Scalar(-kCoeffTolerance)) {
        throw std::domain_error("bell: coefficient " + std::to_string(double(v[i])) +
                                " below clamp tolerance");
      }
      v[i] = Scalar(0);
    }
    sum += v[i];
  }
  if (!(sum > Scalar(0.5))) {
    throw std::domain_error("bell: weights do not sum to a normalizable value");
  }
  return v / sum;
}

/// Fidelity of a Bell-diagonal state against the Phi+ target: the first weight.
template <typename Derived>
typename Derived::Scalar fidelity_to_phi_plus(const Eigen::MatrixBase<Derived>& s) {
  return s[0];
}

/// State of a perfect pair sent through a depolarizing channel of
/// probability p: (1 - 3p/4, p/4, p/4, p/4).
inline BellState depolarized_state(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("bell: depolarizing probability must lie in [0,1]");
  }
  return BellState{1.0 - 0.75 * p, 0.25 * p, 0.25 * p, 0.25 * p};
}

inline BellState depolarized_state(const DepolarizingParams& params) {
  return depolarized_state(params.p);
}

/// Exponential storage decoherence: convex mixture of the state with the
/// maximally mixed state, weight exp(-rate * t). One application per stored
/// qubit half; applications compose over consecutive time intervals.
template <typename Derived>
BellVector<typename Derived::Scalar> apply_memory_decay(const Eigen::MatrixBase<Derived>& s,
                                                        const MemoryDecayParams& params) {
  using Scalar = typename Derived::Scalar;
  if (params.decay_rate_per_ns < 0.0 || params.elapsed_ns < 0.0) {
    throw std::domain_error("bell: decay rate and elapsed time must be non-negative");
  }
  const Scalar keep = std::exp(-params.decay_rate_per_ns * params.elapsed_ns);
  BellVector<Scalar> out = keep * s.derived() + (Scalar(1) - keep) * BellVector<Scalar>::Constant(0.25);
  return sanitized<Scalar>(out);
}

/// Composition of two Bell-diagonal pairs under an ideal Bell-state
/// measurement at the shared node, with the heralded Pauli correction
/// already accounted for. Group convolution over the two-bit Pauli labels:
/// out[k] = sum over i of a[i] * b[i ^ k].
template <typename DerivedA, typename DerivedB>
BellVector<typename DerivedA::Scalar> swap_compose(const Eigen::MatrixBase<DerivedA>& a,
                                                   const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  BellVector<Scalar> out;
  for (int k = 0; k < 4; ++k) {
    Scalar acc = 0;
    for (int i = 0; i < 4; ++i) acc += a[i] * b[i ^ k];
    out[k] = acc;
  }
  return sanitized<Scalar>(out);
}

struct PurificationOutcome {
  double success_probability = 0.0;  // probability of equal measurement outcomes
  BellState post_state;              // kept pair conditioned on success
};

/// One purification round: Rx(+pi/2) / Rx(-pi/2) rotations on the two ends,
/// transversal CNOTs from the kept pair onto the sacrificed pair, measurement
/// of the sacrificed qubits, success on equal outcomes. Closed form of the
/// circuit acting on two (possibly distinct) Bell-diagonal inputs; the dense
/// oracle guards this map coefficient by coefficient.
template <typename DerivedK, typename DerivedS>
PurificationOutcome dejmps_round(const Eigen::MatrixBase<DerivedK>& keep,
                                 const Eigen::MatrixBase<DerivedS>& sacrifice) {
  const double k14 = keep[0] + keep[3];
  const double k23 = keep[1] + keep[2];
  const double s14 = sacrifice[0] + sacrifice[3];
  const double s23 = sacrifice[1] + sacrifice[2];
  const double n = k14 * s14 + k23 * s23;
  if (!(n > 1e-15)) {
    throw std::domain_error("bell: degenerate purification (success probability is zero)");
  }
  BellState post;
  post[0] = (keep[0] * sacrifice[0] + keep[3] * sacrifice[3]) / n;
  post[1] = (keep[1] * sacrifice[1] + keep[2] * sacrifice[2]) / n;
  post[2] = (keep[0] * sacrifice[3] + keep[3] * sacrifice[0]) / n;
  post[3] = (keep[1] * sacrifice[2] + keep[2] * sacrifice[1]) / n;
  return PurificationOutcome{n, sanitized<double>(post)};
}

struct PurificationPoint {
  double p = 0.0;       // channel depolarizing probability
  int round = 0;        // 0 = initial state, k = after k successful rounds
  double fidelity = 0.0;
};

/// Deterministic multi-round purification curve: starting from
/// depolarized_state(p), each round purifies two identical copies of the
/// current state and keeps the conditional output.
inline std::vector<PurificationPoint> purification_curve(const std::vector<double>& p_grid,
                                                         int rounds) {
  if (rounds < 0) throw std::domain_error("bell: rounds must be non-negative");
  std::vector<PurificationPoint> table;
  table.reserve(p_grid.size() * static_cast<std::size_t>(rounds + 1));
  for (double p : p_grid) {
    BellState s = depolarized_state(p);
    table.push_back({p, 0, fidelity_to_phi_plus(s)});
    for (int r = 1; r <= rounds; ++r) {
      s = dejmps_round(s, s).post_state;
      table.push_back({p, r, fidelity_to_phi_plus(s)});
    }
  }
  return table;
}

/// CSV rendering of a purification curve: columns p, round, fidelity.
inline std::string purification_curve_csv(const std::vector<PurificationPoint>& table) {
  std::string out = "p,round,fidelity\n";
  char line[80];
  for (const auto& row : table) {
    std::snprintf(line, sizeof(line), "%.6f,%d,%.6f\n", row.p, row.round, row.fidelity);
    out += line;
  }
  return out;
}

}  // namespace entsim::bell
