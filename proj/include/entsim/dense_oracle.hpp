#pragma once

#include <Eigen/Core>

#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "entsim/bell.hpp"

// Small explicit density-matrix simulator (at most 4 qubits). Test-side
// verification oracle for the Bell-diagonal calculus; never on the
// simulation hot path.
namespace entsim::dense {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr int kMaxQubits = 4;
inline constexpr double kHermitianTolerance = 1e-12;
inline constexpr double kTraceTolerance = 1e-12;
inline constexpr double kEigenvalueClamp = -1e-10;

/// Density operator over up to four qubits. Qubit ordering is big-endian:
/// qubit 0 is the most significant bit of the computational basis index.
class DenseState {
 public:
  /// Validates Hermiticity, unit trace and positive semidefiniteness.
  static DenseState from_density_matrix(CMatrix rho);

  static DenseState pure(const CVector& ket);
  static DenseState computational_basis(int num_qubits, unsigned basis_index);
  static DenseState bell_pair(bell::BellIndex which);
  static DenseState bell_diagonal(const bell::BellState& weights);
  static DenseState maximally_mixed(int num_qubits);
  static DenseState tensor(const DenseState& a, const DenseState& b);

  int num_qubits() const { return num_qubits_; }
  Eigen::Index dim() const { return rho_.rows(); }
  const CMatrix& matrix() const { return rho_; }

 private:
  DenseState(int num_qubits, CMatrix rho) : num_qubits_(num_qubits), rho_(std::move(rho)) {}

  int num_qubits_;
  CMatrix rho_;

  friend DenseState apply_gate(const DenseState&, const struct GateSpec&);
  friend std::vector<struct MeasurementBranch> measure_qubit(const DenseState&, int);
  friend DenseState bell_measurement_with_correction(const DenseState&, std::pair<int, int>, int);
  friend DenseState partial_trace(const DenseState&, const std::vector<int>&);
  friend DenseState apply_depolarizing_channel(const DenseState&, int, double);
};

struct GateSpec {
  enum class Kind { RotationX, Cnot, Hadamard, PauliX, PauliZ };

  Kind kind = Kind::PauliX;
  double theta = 0.0;        // RotationX only
  std::vector<int> targets;  // one qubit, or {control, target} for Cnot

  static GateSpec rx(double theta, int qubit) { return {Kind::RotationX, theta, {qubit}}; }
  static GateSpec cnot(int control, int target) { return {Kind::Cnot, 0.0, {control, target}}; }
  static GateSpec hadamard(int qubit) { return {Kind::Hadamard, 0.0, {qubit}}; }
  static GateSpec pauli_x(int qubit) { return {Kind::PauliX, 0.0, {qubit}}; }
  static GateSpec pauli_z(int qubit) { return {Kind::PauliZ, 0.0, {qubit}}; }
};

struct MeasurementBranch {
  int outcome = 0;
  double probability = 0.0;
  DenseState post_state;
};

/// Unitary conjugation U rho U^dagger. Throws on out-of-range targets or a
/// CNOT with equal control and target.
DenseState apply_gate(const DenseState& state, const GateSpec& gate);

/// Projective computational-basis measurement of one qubit. Branches with
/// probability below 1e-12 are omitted; reported probabilities sum to one.
std::vector<MeasurementBranch> measure_qubit(const DenseState& state, int qubit);

/// Bell-state measurement on the given qubit pair of a 4-qubit state, with
/// the outcome-dependent Pauli correction applied at correction_target and
/// the measured qubits traced out. Returns the heralded two-qubit state
/// averaged over outcomes.
DenseState bell_measurement_with_correction(const DenseState& state,
                                            std::pair<int, int> measured_qubits,
                                            int correction_target);

struct BellProjection {
  bell::BellState state;          // renormalized Bell-basis diagonal
  double offdiag_residual = 0.0;  // Frobenius mass outside the diagonal
};

/// Bell-basis diagonal of a two-qubit state, plus the residual off-diagonal
/// mass as a diagnostic for states that are not actually Bell-diagonal.
BellProjection project_bell_diagonal(const DenseState& state);

/// Uhlmann fidelity Tr sqrt(sqrt(rho) sigma sqrt(rho)). Symmetric, in [0,1].
double general_fidelity(const DenseState& rho, const DenseState& sigma);

/// Squared convention: for a pure target this equals the overlap
/// probability, so against Phi+ it reproduces the first Bell weight.
double general_fidelity_squared(const DenseState& rho, const DenseState& sigma);

/// One-qubit depolarizing channel of probability lambda applied to the given
/// qubit via its four Kraus operators.
DenseState apply_depolarizing_channel(const DenseState& state, int qubit, double lambda);

DenseState partial_trace(const DenseState& state, const std::vector<int>& traced_qubits);

/// Plain-text grid of the matrix entries, for debugging.
std::string debug_dump(const DenseState& state);

}  // namespace entsim::dense
