#include "entsim/dense_oracle.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace entsim::dense {

namespace {

constexpr Complex kI{0.0, 1.0};

int qubit_count_for_dim(Eigen::Index dim) {
  int n = 0;
  while ((Eigen::Index{1} << n) < dim) ++n;
  if ((Eigen::Index{1} << n) != dim || n < 1 || n > kMaxQubits) {
    throw std::invalid_argument("dense: dimension must be 2^n with 1 <= n <= 4");
  }
  return n;
}

// Big-endian bit of qubit q in basis index b.
inline int bit_of(unsigned b, int qubit, int num_qubits) {
  return static_cast<int>((b >> (num_qubits - 1 - qubit)) & 1u);
}

inline unsigned mask_of(int qubit, int num_qubits) {
  return 1u << (num_qubits - 1 - qubit);
}

void check_qubit(int qubit, int num_qubits) {
  if (qubit < 0 || qubit >= num_qubits) {
    throw std::invalid_argument("dense: qubit index out of range");
  }
}

Eigen::Matrix2cd one_qubit_matrix(const GateSpec& gate) {
  Eigen::Matrix2cd m;
  switch (gate.kind) {
    case GateSpec::Kind::RotationX: {
      const double c = std::cos(gate.theta / 2.0);
      const double s = std::sin(gate.theta / 2.0);
      m << Complex{c, 0}, -kI * s, -kI * s, Complex{c, 0};
      return m;
    }
    case GateSpec::Kind::Hadamard: {
      const double r = 1.0 / std::sqrt(2.0);
      m << r, r, r, -r;
      return m;
    }
    case GateSpec::Kind::PauliX:
      m << 0, 1, 1, 0;
      return m;
    case GateSpec::Kind::PauliZ:
      m << 1, 0, 0, -1;
      return m;
    default:
      throw std::invalid_argument("dense: not a one-qubit gate");
  }
}

// Embeds a one-qubit operator at the given qubit of an n-qubit register.
CMatrix embed_one_qubit(const Eigen::Matrix2cd& op, int qubit, int num_qubits) {
  const Eigen::Index dim = Eigen::Index{1} << num_qubits;
  CMatrix full = CMatrix::Zero(dim, dim);
  const unsigned mask = mask_of(qubit, num_qubits);
  for (unsigned col = 0; col < static_cast<unsigned>(dim); ++col) {
    const int cb = (col & mask) ? 1 : 0;
    for (int rb = 0; rb < 2; ++rb) {
      const unsigned row = rb ? (col | mask) : (col & ~mask);
      full(row, col) += op(rb, cb);
    }
  }
  return full;
}

// Embeds a two-qubit operator (basis |q_a q_b>) at qubits (a, b).
CMatrix embed_two_qubit(const Eigen::Matrix4cd& op, int qa, int qb, int num_qubits) {
  const Eigen::Index dim = Eigen::Index{1} << num_qubits;
  CMatrix full = CMatrix::Zero(dim, dim);
  const unsigned ma = mask_of(qa, num_qubits);
  const unsigned mb = mask_of(qb, num_qubits);
  for (unsigned col = 0; col < static_cast<unsigned>(dim); ++col) {
    const int c2 = ((col & ma) ? 2 : 0) | ((col & mb) ? 1 : 0);
    for (int r2 = 0; r2 < 4; ++r2) {
      unsigned row = col & ~(ma | mb);
      if (r2 & 2) row |= ma;
      if (r2 & 1) row |= mb;
      full(row, col) += op(r2, c2);
    }
  }
  return full;
}

// Bell kets over |00>,|01>,|10>,|11>, ordered as BellIndex.
Eigen::Vector4cd bell_ket(bell::BellIndex which) {
  const double r = 1.0 / std::sqrt(2.0);
  switch (which) {
    case bell::BellIndex::PhiPlus:
      return {r, 0, 0, r};
    case bell::BellIndex::PsiPlus:
      return {0, r, r, 0};
    case bell::BellIndex::PhiMinus:
      return {r, 0, 0, -r};
    case bell::BellIndex::PsiMinus:
      return {0, r, -r, 0};
  }
  throw std::invalid_argument("dense: bad Bell index");
}

// Pauli with two-bit label (bit 0 = X, bit 1 = Z); label 3 is XZ (~Y).
Eigen::Matrix2cd pauli_by_label(int label) {
  Eigen::Matrix2cd x, z;
  x << 0, 1, 1, 0;
  z << 1, 0, 0, -1;
  switch (label & 3) {
    case 0:
      return Eigen::Matrix2cd::Identity();
    case 1:
      return x;
    case 2:
      return z;
    default:
      return x * z;
  }
}

void require_hermitian_unit_trace(const CMatrix& rho) {
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > kHermitianTolerance) {
    throw std::invalid_argument("dense: matrix is not Hermitian");
  }
  if (std::abs(rho.trace().real() - 1.0) > kTraceTolerance ||
      std::abs(rho.trace().imag()) > kTraceTolerance) {
    throw std::invalid_argument("dense: trace is not one");
  }
}

// Hermitized PSD square root via eigendecomposition, clamping round-off
// negative eigenvalues at kEigenvalueClamp.
CMatrix psd_sqrt(const CMatrix& m) {
  const CMatrix herm = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(herm);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("dense: eigendecomposition failed");
  }
  Eigen::VectorXd vals = solver.eigenvalues();
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] < kEigenvalueClamp) {
      throw std::invalid_argument("dense: matrix is not positive semidefinite");
    }
    vals[i] = vals[i] < 0.0 ? 0.0 : vals[i];
  }
  return solver.eigenvectors() * vals.cwiseSqrt().asDiagonal() *
         solver.eigenvectors().adjoint();
}

}  // namespace

DenseState DenseState::from_density_matrix(CMatrix rho) {
  if (rho.rows() != rho.cols()) {
    throw std::invalid_argument("dense: matrix must be square");
  }
  const int n = qubit_count_for_dim(rho.rows());
  require_hermitian_unit_trace(rho);
  psd_sqrt(rho);  // rejects negative spectra
  return DenseState(n, std::move(rho));
}

DenseState DenseState::pure(const CVector& ket) {
  const int n = qubit_count_for_dim(ket.size());
  const double norm = ket.norm();
  if (std::abs(norm - 1.0) > 1e-9) {
    throw std::invalid_argument("dense: ket is not normalized");
  }
  return DenseState(n, (ket * ket.adjoint()) / (norm * norm));
}

DenseState DenseState::computational_basis(int num_qubits, unsigned basis_index) {
  if (num_qubits < 1 || num_qubits > kMaxQubits) {
    throw std::invalid_argument("dense: unsupported qubit count");
  }
  const Eigen::Index dim = Eigen::Index{1} << num_qubits;
  if (basis_index >= static_cast<unsigned>(dim)) {
    throw std::invalid_argument("dense: basis index out of range");
  }
  CVector ket = CVector::Zero(dim);
  ket[basis_index] = 1.0;
  return pure(ket);
}

DenseState DenseState::bell_pair(bell::BellIndex which) {
  return pure(bell_ket(which));
}

DenseState DenseState::bell_diagonal(const bell::BellState& weights) {
  if (!bell::is_valid_state(weights)) {
    throw std::invalid_argument("dense: invalid Bell-diagonal weights");
  }
  CMatrix rho = CMatrix::Zero(4, 4);
  for (int k = 0; k < bell::kNumBellStates; ++k) {
    const Eigen::Vector4cd ket = bell_ket(static_cast<bell::BellIndex>(k));
    rho += weights[k] * (ket * ket.adjoint());
  }
  return DenseState(2, std::move(rho));
}

DenseState DenseState::maximally_mixed(int num_qubits) {
  if (num_qubits < 1 || num_qubits > kMaxQubits) {
    throw std::invalid_argument("dense: unsupported qubit count");
  }
  const Eigen::Index dim = Eigen::Index{1} << num_qubits;
  return DenseState(num_qubits, CMatrix::Identity(dim, dim) / static_cast<double>(dim));
}

DenseState DenseState::tensor(const DenseState& a, const DenseState& b) {
  const int n = a.num_qubits_ + b.num_qubits_;
  if (n > kMaxQubits) {
    throw std::invalid_argument("dense: tensor product exceeds 4 qubits");
  }
  const Eigen::Index da = a.dim(), db = b.dim();
  CMatrix out(da * db, da * db);
  for (Eigen::Index i = 0; i < da; ++i) {
    for (Eigen::Index j = 0; j < da; ++j) {
      out.block(i * db, j * db, db, db) = a.rho_(i, j) * b.rho_;
    }
  }
  return DenseState(n, std::move(out));
}

DenseState apply_gate(const DenseState& state, const GateSpec& gate) {
  const int n = state.num_qubits_;
  CMatrix u;
  if (gate.kind == GateSpec::Kind::Cnot) {
    if (gate.targets.size() != 2 || gate.targets[0] == gate.targets[1]) {
      throw std::invalid_argument("dense: CNOT needs distinct control and target");
    }
    check_qubit(gate.targets[0], n);
    check_qubit(gate.targets[1], n);
    const Eigen::Index dim = state.dim();
    u = CMatrix::Zero(dim, dim);
    const unsigned mc = mask_of(gate.targets[0], n);
    const unsigned mt = mask_of(gate.targets[1], n);
    for (unsigned b = 0; b < static_cast<unsigned>(dim); ++b) {
      const unsigned image = (b & mc) ? (b ^ mt) : b;
      u(image, b) = 1.0;
    }
  } else {
    if (gate.targets.size() != 1) {
      throw std::invalid_argument("dense: gate needs exactly one target");
    }
    check_qubit(gate.targets[0], n);
    u = embed_one_qubit(one_qubit_matrix(gate), gate.targets[0], n);
  }
  return DenseState(n, u * state.rho_ * u.adjoint());
}

std::vector<MeasurementBranch> measure_qubit(const DenseState& state, int qubit) {
  const int n = state.num_qubits_;
  check_qubit(qubit, n);
  std::vector<MeasurementBranch> branches;
  for (int outcome = 0; outcome < 2; ++outcome) {
    Eigen::Matrix2cd proj = Eigen::Matrix2cd::Zero();
    proj(outcome, outcome) = 1.0;
    const CMatrix p = embed_one_qubit(proj, qubit, n);
    const CMatrix branch = p * state.rho_ * p;
    const double prob = branch.trace().real();
    if (prob > 1e-12) {
      branches.push_back({outcome, prob, DenseState(n, branch / prob)});
    }
  }
  return branches;
}

DenseState bell_measurement_with_correction(const DenseState& state,
                                            std::pair<int, int> measured_qubits,
                                            int correction_target) {
  const int n = state.num_qubits_;
  if (n != 4) {
    throw std::invalid_argument("dense: swap composition needs a 4-qubit state");
  }
  const auto [qa, qb] = measured_qubits;
  check_qubit(qa, n);
  check_qubit(qb, n);
  check_qubit(correction_target, n);
  if (qa == qb || correction_target == qa || correction_target == qb) {
    throw std::invalid_argument("dense: measured and correction qubits must be distinct");
  }

  CMatrix accumulated = CMatrix::Zero(state.dim(), state.dim());
  for (int k = 0; k < bell::kNumBellStates; ++k) {
    const Eigen::Vector4cd ket = bell_ket(static_cast<bell::BellIndex>(k));
    const Eigen::Matrix4cd proj4 = ket * ket.adjoint();
    const CMatrix proj = embed_two_qubit(proj4, qa, qb, n);
    const CMatrix branch = proj * state.rho_ * proj;
    // Outcome label k heralds the Pauli with the same label at the target.
    const CMatrix correction = embed_one_qubit(pauli_by_label(k), correction_target, n);
    accumulated += correction * branch * correction.adjoint();
  }
  return partial_trace(DenseState(n, std::move(accumulated)), {qa, qb});
}

DenseState partial_trace(const DenseState& state, const std::vector<int>& traced_qubits) {
  const int n = state.num_qubits_;
  unsigned traced_mask = 0;
  for (int q : traced_qubits) {
    check_qubit(q, n);
    traced_mask |= mask_of(q, n);
  }
  const int kept = n - static_cast<int>(traced_qubits.size());
  if (kept < 1) throw std::invalid_argument("dense: cannot trace out every qubit");

  // Kept qubits preserve their relative order.
  std::vector<unsigned> kept_masks;
  for (int q = 0; q < n; ++q) {
    const unsigned m = mask_of(q, n);
    if (!(traced_mask & m)) kept_masks.push_back(m);
  }
  const Eigen::Index out_dim = Eigen::Index{1} << kept;
  const Eigen::Index full_dim = state.dim();
  CMatrix out = CMatrix::Zero(out_dim, out_dim);
  for (unsigned row = 0; row < static_cast<unsigned>(full_dim); ++row) {
    for (unsigned col = 0; col < static_cast<unsigned>(full_dim); ++col) {
      if ((row & traced_mask) != (col & traced_mask)) continue;
      unsigned r_out = 0, c_out = 0;
      for (std::size_t i = 0; i < kept_masks.size(); ++i) {
        const unsigned bit = 1u << (kept - 1 - static_cast<int>(i));
        if (row & kept_masks[i]) r_out |= bit;
        if (col & kept_masks[i]) c_out |= bit;
      }
      out(r_out, c_out) += state.rho_(row, col);
    }
  }
  return DenseState(kept, std::move(out));
}

BellProjection project_bell_diagonal(const DenseState& state) {
  if (state.num_qubits() != 2) {
    throw std::invalid_argument("dense: Bell projection needs a two-qubit state");
  }
  Eigen::Matrix4cd basis;
  for (int k = 0; k < bell::kNumBellStates; ++k) {
    basis.col(k) = bell_ket(static_cast<bell::BellIndex>(k));
  }
  const Eigen::Matrix4cd in_bell = basis.adjoint() * state.matrix() * basis;
  bell::BellState diag;
  double offdiag = 0.0;
  for (int i = 0; i < 4; ++i) {
    diag[i] = in_bell(i, i).real();
    for (int j = 0; j < 4; ++j) {
      if (i != j) offdiag += std::norm(in_bell(i, j));
    }
  }
  return BellProjection{bell::sanitized<double>(diag), std::sqrt(offdiag)};
}

double general_fidelity(const DenseState& rho, const DenseState& sigma) {
  if (rho.dim() != sigma.dim()) {
    throw std::invalid_argument("dense: fidelity needs equal dimensions");
  }
  const CMatrix root = psd_sqrt(rho.matrix());
  const CMatrix inner = root * sigma.matrix() * root;
  const CMatrix herm = 0.5 * (inner + inner.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(herm);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("dense: eigendecomposition failed");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    const double v = solver.eigenvalues()[i];
    if (v > 0.0) sum += std::sqrt(v);
  }
  return sum > 1.0 ? std::min(sum, 1.0 + 1e-9) : sum;
}

double general_fidelity_squared(const DenseState& rho, const DenseState& sigma) {
  const double f = general_fidelity(rho, sigma);
  return f * f;
}

DenseState apply_depolarizing_channel(const DenseState& state, int qubit, double lambda) {
  const int n = state.num_qubits_;
  check_qubit(qubit, n);
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("dense: depolarizing probability must lie in [0,1]");
  }
  // Kraus set {sqrt(1-3l/4) I, sqrt(l/4) X, sqrt(l/4) Y, sqrt(l/4) Z}.
  Eigen::Matrix2cd x, y, z;
  x << 0, 1, 1, 0;
  y << 0, -kI, kI, 0;
  z << 1, 0, 0, -1;
  const std::vector<std::pair<double, Eigen::Matrix2cd>> kraus = {
      {1.0 - 0.75 * lambda, Eigen::Matrix2cd::Identity()},
      {0.25 * lambda, x},
      {0.25 * lambda, y},
      {0.25 * lambda, z},
  };
  CMatrix out = CMatrix::Zero(state.dim(), state.dim());
  for (const auto& [weight, op] : kraus) {
    if (weight <= 0.0) continue;
    const CMatrix k = std::sqrt(weight) * embed_one_qubit(op, qubit, n);
    out += k * state.rho_ * k.adjoint();
  }
  return DenseState(n, std::move(out));
}

std::string debug_dump(const DenseState& state) {
  std::string out;
  char buf[64];
  for (Eigen::Index i = 0; i < state.dim(); ++i) {
    for (Eigen::Index j = 0; j < state.dim(); ++j) {
      const Complex v = state.matrix()(i, j);
      std::snprintf(buf, sizeof(buf), "%+.6f%+.6fi ", v.real(), v.imag());
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace entsim::dense
