#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "qsector/tape.hpp"

// Dense statevector simulation of small variational circuits.
//
// Conventions:
//   * wire 0 is the most significant bit of the amplitude index, so the basis
//     state |b0 b1 ... b(n-1)> lives at index sum_w b_w * 2^(n-1-w);
//   * RX(t) = [[c, -i s], [-i s, c]], RY(t) = [[c, -s], [s, c]],
//     RZ(t) = diag(e^{-i t/2}, e^{+i t/2}) with c = cos(t/2), s = sin(t/2);
//   * CNOT(control, target) flips target when control is |1>;
//   * CRZ(control, target, t) applies RZ(t) to target when control is |1>.
namespace qsector::qsim {

using cplx = std::complex<double>;

class QuantumError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedGateError : public QuantumError {
 public:
  using QuantumError::QuantumError;
};

enum class GateKind { RX, RY, RZ, CNOT, CRZ };

class Statevector {
 public:
  explicit Statevector(std::size_t n_qubits);  // |0...0>

  std::size_t n_qubits() const { return n_; }
  std::span<const cplx> amplitudes() const { return amps_; }
  std::span<cplx> amplitudes() { return amps_; }
  double norm() const;
  double expectation_z(std::size_t wire) const;

 private:
  std::size_t n_;
  std::vector<cplx> amps_;
};

// Applies one gate in place. `target` is ignored for single-qubit gates and
// `angle` for CNOT.
void apply_gate(Statevector& state, GateKind kind, std::size_t wire, double angle = 0.0, std::size_t target = 0);

// Where a gate's rotation angle comes from.
enum class AngleSource { None, Fixed, Input, Theta };

struct Gate {
  GateKind kind = GateKind::RX;
  std::size_t wire = 0;    // rotation wire, or control for two-qubit gates
  std::size_t target = 0;  // two-qubit gates only
  AngleSource source = AngleSource::None;
  std::size_t index = 0;   // into the input or theta vector
  double fixed = 0.0;
};

struct CircuitGradient {
  std::vector<double> d_inputs;
  std::vector<double> d_theta;
};

/// A gate sequence whose angles are drawn from an input vector and a
/// trainable parameter vector, read out as <Z> on a list of wires.
class Circuit {
 public:
  Circuit(std::size_t n_qubits, std::size_t n_inputs, std::size_t n_theta);

  void add(const Gate& gate);
  void set_measured(std::vector<std::size_t> wires);

  std::size_t n_qubits() const { return n_; }
  std::size_t n_inputs() const { return n_inputs_; }
  std::size_t n_theta() const { return n_theta_; }
  const std::vector<Gate>& gates() const { return gates_; }
  const std::vector<std::size_t>& measured() const { return measured_; }

  Statevector run(std::span<const double> inputs, std::span<const double> theta) const;
  std::vector<double> expectations(std::span<const double> inputs, std::span<const double> theta) const;

  // Parameter-shift gradient of sum_k cotangent[k] * <Z_measured[k]>.
  // Each angle occurrence contributes (f(a + pi/2) - f(a - pi/2)) / 2 to the
  // slot it reads from, so inputs reused by several gates sum their shifts.
  CircuitGradient param_shift(std::span<const double> inputs, std::span<const double> theta,
                              std::span<const double> cotangent) const;

 private:
  double angle_of(const Gate& g, std::span<const double> inputs, std::span<const double> theta) const;
  void check_sizes(std::span<const double> inputs, std::span<const double> theta) const;

  std::size_t n_;
  std::size_t n_inputs_;
  std::size_t n_theta_;
  std::vector<Gate> gates_;
  std::vector<std::size_t> measured_;
};

enum class Entangler { LinearChain };

struct CircuitSpec {
  std::size_t n_qubits = 4;
  std::size_t n_layers = 2;
  Entangler entangler = Entangler::LinearChain;

  void validate() const;
  std::size_t theta_size() const { return n_qubits * n_layers; }
};

// Angle embedding RX(x_i) RZ(x_i) on wire i, then n_layers of
// [RY(theta[l*n + i]) on every wire, CNOT(i, i+1) chain]; reads <Z_i> on all wires.
Circuit qnn_circuit(const CircuitSpec& spec);

std::vector<double> qnn_forward(const CircuitSpec& spec, std::span<const double> x_proj,
                                std::span<const double> theta);

CircuitGradient param_shift_grad(const CircuitSpec& spec, std::span<const double> x_proj,
                                 std::span<const double> theta, std::span<const double> cotangent);

// Query angles on wires [0, m), key angles on wires [m, 2m), each embedded
// with RX then RZ. Each of the n_layers applies CNOT(a, m+a), RY(theta) on every
// wire, then CNOT(m+a, a), for a < m. Reads <Z_0>. Inputs are laid out
// [q_0..q_{m-1}, k_0..k_{m-1}].
Circuit attention_circuit(const CircuitSpec& spec, std::size_t m);

// (1 + <Z_0>) / 2 of attention_circuit, in [0, 1].
double quantum_attention_score(const CircuitSpec& spec, std::span<const double> q_angles,
                               std::span<const double> k_angles, std::span<const double> theta);

/// Attention scores for every (query, key) pair of a batch of sequences.
///
/// The embedded state of a pair factorizes as phi_q (x) phi_k, so each score is
/// the quadratic form (1 + psi^H M psi) / 2 with M = U^H Z_0 U for the
/// entangling part U. The vector-Jacobian product applies the parameter-shift
/// rule per angle occurrence, summing the shifted forms against the cotangent
/// by linearity; it returns exactly what Circuit::param_shift would give pair
/// by pair.
class AttentionKernel {
 public:
  AttentionKernel(const CircuitSpec& spec, std::size_t m);

  std::size_t m() const { return m_; }
  const CircuitSpec& spec() const { return spec_; }

  // q, k: [B, L, m] angles; theta: spec.theta_size(). Returns [B, L, L].
  ad::Tensor forward(const ad::Tensor& q, const ad::Tensor& k, std::span<const double> theta) const;

  struct Grads {
    ad::Tensor d_q;
    ad::Tensor d_k;
    std::vector<double> d_theta;
  };
  Grads vjp(const ad::Tensor& q, const ad::Tensor& k, std::span<const double> theta,
            const ad::Tensor& grad_scores) const;

 private:
  // Observable restricted to the 2m embedded wires, row-major D x D with D = 4^m.
  std::vector<cplx> observable(std::span<const double> theta) const;

  CircuitSpec spec_;
  std::size_t m_;
  Circuit entangler_;  // gates after the embedding
};

// Autodiff bridges. Both register custom nodes whose vjp is the
// parameter-shift rule.
// x_proj: [B, n] angles, theta: [n_layers * n]. Result [B, n] of <Z_i>.
ad::Var qnn_node(const CircuitSpec& spec, const ad::Var& x_proj, const ad::Var& theta);
// q, k: [B, L, m]; theta: [n_layers * n]. Result [B, L, L] scores in [0, 1].
ad::Var attention_node(const AttentionKernel& kernel, const ad::Var& q, const ad::Var& k, const ad::Var& theta);

}  // namespace qsector::qsim
