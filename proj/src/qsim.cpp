#include "qsector/qsim.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <utility>

namespace qsector::qsim {
namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

bool is_pauli_rotation(GateKind k) { return k == GateKind::RX || k == GateKind::RY || k == GateKind::RZ; }

void rotation_matrix(GateKind kind, double angle, cplx u[4]) {
  const double c = std::cos(angle / 2.0), s = std::sin(angle / 2.0);
  switch (kind) {
    case GateKind::RX:
      u[0] = c, u[1] = cplx(0, -s), u[2] = cplx(0, -s), u[3] = c;
      break;
    case GateKind::RY:
      u[0] = c, u[1] = -s, u[2] = s, u[3] = c;
      break;
    case GateKind::RZ:
    case GateKind::CRZ:
      u[0] = cplx(c, -s), u[1] = 0, u[2] = 0, u[3] = cplx(c, s);
      break;
    case GateKind::CNOT:
      u[0] = 0, u[1] = 1, u[2] = 1, u[3] = 0;
      break;
  }
}

// RZ(az) RX(ax) |0>
std::array<cplx, 2> embedded_qubit(double ax, double az) {
  const double c = std::cos(ax / 2.0), s = std::sin(ax / 2.0);
  const cplx pm = std::polar(1.0, -az / 2.0), pp = std::polar(1.0, az / 2.0);
  return {pm * c, pp * cplx(0.0, -s)};
}

// Product state of a register whose wire w carries RZ(az[w]) RX(ax[w]) |0>.
std::vector<cplx> register_state(std::span<const double> ax, std::span<const double> az) {
  const std::size_t m = ax.size();
  std::vector<cplx> phi(std::size_t{1} << m, cplx(1.0, 0.0));
  for (std::size_t w = 0; w < m; ++w) {
    const auto q = embedded_qubit(ax[w], az[w]);
    for (std::size_t idx = 0; idx < phi.size(); ++idx) phi[idx] *= q[(idx >> (m - 1 - w)) & 1U];
  }
  return phi;
}

// Re(phi^H A phi) for a row-major d x d matrix.
double quadratic_form(const std::vector<cplx>& a, const std::vector<cplx>& phi) {
  const std::size_t d = phi.size();
  cplx acc = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    cplx row = 0.0;
    for (std::size_t c = 0; c < d; ++c) row += a[r * d + c] * phi[c];
    acc += std::conj(phi[r]) * row;
  }
  return acc.real();
}

void run_gates(const std::vector<Gate>& gates, std::size_t begin, Statevector& state,
               const std::vector<double>& angles) {
  for (std::size_t g = begin; g < gates.size(); ++g) {
    apply_gate(state, gates[g].kind, gates[g].wire, angles[g], gates[g].target);
  }
}

}  // namespace

Statevector::Statevector(std::size_t n_qubits) : n_(n_qubits) {
  if (n_qubits == 0 || n_qubits > 20) throw QuantumError("statevector needs 1..20 qubits");
  amps_.assign(std::size_t{1} << n_qubits, cplx(0.0, 0.0));
  amps_[0] = 1.0;
}

double Statevector::norm() const {
  double s = 0.0;
  for (const auto& a : amps_) s += std::norm(a);
  return std::sqrt(s);
}

double Statevector::expectation_z(std::size_t wire) const {
  if (wire >= n_) throw QuantumError("wire " + std::to_string(wire) + " out of range");
  const std::size_t mask = std::size_t{1} << (n_ - 1 - wire);
  double e = 0.0;
  for (std::size_t i = 0; i < amps_.size(); ++i) e += (i & mask) ? -std::norm(amps_[i]) : std::norm(amps_[i]);
  return e;
}

void apply_gate(Statevector& state, GateKind kind, std::size_t wire, double angle, std::size_t target) {
  const std::size_t n = state.n_qubits();
  if (wire >= n) throw QuantumError("gate wire " + std::to_string(wire) + " out of range for " + std::to_string(n) + " qubits");
  auto amps = state.amplitudes();
  const std::size_t wmask = std::size_t{1} << (n - 1 - wire);
  if (kind == GateKind::CNOT || kind == GateKind::CRZ) {
    if (target >= n) throw QuantumError("gate target " + std::to_string(target) + " out of range");
    if (target == wire) throw QuantumError("control and target must differ");
    const std::size_t tmask = std::size_t{1} << (n - 1 - target);
    if (kind == GateKind::CNOT) {
      for (std::size_t i = 0; i < amps.size(); ++i) {
        if ((i & wmask) && !(i & tmask)) std::swap(amps[i], amps[i | tmask]);
      }
    } else {
      const cplx lo = std::polar(1.0, -angle / 2.0), hi = std::polar(1.0, angle / 2.0);
      for (std::size_t i = 0; i < amps.size(); ++i) {
        if (i & wmask) amps[i] *= (i & tmask) ? hi : lo;
      }
    }
    return;
  }
  cplx u[4];
  rotation_matrix(kind, angle, u);
  for (std::size_t i = 0; i < amps.size(); ++i) {
    if (i & wmask) continue;
    const std::size_t j = i | wmask;
    const cplx a = amps[i], b = amps[j];
    amps[i] = u[0] * a + u[1] * b;
    amps[j] = u[2] * a + u[3] * b;
  }
}

Circuit::Circuit(std::size_t n_qubits, std::size_t n_inputs, std::size_t n_theta)
    : n_(n_qubits), n_inputs_(n_inputs), n_theta_(n_theta) {
  if (n_qubits == 0) throw QuantumError("circuit needs at least one qubit");
  for (std::size_t w = 0; w < n_; ++w) measured_.push_back(w);
}

void Circuit::add(const Gate& gate) {
  const bool two = gate.kind == GateKind::CNOT || gate.kind == GateKind::CRZ;
  if (gate.wire >= n_ || (two && (gate.target >= n_ || gate.target == gate.wire))) {
    throw QuantumError("gate wires out of range for a " + std::to_string(n_) + "-qubit circuit");
  }
  if (gate.source == AngleSource::Input && gate.index >= n_inputs_) throw QuantumError("gate input index out of range");
  if (gate.source == AngleSource::Theta && gate.index >= n_theta_) throw QuantumError("gate theta index out of range");
  gates_.push_back(gate);
}

void Circuit::set_measured(std::vector<std::size_t> wires) {
  for (auto w : wires) {
    if (w >= n_) throw QuantumError("measured wire out of range");
  }
  measured_ = std::move(wires);
}

double Circuit::angle_of(const Gate& g, std::span<const double> inputs, std::span<const double> theta) const {
  switch (g.source) {
    case AngleSource::None:
      return 0.0;
    case AngleSource::Fixed:
      return g.fixed;
    case AngleSource::Input:
      return inputs[g.index];
    case AngleSource::Theta:
      return theta[g.index];
  }
  return 0.0;
}

void Circuit::check_sizes(std::span<const double> inputs, std::span<const double> theta) const {
  if (inputs.size() != n_inputs_ || theta.size() != n_theta_) {
    throw QuantumError("circuit expects " + std::to_string(n_inputs_) + " inputs and " + std::to_string(n_theta_) +
                       " parameters, got " + std::to_string(inputs.size()) + " and " + std::to_string(theta.size()));
  }
}

Statevector Circuit::run(std::span<const double> inputs, std::span<const double> theta) const {
  check_sizes(inputs, theta);
  Statevector state(n_);
  for (const auto& g : gates_) apply_gate(state, g.kind, g.wire, angle_of(g, inputs, theta), g.target);
  return state;
}

std::vector<double> Circuit::expectations(std::span<const double> inputs, std::span<const double> theta) const {
  const Statevector state = run(inputs, theta);
  std::vector<double> out;
  for (auto w : measured_) out.push_back(state.expectation_z(w));
  return out;
}

CircuitGradient Circuit::param_shift(std::span<const double> inputs, std::span<const double> theta,
                                     std::span<const double> cotangent) const {
  check_sizes(inputs, theta);
  if (cotangent.size() != measured_.size()) throw QuantumError("cotangent length does not match measured wires");
  CircuitGradient grad{std::vector<double>(n_inputs_, 0.0), std::vector<double>(n_theta_, 0.0)};

  std::vector<double> angles(gates_.size());
  for (std::size_t g = 0; g < gates_.size(); ++g) angles[g] = angle_of(gates_[g], inputs, theta);

  // prefix[g] is the state just before gate g.
  std::vector<Statevector> prefix;
  prefix.reserve(gates_.size());
  Statevector state(n_);
  for (std::size_t g = 0; g < gates_.size(); ++g) {
    prefix.push_back(state);
    apply_gate(state, gates_[g].kind, gates_[g].wire, angles[g], gates_[g].target);
  }

  auto contracted = [&](const Statevector& s) {
    double v = 0.0;
    for (std::size_t k = 0; k < measured_.size(); ++k) v += cotangent[k] * s.expectation_z(measured_[k]);
    return v;
  };

  for (std::size_t g = 0; g < gates_.size(); ++g) {
    const Gate& gate = gates_[g];
    if (gate.source != AngleSource::Input && gate.source != AngleSource::Theta) continue;
    if (!is_pauli_rotation(gate.kind)) {
      throw UnsupportedGateError("parameter shift needs Pauli rotations; gate " + std::to_string(g) +
                                 " is a controlled rotation");
    }
    double f[2];
    for (int sgn = 0; sgn < 2; ++sgn) {
      std::vector<double> shifted = angles;
      shifted[g] += sgn == 0 ? kHalfPi : -kHalfPi;
      Statevector s = prefix[g];
      run_gates(gates_, g, s, shifted);
      f[sgn] = contracted(s);
    }
    const double d = 0.5 * (f[0] - f[1]);
    if (gate.source == AngleSource::Input) {
      grad.d_inputs[gate.index] += d;
    } else {
      grad.d_theta[gate.index] += d;
    }
  }
  return grad;
}

void CircuitSpec::validate() const {
  if (n_qubits < 1) throw QuantumError("circuit needs n_qubits >= 1");
  if (n_layers < 1) throw QuantumError("circuit needs n_layers >= 1");
}

Circuit qnn_circuit(const CircuitSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_qubits;
  Circuit c(n, n, spec.theta_size());
  for (std::size_t i = 0; i < n; ++i) {
    c.add({GateKind::RX, i, 0, AngleSource::Input, i});
    c.add({GateKind::RZ, i, 0, AngleSource::Input, i});
  }
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    for (std::size_t i = 0; i < n; ++i) c.add({GateKind::RY, i, 0, AngleSource::Theta, l * n + i});
    for (std::size_t i = 0; i + 1 < n; ++i) c.add({GateKind::CNOT, i, i + 1});
  }
  return c;
}

std::vector<double> qnn_forward(const CircuitSpec& spec, std::span<const double> x_proj,
                                std::span<const double> theta) {
  if (x_proj.size() != spec.n_qubits) {
    throw QuantumError("qnn_forward: expected " + std::to_string(spec.n_qubits) + " angles, got " +
                       std::to_string(x_proj.size()));
  }
  return qnn_circuit(spec).expectations(x_proj, theta);
}

CircuitGradient param_shift_grad(const CircuitSpec& spec, std::span<const double> x_proj,
                                 std::span<const double> theta, std::span<const double> cotangent) {
  if (x_proj.size() != spec.n_qubits) throw QuantumError("param_shift_grad: angle count mismatch");
  return qnn_circuit(spec).param_shift(x_proj, theta, cotangent);
}

namespace {

void add_attention_layers(Circuit& c, const CircuitSpec& spec, std::size_t m) {
  const std::size_t n = spec.n_qubits;
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    for (std::size_t a = 0; a < m; ++a) c.add({GateKind::CNOT, a, m + a});
    for (std::size_t w = 0; w < n; ++w) c.add({GateKind::RY, w, 0, AngleSource::Theta, l * n + w});
    for (std::size_t a = 0; a < m; ++a) c.add({GateKind::CNOT, m + a, a});
  }
}

void check_attention_dims(const CircuitSpec& spec, std::size_t m) {
  spec.validate();
  if (m == 0 || 2 * m > spec.n_qubits) {
    throw QuantumError("attention circuit needs 1 <= m and 2m <= n_qubits (m=" + std::to_string(m) +
                       ", n_qubits=" + std::to_string(spec.n_qubits) + ")");
  }
}

}  // namespace

Circuit attention_circuit(const CircuitSpec& spec, std::size_t m) {
  check_attention_dims(spec, m);
  Circuit c(spec.n_qubits, 2 * m, spec.theta_size());
  for (std::size_t a = 0; a < 2 * m; ++a) {
    c.add({GateKind::RX, a, 0, AngleSource::Input, a});
    c.add({GateKind::RZ, a, 0, AngleSource::Input, a});
  }
  add_attention_layers(c, spec, m);
  c.set_measured({0});
  return c;
}

double quantum_attention_score(const CircuitSpec& spec, std::span<const double> q_angles,
                               std::span<const double> k_angles, std::span<const double> theta) {
  if (q_angles.size() != k_angles.size()) throw QuantumError("query and key angle counts differ");
  const std::size_t m = q_angles.size();
  std::vector<double> in(q_angles.begin(), q_angles.end());
  in.insert(in.end(), k_angles.begin(), k_angles.end());
  const Circuit c = attention_circuit(spec, m);
  return 0.5 * (1.0 + c.expectations(in, theta)[0]);
}

AttentionKernel::AttentionKernel(const CircuitSpec& spec, std::size_t m)
    : spec_(spec), m_(m), entangler_(spec.n_qubits, 0, spec.theta_size()) {
  check_attention_dims(spec, m);
  add_attention_layers(entangler_, spec, m);
}

std::vector<cplx> AttentionKernel::observable(std::span<const double> theta) const {
  const std::size_t n = spec_.n_qubits;
  const std::size_t d = std::size_t{1} << (2 * m_);
  const std::size_t pad = n - 2 * m_;
  std::vector<double> angles(entangler_.gates().size());
  for (std::size_t g = 0; g < angles.size(); ++g) {
    const Gate& gate = entangler_.gates()[g];
    angles[g] = gate.source == AngleSource::Theta ? theta[gate.index] : 0.0;
  }
  // Columns U e_s for embedded-subspace basis states s.
  std::vector<Statevector> cols;
  cols.reserve(d);
  for (std::size_t s = 0; s < d; ++s) {
    Statevector st(n);
    auto a = st.amplitudes();
    a[0] = 0.0;
    a[s << pad] = 1.0;
    run_gates(entangler_.gates(), 0, st, angles);
    cols.push_back(std::move(st));
  }
  const std::size_t dim = std::size_t{1} << n;
  std::vector<double> z(dim);
  for (std::size_t x = 0; x < dim; ++x) z[x] = (x >> (n - 1)) & 1U ? -1.0 : 1.0;
  std::vector<cplx> mobs(d * d);
  for (std::size_t r = 0; r < d; ++r) {
    const auto ur = cols[r].amplitudes();
    for (std::size_t c = r; c < d; ++c) {
      const auto uc = cols[c].amplitudes();
      cplx acc = 0.0;
      for (std::size_t x = 0; x < dim; ++x) acc += std::conj(ur[x]) * z[x] * uc[x];
      mobs[r * d + c] = acc;
      mobs[c * d + r] = std::conj(acc);
    }
  }
  return mobs;
}

ad::Tensor AttentionKernel::forward(const ad::Tensor& q, const ad::Tensor& k, std::span<const double> theta) const {
  if (q.rank() != 3 || q.shape() != k.shape() || q.dim(2) != m_) {
    throw QuantumError("attention kernel expects q and k of shape [B, L, " + std::to_string(m_) + "], got " +
                       ad::shape_str(q.shape()) + " and " + ad::shape_str(k.shape()));
  }
  if (theta.size() != spec_.theta_size()) throw QuantumError("attention kernel theta size mismatch");
  const std::size_t batch = q.dim(0), len = q.dim(1), dq = std::size_t{1} << m_, d = dq * dq;
  const std::vector<cplx> mobs = observable(theta);
  ad::Tensor out({batch, len, len});
  std::vector<std::vector<cplx>> phk(len);
  std::vector<cplx> ni(dq * dq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < len; ++j) {
      std::span<const double> kj(k.data().data() + (b * len + j) * m_, m_);
      phk[j] = register_state(kj, kj);
    }
    for (std::size_t i = 0; i < len; ++i) {
      std::span<const double> qi(q.data().data() + (b * len + i) * m_, m_);
      const auto phq = register_state(qi, qi);
      // N_i[c, c'] = sum_{a, a'} conj(phq_a) M[(a,c), (a',c')] phq_a'
      std::fill(ni.begin(), ni.end(), cplx(0.0));
      for (std::size_t a = 0; a < dq; ++a) {
        const cplx ca = std::conj(phq[a]);
        for (std::size_t ap = 0; ap < dq; ++ap) {
          const cplx w = ca * phq[ap];
          for (std::size_t c = 0; c < dq; ++c) {
            const cplx* row = &mobs[(a * dq + c) * d + ap * dq];
            for (std::size_t cp = 0; cp < dq; ++cp) ni[c * dq + cp] += w * row[cp];
          }
        }
      }
      for (std::size_t j = 0; j < len; ++j) {
        out[(b * len + i) * len + j] = 0.5 * (1.0 + quadratic_form(ni, phk[j]));
      }
    }
  }
  return out;
}

AttentionKernel::Grads AttentionKernel::vjp(const ad::Tensor& q, const ad::Tensor& k, std::span<const double> theta,
                                            const ad::Tensor& grad_scores) const {
  const std::size_t batch = q.dim(0), len = q.dim(1), dq = std::size_t{1} << m_, d = dq * dq;
  if (grad_scores.shape() != ad::Shape{batch, len, len}) throw QuantumError("attention cotangent shape mismatch");
  const std::vector<cplx> mobs = observable(theta);
  Grads g{ad::Tensor(q.shape()), ad::Tensor(k.shape()), std::vector<double>(theta.size(), 0.0)};
  std::vector<cplx> rho(d * d, cplx(0.0));  // sum of h * psi psi^H over every pair

  std::vector<std::vector<cplx>> phq(len), phk(len);
  std::vector<cplx> kh(dq * dq), jh(dq * dq), form(dq * dq);

  // Shifted-occurrence derivative of Re(phi^H A phi) for register angles x.
  auto shift_grad = [&](std::span<const double> x, const std::vector<cplx>& a, double* dst) {
    std::vector<double> ax(x.begin(), x.end()), az(x.begin(), x.end());
    for (std::size_t w = 0; w < m_; ++w) {
      for (int occ = 0; occ < 2; ++occ) {
        std::vector<double>& v = occ == 0 ? ax : az;
        const double keep = v[w];
        v[w] = keep + kHalfPi;
        const double fp = quadratic_form(a, register_state(ax, az));
        v[w] = keep - kHalfPi;
        const double fm = quadratic_form(a, register_state(ax, az));
        v[w] = keep;
        dst[w] += 0.5 * (fp - fm);
      }
    }
  };

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      std::span<const double> qt(q.data().data() + (b * len + t) * m_, m_);
      std::span<const double> kt(k.data().data() + (b * len + t) * m_, m_);
      phq[t] = register_state(qt, qt);
      phk[t] = register_state(kt, kt);
    }
    auto h = [&](std::size_t i, std::size_t j) { return 0.5 * grad_scores[(b * len + i) * len + j]; };

    for (std::size_t i = 0; i < len; ++i) {
      // kh[c, c'] = sum_j h_ij phk_j[c] conj(phk_j[c'])
      std::fill(kh.begin(), kh.end(), cplx(0.0));
      for (std::size_t j = 0; j < len; ++j) {
        const double hij = h(i, j);
        for (std::size_t c = 0; c < dq; ++c) {
          for (std::size_t cp = 0; cp < dq; ++cp) kh[c * dq + cp] += hij * phk[j][c] * std::conj(phk[j][cp]);
        }
      }
      // rho += (phq phq^H) (x) kh
      for (std::size_t a = 0; a < dq; ++a) {
        for (std::size_t ap = 0; ap < dq; ++ap) {
          const cplx w = phq[i][a] * std::conj(phq[i][ap]);
          for (std::size_t c = 0; c < dq; ++c) {
            for (std::size_t cp = 0; cp < dq; ++cp) rho[(a * dq + c) * d + ap * dq + cp] += w * kh[c * dq + cp];
          }
        }
      }
      // Q_i[a, a'] = sum_{c, c'} M[(a,c), (a',c')] kh[c', c]
      std::fill(form.begin(), form.end(), cplx(0.0));
      for (std::size_t a = 0; a < dq; ++a) {
        for (std::size_t ap = 0; ap < dq; ++ap) {
          cplx acc = 0.0;
          for (std::size_t c = 0; c < dq; ++c) {
            for (std::size_t cp = 0; cp < dq; ++cp) acc += mobs[(a * dq + c) * d + ap * dq + cp] * kh[cp * dq + c];
          }
          form[a * dq + ap] = acc;
        }
      }
      std::span<const double> qi(q.data().data() + (b * len + i) * m_, m_);
      shift_grad(qi, form, g.d_q.data().data() + (b * len + i) * m_);
    }

    for (std::size_t j = 0; j < len; ++j) {
      // jh[a', a] = sum_i h_ij phq_i[a'] conj(phq_i[a])
      std::fill(jh.begin(), jh.end(), cplx(0.0));
      for (std::size_t i = 0; i < len; ++i) {
        const double hij = h(i, j);
        for (std::size_t ap = 0; ap < dq; ++ap) {
          for (std::size_t a = 0; a < dq; ++a) jh[ap * dq + a] += hij * phq[i][ap] * std::conj(phq[i][a]);
        }
      }
      // P_j[c, c'] = sum_{a, a'} M[(a,c), (a',c')] jh[a', a]
      std::fill(form.begin(), form.end(), cplx(0.0));
      for (std::size_t c = 0; c < dq; ++c) {
        for (std::size_t cp = 0; cp < dq; ++cp) {
          cplx acc = 0.0;
          for (std::size_t a = 0; a < dq; ++a) {
            for (std::size_t ap = 0; ap < dq; ++ap) acc += mobs[(a * dq + c) * d + ap * dq + cp] * jh[ap * dq + a];
          }
          form[c * dq + cp] = acc;
        }
      }
      std::span<const double> kj(k.data().data() + (b * len + j) * m_, m_);
      shift_grad(kj, form, g.d_k.data().data() + (b * len + j) * m_);
    }
  }

  // Re tr(M rho) under each shifted entangling rotation.
  auto trace_with = [&](const std::vector<cplx>& mm) {
    cplx acc = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) acc += mm[r * d + c] * rho[c * d + r];
    }
    return acc.real();
  };
  std::vector<double> th(theta.begin(), theta.end());
  for (const Gate& gate : entangler_.gates()) {
    if (gate.source != AngleSource::Theta) continue;
    const double keep = th[gate.index];
    th[gate.index] = keep + kHalfPi;
    const double fp = trace_with(observable(th));
    th[gate.index] = keep - kHalfPi;
    const double fm = trace_with(observable(th));
    th[gate.index] = keep;
    g.d_theta[gate.index] += 0.5 * (fp - fm);
  }
  return g;
}

ad::Var qnn_node(const CircuitSpec& spec, const ad::Var& x_proj, const ad::Var& theta) {
  const std::size_t n = spec.n_qubits;
  if (x_proj.shape().size() != 2 || x_proj.shape()[1] != n) {
    throw ad::ShapeError("qnn_node: expected angles of shape [B, " + std::to_string(n) + "], got " +
                         ad::shape_str(x_proj.shape()));
  }
  if (theta.value().size() != spec.theta_size()) {
    throw ad::ShapeError("qnn_node: theta has shape " + ad::shape_str(theta.shape()) + ", circuit needs " +
                         std::to_string(spec.theta_size()) + " values");
  }
  auto circuit = std::make_shared<Circuit>(qnn_circuit(spec));
  const ad::Var in[2] = {x_proj, theta};
  auto fwd = [circuit, n](std::span<const ad::Tensor* const> v) {
    const ad::Tensor& x = *v[0];
    const std::size_t batch = x.dim(0);
    ad::Tensor out({batch, n});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto z = circuit->expectations(x.data().subspan(b * n, n), v[1]->data());
      std::copy(z.begin(), z.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    return out;
  };
  auto vjp = [circuit, n](std::span<const ad::Tensor* const> v, const ad::Tensor&, const ad::Tensor& g) {
    const ad::Tensor& x = *v[0];
    const std::size_t batch = x.dim(0);
    ad::Tensor dx(x.shape()), dth(v[1]->shape());
    for (std::size_t b = 0; b < batch; ++b) {
      const auto grad = circuit->param_shift(x.data().subspan(b * n, n), v[1]->data(), g.data().subspan(b * n, n));
      for (std::size_t i = 0; i < n; ++i) dx[b * n + i] = grad.d_inputs[i];
      for (std::size_t p = 0; p < dth.size(); ++p) dth[p] += grad.d_theta[p];
    }
    return std::vector<ad::Tensor>{std::move(dx), std::move(dth)};
  };
  return x_proj.tape()->custom(in, fwd, vjp);
}

ad::Var attention_node(const AttentionKernel& kernel, const ad::Var& q, const ad::Var& k, const ad::Var& theta) {
  auto kern = std::make_shared<AttentionKernel>(kernel);
  const ad::Var in[3] = {q, k, theta};
  auto fwd = [kern](std::span<const ad::Tensor* const> v) { return kern->forward(*v[0], *v[1], v[2]->data()); };
  auto vjp = [kern](std::span<const ad::Tensor* const> v, const ad::Tensor&, const ad::Tensor& g) {
    auto grads = kern->vjp(*v[0], *v[1], v[2]->data(), g);
    ad::Tensor dth(v[2]->shape(), std::move(grads.d_theta));
    return std::vector<ad::Tensor>{std::move(grads.d_q), std::move(grads.d_k), std::move(dth)};
  };
  return q.tape()->custom(in, fwd, vjp);
}

}  // namespace qsector::qsim
