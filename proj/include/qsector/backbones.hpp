#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "qsector/ops.hpp"
#include "qsector/qsim.hpp"
#include "qsector/tape.hpp"

namespace qsector {

enum class BackboneKind { Mlp, Lstm, Transformer, Qnn, Qrwkv, Qasa };

BackboneKind parse_backbone_kind(const std::string& name);
std::string backbone_kind_name(BackboneKind kind);
// Backbones of the standard comparison run; MLP is left out.
const std::vector<BackboneKind>& comparison_backbones();

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Mlp;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t n_qubits = 4;
  std::size_t q_layers = 2;

  // Defaults for a kind; qrwkv stacks four blocks.
  static BackboneConfig defaults(BackboneKind kind);
  void validate() const;
  qsim::CircuitSpec circuit() const { return {n_qubits, q_layers, qsim::Entangler::LinearChain}; }
};

struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

namespace nn {

// y = x W (+ b). W: [in, out], Xavier-uniform; b: zeros.
struct Linear {
  ad::Parameter* weight = nullptr;
  ad::Parameter* bias = nullptr;

  Linear() = default;
  Linear(ad::ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool with_bias = true);
  ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
};

// Layer norm with learned gain (ones) and shift (zeros).
struct LayerNorm {
  ad::Parameter* gain = nullptr;
  ad::Parameter* shift = nullptr;

  LayerNorm() = default;
  LayerNorm(ad::ParameterSet& params, const std::string& name, std::size_t dim);
  ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
};

ad::Tensor xavier_uniform(std::size_t in, std::size_t out, std::mt19937_64& rng);
// Fixed sinusoidal table [L, dim].
ad::Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

// softmax(q k^T / sqrt(d_k)) v for q, k, v: [B, L, d_k]. When `weights` is
// non-null it receives the [B, L, L] attention matrix.
ad::Var scaled_dot_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, ad::Var* weights = nullptr);

// Quantum-scored attention: row-normalized circuit scores over (q_i, k_j)
// angle pairs, applied to v. q_angles, k_angles: [B, L, m]; v: [B, L, d_v].
ad::Var quantum_attention(const qsim::AttentionKernel& kernel, const ad::Var& q_angles, const ad::Var& k_angles,
                          const ad::Var& theta, const ad::Var& v, ad::Var* weights = nullptr);

// pi * tanh(x): keeps embedding angles inside (-pi, pi).
ad::Var squash_angles(const ad::Var& x);

// x / y elementwise, y broadcast as in ops.
ad::Var divide(const ad::Var& x, const ad::Var& y);

}  // namespace nn

/// Maps an observation batch [B, L, d] to a representation [B, hidden].
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual ad::Var forward(ad::Tape& tape, const ad::Var& x, const ForwardMode& mode) const = 0;
  const BackboneConfig& config() const { return config_; }
  std::size_t out_dim() const { return config_.hidden; }

 protected:
  explicit Backbone(BackboneConfig config) : config_(std::move(config)) {}
  ad::Var drop(const ad::Var& x, const ForwardMode& mode) const;

  BackboneConfig config_;
};

// Registers the backbone's parameters in `params` under `prefix` and draws
// their initial values from `rng`.
std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, std::size_t input_dim, std::size_t seq_len,
                                        ad::ParameterSet& params, const std::string& prefix, std::mt19937_64& rng);

enum class HeadKind { Actor, Critic };

/// Backbone plus a linear head: n_targets logits for the actor, one value for
/// the critic. Actor and critic are separate Network instances.
class Network {
 public:
  Network(HeadKind head, const BackboneConfig& config, std::size_t input_dim, std::size_t seq_len,
          std::size_t n_out, std::uint64_t seed);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  // [B, L, d] -> [B, n_out]
  ad::Var forward(ad::Tape& tape, const ad::Var& x, const ForwardMode& mode) const;

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const BackboneConfig& config() const { return config_; }
  HeadKind head_kind() const { return head_kind_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t n_out() const { return n_out_; }

 private:
  ad::ParameterSet params_;
  BackboneConfig config_;
  HeadKind head_kind_;
  std::size_t input_dim_, seq_len_, n_out_;
  std::unique_ptr<Backbone> body_;
  nn::Linear head_;
};

}  // namespace qsector
