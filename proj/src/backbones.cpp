#include "qsector/backbones.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qsector {

using ad::Parameter;
using ad::ParameterSet;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "mlp") return BackboneKind::Mlp;
  if (name == "lstm") return BackboneKind::Lstm;
  if (name == "transformer") return BackboneKind::Transformer;
  if (name == "qnn") return BackboneKind::Qnn;
  if (name == "qrwkv") return BackboneKind::Qrwkv;
  if (name == "qasa") return BackboneKind::Qasa;
  throw std::invalid_argument("unknown backbone '" + name + "' (expected mlp, lstm, transformer, qnn, qrwkv or qasa)");
}

std::string backbone_kind_name(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::Mlp: return "mlp";
    case BackboneKind::Lstm: return "lstm";
    case BackboneKind::Transformer: return "transformer";
    case BackboneKind::Qnn: return "qnn";
    case BackboneKind::Qrwkv: return "qrwkv";
    case BackboneKind::Qasa: return "qasa";
  }
  return "?";
}

const std::vector<BackboneKind>& comparison_backbones() {
  static const std::vector<BackboneKind> kinds{BackboneKind::Lstm, BackboneKind::Transformer, BackboneKind::Qnn,
                                               BackboneKind::Qasa, BackboneKind::Qrwkv};
  return kinds;
}

BackboneConfig BackboneConfig::defaults(BackboneKind kind) {
  BackboneConfig c;
  c.kind = kind;
  if (kind == BackboneKind::Qrwkv) c.layers = 4;
  return c;
}

void BackboneConfig::validate() const {
  if (hidden == 0 || layers == 0 || heads == 0) throw std::invalid_argument("backbone dimensions must be positive");
  if (hidden % heads != 0) {
    throw std::invalid_argument("heads (" + std::to_string(heads) + ") must divide hidden (" + std::to_string(hidden) +
                                ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  circuit().validate();
  if (kind == BackboneKind::Qasa && n_qubits % 2 != 0) {
    throw std::invalid_argument("qasa needs an even qubit count to split query and key wires");
  }
}

namespace nn {

Tensor xavier_uniform(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t({in, out});
  for (auto& x : t.storage()) x = u(rng);
  return t;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor t({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double a = static_cast<double>(pos) * freq;
      t.at(pos, i) = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return t;
}

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
               bool with_bias) {
  weight = &params.add(name + ".W", xavier_uniform(in, out, rng));
  if (with_bias) bias = &params.add(name + ".b", Tensor({out}, 0.0));
}

Var Linear::operator()(Tape& tape, const Var& x) const {
  Var y = ad::matmul(x, tape.parameter(*weight));
  return bias != nullptr ? ad::add(y, tape.parameter(*bias)) : y;
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, std::size_t dim) {
  gain = &params.add(name + ".g", Tensor({dim}, 1.0));
  shift = &params.add(name + ".s", Tensor({dim}, 0.0));
}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return ad::add(ad::mul(ad::layer_norm(x), tape.parameter(*gain)), tape.parameter(*shift));
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, Var* weights) {
  const double dk = static_cast<double>(q.shape().back());
  Var scores = ad::scale(ad::bmm(q, ad::transpose_last(k)), 1.0 / std::sqrt(dk));
  Var w = ad::softmax(scores);
  if (weights != nullptr) *weights = w;
  return ad::bmm(w, v);
}

Var quantum_attention(const qsim::AttentionKernel& kernel, const Var& q_angles, const Var& k_angles,
                      const Var& theta, const Var& v, Var* weights) {
  Var scores = qsim::attention_node(kernel, q_angles, k_angles, theta);
  Var w = ad::normalize_sum(scores);
  if (weights != nullptr) *weights = w;
  return ad::bmm(w, v);
}

Var squash_angles(const Var& x) { return ad::scale(ad::tanh(x), std::numbers::pi); }

Var divide(const Var& x, const Var& y) { return ad::mul(x, ad::reciprocal(y)); }

}  // namespace nn

Var Backbone::drop(const Var& x, const ForwardMode& mode) const {
  if (!mode.training || config_.dropout == 0.0) return x;
  if (mode.rng == nullptr) throw std::invalid_argument("training forward with dropout needs a generator");
  return ad::dropout(x, config_.dropout, true, *mode.rng);
}

namespace {

Tensor uniform_angles(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  Tensor t({n});
  for (auto& x : t.storage()) x = u(rng);
  return t;
}

void check_input(const Var& x, std::size_t seq_len, std::size_t input_dim) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != seq_len || s[2] != input_dim) {
    throw ad::ShapeError("backbone expects [B, " + std::to_string(seq_len) + ", " + std::to_string(input_dim) +
                         "], got " + ad::shape_str(s));
  }
}

// x_{t-1} at step t, zeros at t = 0.
Var token_shift(Tape& tape, const Var& x) {
  const std::size_t b = x.shape()[0], len = x.shape()[1], h = x.shape()[2];
  std::vector<Var> steps{tape.constant(Tensor({b, h}, 0.0))};
  for (std::size_t t = 0; t + 1 < len; ++t) steps.push_back(ad::select_step(x, t));
  return ad::stack_steps(steps);
}

// p + (a - p) * mix: per-channel interpolation between a step and its predecessor.
Var interpolate(Tape& tape, const Var& a, const Var& prev, Parameter* mix) {
  return ad::add(prev, ad::mul(ad::sub(a, prev), tape.parameter(*mix)));
}

class Mlp final : public Backbone {
 public:
  Mlp(const BackboneConfig& c, std::size_t d, std::size_t len, ParameterSet& ps, const std::string& pre,
      std::mt19937_64& rng)
      : Backbone(c), d_(d), len_(len) {
    std::size_t in = d * len;
    for (std::size_t l = 0; l < c.layers; ++l) {
      layers_.emplace_back(ps, pre + ".fc" + std::to_string(l), in, c.hidden, rng);
      in = c.hidden;
    }
  }

  Var forward(Tape& tape, const Var& x, const ForwardMode& mode) const override {
    check_input(x, len_, d_);
    Var h = ad::reshape(x, {x.shape()[0], len_ * d_});
    for (const auto& layer : layers_) h = drop(ad::relu(layer(tape, h)), mode);
    return h;
  }

 private:
  std::size_t d_, len_;
  std::vector<nn::Linear> layers_;
};

class Lstm final : public Backbone {
 public:
  Lstm(const BackboneConfig& c, std::size_t d, std::size_t len, ParameterSet& ps, const std::string& pre,
       std::mt19937_64& rng)
      : Backbone(c), d_(d), len_(len) {
    const std::size_t h = c.hidden;
    std::size_t in = d;
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string name = pre + ".lstm" + std::to_string(l);
      Cell cell;
      cell.w = &ps.add(name + ".W", nn::xavier_uniform(in, 4 * h, rng));
      cell.u = &ps.add(name + ".U", nn::xavier_uniform(h, 4 * h, rng));
      Tensor b({4 * h}, 0.0);
      for (std::size_t i = 0; i < h; ++i) b[i] = 1.0;  // forget gate
      cell.b = &ps.add(name + ".b", std::move(b));
      cells_.push_back(cell);
      in = h;
    }
  }

  // Gate blocks along the 4H axis: forget, input, output, candidate.
  Var forward(Tape& tape, const Var& x, const ForwardMode& mode) const override {
    check_input(x, len_, d_);
    const std::size_t batch = x.shape()[0], h = config_.hidden;
    Var seq = x;
    Var h_t;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      const Cell& cell = cells_[l];
      Var xw = ad::add(ad::matmul(seq, tape.parameter(*cell.w)), tape.parameter(*cell.b));
      Var u = tape.parameter(*cell.u);
      h_t = tape.constant(Tensor({batch, h}, 0.0));
      Var c_t = tape.constant(Tensor({batch, h}, 0.0));
      std::vector<Var> outs;
      for (std::size_t t = 0; t < len_; ++t) {
        Var g = ad::add(ad::select_step(xw, t), ad::matmul(h_t, u));
        Var f = ad::sigmoid(ad::slice_last(g, 0, h));
        Var i = ad::sigmoid(ad::slice_last(g, h, 2 * h));
        Var o = ad::sigmoid(ad::slice_last(g, 2 * h, 3 * h));
        Var cand = ad::tanh(ad::slice_last(g, 3 * h, 4 * h));
        c_t = ad::add(ad::mul(f, c_t), ad::mul(i, cand));
        h_t = ad::mul(o, ad::tanh(c_t));
        outs.push_back(h_t);
      }
      if (l + 1 < cells_.size()) seq = drop(ad::stack_steps(outs), mode);
    }
    return drop(h_t, mode);
  }

 private:
  struct Cell {
    Parameter* w;
    Parameter* u;
    Parameter* b;
  };
  std::size_t d_, len_;
  std::vector<Cell> cells_;
};

// Post-norm encoder; `quantum` swaps each head's score function for the
// attention circuit.
class Encoder final : public Backbone {
 public:
  Encoder(const BackboneConfig& c, std::size_t d, std::size_t len, ParameterSet& ps, const std::string& pre,
          std::mt19937_64& rng, bool quantum)
      : Backbone(c),
        d_(d),
        len_(len),
        quantum_(quantum),
        kernel_(c.circuit(), c.n_qubits / 2),
        positions_(nn::sinusoidal_positions(len, c.hidden)) {
    const std::size_t h = c.hidden;
    const std::size_t m = c.n_qubits / 2;
    input_ = nn::Linear(ps, pre + ".in", d, h, rng);
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string name = pre + ".enc" + std::to_string(l);
      Block b;
      const std::size_t qk_width = quantum ? c.heads * m : h;
      b.wq = nn::Linear(ps, name + ".q", h, qk_width, rng);
      b.wk = nn::Linear(ps, name + ".k", h, qk_width, rng);
      b.wv = nn::Linear(ps, name + ".v", h, h, rng);
      b.wo = nn::Linear(ps, name + ".o", h, h, rng);
      b.ln1 = nn::LayerNorm(ps, name + ".ln1", h);
      b.ff1 = nn::Linear(ps, name + ".ff1", h, 2 * h, rng);
      b.ff2 = nn::Linear(ps, name + ".ff2", 2 * h, h, rng);
      b.ln2 = nn::LayerNorm(ps, name + ".ln2", h);
      if (quantum) {
        for (std::size_t hd = 0; hd < c.heads; ++hd) {
          b.theta.push_back(
              &ps.add(name + ".theta" + std::to_string(hd), uniform_angles(c.circuit().theta_size(), rng)));
        }
      }
      blocks_.push_back(std::move(b));
    }
  }

  Var forward(Tape& tape, const Var& x, const ForwardMode& mode) const override {
    check_input(x, len_, d_);
    const std::size_t heads = config_.heads, dh = config_.hidden / heads, m = kernel_.m();
    Var h = ad::add(input_(tape, x), tape.constant(positions_));
    for (const auto& b : blocks_) {
      Var q = b.wq(tape, h), k = b.wk(tape, h), v = b.wv(tape, h);
      std::vector<Var> outs;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        Var vh = ad::slice_last(v, hd * dh, (hd + 1) * dh);
        if (quantum_) {
          Var qa = nn::squash_angles(ad::slice_last(q, hd * m, (hd + 1) * m));
          Var ka = nn::squash_angles(ad::slice_last(k, hd * m, (hd + 1) * m));
          outs.push_back(nn::quantum_attention(kernel_, qa, ka, tape.parameter(*b.theta[hd]), vh));
        } else {
          outs.push_back(nn::scaled_dot_attention(ad::slice_last(q, hd * dh, (hd + 1) * dh),
                                                  ad::slice_last(k, hd * dh, (hd + 1) * dh), vh));
        }
      }
      Var attn = b.wo(tape, ad::concat_last(outs));
      h = b.ln1(tape, ad::add(h, drop(attn, mode)));
      Var ff = b.ff2(tape, ad::relu(b.ff1(tape, h)));
      h = b.ln2(tape, ad::add(h, drop(ff, mode)));
    }
    return ad::select_step(h, len_ - 1);
  }

 private:
  struct Block {
    nn::Linear wq, wk, wv, wo, ff1, ff2;
    nn::LayerNorm ln1, ln2;
    std::vector<Parameter*> theta;
  };
  std::size_t d_, len_;
  bool quantum_;
  qsim::AttentionKernel kernel_;
  Tensor positions_;
  nn::Linear input_;
  std::vector<Block> blocks_;
};

class Qnn final : public Backbone {
 public:
  Qnn(const BackboneConfig& c, std::size_t d, std::size_t len, ParameterSet& ps, const std::string& pre,
      std::mt19937_64& rng)
      : Backbone(c), d_(d), len_(len), spec_(c.circuit()) {
    proj_ = nn::Linear(ps, pre + ".proj", d, c.n_qubits, rng, false);
    theta_ = &ps.add(pre + ".theta", uniform_angles(spec_.theta_size(), rng));
    head_ = nn::Linear(ps, pre + ".head", c.n_qubits, c.hidden, rng);
  }

  Var forward(Tape& tape, const Var& x, const ForwardMode& mode) const override {
    check_input(x, len_, d_);
    Var angles = nn::squash_angles(proj_(tape, ad::mean_steps(x)));
    Var z = qsim::qnn_node(spec_, angles, tape.parameter(*theta_));
    return drop(ad::tanh(head_(tape, z)), mode);
  }

 private:
  std::size_t d_, len_;
  qsim::CircuitSpec spec_;
  nn::Linear proj_, head_;
  Parameter* theta_ = nullptr;
};

// Receptance-weighted key-value recurrence with a quantum branch in the
// channel mix: h <- h + TimeMix(h); h <- h + ChannelMix(h) + QVC(h).
class Qrwkv final : public Backbone {
 public:
  Qrwkv(const BackboneConfig& c, std::size_t d, std::size_t len, ParameterSet& ps, const std::string& pre,
        std::mt19937_64& rng)
      : Backbone(c), d_(d), len_(len), spec_(c.circuit()) {
    const std::size_t h = c.hidden, group = h / c.heads;
    input_ = nn::Linear(ps, pre + ".in", d, h, rng);
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string name = pre + ".blk" + std::to_string(l);
      Block b;
      b.ln1 = nn::LayerNorm(ps, name + ".ln1", h);
      b.mix_k = &ps.add(name + ".mix_k", Tensor({h}, 0.5));
      b.mix_v = &ps.add(name + ".mix_v", Tensor({h}, 0.5));
      b.mix_r = &ps.add(name + ".mix_r", Tensor({h}, 0.5));
      Tensor decay({h});
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t j = i % group;
        decay[i] = group > 1 ? -5.0 + 4.0 * static_cast<double>(j) / static_cast<double>(group - 1) : -1.0;
      }
      b.decay = &ps.add(name + ".decay", std::move(decay));
      b.bonus = &ps.add(name + ".bonus", Tensor({h}, 0.0));
      b.wk = nn::Linear(ps, name + ".att_k", h, h, rng, false);
      b.wv = nn::Linear(ps, name + ".att_v", h, h, rng, false);
      b.wr = nn::Linear(ps, name + ".att_r", h, h, rng, false);
      b.wo = nn::Linear(ps, name + ".att_o", h, h, rng, false);
      b.ln2 = nn::LayerNorm(ps, name + ".ln2", h);
      b.cmix_k = &ps.add(name + ".cmix_k", Tensor({h}, 0.5));
      b.cmix_r = &ps.add(name + ".cmix_r", Tensor({h}, 0.5));
      b.ck = nn::Linear(ps, name + ".ffn_k", h, 2 * h, rng, false);
      b.cv = nn::Linear(ps, name + ".ffn_v", 2 * h, h, rng, false);
      b.cr = nn::Linear(ps, name + ".ffn_r", h, h, rng, false);
      b.qproj = nn::Linear(ps, name + ".q_proj", h, c.n_qubits, rng, false);
      b.qtheta = &ps.add(name + ".q_theta", uniform_angles(spec_.theta_size(), rng));
      b.qout = nn::Linear(ps, name + ".q_out", c.n_qubits, h, rng, false);
      blocks_.push_back(std::move(b));
    }
    ln_out_ = nn::LayerNorm(ps, pre + ".ln_out", h);
  }

  Var forward(Tape& tape, const Var& x, const ForwardMode& mode) const override {
    check_input(x, len_, d_);
    const std::size_t batch = x.shape()[0], h = config_.hidden;
    Var state = input_(tape, x);
    for (const auto& b : blocks_) {
      Var a = b.ln1(tape, state);
      Var prev = token_shift(tape, a);
      Var k = b.wk(tape, interpolate(tape, a, prev, b.mix_k));
      Var v = b.wv(tape, interpolate(tape, a, prev, b.mix_v));
      Var r = ad::sigmoid(b.wr(tape, interpolate(tape, a, prev, b.mix_r)));
      Var wkv = time_mix(tape, b, k, v, batch, h);
      state = ad::add(state, drop(b.wo(tape, ad::mul(r, wkv)), mode));

      Var c = b.ln2(tape, state);
      Var cprev = token_shift(tape, c);
      Var ck = ad::square(ad::relu(b.ck(tape, interpolate(tape, c, cprev, b.cmix_k))));
      Var cr = ad::sigmoid(b.cr(tape, interpolate(tape, c, cprev, b.cmix_r)));
      Var channel = ad::mul(cr, b.cv(tape, ck));
      Var flat = ad::reshape(c, {batch * len_, h});
      Var z = qsim::qnn_node(spec_, nn::squash_angles(b.qproj(tape, flat)), tape.parameter(*b.qtheta));
      Var quantum = ad::reshape(b.qout(tape, z), {batch, len_, h});
      state = ad::add(state, drop(ad::add(channel, quantum), mode));
    }
    return ln_out_(tape, ad::select_step(state, len_ - 1));
  }

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    Parameter *mix_k, *mix_v, *mix_r, *decay, *bonus, *cmix_k, *cmix_r, *qtheta;
    nn::Linear wk, wv, wr, wo, ck, cv, cr, qproj, qout;
  };

  // wkv_t = (a_{t-1} + e^{u+k_t} v_t) / (b_{t-1} + e^{u+k_t}),
  // a_t = e^{-w} a_{t-1} + e^{k_t} v_t, b_t = e^{-w} b_{t-1} + e^{k_t}, w = exp(decay).
  // Keys are shifted by a per-channel constant before exponentiation; the
  // shift cancels in the ratio and keeps every exponent <= 0.
  Var time_mix(Tape& tape, const Block& b, const Var& k, const Var& v, std::size_t batch, std::size_t h) const {
    const Tensor& kv = k.value();
    const Tensor& u = b.bonus->value;
    Tensor shift({batch, len_, h});
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t ch = 0; ch < h; ++ch) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < len_; ++t) {
          const double key = kv[(i * len_ + t) * h + ch];
          mx = std::max({mx, key, key + u[ch]});
        }
        for (std::size_t t = 0; t < len_; ++t) shift[(i * len_ + t) * h + ch] = mx;
      }
    }
    Var ek = ad::exp(ad::sub(k, tape.constant(std::move(shift))));
    Var eu = ad::exp(tape.parameter(*b.bonus));
    Var w = ad::exp(ad::neg(ad::exp(tape.parameter(*b.decay))));
    Var num = tape.constant(Tensor({batch, h}, 0.0));
    Var den = tape.constant(Tensor({batch, h}, 0.0));
    std::vector<Var> outs;
    for (std::size_t t = 0; t < len_; ++t) {
      Var ek_t = ad::select_step(ek, t);
      Var v_t = ad::select_step(v, t);
      Var cur = ad::mul(ek_t, eu);
      outs.push_back(nn::divide(ad::add(num, ad::mul(cur, v_t)), ad::add(den, cur)));
      if (t + 1 < len_) {
        num = ad::add(ad::mul(num, w), ad::mul(ek_t, v_t));
        den = ad::add(ad::mul(den, w), ek_t);
      }
    }
    return ad::stack_steps(outs);
  }

  std::size_t d_, len_;
  qsim::CircuitSpec spec_;
  nn::Linear input_;
  std::vector<Block> blocks_;
  nn::LayerNorm ln_out_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, std::size_t input_dim, std::size_t seq_len,
                                        ParameterSet& params, const std::string& prefix, std::mt19937_64& rng) {
  config.validate();
  if (input_dim == 0 || seq_len == 0) throw std::invalid_argument("backbone input must be non-empty");
  switch (config.kind) {
    case BackboneKind::Mlp: return std::make_unique<Mlp>(config, input_dim, seq_len, params, prefix, rng);
    case BackboneKind::Lstm: return std::make_unique<Lstm>(config, input_dim, seq_len, params, prefix, rng);
    case BackboneKind::Transformer:
      return std::make_unique<Encoder>(config, input_dim, seq_len, params, prefix, rng, false);
    case BackboneKind::Qasa: return std::make_unique<Encoder>(config, input_dim, seq_len, params, prefix, rng, true);
    case BackboneKind::Qnn: return std::make_unique<Qnn>(config, input_dim, seq_len, params, prefix, rng);
    case BackboneKind::Qrwkv: return std::make_unique<Qrwkv>(config, input_dim, seq_len, params, prefix, rng);
  }
  throw std::invalid_argument("unhandled backbone kind");
}

Network::Network(HeadKind head, const BackboneConfig& config, std::size_t input_dim, std::size_t seq_len,
                 std::size_t n_out, std::uint64_t seed)
    : config_(config), head_kind_(head), input_dim_(input_dim), seq_len_(seq_len), n_out_(n_out) {
  std::mt19937_64 rng(seed);
  body_ = make_backbone(config, input_dim, seq_len, params_, "body", rng);
  head_ = nn::Linear(params_, "head", config.hidden, n_out, rng);
}

Var Network::forward(Tape& tape, const Var& x, const ForwardMode& mode) const {
  return head_(tape, body_->forward(tape, x, mode));
}

}  // namespace qsector
