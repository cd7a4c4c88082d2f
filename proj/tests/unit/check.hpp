#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "qsector/ops.hpp"
#include "qsector/tape.hpp"

namespace qtest {

using qsector::ad::Parameter;
using qsector::ad::ParameterSet;
using qsector::ad::Tape;
using qsector::ad::Tensor;
using qsector::ad::Var;

inline Tensor random_tensor(qsector::ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& x : t.storage()) x = u(rng);
  return t;
}

using LossFn = std::function<Var(Tape&)>;

inline double eval_loss(const LossFn& loss) {
  Tape tape;
  return loss(tape).value().item();
}

// Analytic gradients of `loss` w.r.t. every parameter, accumulated fresh.
inline void analytic_grads(std::vector<Parameter*> params, const LossFn& loss) {
  for (auto* p : params) p->zero_grad();
  Tape tape;
  tape.backward(loss(tape));
}

struct GradReport {
  double worst = 0.0;  // max |a - n| / max(|a|, |n|, floor)
  std::size_t checked = 0;
};

// Central differences on `coords` random scalar coordinates plus one random
// direction through all parameters.
inline GradReport finite_difference_check(std::vector<Parameter*> params, const LossFn& loss, std::mt19937_64& rng,
                                          std::size_t coords = 12, double h = 1e-5, double floor = 1e-3) {
  analytic_grads(params, loss);
  GradReport rep;
  auto note = [&](double a, double n) {
    rep.worst = std::max(rep.worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    ++rep.checked;
  };
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (std::size_t c = 0; c < coords; ++c) {
    std::size_t k = pick(rng);
    Parameter* p = nullptr;
    for (auto* q : params) {
      if (k < q->value.size()) {
        p = q;
        break;
      }
      k -= q->value.size();
    }
    const double orig = p->value[k];
    p->value[k] = orig + h;
    const double fp = eval_loss(loss);
    p->value[k] = orig - h;
    const double fm = eval_loss(loss);
    p->value[k] = orig;
    note(p->grad[k], (fp - fm) / (2.0 * h));
  }
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> dir;
  double analytic = 0.0, norm = 0.0;
  for (auto* p : params) {
    dir.emplace_back(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      dir.back()[i] = g(rng);
      norm += dir.back()[i] * dir.back()[i];
    }
  }
  norm = std::sqrt(norm);
  auto shift = [&](double s) {
    for (std::size_t j = 0; j < params.size(); ++j) {
      for (std::size_t i = 0; i < params[j]->value.size(); ++i) params[j]->value[i] += s * dir[j][i] / norm;
    }
  };
  for (std::size_t j = 0; j < params.size(); ++j) {
    for (std::size_t i = 0; i < params[j]->value.size(); ++i) analytic += params[j]->grad[i] * dir[j][i] / norm;
  }
  shift(h);
  const double fp = eval_loss(loss);
  shift(-2.0 * h);
  const double fm = eval_loss(loss);
  shift(h);
  note(analytic, (fp - fm) / (2.0 * h));
  return rep;
}

}  // namespace qtest
