#pragma once

#include <algorithm>
#include <cmath>

#include "cantrack/aggregation.hpp"

namespace gradcheck {

namespace nn = cantrack::nn;

// Some biases provably have zero gradient: train-mode batch norm subtracts the
// batch mean, cancelling the bias of every layer that feeds it, and a softmax
// over EvalNet logits is invariant to the shared output bias. Central
// differences on those entries only measure rounding noise, which the
// relative error cannot tell apart from a real mismatch, so they are split
// off and checked for zero slope instead. The same cancellation hits
// first-layer weights of an input column that is constant over the batch, so
// callers should feed batches where every column varies.
struct Split {
  nn::TensorList params, grads;
  nn::TensorList zero, zero_grads;
};

inline void add_mlp(Split& s, nn::MlpParams& p, nn::MlpGradients& g, bool train, bool softmax_output) {
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    auto& l = p.layers[li];
    auto& gl = g.layers[li];
    s.params.push_back(nn::flat(l.weight));
    s.grads.push_back(nn::flat(gl.weight));
    const bool cancelled = l.has_batch_norm() ? train : softmax_output;
    if (cancelled) {
      s.zero.push_back(nn::flat(l.bias));
      s.zero_grads.push_back(nn::flat(gl.bias));
    } else {
      s.params.push_back(nn::flat(l.bias));
      s.grads.push_back(nn::flat(gl.bias));
    }
    if (l.has_batch_norm()) {
      s.params.push_back(nn::flat(l.bn_gamma));
      s.grads.push_back(nn::flat(gl.bn_gamma));
      s.params.push_back(nn::flat(l.bn_beta));
      s.grads.push_back(nn::flat(gl.bn_beta));
    }
  }
}

// A bare MLP whose loss reads the logits directly.
inline Split split(nn::MlpParams& p, nn::MlpGradients& g, bool train) {
  Split s;
  add_mlp(s, p, g, train, false);
  return s;
}

inline Split split(cantrack::CanModel& m, cantrack::CanGradients& g, bool train) {
  Split s;
  add_mlp(s, m.evalnet, g.evalnet, train, true);
  s.params.push_back(nn::flat(m.head.weight));
  s.grads.push_back(nn::flat(g.head_weight));
  s.params.push_back(nn::flat(m.head.bias));
  s.grads.push_back(nn::flat(g.head_bias));
  return s;
}

struct ZeroSlope {
  double max_analytic = 0.0;
  double max_numeric = 0.0;
};

template <class LossFn>
ZeroSlope zero_slope(const Split& s, LossFn&& loss, double step) {
  ZeroSlope z;
  for (std::size_t t = 0; t < s.zero.size(); ++t) {
    for (std::size_t k = 0; k < s.zero[t].size(); ++k) {
      z.max_analytic = std::max(z.max_analytic, std::abs(s.zero_grads[t][k]));
      double& b = s.zero[t][k];
      const double saved = b;
      b = saved + step;
      const double up = loss();
      b = saved - step;
      const double down = loss();
      b = saved;
      z.max_numeric = std::max(z.max_numeric, std::abs(up - down) / (2.0 * step));
    }
  }
  return z;
}

}  // namespace gradcheck
