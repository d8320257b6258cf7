#pragma once

#include <cmath>
#include <vector>

#include "mfield/ad/ops.hpp"
#include "mfield/ad/rng.hpp"

namespace mfield {

/// NeRF-style frequency encoding of each input column:
/// [x, sin(2^0 x), cos(2^0 x), ..., sin(2^(F-1) x), cos(2^(F-1) x)].
struct PositionalEncoding {
  std::size_t num_frequencies = 6;
  bool include_input = true;

  std::size_t output_width(std::size_t input_width) const {
    return input_width * ((include_input ? 1 : 0) + 2 * num_frequencies);
  }

  template <class Real>
  ad::Tensor<Real> operator()(const ad::Tensor<Real>& x) const {
    std::vector<ad::Tensor<Real>> parts;
    if (include_input) parts.push_back(x);
    for (std::size_t k = 0; k < num_frequencies; ++k) {
      const auto scaled = x * static_cast<Real>(std::ldexp(1.0, static_cast<int>(k)));
      parts.push_back(ad::sin(scaled));
      parts.push_back(ad::cos(scaled));
    }
    return ad::concat_cols(parts);
  }
};

/// Fully connected network with ReLU hidden activations and a linear head.
template <class Real>
struct Mlp {
  std::vector<ad::Tensor<Real>> weights;  // [in, out]
  std::vector<ad::Tensor<Real>> biases;   // [1, out]

  Mlp() = default;

  /// Layer widths {in, hidden..., out}; PyTorch-style U(-1/sqrt(in), 1/sqrt(in))
  /// initialization. `zero_head` zeroes the last layer.
  Mlp(const std::vector<std::size_t>& widths, Rng& rng, bool zero_head = false) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      const bool zero = zero_head && l + 2 == widths.size();
      std::vector<Real> w(in * out), b(out);
      for (auto& v : w) v = zero ? Real(0) : static_cast<Real>(bound * (2.0 * rng.uniform() - 1.0));
      for (auto& v : b) v = zero ? Real(0) : static_cast<Real>(bound * (2.0 * rng.uniform() - 1.0));
      weights.push_back(ad::Tensor<Real>::from({in, out}, std::move(w), true));
      biases.push_back(ad::Tensor<Real>::from({1, out}, std::move(b), true));
    }
  }

  ad::Tensor<Real> operator()(const ad::Tensor<Real>& x) const {
    ad::Tensor<Real> h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = ad::matmul(h, weights[l]) + biases[l];
      if (l + 1 < weights.size()) h = ad::relu(h);
    }
    return h;
  }

  std::vector<ad::Tensor<Real>> tensors() const {
    std::vector<ad::Tensor<Real>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l]);
      out.push_back(biases[l]);
    }
    return out;
  }
  std::vector<ad::Tensor<Real>*> mutable_tensors() {
    std::vector<ad::Tensor<Real>*> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }

  std::size_t input_width() const { return weights.empty() ? 0 : weights.front().shape()[0]; }
  std::size_t output_width() const { return weights.empty() ? 0 : weights.back().shape()[1]; }
};

}  // namespace mfield
