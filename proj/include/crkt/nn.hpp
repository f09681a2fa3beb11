#pragma once

#include "crkt/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace crkt::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Var;

// Glorot-uniform initialised weight of shape fan_in x fan_out.
Matrix glorot(int fan_in, int fan_out, std::mt19937_64& rng);

// y = x W + b applied row-wise.
struct Linear {
  Parameter weight;
  Parameter bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool with_bias = true);
  Var operator()(const Var& x) const;
  void collect(std::vector<Parameter*>& out);
};

// Two affine layers with a ReLU between them.
struct Mlp {
  Linear first;
  Linear second;

  Mlp() = default;
  Mlp(const std::string& name, int in, int hidden, int out, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
  void collect(std::vector<Parameter*>& out);
  int in_features() const { return static_cast<int>(first.weight.value().rows()); }
  int out_features() const { return static_cast<int>(second.weight.value().cols()); }
};

}  // namespace crkt::nn
