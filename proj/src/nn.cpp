#include "crkt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace crkt::nn {

Matrix glorot(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool with_bias)
    : weight(name + ".weight", glorot(in, out, rng)),
      bias(name + ".bias", Matrix::Zero(1, out)),
      has_bias(with_bias) {}

Var Linear::operator()(const Var& x) const {
  if (x.cols() != weight.value().rows()) {
    throw std::invalid_argument("Linear " + weight.name() + ": expected " +
                                std::to_string(weight.value().rows()) + " input features, got " +
                                std::to_string(x.cols()));
  }
  Var y = ad::matmul(x, weight.var());
  return has_bias ? ad::add_row(y, bias.var()) : y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, int in, int hidden, int out, std::mt19937_64& rng)
    : first(name + ".0", in, hidden, rng), second(name + ".1", hidden, out, rng) {}

Var Mlp::operator()(const Var& x) const { return second(ad::relu(first(x))); }

void Mlp::collect(std::vector<Parameter*>& out) {
  first.collect(out);
  second.collect(out);
}

}  // namespace crkt::nn
