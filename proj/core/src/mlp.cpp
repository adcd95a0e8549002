#include "anisdf/mlp.hpp"

#include <cmath>

namespace anisdf {

Activation activation_from_name(const std::string& name) {
  if (name == "none" || name == "identity") return Activation::None;
  if (name == "relu") return Activation::ReLU;
  if (name == "softplus") return Activation::Softplus;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

void MlpSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("MlpSpec: input_dim must be >= 1");
  if (hidden_layers < 1) throw std::invalid_argument("MlpSpec: hidden_layers must be >= 1");
  if (hidden_width < 1) throw std::invalid_argument("MlpSpec: hidden_width must be >= 1");
  if (output_dim < 1) throw std::invalid_argument("MlpSpec: output_dim must be >= 1");
  if (softplus_beta <= 0) throw std::invalid_argument("MlpSpec: softplus_beta must be positive");
}

Mlp::Mlp(std::string prefix, MlpSpec spec) : prefix_(std::move(prefix)), spec_(spec) { spec_.validate(); }

std::string Mlp::weight_id(int layer) const { return prefix_ + ".W" + std::to_string(layer); }
std::string Mlp::bias_id(int layer) const { return prefix_ + ".b" + std::to_string(layer); }

int Mlp::layer_in(int layer) const { return layer == 0 ? spec_.input_dim : spec_.hidden_width; }
int Mlp::layer_out(int layer) const { return layer == layer_count() - 1 ? spec_.output_dim : spec_.hidden_width; }

void Mlp::register_params(ParameterStore& store, Rng& rng, MlpInit init) const {
  for (int l = 0; l < layer_count(); ++l) {
    const int in = layer_in(l), out = layer_out(l);
    Parameter& W = store.create(weight_id(l), {in, out});
    store.create(bias_id(l), {1, out});
    if (init == MlpInit::HeNormal) {
      const double std = std::sqrt(2.0 / static_cast<double>(in));
      for (Eigen::Index k = 0; k < W.values.size(); ++k) W.values[k] = std * rng.normal();
    }
  }
}

ad::Var Mlp::activate(ad::Tape& tape, ad::Var z, Activation a) const {
  switch (a) {
    case Activation::None: return z;
    case Activation::ReLU: return ad::relu(z);
    case Activation::Softplus: return ad::softplus(z, spec_.softplus_beta);
    case Activation::Sigmoid: return ad::sigmoid(z);
  }
  throw std::logic_error("bad activation");
}

ad::Var Mlp::activation_slope(ad::Tape& tape, ad::Var z, ad::Var y, Activation a) const {
  switch (a) {
    case Activation::None: return tape.constant(ad::Mat::Ones(z.rows(), z.cols()));
    case Activation::ReLU:
      // Piecewise-constant slope; treated as data (zero derivative a.e.).
      return tape.constant((z.value().array() > 0.0).cast<double>());
    case Activation::Softplus: return ad::sigmoid(ad::scale(z, spec_.softplus_beta));
    case Activation::Sigmoid: return ad::mul(y, ad::add_const(ad::neg(y), 1.0));
  }
  throw std::logic_error("bad activation");
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const {
  if (x.cols() != spec_.input_dim)
    throw ad::AutodiffError(prefix_ + ": input has " + std::to_string(x.cols()) + " columns, spec wants " +
                            std::to_string(spec_.input_dim));
  ad::Var h = x;
  for (int l = 0; l < layer_count(); ++l) {
    ad::Var z = ad::add_rowvec(ad::matmul(h, tape.param(weight_id(l))), tape.param(bias_id(l)));
    h = activate(tape, z, l == layer_count() - 1 ? spec_.output_activation : spec_.hidden_activation);
  }
  return h;
}

ad::Var Mlp::forward_with_tangents(ad::Tape& tape, ad::Var x, std::array<ad::Var, 3>& dx) const {
  if (x.cols() != spec_.input_dim) throw ad::AutodiffError(prefix_ + ": input dim mismatch");
  ad::Var h = x;
  std::array<ad::Var, 3> th = dx;
  for (int l = 0; l < layer_count(); ++l) {
    ad::Var W = tape.param(weight_id(l));
    ad::Var z = ad::add_rowvec(ad::matmul(h, W), tape.param(bias_id(l)));
    const Activation a = l == layer_count() - 1 ? spec_.output_activation : spec_.hidden_activation;
    ad::Var y = activate(tape, z, a);
    ad::Var slope = activation_slope(tape, z, y, a);
    for (int k = 0; k < 3; ++k) {
      ad::Var tz = ad::matmul(th[k], W);
      th[k] = a == Activation::None ? tz : ad::mul(slope, tz);
    }
    h = y;
  }
  dx = th;
  return h;
}

}  // namespace anisdf
