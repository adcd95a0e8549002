#pragma once

#include <array>
#include <string>

#include "anisdf/autodiff.hpp"
#include "anisdf/params.hpp"
#include "anisdf/rng.hpp"

namespace anisdf {

enum class Activation { None, ReLU, Softplus, Sigmoid };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

struct MlpSpec {
  int input_dim = 0;
  int hidden_layers = 1;
  int hidden_width = 64;
  int output_dim = 1;
  Activation hidden_activation = Activation::ReLU;
  Activation output_activation = Activation::None;
  // Sharpness of the softplus used as hidden activation; high values keep the
  // activation close to a rectifier while staying twice differentiable.
  double softplus_beta = 100.0;

  void validate() const;
};

enum class MlpInit { HeNormal, Zero };

// A fully connected network whose weights live in a ParameterStore under
// "<prefix>.W<i>" / "<prefix>.b<i>". Rows of the input are independent
// samples: y = act(x W + b) layer by layer.
class Mlp {
 public:
  Mlp(std::string prefix, MlpSpec spec);

  void register_params(ParameterStore& store, Rng& rng, MlpInit init = MlpInit::HeNormal) const;

  ad::Var forward(ad::Tape& tape, ad::Var x) const;

  // Forward pass that also propagates three directional derivative streams
  // dx[k] (same shape as x) through every layer. The streams are built from
  // tape primitives, so one reverse sweep differentiates through them —
  // this is how parameter gradients flow through surface normals.
  ad::Var forward_with_tangents(ad::Tape& tape, ad::Var x, std::array<ad::Var, 3>& dx) const;

  const MlpSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  int layer_count() const { return spec_.hidden_layers + 1; }
  std::string weight_id(int layer) const;
  std::string bias_id(int layer) const;
  int layer_in(int layer) const;
  int layer_out(int layer) const;

 private:
  ad::Var activate(ad::Tape& tape, ad::Var z, Activation a) const;
  ad::Var activation_slope(ad::Tape& tape, ad::Var z, ad::Var y, Activation a) const;

  std::string prefix_;
  MlpSpec spec_;
};

}  // namespace anisdf
