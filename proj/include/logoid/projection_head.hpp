#pragma once

#include "logoid/common.hpp"
#include "logoid/params.hpp"

#include <json.hpp>

namespace logoid {

struct ProjectionHeadConfig {
  int input_dim = 0;  // D_v + D_t, filled in by the encoder
  int hidden_dim = 2048;
  int output_dim = 512;
  std::uint64_t init_seed = 1;
};

/// MLP h: Linear(in, hidden) + ReLU, then Linear(hidden, out) without bias.
class ProjectionHead {
 public:
  struct Tape {
    MatrixF input;
    MatrixF hidden;  // post-ReLU
  };

  explicit ProjectionHead(const ProjectionHeadConfig& config);

  const ProjectionHeadConfig& config() const { return config_; }
  nlohmann::json config_json() const;
  static ProjectionHeadConfig parse_config(const nlohmann::json& j);

  MatrixF forward(const MatrixF& input, Tape* tape = nullptr) const;
  /// Accumulates parameter gradients; returns the gradient w.r.t. input.
  MatrixF backward(const Tape& tape, const MatrixF& grad_output, ParameterSet& grads) const;

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

 private:
  ProjectionHeadConfig config_;
  ParameterSet params_;
};

}  // namespace logoid
