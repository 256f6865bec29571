#include "logoid/projection_head.hpp"

#include "logoid/rng.hpp"

#include <cmath>
#include <fmt/format.h>

namespace logoid {

namespace {
using ConstMap = Eigen::Map<const MatrixF>;
using Map = Eigen::Map<MatrixF>;
}  // namespace

ProjectionHead::ProjectionHead(const ProjectionHeadConfig& config) : config_(config) {
  if (config.input_dim < 1 || config.hidden_dim < 1 || config.output_dim < 1) {
    throw std::invalid_argument(fmt::format("projection head: invalid shape {} -> {} -> {}",
                                            config.input_dim, config.hidden_dim,
                                            config.output_dim));
  }
  Rng rng(derive_seed({config.init_seed, 0x68656164ULL}));
  Tensor& w1 = params_.add("head.fc1.weight", {config.hidden_dim, config.input_dim});
  const double s1 = std::sqrt(2.0 / config.input_dim);
  for (float& v : w1.data) v = static_cast<float>(rng.normal() * s1);
  params_.add("head.fc1.bias", {config.hidden_dim});
  Tensor& w2 = params_.add("head.fc2.weight", {config.output_dim, config.hidden_dim});
  const double s2 = std::sqrt(1.0 / config.hidden_dim);
  for (float& v : w2.data) v = static_cast<float>(rng.normal() * s2);
}

nlohmann::json ProjectionHead::config_json() const {
  return {{"input_dim", config_.input_dim},
          {"hidden_dim", config_.hidden_dim},
          {"output_dim", config_.output_dim},
          {"init_seed", config_.init_seed}};
}

ProjectionHeadConfig ProjectionHead::parse_config(const nlohmann::json& j) {
  ProjectionHeadConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

MatrixF ProjectionHead::forward(const MatrixF& input, Tape* tape) const {
  if (input.cols() != config_.input_dim) {
    throw std::invalid_argument(fmt::format("projection head: expected {} input dims, got {}",
                                            config_.input_dim, input.cols()));
  }
  ConstMap w1(params_.at("head.fc1.weight").data.data(), config_.hidden_dim, config_.input_dim);
  Eigen::Map<const Eigen::RowVectorXf> b1(params_.at("head.fc1.bias").data.data(),
                                          config_.hidden_dim);
  ConstMap w2(params_.at("head.fc2.weight").data.data(), config_.output_dim, config_.hidden_dim);

  MatrixF hidden = input * w1.transpose();
  hidden.rowwise() += b1;
  hidden = hidden.cwiseMax(0.0f);
  MatrixF out = hidden * w2.transpose();
  if (tape) {
    tape->input = input;
    tape->hidden = std::move(hidden);
  }
  return out;
}

MatrixF ProjectionHead::backward(const Tape& tape, const MatrixF& grad_output,
                                 ParameterSet& grads) const {
  ConstMap w1(params_.at("head.fc1.weight").data.data(), config_.hidden_dim, config_.input_dim);
  ConstMap w2(params_.at("head.fc2.weight").data.data(), config_.output_dim, config_.hidden_dim);
  Map dw1(grads.at("head.fc1.weight").data.data(), config_.hidden_dim, config_.input_dim);
  Eigen::Map<Eigen::RowVectorXf> db1(grads.at("head.fc1.bias").data.data(), config_.hidden_dim);
  Map dw2(grads.at("head.fc2.weight").data.data(), config_.output_dim, config_.hidden_dim);

  dw2.noalias() += grad_output.transpose() * tape.hidden;
  MatrixF grad_hidden = grad_output * w2;
  grad_hidden = (tape.hidden.array() > 0.0f).select(grad_hidden, 0.0f);
  dw1.noalias() += grad_hidden.transpose() * tape.input;
  db1 += grad_hidden.colwise().sum();
  return grad_hidden * w1;
}

}  // namespace logoid
