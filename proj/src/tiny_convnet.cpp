#include "logoid/backbone.hpp"
#include "logoid/rng.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace logoid {

namespace {

using ConstMap = Eigen::Map<const MatrixF>;
using Map = Eigen::Map<MatrixF>;

constexpr int kBlocks = 4;

/// Activations are C x (N*H*W): channel rows, column = n*H*W + y*W + x.
struct Activation {
  int channels = 0;
  int height = 0;
  int width = 0;
  MatrixF values;
};

struct TinyTape final : BackboneTape {
  int batch = 0;
  std::array<Activation, kBlocks> inputs;   // conv inputs
  std::array<MatrixF, kBlocks> relu_out;    // post-ReLU conv outputs
  std::array<std::vector<int>, kBlocks - 1> pool_argmax;
};

MatrixF im2col(const Activation& in, int batch) {
  const int C = in.channels, H = in.height, W = in.width;
  const int hw = H * W;
  MatrixF cols = MatrixF::Zero(static_cast<Eigen::Index>(C) * 9,
                               static_cast<Eigen::Index>(batch) * hw);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const float* src = in.values.row(c).data();
        for (int n = 0; n < batch; ++n) {
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= W) continue;
              dst[n * hw + y * W + x] = src[n * hw + sy * W + sx];
            }
          }
        }
      }
    }
  }
  return cols;
}

MatrixF col2im(const MatrixF& cols, int C, int H, int W, int batch) {
  const int hw = H * W;
  MatrixF out = MatrixF::Zero(C, static_cast<Eigen::Index>(batch) * hw);
  for (int c = 0; c < C; ++c) {
    float* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int n = 0; n < batch; ++n) {
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= W) continue;
              dst[n * hw + sy * W + sx] += src[n * hw + y * W + x];
            }
          }
        }
      }
    }
  }
  return out;
}

Activation maxpool2(const MatrixF& in, int C, int H, int W, int batch, std::vector<int>& argmax) {
  const int oh = H / 2, ow = W / 2;
  Activation out{C, oh, ow, MatrixF(C, static_cast<Eigen::Index>(batch) * oh * ow)};
  argmax.assign(static_cast<std::size_t>(C) * batch * oh * ow, 0);
  for (int c = 0; c < C; ++c) {
    const float* src = in.row(c).data();
    float* dst = out.values.row(c).data();
    for (int n = 0; n < batch; ++n) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          int best = n * H * W + (2 * y) * W + 2 * x;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int idx = n * H * W + (2 * y + dy) * W + 2 * x + dx;
              if (src[idx] > src[best]) best = idx;
            }
          }
          const std::size_t o = static_cast<std::size_t>(n) * oh * ow + y * ow + x;
          dst[o] = src[best];
          argmax[static_cast<std::size_t>(c) * batch * oh * ow + o] = best;
        }
      }
    }
  }
  return out;
}

std::string weight_name(int block) { return fmt::format("conv{}.weight", block + 1); }
std::string bias_name(int block) { return fmt::format("conv{}.bias", block + 1); }

}  // namespace

TinyConvNet::TinyConvNet(const TinyConvNetConfig& config) : config_(config) {
  if (config.input_size < 8 || config.input_size % 8 != 0) {
    throw std::invalid_argument("tiny_convnet: input_size must be a positive multiple of 8");
  }
  if (config.output_dim < 1) throw std::invalid_argument("tiny_convnet: output_dim must be >= 1");
  Rng rng(derive_seed({config.init_seed, 0x636f6e76ULL}));
  int in_ch = 3;
  for (int b = 0; b < kBlocks; ++b) {
    const int out_ch = b < 3 ? config.channels[b] : config.output_dim;
    if (out_ch < 1) throw std::invalid_argument("tiny_convnet: channel widths must be >= 1");
    Tensor& w = params_.add(weight_name(b), {out_ch, in_ch * 9});
    const double stddev = std::sqrt(2.0 / (in_ch * 9));
    for (float& v : w.data) v = static_cast<float>(rng.normal() * stddev);
    params_.add(bias_name(b), {out_ch});
    in_ch = out_ch;
  }
}

nlohmann::json TinyConvNet::config() const {
  return {{"kind", kind()},
          {"input_size", config_.input_size},
          {"channels", config_.channels},
          {"output_dim", config_.output_dim},
          {"init_seed", config_.init_seed}};
}

TinyConvNetConfig TinyConvNet::parse_config(const nlohmann::json& j) {
  TinyConvNetConfig c;
  c.input_size = j.value("input_size", c.input_size);
  if (j.contains("channels")) c.channels = j.at("channels").get<std::array<int, 3>>();
  c.output_dim = j.value("output_dim", c.output_dim);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

MatrixF TinyConvNet::forward(std::span<const Image> batch,
                             std::unique_ptr<BackboneTape>* tape) const {
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw std::invalid_argument("tiny_convnet: empty batch");
  const int S = config_.input_size;
  Activation act{3, S, S, MatrixF(3, static_cast<Eigen::Index>(n) * S * S)};
  for (int i = 0; i < n; ++i) {
    const Image& img = batch[i];
    if (img.channels() != 3 || img.height() != S || img.width() != S) {
      throw std::invalid_argument(fmt::format("tiny_convnet: expected 3x{}x{} input, got {}x{}x{}",
                                              S, S, img.channels(), img.height(), img.width()));
    }
    for (int c = 0; c < 3; ++c) {
      auto plane = img.plane(c);
      std::copy(plane.begin(), plane.end(), act.values.row(c).data() + i * S * S);
    }
  }

  auto t = tape ? std::make_unique<TinyTape>() : nullptr;
  if (t) t->batch = n;
  MatrixF features;
  for (int b = 0; b < kBlocks; ++b) {
    const Tensor& w = params_.at(weight_name(b));
    const Tensor& bias = params_.at(bias_name(b));
    const int out_ch = w.shape[0];
    ConstMap W(w.data.data(), out_ch, w.shape[1]);
    Eigen::Map<const VectorF> B(bias.data.data(), out_ch);

    MatrixF y = W * im2col(act, n);
    y.colwise() += B;
    y = y.cwiseMax(0.0f);

    const int H = act.height, Wd = act.width;
    if (t) t->inputs[b] = act;
    if (b < kBlocks - 1) {
      std::vector<int> argmax;
      act = maxpool2(y, out_ch, H, Wd, n, argmax);
      if (t) t->pool_argmax[b] = std::move(argmax);
    } else {
      const int hw = H * Wd;
      features.resize(n, out_ch);
      for (int i = 0; i < n; ++i) {
        features.row(i) = y.middleCols(static_cast<Eigen::Index>(i) * hw, hw).rowwise().mean();
      }
    }
    if (t) t->relu_out[b] = std::move(y);
  }
  if (tape) *tape = std::move(t);
  return features;
}

void TinyConvNet::backward(const BackboneTape& base, const MatrixF& grad_features,
                           ParameterSet& grads) const {
  const auto& tape = dynamic_cast<const TinyTape&>(base);
  const int n = tape.batch;
  if (grad_features.rows() != n || grad_features.cols() != config_.output_dim) {
    throw std::invalid_argument("tiny_convnet: gradient shape mismatch");
  }

  // Gradient w.r.t. the last block's ReLU output (global average pooling).
  const Activation& last_in = tape.inputs[kBlocks - 1];
  const int hw_last = last_in.height * last_in.width;
  MatrixF grad(config_.output_dim, static_cast<Eigen::Index>(n) * hw_last);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < config_.output_dim; ++c) {
      grad.block(c, static_cast<Eigen::Index>(i) * hw_last, 1, hw_last)
          .setConstant(grad_features(i, c) / static_cast<float>(hw_last));
    }
  }

  for (int b = kBlocks - 1; b >= 0; --b) {
    const Activation& in = tape.inputs[b];
    const Tensor& w = params_.at(weight_name(b));
    const int out_ch = w.shape[0];
    ConstMap W(w.data.data(), out_ch, w.shape[1]);

    // ReLU mask.
    grad = (tape.relu_out[b].array() > 0.0f).select(grad, 0.0f);

    const MatrixF cols = im2col(in, n);
    Map dW(grads.at(weight_name(b)).data.data(), out_ch, w.shape[1]);
    Eigen::Map<VectorF> dB(grads.at(bias_name(b)).data.data(), out_ch);
    dW.noalias() += grad * cols.transpose();
    dB += grad.rowwise().sum();
    if (b == 0) break;

    MatrixF grad_in = col2im(W.transpose() * grad, in.channels, in.height, in.width, n);

    // Route through the previous block's max-pool.
    const MatrixF& prev = tape.relu_out[b - 1];
    const auto& argmax = tape.pool_argmax[b - 1];
    MatrixF grad_prev = MatrixF::Zero(prev.rows(), prev.cols());
    const Eigen::Index pooled = grad_in.cols();
    for (Eigen::Index c = 0; c < grad_in.rows(); ++c) {
      for (Eigen::Index o = 0; o < pooled; ++o) {
        grad_prev(c, argmax[static_cast<std::size_t>(c) * pooled + o]) += grad_in(c, o);
      }
    }
    grad = std::move(grad_prev);
  }
}

}  // namespace logoid
