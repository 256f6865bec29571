#include "logoid/backbone.hpp"
#include "logoid/subprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <unistd.h>

namespace logoid {

namespace fs = std::filesystem;

ExternalBackbone::ExternalBackbone(ExternalBackboneConfig config) : config_(std::move(config)) {
  if (config_.command.empty()) throw std::invalid_argument("external backbone: empty command");
  if (config_.input_size < 1 || config_.output_dim < 1) {
    throw std::invalid_argument("external backbone: input_size and output_dim must be >= 1");
  }
}

nlohmann::json ExternalBackbone::config() const {
  return {{"kind", kind()},
          {"command", config_.command},
          {"input_size", config_.input_size},
          {"output_dim", config_.output_dim},
          {"mean", config_.mean},
          {"std", config_.std}};
}

ExternalBackboneConfig ExternalBackbone::parse_config(const nlohmann::json& j) {
  ExternalBackboneConfig c;
  c.command = j.value("command", c.command);
  c.input_size = j.value("input_size", c.input_size);
  c.output_dim = j.value("output_dim", c.output_dim);
  if (j.contains("mean")) c.mean = j.at("mean").get<std::array<float, 3>>();
  if (j.contains("std")) c.std = j.at("std").get<std::array<float, 3>>();
  return c;
}

MatrixF ExternalBackbone::forward(std::span<const Image> batch,
                                  std::unique_ptr<BackboneTape>* tape) const {
  if (batch.empty()) throw std::invalid_argument("external backbone: empty batch");
  const int S = config_.input_size;
  const fs::path dir = fs::temp_directory_path() /
                       fmt::format("logoid-ext-{}-{}", ::getpid(),
                                   reinterpret_cast<std::uintptr_t>(batch.data()));
  fs::create_directories(dir);
  const fs::path in_path = dir / "input.f32";
  const fs::path out_path = dir / "output.f32";
  {
    std::ofstream out(in_path, std::ios::binary);
    const std::int32_t header[4] = {static_cast<std::int32_t>(batch.size()), 3, S, S};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (const Image& img : batch) {
      if (img.channels() != 3 || img.height() != S || img.width() != S) {
        throw std::invalid_argument("external backbone: input has wrong shape");
      }
      for (int c = 0; c < 3; ++c) {
        for (float v : img.plane(c)) {
          const float z = (v - config_.mean[c]) / config_.std[c];
          out.write(reinterpret_cast<const char*>(&z), sizeof(z));
        }
      }
    }
  }
  const auto result = run_command(
      expand_command(config_.command, {{"input", in_path.string()}, {"output", out_path.string()}}));
  MatrixF features(static_cast<Eigen::Index>(batch.size()), config_.output_dim);
  std::ifstream in(out_path, std::ios::binary);
  const auto bytes = static_cast<std::streamsize>(features.size() * sizeof(float));
  if (result.exit_code != 0 || !in ||
      !in.read(reinterpret_cast<char*>(features.data()), bytes)) {
    fs::remove_all(dir);
    throw Error(fmt::format("external backbone command failed (exit {}) or produced fewer than "
                            "{} features x {} rows",
                            result.exit_code, config_.output_dim, batch.size()));
  }
  fs::remove_all(dir);
  if (tape) *tape = std::make_unique<BackboneTape>();
  return features;
}

std::unique_ptr<VisualBackbone> make_backbone(const nlohmann::json& config) {
  const std::string kind = config.value("kind", std::string("tiny_convnet"));
  if (kind == "tiny_convnet") {
    return std::make_unique<TinyConvNet>(TinyConvNet::parse_config(config));
  }
  if (kind == "external") {
    return std::make_unique<ExternalBackbone>(ExternalBackbone::parse_config(config));
  }
  throw std::invalid_argument(fmt::format("unknown backbone kind '{}'", kind));
}

}  // namespace logoid
