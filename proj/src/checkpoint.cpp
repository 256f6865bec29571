#include "logoid/checkpoint.hpp"

#include <cstring>
#include <fmt/format.h>
#include <fstream>

namespace logoid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void append_index(json& index, const ParameterSet& set, const char* group, std::uint64_t& offset) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor& t = set.tensor(i);
    index.push_back({{"name", set.name(i)}, {"group", group}, {"shape", t.shape},
                     {"offset", offset}});
    offset += t.numel() * sizeof(float);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  json header;
  header["encoder"] = ckpt.encoder.to_json();
  header["backbone_kind"] = ckpt.encoder.backbone.value("kind", std::string());
  header["visual_dim"] = ckpt.encoder.head.input_dim - ckpt.encoder.text.dim;
  header["text_dim"] = ckpt.encoder.text.dim;
  header["head_shape"] = {ckpt.encoder.head.input_dim, ckpt.encoder.head.hidden_dim,
                          ckpt.encoder.head.output_dim};
  header["config_hash"] = ckpt.config_hash;
  header["step"] = ckpt.step;
  header["seed"] = ckpt.seed;
  header["rng"] = "mt19937_64";
  header["textual_weights_hash"] = ckpt.textual_weights_hash;
  json index = json::array();
  std::uint64_t offset = 0;
  append_index(index, ckpt.weights, "weights", offset);
  append_index(index, ckpt.momentum, "momentum", offset);
  header["tensors"] = index;
  header["data_bytes"] = offset;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write checkpoint '{}'", tmp.string()));
    const std::uint64_t header_len = text.size();
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ParameterSet* set : {&ckpt.weights, &ckpt.momentum}) {
      for (std::size_t i = 0; i < set->size(); ++i) {
        const auto& d = set->tensor(i).data;
        out.write(reinterpret_cast<const char*>(d.data()),
                  static_cast<std::streamsize>(d.size() * sizeof(float)));
      }
    }
    out.flush();
    if (!out) throw Error(fmt::format("write failed for checkpoint '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("checkpoint '{}' not found", path.string()));
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(fmt::format("'{}' is not a checkpoint (bad magic)", path.string()));
  }
  if (version != kVersion) {
    throw Error(fmt::format("checkpoint '{}' has unsupported version {}", path.string(), version));
  }
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(fmt::format("checkpoint '{}' is truncated", path.string()));
  }
  const json header = json::parse(text);

  Checkpoint ckpt;
  ckpt.encoder = EncoderConfig::from_json(header.at("encoder"));
  ckpt.encoder.head.input_dim = header.at("head_shape")[0].get<int>();
  ckpt.config_hash = header.value("config_hash", std::string());
  ckpt.step = header.value("step", std::int64_t{0});
  ckpt.seed = header.value("seed", std::uint64_t{0});
  ckpt.textual_weights_hash = header.value("textual_weights_hash", std::string());
  for (const auto& entry : header.at("tensors")) {
    const std::string group = entry.at("group").get<std::string>();
    ParameterSet& set = group == "weights" ? ckpt.weights : ckpt.momentum;
    Tensor& t = set.add(entry.at("name").get<std::string>(),
                        entry.at("shape").get<std::vector<int>>());
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
      throw Error(fmt::format("checkpoint '{}' is truncated in tensor '{}'", path.string(),
                              entry.at("name").get<std::string>()));
    }
  }
  return ckpt;
}

ParameterSet collect_weights(const Encoder& encoder) {
  ParameterSet out;
  for (const ParameterSet* set : {&encoder.backbone().parameters(), &encoder.head().parameters()}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      out.add(set->name(i), set->tensor(i).shape).data = set->tensor(i).data;
    }
  }
  return out;
}

void assign_weights(Encoder& encoder, const ParameterSet& weights) {
  std::size_t used = 0;
  for (ParameterSet* set : {&encoder.backbone().parameters(), &encoder.head().parameters()}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      if (!weights.contains(set->name(i))) {
        throw Error(fmt::format("checkpoint lacks parameter '{}'", set->name(i)));
      }
      const Tensor& src = weights.at(set->name(i));
      if (src.shape != set->tensor(i).shape) {
        throw Error(fmt::format("parameter '{}' shape mismatch between checkpoint and encoder",
                                set->name(i)));
      }
      set->tensor(i).data = src.data;
      ++used;
    }
  }
  if (used != weights.size()) {
    throw Error("checkpoint carries parameters the encoder does not have");
  }
}

std::unique_ptr<Encoder> encoder_from_checkpoint(const Checkpoint& ckpt) {
  auto encoder = std::make_unique<Encoder>(ckpt.encoder);
  if (encoder->config().head.input_dim != ckpt.encoder.head.input_dim) {
    throw Error(fmt::format("checkpoint head expects {} input dims but backbone+text give {}",
                            ckpt.encoder.head.input_dim, encoder->config().head.input_dim));
  }
  assign_weights(*encoder, ckpt.weights);
  return encoder;
}

std::unique_ptr<Encoder> encoder_from_checkpoint(const Checkpoint& ckpt,
                                                 const nlohmann::json& recognizer) {
  Checkpoint copy = ckpt;
  copy.encoder.recognizer = recognizer;
  return encoder_from_checkpoint(copy);
}

}  // namespace logoid
