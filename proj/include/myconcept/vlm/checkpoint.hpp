// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "myconcept/io/binary.hpp"
#include "myconcept/vlm/model.hpp"

namespace myconcept::vlm {

// Layout: "TVLM", u16 version, u32 header length, UTF-8 JSON header, then every
// parameter as little-endian float32 (column-major) in declaration order.

inline constexpr char kCheckpointMagic[4] = {'T', 'V', 'L', 'M'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"mode", to_string(c.fusion.mode)},
          {"n_query_tokens", c.fusion.n_query_tokens},
          {"d", c.fusion.d},
          {"n_heads", c.fusion.n_heads},
          {"n_layers", c.fusion.n_layers},
          {"encoder",
           {{"patch_size", c.encoder.patch_size},
            {"d_v", c.encoder.d_v},
            {"max_patches", c.encoder.max_patches},
            {"seed", c.encoder.seed}}},
          {"decoder_layers", c.decoder_layers},
          {"max_positions", c.max_positions},
          {"mlp_ratio", c.mlp_ratio},
          {"seed", c.seed},
          {"vocab", c.vocab},
          {"name_slots", c.name_slots}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.fusion.mode = fusion_mode_from_string(j.at("mode").get<std::string>());
  c.fusion.n_query_tokens = j.at("n_query_tokens").get<int>();
  c.fusion.d = j.at("d").get<int>();
  c.fusion.n_heads = j.at("n_heads").get<int>();
  c.fusion.n_layers = j.at("n_layers").get<int>();
  const auto& e = j.at("encoder");
  c.encoder.patch_size = e.at("patch_size").get<int>();
  c.encoder.d_v = e.at("d_v").get<int>();
  c.encoder.max_patches = e.at("max_patches").get<int>();
  c.encoder.seed = e.at("seed").get<std::uint64_t>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.vocab = j.at("vocab").get<std::vector<std::string>>();
  c.name_slots = j.at("name_slots").get<std::vector<int>>();
  return c;
}

inline std::vector<std::uint8_t> serialize_model(const ToyVlm& model) {
  nlohmann::json header = config_to_json(model.config());
  auto shapes = nlohmann::json::array();
  model.params().visit([&](const std::string& name, const Matrix& m) {
    shapes.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  header["params"] = shapes;
  const std::string text = header.dump();
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  model.params().visit([&](const std::string&, const Matrix& m) { w.f32_block(m); });
  return std::move(w.data());
}

inline ToyVlm deserialize_model(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a model checkpoint (bad magic)");
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.text(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = config_from_json(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  Params params = init_params(cfg);
  const auto& shapes = header.at("params");
  std::size_t i = 0;
  params.visit([&](const std::string& name, Matrix& m) {
    if (i >= shapes.size() || shapes[i].at("name") != name || shapes[i].at("rows") != m.rows() ||
        shapes[i].at("cols") != m.cols())
      throw FormatError("checkpoint parameter layout does not match its config at '" + name + "'");
    m = r.f32_block(m.rows(), m.cols());
    ++i;
  });
  if (i != shapes.size() || r.remaining() != 0) throw FormatError("checkpoint has trailing or missing data");
  return ToyVlm(std::move(cfg), std::move(params));
}

inline void save_model(const ToyVlm& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_model(model));
}

inline ToyVlm load_model(const std::filesystem::path& path) { return deserialize_model(io::read_file(path)); }

}  // namespace myconcept::vlm
