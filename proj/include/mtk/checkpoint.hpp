#pragma once

// "MTKW" checkpoint: magic, u8 version=1, u32 LE length + canonical JSON model
// spec, then every parameter tensor as f32 LE in declaration order.

#include <filesystem>
#include <string>

#include "mtk/bytes.hpp"
#include "mtk/nn.hpp"

namespace mtk {

inline constexpr std::uint8_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const Model& model) {
  check_params(model.spec, model.params);
  detail::ByteWriter w;
  w.raw("MTKW");
  w.u8(kCheckpointVersion);
  std::string spec = to_json(model.spec).dump();
  w.u32(static_cast<std::uint32_t>(spec.size()));
  w.raw(spec);
  for (const auto& t : model.params.tensors) w.f32_array(t.data());
  return w.bytes();
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(model));
}

inline Model decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4, "magic") != "MTKW") throw FormatError("bad checkpoint magic", 0);
  if (auto v = r.u8("version"); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v), 4);
  std::uint32_t len = r.u32("spec length");
  std::size_t spec_at = r.offset();
  std::string text = r.raw(len, "model spec");
  Model model;
  try {
    model.spec = model_spec_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint spec is not valid JSON: ") + e.what(), spec_at);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("checkpoint spec rejected: ") + e.what(), spec_at);
  }
  for (const auto& shape : parameter_shapes(model.spec)) {
    Tensor t(shape);
    r.f32_array(t.data(), "parameters");
    model.params.tensors.push_back(std::move(t));
  }
  r.expect_end();
  return model;
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace mtk
