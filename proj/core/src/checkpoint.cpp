#include "hints/checkpoint.hpp"

#include <fstream>

#include "hints/error.hpp"

namespace hints {

namespace {

nlohmann::json shape_of(const ParamBlock& b, const Arch& arch) {
  if (b.kind == LayerKind::Conv && !b.is_bias) {
    return {b.rows, b.cols / (arch.kernel * arch.kernel), arch.kernel, arch.kernel};
  }
  if (b.is_bias) return {b.rows};
  return {b.rows, b.cols};
}

}  // namespace

nlohmann::json params_to_json(const DeepONetParams& params) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : params.blocks) {
    const auto first = params.values.begin() + static_cast<std::ptrdiff_t>(b.offset);
    out.push_back({{"name", b.name()},
                   {"shape", shape_of(b, params.arch)},
                   {"values", std::vector<double>(first, first + static_cast<std::ptrdiff_t>(b.size()))}});
  }
  return out;
}

DeepONetParams params_from_json(const Arch& arch, const nlohmann::json& j) {
  DeepONetParams p = DeepONetParams::zeros(arch);
  if (!j.is_array() || j.size() != p.blocks.size()) {
    throw IoError("checkpoint: expected " + std::to_string(p.blocks.size()) + " parameter blocks");
  }
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& b = p.blocks[i];
    const auto& e = j[i];
    if (e.at("name").get<std::string>() != b.name()) {
      throw IoError("checkpoint: block " + std::to_string(i) + " is '" + e.at("name").get<std::string>() +
                    "', expected '" + b.name() + "'");
    }
    const auto values = e.at("values").get<std::vector<double>>();
    if (values.size() != b.size()) throw IoError("checkpoint: block '" + b.name() + "' has the wrong size");
    std::copy(values.begin(), values.end(), p.values.begin() + static_cast<std::ptrdiff_t>(b.offset));
  }
  return p;
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = "hints-checkpoint";
  j["version"] = 1;
  j["arch"] = arch_to_json(ckpt.params.arch);
  j["seed"] = ckpt.seed;
  j["epoch"] = ckpt.epoch;
  j["params"] = params_to_json(ckpt.params);
  if (ckpt.resume) {
    const auto& r = *ckpt.resume;
    j["resume"] = {{"epoch", r.epoch},
                   {"params", params_to_json(r.params)},
                   {"adam_state", {{"step", r.adam.step}, {"m", r.adam.m}, {"v", r.adam.v}}}};
  }
  if (!ckpt.provenance.is_null()) j["provenance"] = ckpt.provenance;
  if (!ckpt.meta.is_null()) j["meta"] = ckpt.meta;
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "hints-checkpoint") throw IoError("checkpoint: missing format tag");
    if (j.at("version").get<int>() != 1) throw IoError("checkpoint: unsupported version");
    Checkpoint c;
    const Arch arch = arch_from_json(j.at("arch"));
    c.params = params_from_json(arch, j.at("params"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.epoch = j.at("epoch").get<int>();
    if (j.contains("resume")) {
      const auto& r = j["resume"];
      TrainState s;
      s.epoch = r.at("epoch").get<int>();
      s.params = params_from_json(arch, r.at("params"));
      const auto& a = r.at("adam_state");
      s.adam.step = a.at("step").get<long>();
      s.adam.m = a.at("m").get<std::vector<double>>();
      s.adam.v = a.at("v").get<std::vector<double>>();
      if (s.adam.m.size() != s.params.size() || s.adam.v.size() != s.params.size()) {
        throw IoError("checkpoint: adam state size does not match the parameters");
      }
      c.resume = std::move(s);
    }
    if (j.contains("provenance")) c.provenance = j["provenance"];
    if (j.contains("meta")) c.meta = j["meta"];
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << j.dump(1) << '\n';
  if (!os) throw IoError("write to '" + path + "' failed");
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_json_file(path, checkpoint_to_json(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace hints
