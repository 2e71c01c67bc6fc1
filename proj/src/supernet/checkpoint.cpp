#include "l2g/supernet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

namespace l2g {

using nlohmann::json;

class CheckpointAccess {
 public:
  static std::vector<LayerSlot>& slots(SuperNet& n) { return n.slots_; }
  static std::vector<Adapter>& adapters(SuperNet& n) { return n.adapters_; }
  static std::vector<TaskHead>& heads(SuperNet& n) { return n.heads_; }
  static std::vector<TaskStructure>& structures(SuperNet& n) { return n.structures_; }
  static int& next_variant_id(SuperNet& n) { return n.next_variant_id_; }
  static int& next_adapter_id(SuperNet& n) { return n.next_adapter_id_; }
  static std::size_t& total_params(SuperNet& n) { return n.total_params_; }
  static int next_variant_id(const SuperNet& n) { return n.next_variant_id_; }
  static int next_adapter_id(const SuperNet& n) { return n.next_adapter_id_; }
};

namespace {

struct Entry {
  std::string kind;
  int id;
  int owner_task;
  std::size_t slot;
  const Tensor* tensor;
};

void append_f32(std::string& blob, const Tensor& t) {
  for (double v : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
}

Tensor read_f32(const std::string& blob, std::size_t offset, const Shape& shape) {
  Tensor t(shape);
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    t[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return t;
}

std::uint32_t crc_of(const std::string& blob) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(blob.data()), static_cast<uInt>(blob.size())));
}

json choice_to_json(const LayerChoice& c) {
  return json{{"kind", to_string(c.kind)}, {"variant", c.variant_id}, {"adapter", c.adapter_id}};
}

}  // namespace

const char* to_string(CheckpointErrc code) {
  switch (code) {
    case CheckpointErrc::io:
      return "io";
    case CheckpointErrc::malformed_manifest:
      return "malformed_manifest";
    case CheckpointErrc::version_mismatch:
      return "version_mismatch";
    case CheckpointErrc::truncated_blob:
      return "truncated_blob";
    case CheckpointErrc::length_mismatch:
      return "length_mismatch";
    case CheckpointErrc::checksum_mismatch:
      return "checksum_mismatch";
  }
  return "unknown";
}

CheckpointError::CheckpointError(CheckpointErrc code, const std::string& what)
    : std::runtime_error(std::string("checkpoint ") + to_string(code) + ": " + what), code_(code) {}

json topology_to_json(const Topology& topology) {
  json layers = json::array();
  for (const auto& s : topology.layers) {
    json l{{"type", to_string(s.kind)}, {"out", s.out}};
    if (s.kind == LayerKind::conv) {
      l["kernel"] = s.kernel;
      l["stride"] = s.stride;
      l["padding"] = s.padding;
      l["pool"] = s.pool;
    }
    layers.push_back(std::move(l));
  }
  return json{{"input", topology.input_shape}, {"layers", std::move(layers)}, {"classes", topology.num_classes}};
}

Topology topology_from_json(const json& j) {
  auto field = [](const json& obj, const char* key, const std::string& path) -> const json& {
    if (!obj.is_object() || !obj.contains(key)) throw ContractError(path + "." + key + ": missing");
    return obj.at(key);
  };
  auto count = [](const json& v, const std::string& path) -> std::size_t {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ContractError(path + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  };
  Topology t;
  const json& input = field(j, "input", "topology");
  if (!input.is_array() || input.empty()) throw ContractError("topology.input: expected a non-empty array");
  for (std::size_t i = 0; i < input.size(); ++i) {
    t.input_shape.push_back(count(input[i], "topology.input[" + std::to_string(i) + "]"));
  }
  t.num_classes = count(field(j, "classes", "topology"), "topology.classes");
  const json& layers = field(j, "layers", "topology");
  if (!layers.is_array()) throw ContractError("topology.layers: expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string path = "topology.layers[" + std::to_string(i) + "]";
    const json& l = layers[i];
    LayerSpec s;
    const json& type = field(l, "type", path);
    if (!type.is_string()) throw ContractError(path + ".type: expected a string");
    try {
      s.kind = layer_kind_from_string(type.get<std::string>());
    } catch (const ContractError& e) {
      throw ContractError(path + ".type: " + e.what());
    }
    s.out = count(field(l, "out", path), path + ".out");
    if (s.kind == LayerKind::conv) {
      if (l.contains("kernel")) s.kernel = count(l["kernel"], path + ".kernel");
      if (l.contains("stride")) s.stride = count(l["stride"], path + ".stride");
      if (l.contains("padding")) s.padding = count(l["padding"], path + ".padding");
      if (l.contains("pool")) s.pool = count(l["pool"], path + ".pool");
    }
    t.layers.push_back(s);
  }
  t.resolve();
  return t;
}

json structure_to_json(const TaskStructure& s) {
  json choices = json::array();
  for (const auto& c : s.choices) choices.push_back(choice_to_json(c));
  return json{{"task", s.task}, {"choices", std::move(choices)}};
}

void save_checkpoint(const SuperNet& net, const std::filesystem::path& dir) {
  std::vector<Entry> entries;
  json variants = json::array();
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    for (const auto& v : net.slot(l).variants) {
      entries.push_back({"variant_weight", v.id, v.origin_task, l, &v.params.weight});
      entries.push_back({"variant_bias", v.id, v.origin_task, l, &v.params.bias});
      variants.push_back({{"id", v.id}, {"slot", l}, {"origin_task", v.origin_task}, {"reuse_tasks", v.reuse_tasks}});
    }
  }
  json adapters = json::array();
  for (const auto& a : net.adapters()) {
    entries.push_back({"adapter_first", a.id, a.owner_task, a.slot, &a.params.first});
    if (!a.params.second.empty()) entries.push_back({"adapter_second", a.id, a.owner_task, a.slot, &a.params.second});
    adapters.push_back({{"id", a.id}, {"slot", a.slot}, {"owner_task", a.owner_task}, {"variant", a.variant_id}});
  }
  for (std::size_t h = 0; h < net.heads().size(); ++h) {
    const TaskHead& head = net.heads()[h];
    entries.push_back({"head_weight", static_cast<int>(h), head.owner_task, 0, &head.params.weight});
    entries.push_back({"head_bias", static_cast<int>(h), head.owner_task, 0, &head.params.bias});
  }

  std::string blob;
  json manifest_entries = json::array();
  for (const auto& e : entries) {
    const std::size_t offset = blob.size();
    append_f32(blob, *e.tensor);
    manifest_entries.push_back({{"id", e.id},
                                {"kind", e.kind},
                                {"slot", e.slot},
                                {"shape", e.tensor->shape()},
                                {"owner_task", e.owner_task},
                                {"blob_offset", offset},
                                {"blob_len", blob.size() - offset}});
  }
  json structures = json::array();
  for (const auto& s : net.structures()) structures.push_back(structure_to_json(s));

  json manifest{{"version", kCheckpointVersion},
                {"topology", topology_to_json(net.topology())},
                {"head_mode", to_string(net.head_mode())},
                {"next_variant_id", CheckpointAccess::next_variant_id(net)},
                {"next_adapter_id", CheckpointAccess::next_adapter_id(net)},
                {"variants", std::move(variants)},
                {"adapters", std::move(adapters)},
                {"structures", std::move(structures)},
                {"entries", std::move(manifest_entries)},
                {"blob_bytes", blob.size()},
                {"blob_crc32", crc_of(blob)}};

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream m(dir / "manifest.json", std::ios::binary);
  std::ofstream w(dir / "weights.bin", std::ios::binary);
  if (!m || !w) throw CheckpointError(CheckpointErrc::io, "cannot write into " + dir.string());
  m << manifest.dump(2) << '\n';
  w.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!m || !w) throw CheckpointError(CheckpointErrc::io, "write failed in " + dir.string());
}

SuperNet load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.json", std::ios::binary);
  std::ifstream w(dir / "weights.bin", std::ios::binary);
  if (!m || !w) throw CheckpointError(CheckpointErrc::io, "missing manifest.json or weights.bin in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrc::malformed_manifest, e.what());
  }
  const std::string blob((std::istreambuf_iterator<char>(w)), std::istreambuf_iterator<char>());

  try {
    if (manifest.at("version").get<int>() != kCheckpointVersion) {
      throw CheckpointError(CheckpointErrc::version_mismatch,
                            "found version " + manifest.at("version").dump() + ", expected " +
                                std::to_string(kCheckpointVersion));
    }
    const auto declared = manifest.at("blob_bytes").get<std::size_t>();
    if (blob.size() < declared) {
      throw CheckpointError(CheckpointErrc::truncated_blob, "weights.bin has " + std::to_string(blob.size()) +
                                                               " bytes, manifest declares " + std::to_string(declared));
    }
    if (blob.size() != declared) {
      throw CheckpointError(CheckpointErrc::length_mismatch, "weights.bin has " + std::to_string(blob.size()) +
                                                                 " bytes, manifest declares " + std::to_string(declared));
    }
    std::size_t cursor = 0;
    for (const auto& e : manifest.at("entries")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("blob_offset").get<std::size_t>();
      const auto len = e.at("blob_len").get<std::size_t>();
      if (offset != cursor || len != numel(shape) * 4 || offset + len > declared) {
        throw CheckpointError(CheckpointErrc::length_mismatch,
                              "entry " + e.at("kind").get<std::string>() + " " + e.at("id").dump() +
                                  " has inconsistent offset/length");
      }
      cursor += len;
    }
    if (cursor != declared) {
      throw CheckpointError(CheckpointErrc::length_mismatch, "entries cover " + std::to_string(cursor) + " of " +
                                                                 std::to_string(declared) + " bytes");
    }
    if (crc_of(blob) != manifest.at("blob_crc32").get<std::uint32_t>()) {
      throw CheckpointError(CheckpointErrc::checksum_mismatch, "weights.bin does not match the manifest checksum");
    }

    SuperNet net(topology_from_json(manifest.at("topology")),
                 head_mode_from_string(manifest.at("head_mode").get<std::string>()));
    auto& slots = CheckpointAccess::slots(net);
    for (const auto& v : manifest.at("variants")) {
      LayerVariant var;
      var.id = v.at("id").get<int>();
      var.origin_task = v.at("origin_task").get<int>();
      var.reuse_tasks = v.at("reuse_tasks").get<std::vector<int>>();
      slots.at(v.at("slot").get<std::size_t>()).variants.push_back(std::move(var));
    }
    auto& adapters = CheckpointAccess::adapters(net);
    for (const auto& a : manifest.at("adapters")) {
      Adapter ad;
      ad.id = a.at("id").get<int>();
      ad.slot = a.at("slot").get<std::size_t>();
      ad.owner_task = a.at("owner_task").get<int>();
      ad.variant_id = a.at("variant").get<int>();
      adapters.push_back(std::move(ad));
    }
    auto& heads = CheckpointAccess::heads(net);
    for (const auto& e : manifest.at("entries")) {
      const std::string kind = e.at("kind").get<std::string>();
      const int id = e.at("id").get<int>();
      const auto slot = e.at("slot").get<std::size_t>();
      Tensor t = read_f32(blob, e.at("blob_offset").get<std::size_t>(), e.at("shape").get<Shape>());
      if (kind == "variant_weight") {
        slots.at(slot).variant(id).params.weight = std::move(t);
      } else if (kind == "variant_bias") {
        slots.at(slot).variant(id).params.bias = std::move(t);
      } else if (kind == "adapter_first" || kind == "adapter_second") {
        auto it = std::find_if(adapters.begin(), adapters.end(), [id](const Adapter& a) { return a.id == id; });
        if (it == adapters.end()) throw CheckpointError(CheckpointErrc::malformed_manifest, "unknown adapter entry");
        (kind == "adapter_first" ? it->params.first : it->params.second) = std::move(t);
      } else if (kind == "head_weight" || kind == "head_bias") {
        if (static_cast<std::size_t>(id) >= heads.size()) heads.resize(static_cast<std::size_t>(id) + 1);
        heads[static_cast<std::size_t>(id)].owner_task = e.at("owner_task").get<int>();
        (kind == "head_weight" ? heads[static_cast<std::size_t>(id)].params.weight
                               : heads[static_cast<std::size_t>(id)].params.bias) = std::move(t);
      } else {
        throw CheckpointError(CheckpointErrc::malformed_manifest, "unknown entry kind '" + kind + "'");
      }
    }
    auto& structures = CheckpointAccess::structures(net);
    for (const auto& s : manifest.at("structures")) {
      TaskStructure ts;
      ts.task = s.at("task").get<int>();
      for (const auto& c : s.at("choices")) {
        ts.choices.push_back({choice_kind_from_string(c.at("kind").get<std::string>()), c.at("variant").get<int>(),
                              c.at("adapter").get<int>()});
      }
      structures.push_back(std::move(ts));
    }
    CheckpointAccess::next_variant_id(net) = manifest.at("next_variant_id").get<int>();
    CheckpointAccess::next_adapter_id(net) = manifest.at("next_adapter_id").get<int>();
    CheckpointAccess::total_params(net) = net.recount_params();
    return net;
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrc::malformed_manifest, e.what());
  } catch (const ContractError& e) {
    throw CheckpointError(CheckpointErrc::malformed_manifest, e.what());
  }
}

}  // namespace l2g
