#include "l2g/experiments/config.hpp"

#include <fstream>
#include <set>

#include "l2g/supernet/checkpoint.hpp"

namespace l2g {
namespace {

using nlohmann::json;

/// Reads fields of one JSON object and rejects the keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (v == nullptr) throw ConfigError(at(key), "missing required field");
    return *v;
  }

  void count(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_count(*v, at(key));
  }
  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_count(*v, at(key));
  }
  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void flag(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void text(const std::string& key, std::string& out) {
    if (const json* v = find(key)) out = as_text(*v, at(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
    }
  }

  static std::uint64_t as_count(const json& v, const std::string& path) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(path, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  static std::string as_text(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ContractError& e) {
    throw ConfigError(path, e.what());
  }
}

template <typename T, typename Parse>
std::vector<T> string_list(const json& v, const std::string& path, Parse parse) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of strings");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string item = path + "[" + std::to_string(i) + "]";
    const std::string name = Fields::as_text(v[i], item);
    checked(item, [&] { out.push_back(parse(name)); });
  }
  return out;
}

void check_topology_keys(const json& j) {
  Fields f(j, "topology");
  f.require("input");
  f.require("classes");
  const json& layers = f.require("layers");
  f.finish();
  if (!layers.is_array()) throw ConfigError("topology.layers", "expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Fields l(layers[i], "topology.layers[" + std::to_string(i) + "]");
    for (const char* key : {"type", "out", "kernel", "stride", "padding", "pool"}) l.find(key);
    l.finish();
  }
}

StreamConfig parse_stream(const json& j) {
  Fields f(j, "stream");
  StreamConfig s;
  const std::string kind = Fields::as_text(f.require("kind"), "stream.kind");
  std::size_t n_tasks = 0;
  bool has_tasks = f.find("n_tasks") != nullptr;
  f.count("n_tasks", n_tasks);
  if (kind == "permuted") {
    s.kind = StreamKind::permuted;
    f.text("data_dir", s.data_dir);
    auto& o = s.permuted;
    if (has_tasks) o.n_tasks = n_tasks;
    f.count("train_per_task", o.train_per_task);
    f.count("val_per_task", o.val_per_task);
    f.count("test_per_task", o.test_per_task);
  } else if (kind == "split") {
    s.kind = StreamKind::split;
    f.text("data_dir", s.data_dir);
    auto& o = s.split;
    if (has_tasks) o.n_tasks = n_tasks;
    f.count("train_per_task", o.train_per_task);
    f.count("val_per_task", o.val_per_task);
    f.count("test_per_task", o.test_per_task);
    f.flag("as_images", o.as_images);
  } else if (kind == "synthetic") {
    s.kind = StreamKind::synthetic;
    auto& o = s.synthetic;
    if (has_tasks) o.n_tasks = n_tasks;
    f.count("dims", o.dims);
    f.count("classes", o.classes);
    f.count("train_per_task", o.train_per_task);
    f.count("val_per_task", o.val_per_task);
    f.count("test_per_task", o.test_per_task);
    f.number("spread", o.spread);
    f.flag("permute", o.permute);
    f.flag("identical", o.identical);
    std::string mode = to_string(o.head_mode);
    f.text("head_mode", mode);
    checked("stream.head_mode", [&] { o.head_mode = head_mode_from_string(mode); });
  } else {
    throw ConfigError("stream.kind", "unknown stream '" + kind + "' (expected permuted, split or synthetic)");
  }
  f.finish();
  if (has_tasks && n_tasks == 0) throw ConfigError("stream.n_tasks", "must be >= 1");
  return s;
}

SearchConfig parse_search(const json& j) {
  Fields f(j, "search");
  SearchConfig c;
  f.count("epochs", c.epochs);
  f.count("warmup_epochs", c.warmup_epochs);
  f.count("batch", c.batch);
  f.number("lr_w", c.lr_w);
  f.number("momentum", c.momentum);
  f.number("weight_decay", c.weight_decay);
  f.number("lr_alpha", c.lr_alpha);
  f.number("beta", c.beta);
  f.number("val_fraction", c.val_fraction);
  f.flag("allow_adapt", c.allow_adapt);
  f.finish();
  checked("search", [&] { c.validate(); });
  return c;
}

RetrainConfig parse_retrain(const json& j) {
  Fields f(j, "retrain");
  RetrainConfig c;
  f.count("epochs", c.epochs);
  f.count("batch", c.batch);
  f.number("lr", c.lr);
  f.number("momentum", c.momentum);
  f.number("weight_decay", c.weight_decay);
  f.number("lr_scale", c.strategy.lr_scale);
  f.number("lambda_reg", c.strategy.lambda_reg);
  f.number("lambda_ewc", c.strategy.lambda_ewc);
  f.count("fisher_samples", c.strategy.fisher_samples);
  f.finish();
  checked("retrain", [&] { c.validate(); });
  return c;
}

BaselineConfig parse_baseline(const json& j) {
  Fields f(j, "baseline");
  BaselineConfig c;
  f.count("epochs", c.epochs);
  f.count("batch", c.batch);
  f.number("lr", c.lr);
  f.number("momentum", c.momentum);
  f.number("weight_decay", c.weight_decay);
  f.number("lambda_ewc", c.lambda_ewc);
  f.number("lambda_l2", c.lambda_l2);
  f.count("fisher_samples", c.fisher_samples);
  f.count("first_layer_width", c.first_layer_width);
  f.finish();
  checked("baseline", [&] { c.validate(); });
  return c;
}

}  // namespace

ConfigError::ConfigError(std::string path, const std::string& what)
    : std::runtime_error(path + ": " + what), path_(std::move(path)) {}

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::permuted:
      return "permuted";
    case StreamKind::split:
      return "split";
    case StreamKind::synthetic:
      return "synthetic";
  }
  return "?";
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  stream.permuted.seed = s;
  stream.split.seed = s;
  stream.synthetic.seed = s;
  search.seed = s;
  retrain.seed = s;
  baseline.seed = s;
}

ExperimentConfig config_from_json(const json& j) {
  Fields f(j, "");
  ExperimentConfig c;
  c.stream = parse_stream(f.require("stream"));
  const json& topo = f.require("topology");
  check_topology_keys(topo);
  try {
    c.topology = topology_from_json(topo);
  } catch (const ContractError& e) {
    throw ConfigError("topology", e.what());
  }
  if (const json* v = f.find("search")) c.search = parse_search(*v);
  if (const json* v = f.find("retrain")) c.retrain = parse_retrain(*v);
  if (const json* v = f.find("baseline")) c.baseline = parse_baseline(*v);
  if (const json* v = f.find("strategies")) {
    c.strategies = string_list<StrategyKind>(*v, "strategies", strategy_from_string);
    if (c.strategies.empty()) throw ConfigError("strategies", "needs at least one strategy");
  }
  if (const json* v = f.find("baselines")) c.baselines = string_list<BaselineKind>(*v, "baselines", baseline_from_string);
  if (const json* v = f.find("betas")) {
    if (!v->is_array()) throw ConfigError("betas", "expected an array of numbers");
    c.betas.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string item = "betas[" + std::to_string(i) + "]";
      if (!(*v)[i].is_number() || !((*v)[i].get<double>() >= 0.0)) throw ConfigError(item, "expected a number >= 0");
      c.betas.push_back((*v)[i].get<double>());
    }
  }
  std::string out = c.output_dir.string();
  f.text("output_dir", out);
  c.output_dir = out;
  std::uint64_t seed = 0;
  f.seed("seed", seed);
  f.finish();
  c.apply_seed(seed);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON in ") + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c) {
  json stream{{"kind", to_string(c.stream.kind)}};
  switch (c.stream.kind) {
    case StreamKind::permuted: {
      const auto& o = c.stream.permuted;
      stream.update({{"data_dir", c.stream.data_dir},
                     {"n_tasks", o.n_tasks},
                     {"train_per_task", o.train_per_task},
                     {"val_per_task", o.val_per_task},
                     {"test_per_task", o.test_per_task}});
      break;
    }
    case StreamKind::split: {
      const auto& o = c.stream.split;
      stream.update({{"data_dir", c.stream.data_dir},
                     {"n_tasks", o.n_tasks},
                     {"train_per_task", o.train_per_task},
                     {"val_per_task", o.val_per_task},
                     {"test_per_task", o.test_per_task},
                     {"as_images", o.as_images}});
      break;
    }
    case StreamKind::synthetic: {
      const auto& o = c.stream.synthetic;
      stream.update({{"n_tasks", o.n_tasks},
                     {"dims", o.dims},
                     {"classes", o.classes},
                     {"train_per_task", o.train_per_task},
                     {"val_per_task", o.val_per_task},
                     {"test_per_task", o.test_per_task},
                     {"spread", o.spread},
                     {"permute", o.permute},
                     {"identical", o.identical},
                     {"head_mode", to_string(o.head_mode)}});
      break;
    }
  }
  const auto& s = c.search;
  const auto& r = c.retrain;
  const auto& b = c.baseline;
  json strategies = json::array(), baselines = json::array();
  for (auto k : c.strategies) strategies.push_back(to_string(k));
  for (auto k : c.baselines) baselines.push_back(to_string(k));
  return json{{"seed", c.seed},
              {"output_dir", c.output_dir.string()},
              {"stream", std::move(stream)},
              {"topology", topology_to_json(c.topology)},
              {"search",
               {{"epochs", s.epochs},
                {"warmup_epochs", s.warmup_epochs},
                {"batch", s.batch},
                {"lr_w", s.lr_w},
                {"momentum", s.momentum},
                {"weight_decay", s.weight_decay},
                {"lr_alpha", s.lr_alpha},
                {"beta", s.beta},
                {"val_fraction", s.val_fraction},
                {"allow_adapt", s.allow_adapt}}},
              {"retrain",
               {{"epochs", r.epochs},
                {"batch", r.batch},
                {"lr", r.lr},
                {"momentum", r.momentum},
                {"weight_decay", r.weight_decay},
                {"lr_scale", r.strategy.lr_scale},
                {"lambda_reg", r.strategy.lambda_reg},
                {"lambda_ewc", r.strategy.lambda_ewc},
                {"fisher_samples", r.strategy.fisher_samples}}},
              {"strategies", std::move(strategies)},
              {"baselines", std::move(baselines)},
              {"baseline",
               {{"epochs", b.epochs},
                {"batch", b.batch},
                {"lr", b.lr},
                {"momentum", b.momentum},
                {"weight_decay", b.weight_decay},
                {"lambda_ewc", b.lambda_ewc},
                {"lambda_l2", b.lambda_l2},
                {"fisher_samples", b.fisher_samples},
                {"first_layer_width", b.first_layer_width}}},
              {"betas", c.betas}};
}

TaskStream build_stream(const ExperimentConfig& c) {
  if (c.stream.kind == StreamKind::synthetic) return synthetic_stream(c.stream.synthetic);
  const auto dir = resolve_data_dir(c.stream.data_dir);
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  const ImageDataset base = load_mnist(dir);
  if (c.stream.kind == StreamKind::permuted) return permuted_stream(base, c.stream.permuted);
  return split_stream(base, c.stream.split);
}

}  // namespace l2g
