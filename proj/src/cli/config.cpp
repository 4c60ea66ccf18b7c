#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kdvr/cli.hpp"
#include "kdvr/errors.hpp"

namespace kdvr::cli {

namespace {

using json = nlohmann::ordered_json;

// Reads members of one JSON object, rejecting unknown keys.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "wrong type");
    }
  }
  void get_size(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }
  void get_u64(const std::string& key, std::uint64_t& out) {
    std::size_t v = out;
    get_size(key, v);
    out = v;
  }
  void get_real(const std::string& key, double& out) {
    if (!has(key)) return;
    if (!j_.at(key).is_number()) throw ConfigError(field(key), "expected a number");
    out = j_.at(key).get<double>();
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto convert(const std::string& field, const std::string& value, F&& fn) {
  try {
    return fn(value);
  } catch (const InvalidArgument& e) {
    throw ConfigError(field, e.what());
  }
}

std::string to_string(Sampling s) {
  return s == Sampling::with_replacement ? "with_replacement" : "epoch_shuffle";
}

Sampling sampling_from_string(const std::string& s) {
  if (s == "with_replacement") return Sampling::with_replacement;
  if (s == "epoch_shuffle") return Sampling::epoch_shuffle;
  throw InvalidArgument("unknown sampling '" + s + "'");
}

std::string to_string(LambdaPolicy p) {
  return p == LambdaPolicy::fixed ? "fixed" : "optimal_per_phase";
}

LambdaPolicy lambda_policy_from_string(const std::string& s) {
  if (s == "fixed") return LambdaPolicy::fixed;
  if (s == "optimal_per_phase") return LambdaPolicy::optimal_per_phase;
  throw InvalidArgument("unknown lambda policy '" + s + "'");
}

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::real: return "real";
    case TargetKind::probability: return "probability";
    case TargetKind::class_index: return "class_index";
  }
  return "unknown";
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "real") return TargetKind::real;
  if (s == "probability") return TargetKind::probability;
  if (s == "class_index") return TargetKind::class_index;
  throw InvalidArgument("unknown target kind '" + s + "'");
}

std::string to_string(DatasetSpec::Source s) {
  switch (s) {
    case DatasetSpec::Source::idx: return "idx";
    case DatasetSpec::Source::csv: return "csv";
    case DatasetSpec::Source::synthetic: return "synthetic";
  }
  return "unknown";
}

DatasetSpec::Source source_from_string(const std::string& s) {
  if (s == "idx") return DatasetSpec::Source::idx;
  if (s == "csv") return DatasetSpec::Source::csv;
  if (s == "synthetic") return DatasetSpec::Source::synthetic;
  throw InvalidArgument("unknown dataset source '" + s + "'");
}

DatasetSpec parse_dataset(const json& j) {
  Fields f(j, "dataset");
  DatasetSpec d;
  std::string s = to_string(d.source);
  f.get("source", s);
  d.source = convert("dataset.source", s, source_from_string);

  std::string kind = to_string(d.synthetic.kind);
  f.get("kind", kind);
  d.synthetic.kind = convert("dataset.kind", kind, synth_kind_from_string);
  f.get_size("n", d.synthetic.n);
  f.get_size("d", d.synthetic.d);
  f.get_real("noise", d.synthetic.noise);
  f.get_u64("seed", d.synthetic.seed);
  f.get_size("classes", d.synthetic.classes);
  f.get_real("weight_scale", d.synthetic.weight_scale);

  std::string images, labels, path;
  f.get("images", images);
  f.get("labels", labels);
  f.get("path", path);
  d.images = images;
  d.labels = labels;
  d.csv = path;
  f.get("header", d.csv_options.header);
  f.get("label_column", d.csv_options.label_column);
  std::string target = to_string(d.csv_options.target_kind);
  f.get("target", target);
  d.csv_options.target_kind = convert("dataset.target", target, target_kind_from_string);
  f.get_size("num_classes", d.csv_options.num_classes);

  std::string norm = to_string(d.normalization);
  f.get("normalization", norm);
  d.normalization = convert("dataset.normalization", norm, normalization_from_string);
  if (f.has("subset")) {
    Fields sub(f.at("subset"), "dataset.subset");
    std::size_t count = 0;
    std::uint64_t seed = 0;
    sub.get_size("count", count);
    sub.get_u64("seed", seed);
    sub.finish();
    if (count == 0) throw ConfigError("dataset.subset.count", "must be positive");
    d.subset = std::make_pair(count, seed);
  }
  f.finish();

  if (d.source == DatasetSpec::Source::idx && (d.images.empty() || d.labels.empty())) {
    throw ConfigError("dataset.images", "idx source needs images and labels paths");
  }
  if (d.source == DatasetSpec::Source::csv && d.csv.empty()) {
    throw ConfigError("dataset.path", "csv source needs a path");
  }
  if (d.source == DatasetSpec::Source::synthetic && (d.synthetic.n == 0 || d.synthetic.d == 0)) {
    throw ConfigError("dataset.n", "synthetic n and d must be positive");
  }
  return d;
}

json dataset_json(const DatasetSpec& d) {
  json j;
  j["source"] = to_string(d.source);
  j["kind"] = to_string(d.synthetic.kind);
  j["n"] = d.synthetic.n;
  j["d"] = d.synthetic.d;
  j["noise"] = d.synthetic.noise;
  j["seed"] = d.synthetic.seed;
  j["classes"] = d.synthetic.classes;
  j["weight_scale"] = d.synthetic.weight_scale;
  j["images"] = d.images.string();
  j["labels"] = d.labels.string();
  j["path"] = d.csv.string();
  j["header"] = d.csv_options.header;
  j["label_column"] = d.csv_options.label_column;
  j["target"] = to_string(d.csv_options.target_kind);
  j["num_classes"] = d.csv_options.num_classes;
  j["normalization"] = to_string(d.normalization);
  if (d.subset) {
    j["subset"] = {{"count", d.subset->first}, {"seed", d.subset->second}};
  } else {
    j["subset"] = nullptr;
  }
  return j;
}

ScheduleSpec parse_schedule(const json& j) {
  Fields f(j, "schedule");
  ScheduleSpec s;
  std::string mode = to_string(s.mode);
  f.get("mode", mode);
  s.mode = convert("schedule.mode", mode, mode_from_string);
  f.get_size("epochs", s.epochs);
  f.get_size("total_steps", s.total_steps);
  f.get_size("batch_size", s.batch_size);
  if (f.has("gamma")) {
    const json& g = f.at("gamma");
    if (g.is_number()) {
      s.gamma.value = g.get<double>();
    } else {
      Fields gf(g, "schedule.gamma");
      gf.get_real("scale", s.gamma.scale);
      gf.get("inverse_of", s.gamma.inverse_of);
      gf.finish();
      if (s.gamma.inverse_of != "L" && s.gamma.inverse_of != "L_expected") {
        throw ConfigError("schedule.gamma.inverse_of", "expected \"L\" or \"L_expected\"");
      }
      if (!(s.gamma.scale > 0.0)) throw ConfigError("schedule.gamma.scale", "must be positive");
    }
  }
  f.get_size("phase_length", s.phase_length);
  f.get("phase_rule", s.phase_rule);
  if (!s.phase_rule.empty() && s.phase_rule != "1/(gamma mu)") {
    throw ConfigError("schedule.phase_rule", "expected \"1/(gamma mu)\" or empty");
  }
  std::string sampling = to_string(s.sampling);
  f.get("sampling", sampling);
  s.sampling = convert("schedule.sampling", sampling, sampling_from_string);
  std::string policy = to_string(s.lambda_policy);
  f.get("lambda_policy", policy);
  s.lambda_policy = convert("schedule.lambda_policy", policy, lambda_policy_from_string);
  if (f.has("c")) {
    const json& c = f.at("c");
    if (c.is_number()) {
      s.c.value = c.get<double>();
      if (!(s.c.value > 0.0)) throw ConfigError("schedule.c", "must be positive");
    } else if (c.is_string()) {
      s.c.rule = c.get<std::string>();
      if (s.c.rule != "mu/4" && s.c.rule != "L" && s.c.rule != "2mu") {
        throw ConfigError("schedule.c", "expected a number, \"mu/4\", \"L\" or \"2mu\"");
      }
    } else {
      throw ConfigError("schedule.c", "wrong type");
    }
  }
  if (f.has("compressor")) {
    Fields cf(f.at("compressor"), "schedule.compressor");
    cf.get("kind", s.compressor.kind);
    cf.get_size("k", s.compressor.k);
    cf.get_real("sparsity", s.compressor.sparsity);
    std::size_t levels = s.compressor.levels;
    cf.get_size("levels", levels);
    s.compressor.levels = static_cast<unsigned>(levels);
    cf.get_u64("mask_seed", s.compressor.mask_seed);
    cf.finish();
    const std::string& k = s.compressor.kind;
    if (k != "identity" && k != "rand_k" && k != "fixed_mask" && k != "quantize") {
      throw ConfigError("schedule.compressor.kind", "unknown compressor '" + k + "'");
    }
  }
  f.get("variance_probe", s.variance_probe);
  if (s.variance_probe != "none" && s.variance_probe != "exact" &&
      s.variance_probe != "monte_carlo") {
    throw ConfigError("schedule.variance_probe", "expected none, exact or monte_carlo");
  }
  f.get_size("probe_trials", s.probe_trials);
  f.get("track_gap", s.track_gap);
  f.get("cache_teacher", s.cache_teacher);
  f.get_real("weight_decay", s.weight_decay);
  f.finish();

  if ((s.epochs == 0) == (s.total_steps == 0)) {
    throw ConfigError("schedule.epochs", "set exactly one of epochs and total_steps");
  }
  if (s.batch_size == 0) throw ConfigError("schedule.batch_size", "must be positive");
  if (!(s.weight_decay >= 0.0)) throw ConfigError("schedule.weight_decay", "must be nonnegative");
  if (s.gamma.inverse_of.empty() && !(s.gamma.value > 0.0)) {
    throw ConfigError("schedule.gamma", "must be positive");
  }
  return s;
}

json schedule_json(const ScheduleSpec& s) {
  json j;
  j["mode"] = to_string(s.mode);
  j["epochs"] = s.epochs;
  j["total_steps"] = s.total_steps;
  j["batch_size"] = s.batch_size;
  if (s.gamma.inverse_of.empty()) {
    j["gamma"] = s.gamma.value;
  } else {
    j["gamma"] = {{"scale", s.gamma.scale}, {"inverse_of", s.gamma.inverse_of}};
  }
  j["phase_length"] = s.phase_length;
  j["phase_rule"] = s.phase_rule;
  j["sampling"] = to_string(s.sampling);
  j["lambda_policy"] = to_string(s.lambda_policy);
  if (s.c.rule.empty()) {
    j["c"] = s.c.value;
  } else {
    j["c"] = s.c.rule;
  }
  j["compressor"] = {{"kind", s.compressor.kind},
                     {"k", s.compressor.k},
                     {"sparsity", s.compressor.sparsity},
                     {"levels", s.compressor.levels},
                     {"mask_seed", s.compressor.mask_seed}};
  j["variance_probe"] = s.variance_probe;
  j["probe_trials"] = s.probe_trials;
  j["track_gap"] = s.track_gap;
  j["cache_teacher"] = s.cache_teacher;
  j["weight_decay"] = s.weight_decay;
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<config>", std::string("invalid JSON: ") + e.what());
  }
  Fields f(j, "");
  ExperimentConfig c;
  if (!f.has("dataset")) throw ConfigError("dataset", "missing");
  c.dataset = parse_dataset(f.at("dataset"));
  f.get_real("test_fraction", c.test_fraction);
  if (!(c.test_fraction >= 0.0 && c.test_fraction < 1.0)) {
    throw ConfigError("test_fraction", "must be in [0, 1)");
  }
  f.get_u64("split_seed", c.split_seed);
  if (f.has("objective")) {
    Fields of(f.at("objective"), "objective");
    std::string kind = to_string(c.objective.kind);
    of.get("kind", kind);
    c.objective.kind = convert("objective.kind", kind, objective_kind_from_string);
    of.get("bias", c.objective.bias);
    of.get_size("hidden", c.objective.hidden);
    of.finish();
    if (c.objective.hidden == 0) throw ConfigError("objective.hidden", "must be positive");
  }
  if (!f.has("schedule")) throw ConfigError("schedule", "missing");
  c.schedule = parse_schedule(f.at("schedule"));
  if (f.has("lambda_grid")) {
    const json& g = f.at("lambda_grid");
    if (!g.is_array()) throw ConfigError("lambda_grid", "expected an array");
    c.lambda_grid.clear();
    for (const auto& v : g) {
      if (!v.is_number()) throw ConfigError("lambda_grid", "expected numbers");
      const double lam = v.get<double>();
      if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("lambda_grid", "values must lie in [0, 1]");
      c.lambda_grid.push_back(lam);
    }
    if (c.lambda_grid.empty()) throw ConfigError("lambda_grid", "must be nonempty");
  }
  if (f.has("teacher")) {
    Fields tf(f.at("teacher"), "teacher");
    tf.get("source", c.teacher.source);
    tf.get_real("quality", c.teacher.quality);
    tf.get_u64("seed", c.teacher.seed);
    tf.get_size("reference_iters", c.teacher.reference_iters);
    std::string path;
    tf.get("path", path);
    c.teacher.path = path;
    tf.finish();
    const std::string& s = c.teacher.source;
    if (s != "none" && s != "sgd" && s != "oracle" && s != "reference" && s != "self_refresh" &&
        s != "path") {
      throw ConfigError("teacher.source", "unknown teacher source '" + s + "'");
    }
    if (c.teacher.quality < 0.0) throw ConfigError("teacher.quality", "must be non-negative");
    if (s == "path" && c.teacher.path.empty()) throw ConfigError("teacher.path", "missing");
  }
  if (f.has("seeds")) {
    const json& s = f.at("seeds");
    if (!s.is_array()) throw ConfigError("seeds", "expected an array");
    c.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("seeds", "expected non-negative integers");
      }
      c.seeds.push_back(v.get<std::uint64_t>());
    }
    if (c.seeds.empty()) throw ConfigError("seeds", "must be nonempty");
  }
  std::string out = c.output_dir.string();
  f.get("output_dir", out);
  c.output_dir = out;
  f.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json j;
  j["dataset"] = dataset_json(c.dataset);
  j["test_fraction"] = c.test_fraction;
  j["split_seed"] = c.split_seed;
  j["objective"] = {{"kind", to_string(c.objective.kind)},
                    {"bias", c.objective.bias},
                    {"hidden", c.objective.hidden}};
  j["schedule"] = schedule_json(c.schedule);
  j["lambda_grid"] = c.lambda_grid;
  j["teacher"] = {{"source", c.teacher.source},
                  {"quality", c.teacher.quality},
                  {"seed", c.teacher.seed},
                  {"reference_iters", c.teacher.reference_iters},
                  {"path", c.teacher.path.string()}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir.string();
  return j.dump(2) + "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string_view rest = text;
  while (true) {
    const auto comma = rest.find(',');
    std::string_view item = rest.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("--seeds", "expected a comma-separated list of non-negative integers");
    }
    seeds.push_back(v);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return seeds;
}

}  // namespace kdvr::cli
