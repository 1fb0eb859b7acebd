#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <vector>

#include "geoformer/error.hpp"
#include "geoformer/graph.hpp"

namespace geoformer::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const fs::path& path, bool config_file) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    const std::string msg = "cannot read " + path.string();
    if (config_file) throw ConfigError(msg);
    throw LoadError(msg);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
  if (!out) throw LoadError("write failed: " + path.string());
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    }
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

using Setter = std::function<void(CliConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto sz = [&t](const char* key, std::size_t TrainConfig::*field) {
      t[key] = [field](CliConfig& c, const json& v, const std::string& k) {
        c.train.*field = get_as<std::size_t>(v, k);
      };
    };
    auto num = [&t](const char* key, double TrainConfig::*field) {
      t[key] = [field](CliConfig& c, const json& v, const std::string& k) {
        c.train.*field = get_as<double>(v, k);
      };
    };
    sz("hidden_dim", &TrainConfig::hidden_dim);
    sz("gcn_depth", &TrainConfig::gcn_depth);
    sz("epochs", &TrainConfig::epochs);
    sz("num_experts", &TrainConfig::num_experts);
    sz("expert_dim", &TrainConfig::expert_dim);
    sz("link_neg_ratio", &TrainConfig::link_neg_ratio);
    sz("descriptor_hops", &TrainConfig::descriptor_hops);
    sz("descriptor_cap", &TrainConfig::descriptor_cap);
    sz("batches", &TrainConfig::batches);
    sz("patience", &TrainConfig::patience);
    num("lr", &TrainConfig::lr);
    num("alpha", &TrainConfig::alpha);
    num("beta_attn", &TrainConfig::beta_attn);
    num("lambda_orth", &TrainConfig::lambda_orth);
    num("gamma_ent", &TrainConfig::gamma_ent);
    num("gamma_reg", &TrainConfig::gamma_reg);
    num("gamma_link", &TrainConfig::gamma_link);
    num("dropout", &TrainConfig::dropout);
    num("weight_decay", &TrainConfig::weight_decay);
    t["seed"] = [](CliConfig& c, const json& v, const std::string& k) {
      c.train.seed = get_as<std::uint64_t>(v, k);
    };
    t["variant"] = [](CliConfig& c, const json& v, const std::string& k) {
      c.train.variant = parse_variant(get_as<std::string>(v, k));
    };
    t["optimizer"] = [](CliConfig& c, const json& v, const std::string& k) {
      c.train.optimizer = get_as<std::string>(v, k);
    };
    t["projection_grad"] = [](CliConfig& c, const json& v, const std::string& k) {
      const std::string s = get_as<std::string>(v, k);
      if (s == "straight_through") {
        c.train.projection_grad = ProjectionGrad::straight_through;
      } else if (s == "exact") {
        c.train.projection_grad = ProjectionGrad::exact;
      } else {
        throw ConfigError("config key 'projection_grad' must be \"straight_through\" or \"exact\"");
      }
    };
    t["curvatures"] = [](CliConfig& c, const json& v, const std::string& k) {
      if (!v.is_array()) throw ConfigError("config key '" + k + "' must be an array of numbers");
      c.train.curvatures.clear();
      for (const json& e : v) c.train.curvatures.push_back(get_as<double>(e, k));
    };
    t["data_dir"] = [](CliConfig& c, const json& v, const std::string& k) {
      c.data_dir = get_as<std::string>(v, k);
    };
    t["out_dir"] = [](CliConfig& c, const json& v, const std::string& k) {
      c.out_dir = get_as<std::string>(v, k);
    };
    return t;
  }();
  return table;
}

json config_json(const CliConfig& c) {
  const TrainConfig& t = c.train;
  json j{{"variant", to_string(t.variant)},
         {"hidden_dim", t.hidden_dim},
         {"gcn_depth", t.gcn_depth},
         {"lr", t.lr},
         {"epochs", t.epochs},
         {"alpha", t.alpha},
         {"beta_attn", t.beta_attn},
         {"lambda_orth", t.lambda_orth},
         {"num_experts", t.num_experts},
         {"curvatures", t.curvatures},
         {"expert_dim", t.expert_dim},
         {"gamma_ent", t.gamma_ent},
         {"gamma_reg", t.gamma_reg},
         {"gamma_link", t.gamma_link},
         {"link_neg_ratio", t.link_neg_ratio},
         {"descriptor_hops", t.descriptor_hops},
         {"descriptor_cap", t.descriptor_cap},
         {"batches", t.batches},
         {"optimizer", t.optimizer},
         {"seed", t.seed},
         {"patience", t.patience},
         {"dropout", t.dropout},
         {"weight_decay", t.weight_decay},
         {"projection_grad",
          t.projection_grad == ProjectionGrad::exact ? "exact" : "straight_through"}};
  if (!c.data_dir.empty()) j["data_dir"] = c.data_dir;
  if (!c.out_dir.empty()) j["out_dir"] = c.out_dir;
  return j;
}

CliConfig apply_overrides(CliConfig base, const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, value, key);
  }
  validate_config(base.train);
  return base;
}

json metrics_json(const Metrics& m) {
  return json{{"accuracy", m.accuracy},
              {"weighted_f1", m.weighted_f1},
              {"macro_f1", m.macro_f1},
              {"per_class_f1", m.per_class_f1}};
}

// Maps library exceptions onto the exit-code taxonomy.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const LoadError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const SplitError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const RankError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const SingularityError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

CliConfig resolve_config(const TrainOptions& opts, const std::optional<fs::path>& fallback = {}) {
  CliConfig cfg;
  if (opts.config) {
    cfg = load_config(*opts.config);
  } else if (fallback && fs::exists(*fallback)) {
    cfg = load_config(*fallback);
  }
  if (opts.data) cfg.data_dir = opts.data->string();
  if (opts.out) cfg.out_dir = opts.out->string();
  if (opts.seed) cfg.train.seed = *opts.seed;
  if (cfg.data_dir.empty()) throw ConfigError("no data directory (use --data or data_dir)");
  if (cfg.out_dir.empty()) throw ConfigError("no output directory (use --out or out_dir)");
  return cfg;
}

// Trains and writes history.csv, model.json, config.json and finally metrics.json.
RunArtifacts train_into(const CliConfig& cfg, const Graph& g, const SplitMasks& masks,
                        const fs::path& out_dir) {
  fs::create_directories(out_dir);
  RunArtifacts run = train(cfg.train, g, masks);
  CliConfig recorded = cfg;
  recorded.out_dir.clear();
  recorded.data_dir.clear();
  write_file(out_dir / "config.json", config_json(recorded).dump(2) + "\n");
  write_file(out_dir / "history.csv", history_csv(run.history));
  write_file(out_dir / "model.json", serialize_params(run.params) + "\n");
  const json metrics{{"train", metrics_json(run.train)},
                     {"val", metrics_json(run.val)},
                     {"test", metrics_json(run.test)},
                     {"best_epoch", run.best_epoch},
                     {"epochs_run", run.history.size()}};
  write_file(out_dir / "metrics.json", metrics.dump(2) + "\n");
  return run;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SyntheticParams parse_synthetic_params(const std::string& kind, const std::string& text) {
  SyntheticParams p;
  p.kind = parse_synthetic_kind(kind);
  if (text.empty()) return p;
  std::string body = text;
  if (fs::exists(text)) body = read_file(text, true);
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator params: invalid JSON (") + e.what() + ")");
  }
  if (!doc.is_object()) throw ConfigError("generator params must be a JSON object");
  for (const auto& [key, v] : doc.items()) {
    if (key == "branching") {
      p.branching = get_as<std::size_t>(v, key);
    } else if (key == "depth") {
      p.depth = get_as<std::size_t>(v, key);
    } else if (key == "depth_bands") {
      p.depth_bands = get_as<std::size_t>(v, key);
    } else if (key == "block_sizes") {
      if (!v.is_array()) throw ConfigError("generator key 'block_sizes' must be an array");
      p.block_sizes.clear();
      for (const json& e : v) p.block_sizes.push_back(get_as<std::size_t>(e, key));
    } else if (key == "p_in") {
      p.p_in = get_as<double>(v, key);
    } else if (key == "p_out") {
      p.p_out = get_as<double>(v, key);
    } else if (key == "clique_size") {
      p.clique_size = get_as<std::size_t>(v, key);
    } else if (key == "clique_count") {
      p.clique_count = get_as<std::size_t>(v, key);
    } else if (key == "feature_dim") {
      p.feature_dim = get_as<std::size_t>(v, key);
    } else if (key == "feature_noise") {
      p.feature_noise = get_as<double>(v, key);
    } else if (key == "mean_scale") {
      p.mean_scale = get_as<double>(v, key);
    } else {
      throw ConfigError("unknown generator key '" + key + "'");
    }
  }
  return p;
}

}  // namespace

CliConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON (") + e.what() + ")");
  }
  return apply_overrides(CliConfig{}, doc);
}

CliConfig load_config(const fs::path& path) { return parse_config(read_file(path, true)); }

std::string config_to_json(const CliConfig& config) { return config_json(config).dump(2); }

std::string config_reference() {
  std::string out = "Config keys (JSON object; unknown keys are rejected) and defaults:\n";
  const json defaults = config_json(CliConfig{});
  for (const auto& [key, value] : defaults.items()) {
    out += "  " + key + " = " + value.dump() + "\n";
  }
  out += "  data_dir, out_dir = paths (overridden by --data / --out)\n";
  return out;
}

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const CliConfig cfg = resolve_config(opts);
    const auto [g, masks] = load_graph(cfg.data_dir);
    const RunArtifacts run = train_into(cfg, g, masks, cfg.out_dir);
    char buf[200];
    std::snprintf(buf, sizeof buf, "trained %zu epochs (best %zu): val acc %.4f, test acc %.4f\n",
                  run.history.size(), run.best_epoch, run.val.accuracy, run.test.accuracy);
    out << buf;
    return kExitOk;
  });
}

int cmd_eval(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::optional<fs::path> fallback;
    if (opts.out) fallback = *opts.out / "config.json";
    const CliConfig cfg = resolve_config(opts, fallback);
    const auto [g, masks] = load_graph(cfg.data_dir);
    const ModelParams params = deserialize_params(read_file(fs::path(cfg.out_dir) / "model.json", false));
    const ModelParams expected = init_params(cfg.train, g.num_features(), g.num_classes());
    for (const auto& [name, p] : expected) {
      if (!params.contains(name) || !params.value(name).same_shape(p.value)) {
        throw LoadError("model.json does not match the config: parameter '" + name + "'");
      }
    }
    const GraphContext ctx = make_context(g, cfg.train);
    const std::vector<int> pred = argmax_rows(predict_logits(params, ctx, cfg.train));
    json doc = json::object();
    for (const auto& [split, mask] : {std::pair{"train", &masks.train}, std::pair{"val", &masks.val},
                                      std::pair{"test", &masks.test}}) {
      if (mask_indices(*mask).empty()) continue;
      doc[split] = metrics_json(compute_metrics(pred, g.labels(), *mask, g.num_classes()));
    }
    write_file(fs::path(cfg.out_dir) / "eval.json", doc.dump(2) + "\n");
    out << doc.dump(2) << "\n";
    return kExitOk;
  });
}

int cmd_generate(const std::string& kind, const std::string& params, std::uint64_t seed,
                 const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const SyntheticParams p = parse_synthetic_params(kind, params);
    const auto [g, masks] = generate_synthetic(p, seed);
    save_graph(g, masks, out_dir);
    out << "wrote " << g.num_nodes() << " nodes, " << g.num_edges() << " edges to " << out_dir.string()
        << "\n";
    return kExitOk;
  });
}

int cmd_selftest(const std::string& suite, std::ostream& out, std::ostream& err,
                 const AttentionKernel* attention_kernel) {
  return guarded(err, [&] {
    std::vector<SuiteResult> results;
    if (suite == "geometry") {
      results.push_back(run_geometry_suite());
      results.push_back(run_projection_suite());
    } else if (suite == "attention") {
      results.push_back(attention_kernel ? run_attention_suite(0, *attention_kernel) : run_attention_suite());
    } else if (suite == "gradcheck") {
      results.push_back(run_gradcheck_suite());
    } else {
      throw ConfigError("unknown suite '" + suite + "' (expected geometry|attention|gradcheck)");
    }
    int code = kExitOk;
    for (const SuiteResult& r : results) {
      out << format_suite(r);
      if (const CheckResult* f = r.first_failure()) {
        err << "FAILED: " << f->name << "\n";
        code = kExitSelftest;
      }
    }
    return code;
  });
}

int cmd_sweep(const TrainOptions& opts, const fs::path& grid_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const CliConfig base = resolve_config(opts);
    json grid;
    try {
      grid = json::parse(read_file(grid_path, true));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("grid: invalid JSON (") + e.what() + ")");
    }
    if (!grid.is_object() || grid.empty()) throw ConfigError("grid must be a non-empty JSON object");
    std::vector<std::string> keys;
    std::vector<std::vector<json>> values;
    for (const auto& [key, list] : grid.items()) {
      if (key == "data_dir" || key == "out_dir" || setters().count(key) == 0) {
        throw ConfigError("grid key '" + key + "' is not a sweepable config key");
      }
      if (!list.is_array() || list.empty()) {
        throw ConfigError("grid key '" + key + "' must map to a non-empty list");
      }
      keys.push_back(key);
      values.emplace_back(list.begin(), list.end());
    }

    // Validate every combination before training anything.
    std::vector<CliConfig> runs;
    std::vector<std::size_t> idx(keys.size(), 0);
    for (;;) {
      json overrides = json::object();
      for (std::size_t i = 0; i < keys.size(); ++i) overrides[keys[i]] = values[i][idx[i]];
      runs.push_back(apply_overrides(base, overrides));
      bool done = true;
      for (std::size_t pos = keys.size(); pos-- > 0;) {
        if (++idx[pos] < values[pos].size()) {
          done = false;
          break;
        }
        idx[pos] = 0;
      }
      if (done) break;
    }

    const auto [g, masks] = load_graph(base.data_dir);
    const fs::path root(base.out_dir);
    fs::create_directories(root);

    std::string summary = "run,config_hash";
    for (const std::string& k : keys) summary += "," + k;
    summary += ",val_accuracy,val_weighted_f1,val_macro_f1,test_accuracy,test_weighted_f1,test_macro_f1\n";

    for (std::size_t r = 0; r < runs.size(); ++r) {
      CliConfig cfg = runs[r];
      cfg.out_dir.clear();
      cfg.data_dir.clear();
      const std::string canonical = config_json(cfg).dump();
      char hash[17];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
      char name[64];
      std::snprintf(name, sizeof name, "run_%03zu_%s", r, hash);
      const fs::path dir = root / name;
      if (fs::exists(dir / "metrics.json")) {
        out << name << ": already complete, skipping\n";
      } else {
        train_into(runs[r], g, masks, dir);
        out << name << ": done\n";
      }
      const json m = json::parse(read_file(dir / "metrics.json", false));
      summary += std::string(name) + "," + hash;
      const json cj = config_json(cfg);
      for (const std::string& k : keys) {
        std::string v = cj.at(k).dump();
        if (v.find(',') != std::string::npos) v = "\"" + v + "\"";
        summary += "," + v;
      }
      char buf[256];
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    m.at("val").at("accuracy").get<double>(), m.at("val").at("weighted_f1").get<double>(),
                    m.at("val").at("macro_f1").get<double>(), m.at("test").at("accuracy").get<double>(),
                    m.at("test").at("weighted_f1").get<double>(), m.at("test").at("macro_f1").get<double>());
      summary += buf;
    }
    write_file(root / "summary.csv", summary);
    out << "wrote " << (root / "summary.csv").string() << " (" << runs.size() << " runs)\n";
    return kExitOk;
  });
}

}  // namespace geoformer::cli
