/*
 * Copyright 2026 dmcm-lab authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dmcm/config_io.hpp"

#include "dmcm/metrics.hpp"
#include "dmcm/toml.hpp"

namespace dmcm {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config field " + path + ": " + what);
}

template <typename T>
T get_req(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) fail(path + key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(path + key, e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& path, const std::string& key,
         T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(path + key, e.what());
  }
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["method"] = method_name(cfg.method);
  j["budget"] = cfg.budget;
  j["eval_every"] = cfg.eval_every;
  j["eval_tasks"] = cfg.eval_task_count;
  j["eval_points"] = cfg.eval_points;
  j["trials"] = cfg.trials;
  j["exclusion_fraction"] = cfg.exclusion_fraction;
  j["seeds"] = cfg.seeds;
  j["eval_seed"] = cfg.eval_seed;
  if (cfg.restrict_amplitude) {
    j["restrict_amplitude"] = {cfg.restrict_amplitude->first,
                               cfg.restrict_amplitude->second};
  }

  json train;
  train["inner_lr"] = cfg.train.inner_lr;
  train["inner_decay"] = cfg.train.inner_decay;
  train["meta_lr"] = cfg.train.meta_lr;
  train["inner_steps"] = cfg.train.inner_steps;
  train["chain_tasks"] = cfg.train.chain_tasks;
  train["warmup_tasks"] = cfg.train.warmup_tasks;
  train["s_adapt"] = cfg.train.s_adapt;
  train["shots"] = cfg.train.shots;
  train["recombination"] = cfg.train.recombination;
  train["grad_order"] =
      cfg.train.order == GradOrder::Second ? "second" : "first";
  train["optimizer"] = cfg.train.optimizer == ThetaOpt::Adam ? "adam" : "sgd";
  train["mislabel_rate"] = cfg.train.mislabel_rate;
  j["train"] = std::move(train);

  json net;
  net["input_dim"] = cfg.network.input_dim;
  net["hidden"] = cfg.network.hidden;
  net["output_dim"] = cfg.network.output_dim;
  net["activation"] = cfg.network.activation;
  j["network"] = std::move(net);

  j["context"] = json::array();
  for (const ContextEntry& e : cfg.context.entries) {
    j["context"].push_back({{"name", e.name},
                            {"size", e.size},
                            {"inject_layer", e.inject_layer},
                            {"factors", e.factors}});
  }

  j["factors"] = json::array();
  for (const FactorSpec& f : cfg.factors) {
    j["factors"].push_back({{"name", f.name},
                            {"low", f.low},
                            {"high", f.high},
                            {"role", factor_role_name(f.role)},
                            {"active", f.active}});
  }
  j["partition_bins"] = cfg.partition_bins;
  j["excluded_cells"] = json::array();
  for (const auto& cell : cfg.excluded_cells) j["excluded_cells"].push_back(cell);
  return j;
}

ExperimentConfig config_from_json(const json& in) {
  const json& j = in.contains("config") ? in.at("config") : in;
  ExperimentConfig cfg;
  cfg.name = get_or<std::string>(j, "", "name", "run");
  try {
    cfg.method = method_from(get_req<std::string>(j, "", "method"));
  } catch (const std::invalid_argument& e) {
    fail("method", e.what());
  }
  cfg.budget = get_or<long long>(j, "", "budget", cfg.budget);
  cfg.eval_every = get_or<long long>(j, "", "eval_every", cfg.eval_every);
  cfg.eval_task_count = get_or<int>(j, "", "eval_tasks", cfg.eval_task_count);
  cfg.eval_points = get_or<int>(j, "", "eval_points", cfg.eval_points);
  cfg.trials = get_or<int>(j, "", "trials", cfg.trials);
  cfg.exclusion_fraction =
      get_or<double>(j, "", "exclusion_fraction", cfg.exclusion_fraction);
  cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "", "seeds", cfg.seeds);
  cfg.eval_seed = get_or<std::uint64_t>(j, "", "eval_seed", cfg.eval_seed);
  if (j.contains("restrict_amplitude")) {
    const auto v =
        get_req<std::vector<double>>(j, "", "restrict_amplitude");
    if (v.size() != 2) fail("restrict_amplitude", "expected [low, high]");
    cfg.restrict_amplitude = {v[0], v[1]};
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string p = "train.";
    cfg.train.inner_lr = get_or<double>(t, p, "inner_lr", cfg.train.inner_lr);
    cfg.train.inner_decay =
        get_or<double>(t, p, "inner_decay", cfg.train.inner_decay);
    cfg.train.meta_lr = get_or<double>(t, p, "meta_lr", cfg.train.meta_lr);
    cfg.train.inner_steps =
        get_or<int>(t, p, "inner_steps", cfg.train.inner_steps);
    cfg.train.chain_tasks =
        get_or<int>(t, p, "chain_tasks", cfg.train.chain_tasks);
    cfg.train.warmup_tasks =
        get_or<int>(t, p, "warmup_tasks", cfg.train.warmup_tasks);
    cfg.train.s_adapt = get_or<int>(t, p, "s_adapt", cfg.train.s_adapt);
    cfg.train.shots = get_or<int>(t, p, "shots", cfg.train.shots);
    cfg.train.recombination =
        get_or<bool>(t, p, "recombination", cfg.train.recombination);
    const std::string order = get_or<std::string>(t, p, "grad_order", "second");
    if (order == "second") {
      cfg.train.order = GradOrder::Second;
    } else if (order == "first") {
      cfg.train.order = GradOrder::First;
    } else {
      fail("train.grad_order", "must be 'first' or 'second'");
    }
    const std::string opt = get_or<std::string>(t, p, "optimizer", "sgd");
    if (opt == "sgd") {
      cfg.train.optimizer = ThetaOpt::Sgd;
    } else if (opt == "adam") {
      cfg.train.optimizer = ThetaOpt::Adam;
    } else {
      fail("train.optimizer", "must be 'sgd' or 'adam'");
    }
    cfg.train.mislabel_rate =
        get_or<double>(t, p, "mislabel_rate", cfg.train.mislabel_rate);
  }

  if (j.contains("network")) {
    const json& n = j.at("network");
    const std::string p = "network.";
    cfg.network.input_dim = get_or<int>(n, p, "input_dim", 1);
    cfg.network.hidden =
        get_or<std::vector<int>>(n, p, "hidden", cfg.network.hidden);
    cfg.network.output_dim = get_or<int>(n, p, "output_dim", 1);
    cfg.network.activation =
        get_or<std::string>(n, p, "activation", "relu");
  }

  cfg.context.entries.clear();
  if (j.contains("context")) {
    int k = 0;
    for (const json& e : j.at("context")) {
      const std::string p = "context[" + std::to_string(k) + "].";
      ContextEntry entry;
      entry.name = get_or<std::string>(e, p, "name", "ctx" + std::to_string(k));
      entry.size = get_req<int>(e, p, "size");
      entry.inject_layer = get_or<int>(e, p, "inject_layer", 0);
      entry.factors = get_or<std::vector<std::string>>(e, p, "factors", {});
      cfg.context.entries.push_back(std::move(entry));
      ++k;
    }
  }

  cfg.factors.clear();
  if (!j.contains("factors")) fail("factors", "missing");
  int fi = 0;
  for (const json& f : j.at("factors")) {
    const std::string p = "factors[" + std::to_string(fi) + "].";
    FactorSpec spec;
    spec.name = get_req<std::string>(f, p, "name");
    spec.low = get_req<double>(f, p, "low");
    spec.high = get_req<double>(f, p, "high");
    try {
      spec.role = factor_role_from(get_or<std::string>(f, p, "role", spec.name));
    } catch (const std::invalid_argument& e) {
      fail(p + "role", e.what());
    }
    spec.active = get_or<bool>(f, p, "active", true);
    cfg.factors.push_back(std::move(spec));
    ++fi;
  }

  cfg.partition_bins = get_or<std::vector<int>>(
      j, "", "partition_bins", std::vector<int>(cfg.factors.size(), 1));
  cfg.excluded_cells.clear();
  if (j.contains("excluded_cells")) {
    for (const json& cell : j.at("excluded_cells")) {
      cfg.excluded_cells.insert(cell.get<std::vector<int>>());
    }
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const std::string ext = path.extension().string();
  json j;
  if (ext == ".toml") {
    j = parse_toml(text);
  } else if (ext == ".json") {
    j = json::parse(text);
  } else {
    throw std::invalid_argument("config file must be .toml or .json: " +
                                path.string());
  }
  return config_from_json(j);
}

void write_manifest(const std::filesystem::path& path,
                    const ExperimentConfig& cfg, const std::string& subcommand,
                    double wall_seconds) {
  json j;
  j["format_version"] = 1;
  j["subcommand"] = subcommand;
  j["config"] = config_to_json(cfg);
  j["wall_seconds"] = wall_seconds;
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace dmcm
