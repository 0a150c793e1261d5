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
#include "dmcm/checkpoint.hpp"

#include <json.hpp>

#include "dmcm/config_io.hpp"
#include "dmcm/metrics.hpp"

namespace dmcm {

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", t.values()}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(),
                j.at("values").get<std::vector<double>>());
}

json params_to_json(const ParamSet& p) {
  json j = json::array();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    j.push_back({{"weight", tensor_to_json(p.weights[l])},
                 {"bias", tensor_to_json(p.biases[l])}});
  }
  return j;
}

void params_from_json(const json& j, ParamSet& into) {
  if (j.size() != into.weights.size()) {
    throw std::invalid_argument(
        "checkpoint: theta has " + std::to_string(j.size()) +
        " layers, config expects " + std::to_string(into.weights.size()));
  }
  for (std::size_t l = 0; l < into.weights.size(); ++l) {
    Tensor w = tensor_from_json(j.at(l).at("weight"));
    Tensor b = tensor_from_json(j.at(l).at("bias"));
    if (w.shape() != into.weights[l].shape()) {
      throw std::invalid_argument(
          "checkpoint: theta layer " + std::to_string(l) + " weight shape " +
          shape_str(w.shape()) + " does not match config shape " +
          shape_str(into.weights[l].shape()));
    }
    if (b.shape() != into.biases[l].shape()) {
      throw std::invalid_argument(
          "checkpoint: theta layer " + std::to_string(l) + " bias shape " +
          shape_str(b.shape()) + " does not match config shape " +
          shape_str(into.biases[l].shape()));
    }
    into.weights[l] = std::move(w);
    into.biases[l] = std::move(b);
  }
}

json task_to_json(const SineTask& t) { return json(t.values); }
SineTask task_from_json(const json& j) {
  return SineTask{j.get<std::vector<double>>()};
}

json bank_to_json(const ContextBank& b) {
  json j = json::array();
  for (const Tensor& phi : b.phis) j.push_back(tensor_to_json(phi));
  return j;
}

json chain_to_json(const ChainState& c) {
  json j;
  j["cursor"] = c.cursor;
  j["tasks_done"] = c.tasks_done;
  j["prev_task"] = c.prev_task ? task_to_json(*c.prev_task) : json();
  j["bank"] = bank_to_json(c.bank);
  j["last_adapted"] = c.last_adapted;
  json tasks = json::array();
  for (const SineTask& t : c.last_task) tasks.push_back(task_to_json(t));
  j["last_task"] = tasks;
  json saved = json::array();
  for (const auto& dq : c.saved) {
    json per = json::array();
    for (const SavedContext& sc : dq) {
      per.push_back({{"adapted_at", sc.adapted_at},
                     {"phi", tensor_to_json(sc.phi)},
                     {"task", task_to_json(sc.task)}});
    }
    saved.push_back(per);
  }
  j["saved"] = saved;
  return j;
}

void chain_from_json(const json& j, ChainState& c) {
  c.cursor = j.at("cursor").get<int>();
  c.tasks_done = j.at("tasks_done").get<long long>();
  if (j.at("prev_task").is_null()) {
    c.prev_task.reset();
  } else {
    c.prev_task = task_from_json(j.at("prev_task"));
  }
  c.bank.phis.clear();
  for (const json& phi : j.at("bank")) c.bank.phis.push_back(tensor_from_json(phi));
  c.last_adapted = j.at("last_adapted").get<std::vector<long long>>();
  c.last_task.clear();
  for (const json& t : j.at("last_task")) c.last_task.push_back(task_from_json(t));
  c.saved.clear();
  for (const json& per : j.at("saved")) {
    std::deque<SavedContext> dq;
    for (const json& sc : per) {
      dq.push_back({sc.at("adapted_at").get<long long>(),
                    tensor_from_json(sc.at("phi")),
                    task_from_json(sc.at("task"))});
    }
    c.saved.push_back(std::move(dq));
  }
}

json adam_to_json(const AdamState& a) {
  return {{"m", a.m}, {"v", a.v}, {"t", a.t},
          {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

void adam_from_json(const json& j, AdamState& a) {
  a.m = j.at("m").get<std::vector<std::vector<double>>>();
  a.v = j.at("v").get<std::vector<std::vector<double>>>();
  a.t = j.at("t").get<long long>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
}

json rows_to_json(const std::vector<MetricRow>& rows) {
  json j = json::array();
  for (const MetricRow& r : rows) {
    j.push_back({{"method", r.method},
                 {"seed", r.seed},
                 {"meta_step", r.meta_step},
                 {"mean_mse", r.mean_mse},
                 {"ci95", r.ci95},
                 {"trial", r.trial},
                 {"wall_time_s", r.wall_time_s}});
  }
  return j;
}

std::vector<MetricRow> rows_from_json(const json& j) {
  std::vector<MetricRow> rows;
  for (const json& r : j) {
    MetricRow row;
    row.method = r.at("method").get<std::string>();
    row.seed = r.at("seed").get<std::uint64_t>();
    row.meta_step = r.at("meta_step").get<long long>();
    row.mean_mse = r.at("mean_mse").get<double>();
    row.ci95 = r.at("ci95").get<double>();
    row.trial = r.at("trial").get<std::string>();
    row.wall_time_s = r.at("wall_time_s").get<double>();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Trainer& trainer) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = config_to_json(trainer.config());
  j["seed"] = trainer.seed();
  j["meta_step"] = trainer.steps_done();
  j["diverged"] = trainer.diverged();
  j["trial_tag"] = trainer.trial_tag;
  j["stream_rng"] = trainer.stream().rng().serialize();
  j["theta"] = params_to_json(trainer.params());
  if (trainer.is_dmcm()) {
    j["chain"] = chain_to_json(trainer.dmcm().chain());
    j["label_rng"] = trainer.dmcm().label_rng().serialize();
    j["adam"] = adam_to_json(trainer.dmcm().adam());
  } else {
    j["adam"] = adam_to_json(trainer.baseline().adam());
  }
  j["rows"] = rows_to_json(trainer.rows());
  write_text_file(path, j.dump() + "\n");
}

std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path));
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint: format version " +
                                std::to_string(version) + " != expected " +
                                std::to_string(kCheckpointVersion));
  }
  if (j.at("diverged").get<bool>()) {
    throw std::invalid_argument("checkpoint: run had diverged; not resumable");
  }
  const ExperimentConfig cfg = config_from_json(j.at("config"));
  const std::uint64_t seed = j.at("seed").get<std::uint64_t>();
  auto trainer = std::make_unique<Trainer>(cfg, seed);
  params_from_json(j.at("theta"), trainer->params());
  trainer->stream().rng() =
      Rng::deserialize(j.at("stream_rng").get<std::string>());
  if (trainer->is_dmcm()) {
    chain_from_json(j.at("chain"), trainer->dmcm().chain());
    trainer->dmcm().label_rng() =
        Rng::deserialize(j.at("label_rng").get<std::string>());
    adam_from_json(j.at("adam"), trainer->dmcm().adam());
    trainer->dmcm().set_steps_done(j.at("meta_step").get<long long>());
  } else {
    adam_from_json(j.at("adam"), trainer->baseline().adam());
    trainer->baseline().set_steps_done(j.at("meta_step").get<long long>());
  }
  trainer->trial_tag = j.at("trial_tag").get<std::string>();
  trainer->rows() = rows_from_json(j.at("rows"));
  return trainer;
}

}  // namespace dmcm
