// Copyright 2026 The fedrem Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include "fedrem/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "fedrem/random.hpp"

namespace fedrem {

std::string to_string(Mode m) { return m == Mode::Epfl ? "epfl" : "fedavg"; }

Mode parse_mode(std::string_view s) {
  if (s == "epfl") return Mode::Epfl;
  if (s == "fedavg") return Mode::FedAvg;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected epfl or fedavg)");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid run config: " + what); };
  if (rounds < 0) fail("rounds must be >= 0");
  if (local_epochs < 1) fail("local_epochs must be >= 1");
  if (sync_period < 1) fail("sync_period must be >= 1");
  if (!(density > 0.0 && density <= 1.0)) fail("density must be in (0, 1]");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) fail("client_fraction must be in (0, 1]");
  if (!(ema_beta >= 0.0 && ema_beta <= 1.0)) fail("ema_beta must be in [0, 1]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(huber_delta > 0.0)) fail("huber_delta must be positive");
  if (hidden1 < 1 || hidden2 < 1 || head_hidden < 1) fail("layer widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (threads < 1) fail("threads must be >= 1");
}

std::vector<int> sample_clients(int n, double fraction, std::uint64_t seed, int round) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("client fraction must be in (0, 1]");
  if (n <= 0) return {};
  const int m = std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (m == n) return all;
  std::mt19937_64 rng(derive_seed(seed, {21, static_cast<std::uint64_t>(round)}));
  std::vector<int> picked;
  std::sample(all.begin(), all.end(), std::back_inserter(picked), m, rng);
  return picked;
}

Eigen::VectorXd aggregate(const Eigen::VectorXd& theta, const std::vector<FlatUpdate>& updates,
                          const std::vector<double>& weights) {
  if (updates.empty()) return theta;
  if (!weights.empty() && weights.size() != updates.size()) {
    throw AggregationError("aggregate: " + std::to_string(weights.size()) + " weights for " +
                           std::to_string(updates.size()) + " updates");
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(theta.size());
  double total = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (updates[i].size() != theta.size()) {
      throw AggregationError("aggregate: update " + std::to_string(i) + " has length " +
                             std::to_string(updates[i].size()) + ", expected " + std::to_string(theta.size()));
    }
    if (weights.empty()) {
      sum += updates[i];
    } else {
      sum += weights[i] * updates[i];
      total += weights[i];
    }
  }
  if (weights.empty()) return theta + sum / static_cast<double>(updates.size());
  if (!(total > 0.0)) throw AggregationError("aggregate: weights sum to zero");
  return theta + sum / total;
}

void ema_update(Eigen::VectorXd& shadow, const Eigen::VectorXd& theta, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("EMA beta must be in [0, 1]");
  if (shadow.size() != theta.size()) throw DimensionError("EMA shadow does not match the global parameters");
  shadow = beta * shadow + (1.0 - beta) * theta;
}

double local_train(BackboneParams<double>& backbone, HeadParams<double>& head, AdamState<double>& backbone_opt,
                   AdamState<double>& head_opt, const ClientDataset& data, int epochs, const RunConfig& cfg,
                   std::mt19937_64& rng, bool freeze_head) {
  const Index n = data.train_size();
  if (n == 0 || epochs == 0) return 0.0;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double loss_sum = 0.0;
  int batches = 0;
  GradientSet<double> grads;
  Batch<double> x;
  Batch<double> y;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min<Index>(cfg.batch_size, n - start);
      x.resize(data.train_x.rows(), len);
      y.resize(data.train_y.rows(), len);
      for (Index j = 0; j < len; ++j) {
        x.col(j) = data.train_x.col(order[static_cast<std::size_t>(start + j)]);
        y.col(j) = data.train_y.col(order[static_cast<std::size_t>(start + j)]);
      }
      const double loss = loss_and_gradients(backbone, head, x, y, cfg.huber_delta, rng, grads);
      if (!std::isfinite(loss)) return loss;
      adam_step(backbone_opt, backbone.flat(), grads.backbone.flat(), adam);
      if (!freeze_head) adam_step(head_opt, head.flat(), grads.head.flat(), adam);
      loss_sum += loss;
      ++batches;
    }
  }
  return loss_sum / batches;
}

// ---------------------------------------------------------------------------

FederatedRun::FederatedRun(const ScenarioPartition& partition, RunConfig cfg)
    : partition_(&partition), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (partition.clients.empty()) throw ConfigError("partition has no clients");
  bdims_ = BackboneDims{partition.input_dim(), cfg_.hidden1, cfg_.hidden2, kLatentDim};
  hdims_ = HeadDims{cfg_.mode == Mode::FedAvg ? HeadKind::Single : cfg_.head, kLatentDim, cfg_.head_hidden,
                    partition.num_bs, cfg_.dropout};

  const auto backbone0 = init_backbone<double>(bdims_, derive_seed(cfg_.seed, {1}));
  server_.backbone_size = bdims_.parameter_count();
  if (cfg_.shared_head()) {
    const auto head0 = init_head<double>(hdims_, derive_seed(cfg_.seed, {2}));
    server_.theta.resize(server_.backbone_size + hdims_.parameter_count());
    server_.theta << backbone0.flat(), head0.flat();
  } else {
    server_.theta = backbone0.flat();
  }
  if (cfg_.ema_active()) server_.shadow = server_.theta;

  const Index shared_len = server_.theta.size();
  CodecOptions codec{cfg_.effective_density(), cfg_.mode == Mode::Epfl && cfg_.features.top_k,
                     cfg_.mode == Mode::Epfl && cfg_.features.quantization};
  clients_.reserve(partition.clients.size());
  for (const ClientDataset& d : partition.clients) {
    ClientState c;
    c.id = d.id;
    c.data = &d;
    c.backbone = backbone0;
    c.head = init_head<double>(hdims_, derive_seed(cfg_.seed, {5, static_cast<std::uint64_t>(d.id)}));
    c.codec = ErrorFeedbackCompressor(shared_len, codec);
    c.backbone_opt = AdamState<double>::zeros(bdims_.parameter_count());
    c.head_opt = AdamState<double>::zeros(hdims_.parameter_count());
    c.rng.seed(derive_seed(cfg_.seed, {7, static_cast<std::uint64_t>(d.id)}));
    c.anchor = server_.theta;
    clients_.push_back(std::move(c));
    test_labels_db_.push_back(denormalize(d.test_y, d.stats));
  }
  record(0, 0, 0.0);
}

Eigen::VectorXd FederatedRun::shared_vector(const ClientState& c) const {
  if (!cfg_.shared_head()) return c.backbone.flat();
  Eigen::VectorXd v(server_.theta.size());
  v << c.backbone.flat(), c.head.flat();
  return v;
}

void FederatedRun::assign_shared(ClientState& c, const Eigen::VectorXd& v) const {
  c.backbone.flat() = v.head(server_.backbone_size);
  if (cfg_.shared_head()) c.head.flat() = v.tail(v.size() - server_.backbone_size);
}

BackboneParams<double> FederatedRun::global_backbone() const {
  return BackboneParams<double>::from_flat(bdims_, server_.theta.head(server_.backbone_size));
}

std::optional<HeadParams<double>> FederatedRun::global_head() const {
  if (!cfg_.shared_head()) return std::nullopt;
  return HeadParams<double>::from_flat(hdims_, server_.theta.tail(server_.theta.size() - server_.backbone_size));
}

std::optional<Payload> FederatedRun::client_update(ClientState& c, int round) {
  if (cfg_.resync_every_round || c.needs_sync) {
    assign_shared(c, server_.theta);
    c.anchor = server_.theta;
    c.needs_sync = false;
  }
  const BackboneParams<double> backbone_before = c.backbone;
  const HeadParams<double> head_before = c.head;
  const double loss =
      local_train(c.backbone, c.head, c.backbone_opt, c.head_opt, *c.data, cfg_.local_epochs, cfg_, c.rng);
  if (!std::isfinite(loss)) {
    std::cerr << "warning: client " << c.id << " diverged in round " << round << "; update dropped\n";
    c.backbone = backbone_before;
    c.head = head_before;
    return std::nullopt;
  }
  if (round % cfg_.effective_period() != 0) return std::nullopt;
  const FlatUpdate delta = shared_vector(c) - c.anchor;
  c.needs_sync = true;
  return c.codec.compress(delta, static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(c.id));
}

namespace {

template <typename Fn>
void parallel_for(const std::vector<int>& items, int threads, Fn&& fn) {
  const int n = static_cast<int>(items.size());
  const int workers = std::min(threads, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
}

}  // namespace

void FederatedRun::step_epfl(const std::vector<int>& sampled, std::vector<Payload>& payloads) {
  const int t = server_.round;
  std::vector<std::optional<Payload>> slots(sampled.size());
  parallel_for(sampled, cfg_.threads, [&](int i) { slots[i] = client_update(clients_[sampled[i]], t); });

  std::vector<FlatUpdate> updates;
  std::vector<double> weights;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) continue;
    const Payload& p = *slots[i];
    if (payload_length(p) != server_.theta.size()) {
      throw AggregationError("round " + std::to_string(t) + ": client " + std::to_string(sampled[i]) +
                             " sent an update of the wrong length");
    }
    server_.cum_uplink_bytes += uplink_bytes(p);
    updates.push_back(decode_payload(p));
    if (cfg_.weighted_aggregation) weights.push_back(static_cast<double>(clients_[sampled[i]].data->train_size()));
    payloads.push_back(p);
  }
  server_.theta = aggregate(server_.theta, updates, weights);
  if (server_.shadow) ema_update(*server_.shadow, server_.theta, cfg_.ema_beta);
}

// Dense FedAvg: every sampled client starts from the full global model, trains,
// and uploads the float32-accounted difference every round.
void FederatedRun::step_fedavg(const std::vector<int>& sampled, std::vector<Payload>& payloads) {
  const int t = server_.round;
  std::vector<std::optional<FlatUpdate>> deltas(sampled.size());
  parallel_for(sampled, cfg_.threads, [&](int i) {
    ClientState& c = clients_[sampled[i]];
    assign_shared(c, server_.theta);
    const double loss =
        local_train(c.backbone, c.head, c.backbone_opt, c.head_opt, *c.data, cfg_.local_epochs, cfg_, c.rng);
    if (!std::isfinite(loss)) {
      std::cerr << "warning: client " << c.id << " diverged in round " << t << "; update dropped\n";
      return;
    }
    deltas[i] = shared_vector(c) - server_.theta;
  });
  std::vector<FlatUpdate> updates;
  std::vector<double> weights;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!deltas[i]) continue;
    RawUpdate dense;
    dense.round = static_cast<std::uint32_t>(t);
    dense.client = static_cast<std::uint32_t>(sampled[i]);
    dense.length = static_cast<std::uint32_t>(deltas[i]->size());
    server_.cum_uplink_bytes += dense_bytes(deltas[i]->size());
    if (cfg_.weighted_aggregation) weights.push_back(static_cast<double>(clients_[sampled[i]].data->train_size()));
    updates.push_back(std::move(*deltas[i]));
    payloads.push_back(std::move(dense));
  }
  server_.theta = aggregate(server_.theta, updates, weights);
}

void FederatedRun::step() {
  const auto start = std::chrono::steady_clock::now();
  const auto sampled =
      sample_clients(static_cast<int>(clients_.size()), cfg_.client_fraction, cfg_.seed, server_.round);
  std::vector<Payload> payloads;
  if (cfg_.mode == Mode::Epfl) {
    step_epfl(sampled, payloads);
  } else {
    step_fedavg(sampled, payloads);
  }
  const int t = server_.round;
  ++server_.round;
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  record(server_.round, static_cast<int>(payloads.size()), ms);
  if (observer_) observer_(RoundEvent{t, server_, payloads});
}

MetricBundle FederatedRun::evaluate() const {
  const Eigen::VectorXd& eval_theta = server_.shadow ? *server_.shadow : server_.theta;
  const auto backbone = BackboneParams<double>::from_flat(bdims_, eval_theta.head(server_.backbone_size));
  std::optional<HeadParams<double>> shared;
  if (cfg_.shared_head()) {
    shared = HeadParams<double>::from_flat(hdims_, eval_theta.tail(eval_theta.size() - server_.backbone_size));
  }
  std::vector<Eigen::MatrixXd> residuals;
  residuals.reserve(clients_.size());
  for (std::size_t i = 0; i < clients_.size(); ++i) {
    const ClientState& c = clients_[i];
    const HeadParams<double>& head = shared ? *shared : c.head;
    const Eigen::MatrixXd pred = denormalize(predict(backbone, head, c.data->test_x), c.data->stats);
    residuals.push_back(pred - test_labels_db_[i]);
  }
  return summarize(residuals, to_megabytes(server_.cum_uplink_bytes));
}

void FederatedRun::record(int round, int payloads, double wall_ms) {
  RoundRecord r;
  r.round = round;
  r.scenario = to_string(partition_->scenario);
  r.mode = cfg_.mode;
  r.metrics = evaluate();
  r.cum_uplink_bytes = server_.cum_uplink_bytes;
  r.payloads = payloads;
  r.wall_ms = cfg_.record_wall_time ? wall_ms : 0.0;
  server_.history.push_back(std::move(r));
}

TrainingResult run_training(const ScenarioPartition& partition, const RunConfig& cfg, RoundObserver observer) {
  FederatedRun run(partition, cfg);
  run.set_observer(std::move(observer));
  for (int t = 0; t < cfg.rounds; ++t) run.step();
  TrainingResult result;
  result.log = run.server().history;
  result.backbone = run.global_backbone();
  if (run.server().shadow) {
    result.ema_backbone =
        BackboneParams<double>::from_flat(run.backbone_dims(), run.server().shadow->head(run.server().backbone_size));
  }
  result.shared_head = run.global_head();
  if (!cfg.shared_head()) {
    for (const ClientState& c : run.clients()) result.heads.push_back(c.head);
  }
  return result;
}

}  // namespace fedrem
