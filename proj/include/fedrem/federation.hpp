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

// Federated orchestration: client sampling, local training, periodic
// compressed upload, server aggregation and the EMA shadow, plus the dense
// FedAvg baseline.
//
// Synchronization semantics (default): a client adopts the broadcast global
// backbone only after it has uploaded (and before its first round), so local
// progress between uploads is kept and each upload is measured against the
// client's last synchronization point. `resync_every_round` switches to the
// stricter reading where every round starts from the broadcast parameters and
// work done in non-upload rounds is discarded.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedrem/compression.hpp"
#include "fedrem/data.hpp"
#include "fedrem/metrics.hpp"
#include "fedrem/nn.hpp"

namespace fedrem {

enum class Mode { Epfl, FedAvg };

std::string to_string(Mode m);
Mode parse_mode(std::string_view s);

struct FeatureFlags {
  bool split_head = true;
  bool periodic_sync = true;
  bool top_k = true;
  bool quantization = true;
  bool ema = true;
};

struct RunConfig {
  Mode mode = Mode::Epfl;
  int rounds = 40;
  int local_epochs = 2;
  int sync_period = 5;
  double density = 0.01;
  double client_fraction = 1.0;
  double ema_beta = 0.99;
  FeatureFlags features;
  std::uint64_t seed = 1;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double huber_delta = 1.0;
  Index hidden1 = 256;
  Index hidden2 = 256;
  HeadKind head = HeadKind::TwoLayer;  // fedavg always uses a single shared head
  Index head_hidden = 128;
  double dropout = 0.1;
  bool resync_every_round = false;
  bool weighted_aggregation = false;
  int threads = 1;
  bool record_wall_time = false;

  // Throws ConfigError naming the offending field.
  void validate() const;

  int effective_period() const { return mode == Mode::Epfl && features.periodic_sync ? sync_period : 1; }
  double effective_density() const { return mode == Mode::Epfl && features.top_k ? density : 1.0; }
  bool ema_active() const { return mode == Mode::Epfl && features.ema; }
  bool shared_head() const { return mode == Mode::FedAvg || !features.split_head; }
};

struct RoundRecord {
  int round = 0;  // 0 = evaluation before any training
  std::string scenario;
  Mode mode = Mode::Epfl;
  MetricBundle metrics;
  std::uint64_t cum_uplink_bytes = 0;
  int payloads = 0;  // uploads aggregated this round
  double wall_ms = 0.0;
};

struct ServerState {
  Eigen::VectorXd theta;  // backbone, followed by the head when the head is shared
  std::optional<Eigen::VectorXd> shadow;
  Index backbone_size = 0;
  int round = 0;
  std::uint64_t cum_uplink_bytes = 0;
  std::vector<RoundRecord> history;
};

struct ClientState {
  int id = 0;
  const ClientDataset* data = nullptr;
  BackboneParams<double> backbone;
  HeadParams<double> head;  // never uploaded unless the head is shared
  Eigen::VectorXd anchor;   // parameters at the last synchronization
  ErrorFeedbackCompressor codec;
  AdamState<double> backbone_opt;
  AdamState<double> head_opt;
  std::mt19937_64 rng;
  bool needs_sync = true;
};

// Uniform sample without replacement of max(1, round(fraction * n)) client ids,
// returned ascending. Deterministic in (seed, round).
std::vector<int> sample_clients(int n, double fraction, std::uint64_t seed, int round);

// theta + mean(updates); weights (if given) are normalized. No updates: theta.
Eigen::VectorXd aggregate(const Eigen::VectorXd& theta, const std::vector<FlatUpdate>& updates,
                          const std::vector<double>& weights = {});

// shadow <- beta * shadow + (1 - beta) * theta
void ema_update(Eigen::VectorXd& shadow, const Eigen::VectorXd& theta, double beta);

// Runs E epochs of shuffled minibatch Adam on (backbone, head). Returns the
// mean minibatch loss; NaN/inf signals divergence.
double local_train(BackboneParams<double>& backbone, HeadParams<double>& head, AdamState<double>& backbone_opt,
                   AdamState<double>& head_opt, const ClientDataset& data, int epochs, const RunConfig& cfg,
                   std::mt19937_64& rng, bool freeze_head = false);

struct RoundEvent {
  int round;  // round index t that just completed
  const ServerState& server;
  const std::vector<Payload>& payloads;
};

using RoundObserver = std::function<void(const RoundEvent&)>;

class FederatedRun {
 public:
  FederatedRun(const ScenarioPartition& partition, RunConfig cfg);

  // One communication round; appends a RoundRecord.
  void step();
  MetricBundle evaluate() const;

  const ServerState& server() const { return server_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const RunConfig& config() const { return cfg_; }
  const BackboneDims& backbone_dims() const { return bdims_; }
  const HeadDims& head_dims() const { return hdims_; }

  BackboneParams<double> global_backbone() const;
  std::optional<HeadParams<double>> global_head() const;

  void set_observer(RoundObserver obs) { observer_ = std::move(obs); }

  // Client side of one round: (re)synchronize, train, and at upload rounds run
  // the error-feedback codec. Returns the payload when one is produced.
  std::optional<Payload> client_update(ClientState& client, int round);

 private:
  void record(int round, int payloads, double wall_ms);
  void step_epfl(const std::vector<int>& sampled, std::vector<Payload>& payloads);
  void step_fedavg(const std::vector<int>& sampled, std::vector<Payload>& payloads);
  Eigen::VectorXd shared_vector(const ClientState& c) const;
  void assign_shared(ClientState& c, const Eigen::VectorXd& v) const;

  const ScenarioPartition* partition_;
  RunConfig cfg_;
  BackboneDims bdims_;
  HeadDims hdims_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::vector<Eigen::MatrixXd> test_labels_db_;
  RoundObserver observer_;
};

struct TrainingResult {
  std::vector<RoundRecord> log;
  BackboneParams<double> backbone;  // global backbone after the last round
  std::optional<BackboneParams<double>> ema_backbone;
  std::optional<HeadParams<double>> shared_head;
  std::vector<HeadParams<double>> heads;     // per-client heads (personalized mode)
};

TrainingResult run_training(const ScenarioPartition& partition, const RunConfig& cfg, RoundObserver observer = {});

}  // namespace fedrem
