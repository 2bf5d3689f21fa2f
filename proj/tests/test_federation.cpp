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

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fedrem/federation.hpp"
#include "fedrem/run_io.hpp"
#include "support/temp_dir.hpp"

namespace fedrem {
namespace {

const ScenarioPartition& tiny_partition() {
  static const ScenarioPartition part = [] {
    SyntheticMapConfig m;
    m.seed = 5;
    m.width = 24;
    m.height = 24;
    m.num_features = 4;
    PartitionConfig p;
    p.rows = 2;
    p.cols = 2;
    return build_partition(generate_synthetic_map(m), Scenario::Heavy, p);
  }();
  return part;
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.rounds = 6;
  cfg.local_epochs = 1;
  cfg.sync_period = 2;
  cfg.density = 0.05;
  cfg.hidden1 = 12;
  cfg.hidden2 = 10;
  cfg.head_hidden = 8;
  cfg.batch_size = 16;
  return cfg;
}

RunConfig degenerate(RunConfig cfg) {
  cfg.features = FeatureFlags{false, false, false, false, false};
  cfg.head = HeadKind::Single;
  return cfg;
}

TEST(SampleClients, Examples) {
  EXPECT_EQ(sample_clients(5, 1.0, 1, 0), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(sample_clients(90, 0.1, 1, 3).size(), 9u);
  EXPECT_EQ(sample_clients(90, 0.001, 1, 3).size(), 1u);
  EXPECT_EQ(sample_clients(90, 0.3, 4, 7), sample_clients(90, 0.3, 4, 7));
  EXPECT_NE(sample_clients(90, 0.3, 4, 7), sample_clients(90, 0.3, 4, 8));
  EXPECT_THROW(sample_clients(5, 0.0, 1, 0), ParameterError);
  EXPECT_THROW(sample_clients(5, 1.5, 1, 0), ParameterError);
}

TEST(SampleClients, PropertySortedDistinctInRange) {
  for (int round = 0; round < 50; ++round) {
    const auto s = sample_clients(37, 0.4, 11, round);
    EXPECT_EQ(s.size(), 15u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), s.size());
    EXPECT_GE(s.front(), 0);
    EXPECT_LT(s.back(), 37);
  }
}

TEST(Aggregate, Examples) {
  const Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(4, 1, 4);
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(4, 0.5);
  EXPECT_EQ(aggregate(theta, {d}), theta + d);
  EXPECT_EQ(aggregate(theta, {d, Eigen::VectorXd(-d)}), theta);
  EXPECT_EQ(aggregate(theta, {}), theta);
  EXPECT_THROW(aggregate(theta, {Eigen::VectorXd::Zero(3)}), AggregationError);
  EXPECT_THROW(aggregate(theta, {d}, {1.0, 2.0}), AggregationError);
  EXPECT_THROW(aggregate(theta, {d}, {0.0}), AggregationError);
  const Eigen::VectorXd w = aggregate(theta, {d, Eigen::VectorXd::Zero(4)}, {3.0, 1.0});
  EXPECT_TRUE(w.isApprox(theta + 0.75 * d));
}

TEST(Ema, Examples) {
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 2.0);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(3);
  ema_update(s, theta, 0.0);
  EXPECT_EQ(s, theta);
  s.setZero();
  ema_update(s, theta, 1.0);
  EXPECT_TRUE(s.isZero(0.0));
  double gap = 2.0;
  for (int t = 0; t < 20; ++t) {
    ema_update(s, theta, 0.9);
    const double new_gap = (s - theta).cwiseAbs().maxCoeff();
    EXPECT_NEAR(new_gap, 0.9 * gap, 1e-12);
    gap = new_gap;
  }
  EXPECT_THROW(ema_update(s, theta, 1.1), ParameterError);
  Eigen::VectorXd wrong = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(ema_update(wrong, theta, 0.5), DimensionError);
}

TEST(RunConfigTest, ValidationNamesTheField) {
  auto expect_reject = [](RunConfig cfg, const char* field) {
    try {
      cfg.validate();
      FAIL() << "expected rejection of " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  RunConfig c;
  c.sync_period = 0;
  expect_reject(c, "sync_period");
  c = RunConfig{};
  c.local_epochs = 0;
  expect_reject(c, "local_epochs");
  c = RunConfig{};
  c.client_fraction = 0.0;
  expect_reject(c, "client_fraction");
  c = RunConfig{};
  c.density = 0.0;
  expect_reject(c, "density");
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(FederatedRunTest, ZeroRoundsLogsInitialEvaluationOnly) {
  auto cfg = tiny_config();
  cfg.rounds = 0;
  const auto result = run_training(tiny_partition(), cfg);
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_EQ(result.log[0].round, 0);
  EXPECT_EQ(result.log[0].cum_uplink_bytes, 0u);
  EXPECT_TRUE(std::isfinite(result.log[0].metrics.rmse_macro));
}

TEST(FederatedRunTest, SyncCadenceAndHeadLocality) {
  for (int R : {1, 2, 3}) {
    auto cfg = tiny_config();
    cfg.rounds = 7;
    cfg.sync_period = R;
    FederatedRun run(tiny_partition(), cfg);
    const Eigen::Index backbone_len = run.backbone_dims().parameter_count();
    int sync_events = 0;
    run.set_observer([&](const RoundEvent& e) {
      if (e.round % R == 0) {
        EXPECT_EQ(e.payloads.size(), 4u) << "round " << e.round;
        ++sync_events;
      } else {
        EXPECT_TRUE(e.payloads.empty()) << "round " << e.round;
      }
      for (const auto& p : e.payloads) EXPECT_EQ(payload_length(p), backbone_len);
    });
    for (int t = 0; t < cfg.rounds; ++t) run.step();
    EXPECT_EQ(sync_events, (7 + R - 1) / R);
  }
}

TEST(FederatedRunTest, NoSplitHeadUploadsTheHead) {
  auto cfg = tiny_config();
  cfg.features.split_head = false;
  cfg.sync_period = 1;
  cfg.rounds = 1;
  FederatedRun run(tiny_partition(), cfg);
  const HeadDims hd{cfg.head, kLatentDim, cfg.head_hidden, 4, cfg.dropout};
  run.set_observer([&](const RoundEvent& e) {
    ASSERT_FALSE(e.payloads.empty());
    EXPECT_EQ(payload_length(e.payloads[0]), run.backbone_dims().parameter_count() + hd.parameter_count());
  });
  run.step();
  EXPECT_TRUE(run.global_head().has_value());
}

TEST(FederatedRunTest, ByteCounterMatchesPayloadFormula) {
  auto cfg = tiny_config();
  FederatedRun run(tiny_partition(), cfg);
  std::uint64_t expected = 0;
  std::uint64_t previous = 0;
  run.set_observer([&](const RoundEvent& e) {
    for (const auto& p : e.payloads) {
      const auto& q = std::get<QuantizedUpdate>(p);
      expected += 24 + 5 * q.nnz();
      EXPECT_EQ(encode(q).size(), 24 + 5 * q.nnz());
    }
    EXPECT_EQ(e.server.cum_uplink_bytes, expected);
    EXPECT_GE(e.server.cum_uplink_bytes, previous);
    previous = e.server.cum_uplink_bytes;
  });
  for (int t = 0; t < cfg.rounds; ++t) run.step();
  EXPECT_GT(expected, 0u);
}

TEST(FederatedRunTest, FedAvgChargesDenseFullModel) {
  auto cfg = tiny_config();
  cfg.mode = Mode::FedAvg;
  cfg.rounds = 3;
  const auto result = run_training(tiny_partition(), cfg);
  const BackboneDims bd{tiny_partition().input_dim(), cfg.hidden1, cfg.hidden2, kLatentDim};
  const HeadDims hd{HeadKind::Single, kLatentDim, cfg.head_hidden, 4, cfg.dropout};
  const std::uint64_t per_round = 4u * 4u * static_cast<std::uint64_t>(bd.parameter_count() + hd.parameter_count());
  for (std::size_t t = 0; t < result.log.size(); ++t) EXPECT_EQ(result.log[t].cum_uplink_bytes, per_round * t);
  EXPECT_FALSE(result.ema_backbone.has_value());
}

TEST(FederatedRunTest, FedAvgSingleClientTakesItsLocalModel) {
  ScenarioPartition one = tiny_partition();
  one.clients.resize(1);
  auto cfg = tiny_config();
  cfg.mode = Mode::FedAvg;
  FederatedRun run(one, cfg);
  run.step();
  Eigen::VectorXd local(run.server().theta.size());
  local << run.clients()[0].backbone.flat(), run.clients()[0].head.flat();
  EXPECT_LE((run.server().theta - local).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FederatedRunTest, DegenerateEpflMatchesFedAvg) {
  auto epfl_cfg = degenerate(tiny_config());
  auto fedavg_cfg = tiny_config();
  fedavg_cfg.mode = Mode::FedAvg;
  FederatedRun a(tiny_partition(), epfl_cfg);
  FederatedRun b(tiny_partition(), fedavg_cfg);
  ASSERT_EQ(a.server().theta.size(), b.server().theta.size());
  for (int t = 0; t < 4; ++t) {
    a.step();
    b.step();
    EXPECT_LE((a.server().theta - b.server().theta).norm(), 1e-9) << "round " << t;
  }
}

TEST(FederatedRunTest, ZeroLocalStepsGiveZeroPayload) {
  // Mirrors client_update with E forced to 0.
  const auto& d = tiny_partition().clients[0];
  auto cfg = tiny_config();
  const BackboneDims bd{tiny_partition().input_dim(), cfg.hidden1, cfg.hidden2, kLatentDim};
  auto backbone = init_backbone(bd, 1);
  auto head = init_head(HeadDims{HeadKind::TwoLayer, kLatentDim, 8, 4, 0.1}, 2);
  auto bo = AdamState<double>::zeros(bd.parameter_count());
  auto ho = AdamState<double>::zeros(head.flat().size());
  std::mt19937_64 rng(3);
  const Eigen::VectorXd anchor = backbone.flat();
  local_train(backbone, head, bo, ho, d, 0, cfg, rng);
  ErrorFeedbackCompressor codec(anchor.size(), CodecOptions{cfg.density, true, true});
  const Payload p = codec.compress(backbone.flat() - anchor, 0, 0);
  EXPECT_TRUE(decode_payload(p).isZero(0.0));
  EXPECT_EQ(uplink_bytes(p), 24u);
}

TEST(FederatedRunTest, EmptyRoundsLeaveThetaUnchanged) {
  auto cfg = tiny_config();
  cfg.sync_period = 3;
  FederatedRun run(tiny_partition(), cfg);
  run.step();
  const Eigen::VectorXd after_sync = run.server().theta;
  run.step();
  run.step();
  EXPECT_EQ(run.server().theta, after_sync);
  ASSERT_TRUE(run.server().shadow.has_value());
  EXPECT_EQ(run.server().shadow->size(), run.server().theta.size());
}

TEST(FederatedRunTest, LiteralResyncOnlyMattersBetweenSyncs) {
  auto base = tiny_config();
  base.sync_period = 1;
  auto literal = base;
  literal.resync_every_round = true;
  EXPECT_EQ(run_training(tiny_partition(), base).backbone, run_training(tiny_partition(), literal).backbone);

  base.sync_period = 2;
  literal.sync_period = 2;
  EXPECT_NE(run_training(tiny_partition(), base).backbone, run_training(tiny_partition(), literal).backbone);
}

TEST(FederatedRunTest, RoundLogIsByteDeterministic) {
  testing::TempDir tmp;
  auto cfg = tiny_config();
  cfg.client_fraction = 0.5;
  cfg.threads = 2;
  write_round_log((tmp.path() / "a.csv").string(), run_training(tiny_partition(), cfg).log);
  cfg.threads = 1;
  write_round_log((tmp.path() / "b.csv").string(), run_training(tiny_partition(), cfg).log);
  const std::string a = testing::read_file(tmp.path() / "a.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, testing::read_file(tmp.path() / "b.csv"));
}

TEST(FederatedRunTest, ShadowStaysAtInitialParametersWithBetaOne) {
  auto cfg = tiny_config();
  cfg.ema_beta = 1.0;  // shadow frozen at the initial parameters
  cfg.rounds = 2;
  const auto frozen = run_training(tiny_partition(), cfg);
  cfg.rounds = 0;
  const auto initial = run_training(tiny_partition(), cfg);
  ASSERT_TRUE(frozen.ema_backbone.has_value());
  EXPECT_EQ(*frozen.ema_backbone, initial.backbone);
  EXPECT_NE(frozen.backbone, initial.backbone);
}

}  // namespace
}  // namespace fedrem
