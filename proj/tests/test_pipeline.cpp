// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "ctad/pipeline.hpp"
#include "test_util.hpp"

using namespace ctad;
using testutil::buf;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.height = 32;
  c.width = 48;
  c.m = 1;
  c.n = 1;
  c.batch = 1;
  c.steps = 2;
  c.train_frac = 0.6;
  return c;
}

const synth::Sequence& tiny_sequence() {
  static const synth::Sequence seq = [] {
    synth::SceneSpec spec = synth::default_scene();
    spec.height = 32;
    spec.width = 48;
    spec.frames = 8;
    return synth::render(spec);
  }();
  return seq;
}

std::vector<synth::Sample> tiny_samples(const TrainConfig& c) { return split_sequence(c, tiny_sequence()).eval; }

void set_grad(Tensor t, const std::vector<double>& g) {
  auto& dst = t.node()->grad;
  dst.assign(g.begin(), g.end());
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore store;
  Tensor p = store.add("p", {3}, {1.0, -2.0, 3.0});
  set_grad(p, {0, 0, 0});
  AdamState st;
  adam_step(store, st, 0.1);
  EXPECT_EQ(buf(p), (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMatchesClosedForm) {
  ParamStore store;
  Tensor p = store.add("p", {3}, {1.0, -2.0, 3.0});
  const std::vector<double> g{0.5, -4.0, 1e-3};
  set_grad(p, g);
  AdamState st;
  const double lr = 0.01, eps = 1e-8;
  adam_step(store, st, lr, 0.9, 0.999, eps);
  const std::vector<double> start{1.0, -2.0, 3.0};
  for (int i = 0; i < 3; ++i) {
    // Bias-corrected moments equal g and g^2 after one step.
    EXPECT_NEAR(p.data()[i], start[i] - lr * g[i] / (std::abs(g[i]) + eps), 1e-15);
  }
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  ParamStore store;
  Tensor x = store.add("x", {4}, {3.0, -1.0, 0.5, 8.0});
  const std::vector<double> c{1.0, 2.0, -3.0, 0.25};
  AdamState st;
  for (int it = 0; it < 3000; ++it) {
    std::vector<double> g(4);
    for (int i = 0; i < 4; ++i) g[i] = 2 * (x.data()[i] - c[i]);
    set_grad(x, g);
    adam_step(store, st, 0.02);
  }
  EXPECT_LT(testutil::max_abs_diff(buf(x), c), 1e-3);
}

TEST(Adam, MissingGradientThrows) {
  ParamStore store;
  store.add("p", {1}, {1.0});
  AdamState st;
  EXPECT_THROW(adam_step(store, st, 0.1), std::logic_error);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
  ParamStore store;
  Tensor a = store.add("a", {2}, {0, 0});
  Tensor b = store.add("b", {1}, {0});
  set_grad(a, {3.0, 0.0});
  set_grad(b, {4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 10.0), 5.0);
  EXPECT_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.8);
}

TEST(LrSchedule, StepDecay) {
  EXPECT_DOUBLE_EQ(lr_schedule(0), 2e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(29), 2e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(30), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(90), 2.5e-5);
  double prev = lr_schedule(0);
  for (long e = 1; e < 200; ++e) {
    EXPECT_LE(lr_schedule(e), prev);
    prev = lr_schedule(e);
  }
  EXPECT_DOUBLE_EQ(lr_schedule(250, 2e-4, 0.5, 100), 5e-5);
  EXPECT_THROW(lr_schedule(-1), std::invalid_argument);
  EXPECT_THROW(lr_schedule(1, 2e-4, 0.5, 0), std::invalid_argument);
}

TEST(Config, CanonicalFormRoundTrips) {
  TrainConfig c = tiny_config();
  c.neighbor_offsets = {-1, 1, -2};
  c.lr_step_unit = DecayUnit::kEpochs;
  c.seed = 0xfedcba9876543210ull;
  const std::string text = format_config(c);
  EXPECT_EQ(format_config(parse_config(text)), text);
  EXPECT_EQ(format_config(parse_config("")), format_config(TrainConfig{}));
}

TEST(Config, ParsesCommentsAndRejectsBadInput) {
  const TrainConfig c = parse_config("# comment\nsteps = 7  # trailing\n\nneighbor_offsets = -1, -2\nlr = 1e-3\n");
  EXPECT_EQ(c.steps, 7);
  EXPECT_EQ(c.neighbor_offsets, (std::vector<int>{-1, -2}));
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_THROW(parse_config("stepz = 3\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("steps = 3\nsteps = 4\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("steps = three\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("steps 3\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("lr_step_unit = weeks\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("height = 40\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("m = 0\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("pairs = 4\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("neighbor_offsets = 0\n"), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/config.cfg"), std::runtime_error);
  try {
    parse_config("steps = 1\nbogus = 2\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
}

TEST(Checkpoint, EncodeDecodeIsBitwise) {
  TensorTable t;
  t["a"] = {Shape{2, 3}, {1.0 / 3, -0.0, 1e-300, 5e-324, -7.25, 1e300}, 2};
  t["b.c"] = {Shape{1}, {0.5}, 1};
  const auto bytes = encode_checkpoint(t);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CTAD");
  const TensorTable back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("a").shape, t["a"].shape);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.at("a").values[i]), std::bit_cast<std::uint64_t>(t["a"].values[i]));
  }
  EXPECT_EQ(back.at("b.c").dtype, 1);
  EXPECT_EQ(back.at("b.c").values, std::vector<double>{0.5});
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruption) {
  TensorTable t;
  t["w"] = {Shape{4}, {1, 2, 3, 4}, 2};
  const auto good = encode_checkpoint(t);
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = good;
  bad[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = good;
  bad[good.size() - 12] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad.assign(good.begin(), good.end() - 9);
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  EXPECT_THROW(decode_checkpoint({}), CheckpointError);
}

TEST(Checkpoint, NetworkRoundTripThroughFile) {
  TrainConfig c = tiny_config();
  c.seed = 42;
  const Network net = Network::create(c);
  const auto path = testutil::scratch_dir("ckpt") / "net.ckpt";
  save_checkpoint(path, to_table(net));
  const Network back = from_table(load_checkpoint(path));
  EXPECT_EQ(back.store.hash(), net.store.hash());
  EXPECT_EQ(format_config(back.config), format_config(net.config));
  EXPECT_EQ(encode_checkpoint(to_table(back)), encode_checkpoint(to_table(net)));
}

TEST(Checkpoint, NetworkTableValidation) {
  const Network net = Network::create(tiny_config());
  TensorTable t = to_table(net);
  TensorTable extra = t;
  extra["mae.bogus"] = {Shape{1}, {0.0}, 2};
  EXPECT_THROW(from_table(extra), CheckpointError);
  TensorTable missing = t;
  missing.erase("refiner.depth_delta.weight");
  EXPECT_THROW(from_table(missing), CheckpointError);
  TensorTable shape = t;
  shape["head.depth.out.bias"] = {Shape{2}, {0.0, 0.0}, 2};
  EXPECT_THROW(from_table(shape), CheckpointError);
}

TEST(Network, SeededCreationIsDeterministic) {
  TrainConfig c = tiny_config();
  EXPECT_EQ(Network::create(c).store.hash(), Network::create(c).store.hash());
  c.seed = 2;
  EXPECT_NE(Network::create(c).store.hash(), Network::create(tiny_config()).store.hash());
}

TEST(Forward, OneEmbeddingPassPerSampleForAnyStageCounts) {
  const auto samples = tiny_samples(tiny_config());
  for (auto [m, n] : {std::pair{1, 1}, std::pair{2, 3}, std::pair{3, 4}}) {
    TrainConfig c = tiny_config();
    c.m = m;
    c.n = n;
    const Network net = Network::create(c);
    NoGradGuard no_grad;
    reset_lge_call_count();
    const ForwardOutput out = forward(net, samples[0], tiny_sequence().camera);
    EXPECT_EQ(lge_call_count(), 1u);
    EXPECT_EQ(out.trace.depth_delta_calls, std::size_t(m * n));
    EXPECT_EQ(out.trace.pose_delta_calls, std::size_t(m * n * c.pairs));
    EXPECT_EQ(out.initial.poses.size(), 3u);
  }
}

TEST(Train, ZeroStepsReturnsInitialNetwork) {
  TrainConfig c = tiny_config();
  c.steps = 0;
  const TrainResult r = train(c, tiny_sequence());
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.net.store.hash(), Network::create(c).store.hash());
}

TEST(Train, SameSeedGivesIdenticalLogsAndWeights) {
  const TrainConfig c = tiny_config();
  std::vector<std::string> streamed;
  const TrainResult a = train(c, tiny_sequence(), [&](const TrainLogRow& r) { streamed.push_back(format_log_row(r)); });
  const TrainResult b = train(c, tiny_sequence());
  ASSERT_EQ(a.log.size(), 2u);
  ASSERT_EQ(streamed.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(format_log_row(a.log[i]), format_log_row(b.log[i]));
    EXPECT_EQ(streamed[i], format_log_row(a.log[i]));
    EXPECT_EQ(a.log[i].step, int(i + 1));
    EXPECT_TRUE(std::isfinite(a.log[i].total));
    EXPECT_DOUBLE_EQ(a.log[i].total, a.log[i].depth + a.log[i].pose);
  }
  EXPECT_EQ(a.net.store.hash(), b.net.store.hash());
  EXPECT_NE(a.net.store.hash(), Network::create(c).store.hash());
}

TEST(Train, LogFormat) {
  TrainLogRow r{12, 1.5, 0.25, 1.75, 2e-4};
  EXPECT_EQ(format_log_row(r), "12,1.500000000e+00,2.500000000e-01,1.750000000e+00,2.000000e-04");
  const std::string h = log_header(tiny_config(), 3);
  EXPECT_EQ(h.rfind("# ", 0), 0u);
  EXPECT_NE(h.find("# step,depth_loss,pose_loss,total,lr"), std::string::npos);
}

TEST(Train, ResolutionMismatchThrows) {
  TrainConfig c = tiny_config();
  c.height = 64;
  c.width = 96;
  EXPECT_THROW(train(c, tiny_sequence()), std::invalid_argument);
}

TEST(Evaluate, UntrainedNetworkHasIdenticalStages) {
  const TrainConfig c = [] {
    TrainConfig t = tiny_config();
    t.m = 3;
    t.n = 2;
    return t;
  }();
  const Network net = Network::create(c);
  const EvalResult r = evaluate(net, tiny_samples(c), tiny_sequence().camera, EvalOptions{});
  ASSERT_EQ(r.stages.size(), 4u);
  for (int k = 1; k <= 3; ++k) EXPECT_EQ(r.stages[k].tsv(), r.stages[0].tsv());
  EXPECT_EQ(r.stages[3].abs_rel, r.stages[0].abs_rel);
  EXPECT_GT(r.samples, 0u);
}

TEST(Evaluate, GroundTruthAsPredictionIsPerfect) {
  const TrainConfig c = tiny_config();
  EvalOptions opts;
  opts.gt_as_prediction = true;
  const EvalResult r = evaluate(Network::create(c), tiny_samples(c), tiny_sequence().camera, opts);
  for (const auto& s : r.stages) {
    EXPECT_EQ(s.abs_rel, 0.0);
    EXPECT_EQ(s.rmse, 0.0);
    EXPECT_EQ(s.delta1, 1.0);
  }
  ASSERT_FALSE(r.dynamic_stages.empty());
  EXPECT_EQ(r.dynamic_stages[0].abs_rel, 0.0);
}

TEST(Evaluate, DoesNotTouchParametersOrTape) {
  const TrainConfig c = tiny_config();
  const Network net = Network::create(c);
  const auto before = net.store.hash();
  evaluate(net, tiny_samples(c), tiny_sequence().camera, EvalOptions{});
  EXPECT_EQ(net.store.hash(), before);
  for (const auto& [name, t] : net.store.entries()) {
    for (double g : t.grad()) ASSERT_EQ(g, 0.0) << name;
  }
}

TEST(Evaluate, ResolutionMismatchThrows) {
  const TrainConfig c = tiny_config();
  Camera cam = tiny_sequence().camera;
  cam.width = 96;
  EXPECT_THROW(evaluate(Network::create(c), tiny_samples(c), cam, EvalOptions{}), std::invalid_argument);
  EXPECT_THROW(evaluate(Network::create(c), {}, tiny_sequence().camera, EvalOptions{}), std::invalid_argument);
}
