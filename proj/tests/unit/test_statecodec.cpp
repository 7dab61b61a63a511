#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nnkit/grad_check.hpp"
#include "orbits/errors.hpp"
#include "orbits/statecodec.hpp"

using namespace orbits;

namespace {

SymbolicState random_state(std::mt19937_64& rng, std::size_t n, double scale = 3.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  SymbolicState s(n);
  for (auto& b : s) {
    b.position = {u(rng), u(rng), u(rng)};
    b.velocity = {u(rng), u(rng), u(rng)};
  }
  return s;
}

CodecParams seeded_codec(std::uint64_t seed) {
  CodecParams c;
  std::mt19937_64 rng(seed);
  c.init(rng);
  return c;
}

void zero_all(std::vector<Parameter*> ps) {
  for (Parameter* p : ps) p->value.setZero();
}

// 3 -> 64 -> k pass-through: hidden = relu([x; -x]), out = h+ - h-.
void make_identity(Mlp& m) {
  m.hidden.weight.value.setZero();
  m.hidden.bias.value.setZero();
  m.out.weight.value.setZero();
  m.out.bias.value.setZero();
  const int in = m.hidden.in_features();
  const int width = std::min(in, m.out.out_features());
  for (int i = 0; i < width; ++i) {
    m.hidden.weight.value(2 * i, i) = 1.0;
    m.hidden.weight.value(2 * i + 1, i) = -1.0;
    m.out.weight.value(i, 2 * i) = 1.0;
    m.out.weight.value(i, 2 * i + 1) = -1.0;
  }
}

Observation make_obs(const std::vector<ScreenPoint>& pts) {
  Observation o;
  o.screen_coords = pts;
  o.visibility.assign(pts.size(), true);
  return o;
}

}  // namespace

TEST(Codec, ShapesFollowTheArchitecture) {
  CodecParams c = seeded_codec(1);
  EXPECT_EQ(c.in_p.hidden.weight.value.rows(), 64);
  EXPECT_EQ(c.in_p.hidden.weight.value.cols(), 3);
  EXPECT_EQ(c.in_p.out.weight.value.rows(), 32);
  EXPECT_EQ(c.out_v.hidden.weight.value.cols(), 32);
  EXPECT_EQ(c.out_v.out.weight.value.rows(), 3);
  EXPECT_EQ(c.parameters().size(), 16u);
}

TEST(Codec, PermutingObjectsPermutesLatents) {
  std::mt19937_64 rng(2);
  CodecParams c = seeded_codec(3);
  SymbolicState s = random_state(rng, 4);
  const LatentState z = encode(s, c);
  std::swap(s[0], s[3]);
  const LatentState zs = encode(s, c);
  EXPECT_EQ(zs.position.col(0), z.position.col(3));
  EXPECT_EQ(zs.position.col(3), z.position.col(0));
  EXPECT_EQ(zs.velocity.col(1), z.velocity.col(1));
}

TEST(Codec, VelocityPerturbationLeavesPositionLatentBitIdentical) {
  std::mt19937_64 rng(4);
  CodecParams c = seeded_codec(5);
  for (int trial = 0; trial < 50; ++trial) {
    SymbolicState s = random_state(rng, 3);
    const LatentState z = encode(s, c);
    for (auto& b : s) b.velocity = b.velocity * 1.7 + Vec3{0.3, -0.2, 0.9};
    const LatentState z2 = encode(s, c);
    EXPECT_EQ(z.position, z2.position);
    EXPECT_NE(z.velocity, z2.velocity);
  }
}

TEST(Codec, DecodeSeparationMirrorsEncode) {
  std::mt19937_64 rng(6);
  CodecParams c = seeded_codec(7);
  LatentState z{Matrix::Random(32, 3), Matrix::Random(32, 3)};
  const SymbolicState a = decode(z, c);
  z.velocity.array() += 0.5;
  const SymbolicState b = decode(z, c);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(a[j].position, b[j].position);
    EXPECT_NE(a[j].velocity, b[j].velocity);
  }
}

TEST(Codec, SeparationHoldsForGradients) {
  CodecParams c = seeded_codec(8);
  Parameter states("s", Matrix::Random(6, 5));
  Graph g;
  const Var zp = nnkit::slice_rows(encode(g, c, g.param(states)), 0, kLatentSize);
  g.backward(nnkit::sum(zp));
  EXPECT_TRUE(states.grad.bottomRows(3).isZero(0.0));
  EXPECT_FALSE(states.grad.topRows(3).isZero(0.0));
}

TEST(Codec, ZeroParametersGiveZeroLatentsAndStates) {
  std::mt19937_64 rng(9);
  CodecParams c = seeded_codec(10);
  zero_all(c.parameters());
  const LatentState z = encode(random_state(rng, 4), c);
  EXPECT_TRUE(z.position.isZero(0.0));
  EXPECT_TRUE(z.velocity.isZero(0.0));
  for (const auto& b : decode(LatentState{Matrix::Random(32, 2), Matrix::Random(32, 2)}, c)) {
    EXPECT_EQ(b.position, Vec3{});
    EXPECT_EQ(b.velocity, Vec3{});
  }
}

TEST(Codec, DecodeRejectsWrongLatentSize) {
  CodecParams c = seeded_codec(11);
  EXPECT_THROW(decode(LatentState{Matrix::Zero(31, 2), Matrix::Zero(32, 2)}, c), ShapeMismatch);
}

TEST(InitNet, InputWidthFollowsMode) {
  EXPECT_EQ(InitNet(InitMode::ScreenOnly).net.hidden.in_features(), 2);
  EXPECT_EQ(InitNet(InitMode::ScreenPlusDepth).net.hidden.in_features(), 3);
  EXPECT_EQ(InitNet(InitMode::GroundtruthZ).net.hidden.in_features(), 2);
  EXPECT_EQ(InitNet(InitMode::ScreenOnly).net.hidden.out_features(), 64);
}

TEST(InitNet, ModeNamesRoundTrip) {
  for (InitMode m : {InitMode::ScreenOnly, InitMode::ScreenPlusDepth, InitMode::GroundtruthZ})
    EXPECT_EQ(parse_init_mode(to_string(m)), m);
  EXPECT_THROW(parse_init_mode("lidar"), ValidationError);
}

TEST(InitState, ZeroParameterScreenOnlyLiftsPrincipalPointToOrigin) {
  // Camera at z = -10 and reference depth 10: the principal ray meets the
  // reference plane at the world origin.
  CameraConfig cam;
  InitNet net(InitMode::ScreenOnly);
  zero_all(net.parameters());
  const auto s = init_state(make_obs({{256.0, 256.0}, {256.0, 256.0}}), net, cam);
  for (const auto& b : s) {
    EXPECT_EQ(b.position, Vec3{});
    EXPECT_EQ(b.velocity, Vec3{});
  }
}

TEST(InitState, ZeroParameterScreenOnlyReprojectsExactly) {
  CameraConfig cam;
  InitNet net(InitMode::ScreenOnly);
  zero_all(net.parameters());
  const auto s = init_state(make_obs({{300.0, 100.0}, {17.5, 480.25}}), net, cam);
  for (std::size_t j = 0; j < s.size(); ++j) {
    const auto p = project(s[j].position, cam);
    ASSERT_TRUE(p.has_value());
    EXPECT_NEAR(p->depth, 10.0, 1e-12);
  }
  EXPECT_NEAR(project(s[0].position, cam)->u, 300.0, 1e-9);
  EXPECT_NEAR(project(s[1].position, cam)->v, 480.25, 1e-9);
}

TEST(InitState, FreshNetworkStartsAtTheBackProjection) {
  CameraConfig cam;
  InitNet net(InitMode::ScreenOnly);
  std::mt19937_64 rng(12);
  net.init(rng);
  const auto s = init_state(make_obs({{256.0, 256.0}}), net, cam);
  EXPECT_EQ(s[0].position, Vec3{});
}

TEST(InitState, ScreenPlusDepthNeedsEverySample) {
  CameraConfig cam;
  InitNet net(InitMode::ScreenPlusDepth);
  Observation o = make_obs({{256.0, 256.0}, {200.0, 200.0}, {10.0, 10.0}});
  EXPECT_THROW(init_state(o, net, cam), MissingDepth);
  o.depth_samples = std::vector<std::optional<double>>{9.5, 8.0, std::nullopt};
  try {
    init_state(o, net, cam);
    FAIL() << "expected MissingDepth";
  } catch (const MissingDepth& e) {
    EXPECT_EQ(e.object(), 2u);
  }
}

TEST(InitState, ScreenPlusDepthPlacesTheCentreBehindTheSampledSurface) {
  CameraConfig cam;  // radius 0.5
  InitNet net(InitMode::ScreenPlusDepth);
  zero_all(net.parameters());
  Observation o = make_obs({{256.0 + 51.2, 256.0}});
  o.depth_samples = std::vector<std::optional<double>>{7.0};
  const auto s = init_state(o, net, cam);
  EXPECT_NEAR(s[0].position.z, -2.5, 1e-12);  // -10 + 7 + 0.5
  EXPECT_NEAR(s[0].position.x, 0.75, 1e-12);  // 7.5 * 51.2 / 512
}

TEST(InitState, ScreenPlusDepthZIgnoresTheParameters) {
  CameraConfig cam;
  std::mt19937_64 rng(17);
  Observation o = make_obs({{100.0, 90.0}, {256.0, 300.0}});
  o.depth_samples = std::vector<std::optional<double>>{8.0, 11.5};
  for (int trial = 0; trial < 10; ++trial) {
    InitNet net(InitMode::ScreenPlusDepth);
    net.init(rng);
    for (Parameter* p : net.parameters()) p->value.setRandom();
    const auto s = init_state(o, net, cam);
    EXPECT_EQ(s[0].position.z, -10.0 + 8.0 + 0.5);
    EXPECT_EQ(s[1].position.z, -10.0 + 11.5 + 0.5);
  }
}

TEST(InitState, GroundtruthZIsExactForAnyParameters) {
  CameraConfig cam;
  std::mt19937_64 rng(13);
  const std::vector<double> gt{1.25, -3.5, 0.0};
  for (int trial = 0; trial < 20; ++trial) {
    InitNet net(InitMode::GroundtruthZ);
    net.init(rng);
    for (Parameter* p : net.parameters()) p->value.setRandom();
    const auto s = init_state(make_obs({{100.0, 90.0}, {256.0, 300.0}, {400.0, 20.0}}), net, cam, gt);
    for (std::size_t j = 0; j < gt.size(); ++j) EXPECT_EQ(s[j].position.z, gt[j]);
  }
}

TEST(InitState, GroundtruthZMissingEntryIsNamed) {
  CameraConfig cam;
  InitNet net(InitMode::GroundtruthZ);
  const std::vector<double> gt{1.0};
  try {
    init_state(make_obs({{1.0, 1.0}, {2.0, 2.0}}), net, cam, gt);
    FAIL() << "expected MissingGroundtruthZ";
  } catch (const MissingGroundtruthZ& e) {
    EXPECT_EQ(e.object(), 1u);
  }
}

TEST(LossObs, Examples) {
  std::mt19937_64 rng(14);
  const SymbolicState a = random_state(rng, 3);
  EXPECT_EQ(loss_obs(a, a), 0.0);
  SymbolicState one(1), other(1);
  other[0].velocity.y = 2.0;
  EXPECT_DOUBLE_EQ(loss_obs(one, other), 4.0 / 6.0);
  const SymbolicState b = random_state(rng, 3);
  EXPECT_EQ(loss_obs(a, b), loss_obs(b, a));
  EXPECT_GT(loss_obs(a, b), 0.0);
}

TEST(LossAe, IdentityCodecIsExact) {
  CodecParams c = seeded_codec(15);
  make_identity(c.in_p);
  make_identity(c.in_v);
  make_identity(c.out_p);
  make_identity(c.out_v);
  std::mt19937_64 rng(16);
  const SymbolicState s = random_state(rng, 5);
  EXPECT_LE(loss_ae(s, c), 1e-20);
}

TEST(LossAe, NonNegative) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 30; ++i) {
    CodecParams c = seeded_codec(100 + i);
    EXPECT_GE(loss_ae(random_state(rng, 4), c), 0.0);
  }
}

TEST(LossRec, ExactPredictionIsZero) {
  CameraConfig cam;
  std::mt19937_64 rng(18);
  const SymbolicState s = random_state(rng, 4);
  std::mt19937_64 noise(0);
  const Observation o = observe(s, cam, 0.0, noise);
  EXPECT_EQ(loss_rec(s, o, cam), 0.0);
}

TEST(LossRec, ThreePixelsOffInUIsNineHalves) {
  CameraConfig cam;
  SymbolicState s(1);
  s[0].position = {0.0, 0.0, 0.0};  // projects to the principal point
  const Observation o = make_obs({{259.0, 256.0}});
  EXPECT_DOUBLE_EQ(loss_rec(s, o, cam), 4.5);
}

TEST(LossRec, ViewAxisDisplacement) {
  CameraConfig cam;
  SymbolicState on_axis(1), off_axis(1);
  off_axis[0].position = {1.0, -0.5, 0.0};
  std::mt19937_64 noise(0);
  const Observation o_on = observe(on_axis, cam, 0.0, noise);
  const Observation o_off = observe(off_axis, cam, 0.0, noise);
  for (double dz : {-2.0, 0.5, 3.0}) {
    SymbolicState a = on_axis, b = off_axis;
    a[0].position.z += dz;
    b[0].position.z += dz;
    EXPECT_EQ(loss_rec(a, o_on, cam), 0.0);
    EXPECT_GT(loss_rec(b, o_off, cam), 0.0);
  }
}

TEST(LossRec, InvisibleObservationsAreSkippedAndInvisiblePredictionsPenalised) {
  CameraConfig cam;
  SymbolicState s(2);
  s[1].position = {0.0, 0.0, -20.0};  // behind the camera
  Observation o = make_obs({{256.0, 256.0}, {256.0, 256.0}});
  EXPECT_DOUBLE_EQ(loss_rec(s, o, cam), 0.5 * cam.diagonal() * cam.diagonal());
  o.visibility[1] = false;
  EXPECT_EQ(loss_rec(s, o, cam), 0.0);
}

TEST(LossRec, VelocitiesAreIgnored) {
  CameraConfig cam;
  std::mt19937_64 rng(19);
  SymbolicState s = random_state(rng, 4);
  std::mt19937_64 noise(1);
  const Observation o = observe(s, cam, 1.0, noise);
  const double before = loss_rec(s, o, cam);
  for (auto& b : s) b.velocity = {b.velocity.z * 9.0, -4.0, 1e6};
  EXPECT_EQ(loss_rec(s, o, cam), before);
}

TEST(LossTotal, UnweightedSum) {
  EXPECT_EQ(loss_total(1.0, 2.0, 3.0), 6.0);
  EXPECT_EQ(loss_total(1.5, 0.0, 2.0), 3.5);
  Graph g;
  const Var t = loss_total(g.constant(Matrix::Constant(1, 1, 1.0)), g.constant(Matrix::Constant(1, 1, 2.0)),
                           g.constant(Matrix::Constant(1, 1, 3.0)));
  EXPECT_EQ(t.scalar(), 6.0);
  const Var t2 = loss_total(g.constant(Matrix::Constant(1, 1, 1.0)), g.constant(Matrix::Constant(1, 1, 2.0)),
                            std::nullopt);
  EXPECT_EQ(t2.scalar(), 3.0);
}

TEST(LossTotal, GradientIsTheSumOfComponentGradients) {
  CameraConfig cam;
  CodecParams codec = seeded_codec(20);
  std::mt19937_64 rng(21);
  Parameter pred("pred", to_matrix(random_state(rng, 3, 1.0)));
  const Matrix obs = to_matrix(random_state(rng, 3, 1.0));
  std::mt19937_64 noise(2);
  const Observation o = observe(random_state(rng, 3, 1.0), cam, 0.0, noise);
  const Matrix uv = observed_uv(o), vis = observed_visibility(o);

  std::vector<Parameter*> params = codec.parameters();
  params.push_back(&pred);
  auto closure = [&](bool with_grad) {
    Graph g;
    const Var s = g.param(pred);
    const Var total = loss_total(nnkit::scale(loss_rec(s, uv, vis, cam), 1e-4), loss_ae(g, codec, s),
                                 loss_obs(s, g.constant(obs)));
    if (with_grad) g.backward(total);
    return nnkit::Evaluation{total.scalar(), g.signature()};
  };
  const auto r = nnkit::grad_check(closure, params, {.max_entries_per_parameter = 12, .seed = 3});
  EXPECT_TRUE(r.passed) << r.worst.parameter << " " << r.max_relative_error;
  EXPECT_GT(r.checked, 150u);

  // Sum of separately back-propagated components equals the total's gradient.
  auto grad_of = [&](int which) {
    Graph g;
    const Var s = g.param(pred);
    Var l = which == 0 ? loss_rec(s, uv, vis, cam) : which == 1 ? loss_ae(g, codec, s) : loss_obs(s, g.constant(obs));
    if (which == 3)
      l = loss_total(loss_rec(s, uv, vis, cam), loss_ae(g, codec, s), loss_obs(s, g.constant(obs)));
    pred.zero_grad();
    g.backward(l);
    return Matrix(pred.grad);
  };
  const Matrix parts = grad_of(0) + grad_of(1) + grad_of(2);
  const Matrix whole = grad_of(3);
  EXPECT_LT((parts - whole).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + whole.cwiseAbs().maxCoeff()));
}
