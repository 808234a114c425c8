#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mmkd/network.hpp"
#include "mmkd/ops.hpp"

using namespace mmkd;

namespace {

constexpr auto V = Modality::Video;
constexpr auto A = Modality::Audio;
constexpr auto L = Modality::Language;

TransformerId tid(Modality kv, Modality q, Side side, bool fusion = false) { return {kv, q, side, fusion}; }

std::set<TransformerId> ids_of(const Network& net) {
  const auto v = net.stack_ids();
  return {v.begin(), v.end()};
}

Batch random_batch(const NetworkConfig& cfg, std::size_t b, std::uint64_t seed, std::vector<Modality> mods) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Batch batch;
  for (auto m : mods) {
    const auto [steps, width] = cfg.shape(m);
    std::vector<Real> v(b * steps * width);
    for (auto& x : v) x = static_cast<Real>(d(rng));
    batch.emplace(m, Tensor({b, steps, width}, std::move(v)));
  }
  return batch;
}

// Closed-form parameter counts, written independently of the network code.
std::size_t layer_params(std::size_t w, std::size_t r) {
  const std::size_t mha = 4 * w * w + 3 * w;  // q, v, o biased; keys unbiased
  const std::size_t norms = 4 * w;
  const std::size_t ffn = w * r * w + r * w + r * w * w + w;
  return mha + norms + ffn;
}

std::size_t front_params(std::size_t k, std::size_t din, std::size_t d) { return k * din * d + d; }

std::size_t head_params(std::size_t in, std::size_t hidden, std::size_t classes) {
  return in * hidden + hidden + hidden * classes + classes;
}

std::size_t complete_teacher_params(const NetworkConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t n = 0;
  for (auto m : kModalities) n += front_params(c.conv_kernel, c.shape(m).width, d);
  n += 6 * c.layers * layer_params(d, c.ffn_ratio);
  n += 3 * c.layers * layer_params(2 * d, c.ffn_ratio);
  return n + head_params(6 * d, c.head_hidden, c.num_classes);
}

std::size_t simple_student_params(const NetworkConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t n = 3 * front_params(c.conv_kernel, c.shape(V).width, d);
  n += 3 * c.layers * layer_params(d, c.ffn_ratio);
  return n + head_params(3 * d, c.head_hidden, c.num_classes);
}

}  // namespace

TEST(Teacher, CompleteHasNineStacks) {
  const Network t = build_teacher(TeacherBranch::Complete, NetworkConfig::desk(), 1);
  EXPECT_EQ(t.stack_count(), 9u);
  EXPECT_EQ(t.cross_stacks().size(), 6u);
  EXPECT_EQ(t.fusion_stacks().size(), 3u);
  const auto T = Side::Teacher;
  EXPECT_EQ(ids_of(t), (std::set<TransformerId>{tid(A, V, T), tid(L, V, T), tid(V, A, T), tid(L, A, T), tid(V, L, T),
                                                tid(A, L, T), tid(V, V, T, true), tid(A, A, T, true),
                                                tid(L, L, T, true)}));
}

TEST(Teacher, BranchesHoldTheirTwoCrossStacksAndAFusion) {
  const auto T = Side::Teacher;
  const auto cfg = NetworkConfig::desk();
  EXPECT_EQ(ids_of(build_teacher(TeacherBranch::Video, cfg, 1)),
            (std::set<TransformerId>{tid(A, V, T), tid(L, V, T), tid(V, V, T, true)}));
  EXPECT_EQ(ids_of(build_teacher(TeacherBranch::Audio, cfg, 1)),
            (std::set<TransformerId>{tid(V, A, T), tid(L, A, T), tid(A, A, T, true)}));
  EXPECT_EQ(ids_of(build_teacher(TeacherBranch::Language, cfg, 1)),
            (std::set<TransformerId>{tid(V, L, T), tid(A, L, T), tid(L, L, T, true)}));
}

TEST(Teacher, SameSeedSameParameters) {
  const auto cfg = NetworkConfig::desk();
  const auto a = build_teacher(TeacherBranch::Complete, cfg, 42).parameters();
  const auto b = build_teacher(TeacherBranch::Complete, cfg, 42).parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
  }
  EXPECT_NE(parameter_hash(build_teacher(TeacherBranch::Complete, cfg, 43)),
            parameter_hash(build_teacher(TeacherBranch::Complete, cfg, 42)));
}

TEST(Student, StackSetsPerConfiguration) {
  const auto S = Side::Student;
  const auto cfg = NetworkConfig::desk();
  EXPECT_EQ(build_student(1, cfg, 1).stack_count(), 9u);
  EXPECT_EQ(ids_of(build_student(2, cfg, 1)), (std::set<TransformerId>{tid(V, V, S), tid(A, V, S), tid(L, V, S)}));
  EXPECT_EQ(ids_of(build_student(3, cfg, 1)), (std::set<TransformerId>{tid(V, V, S), tid(V, L, S), tid(A, L, S)}));
  EXPECT_EQ(ids_of(build_student(4, cfg, 1)), (std::set<TransformerId>{tid(V, V, S), tid(V, A, S), tid(L, A, S)}));
  EXPECT_EQ(ids_of(build_student(5, cfg, 1)), (std::set<TransformerId>{tid(V, V, S), tid(V, L, S), tid(V, A, S)}));
  for (int c = 2; c <= 5; ++c) EXPECT_EQ(build_student(c, cfg, 1).stack_count(), 3u);
}

TEST(Student, InvalidConfigurationIsAConfigError) {
  for (int c : {0, 6, -1}) {
    try {
      build_student(c, NetworkConfig::desk(), 1);
      FAIL() << c;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
  }
}

TEST(Student, ProxyStreamsMatchTeacherLengths) {
  const auto cfg = NetworkConfig::desk();
  const Network s = build_student(5, cfg, 1);
  EXPECT_EQ(s.stream_steps(V), 24u);
  EXPECT_EQ(s.stream_steps(A), 12u);
  EXPECT_EQ(s.stream_steps(L), 6u);
  for (const auto& f : s.front_ends()) EXPECT_EQ(f.input, V);

  auto up = cfg;
  up.student_downsample = false;
  const Network s_up = build_student(5, up, 1);
  EXPECT_EQ(s_up.stream_steps(A), 24u);
  EXPECT_EQ(s_up.stream_steps(L), 24u);
}

TEST(Student, DownsampledPairMapsMatchTeacherShape) {
  const auto cfg = NetworkConfig::desk();
  const Network s = build_student(5, cfg, 1);
  const Network t = build_teacher(TeacherBranch::Complete, cfg, 1);
  for (const auto& [sid, tid_] : pair_map(5)) EXPECT_EQ(s.map_shape(sid), t.map_shape(tid_)) << sid.str();
  // Query from A: rows follow audio, columns follow video.
  EXPECT_EQ(t.map_shape(tid(V, A, Side::Teacher)), (std::pair<std::size_t, std::size_t>{12, 24}));
}

TEST(Forward, LogitsShapeAndFinite) {
  const auto cfg = NetworkConfig::desk();
  const Network t = build_teacher(TeacherBranch::Complete, cfg, 3);
  const ForwardTrace fw = network_forward(t, random_batch(cfg, 2, 4, {V, A, L}));
  ASSERT_EQ(fw.logits.shape(), (Shape{2, 7}));
  for (Real v : fw.logits.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(fw.penultimate_feat.shape(), (Shape{2, cfg.head_hidden}));
  EXPECT_EQ(fw.final_feat.shape(), (Shape{2, 7}));
  EXPECT_EQ(fw.traces.size(), 9u);
}

TEST(Forward, ArrowConventionPutsQueriesOnRows) {
  const auto cfg = NetworkConfig::desk();
  const Network t = build_teacher(TeacherBranch::Complete, cfg, 3);
  const ForwardTrace fw = network_forward(t, random_batch(cfg, 2, 4, {V, A, L}));
  // V_T <- A_T: Q from audio (12 steps), K/V from video (24 steps).
  const auto& trace = fw.trace(tid(V, A, Side::Teacher));
  ASSERT_EQ(trace.layers(), cfg.layers);
  EXPECT_EQ(trace.maps[0].shape(), (Shape{2, 12, 24}));
  EXPECT_EQ(fw.trace(tid(A, L, Side::Teacher)).maps[0].shape(), (Shape{2, 6, 12}));
  EXPECT_EQ(fw.trace(tid(V, V, Side::Teacher, true)).maps[0].shape(), (Shape{2, 24, 24}));
}

TEST(Forward, StudentNeedsOnlyVideo) {
  const auto cfg = NetworkConfig::desk();
  const Network s = build_student(5, cfg, 3);
  EXPECT_EQ(s.inputs(), std::vector<Modality>{V});
  const ForwardTrace fw = network_forward(s, random_batch(cfg, 3, 5, {V}));
  EXPECT_EQ(fw.logits.shape(), (Shape{3, 7}));
  EXPECT_EQ(fw.trace(tid(V, A, Side::Student)).maps[1].shape(), (Shape{3, 12, 24}));
}

TEST(Forward, MissingModalityIsADataErrorNamingIt) {
  const auto cfg = NetworkConfig::desk();
  const Network t = build_teacher(TeacherBranch::Complete, cfg, 3);
  try {
    network_forward(t, random_batch(cfg, 2, 4, {V, L}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
    EXPECT_NE(std::string(e.what()).find("audio"), std::string::npos) << e.what();
  }
}

TEST(Forward, ZeroedHeadGivesUniformPrediction) {
  const auto cfg = NetworkConfig::desk();
  const Network s = build_student(5, cfg, 3);
  for (auto& [name, p] : s.parameters()) {
    if (name.rfind("head.", 0) != 0) continue;
    Tensor t = p;
    for (auto& v : t.mutable_data()) v = 0;
  }
  const ForwardTrace fw = network_forward(s, random_batch(cfg, 4, 6, {V}));
  EXPECT_NEAR(ops::cross_entropy_logits(fw.logits, {0, 2, 4, 6}).item(), std::log(7.0), 1e-6);
}

TEST(Forward, Deterministic) {
  const auto cfg = NetworkConfig::desk();
  const auto batch = random_batch(cfg, 3, 8, {V, A, L});
  const auto a = network_forward(build_teacher(TeacherBranch::Complete, cfg, 5), batch).logits;
  const auto b = network_forward(build_teacher(TeacherBranch::Complete, cfg, 5), batch).logits;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(PairMap, MatchesEachConfiguration) {
  const auto S = Side::Student, T = Side::Teacher;
  using P = std::vector<std::pair<TransformerId, TransformerId>>;
  auto sorted = [](P p) {
    std::sort(p.begin(), p.end());
    return p;
  };
  EXPECT_EQ(sorted(pair_map(2)), sorted({{tid(A, V, S), tid(A, V, T)}, {tid(L, V, S), tid(L, V, T)}}));
  EXPECT_EQ(sorted(pair_map(3)), sorted({{tid(V, L, S), tid(V, L, T)}, {tid(A, L, S), tid(A, L, T)}}));
  EXPECT_EQ(sorted(pair_map(4)), sorted({{tid(V, A, S), tid(V, A, T)}, {tid(L, A, S), tid(L, A, T)}}));
  EXPECT_EQ(sorted(pair_map(5)), sorted({{tid(V, A, S), tid(V, A, T)}, {tid(V, L, S), tid(V, L, T)}}));

  const auto p1 = pair_map(1);
  EXPECT_EQ(p1.size(), 9u);
  for (const auto& [s, t] : p1) EXPECT_EQ(s.on_side(T), t);
  EXPECT_THROW(pair_map(6), Error);
}

TEST(PairMap, SelfStackNeverDistilledInSimplifiedConfigs) {
  for (int c = 2; c <= 5; ++c) {
    const Network s = build_student(c, NetworkConfig::desk(), 1);
    for (const auto& [sid, tid_] : pair_map(c)) {
      EXPECT_FALSE(sid.key_value == V && sid.query == V) << c;
      EXPECT_EQ(sid.on_side(Side::Teacher), tid_);
      EXPECT_NO_THROW(s.stack(sid));
      EXPECT_NO_THROW(build_teacher(teacher_for_config(c), NetworkConfig::desk(), 1).stack(tid_));
    }
  }
}

TEST(ParamCount, SingleAffineLayer) { EXPECT_EQ(front_params(1, 4, 7), 35u); }

TEST(ParamCount, MatchesClosedForm) {
  for (const auto& cfg : {NetworkConfig::desk(), NetworkConfig::paper()}) {
    const Network t = build_teacher(TeacherBranch::Complete, cfg, 1);
    const Network s = build_student(5, cfg, 1);
    EXPECT_EQ(t.param_count(), complete_teacher_params(cfg));
    EXPECT_EQ(s.param_count(), simple_student_params(cfg));
    std::size_t listed = 0;
    for (const auto& [_, p] : t.parameters()) listed += p.numel();
    EXPECT_EQ(listed, t.param_count());
    const auto b = t.param_breakdown();
    EXPECT_EQ(b.front_ends + b.cross_stacks + b.fusion_stacks + b.head, b.total());
  }
}

TEST(ParamCount, TeacherAtLeastTwiceStudentAtDeskScale) {
  const auto cfg = NetworkConfig::desk();
  const double ratio = static_cast<double>(build_teacher(TeacherBranch::Complete, cfg, 1).param_count()) /
                       static_cast<double>(build_student(5, cfg, 1).param_count());
  EXPECT_GE(ratio, 2.0);
}

TEST(ParamCount, MoreLayersMoreStackParameters) {
  auto cfg = NetworkConfig::desk();
  const auto one = build_student(5, cfg, 1).param_breakdown();
  cfg.layers *= 2;
  const auto two = build_student(5, cfg, 1).param_breakdown();
  EXPECT_EQ(two.cross_stacks, 2 * one.cross_stacks);
  EXPECT_EQ(two.head, one.head);
  EXPECT_GT(two.total(), one.total());
}
