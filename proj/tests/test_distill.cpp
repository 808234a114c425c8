#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mmkd/distill.hpp"
#include "mmkd/ops.hpp"

using namespace mmkd;

namespace {

constexpr auto V = Modality::Video;
constexpr auto A = Modality::Audio;
constexpr auto L = Modality::Language;

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n;
  std::vector<double> v(d);
  double s = 0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t d) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(d);
  double s = 0;
  for (auto& x : v) s += (x = e(rng));
  for (auto& x : v) x /= s;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Moves s a small step toward `target` along the sphere.
std::vector<double> step_toward(const std::vector<double>& s, const std::vector<double>& target, double h) {
  std::vector<double> out(s.size());
  double n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) n += (out[i] = s[i] + h * (target[i] - s[i])) * out[i];
  for (auto& x : out) x /= std::sqrt(n);
  return out;
}

Batch video_batch(const NetworkConfig& cfg, std::size_t b, std::uint64_t seed, bool all = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Batch batch;
  for (auto m : kModalities) {
    if (!all && m != V) continue;
    const auto [steps, width] = cfg.shape(m);
    std::vector<Real> v(b * steps * width);
    for (auto& x : v) x = static_cast<Real>(d(rng));
    batch.emplace(m, Tensor({b, steps, width}, std::move(v)));
  }
  return batch;
}

struct Rig {
  NetworkConfig cfg = NetworkConfig::desk();
  Network student;
  Network teacher;
  ForwardTrace s_fw;
  ForwardTrace t_fw;

  explicit Rig(int config = 5, bool downsample = true, std::size_t batch = 4) {
    cfg.student_downsample = downsample;
    student = build_student(config, cfg, 11);
    teacher = build_teacher(teacher_for_config(config), cfg, 12);
    const Batch b = video_batch(cfg, batch, 13);
    s_fw = network_forward(student, b);
    NoGradGuard g;
    t_fw = network_forward(teacher, b);
  }
};

std::vector<double> row_of(const Tensor& t, std::size_t row) {
  const std::size_t w = t.shape().back();
  return {t.data().begin() + static_cast<std::ptrdiff_t>(row * w), t.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * w)};
}

// In-batch contrastive loss from the scalar reference, for unit rows [N, d].
double reference_batch_crd(const Tensor& s, const Tensor& t, double tau) {
  const std::size_t n = s.dim(0);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> negs;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto r = row_of(t, j);
      negs.insert(negs.end(), r.begin(), r.end());
    }
    total += crd_loss(row_of(s, i), row_of(t, i), negs, tau);
  }
  return total / static_cast<double>(n);
}

void copy_values(const Tensor& from, Tensor to) {
  ASSERT_EQ(from.shape(), to.shape());
  std::copy(from.data().begin(), from.data().end(), to.mutable_data().begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Reference CRD

TEST(CrdLoss, AlignedPositiveOrthogonalNegative) {
  const std::vector<double> s{1, 0}, neg{0, 1};
  EXPECT_NEAR(crd_loss(s, s, neg, 1.0), -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(crd_loss(s, s, neg, 1.0), 0.3133, 1e-4);
}

TEST(CrdLoss, SymmetricLogitsGiveLogTwo) {
  const std::vector<double> s{1, 0, 0}, pos{0, 1, 0}, neg{0, 0, 1};
  EXPECT_NEAR(crd_loss(s, pos, neg, 1.0), std::log(2.0), 1e-12);
}

TEST(CrdLoss, NeedsNegativesAndPositiveTemperature) {
  const std::vector<double> s{1, 0};
  try {
    crd_loss(s, s, {}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parameter);
  }
  EXPECT_THROW(crd_loss(s, s, s, 0.0), Error);
}

TEST(CrdLoss, MovingTowardPositiveDecreasesLoss) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_unit(rng, 8), pos = random_unit(rng, 8);
    std::vector<double> negs;
    for (int k = 0; k < 3; ++k) {
      const auto n = random_unit(rng, 8);
      negs.insert(negs.end(), n.begin(), n.end());
    }
    const auto closer = step_toward(s, pos, 0.1);
    ASSERT_GT(dot(closer, pos), dot(s, pos));
    EXPECT_LT(crd_loss(closer, pos, negs, 0.5), crd_loss(s, pos, negs, 0.5)) << trial;
  }
}

TEST(CrdLoss, StrictlyMonotoneInEachSimilarity) {
  // Same loss written through similarities: increasing the positive one
  // lowers it; increasing a negative one raises it.
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_unit(rng, 6), pos = random_unit(rng, 6), neg = random_unit(rng, 6);
    const auto toward_neg = step_toward(s, neg, 0.2);
    if (dot(toward_neg, neg) <= dot(s, neg) || dot(toward_neg, pos) > dot(s, pos)) continue;
    EXPECT_GT(crd_loss(toward_neg, pos, neg, 1.0), crd_loss(s, pos, neg, 1.0));
  }
}

// ---------------------------------------------------------------------------
// EDAM reference

TEST(Edam, UniformAgainstUniformIsLogTwo) {
  EXPECT_NEAR(edam_row_cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}, 1e-8),
              std::log(2.0), 1e-7);
}

TEST(Edam, PointMassAgainstUniformIsLogTwo) {
  EXPECT_NEAR(edam_row_cross_entropy(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}, 1e-8), std::log(2.0),
              1e-7);
}

TEST(Edam, SelfCrossEntropyIsEntropyAndGibbsHolds) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_simplex(rng, 7), b = random_simplex(rng, 7);
    double h = 0;
    for (double p : a) h -= p * std::log(p);
    EXPECT_NEAR(edam_row_cross_entropy(a, a, 1e-8), h, 1e-6);
    EXPECT_GE(edam_row_cross_entropy(a, b, 1e-8), edam_row_cross_entropy(a, a, 1e-8) - 1e-6);
  }
}

TEST(Edam, GradientDescentRecoversTargetRow) {
  std::mt19937_64 rng(104);
  const auto a = random_simplex(rng, 6);
  const Tensor target({1, 6}, std::vector<Real>(a.begin(), a.end()));
  Tensor z = Tensor::zeros({1, 6}, true);
  for (int it = 0; it < 3000; ++it) {
    z.zero_grad();
    const Tensor b = ops::row_softmax(z);
    backward(ops::scale(ops::sum(ops::mul(target, ops::log_eps(b, 1e-8))), -1.0));
    auto w = z.mutable_data();
    for (std::size_t i = 0; i < 6; ++i) w[i] -= 1.0f * z.grad()[i];
  }
  const Tensor b = ops::row_softmax(z);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(b[i], a[i], 1e-3);
}

// ---------------------------------------------------------------------------
// Differentiable CRD

TEST(CrdBatch, MatchingEmbeddingsBeatShuffledOnes) {
  std::mt19937_64 rng(105);
  const auto r0 = random_unit(rng, 4), r1 = random_unit(rng, 4);
  std::vector<Real> t{}, shuffled{};
  t.insert(t.end(), r0.begin(), r0.end());
  t.insert(t.end(), r1.begin(), r1.end());
  shuffled.insert(shuffled.end(), r1.begin(), r1.end());
  shuffled.insert(shuffled.end(), r0.begin(), r0.end());
  const Tensor teacher({2, 4}, t);
  const double same = crd_batch_loss(teacher, teacher, 0.2).item();
  const double swapped = crd_batch_loss(Tensor({2, 4}, shuffled), teacher, 0.2).item();
  EXPECT_LT(same, swapped);
}

TEST(CrdBatch, MatchesScalarReference) {
  std::mt19937_64 rng(106);
  std::vector<Real> s, t;
  for (int i = 0; i < 5; ++i) {
    for (double x : random_unit(rng, 3)) s.push_back(static_cast<Real>(x));
    for (double x : random_unit(rng, 3)) t.push_back(static_cast<Real>(x));
  }
  const Tensor st({5, 3}, s), tt({5, 3}, t);
  EXPECT_NEAR(crd_batch_loss(st, tt, 0.3).item(), reference_batch_crd(st, tt, 0.3), 1e-5);
  EXPECT_THROW(crd_batch_loss(Tensor({1, 3}, {1, 0, 0}), Tensor({1, 3}, {1, 0, 0}), 0.3), Error);
}

TEST(LayerCrd, FiniteAtInitAndNeedsTwoSamples) {
  Rig s(5);
  DistillLossConfig cfg;
  for (auto method : {KdMethod::CrdFinal, KdMethod::CrdPenultimate}) {
    const DistillState state(method, pair_map(5), s.student, s.teacher, cfg, 1);
    const auto site = method == KdMethod::CrdFinal ? FeatureSite::Final : FeatureSite::Penultimate;
    const Tensor loss = kd_layer_crd(site, s.s_fw, s.t_fw, state, cfg);
    EXPECT_TRUE(std::isfinite(loss.item()));
    for (const auto& [_, p] : state.parameters()) EXPECT_TRUE(p.requires_grad());
  }
  Rig one(5, true, 1);
  const DistillState state(KdMethod::CrdFinal, pair_map(5), one.student, one.teacher, cfg, 1);
  try {
    kd_layer_crd(FeatureSite::Final, one.s_fw, one.t_fw, state, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(PostAttnCrd, MeanOverLayersThenPairs) {
  Rig s(5);
  DistillLossConfig cfg;
  const DistillState state(KdMethod::CrdPostAttention, pair_map(5), s.student, s.teacher, cfg, 2);
  double expected = 0;
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    const auto& st = s.s_fw.trace(state.pairs()[p].first);
    const auto& tt = s.t_fw.trace(state.pairs()[p].second);
    double pair_total = 0;
    for (std::size_t l = 0; l < st.layers(); ++l) {
      const Tensor se = state.student_projection(p).apply(ops::mean_axis(st.post_attention[l], 1));
      const Tensor te = state.teacher_projection(p).apply(ops::mean_axis(tt.post_attention[l], 1));
      pair_total += reference_batch_crd(se, te, cfg.crd_temperature);
    }
    expected += pair_total / static_cast<double>(st.layers());
  }
  expected /= static_cast<double>(state.pairs().size());
  EXPECT_NEAR(kd_postattn_crd(s.s_fw, s.t_fw, state, cfg).item(), expected, 1e-5);
}

TEST(PostAttnCrd, UnequalLayerCountsAreRejected) {
  Rig s(5);
  DistillLossConfig cfg;
  const DistillState state(KdMethod::CrdPostAttention, pair_map(5), s.student, s.teacher, cfg, 2);
  ForwardTrace cut = s.t_fw;
  for (auto& [_, tr] : cut.traces) {
    tr.maps.pop_back();
    tr.logits.pop_back();
    tr.post_attention.pop_back();
  }
  try {
    kd_postattn_crd(s.s_fw, cut, state, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(AttnMapCrd, RowwiseAverageMatchesScalarReference) {
  Rig s(5);
  DistillLossConfig cfg;
  const DistillState state(KdMethod::CrdAttentionMap, pair_map(5), s.student, s.teacher, cfg, 3);
  double expected = 0;
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    const auto& st = s.s_fw.trace(state.pairs()[p].first);
    const auto& tt = s.t_fw.trace(state.pairs()[p].second);
    double pair_total = 0;
    std::size_t terms = 0;
    for (std::size_t l = 0; l < st.layers(); ++l) {
      const Tensor se = state.student_projection(p).apply(st.maps[l]);  // [B, m, d]
      const Tensor te = state.teacher_projection(p).apply(tt.maps[l]);
      const std::size_t B = se.dim(0), m = se.dim(1), d = se.dim(2);
      for (std::size_t j = 0; j < m; ++j) {
        std::vector<Real> srow, trow;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t k = 0; k < d; ++k) {
            srow.push_back(se[(b * m + j) * d + k]);
            trow.push_back(te[(b * m + j) * d + k]);
          }
        }
        pair_total += reference_batch_crd(Tensor({B, d}, srow), Tensor({B, d}, trow), cfg.crd_temperature);
        ++terms;
      }
    }
    expected += pair_total / static_cast<double>(terms);
  }
  expected /= static_cast<double>(state.pairs().size());
  EXPECT_NEAR(kd_attnmap_crd(s.s_fw, s.t_fw, state, cfg).item(), expected, 1e-5);
}

TEST(AttnMapCrd, IdenticalMapsScoreNoWorseThanRowShuffled) {
  Rig s(5);
  DistillLossConfig cfg;
  const DistillState state(KdMethod::CrdAttentionMap, pair_map(5), s.student, s.teacher, cfg, 4);
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    copy_values(state.teacher_projection(p).w, state.student_projection(p).w);
    copy_values(state.teacher_projection(p).b, state.student_projection(p).b);
  }
  ForwardTrace same = s.s_fw, shuffled = s.s_fw;
  for (const auto& [sid, tid] : state.pairs()) {
    same.traces[sid] = s.t_fw.trace(tid);
    // Rotate the batch so every row is paired with another sample's row.
    auto& tr = shuffled.traces[sid];
    tr = s.t_fw.trace(tid);
    for (auto& m : tr.maps) {
      const std::size_t B = m.dim(0), per = m.numel() / B;
      std::vector<Real> v(m.data().begin(), m.data().end());
      std::rotate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(per), v.end());
      m = Tensor(m.shape(), v);
    }
  }
  EXPECT_LE(kd_attnmap_crd(same, s.t_fw, state, cfg).item(), kd_attnmap_crd(shuffled, s.t_fw, state, cfg).item());
}

// ---------------------------------------------------------------------------
// EDAM on traces

TEST(EdamLoss, IdenticalMapsGiveMeanTeacherEntropy) {
  Rig s(5);
  DistillLossConfig cfg;
  const DistillState state(KdMethod::EdamSDown, pair_map(5), s.student, s.teacher, cfg, 5);
  ForwardTrace same = s.s_fw;
  double expected = 0;
  for (const auto& [sid, tid] : state.pairs()) {
    same.traces[sid] = s.t_fw.trace(tid);
    const auto& maps = s.t_fw.trace(tid).maps;
    double pair_total = 0;
    for (const auto& m : maps) {
      const std::size_t w = m.shape().back(), rows = m.numel() / w;
      double h = 0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < w; ++k) {
          const double p = m[r * w + k];
          h -= p * std::log(p + 1e-8);
        }
      pair_total += h / static_cast<double>(rows);
    }
    expected += pair_total / static_cast<double>(maps.size());
  }
  expected /= static_cast<double>(state.pairs().size());
  EXPECT_NEAR(edam_loss(same, s.t_fw, state, Alignment::SDown, cfg).item(), expected, 1e-6);
  // Any other student map can only score higher.
  EXPECT_GT(edam_loss(s.s_fw, s.t_fw, state, Alignment::SDown, cfg).item(), expected);
}

TEST(EdamLoss, PairOrderDoesNotMatter) {
  Rig s(5);
  DistillLossConfig cfg;
  auto pairs = pair_map(5);
  const DistillState forward(KdMethod::EdamSDown, pairs, s.student, s.teacher, cfg, 6);
  std::reverse(pairs.begin(), pairs.end());
  const DistillState reversed(KdMethod::EdamSDown, pairs, s.student, s.teacher, cfg, 6);
  EXPECT_NEAR(edam_loss(s.s_fw, s.t_fw, forward, Alignment::SDown, cfg).item(),
              edam_loss(s.s_fw, s.t_fw, reversed, Alignment::SDown, cfg).item(), 1e-6);
}

TEST(EdamLoss, TemperatureRecomputesRowStochasticMaps) {
  Rig s(5);
  DistillLossConfig cfg;
  cfg.temperature = 3.0;
  const DistillState state(KdMethod::EdamSDown, pair_map(5), s.student, s.teacher, cfg, 7);
  const auto warm = align_attention(s.s_fw, s.t_fw, state, Alignment::SDown, 3.0);
  const auto base = align_attention(s.s_fw, s.t_fw, state, Alignment::SDown, 1.0);
  ASSERT_EQ(warm.size(), base.size());
  for (std::size_t p = 0; p < warm.size(); ++p) {
    for (std::size_t l = 0; l < warm[p].teacher.size(); ++l) {
      const Tensor& soft = warm[p].teacher[l];
      ASSERT_EQ(soft.shape(), base[p].teacher[l].shape());
      bool differs = false;
      for (std::size_t i = 0; i < soft.numel(); ++i) differs = differs || soft[i] != base[p].teacher[l][i];
      EXPECT_TRUE(differs);
      const std::size_t w = soft.shape().back();
      for (std::size_t r = 0; r < soft.numel() / w; ++r) {
        double sum = 0;
        for (std::size_t k = 0; k < w; ++k) sum += soft[r * w + k];
        EXPECT_NEAR(sum, 1.0, 1e-5);
      }
    }
  }
  cfg.temperature = 0.0;
  EXPECT_THROW(edam_loss(s.s_fw, s.t_fw, state, Alignment::SDown, cfg), Error);
}

TEST(EdamLoss, TemperatureSoftmaxPreservesArgmax) {
  std::mt19937_64 rng(108);
  std::normal_distribution<double> n;
  std::vector<Real> v(1 * 1 * 5 * 9);
  for (auto& x : v) x = static_cast<Real>(3 * n(rng));
  const Tensor logits({1, 1, 5, 9}, v);  // one head: the map is that head's softmax
  const Tensor hot = attention_map_at(logits, 1.0);
  const Tensor soft = attention_map_at(logits, 4.0);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto h = hot.data().subspan(r * 9, 9), s = soft.data().subspan(r * 9, 9);
    EXPECT_EQ(std::max_element(h.begin(), h.end()) - h.begin(), std::max_element(s.begin(), s.end()) - s.begin());
  }
}

TEST(EdamLoss, GradientsNeverReachTheTeacher) {
  Rig s(5);
  s.teacher.set_trainable(false);
  const ForwardTrace t_fw = network_forward(s.teacher, video_batch(s.cfg, 4, 13));
  DistillLossConfig cfg;
  const DistillState state(KdMethod::EdamSDown, pair_map(5), s.student, s.teacher, cfg, 8);
  backward(edam_loss(s.s_fw, t_fw, state, Alignment::SDown, cfg));
  for (const auto& [name, p] : s.teacher.parameters()) EXPECT_TRUE(p.grad().empty()) << name;
  bool any = false;
  for (const auto& [_, p] : s.student.parameters()) any = any || !p.grad().empty();
  EXPECT_TRUE(any);
}

// ---------------------------------------------------------------------------
// Alignment

TEST(Alignment, DownsampledStudentMatchesTeacherShapes) {
  Rig s(5);
  const DistillState state(KdMethod::EdamSDown, pair_map(5), s.student, s.teacher, {}, 9);
  const auto aligned = align_attention(s.s_fw, s.t_fw, state, Alignment::SDown, 1.0);
  const TransformerId va{V, A, Side::Student};
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    if (state.pairs()[p].first != va) continue;
    EXPECT_EQ(aligned[p].student[0].shape(), (Shape{4, 12, 24}));
    EXPECT_EQ(aligned[p].teacher[0].shape(), (Shape{4, 12, 24}));
  }
}

TEST(Alignment, UndownsampledStudentIsAnAlignmentError) {
  Rig s(5, false);
  for (auto method : {KdMethod::EdamSDown, KdMethod::CrdAttentionMap}) {
    try {
      DistillState(method, pair_map(5), s.student, s.teacher, {}, 9);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Alignment);
    }
  }
}

TEST(Alignment, StrideMustDivideVideoLength) {
  auto cfg = NetworkConfig::desk();
  cfg.shape(A).steps = 7;
  EXPECT_THROW(build_student(5, cfg, 1), Error);
}

TEST(Alignment, NoneWithEqualShapesIsIdentity) {
  Rig s(5);
  const DistillState state(KdMethod::EdamSDown, pair_map(5), s.student, s.teacher, {}, 9);
  const auto aligned = align_attention(s.s_fw, s.t_fw, state, Alignment::None, 1.0);
  for (std::size_t p = 0; p < aligned.size(); ++p) {
    const auto& orig = s.t_fw.trace(state.pairs()[p].second).maps;
    for (std::size_t l = 0; l < orig.size(); ++l) EXPECT_EQ(aligned[p].teacher[l].impl(), orig[l].impl());
  }
}

TEST(Alignment, UpsamplingMapsHaveStudentShapes) {
  Rig s(5, false);
  const DistillState state(KdMethod::EdamTUp, pair_map(5), s.student, s.teacher, {}, 10);
  ASSERT_TRUE(state.has_upsample());
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    const auto ss = s.student.map_shape(state.pairs()[p].first);
    const auto ts = s.teacher.map_shape(state.pairs()[p].second);
    EXPECT_EQ(state.upsample(p).rows.shape(), (Shape{ss.first, ts.first}));
    EXPECT_EQ(state.upsample(p).cols.shape(), (Shape{ts.second, ss.second}));
  }
  const auto aligned = align_attention(s.s_fw, s.t_fw, state, Alignment::TUp, 1.0);
  for (const auto& am : aligned) {
    for (std::size_t l = 0; l < am.student.size(); ++l) {
      EXPECT_EQ(am.student[l].shape(), am.teacher[l].shape());
      const std::size_t w = am.teacher[l].shape().back();
      for (std::size_t r = 0; r < am.teacher[l].numel() / w; ++r) {
        double sum = 0;
        for (std::size_t k = 0; k < w; ++k) sum += am.teacher[l][r * w + k];
        EXPECT_NEAR(sum, 1.0, 1e-5);
      }
    }
  }
  EXPECT_TRUE(std::isfinite(edam_loss(s.s_fw, s.t_fw, state, Alignment::TUp, {}).item()));
}

TEST(Alignment, InterpolationKeepsUniformMapsUniform) {
  const Tensor uniform = Tensor::full({1, 2, 2}, 0.5f);
  // The column map is [n_t, n_s], the transpose of the interpolation matrix.
  std::vector<Real> t(8);
  const Tensor interp = interpolation_matrix(4, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) t[j * 4 + i] = interp[i * 2 + j];
  const Tensor out = upsample_map(uniform, {interp, Tensor({2, 4}, t)});
  ASSERT_EQ(out.shape(), (Shape{1, 4, 4}));
  for (Real v : out.data()) EXPECT_NEAR(v, 0.25, 1e-6);
}

TEST(Alignment, InterpolationRowsSumToOne) {
  for (auto [out, in] : {std::pair<std::size_t, std::size_t>{24, 12}, {12, 6}, {5, 5}, {7, 3}}) {
    const Tensor m = interpolation_matrix(out, in);
    ASSERT_EQ(m.shape(), (Shape{out, in}));
    for (std::size_t r = 0; r < out; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < in; ++c) {
        EXPECT_GE(m[r * in + c], 0.0f);
        s += m[r * in + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  const Tensor eye = interpolation_matrix(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_FLOAT_EQ(eye[r * 4 + c], r == c ? 1.0f : 0.0f);
}

// ---------------------------------------------------------------------------
// Composite objective

TEST(TotalLoss, Weighting) {
  const Tensor lc = Tensor::scalar(2), lkd = Tensor::scalar(4);
  EXPECT_DOUBLE_EQ(total_loss(lc, lkd, 1, 0).value, 2.0);
  EXPECT_DOUBLE_EQ(total_loss(lc, lkd, 0, 1).value, 4.0);
  const auto b = total_loss(lc, lkd, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(b.value, 3.0);
  EXPECT_DOUBLE_EQ(b.classification, 2.0);
  EXPECT_DOUBLE_EQ(b.distillation, 4.0);
  EXPECT_DOUBLE_EQ(total_loss(lc, Tensor(), 1, 1).value, 2.0);
}

TEST(TotalLoss, WeightsOutsideUnitIntervalAreRejected) {
  for (auto [a, b] : {std::pair{1.5, 0.5}, {0.5, -0.1}, {-1.0, 0.0}}) {
    try {
      total_loss(Tensor::scalar(1), Tensor::scalar(1), a, b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Parameter);
    }
  }
}

TEST(TotalLoss, ZeroBetaIgnoresDistillationGradient) {
  Rig s(5);
  DistillLossConfig cfg;
  const DistillState state(KdMethod::EdamSDown, pair_map(5), s.student, s.teacher, cfg, 11);
  const Tensor lc = ops::cross_entropy_logits(s.s_fw.logits, {0, 1, 2, 3});
  const auto with_kd = backward(total_loss(lc, edam_loss(s.s_fw, s.t_fw, state, Alignment::SDown, cfg), 1, 0).total,
                                s.student.parameters());
  zero_grads(s.student.parameters());
  const ForwardTrace again = network_forward(s.student, video_batch(s.cfg, 4, 13));
  const auto plain =
      backward(total_loss(ops::cross_entropy_logits(again.logits, {0, 1, 2, 3}), Tensor(), 1, 0).total,
               s.student.parameters());
  for (const auto& [name, g] : plain) {
    const auto& h = with_kd.at(name);
    for (std::size_t i = 0; i < g.numel(); ++i) ASSERT_EQ(g[i], h[i]) << name;
  }
}

TEST(Methods, NamesRoundTrip) {
  for (auto m : {KdMethod::None, KdMethod::CrdFinal, KdMethod::CrdPenultimate, KdMethod::CrdPostAttention,
                 KdMethod::CrdAttentionMap, KdMethod::EdamSDown, KdMethod::EdamTUp}) {
    EXPECT_EQ(kd_method_from_name(kd_method_name(m)), m);
  }
  EXPECT_EQ(alignment_for(KdMethod::EdamTUp), Alignment::TUp);
  EXPECT_EQ(alignment_for(KdMethod::CrdAttentionMap), Alignment::SDown);
  try {
    kd_method_from_name("logit_kd");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Methods, ConfigurationOneDistillsAllNineStacks) {
  Rig s(1);
  const DistillState state(KdMethod::EdamSDown, pair_map(1), s.student, s.teacher, {}, 12);
  EXPECT_EQ(state.pairs().size(), 9u);
  EXPECT_TRUE(std::isfinite(edam_loss(s.s_fw, s.t_fw, state, Alignment::SDown, {}).item()));
}
