#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfd/denoise.hpp"
#include "cfd/losses.hpp"
#include "cfd/rng.hpp"

using namespace cfd;

namespace {

// From-scratch re-evaluation of the embedding/classifier head with plain
// loops, independent of the library's forward paths.
std::vector<double> naive_head_probs(const Model& m, const std::vector<double>& f,
                                     std::int64_t n) {
  const std::int64_t c = m.config.feature_channels;
  const std::int64_t h = m.config.feature_h(), w = m.config.feature_w();
  const auto& cw = m.theta_e[0].value;  // [c,c,3,3]
  const auto& cb = m.theta_e[1].value;
  const auto& fw = m.theta_e[2].value;  // [ed,c]
  const auto& fb = m.theta_e[3].value;
  const auto& lw = m.theta_c[0].value;  // [2,ed]
  const auto& lb = m.theta_c[1].value;
  const std::int64_t ed = m.config.embed_dim;

  std::vector<double> probs(static_cast<std::size_t>(2 * n));
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<double> pooled(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t co = 0; co < c; ++co) {
      double acc_pool = 0.0;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          double acc = cb.values[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t u = 0; u < 3; ++u)
              for (std::int64_t v = 0; v < 3; ++v) {
                const std::int64_t yy = y - 1 + u, xx = x - 1 + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                acc += f[static_cast<std::size_t>(((b * c + ci) * h + yy) * w + xx)] *
                       cw.values[static_cast<std::size_t>(((co * c + ci) * 3 + u) * 3 + v)];
              }
          acc_pool += acc > 0 ? acc : 0;
        }
      pooled[static_cast<std::size_t>(co)] = acc_pool / static_cast<double>(h * w);
    }
    std::vector<double> emb(static_cast<std::size_t>(ed), 0.0);
    for (std::int64_t j = 0; j < ed; ++j) {
      double acc = fb.values[static_cast<std::size_t>(j)];
      for (std::int64_t i = 0; i < c; ++i)
        acc += fw.values[static_cast<std::size_t>(j * c + i)] * pooled[static_cast<std::size_t>(i)];
      emb[static_cast<std::size_t>(j)] = acc;
    }
    double logit[2];
    for (int k = 0; k < 2; ++k) {
      double acc = lb.values[static_cast<std::size_t>(k)];
      for (std::int64_t j = 0; j < ed; ++j)
        acc += lw.values[static_cast<std::size_t>(k * ed + j)] * emb[static_cast<std::size_t>(j)];
      logit[k] = acc;
    }
    const double mx = std::max(logit[0], logit[1]);
    const double e0 = std::exp(logit[0] - mx), e1 = std::exp(logit[1] - mx);
    probs[static_cast<std::size_t>(2 * b)] = e0 / (e0 + e1);
    probs[static_cast<std::size_t>(2 * b + 1)] = e1 / (e0 + e1);
  }
  return probs;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.generator_stages = {{4, 2}, {4, 1}};
  cfg.feature_channels = 4;
  cfg.embed_dim = 6;
  return cfg;
}

}  // namespace

TEST_CASE("ablate_channel zeroes exactly one channel") {
  Tensor f = Tensor::zeros({2, 2, 3, 3});
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 3; ++x) {
        f.at4(b, 0, y, x) = 1.0;
        f.at4(b, 1, y, x) = 2.0;
      }
  const Tensor a0 = ablate_channel(f, 0);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 3; ++x) {
        CHECK(a0.at4(b, 0, y, x) == 0.0);
        CHECK(a0.at4(b, 1, y, x) == 2.0);
      }
  CHECK_THROWS_AS(ablate_channel(f, 2), std::invalid_argument);
  CHECK_THROWS_AS(ablate_channel(f, -1), std::invalid_argument);
}

TEST_CASE("ablating every channel once sums to (c-1) times f") {
  Rng rng(21);
  Tensor f = Tensor::zeros({2, 5, 4, 4});
  for (double& v : f.values) v = rng.uniform(-1, 1);
  std::vector<double> acc(f.values.size(), 0.0);
  for (std::int64_t ch = 0; ch < 5; ++ch) {
    const Tensor a = ablate_channel(f, ch);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += a.values[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i)
    CHECK(acc[i] == doctest::Approx(4.0 * f.values[i]).epsilon(1e-12));
}

TEST_CASE("ablate_channel differs from f on exactly N*h*w entries") {
  Rng rng(22);
  Tensor f = Tensor::zeros({3, 4, 5, 6});
  for (double& v : f.values) v = rng.uniform(0.1, 1.0);  // nonzero everywhere
  const Tensor a = ablate_channel(f, 2);
  std::int64_t diffs = 0;
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (f.values[i] != a.values[i]) ++diffs;
  CHECK(diffs == 3 * 5 * 6);
}

TEST_CASE("importance_update matches Eq.-8 arithmetic on a hand-built model") {
  // Two-channel head built so the live probability is sigma(ln6 * m0 + ln1.5)
  // where m0 is the mean of channel 0: a = 0.9, a_0 = 0.6, a_1 = a.
  ModelConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 4;
  cfg.generator_stages = {{2, 1}};
  cfg.feature_channels = 2;
  cfg.embed_dim = 2;
  Model m = init_model(cfg, 1);

  auto& cw = m.theta_e[0].value;  // [2,2,3,3] center-tap identity
  std::fill(cw.values.begin(), cw.values.end(), 0.0);
  cw.at4(0, 0, 1, 1) = 1.0;
  cw.at4(1, 1, 1, 1) = 1.0;
  std::fill(m.theta_e[1].value.values.begin(), m.theta_e[1].value.values.end(), 0.0);
  m.theta_e[2].value.values = {1.0, 0.0, 0.0, 1.0};  // identity fc
  std::fill(m.theta_e[3].value.values.begin(), m.theta_e[3].value.values.end(), 0.0);
  m.theta_c[0].value.values = {std::log(6.0), 0.0, 0.0, 0.0};
  m.theta_c[1].value.values = {std::log(1.5), 0.0};

  Tensor f = Tensor::zeros({1, 2, 4, 4});
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) {
      f.at4(0, 0, y, x) = 1.0;
      f.at4(0, 1, y, x) = 0.7;
    }

  ChannelDistance dis(2);
  importance_update(m, f, dis);
  CHECK(dis.batches_seen == 1);
  CHECK(dis.dis[0] == doctest::Approx(0.3).epsilon(1e-12));
  // channel 1 has zero downstream classifier weight: increment exactly 0
  CHECK(dis.dis[1] == 0.0);

  // cumulative across calls
  importance_update(m, f, dis);
  CHECK(dis.dis[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(dis.batches_seen == 2);
}

TEST_CASE("importance_update matches an independent re-evaluation oracle") {
  const ModelConfig cfg = small_config();
  Rng rng(23);
  for (int trial = 0; trial < 4; ++trial) {
    const Model m = init_model(cfg, 100 + trial);
    Tensor f = Tensor::zeros({3, 4, cfg.feature_h(), cfg.feature_w()});
    for (double& v : f.values) v = rng.uniform(-0.5, 1.5);

    ChannelDistance dis(4);
    importance_update(m, f, dis);

    const auto clean = naive_head_probs(m, f.values, 3);
    for (std::int64_t ch = 0; ch < 4; ++ch) {
      const Tensor ab = ablate_channel(f, ch);
      const auto probs = naive_head_probs(m, ab.values, 3);
      double expect = 0.0;
      for (int b = 0; b < 3; ++b)
        expect += std::abs(clean[static_cast<std::size_t>(2 * b)] -
                           probs[static_cast<std::size_t>(2 * b)]);
      expect /= 3.0;
      CHECK(dis.dis[static_cast<std::size_t>(ch)] ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("importance_update never mutates parameters and rejects mismatches") {
  const ModelConfig cfg = small_config();
  const Model m = init_model(cfg, 3);
  std::vector<std::vector<double>> before;
  for (const Tensor* p : m.all_params()) before.push_back(p->values);

  Rng rng(24);
  Tensor f = Tensor::zeros({2, 4, cfg.feature_h(), cfg.feature_w()});
  for (double& v : f.values) v = rng.uniform(-1, 1);
  ChannelDistance dis(4);
  importance_update(m, f, dis);
  importance_update(m, f, dis);

  const auto params = m.all_params();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(params[i]->values == before[i]);

  // dis entries never decrease
  ChannelDistance d2(4);
  std::vector<double> prev(4, 0.0);
  for (int step = 0; step < 3; ++step) {
    importance_update(m, f, d2);
    for (int i = 0; i < 4; ++i) {
      CHECK(d2.dis[static_cast<std::size_t>(i)] >= prev[static_cast<std::size_t>(i)]);
      prev[static_cast<std::size_t>(i)] = d2.dis[static_cast<std::size_t>(i)];
    }
  }

  Tensor wrong = Tensor::zeros({2, 3, cfg.feature_h(), cfg.feature_w()});
  CHECK_THROWS_AS(importance_update(m, wrong, dis), std::invalid_argument);
}

TEST_CASE("select_topk examples and sort oracle") {
  ChannelDistance dis(4);
  dis.dis = {0.1, 0.5, 0.3, 0.4};
  const DenoiseMask m = select_topk(dis, 2);
  CHECK(m.keep == std::vector<std::uint8_t>({0, 1, 0, 1}));
  CHECK(m.k == 2);

  ChannelDistance tie(3);
  tie.dis = {0.5, 0.5, 0.2};
  CHECK(select_topk(tie, 1).keep == std::vector<std::uint8_t>({1, 0, 0}));

  CHECK_THROWS_AS(select_topk(dis, 5), std::invalid_argument);
  CHECK_THROWS_AS(select_topk(dis, 0), std::invalid_argument);

  // brute-force oracle: sort (-dis, index), take first k
  Rng rng(25);
  for (int trial = 0; trial < 300; ++trial) {
    const std::int64_t c = 1 + rng.uniform_int(12);
    ChannelDistance d(c);
    for (double& v : d.dis)
      v = rng.uniform_int(4) == 0 ? 0.25 : rng.uniform(0, 1);  // force ties often
    const std::int64_t k = 1 + rng.uniform_int(c);
    const DenoiseMask mask = select_topk(d, k);

    std::vector<std::pair<double, std::int64_t>> pairs;
    for (std::int64_t i = 0; i < c; ++i)
      pairs.push_back({-d.dis[static_cast<std::size_t>(i)], i});
    std::sort(pairs.begin(), pairs.end());
    std::vector<std::uint8_t> expect(static_cast<std::size_t>(c), 0);
    for (std::int64_t i = 0; i < k; ++i)
      expect[static_cast<std::size_t>(pairs[static_cast<std::size_t>(i)].second)] = 1;
    CHECK(mask.keep == expect);
  }
}

TEST_CASE("select_bottomk keeps the least important channels") {
  ChannelDistance dis(4);
  dis.dis = {0.1, 0.5, 0.3, 0.4};
  CHECK(select_bottomk(dis, 2).keep == std::vector<std::uint8_t>({1, 0, 1, 0}));
}

TEST_CASE("suppress_channels identity, support, and gradient blocking") {
  const ModelConfig cfg = small_config();
  const Model model = init_model(cfg, 31);
  Rng rng(32);
  Tensor x = Tensor::zeros({2, 1, 8, 8});
  for (double& v : x.values) v = rng.uniform(0, 1);

  // all-true mask is the identity
  {
    Tape tape;
    BackboneRun run(tape, model, false);
    tape.leaf(x);
    const Tensor f = run.generator(x);
    const Tensor f2 = suppress_channels(tape, f, DenoiseMask::all_kept(4));
    CHECK(f2.values == f.values);
  }

  // nonzero support is inside the kept channels
  {
    ChannelDistance dis(4);
    dis.dis = {0.9, 0.1, 0.8, 0.2};
    const DenoiseMask mask = select_topk(dis, 2);  // keeps {0,2}
    Tape tape;
    BackboneRun run(tape, model, false);
    tape.leaf(x);
    const Tensor f = run.generator(x);
    const Tensor f2 = suppress_channels(tape, f, mask);
    const std::int64_t hw = cfg.feature_h() * cfg.feature_w();
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t ch = 0; ch < 4; ++ch)
        for (std::int64_t s = 0; s < hw; ++s) {
          const double v = f2.values[static_cast<std::size_t>((b * 4 + ch) * hw + s)];
          if (ch == 1 || ch == 3) CHECK(v == 0.0);
        }

    // length mismatch rejected
    DenoiseMask bad;
    bad.keep = {1, 0};
    bad.k = 1;
    CHECK_THROWS_AS(suppress_channels(tape, f, bad), std::invalid_argument);
  }

  // two-graph comparison: gradients w.r.t. generator parameters through the
  // mask equal those through a head whose weights for suppressed channels are
  // hard-zeroed (the detached formulation)
  {
    ChannelDistance dis(4);
    dis.dis = {0.9, 0.1, 0.8, 0.2};
    const DenoiseMask mask = select_topk(dis, 2);
    const std::vector<int> y = {0, 1};

    Tape t1;
    BackboneRun run1(t1, model, true);
    Tensor x1 = x;
    t1.leaf(x1);
    const Tensor f1 = run1.generator(x1);
    const Tensor o1 = run1.classifier(run1.embedding(suppress_channels(t1, f1, mask)));
    t1.backward(t1.cross_entropy(o1, y));
    const auto g1 = run1.take_param_grads();

    Model detached = model;
    auto& cw = detached.theta_e[0].value;  // [c,c,3,3]
    for (std::int64_t co = 0; co < 4; ++co)
      for (std::int64_t ci = 0; ci < 4; ++ci) {
        if (mask.keep[static_cast<std::size_t>(ci)]) continue;
        for (std::int64_t u = 0; u < 3; ++u)
          for (std::int64_t v = 0; v < 3; ++v) cw.at4(co, ci, u, v) = 0.0;
      }
    Tape t2;
    BackboneRun run2(t2, detached, true);
    Tensor x2 = x;
    t2.leaf(x2);
    const Tensor f2 = run2.generator(x2);
    const Tensor o2 = run2.classifier(run2.embedding(f2));
    t2.backward(t2.cross_entropy(o2, y));
    const auto g2 = run2.take_param_grads();

    // generator parameters are the first 2 * n_stages entries
    const std::size_t n_gen = model.theta_g.size();
    for (std::size_t p = 0; p < n_gen; ++p) {
      REQUIRE(g1[p].size() == g2[p].size());
      for (std::size_t i = 0; i < g1[p].size(); ++i)
        CHECK(g1[p][i] == doctest::Approx(g2[p][i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("denoised_logits shares the generator and matches recomputation") {
  const ModelConfig cfg = small_config();
  const Model model = init_model(cfg, 33);
  Rng rng(34);
  Tensor x = Tensor::zeros({2, 1, 8, 8});
  for (double& v : x.values) v = rng.uniform(0, 1);

  ChannelDistance dis(4);
  dis.dis = {0.4, 0.1, 0.9, 0.3};
  const DenoiseMask mask = select_topk(dis, 2);

  Tape tape;
  BackboneRun run(tape, model, false);
  tape.leaf(x);
  const DenoisedPaths paths = denoised_logits(tape, run, x, mask);

  // all-true mask: suppressed path collapses onto the clean one
  {
    Tape t2;
    BackboneRun run2(t2, model, false);
    Tensor x2 = x;
    t2.leaf(x2);
    const DenoisedPaths p2 = denoised_logits(t2, run2, x2, DenoiseMask::all_kept(4));
    for (std::size_t i = 0; i < p2.o.values.size(); ++i)
      CHECK(p2.o2.values[i] == doctest::Approx(p2.o.values[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < p2.e.values.size(); ++i)
      CHECK(p2.e2.values[i] == doctest::Approx(p2.e.values[i]).epsilon(1e-12));
  }

  // independent recomputation of the suppressed path from a fresh graph
  {
    Tape t3;
    BackboneRun run3(t3, model, false);
    Tensor x3 = x;
    t3.leaf(x3);
    Tensor f3 = run3.generator(x3);
    Tensor fm = f3;
    fm.node_id = -1;
    const std::int64_t hw = cfg.feature_h() * cfg.feature_w();
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t ch = 0; ch < 4; ++ch) {
        if (mask.keep[static_cast<std::size_t>(ch)]) continue;
        for (std::int64_t s = 0; s < hw; ++s)
          fm.values[static_cast<std::size_t>((b * 4 + ch) * hw + s)] = 0.0;
      }
    t3.leaf(fm);
    const Tensor o2_ref = run3.classifier(run3.embedding(fm));
    for (std::size_t i = 0; i < o2_ref.values.size(); ++i)
      CHECK(paths.o2.values[i] == doctest::Approx(o2_ref.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("permutation equivariance of suppression and selection") {
  Rng rng(35);
  Tensor f = Tensor::zeros({2, 5, 3, 3});
  for (double& v : f.values) v = rng.uniform(-1, 1);
  ChannelDistance dis(5);
  for (double& v : dis.dis) v = rng.uniform(0, 1);  // distinct w.p. 1
  const std::vector<std::int64_t> perm = {3, 0, 4, 1, 2};

  const DenoiseMask mask = select_topk(dis, 2);
  ChannelDistance pdis(5);
  for (int i = 0; i < 5; ++i)
    pdis.dis[static_cast<std::size_t>(i)] =
        dis.dis[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const DenoiseMask pmask = select_topk(pdis, 2);
  for (int i = 0; i < 5; ++i)
    CHECK(pmask.keep[static_cast<std::size_t>(i)] ==
          mask.keep[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);

  // suppress(permuted f, permuted mask) == permute(suppress(f, mask)), bitwise
  Tensor pf = Tensor::zeros({2, 5, 3, 3});
  for (std::int64_t b = 0; b < 2; ++b)
    for (int i = 0; i < 5; ++i)
      for (std::int64_t s = 0; s < 9; ++s)
        pf.values[static_cast<std::size_t>((b * 5 + i) * 9 + s)] =
            f.values[static_cast<std::size_t>((b * 5 + perm[static_cast<std::size_t>(i)]) * 9 + s)];

  Tape tape;
  tape.leaf(f);
  tape.leaf(pf);
  const Tensor s1 = suppress_channels(tape, f, mask);
  const Tensor s2 = suppress_channels(tape, pf, pmask);
  for (std::int64_t b = 0; b < 2; ++b)
    for (int i = 0; i < 5; ++i)
      for (std::int64_t s = 0; s < 9; ++s)
        CHECK(s2.values[static_cast<std::size_t>((b * 5 + i) * 9 + s)] ==
              s1.values[static_cast<std::size_t>((b * 5 + perm[static_cast<std::size_t>(i)]) * 9 + s)]);
}
