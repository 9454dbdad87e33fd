#include "aldmn/memory.hpp"

#include <cmath>

#include "doctest.h"
#include "test_util.hpp"

using namespace aldmn;
using testutil::check_grads;
using testutil::random_tensor;
using testutil::row_of;

namespace {

using Vec = std::vector<double>;

// Literal single-example evaluation of the scoring network and softmax,
// independent of the tensor ops.
Vec oracle_alpha(const std::vector<Vec>& facts, const Vec& q, const Vec& m,
                 const AttentionParams& p) {
  const size_t d = q.size();
  const int d_a = p.W1.extent(0);
  Vec beta(facts.size());
  for (size_t f = 0; f < facts.size(); ++f) {
    Vec z(2 * d);
    for (size_t j = 0; j < d; ++j) {
      z[j] = facts[f][j] * q[j];
      z[d + j] = facts[f][j] * m[j];
    }
    double score = p.b2.at(0);
    for (int i = 0; i < d_a; ++i) {
      double acc = p.b1.at(i);
      for (size_t j = 0; j < 2 * d; ++j)
        acc += p.W1.at(i, static_cast<int>(j)) * z[j];
      score += p.W2.at(0, i) * std::tanh(acc);
    }
    beta[f] = score;
  }
  double mx = beta[0];
  for (double b : beta) mx = std::max(mx, b);
  double zsum = 0.0;
  Vec alpha(facts.size());
  for (size_t f = 0; f < facts.size(); ++f) {
    alpha[f] = std::exp(beta[f] - mx);
    zsum += alpha[f];
  }
  for (auto& a : alpha) a /= zsum;
  return alpha;
}

std::vector<Tensor> random_facts(int F, int B, int d, Rng& rng) {
  std::vector<Tensor> facts;
  for (int f = 0; f < F; ++f) facts.push_back(random_tensor({B, d}, rng, -1.0, 1.0));
  return facts;
}

std::vector<uint8_t> all_on(int B, int F) {
  return std::vector<uint8_t>(static_cast<size_t>(B) * F, 1);
}

}  // namespace

TEST_CASE("identical facts attract equal attention") {
  Rng rng(50);
  const int d = 4;
  AttentionParams p = AttentionParams::init(d, d, 0.4, rng);
  Tensor fact = random_tensor({1, d}, rng, -1.0, 1.0);
  Tensor q = random_tensor({1, d}, rng, -1.0, 1.0);
  Tensor m = random_tensor({1, d}, rng, -1.0, 1.0);
  Tensor alpha = attention_gates({fact, fact}, q, m, p, all_on(1, 2));
  CHECK(alpha.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(alpha.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zero scorer head gives uniform attention over unmasked facts") {
  Rng rng(51);
  const int d = 3;
  AttentionParams p = AttentionParams::init(d, d, 0.4, rng);
  p.W2 = Tensor::zeros({1, d});
  p.b2 = Tensor::zeros({1});
  auto facts = random_facts(4, 2, d, rng);
  Tensor q = random_tensor({2, d}, rng, -1.0, 1.0);
  std::vector<uint8_t> mask{1, 1, 1, 1, 1, 1, 0, 0};  // example 1 sees two facts
  Tensor alpha = attention_gates(facts, q, q, p, mask);
  for (int f = 0; f < 4; ++f) CHECK(alpha.at(0, f) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(alpha.at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(alpha.at(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(alpha.at(1, 2) == 0.0);
  CHECK(alpha.at(1, 3) == 0.0);
}

TEST_CASE("attention matches the scalar oracle on random facts") {
  Rng rng(52);
  const int d = 3;
  AttentionParams p = AttentionParams::init(d, 5, 0.5, rng);
  auto facts = random_facts(3, 2, d, rng);
  Tensor q = random_tensor({2, d}, rng, -1.0, 1.0);
  Tensor m = random_tensor({2, d}, rng, -1.0, 1.0);
  Tensor alpha = attention_gates(facts, q, m, p, all_on(2, 3));
  for (int i = 0; i < 2; ++i) {
    std::vector<Vec> frows;
    for (const auto& f : facts) frows.push_back(row_of(f, i));
    Vec want = oracle_alpha(frows, row_of(q, i), row_of(m, i), p);
    for (int f = 0; f < 3; ++f)
      CHECK(alpha.at(i, f) == doctest::Approx(want[static_cast<size_t>(f)]).epsilon(1e-12));
  }
}

TEST_CASE("context vector selects and interpolates") {
  Rng rng(53);
  auto facts = random_facts(3, 1, 4, rng);

  Tensor onehot = Tensor::from({1, 3}, {0, 0, 1});
  Tensor c = context_vector(onehot, facts);
  for (int j = 0; j < 4; ++j) CHECK(c.at(0, j) == facts[2].at(0, j));

  std::vector<Tensor> two{Tensor::from({1, 2}, {0, 0}), Tensor::from({1, 2}, {4, 8})};
  Tensor mix = context_vector(Tensor::from({1, 2}, {0.25, 0.75}), two);
  CHECK(mix.at(0, 0) == 3.0);
  CHECK(mix.at(0, 1) == 6.0);

  // convexity: each component within the per-component fact range
  Tensor alpha = softmax(random_tensor({1, 3}, rng), 1);
  Tensor conv = context_vector(alpha, facts);
  for (int j = 0; j < 4; ++j) {
    double lo = facts[0].at(0, j), hi = lo;
    for (int f = 1; f < 3; ++f) {
      lo = std::min(lo, facts[f].at(0, j));
      hi = std::max(hi, facts[f].at(0, j));
    }
    CHECK(conv.at(0, j) >= lo - 1e-12);
    CHECK(conv.at(0, j) <= hi + 1e-12);
  }
}

TEST_CASE("memory update clamps and offsets") {
  const int d = 2;
  Tensor m = Tensor::from({1, d}, {0.5, -0.5});
  Tensor c = Tensor::from({1, d}, {1, 1});
  Tensor q = Tensor::from({1, d}, {2, 2});

  Tensor low = memory_update(m, c, q, Tensor::zeros({d, 3 * d}), Tensor::full({d}, -1.0));
  for (double v : low.values()) CHECK(v == 0.0);

  Tensor high = memory_update(m, c, q, Tensor::zeros({d, 3 * d}), Tensor::full({d}, 2.0));
  for (double v : high.values()) CHECK(v == 2.0);
}

TEST_CASE("memory stays nonnegative over random draws") {
  Rng rng(54);
  const int d = 3;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor W3 = random_tensor({d, 3 * d}, rng);
    Tensor b3 = random_tensor({d}, rng);
    Tensor m = memory_update(random_tensor({1, d}, rng), random_tensor({1, d}, rng),
                             random_tensor({1, d}, rng), W3, b3);
    for (double v : m.values()) CHECK(v >= 0.0);
  }
}

TEST_CASE("episodes iterate the attend-update recursion") {
  Rng rng(55);
  const int d = 3;
  AttentionParams p = AttentionParams::init(d, d, 0.5, rng);
  Tensor W3 = random_tensor({d, 3 * d}, rng, -0.5, 0.5);
  Tensor b3 = random_tensor({d}, rng, -0.5, 0.5);
  auto facts = random_facts(2, 1, d, rng);
  Tensor q = random_tensor({1, d}, rng, -1.0, 1.0);

  auto res = run_episodes(facts, all_on(1, 2), q, p, W3, b3, 3);
  CHECK(res.alphas.size() == 3);

  // scalar re-evaluation of the full three-pass recursion
  std::vector<Vec> frows{row_of(facts[0], 0), row_of(facts[1], 0)};
  Vec qv = row_of(q, 0);
  Vec m = qv;
  for (int pass = 0; pass < 3; ++pass) {
    Vec alpha = oracle_alpha(frows, qv, m, p);
    for (int f = 0; f < 2; ++f)
      CHECK(res.alphas[static_cast<size_t>(pass)].at(0, f) ==
            doctest::Approx(alpha[static_cast<size_t>(f)]).epsilon(1e-11));
    Vec c(static_cast<size_t>(d), 0.0);
    for (size_t f = 0; f < frows.size(); ++f)
      for (int j = 0; j < d; ++j) c[static_cast<size_t>(j)] += alpha[f] * frows[f][static_cast<size_t>(j)];
    Vec next(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
      double acc = b3.at(i);
      for (int j = 0; j < d; ++j) {
        acc += W3.at(i, j) * m[static_cast<size_t>(j)];
        acc += W3.at(i, d + j) * c[static_cast<size_t>(j)];
        acc += W3.at(i, 2 * d + j) * qv[static_cast<size_t>(j)];
      }
      next[static_cast<size_t>(i)] = std::max(0.0, acc);
    }
    m = next;
  }
  for (int j = 0; j < d; ++j)
    CHECK(res.memory.at(0, j) == doctest::Approx(m[static_cast<size_t>(j)]).epsilon(1e-11));

  CHECK_THROWS_AS(run_episodes(facts, all_on(1, 2), q, p, W3, b3, 0), std::invalid_argument);
  auto one = run_episodes(facts, all_on(1, 2), q, p, W3, b3, 1);
  CHECK(one.alphas.size() == 1);
}

TEST_CASE("attention rows normalize with zero mass on masked facts") {
  Rng rng(56);
  const int d = 3;
  AttentionParams p = AttentionParams::init(d, d, 0.5, rng);
  for (int trial = 0; trial < 200; ++trial) {
    const int F = 1 + static_cast<int>(rng.index(6));
    const int B = 1 + static_cast<int>(rng.index(3));
    auto facts = random_facts(F, B, d, rng);
    std::vector<uint8_t> mask(static_cast<size_t>(B) * F);
    for (int i = 0; i < B; ++i) {
      bool any = false;
      for (int f = 0; f < F; ++f) {
        mask[static_cast<size_t>(i) * F + f] = rng.bernoulli(0.7) ? 1 : 0;
        any |= mask[static_cast<size_t>(i) * F + f] != 0;
      }
      if (!any) mask[static_cast<size_t>(i) * F] = 1;
    }
    Tensor q = random_tensor({B, d}, rng, -1.0, 1.0);
    Tensor alpha = attention_gates(facts, q, q, p, mask);
    for (int i = 0; i < B; ++i) {
      double s = 0.0;
      for (int f = 0; f < F; ++f) {
        if (!mask[static_cast<size_t>(i) * F + f])
          CHECK(alpha.at(i, f) == 0.0);
        s += alpha.at(i, f);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("permuting facts with their mask permutes attention equivariantly") {
  Rng rng(57);
  const int d = 3, F = 4;
  AttentionParams p = AttentionParams::init(d, d, 0.5, rng);
  Tensor W3 = random_tensor({d, 3 * d}, rng, -0.5, 0.5);
  Tensor b3 = random_tensor({d}, rng, -0.5, 0.5);
  auto facts = random_facts(F, 1, d, rng);
  std::vector<uint8_t> mask{1, 1, 0, 1};
  Tensor q = random_tensor({1, d}, rng, -1.0, 1.0);

  auto base = run_episodes(facts, mask, q, p, W3, b3, 2);

  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<Tensor> pf(F);
  std::vector<uint8_t> pm(F);
  for (int f = 0; f < F; ++f) {
    pf[static_cast<size_t>(f)] = facts[static_cast<size_t>(perm[static_cast<size_t>(f)])];
    pm[static_cast<size_t>(f)] = mask[static_cast<size_t>(perm[static_cast<size_t>(f)])];
  }
  auto permuted = run_episodes(pf, pm, q, p, W3, b3, 2);

  for (size_t pass = 0; pass < 2; ++pass)
    for (int f = 0; f < F; ++f)
      CHECK(permuted.alphas[pass].at(0, f) ==
            doctest::Approx(base.alphas[pass].at(0, perm[static_cast<size_t>(f)])).epsilon(1e-12));
  for (int j = 0; j < d; ++j)
    CHECK(permuted.memory.at(0, j) == doctest::Approx(base.memory.at(0, j)).epsilon(1e-12));
}

TEST_CASE("gradients reach the question vector through the episodes") {
  Rng rng(58);
  const int d = 3;
  AttentionParams p = AttentionParams::init(d, d, 0.5, rng);
  Tensor W3 = random_tensor({d, 3 * d}, rng, -0.5, 0.5);
  Tensor b3 = random_tensor({d}, rng, -0.5, 0.5);
  auto facts = random_facts(3, 2, d, rng);
  Tensor q = random_tensor({1, d}, rng, -1.0, 1.0);

  auto forward = [&]() {
    Tensor q_rows = broadcast_rows(q, 2);
    auto res = run_episodes(facts, all_on(2, 3), q_rows, p, W3, b3, 2);
    // both consumers of q: the episode recursion and a classifier-style concat
    return sum(mul(concat({q_rows, res.memory}, 1), concat({q_rows, res.memory}, 1)));
  };
  q.zero_grad();
  backward(forward());
  double norm = 0.0;
  for (double g : q.grad()) norm += std::abs(g);
  CHECK(norm > 1e-8);

  // and the whole episode stack differentiates correctly
  check_grads(forward, {q, p.W1, p.b1, p.W2, p.b2, W3, b3}, 1e-5);
  for (auto& f : facts) check_grads(forward, {f}, 1e-5);
}
