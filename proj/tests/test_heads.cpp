#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "xrhead/errors.hpp"
#include "xrhead/gradcheck.hpp"
#include "xrhead/heads.hpp"

using namespace xrhead;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

std::vector<std::size_t> random_perm(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// T'[w] = T[perm[w]]
Tensor permute_classes(const Tensor& T, const std::vector<std::size_t>& perm) {
  const std::size_t block = T.numel() / T.dim(0);
  std::vector<double> v(T.numel());
  for (std::size_t w = 0; w < perm.size(); ++w) {
    std::copy_n(T.values().begin() + static_cast<std::ptrdiff_t>(perm[w] * block), block, v.begin() + static_cast<std::ptrdiff_t>(w * block));
  }
  return Tensor(T.shape(), v);
}

// V'[s] = V[perm[s]] for V [S x E]; T'[w, s] = T[w, perm[s]] for T [W x S x E]
Tensor permute_parts_V(const Tensor& V, const std::vector<std::size_t>& perm) { return permute_classes(V, perm); }

Tensor permute_parts_T(const Tensor& T, const std::vector<std::size_t>& perm) {
  const std::size_t W = T.dim(0), S = T.dim(1), E = T.dim(2);
  std::vector<double> v(T.numel());
  for (std::size_t w = 0; w < W; ++w) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t e = 0; e < E; ++e) v[(w * S + s) * E + e] = T.values()[(w * S + perm[s]) * E + e];
    }
  }
  return Tensor(T.shape(), v);
}

Classifier sum_rows() {
  return [](const Tensor& x) { return reshape(sum_axis(x, 1), {x.dim(0), 1}); };
}

}  // namespace

TEST_SUITE("heads") {

TEST_CASE("head names round trip") {
  for (HeadKind k : all_head_kinds()) CHECK(parse_head_kind(head_name(k)) == k);
  CHECK_THROWS_AS(parse_head_kind("CRM"), ConfigError);
}

TEST_CASE("align examples") {
  Tensor v({2}, {1, 0});
  Tensor t({2, 2}, {1, 0, 0.6, 0.8});
  Tensor l = align_predict(v, t);
  CHECK(l.values()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(l.values()[1] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(align_predict(v, Tensor({1, 2}, {0, 3})).values()[0] == 0.0);
  CHECK_THROWS_AS(align_predict(Tensor({2}, {0, 0}), t), DegenerateInputError);
}

TEST_CASE("pwcs examples") {
  Tensor V({2, 2}, {1, 0, 0, 1});
  Tensor same({1, 2, 2}, {1, 0, 0, 1});
  CHECK(pwcs_predict(V, same).values()[0] == doctest::Approx(1.0).epsilon(1e-15));
  Tensor orth({1, 2, 2}, {0, 1, 1, 0});
  CHECK(pwcs_predict(V, orth).values()[0] == 0.0);
  Tensor mixed({1, 2, 2}, {1, 0, 0.8, 0.6});  // cosines 1.0 and 0.6
  CHECK(pwcs_predict(V, mixed).values()[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(pwcs_predict(Tensor({2, 2}, {0, 0, 1, 0}), same), DegenerateInputError);
  CHECK_THROWS_AS(pwcs_predict(Tensor({3, 2}, {1, 0, 0, 1, 1, 1}), same), DimensionError);
}

TEST_CASE("cross relation hand example and layout") {
  Tensor V({2, 2}, {1, 0, 0, 1});
  Tensor T({2, 2, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  CHECK(testing::to_vec(cross_relation(V, T)) == std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
  CHECK(relation_index(1, 0, 1, 2, 2) == 5);
  std::mt19937_64 rng(1);
  CHECK(cross_relation(random_tensor({4, 3}, rng), random_tensor({200, 4, 3}, rng)).numel() == 3200);
  const Tensor zero_r = cross_relation(Tensor::zeros({2, 2}), T);
  for (double r : zero_r.values()) CHECK(r == 0.0);
}

TEST_CASE("pwcs and cross relation agree with brute-force loops") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t S = 1 + rng() % 5, W = 1 + rng() % 7, E = 1 + rng() % 9;
    Tensor V = random_tensor({S, E}, rng), T = random_tensor({W, S, E}, rng);
    CHECK(max_abs_diff(pwcs_predict(V, T).values(), oracle::pwcs(V, T)) < 1e-9);
    CHECK(max_abs_diff(cross_relation(V, T).values(), oracle::cross_relation(V, T)) < 1e-9);
  }
}

TEST_CASE("batched heads equal per-image heads") {
  std::mt19937_64 rng(3);
  Tensor Vb = random_tensor({3, 2, 4}, rng), T = random_tensor({5, 2, 4}, rng);
  Tensor pb = pwcs_predict(Vb, T), rb = cross_relation(Vb, T);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor V({2, 4}, std::vector<double>(Vb.values().begin() + b * 8, Vb.values().begin() + (b + 1) * 8));
    CHECK(max_abs_diff(std::span(pb.values()).subspan(b * 5, 5), oracle::pwcs(V, T)) < 1e-12);
    CHECK(max_abs_diff(std::span(rb.values()).subspan(b * 20, 20), oracle::cross_relation(V, T)) < 1e-12);
  }
}

TEST_CASE("S=1 part-wise similarity is the aligning pattern") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor v = random_tensor({1, 6}, rng), T = random_tensor({4, 1, 6}, rng);
    Tensor a = align_predict(reshape(v, {6}), reshape(T, {4, 6}));
    CHECK(max_abs_diff(pwcs_predict(v, T).values(), a.values()) < 1e-12);
  }
}

TEST_CASE("variant inputs: diagonal extraction and blocks") {
  Tensor V({2, 2}, {1, 0, 0, 1});
  Tensor T({2, 2, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  Tensor R = cross_relation(V, T);
  CHECK(testing::to_vec(crm_variant_predict(R, HeadKind::CrmBase, 2, 2, sum_rows())) == std::vector<double>{2, 0});
  CHECK(testing::to_vec(crm_variant_predict(R, HeadKind::CrmXpart, 2, 2, sum_rows())) == std::vector<double>{2, 2});

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t S = 1 + rng() % 4, W = 1 + rng() % 5;
    Tensor Rr = cross_relation(random_tensor({S, 3}, rng), random_tensor({W, S, 3}, rng));
    Tensor base = crm_inputs(Rr, HeadKind::CrmBase, S, W);
    Tensor full = crm_inputs(Rr, HeadKind::CrmFull, S, W);
    Tensor xclass = crm_inputs(Rr, HeadKind::CrmXclass, S, W);
    CHECK(base.shape() == Shape{W, S});
    CHECK(xclass.shape() == Shape{1, S * W});
    for (std::size_t w = 0; w < W; ++w) {
      for (std::size_t s = 0; s < S; ++s) {
        const double diag = full.values()[s * (S * W) + s * W + w];
        CHECK(base.at({w, s}) == diag);
        CHECK(xclass.values()[w * S + s] == diag);
      }
    }
  }
  CHECK_THROWS_AS(crm_variant_predict(R, HeadKind::CrmFull, 2, 2, sum_rows()), ConfigError);
  CHECK_THROWS_AS(crm_variant_predict(R, HeadKind::CrmBase, 2, 2, [](const Tensor& x) { return x; }), DimensionError);
}

TEST_CASE("crm on a one-class toy matches hand arithmetic") {
  std::mt19937_64 rng(6);
  Mlp mlp("toy", 1, 2, 1, rng);
  mlp.fc1.weight.tensor.values_mut()[0] = 1.0;
  mlp.fc1.weight.tensor.values_mut()[1] = -1.0;
  mlp.fc2.weight.tensor.values_mut()[0] = 2.0;
  mlp.fc2.weight.tensor.values_mut()[1] = 3.0;
  mlp.fc2.bias.tensor.values_mut()[0] = 0.5;
  Tensor R = cross_relation(Tensor({1, 1}, {2.0}), Tensor({1, 1, 1}, {1.5}));
  CHECK(R.item() == 3.0);
  Tensor logit = crm_predict(R, [&](const Tensor& x) { return mlp.forward(x, false); });
  // fresh batch-norm: x / sqrt(1 + eps); relu keeps 3, drops -3
  CHECK(logit.item() == doctest::Approx(2.0 * 3.0 / std::sqrt(1.0 + 1e-5) + 0.5).epsilon(1e-14));
}

TEST_CASE("full head shapes follow the relation layout") {
  std::mt19937_64 rng(7);
  HeadConfig c;
  c.parts = 4;
  c.classes = 200;
  c.dim = 8;
  c.crm_hidden = 16;
  PredictionHead head(c, rng);
  CHECK(head.classifiers().front().in_features() == 3200);
  CHECK(head.classifiers().front().out_features() == 200);
  CHECK(head.forward(random_tensor({2, 4, 8}, rng), random_tensor({200, 4, 8}, rng), true).shape() == Shape{2, 200});
}

TEST_CASE("gradient through crm and cross relation") {
  std::mt19937_64 rng(8);
  HeadConfig c;
  c.parts = 2;
  c.classes = 3;
  c.dim = 4;
  c.crm_hidden = 6;
  PredictionHead head(c, rng);
  Parameter V{random_tensor({4, 2, 4}, rng, 1.0, true), "V"}, T{random_tensor({3, 2, 4}, rng, 1.0, true), "T"};
  std::vector<Parameter> ps{V, T};
  head.collect(ps);
  const std::size_t labels[] = {0, 2, 1, 1};
  const auto e = finite_diff_check([&] { return cross_entropy(head.forward(V.tensor, T.tensor, true), labels); }, ps);
  CHECK(max_error(e) < 1e-4);
}

TEST_CASE("mlps averaging") {
  Tensor V({1, 2, 2}, {1, 2, 3, 4});
  Tensor A0({2, 2}, {1, 0, 0, 1}), A1({2, 2}, {1, 1, 1, -1});
  std::vector<Classifier> heads{[&](const Tensor& x) { return matmul(x, A0); },
                                [&](const Tensor& x) { return matmul(x, A1); }};
  CHECK(testing::to_vec(mlps_predict(V, heads)) == std::vector<double>{4.0, 0.5});

  Tensor same({1, 2, 2}, {1, 2, 1, 2});
  std::vector<Classifier> twins{heads[1], heads[1]};
  CHECK(testing::to_vec(mlps_predict(same, twins)) == std::vector<double>{3.0, -1.0});
  std::vector<Classifier> one{heads[1]};
  CHECK(testing::to_vec(mlps_predict(Tensor({1, 1, 2}, {3, 4}), one)) == std::vector<double>{7.0, -1.0});
  CHECK_THROWS_AS(mlps_predict(V, one), ConfigError);
}

TEST_CASE("class permutation equivariance") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t S = 1 + rng() % 4, W = 2 + rng() % 5, E = 3;
    Tensor V = random_tensor({S, E}, rng), T = random_tensor({W, S, E}, rng);
    const auto perm = random_perm(W, rng);
    Tensor Tp = permute_classes(T, perm);
    Tensor p = pwcs_predict(V, T), pp = pwcs_predict(V, Tp);
    auto first_part = [&](const Tensor& t) {
      std::vector<double> rows;
      for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t e = 0; e < E; ++e) rows.push_back(t.at({w, 0, e}));
      }
      return Tensor({W, E}, rows);
    };
    Tensor v1({E}, std::vector<double>(V.values().begin(), V.values().begin() + E));
    Tensor a = align_predict(v1, first_part(T)), ap = align_predict(v1, first_part(Tp));
    Tensor R = cross_relation(V, T), Rp = cross_relation(V, Tp);
    for (std::size_t w = 0; w < W; ++w) {
      CHECK(std::abs(pp.values()[w] - p.values()[perm[w]]) <= 1e-12);
      CHECK(std::abs(ap.values()[w] - a.values()[perm[w]]) <= 1e-12);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t sp = 0; sp < S; ++sp) {
          CHECK(std::abs(Rp.values()[relation_index(s, sp, w, S, W)] - R.values()[relation_index(s, sp, perm[w], S, W)]) <= 1e-12);
        }
      }
    }
    for (HeadKind kind : {HeadKind::CrmBase, HeadKind::CrmXpart}) {
      HeadConfig c;
      c.kind = kind;
      c.parts = S;
      c.classes = W;
      c.dim = E;
      std::mt19937_64 init(trial);
      PredictionHead head(c, init);
      Tensor l = head.forward(reshape(V, {1, S, E}), T, false), lp = head.forward(reshape(V, {1, S, E}), Tp, false);
      for (std::size_t w = 0; w < W; ++w) CHECK(std::abs(lp.values()[w] - l.values()[perm[w]]) <= 1e-12);
    }
  }
}

TEST_CASE("synchronized part permutation") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t S = 2 + rng() % 4, W = 1 + rng() % 5, E = 4;
    Tensor V = random_tensor({S, E}, rng), T = random_tensor({W, S, E}, rng);
    const auto perm = random_perm(S, rng);
    Tensor Vp = permute_parts_V(V, perm), Tp = permute_parts_T(T, perm);
    CHECK(max_abs_diff(pwcs_predict(Vp, Tp).values(), pwcs_predict(V, T).values()) <= 1e-12);
    Tensor R = cross_relation(V, T), Rp = cross_relation(Vp, Tp);
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t sp = 0; sp < S; ++sp) {
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t to = relation_index(s, sp, w, S, W), from = relation_index(perm[s], perm[sp], w, S, W);
          CHECK(std::abs(Rp.values()[to] - R.values()[from]) <= 1e-12);
        }
      }
    }
  }
}

}  // TEST_SUITE
