#include <doctest.h>

#include <random>

#include "dsdn/errors.hpp"
#include "dsdn/nn.hpp"
#include "test_util.hpp"

using namespace dsdn;
namespace ad = dsdn::ad;
using ad::Var;
using testutil::rand_mat;

namespace {

MhaParams toy_mha(ParamStore& store, int d, int heads, std::mt19937_64& rng,
                  const std::string& prefix = "mha") {
  return make_mha(store, prefix, d, heads, rng);
}

}  // namespace

TEST_CASE("attention over a single position ignores the query") {
  std::mt19937_64 rng(3);
  ParamStore store;
  MhaParams p = toy_mha(store, 4, 2, rng);
  ad::Tape tape;
  Var kv = tape.constant(rand_mat(rng, 1, 4));
  Var q1 = tape.constant(rand_mat(rng, 1, 4));
  Var q2 = tape.constant(rand_mat(rng, 1, 4));
  Var a = multi_head_attention(q1, kv, kv, p, {1});
  Var b = multi_head_attention(q2, kv, kv, p, {1});
  CHECK((a->value - b->value).cwiseAbs().maxCoeff() < 1e-12);
  // the lone weight is 1, so the output is the fully projected value row
  Mat expect = kv->value * p.Wv->value * p.Wo->value;
  CHECK((a->value - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("attention rejects head counts that do not divide the width") {
  std::mt19937_64 rng(5);
  ParamStore store;
  CHECK_THROWS_AS(make_mha(store, "bad", 6, 4, rng), ConfigError);
}

TEST_CASE("single-head attention matches the scalar-loop oracle") {
  std::mt19937_64 rng(7);
  ParamStore store;
  MhaParams p = toy_mha(store, 4, 1, rng);
  ad::Tape tape;
  Mat q = rand_mat(rng, 1, 4), kv = rand_mat(rng, 2, 4);
  Var out = multi_head_attention(tape.constant(q), tape.constant(kv),
                                 tape.constant(kv), p, {1, 1});
  Mat ref = testutil::oracle::mha(q, kv, kv, p.Wq->value, p.Wk->value,
                                  p.Wv->value, p.Wo->value, 1, {1, 1});
  CHECK((out->value - ref).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("multi-head attention matches the oracle over many random instances") {
  std::mt19937_64 rng(11);
  for (int it = 0; it < 60; ++it) {
    const int heads = 1 + static_cast<int>(rng() % 3);  // 1, 2, or 3
    const int d = heads * (2 + static_cast<int>(rng() % 2));
    const int L = 1 + static_cast<int>(rng() % 5);
    const int m = 1 + static_cast<int>(rng() % 3);
    ParamStore store;
    MhaParams p = toy_mha(store, d, heads, rng);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(L), 1);
    for (auto& bit : mask) bit = rng() % 4 ? 1 : 0;
    mask[static_cast<std::size_t>(rng() % L)] = 1;  // at least one valid
    ad::Tape tape;
    Mat q = rand_mat(rng, m, d), k = rand_mat(rng, L, d), v = rand_mat(rng, L, d);
    Var out = multi_head_attention(tape.constant(q), tape.constant(k),
                                   tape.constant(v), p, mask);
    Mat ref = testutil::oracle::mha(q, k, v, p.Wq->value, p.Wk->value,
                                    p.Wv->value, p.Wo->value, heads, mask);
    CHECK((out->value - ref).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("attention weights sum to 1 over valid positions, 0 on padding") {
  std::mt19937_64 rng(13);
  ParamStore store;
  MhaParams p = toy_mha(store, 4, 2, rng);
  ad::Tape tape;
  std::vector<std::uint8_t> mask = {1, 0, 1, 1};
  std::vector<Mat> weights;
  multi_head_attention(tape.constant(rand_mat(rng, 2, 4)),
                       tape.constant(rand_mat(rng, 4, 4)),
                       tape.constant(rand_mat(rng, 4, 4)), p, mask, &weights);
  REQUIRE(weights.size() == 2);
  for (const Mat& w : weights)
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      CHECK(w(i, 1) == 0.0);
      CHECK(w.row(i).minCoeff() >= 0.0);
      CHECK(w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("padded positions never influence the output") {
  std::mt19937_64 rng(17);
  ParamStore store;
  MhaParams p = toy_mha(store, 4, 2, rng);
  std::vector<std::uint8_t> mask = {1, 1, 0};
  Mat q = rand_mat(rng, 1, 4), kv = rand_mat(rng, 3, 4);
  Mat kv2 = kv;
  kv2.row(2) = rand_mat(rng, 1, 4);  // perturb only the padded row
  ad::Tape tape;
  Var a = multi_head_attention(tape.constant(q), tape.constant(kv),
                               tape.constant(kv), p, mask);
  Var b = multi_head_attention(tape.constant(q), tape.constant(kv2),
                               tape.constant(kv2), p, mask);
  CHECK((a->value - b->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("transformer encoder preserves sequence length for lengths 1..8") {
  std::mt19937_64 rng(19);
  ParamStore store;
  TransformerParams p = make_transformer(store, "tf", 4, 2, 2, 8, rng);
  for (int len = 1; len <= 8; ++len) {
    ad::Tape tape;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(len), 1);
    Var out = transformer_encoder(tape.constant(rand_mat(rng, len, 4)), p, mask);
    CHECK(out->rows() == len);
    CHECK(out->cols() == 4);
  }
  CHECK_THROWS_AS(make_transformer(store, "tf0", 4, 2, 0, 8, rng), ConfigError);
}

TEST_CASE("transformer gradients match finite differences for every tensor") {
  std::mt19937_64 rng(23);
  ParamStore store;
  TransformerParams p = make_transformer(store, "tf", 4, 2, 1, 6, rng);
  const Mat x = rand_mat(rng, 3, 4);
  const Mat w = rand_mat(rng, 3, 4);
  std::vector<std::uint8_t> mask = {1, 1, 1};

  auto forward = [&]() {
    ad::Tape tape;
    Var out = transformer_encoder(tape.constant(x), p, mask);
    return ad::sum(ad::cmul(out, tape.constant(w)))->value(0, 0);
  };

  store.zero_grads();
  {
    ad::Tape tape;
    Var out = transformer_encoder(tape.constant(x), p, mask);
    tape.backward(ad::sum(ad::cmul(out, tape.constant(w))));
  }
  for (Tensor* t : store.mutable_tensors()) {
    CAPTURE(t->name);
    Mat g = t->grad;
    double err = testutil::fd_max_rel_err(*t, g, forward, rng, 6);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("base encoder shape and seed sensitivity") {
  std::mt19937_64 rng_a(1), rng_b(2);
  ParamStore sa, sb;
  BaseEncoderParams ea = make_base_encoder(sa, "enc", 10, 16, 4, 2, 1, 8, rng_a);
  BaseEncoderParams eb = make_base_encoder(sb, "enc", 10, 16, 4, 2, 1, 8, rng_b);
  TokenSequence seq;
  seq.ids = {0, 4, 5, 1};
  seq.mask = {1, 1, 1, 1};
  ad::Tape tape;
  Var ha = base_encode(tape, sa, ea, seq);
  Var hb = base_encode(tape, sb, eb, seq);
  CHECK(ha->rows() == 4);
  CHECK(ha->cols() == 4);
  CHECK((ha->value - hb->value).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("freeze_prefix marks matching tensors non-trainable") {
  std::mt19937_64 rng(29);
  ParamStore store;
  make_base_encoder(store, "fixed", 8, 16, 4, 2, 1, 8, rng);
  make_base_encoder(store, "ctx", 8, 16, 4, 2, 1, 8, rng);
  store.freeze_prefix("fixed.");
  for (const auto& t : store.tensors())
    CHECK(t->trainable == (t->name.rfind("fixed.", 0) != 0));
}
