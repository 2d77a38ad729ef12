#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "baar/retention.hpp"
#include "support.hpp"

using namespace baar;
using baar::testing::max_rel_diff;
using baar::testing::random_tensor;

namespace {

RetentionLayer make_layer(std::int64_t d, int heads, std::int64_t hd, Direction dir,
                          std::uint64_t seed, std::vector<double> gammas = {}) {
  std::mt19937_64 rng(seed);
  if (gammas.empty()) gammas = DecaySpec::default_gammas(heads);
  return RetentionLayer::init(d, heads, hd, 2 * d, dir, DecaySpec(gammas, dir), RotarySpec(hd), rng);
}

PositionIndex irregular_positions(std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> p(static_cast<std::size_t>(n));
  double t = 0.0;
  for (auto& v : p) {
    v = t;
    t += static_cast<double>(rng() % 4);  // gaps 0..3, ties included
  }
  return PositionIndex(std::move(p));
}

}  // namespace

TEST_CASE("three-form equivalence across directions, lengths, spacings") {
  for (Direction dir : {Direction::forward, Direction::backward}) {
    for (std::int64_t n : {1, 2, 7, 16, 33}) {
      for (bool irregular : {false, true}) {
        RetentionLayer layer = make_layer(8, 2, 4, dir, 100 + static_cast<std::uint64_t>(n));
        PositionIndex pos = irregular ? irregular_positions(n, 7 * static_cast<std::uint64_t>(n))
                                      : PositionIndex::regular(n);
        std::mt19937_64 rng(static_cast<std::uint64_t>(n) * 13 + (irregular ? 1 : 0));
        Tensor x = random_tensor({n, 8}, rng, false);
        Tensor yp = retention_parallel(x, layer, pos).y;
        Tensor yr = retention_recurrent(x, layer, pos).y;
        Tensor yc = retention_chunkwise(x, layer, pos, 8).y;
        const int dir_tag = static_cast<int>(dir);
        CAPTURE(dir_tag);
        CAPTURE(n);
        CAPTURE(irregular);
        CHECK(max_rel_diff(yp.data(), yr.data()) < 1e-5);
        CHECK(max_rel_diff(yp.data(), yc.data()) < 1e-5);
      }
    }
  }
}

TEST_CASE("single token: retention matrix is the rotated q.k scalar") {
  RetentionLayer layer = make_layer(6, 1, 6, Direction::forward, 5);
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({1, 6}, rng, false);
  PositionIndex pos({3.0});
  RetentionResult res = retention_parallel(x, layer, pos);
  REQUIRE(res.retention.size() == 1);
  REQUIRE(res.retention[0].shape() == Shape{1, 1});

  // same rotation on both sides cancels in the dot product at distance zero
  Tensor h = layer_norm(x, layer.ln1_g, layer.ln1_b);
  Tensor q = matmul(h, layer.heads[0].w_q);
  Tensor k = matmul(h, layer.heads[0].w_k);
  double qk = 0;
  for (std::int64_t j = 0; j < 6; ++j) qk += q.at(0, j) * k.at(0, j);
  CHECK(res.retention[0].item() == doctest::Approx(qk).epsilon(1e-9));

  // the whole block reproduced from primitives
  Tensor v = matmul(h, layer.heads[0].w_v);
  Tensor core = scale(v, qk);
  Tensor x1 = add(x, add_rowvec(matmul(core, layer.w_o), layer.b_o));
  Tensor h2 = layer_norm(x1, layer.ln2_g, layer.ln2_b);
  Tensor f = add_rowvec(matmul(gelu(add_rowvec(matmul(h2, layer.ff_w1), layer.ff_b1)), layer.ff_w2),
                        layer.ff_b2);
  Tensor want = add(x1, f);
  CHECK(max_rel_diff(res.y.data(), want.data()) < 1e-9);
}

TEST_CASE("vanishing gamma leaves a diagonal retention matrix") {
  RetentionLayer layer = make_layer(8, 2, 4, Direction::forward, 6, {1e-14, 1e-14});
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({5, 8}, rng, false);
  RetentionResult res = retention_parallel(x, layer, PositionIndex::regular(5));
  for (const Tensor& r : res.retention) {
    for (std::int64_t i = 0; i < 5; ++i)
      for (std::int64_t j = 0; j < 5; ++j) {
        if (i == j)
          CHECK(std::abs(r.at(i, j)) > 0.0);
        else
          CHECK(std::abs(r.at(i, j)) < 1e-10);
      }
  }
}

TEST_CASE("recurrent state starts at K1^T V1 and decays by the position gap") {
  RetentionLayer layer = make_layer(4, 1, 4, Direction::forward, 8);
  layer.use_rotary = false;  // keep the state easy to reproduce by hand
  std::mt19937_64 rng(31);
  const double gamma = layer.heads[0].gamma;

  Tensor x1 = random_tensor({1, 4}, rng, false);
  RetentionResult one = retention_recurrent(x1, layer, PositionIndex({0.0}));
  REQUIRE(one.final_state.has_value());
  Tensor h = layer_norm(x1, layer.ln1_g, layer.ln1_b);
  Tensor k = matmul(h, layer.heads[0].w_k);
  Tensor v = matmul(h, layer.heads[0].w_v);
  Tensor s1 = matmul(transpose(k), v);
  CHECK(max_rel_diff(one.final_state->s[0].data(), s1.data()) < 1e-12);

  // irregular gap [0,2]: the carried state is scaled by gamma^2
  Tensor x2 = random_tensor({2, 4}, rng, false);
  RetentionResult two = retention_recurrent(x2, layer, PositionIndex({0.0, 2.0}));
  Tensor h2 = layer_norm(x2, layer.ln1_g, layer.ln1_b);
  Tensor kk = matmul(h2, layer.heads[0].w_k);
  Tensor vv = matmul(h2, layer.heads[0].w_v);
  Tensor s_first = matmul(transpose(slice(kk, 0, 0, 1)), slice(vv, 0, 0, 1));
  Tensor s_second = add(matmul(transpose(slice(kk, 0, 1, 1)), slice(vv, 0, 1, 1)),
                        scale(s_first, gamma * gamma));
  CHECK(max_rel_diff(two.final_state->s[0].data(), s_second.data()) < 1e-12);
  CHECK(two.final_state->last_position == 2.0);
}

TEST_CASE("one chunk reproduces the parallel path bitwise") {
  for (Direction dir : {Direction::forward, Direction::backward}) {
    RetentionLayer layer = make_layer(8, 2, 4, dir, 40);
    std::mt19937_64 rng(41);
    Tensor x = random_tensor({9, 8}, rng, false);
    PositionIndex pos = PositionIndex::regular(9);
    Tensor yp = retention_parallel(x, layer, pos, false).y;
    Tensor yc = retention_chunkwise(x, layer, pos, 9).y;
    CHECK(baar::testing::max_abs_diff(yp.data(), yc.data()) == 0.0);
  }
}

TEST_CASE("chunk size one matches the recurrent form") {
  RetentionLayer layer = make_layer(8, 2, 4, Direction::backward, 50);
  std::mt19937_64 rng(51);
  Tensor x = random_tensor({7, 8}, rng, false);
  PositionIndex pos = irregular_positions(7, 99);
  Tensor yr = retention_recurrent(x, layer, pos).y;
  Tensor yc = retention_chunkwise(x, layer, pos, 1).y;
  CHECK(max_rel_diff(yr.data(), yc.data()) < 1e-6);
}

TEST_CASE("invalid retention calls") {
  RetentionLayer bid = make_layer(8, 2, 4, Direction::bidirectional, 60);
  std::mt19937_64 rng(61);
  Tensor x = random_tensor({4, 8}, rng, false);
  PositionIndex pos = PositionIndex::regular(4);
  CHECK_THROWS_AS(retention_recurrent(x, bid, pos), std::invalid_argument);
  CHECK_THROWS_AS(retention_chunkwise(x, bid, pos, 2), std::invalid_argument);
  RetentionLayer fwd = make_layer(8, 2, 4, Direction::forward, 62);
  CHECK_THROWS_AS(retention_chunkwise(x, fwd, pos, 0), std::invalid_argument);
  // direction/decay mismatch at construction
  std::mt19937_64 rng2(63);
  CHECK_THROWS_AS(RetentionLayer::init(8, 2, 4, 16, Direction::forward,
                                       DecaySpec(DecaySpec::default_gammas(2), Direction::backward),
                                       RotarySpec(4), rng2),
                  std::invalid_argument);
}

TEST_CASE("bidirectional parallel retention runs and is dense") {
  RetentionLayer bid = make_layer(8, 2, 4, Direction::bidirectional, 70);
  std::mt19937_64 rng(71);
  Tensor x = random_tensor({5, 8}, rng, false);
  RetentionResult res = retention_parallel(x, bid, PositionIndex::regular(5));
  REQUIRE(res.retention.size() == 2);
  int nonzero_upper = 0, nonzero_lower = 0;
  for (std::int64_t i = 0; i < 5; ++i)
    for (std::int64_t j = 0; j < 5; ++j) {
      if (i < j && res.retention[0].at(i, j) != 0.0) ++nonzero_upper;
      if (i > j && res.retention[0].at(i, j) != 0.0) ++nonzero_lower;
    }
  CHECK(nonzero_upper > 0);
  CHECK(nonzero_lower > 0);
}

TEST_CASE("block gradients pass finite differences in every mode") {
  for (RetentionMode mode : {RetentionMode::parallel, RetentionMode::recurrent, RetentionMode::chunkwise}) {
    RetentionLayer layer = make_layer(4, 2, 2, Direction::forward, 80 + static_cast<int>(mode));
    std::mt19937_64 rng(81);
    Tensor x = random_tensor({5, 4}, rng, false);
    PositionIndex pos = irregular_positions(5, 82);
    std::vector<Tensor> params;
    for (auto& [name, t] : layer.parameters("l")) params.push_back(t);
    const double err = baar::testing::grad_check(params, [&]() {
      Tensor y = retention_forward(x, layer, pos, mode, 2, false).y;
      return mean_all(mul(y, y));
    });
    const int mode_tag = static_cast<int>(mode);
    CAPTURE(mode_tag);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("masked attention is lower triangular with unit row sums") {
  std::mt19937_64 rng(90);
  AttentionParams params = AttentionParams::init(6, 4, rng);
  Tensor x = random_tensor({3, 6}, rng, false);
  AttentionResult res = causal_attention(x, params, true);
  for (std::int64_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (std::int64_t j = 0; j < 3; ++j) {
      if (j > i) CHECK(res.a.at(i, j) == 0.0);
      sum += res.a.at(i, j);
    }
    CHECK(res.a.at(i, i) > 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("unmasked attention over identical rows is uniform") {
  std::mt19937_64 rng(91);
  AttentionParams params = AttentionParams::init(6, 4, rng);
  Tensor row = random_tensor({1, 6}, rng, false);
  std::vector<double> data;
  for (int i = 0; i < 4; ++i) data.insert(data.end(), row.data().begin(), row.data().end());
  Tensor x = Tensor::from_data({4, 6}, std::move(data));
  AttentionResult res = causal_attention(x, params, false);
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 4; ++j) CHECK(res.a.at(i, j) == doctest::Approx(0.25).epsilon(1e-9));
}
