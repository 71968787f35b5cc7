// Copyright 2026 The pastssm Authors.
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

#include <catch_amalgamated.hpp>

#include <cmath>

#include "pastssm/autodiff/grad_check.hpp"
#include "pastssm/autodiff/histogram_ops.hpp"
#include "pastssm/autodiff/ops.hpp"
#include "pastssm/autodiff/optim.hpp"
#include "pastssm/autodiff/scan_op.hpp"
#include "support.hpp"

namespace ad = pastssm::ad;
using ad::Tensor;
using testing_support::probe;
using testing_support::random_tensor;
using testing_support::random_values;

namespace {

constexpr double kTol = 1e-4;

double check(const std::function<Tensor<double>()>& fn, std::vector<Tensor<double>> inputs) {
  return ad::grad_check(fn, std::move(inputs)).max_rel_error;
}

}  // namespace

TEST_CASE("square derivative at three") {
  auto x = Tensor<double>::parameter({1}, {3.0});
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto y = ad::mul(x, x);
  tape.backward(y);
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("softmax gradient of its own sum vanishes") {
  auto x = Tensor<double>::parameter({2, 5}, random_values(10, 1));
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  tape.backward(ad::sum(ad::softmax(x)));
  for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("no tape means no recording") {
  auto x = Tensor<double>::parameter({3}, {1, 2, 3});
  auto y = ad::exp(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shape errors name the op") {
  Tensor<double> a({2, 3}), b({3, 3});
  REQUIRE_THROWS_AS(ad::add(a, b), pastssm::ShapeError);
  try {
    ad::matmul(a, a);
  } catch (const pastssm::ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("non-finite gradient reports the op") {
  auto x = Tensor<double>::parameter({1}, {0.0});
  auto big = Tensor<double>::parameter({1}, {1e308});
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto y = ad::mul(ad::exp(big), x);
  try {
    tape.backward(y);
    FAIL("expected a numeric error");
  } catch (const pastssm::NumericError& e) {
    CHECK(std::string(e.what()).find("mul") != std::string::npos);
  }
}

TEST_CASE("tape replays once") {
  auto x = Tensor<double>::parameter({1}, {2.0});
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto y = ad::mul(x, x);
  tape.backward(y);
  REQUIRE_THROWS_AS(tape.backward(y), pastssm::ArgumentError);
}

TEST_CASE("gradient accumulation does not depend on arrival order") {
  // Many terms of wildly different magnitude flowing into one node.
  auto vals = random_values(400, 5, -1, 1);
  for (std::size_t i = 0; i < vals.size(); i += 3) vals[i] *= 1e8;
  const auto grad_for = [&](bool reversed) {
    auto x = Tensor<double>::parameter({1}, {1.0});
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    std::vector<Tensor<double>> terms;
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const std::size_t i = reversed ? vals.size() - 1 - k : k;
      terms.push_back(ad::scale(x, vals[i]));
    }
    Tensor<double> acc = terms[0];
    for (std::size_t k = 1; k < terms.size(); ++k) acc = ad::add(acc, terms[k]);
    tape.backward(acc);
    return x.grad()[0];
  };
  CHECK(std::abs(grad_for(false) - grad_for(true)) <= 1e-12 * 1e8);
}

TEST_CASE("elementwise ops pass finite differences") {
  auto a = random_tensor({3, 4}, 11);
  auto b = random_tensor({3, 4}, 12);
  CHECK(check([&] { return probe(ad::add(a, b)); }, {a, b}) <= 1e-10);
  CHECK(check([&] { return probe(ad::sub(a, b)); }, {a, b}) <= 1e-10);
  CHECK(check([&] { return probe(ad::mul(a, b)); }, {a, b}) <= kTol);
  CHECK(check([&] { return probe(ad::scale(a, 2.5)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::exp(a)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::softplus(a)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::silu(a)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::gelu(a)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::clamp(a, -0.5, 0.5)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::mean(a)); }, {a}) <= kTol);
  CHECK(check([&] { return probe(ad::reshape(a, {2, 6})); }, {a}) <= kTol);
}

TEST_CASE("matrix ops pass finite differences") {
  auto a = random_tensor({3, 5}, 21);
  auto b = random_tensor({5, 4}, 22);
  auto bias = random_tensor({4}, 23);
  CHECK(check([&] { return probe(ad::matmul(a, b)); }, {a, b}) <= kTol);
  CHECK(check([&] { return probe(ad::gather_contract(a, b)); }, {a, b}) <= kTol);
  auto x = random_tensor({3, 4}, 24);
  CHECK(check([&] { return probe(ad::add_row_bias(x, bias)); }, {x, bias}) <= kTol);
}

TEST_CASE("normalizations pass finite differences") {
  auto x = random_tensor({3, 6}, 31, -2, 2);
  auto g = random_tensor({6}, 32, 0.5, 1.5);
  auto b = random_tensor({6}, 33);
  CHECK(check([&] { return probe(ad::softmax(x)); }, {x}) <= kTol);
  CHECK(check([&] { return probe(ad::log_softmax(x)); }, {x}) <= kTol);
  CHECK(check([&] { return probe(ad::layer_norm(x, g, b)); }, {x, g, b}) <= kTol);
  CHECK(check([&] { return probe(ad::rms_norm(x, g)); }, {x, g}) <= kTol);
}

TEST_CASE("convolutions pass finite differences") {
  auto x = random_tensor({2, 4, 9, 9}, 41);
  auto w = random_tensor({3, 2, 3, 3, 3}, 42);
  auto b = random_tensor({3}, 43);
  for (bool replicate : {false, true}) {
    ad::Conv3dSpec spec{{1, 2, 2}, {1, 1, 1}, replicate};
    CHECK(check([&] { return probe(ad::conv3d(x, w, b, spec)); }, {x, w, b}) <= kTol);
  }
  CHECK(check([&] { return probe(ad::spatial_mean(x)); }, {x}) <= kTol);
  auto s = random_tensor({7, 3}, 44);
  auto k = random_tensor({3, 4}, 45);
  auto kb = random_tensor({3}, 46);
  CHECK(check([&] { return probe(ad::depthwise_conv1d(s, k, kb)); }, {s, k, kb}) <= kTol);
}

TEST_CASE("conv3d matches a naive zero-padded oracle") {
  auto x = random_tensor({2, 3, 6, 7}, 51);
  auto w = random_tensor({2, 2, 3, 3, 3}, 52);
  auto b = random_tensor({2}, 53);
  const ad::Conv3dSpec spec{{1, 2, 2}, {1, 1, 1}, false};
  auto y = ad::conv3d(x, w, b, spec);
  REQUIRE(y.shape() == ad::Shape{2, 3, 3, 4});
  for (std::size_t oc = 0; oc < 2; ++oc)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < 2; ++ic)
            for (int dt = 0; dt < 3; ++dt)
              for (int dr = 0; dr < 3; ++dr)
                for (int dc = 0; dc < 3; ++dc) {
                  const int it = int(t) + dt - 1, ir = int(r) * 2 + dr - 1, icl = int(c) * 2 + dc - 1;
                  if (it < 0 || it >= 3 || ir < 0 || ir >= 6 || icl < 0 || icl >= 7) continue;
                  acc += w[(((oc * 2 + ic) * 3 + dt) * 3 + dr) * 3 + dc] * x[((ic * 3 + it) * 6 + ir) * 7 + icl];
                }
          CHECK(y[((oc * 3 + t) * 3 + r) * 4 + c] == Catch::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("layout ops pass finite differences") {
  auto x = random_tensor({5, 3}, 61);
  auto y = random_tensor({2, 3}, 62);
  CHECK(check([&] { return probe(ad::gather_rows(x, {4, -1, 0, 4})); }, {x}) <= kTol);
  CHECK(check([&] { return probe(ad::permute_rows(x, {2, 0, 1, 4, 3})); }, {x}) <= kTol);
  CHECK(check([&] { return probe(ad::reverse_rows(x)); }, {x}) <= kTol);
  CHECK(check([&] { return probe(ad::concat_rows(x, y)); }, {x, y}) <= kTol);
  CHECK(check([&] { return probe(ad::slice_rows(x, 1, 4)); }, {x}) <= kTol);
  CHECK(check([&] { return probe(ad::slice_cols(x, 1, 3)); }, {x}) <= kTol);
  auto f = random_tensor({2, 4, 4, 3}, 63, 0, 1);
  CHECK(check([&] { return probe(ad::patchify(f, 2)); }, {f}) <= kTol);
  CHECK(check([&] { return probe(ad::channels_first(f)); }, {f}) <= kTol);
  CHECK(check([&] { return probe(ad::gray(f)); }, {f}) <= kTol);
}

TEST_CASE("patchify orders tokens frame-major then row-major") {
  std::vector<double> v(2 * 4 * 4 * 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i);
  Tensor<double> f({2, 4, 4, 1}, v);
  auto p = ad::patchify(f, 2);
  REQUIRE(p.shape() == ad::Shape{8, 4});
  // token 1 = frame 0, patch row 0, patch col 1 -> pixels (0,2),(0,3),(1,2),(1,3)
  CHECK(p[4] == 2);
  CHECK(p[5] == 3);
  CHECK(p[6] == 6);
  CHECK(p[7] == 7);
  // token 4 = frame 1, first patch
  CHECK(p[16] == 16);
}

TEST_CASE("loss and selection ops pass finite differences") {
  auto z = random_tensor({1, 6}, 71, -2, 2);
  CHECK(check([&] { return ad::cross_entropy(z, 4); }, {z}) <= kTol);
  auto s = random_tensor({3, 7}, 72, -2, 2);
  const auto noise = random_values(21, 73, -0.5, 0.5);
  // The straight-through backward is the Jacobian of the soft path, so it is
  // checked against finite differences of the soft path itself.
  auto frames = random_tensor({7, 5}, 74);
  ad::Tape<double> tape;
  s.set_requires_grad(true);
  {
    ad::TapeScope<double> scope(tape);
    tape.backward(probe(ad::gather_contract(ad::gumbel_softmax_st<double>(s, noise, 0.7), frames)));
  }
  const auto st_grad = s.grad();
  s.zero_grad();
  const auto soft = [&] {
    Tensor<double> n({3, 7}, noise);
    return probe(ad::gather_contract(ad::softmax(ad::scale(ad::add(s, n), 1.0 / 0.7)), frames));
  };
  CHECK(check(soft, {s}) <= kTol);
  s.zero_grad();
  {
    ad::Tape<double> t2;
    ad::TapeScope<double> scope(t2);
    t2.backward(soft());
  }
  const auto soft_grad = s.grad();
  for (std::size_t i = 0; i < st_grad.size(); ++i) CHECK(st_grad[i] == Catch::Approx(soft_grad[i]).epsilon(1e-12));
}

TEST_CASE("histogram ops pass finite differences") {
  auto x = random_tensor({2, 30}, 81, 0.05, 0.95);
  auto y = random_tensor({30}, 82, 0.05, 0.95);
  auto w = random_tensor({30}, 83, 0.05, 0.95);
  for (double bw : {1.0, 0.6}) {
    ad::SoftBinner<double> binner(8, bw);
    CHECK(check([&] { return probe(ad::soft_histogram(x, binner)); }, {x}) <= kTol);
    CHECK(check([&] { return probe(ad::joint_soft_histogram(y, w, binner)); }, {y, w}) <= kTol);
    CHECK(check([&] { return ad::sum(ad::row_entropy(ad::soft_histogram(x, binner))); }, {x}) <= kTol);
    CHECK(check([&] { return ad::mutual_information(ad::joint_soft_histogram(y, w, binner)); }, {y, w}) <= kTol);
  }
}

TEST_CASE("soft bin weights sum to one and approach the hard bin") {
  for (double bw : {2.0, 1.0, 0.3}) {
    ad::SoftBinner<double> binner(16, bw);
    for (double v : random_values(50, 91, 0, 1)) {
      double total = 0;
      for (std::size_t i = 0; i < 16; ++i) total += binner.weight(i, v).first;
      CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
    }
  }
  ad::SoftBinner<double> sharp(16, 1e-6);
  for (double v : random_values(50, 92, 0, 1)) {
    CHECK(sharp.weight(sharp.hard_bin(v), v).first == Catch::Approx(1.0).margin(1e-4));
  }
  CHECK(sharp.hard_bin(1.0) == 15);
}

TEST_CASE("selective scan op passes finite differences") {
  const std::size_t L = 8, E = 2, N = 2;
  auto u = random_tensor({L, E}, 101);
  auto delta = random_tensor({L, E}, 102, 0.05, 1.0);
  auto a_log = random_tensor({E, N}, 103, -1, 1);
  auto b = random_tensor({L, N}, 104);
  auto c = random_tensor({L, N}, 105);
  auto d = random_tensor({E}, 106);
  CHECK(check([&] { return probe(ad::selective_scan(u, delta, a_log, b, c, d)); }, {u, delta, a_log, b, c, d}) <= kTol);
}

TEST_CASE("selective scan gradient survives tiny step sizes") {
  const std::size_t L = 6, E = 2, N = 3;
  auto u = random_tensor({L, E}, 111);
  auto delta = random_tensor({L, E}, 112, 1e-3, 5e-3);
  auto a_log = random_tensor({E, N}, 113, -1, 0.5);
  auto b = random_tensor({L, N}, 114);
  auto c = random_tensor({L, N}, 115);
  auto d = random_tensor({E}, 116);
  CHECK(check([&] { return probe(ad::selective_scan(u, delta, a_log, b, c, d)); }, {u, delta, a_log, b, c, d}) <= kTol);
}

TEST_CASE("adamw first step and decoupled decay") {
  ad::ParamStore<double> store;
  store.add("p", Tensor<double>({1}, {1.0}), false);
  std::vector<std::vector<double>> g{{1.0}};
  ad::adamw_step<double>(store, g, 0.1, {0.0, 0.9, 0.999, 1e-8});
  CHECK(store.at("p")[0] == Catch::Approx(0.9).epsilon(1e-7));

  ad::ParamStore<double> decay;
  decay.add("w", Tensor<double>({1}, {1.0}), true);
  std::vector<std::vector<double>> zero{{0.0}};
  ad::adamw_step<double>(decay, zero, 1e-3, {0.05, 0.9, 0.999, 1e-8});
  CHECK(decay.at("w")[0] == Catch::Approx(0.99995).epsilon(1e-12));

  ad::ParamStore<double> still;
  still.add("w", Tensor<double>({2}, {0.3, -0.7}), true);
  std::vector<std::vector<double>> z2{{0.0, 0.0}};
  ad::adamw_step<double>(still, z2, 1e-3, {0.0, 0.9, 0.999, 1e-8});
  CHECK(still.at("w")[0] == 0.3);
  CHECK(still.at("w")[1] == -0.7);
}

TEST_CASE("adamw rejects non-finite gradients by name") {
  ad::ParamStore<double> store;
  store.add("layer.weight", Tensor<double>({1}, {1.0}), true);
  std::vector<std::vector<double>> g{{std::nan("")}};
  try {
    ad::adamw_step<double>(store, g, 0.1);
    FAIL("expected a numeric error");
  } catch (const pastssm::NumericError& e) {
    CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
  }
  REQUIRE_THROWS_AS(store.add("layer.weight", Tensor<double>({1}), true), pastssm::ArgumentError);
}
