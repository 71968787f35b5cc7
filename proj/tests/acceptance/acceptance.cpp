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

// Acceptance runner: one PASS/FAIL line per criterion. With arguments, runs
// only the listed criterion numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pastssm.hpp"
#include "support.hpp"

using namespace pastssm;
using ad::Tensor;
using testing_support::probe;
using testing_support::random_tensor;
using testing_support::random_values;

namespace {

struct Outcome {
  std::ostringstream detail;
  std::vector<std::string> failed;

  bool pass() const { return failed.empty(); }
  void require(bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  }
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

// Training progress goes to stderr when PASTSSM_ACCEPTANCE_LOG is set.
std::ostream* progress() { return std::getenv("PASTSSM_ACCEPTANCE_LOG") ? &std::cerr : nullptr; }

double rel_err(double got, double want, double floor = 1e-12) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

// ---------------------------------------------------------------- 1

void discretization(Outcome& o) {
  const auto r = ssm::discretize(-1.0, 1.0, std::log(2.0));
  o.require(r.a_bar == 0.5, "a_bar(-1, ln 2) == 0.5");
  o.require(r.b_bar == 0.5, "b_bar(-1, ln 2) == 0.5");
  for (double a : {-3.0, -1.0, -0.2, 0.0}) {
    for (double b : {-2.0, 0.5, 1.0}) {
      for (double dt : {1e-3, 1e-4, 1e-5, 1e-6, 1e-8}) {
        const auto d = ssm::discretize(a, b, dt);
        // Remainders of the first-order expansions, scaled by dt^2. The
        // transition term is read as a_bar - 1 without cancellation.
        const double em1 = ssm::zoh_terms(dt, a).em1;
        const double ra = std::abs(em1 - a * dt) / (dt * dt);
        const double rb = std::abs(d.b_bar - dt * b) / (dt * dt);
        const bool ok_a = ra <= a * a / 2.0 * 1.01 + 1e-15 * std::abs(a) / dt &&
                          std::abs(d.a_bar - (1.0 + em1)) <= std::numeric_limits<double>::epsilon();
        const bool ok_b = rb <= std::abs(a * b) / 2.0 * 1.01 + 1e-15 * std::abs(b) / dt;
        o.require(ok_a && ok_b, "first-order limit at a=" + std::to_string(a) + " dt=" + std::to_string(dt));
      }
    }
  }
  o.detail << "A=" << r.a_bar << " B=" << r.b_bar << ", O(dt^2) remainders within bound";
}

// ---------------------------------------------------------------- 2

void scan_equivalence(Outcome& o) {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t L = 1 + rng() % 512, E = 1 + rng() % 4, N = 1 + rng() % 8;
    const std::size_t block = 1 + rng() % 64;
    const std::uint64_t s = 5000 + 10 * inst;
    const auto u = random_values(L * E, s), delta = random_values(L * E, s + 1, 1e-3, 0.5),
               a = random_values(E * N, s + 2, -3, -0.05), b = random_values(L * N, s + 3),
               c = random_values(L * N, s + 4), d = random_values(E, s + 5);
    const ssm::ScanView<double> v{L, E, N, u, delta, a, b, c, d};
    const auto seq = ssm::sequential_scan(v);
    const auto blk = ssm::blocked_scan(v, block);
    for (std::size_t i = 0; i < seq.size(); ++i) worst = std::max(worst, rel_err(blk[i], seq[i]));
  }
  o.require(worst <= 1e-5, "max rel err <= 1e-5");
  o.detail << "200 instances, max rel err " << worst;
}

// ---------------------------------------------------------------- 3

void gradient_suite(Outcome& o) {
  double worst = 0;
  std::string worst_op;
  std::size_t checked = 0;
  const auto check = [&](const std::string& op, const std::function<Tensor<double>()>& fn,
                         std::vector<Tensor<double>> in) {
    const double e = ad::grad_check(fn, std::move(in)).max_rel_error;
    ++checked;
    if (e > worst) worst = e, worst_op = op;
    o.require(e <= 1e-4, op + " rel err " + std::to_string(e));
  };
  auto a = random_tensor({3, 4}, 11), b = random_tensor({3, 4}, 12);
  check("add", [&] { return probe(ad::add(a, b)); }, {a, b});
  check("sub", [&] { return probe(ad::sub(a, b)); }, {a, b});
  check("mul", [&] { return probe(ad::mul(a, b)); }, {a, b});
  check("neg", [&] { return probe(ad::neg(a)); }, {a});
  check("scale", [&] { return probe(ad::scale(a, 2.5)); }, {a});
  check("exp", [&] { return probe(ad::exp(a)); }, {a});
  check("softplus", [&] { return probe(ad::softplus(a)); }, {a});
  check("silu", [&] { return probe(ad::silu(a)); }, {a});
  check("gelu", [&] { return probe(ad::gelu(a)); }, {a});
  check("clamp", [&] { return probe(ad::clamp(a, -0.5, 0.5)); }, {a});
  check("sum", [&] { return ad::sum(ad::mul(a, a)); }, {a});
  check("mean", [&] { return probe(ad::mean(a)); }, {a});
  check("reshape", [&] { return probe(ad::reshape(a, {2, 6})); }, {a});

  auto m1 = random_tensor({3, 5}, 21), m2 = random_tensor({5, 4}, 22), bias = random_tensor({4}, 23);
  auto x34 = random_tensor({3, 4}, 24);
  check("matmul", [&] { return probe(ad::matmul(m1, m2)); }, {m1, m2});
  check("gather_contract", [&] { return probe(ad::gather_contract(m1, m2)); }, {m1, m2});
  check("add_row_bias", [&] { return probe(ad::add_row_bias(x34, bias)); }, {x34, bias});

  auto n = random_tensor({3, 6}, 31, -2, 2), g = random_tensor({6}, 32, 0.5, 1.5), nb = random_tensor({6}, 33);
  check("softmax", [&] { return probe(ad::softmax(n)); }, {n});
  check("log_softmax", [&] { return probe(ad::log_softmax(n)); }, {n});
  check("layer_norm", [&] { return probe(ad::layer_norm(n, g, nb)); }, {n, g, nb});
  check("rms_norm", [&] { return probe(ad::rms_norm(n, g)); }, {n, g});

  auto cx = random_tensor({2, 4, 9, 9}, 41), cw = random_tensor({3, 2, 3, 3, 3}, 42), cb = random_tensor({3}, 43);
  for (bool replicate : {false, true}) {
    const ad::Conv3dSpec spec{{1, 2, 2}, {1, 1, 1}, replicate};
    check(replicate ? "conv3d(replicate)" : "conv3d(zero)", [&] { return probe(ad::conv3d(cx, cw, cb, spec)); },
          {cx, cw, cb});
  }
  check("spatial_mean", [&] { return probe(ad::spatial_mean(cx)); }, {cx});
  auto s1 = random_tensor({7, 3}, 44), k1 = random_tensor({3, 4}, 45), kb = random_tensor({3}, 46);
  check("depthwise_conv1d", [&] { return probe(ad::depthwise_conv1d(s1, k1, kb)); }, {s1, k1, kb});

  auto r = random_tensor({5, 3}, 61), r2 = random_tensor({2, 3}, 62);
  check("gather_rows", [&] { return probe(ad::gather_rows(r, {4, -1, 0, 4})); }, {r});
  check("permute_rows", [&] { return probe(ad::permute_rows(r, {2, 0, 1, 4, 3})); }, {r});
  check("reverse_rows", [&] { return probe(ad::reverse_rows(r)); }, {r});
  check("concat_rows", [&] { return probe(ad::concat_rows(r, r2)); }, {r, r2});
  check("slice_rows", [&] { return probe(ad::slice_rows(r, 1, 4)); }, {r});
  check("slice_cols", [&] { return probe(ad::slice_cols(r, 1, 3)); }, {r});
  auto f = random_tensor({2, 4, 4, 3}, 63, 0, 1);
  check("patchify", [&] { return probe(ad::patchify(f, 2)); }, {f});
  check("channels_first", [&] { return probe(ad::channels_first(f)); }, {f});
  check("gray", [&] { return probe(ad::gray(f)); }, {f});

  auto z = random_tensor({1, 6}, 71, -2, 2);
  check("cross_entropy", [&] { return ad::cross_entropy(z, 4); }, {z});

  // Straight-through selection: its backward is the soft-path Jacobian.
  auto sc = random_tensor({3, 7}, 72, -2, 2);
  const auto noise = random_values(21, 73, -0.5, 0.5);
  auto fr = random_tensor({7, 5}, 74);
  sc.set_requires_grad(true);
  {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    tape.backward(probe(ad::gather_contract(ad::gumbel_softmax_st<double>(sc, noise, 0.7), fr)));
  }
  const auto st_grad = sc.grad();
  const auto soft = [&] {
    return probe(ad::gather_contract(ad::softmax(ad::scale(ad::add(sc, Tensor<double>({3, 7}, noise)), 1.0 / 0.7)), fr));
  };
  check("gumbel_softmax_st(soft path)", soft, {sc});
  sc.zero_grad();
  {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    tape.backward(soft());
  }
  double st_diff = 0;
  for (std::size_t i = 0; i < st_grad.size(); ++i) st_diff = std::max(st_diff, rel_err(st_grad[i], sc.grad()[i], 1e-6));
  o.require(st_diff <= 1e-4, "gumbel_softmax_st backward equals soft-path gradient");

  auto hx = random_tensor({2, 30}, 81, 0.05, 0.95), hy = random_tensor({30}, 82, 0.05, 0.95),
       hw = random_tensor({30}, 83, 0.05, 0.95);
  for (double bw : {1.0, 0.6}) {
    const ad::SoftBinner<double> binner(8, bw);
    check("soft_histogram", [&] { return probe(ad::soft_histogram(hx, binner)); }, {hx});
    check("joint_soft_histogram", [&] { return probe(ad::joint_soft_histogram(hy, hw, binner)); }, {hy, hw});
    check("row_entropy", [&] { return ad::sum(ad::row_entropy(ad::soft_histogram(hx, binner))); }, {hx});
    check("mutual_information", [&] { return ad::mutual_information(ad::joint_soft_histogram(hy, hw, binner)); },
          {hy, hw});
  }
  msg::HistogramConfig hc;
  hc.bins = 16;
  auto lf = random_tensor({3, 6, 6, 3}, 40, 0.05, 0.6);
  check("weie(soft)", [&] { return msg::weie(lf, hc, msg::Binning::Soft); }, {lf});
  check("iemi(soft)", [&] { return msg::iemi(lf, hc, msg::Binning::Soft); }, {lf});

  for (auto [lo, hi] : {std::pair{0.05, 1.0}, std::pair{1e-3, 5e-3}}) {
    const std::size_t L = 8, E = 2, N = 3;
    auto u = random_tensor({L, E}, 101), dl = random_tensor({L, E}, 102, lo, hi),
         al = random_tensor({E, N}, 103, -1, 1), sb = random_tensor({L, N}, 104), scc = random_tensor({L, N}, 105),
         sd = random_tensor({E}, 106);
    check("selective_scan op dt~" + std::to_string(hi),
          [&] { return probe(ad::selective_scan(u, dl, al, sb, scc, sd)); }, {u, dl, al, sb, scc, sd});
  }
  {
    const std::size_t L = 10, E = 4, N = 3, R = 2;
    auto x = random_tensor({L, E}, 200);
    ssm::SsmParams<double> p;
    p.x_proj = random_tensor({E, R + 2 * N}, 201, -0.5, 0.5);
    p.dt_proj = random_tensor({R, E}, 202, -0.5, 0.5);
    p.dt_bias = random_tensor({E}, 203, -2, 0);
    p.a_log = random_tensor({E, N}, 204, -1, 1);
    p.d = random_tensor({E}, 205);
    check("selective_scan (full projections)", [&] { return probe(ssm::selective_scan(x, p)); },
          {x, p.x_proj, p.dt_proj, p.dt_bias, p.a_log, p.d});
  }
  o.detail << checked << " checks, worst " << worst_op << " rel err " << worst;
}

// ---------------------------------------------------------------- 4, 5

Tensor<double> gray_frames(std::size_t k, std::size_t h, std::size_t w, const std::vector<double>& levels) {
  std::vector<double> v(k * h * w * 3);
  for (std::size_t i = 0; i < k * h * w; ++i) v[3 * i] = v[3 * i + 1] = v[3 * i + 2] = levels[i];
  return Tensor<double>({k, h, w, 3}, v);
}

void loss_arithmetic(Outcome& o) {
  const msg::HistogramConfig cfg;
  const double flat = msg::weie(gray_frames(1, 8, 8, std::vector<double>(64, 0.4)), cfg, msg::Binning::Hard).item();
  std::vector<double> half(64, 0.0);
  std::fill(half.begin() + 32, half.end(), 1.0);
  const double two = msg::weie(gray_frames(1, 8, 8, half), cfg, msg::Binning::Hard).item();
  Tensor<double> padded({2, 6});
  padded.mutable_data()[4] = 1;
  padded.mutable_data()[6 + 5] = 1;
  const double ms = msg::ms_loss(padded, 2, 4).item();
  o.require(flat == 0.0, "WEIE(constant) == 0");
  o.require(std::abs(two - std::numbers::ln2) <= 1e-9, "WEIE(50/50) == ln 2");
  o.require(ms == 0.25, "MS(K=2, Pad=4, all padded) == 0.25");

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  bool exact = true;
  for (int i = 0; i < 100; ++i) {
    const double w = std::abs(u(rng)), m = std::abs(u(rng)), s = std::abs(u(rng)) / 6;
    std::vector<double> logits{u(rng), u(rng), u(rng), u(rng)};
    const auto lb = msg::total_loss(w, m, s, logits, i % 4);
    exact &= lb.total == ((lb.iemi - lb.weie) + lb.ms) + lb.cls;
    double mx = *std::max_element(logits.begin(), logits.end()), se = 0;
    for (double l : logits) se += std::exp(l - mx);
    exact &= std::abs(lb.cls - (mx + std::log(se) - logits[i % 4])) <= 1e-12;
  }
  o.require(exact, "total = IEMI - WEIE + MS + CE identity");
  o.detail << "WEIE flat " << flat << ", WEIE two-level " << two << " (ln2 err " << std::abs(two - std::numbers::ln2)
           << "), MS " << ms << ", decomposition exact on 100 draws";
}

double oracle_mi(const Tensor<double>& f, std::size_t f0, std::size_t f1, int bins, double wc) {
  const std::size_t hh = f.dim(1), ww = f.dim(2), hw = hh * ww;
  const auto bin = [&](double v) { return std::min(bins - 1, std::max(0, int(std::floor(v * bins)))); };
  const auto gray = [&](std::size_t i) { return 0.299 * f[3 * i] + 0.587 * f[3 * i + 1] + 0.114 * f[3 * i + 2]; };
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ma, mb;
  for (std::size_t r = 0; r < hh; ++r)
    for (std::size_t c = 0; c < ww; ++c) {
      const std::size_t i = r * ww + c;
      const double coord = wc * (double(c) / double(ww - 1) + double(r) / double(hh - 1));
      const int a = bin(std::clamp(gray(f0 * hw + i) + coord, 0.0, 1.0));
      const int b = bin(std::clamp(gray(f1 * hw + i) + coord, 0.0, 1.0));
      joint[{a, b}] += 1.0 / hw;
      ma[a] += 1.0 / hw;
      mb[b] += 1.0 / hw;
    }
  double mi = 0;
  for (auto [ab, p] : joint) mi += p * std::log(p / (ma[ab.first] * mb[ab.second]));
  return mi;
}

void iemi_discrimination(Outcome& o) {
  const msg::HistogramConfig cfg;
  double min_gap = 1e300, worst_oracle = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_values(4096, 300 + seed, 0, 1);
    std::vector<double> same(a);
    same.insert(same.end(), a.begin(), a.end());
    const auto fs = gray_frames(2, 64, 64, same);
    const auto fi = gray_frames(2, 64, 64, random_values(8192, 400 + seed, 0, 1));
    const double mi_same = msg::iemi(fs, cfg, msg::Binning::Hard).item();
    const double mi_ind = msg::iemi(fi, cfg, msg::Binning::Hard).item();
    worst_oracle = std::max({worst_oracle, std::abs(mi_same - oracle_mi(fs, 0, 1, 256, cfg.coord_weight)),
                             std::abs(mi_ind - oracle_mi(fi, 0, 1, 256, cfg.coord_weight))});
    min_gap = std::min(min_gap, mi_same - mi_ind);
    if (seed == 0) o.detail << "MI same " << mi_same << " nats, independent " << mi_ind << "; ";
  }
  o.require(min_gap >= 1.0, "MI gap >= 1 nat");
  o.require(worst_oracle <= 1e-9, "oracle agreement 1e-9");
  o.detail << "min gap " << min_gap << " over 5 seeds, oracle err " << worst_oracle;
}

// ---------------------------------------------------------------- 6

void peas_contract(Outcome& o) {
  std::mt19937_64 rng(8);
  bool one_hot = true, sorted = true, gathers = true;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t k = 1 + rng() % 8, p = k + rng() % 24, h = 2 + rng() % 4, w = 2 + rng() % 4;
    const auto scores = random_tensor({k, p}, 1000 + inst, -3, 3);
    const auto frames = random_tensor({p, h, w, 3}, 2000 + inst, 0, 1);
    const auto m = peas::make_mask(scores, peas::MaskMode::Eval);
    sorted &= std::is_sorted(m.indices.begin(), m.indices.end());
    for (std::size_t r = 0; r < k; ++r) {
      std::size_t ones = 0, zeros = 0;
      for (std::size_t c = 0; c < p; ++c) {
        ones += m.mask[r * p + c] == 1.0;
        zeros += m.mask[r * p + c] == 0.0;
      }
      one_hot &= ones == 1 && zeros == p - 1;
    }
    const auto sel = peas::apply_selection(m.mask, frames);
    const std::size_t fs = h * w * 3;
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t i = 0; i < fs; ++i) gathers &= sel[r * fs + i] == frames[m.indices[r] * fs + i];
  }
  o.require(one_hot, "eval masks row-one-hot");
  o.require(sorted, "selected indices sorted in time");
  o.require(gathers, "apply_selection == brute-force gather");

  // Straight-through gradients equal the relaxed path's and that path
  // passes finite differences.
  const auto scores = random_tensor({3, 6}, 13, -1, 1);
  const auto frames = random_tensor({6, 2, 2, 3}, 14);
  const peas::NoiseKey key{5, 1, 2};
  auto s = Tensor<double>::parameter(scores.shape(), std::vector<double>(scores.data().begin(), scores.data().end()));
  {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    tape.backward(probe(peas::apply_selection(peas::make_mask(s, peas::MaskMode::Train, 1.0, key).mask, frames)));
  }
  std::vector<double> noise(18);
  std::vector<std::size_t> hard(3);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 6; ++c) noise[r * 6 + c] = key.gumbel(r, c);
    for (std::size_t c = 1; c < 6; ++c)
      if (scores[r * 6 + c] + noise[r * 6 + c] > scores[r * 6 + hard[r]] + noise[r * 6 + hard[r]]) hard[r] = c;
  }
  std::vector<std::size_t> perm{0, 1, 2};
  std::stable_sort(perm.begin(), perm.end(), [&](auto a, auto b) { return hard[a] < hard[b]; });
  auto s2 = Tensor<double>(scores.shape(), std::vector<double>(scores.data().begin(), scores.data().end()));
  const auto soft = [&] {
    return probe(peas::apply_selection(ad::permute_rows(ad::softmax(ad::add(s2, Tensor<double>({3, 6}, noise))), perm),
                                       frames));
  };
  const double fd = ad::grad_check(soft, {s2}).max_rel_error;
  s2.zero_grad();
  {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    tape.backward(soft());
  }
  double st = 0;
  for (std::size_t i = 0; i < s.grad().size(); ++i) st = std::max(st, rel_err(s.grad()[i], s2.grad()[i], 1e-9));
  o.require(fd <= 1e-4, "relaxed selection passes finite differences");
  o.require(st <= 1e-10, "straight-through gradient equals relaxed gradient");
  o.detail << "100 instances ok; finite-difference rel err " << fd << ", straight-through mismatch " << st;
}

// ---------------------------------------------------------------- 7, 8

void model_sizing(Outcome& o) {
  const auto cfg = ssm::ModelConfig::from_preset("tiny", 10, 8);
  const std::size_t formula = ssm::parameter_count(cfg);
  ad::ParamStore<float> store;
  ssm::Classifier<float> model(store, cfg, 1);
  const std::size_t built = store.parameter_count();
  const double dev = (double(built) - 7e6) / 7e6;
  o.require(built == formula, "built model matches the count formula");
  o.require(std::abs(dev) <= 0.15, "within 15% of 7M");
  o.detail << built << " parameters (" << std::showpos << 100 * dev << std::noshowpos << "% vs 7M)";
}

void sampling_arithmetic(Outcome& o) {
  const std::map<std::pair<int, int>, std::size_t> expected = {
      {{300, 20}, 6},      {{300, 50}, 15},     {{300, 200}, 60},    {{5000, 20}, 100},  {{5000, 50}, 250},
      {{5000, 200}, 1000}, {{60000, 20}, 1200}, {{60000, 50}, 3000}, {{60000, 200}, 12000}};
  for (const auto& [key, want] : expected) {
    const auto [ms, f] = key;
    const std::int64_t us = std::int64_t(ms) * 1000;
    EventStream s;
    s.geometry = {4, 4};
    s.start_us = 0;
    s.duration_us = us;
    for (std::int64_t t = 0; t < us; t += 997) s.events.push_back({t, std::uint16_t(t % 4), std::uint16_t(t / 4 % 4), 1});
    SamplingConfig sc;
    sc.frequency_hz = f;
    sc.mode = AggregationMode::TimeWindows;
    sc.height = sc.width = 4;
    const std::size_t ticks = sample_ticks(s, f).size();
    const std::size_t frames = build_stack(s, sc).original_count;
    const std::size_t ceil_tf = std::size_t(std::ceil(double(ms) * f / 1000.0));
    o.require(ticks == want && frames == want && ceil_tf == want && tick_count(us, f) == want,
              "P(" + std::to_string(ms) + " ms, " + std::to_string(f) + " Hz) = " + std::to_string(want));
  }
  // Off-grid durations round up.
  o.require(tick_count(300'001, 20) == 7, "ceil for T f = 6.00002");
  o.detail << "9 grid points and the ceiling case agree";
}

// ---------------------------------------------------------------- 9, 10

SyntheticDatasetSpec suite_spec(std::uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.classes = 4;
  spec.per_class = 8;
  spec.min_duration_us = 300'000;
  spec.max_duration_us = 600'000;
  spec.event_rate = 10'000;
  spec.noise_fraction = 0.05;
  spec.geometry = {32, 32};
  spec.seed = seed;
  return spec;
}

train::TrainConfig narrow_config() {
  train::TrainConfig c;
  c.sampling.frequency_hz = 20;
  c.sampling.group_size = 300;
  c.sampling.height = 32;
  c.sampling.width = 32;
  c.frames_k = 8;
  c.model.layers = 4;
  c.model.dim = 96;
  c.model.patch = 8;
  c.epochs = 200;
  c.batch_size = 8;
  c.seed = 3;
  c.eval_every = 5;
  c.stop_accuracy = 1.0;
  c.threads = std::max(1u, std::thread::hardware_concurrency());
  return c;
}

void end_to_end(Outcome& o) {
  const auto data = synthetic_samples(suite_spec(1));
  train::Pipeline<train::Real> pipe(narrow_config(), 4);
  const auto r = train::fit(pipe, data, progress());
  const auto& first = r.history.front();
  const auto& last = r.history.back();
  const double final_acc = train::accuracy(pipe, data, pipe.config().sampling.frequency_hz);
  o.require(final_acc == 1.0, "100% train accuracy");
  o.require(first.padded_samples > 0 && last.padded_samples > 0, "padded samples present");
  o.require(last.ms_padded < first.ms_padded, "MS on padded samples decreases");
  o.detail << "train top1 " << final_acc << " after " << r.history.size() << " epochs; MS(padded) "
           << first.ms_padded << " -> " << last.ms_padded << " over " << last.padded_samples << " padded samples";
}

void frequency_sweep(Outcome& o) {
  const auto train_set = synthetic_samples(suite_spec(1));
  const auto eval_set = synthetic_samples(suite_spec(2));
  train::SweepConfig sw;
  sw.train_frequencies = {20, 60};
  sw.eval_frequencies = {20, 40, 60, 80, 100};
  sw.base = narrow_config();
  sw.base.epochs = 100;
  const auto rows = train::sweep_frequency(sw, train_set, eval_set, 4, progress());
  std::ostringstream table;
  train::write_sweep_csv(table, rows);
  std::cout << table.str();
  for (const auto& row : rows) o.require(row.error.empty(), "cell " + to_string(row.variant) + ": " + row.error);
  const double peas = train::max_drop(rows, train::Variant::EventCountsPeas);
  const double counts = train::max_drop(rows, train::Variant::EventCounts);
  const double windows = train::max_drop(rows, train::Variant::TimeWindows);
  o.require(peas < counts, "PEAS max drop < event-counts max drop");
  o.require(peas < windows, "PEAS max drop < time-windows max drop");
  o.detail << "max drop: event-counts+peas " << peas << ", event-counts " << counts << ", time-windows " << windows;
}

// ---------------------------------------------------------------- 11

void linear_scaling(Outcome& o) {
  const std::vector<std::size_t> ks{8, 16, 32, 64};
  std::vector<ad::ParamStore<float>> stores(ks.size());
  std::vector<ssm::Classifier<float>> models;
  std::vector<Tensor<float>> inputs;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    ssm::ModelConfig cfg;
    cfg.preset = "custom";
    cfg.layers = 4;
    cfg.dim = 96;
    cfg.patch = 8;
    cfg.frames = ks[i];
    cfg.classes = 10;
    cfg.height = cfg.width = 32;
    models.emplace_back(stores[i], cfg, 11);
    const auto v = random_values(ks[i] * 32 * 32 * 3, 500 + ks[i], 0, 1);
    inputs.emplace_back(ad::Shape{ks[i], 32, 32, 3}, std::vector<float>(v.begin(), v.end()));
    models[i].forward(inputs[i]);
  }
  // Rounds interleave the lengths so machine-load drift hits every K alike;
  // the minimum over rounds is the least disturbed measurement.
  std::vector<std::vector<double>> reps(ks.size());
  for (int round = 0; round < 15; ++round) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto z = models[i].forward(inputs[i]);
      reps[i].push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (!std::isfinite(z[0])) o.require(false, "finite logits");
    }
  }
  std::vector<double> best, median;
  for (auto& r : reps) {
    std::sort(r.begin(), r.end());
    best.push_back(r.front());
    median.push_back(r[r.size() / 2]);
  }
  o.detail << "forward s min/median (K=8..64):";
  for (std::size_t i = 0; i < ks.size(); ++i) o.detail << ' ' << best[i] << '/' << median[i];
  o.detail << "; ratios";
  for (std::size_t i = 1; i < ks.size(); ++i) {
    const double ratio = best[i] / best[i - 1];
    o.detail << ' ' << ratio;
    o.require(ratio <= 2.6, "per-doubling ratio <= 2.6");
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "discretization closed forms", 1, discretization},
      {2, "blocked vs sequential scan", 30, scan_equivalence},
      {3, "gradient suite", 120, gradient_suite},
      {4, "loss arithmetic", 1, loss_arithmetic},
      {5, "IEMI discrimination", 5, iemi_discrimination},
      {6, "PEAS contract", 30, peas_contract},
      {7, "tiny model sizing", 5, model_sizing},
      {8, "sampling arithmetic", 1, sampling_arithmetic},
      {9, "end-to-end learning", 1800, end_to_end},
      {10, "frequency generalization direction", 7200, frequency_sweep},
      {11, "linear length scaling", 600, linear_scaling},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < c.budget_s, "runtime budget " + std::to_string(c.budget_s) + " s");
    failures += !o.pass();
    std::string line = o.detail.str();
    for (const auto& f : o.failed) line += " | failed: " + f;
    std::printf("%s [%d] %s (%.2f s): %s\n", o.pass() ? "PASS" : "FAIL", c.id, c.name, secs, line.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
