#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "sescore/model.hpp"

using namespace sescore;

namespace {

ModelConfig tiny_config(std::size_t m = 0) {
  ModelConfig c;
  c.d = 4;
  c.u = 2;
  c.p = 2;
  c.q = 3;
  c.m = m;
  c.max_len = 4;
  return c;
}

Tensor random_input(std::size_t t, std::size_t d, std::uint64_t seed) {
  Tensor x({t, d});
  Rng rng(seed);
  for (double& v : x.values) v = rng.gaussian();
  return x;
}

void zero_all(ModelParams& params) {
  for (Parameter* p : params.all()) {
    std::fill(p->value.values.begin(), p->value.values.end(), 0.0);
  }
}

}  // namespace

TEST_CASE("gru_step with zero parameters halves the previous state") {
  GruCellParams g = GruCellParams::init("g", 3, 2, 1);
  for (Parameter* p : {&g.W_z, &g.W_r, &g.W_h, &g.U_z, &g.U_r, &g.U_h,
                       &g.b_z, &g.b_r, &g.b_h}) {
    std::fill(p->value.values.begin(), p->value.values.end(), 0.0);
  }
  Tape tape;
  auto x = tape.input({1.0, -2.0, 0.5});
  auto h_prev = tape.input({0.8, -0.4});
  auto h = gru_step(tape, x, h_prev, g);
  REQUIRE(tape.value(h).values[0] == Catch::Approx(0.4).margin(1e-15));
  REQUIRE(tape.value(h).values[1] == Catch::Approx(-0.2).margin(1e-15));

  auto h0 = tape.input(Tensor({2}));
  auto h_from_zero = gru_step(tape, x, h0, g);
  REQUIRE(tape.value(h_from_zero).values == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gru_step gradients match finite differences") {
  GruCellParams g = GruCellParams::init("g", 3, 2, 7);
  std::vector<double> x = {0.3, -1.1, 0.7};
  std::vector<double> h0 = {0.2, -0.5};
  std::vector<Parameter*> params;
  g.collect(params);

  {
    Tape tape;
    auto h = gru_step(tape, tape.input(x), tape.input(h0), g);
    tape.backward(tape.sum(h));
  }
  auto value = [&]() {
    Tape tape(false);
    auto h = gru_step(tape, tape.input(x), tape.input(h0), g);
    return tape.scalar(tape.sum(h));
  };
  REQUIRE(finite_diff_check(value, params) <= 1e-4);
}

TEST_CASE("bigru length-1 rows equal one forward and one backward step") {
  GruCellParams fwd = GruCellParams::init("fwd", 3, 2, 11);
  GruCellParams bwd = GruCellParams::init("bwd", 3, 2, 12);
  Tensor x = random_input(1, 3, 5);

  Tape tape;
  auto h = bigru_forward(tape, x, {1.0}, fwd, bwd);
  REQUIRE(h.size() == 1);
  const auto got = tape.value(h[0]).values;

  Tape ref;
  auto xr = ref.input(std::vector<double>(x.values.begin(), x.values.end()));
  auto zero = ref.input(Tensor({2}));
  auto hf = gru_step(ref, xr, zero, fwd);
  auto hb = gru_step(ref, xr, zero, bwd);
  REQUIRE(got[0] == ref.value(hf).values[0]);
  REQUIRE(got[1] == ref.value(hf).values[1]);
  REQUIRE(got[2] == ref.value(hb).values[0]);
  REQUIRE(got[3] == ref.value(hb).values[1]);
}

TEST_CASE("bigru ignores padded timesteps exactly") {
  GruCellParams fwd = GruCellParams::init("fwd", 3, 2, 21);
  GruCellParams bwd = GruCellParams::init("bwd", 3, 2, 22);
  Tensor x = random_input(3, 3, 9);

  Tape t1;
  auto h_short = bigru_forward(t1, x, {1, 1, 1}, fwd, bwd);

  Tensor x_padded({5, 3});
  std::copy(x.values.begin(), x.values.end(), x_padded.values.begin());
  Tape t2;
  auto h_long = bigru_forward(t2, x_padded, {1, 1, 1, 0, 0}, fwd, bwd);

  REQUIRE(h_long.size() == 5);
  for (std::size_t t = 0; t < 3; ++t) {
    REQUIRE(t1.value(h_short[t]).values == t2.value(h_long[t]).values);
  }
  REQUIRE(t2.value(h_long[3]).values == std::vector<double>{0, 0, 0, 0});
  REQUIRE(t2.value(h_long[4]).values == std::vector<double>{0, 0, 0, 0});

  Tape t3;
  REQUIRE_THROWS_AS(bigru_forward(t3, x, {0, 0, 0}, fwd, bwd),
                    DegenerateInputError);
}

TEST_CASE("attention with zero scorer averages the valid rows") {
  AttentionParams a = AttentionParams::init("a", 4, 2, 31);
  std::fill(a.v_a.value.values.begin(), a.v_a.value.values.end(), 0.0);

  Tape tape;
  std::vector<Val> rows = {tape.input({1.0, 2.0, 3.0, 4.0}),
                           tape.input({5.0, 6.0, 7.0, 8.0}),
                           tape.input(Tensor({4}))};
  auto [context, alpha] = attention(tape, rows, {1, 1, 0}, a);
  REQUIRE(tape.value(alpha).values[0] == 0.5);
  REQUIRE(tape.value(alpha).values[1] == 0.5);
  REQUIRE(tape.value(alpha).values[2] == 0.0);
  REQUIRE(tape.value(context).values == std::vector<double>{3, 4, 5, 6});

  auto [solo_ctx, solo_alpha] = attention(tape, rows, {0, 1, 0}, a);
  REQUIRE(tape.value(solo_alpha).values == std::vector<double>{0, 1, 0});
  REQUIRE(tape.value(solo_ctx).values == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("attention gradients match finite differences") {
  AttentionParams a = AttentionParams::init("a", 4, 3, 41);
  std::vector<std::vector<double>> rows = {{0.3, -0.2, 0.9, 0.1},
                                           {-0.6, 0.4, 0.2, -0.8},
                                           {0.0, 0.0, 0.0, 0.0}};
  std::vector<double> mask = {1, 1, 0};
  std::vector<Parameter*> params;
  a.collect(params);

  auto build = [&](Tape& tape) {
    std::vector<Val> h_rows;
    for (const auto& r : rows) h_rows.push_back(tape.input(r));
    auto [ctx, alpha] = attention(tape, h_rows, mask, a);
    (void)alpha;
    return tape.sum(ctx);
  };
  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto value = [&]() {
    Tape tape(false);
    return tape.scalar(build(tape));
  };
  REQUIRE(finite_diff_check(value, params) <= 1e-4);
}

TEST_CASE("single-task forward hits sigmoid midpoint under zero parameters") {
  ModelParams params = ModelParams::init(Mode::single_task, tiny_config(), 3);
  zero_all(params);
  Tensor x = random_input(3, 4, 17);
  auto [p_hat, trace] = single_task_forward(x, {1, 1, 1}, {}, params);
  REQUIRE(p_hat == 0.5);
  REQUIRE(trace.alphas.size() == 1);
  REQUIRE(trace.outputs.size() == 1);
}

TEST_CASE("single-task output lies strictly inside (0,1) and uses metadata") {
  ModelParams params = ModelParams::init(Mode::single_task, tiny_config(2), 5);
  Tensor x = random_input(3, 4, 19);
  auto [p0, t0] = single_task_forward(x, {1, 1, 1}, {1.0, 0.0}, params);
  auto [p1, t1] = single_task_forward(x, {1, 1, 1}, {0.0, 1.0}, params);
  REQUIRE(p0 > 0.0);
  REQUIRE(p0 < 1.0);
  REQUIRE(p0 != p1);

  REQUIRE_THROWS_AS(single_task_forward(x, {1, 1, 1}, {1.0}, params),
                    ShapeError);

  ModelParams no_meta = ModelParams::init(Mode::single_task, tiny_config(), 5);
  auto [pm, tm] = single_task_forward(x, {1, 1, 1}, {}, no_meta);
  REQUIRE(pm > 0.0);
  REQUIRE(pm < 1.0);
}

TEST_CASE("model forward is exactly invariant to extra padding") {
  for (Mode mode : {Mode::single_task, Mode::multi_task}) {
    ModelParams params = ModelParams::init(mode, tiny_config(2), 23);
    Tensor x = random_input(3, 4, 29);
    Tensor x_pad({6, 4});
    std::copy(x.values.begin(), x.values.end(), x_pad.values.begin());
    const std::vector<double> meta = {0.0, 1.0};

    if (mode == Mode::single_task) {
      auto [a, ta] = single_task_forward(x, {1, 1, 1}, meta, params);
      auto [b, tb] = single_task_forward(x_pad, {1, 1, 1, 0, 0, 0}, meta, params);
      REQUIRE(a == b);
      for (std::size_t t = 0; t < 3; ++t) {
        REQUIRE(ta.alphas[0][t] == tb.alphas[0][t]);
      }
      REQUIRE(tb.alphas[0][3] == 0.0);
      REQUIRE(tb.alphas[0][5] == 0.0);
    } else {
      auto [a, ta] = multi_task_forward(x, {1, 1, 1}, meta, params);
      auto [b, tb] = multi_task_forward(x_pad, {1, 1, 1, 0, 0, 0}, meta, params);
      REQUIRE(a == b);
      for (int h = 0; h < kNumCodes; ++h) {
        double total = 0.0;
        for (double v : tb.alphas[h]) total += v;
        REQUIRE(std::abs(total - 1.0) <= 1e-12);
        REQUIRE(tb.alphas[h][4] == 0.0);
      }
    }
  }
}

TEST_CASE("multi-task heads are zeroable and independent") {
  ModelParams params = ModelParams::init(Mode::multi_task, tiny_config(), 7);
  Tensor x = random_input(3, 4, 37);

  ModelParams zeroed = params;
  for (auto& head : zeroed.heads) {
    for (Parameter* p : {&head.W1, &head.b1, &head.W2, &head.b2}) {
      std::fill(p->value.values.begin(), p->value.values.end(), 0.0);
    }
  }
  auto [scores, trace] = multi_task_forward(x, {1, 1, 1}, {}, zeroed);
  REQUIRE(scores.size() == 11);
  for (double s : scores) REQUIRE(s == 0.0);

  auto [base, tb] = multi_task_forward(x, {1, 1, 1}, {}, params);
  ModelParams tweaked = params;
  for (double& v : tweaked.heads[4].b2.value.values) v += 0.5;
  auto [moved, tm] = multi_task_forward(x, {1, 1, 1}, {}, tweaked);
  for (int i = 0; i < kNumCodes; ++i) {
    if (i == 4) {
      REQUIRE(moved[i] != base[i]);
    } else {
      REQUIRE(moved[i] == base[i]);
    }
  }
}

TEST_CASE("full-model gradients match finite differences in both modes") {
  Tensor x = random_input(3, 4, 43);
  const std::vector<double> mask = {1, 1, 1};
  const std::vector<double> meta = {1.0, 0.0};

  {
    ModelParams params = ModelParams::init(Mode::single_task, tiny_config(2), 13);
    auto params_list = params.all();
    auto build = [&](Tape& tape) {
      auto f = single_task_forward_tape(tape, x, mask, meta, params);
      auto safe = tape.clip(f.p_hat, 1e-12, 1.0 - 1e-12);
      return tape.scale(tape.log(safe), -1.0);
    };
    {
      Tape tape;
      tape.backward(build(tape));
    }
    auto value = [&]() {
      Tape tape(false);
      return tape.scalar(build(tape));
    };
    REQUIRE(finite_diff_check(value, params_list) <= 1e-4);
  }
  {
    ModelParams params = ModelParams::init(Mode::multi_task, tiny_config(2), 15);
    auto params_list = params.all();
    std::vector<double> targets = {3, 1, 4, 1, 5, 0, 6, 2, 3, 4, 1};
    auto build = [&](Tape& tape) {
      auto f = multi_task_forward_tape(tape, x, mask, meta, params);
      Val loss = tape.input(Tensor({1}));
      for (int i = 0; i < kNumCodes; ++i) {
        auto diff = tape.sub(f.scores[i], tape.input({targets[i]}));
        loss = tape.add(loss, tape.mul(diff, diff));
      }
      return loss;
    };
    {
      Tape tape;
      tape.backward(build(tape));
    }
    auto value = [&]() {
      Tape tape(false);
      return tape.scalar(build(tape));
    };
    REQUIRE(finite_diff_check(value, params_list) <= 1e-4);
  }
}

TEST_CASE("predict_total clamps, sums, and thresholds") {
  std::vector<double> high(11, 7.2);
  auto a = predict_total(high);
  for (double c : a.clamped) REQUIRE(c == 6.0);
  REQUIRE(a.total == 66.0);
  REQUIRE(a.label == 1);

  std::vector<double> boundary = {4, 4, 4, 4, 4, 4, 4, 4, 4, 2, 2};
  auto b = predict_total(boundary);
  REQUIRE(b.total == 40.0);
  REQUIRE(b.label == 1);

  std::vector<double> low(11, 3.0);
  auto c = predict_total(low);
  REQUIRE(c.total == 33.0);
  REQUIRE(c.label == 0);

  std::vector<double> neg(11, -2.0);
  auto d = predict_total(neg);
  REQUIRE(d.total == 0.0);
  REQUIRE(d.label == 0);

  REQUIRE_THROWS_AS(predict_total(std::vector<double>(5, 1.0)), ShapeError);
}

TEST_CASE("model files round-trip value-exact") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "model_roundtrip.json").string();
  ModelParams params = ModelParams::init(Mode::multi_task, tiny_config(2), 51);
  Tensor x = random_input(3, 4, 53);
  const std::vector<double> meta = {1.0, 0.0};
  auto [before, tb] = multi_task_forward(x, {1, 1, 1}, meta, params);

  save_model(params, path);
  ModelParams loaded = load_model(path);
  REQUIRE(loaded.mode == Mode::multi_task);
  REQUIRE(loaded.config.m == 2);
  auto [after, ta] = multi_task_forward(x, {1, 1, 1}, meta, loaded);
  REQUIRE(before == after);

  REQUIRE_THROWS_AS(single_task_forward(x, {1, 1, 1}, meta, loaded),
                    ContractError);

  std::ofstream trunc(path);
  trunc << "{\"format_version\":1,\"mode\":\"multi";
  trunc.close();
  REQUIRE_THROWS_AS(load_model(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("every attention trace is a masked probability vector") {
  ModelParams params = ModelParams::init(Mode::multi_task, tiny_config(), 61);
  Tensor x = random_input(4, 4, 67);
  auto [scores, trace] = multi_task_forward(x, {1, 1, 1, 0}, {}, params);
  REQUIRE(trace.alphas.size() == 11);
  for (const auto& alpha : trace.alphas) {
    double total = 0.0;
    for (double v : alpha) {
      total += v;
      REQUIRE(v >= 0.0);
    }
    REQUIRE(alpha[3] == 0.0);
    REQUIRE(std::abs(total - 1.0) <= 1e-12);
  }
}
