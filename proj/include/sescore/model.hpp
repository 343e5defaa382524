#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sescore/common.hpp"
#include "sescore/data.hpp"
#include "sescore/tape.hpp"
#include "sescore/tensor.hpp"

namespace sescore {

enum class Mode { single_task, multi_task };

inline Mode mode_from_string(const std::string& s) {
  if (s == "single_task") return Mode::single_task;
  if (s == "multi_task") return Mode::multi_task;
  throw ValidationError("unknown mode '" + s + "'");
}

inline std::string mode_to_string(Mode m) {
  return m == Mode::single_task ? "single_task" : "multi_task";
}

struct ModelConfig {
  std::size_t d = 768;      // embedding width
  std::size_t u = 64;       // GRU hidden units per direction
  std::size_t p = 10;       // attention hidden units
  std::size_t q = 20;       // MLP hidden units
  std::size_t m = 0;        // metadata width (0 when disabled)
  std::size_t max_len = 256;
};

struct GruCellParams {
  Parameter W_z, W_r, W_h;  // d x u
  Parameter U_z, U_r, U_h;  // u x u
  Parameter b_z, b_r, b_h;  // u

  static GruCellParams init(const std::string& prefix, std::size_t d,
                            std::size_t u, std::uint64_t seed) {
    GruCellParams g;
    auto mat = [&](Parameter& p, const char* n, std::size_t r, std::size_t c) {
      const std::string name = prefix + "." + n;
      p = Parameter(name, glorot_init({r, c}, sub_seed(seed, name)));
    };
    mat(g.W_z, "W_z", d, u);
    mat(g.W_r, "W_r", d, u);
    mat(g.W_h, "W_h", d, u);
    mat(g.U_z, "U_z", u, u);
    mat(g.U_r, "U_r", u, u);
    mat(g.U_h, "U_h", u, u);
    g.b_z = Parameter(prefix + ".b_z", Tensor({u}));
    g.b_r = Parameter(prefix + ".b_r", Tensor({u}));
    g.b_h = Parameter(prefix + ".b_h", Tensor({u}));
    return g;
  }

  void collect(std::vector<Parameter*>& out) {
    for (Parameter* p : {&W_z, &W_r, &W_h, &U_z, &U_r, &U_h, &b_z, &b_r, &b_h}) {
      out.push_back(p);
    }
  }
};

struct AttentionParams {
  Parameter W_a;  // 2u x p
  Parameter b_a;  // p
  Parameter v_a;  // p

  static AttentionParams init(const std::string& prefix, std::size_t two_u,
                              std::size_t p, std::uint64_t seed) {
    AttentionParams a;
    const std::string wa = prefix + ".W_a";
    const std::string va = prefix + ".v_a";
    a.W_a = Parameter(wa, glorot_init({two_u, p}, sub_seed(seed, wa)));
    a.b_a = Parameter(prefix + ".b_a", Tensor({p}));
    a.v_a = Parameter(va, glorot_init({p}, sub_seed(seed, va)));
    return a;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&W_a);
    out.push_back(&b_a);
    out.push_back(&v_a);
  }
};

struct MlpParams {
  Parameter W1;  // (2u + m) x q
  Parameter b1;  // q
  Parameter W2;  // q x 1
  Parameter b2;  // 1

  static MlpParams init(const std::string& prefix, std::size_t in,
                        std::size_t q, std::uint64_t seed) {
    MlpParams m;
    const std::string w1 = prefix + ".W1";
    const std::string w2 = prefix + ".W2";
    m.W1 = Parameter(w1, glorot_init({in, q}, sub_seed(seed, w1)));
    m.b1 = Parameter(prefix + ".b1", Tensor({q}));
    m.W2 = Parameter(w2, glorot_init({q, 1}, sub_seed(seed, w2)));
    m.b2 = Parameter(prefix + ".b2", Tensor({1}));
    return m;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&W1);
    out.push_back(&b1);
    out.push_back(&W2);
    out.push_back(&b2);
  }
};

// Heads are keyed "total" in single-task mode and by the 11 code
// abbreviations (canonical order) in multi-task mode.
inline std::vector<std::string> head_keys(Mode mode) {
  if (mode == Mode::single_task) return {"total"};
  return std::vector<std::string>(code_names().begin(), code_names().end());
}

struct ModelParams {
  Mode mode = Mode::single_task;
  ModelConfig config;
  GruCellParams fwd, bwd;
  std::vector<AttentionParams> attn;
  std::vector<MlpParams> heads;

  static ModelParams init(Mode mode, const ModelConfig& cfg,
                          std::uint64_t seed) {
    ModelParams mp;
    mp.mode = mode;
    mp.config = cfg;
    mp.fwd = GruCellParams::init("fwd", cfg.d, cfg.u, seed);
    mp.bwd = GruCellParams::init("bwd", cfg.d, cfg.u, seed);
    for (const std::string& key : head_keys(mode)) {
      mp.attn.push_back(
          AttentionParams::init("attn." + key, 2 * cfg.u, cfg.p, seed));
      mp.heads.push_back(
          MlpParams::init("head." + key, 2 * cfg.u + cfg.m, cfg.q, seed));
    }
    return mp;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    fwd.collect(out);
    bwd.collect(out);
    for (std::size_t i = 0; i < attn.size(); ++i) {
      attn[i].collect(out);
      heads[i].collect(out);
    }
    return out;
  }

  void zero_grads() {
    for (Parameter* p : all()) p->zero_grad();
  }
};

struct ForwardTrace {
  std::vector<std::vector<double>> H;       // per valid-padded row, 2u wide
  std::vector<std::vector<double>> alphas;  // one per head, full length
  std::vector<std::vector<double>> contexts;
  std::vector<double> outputs;  // p_hat (1) or raw scores (11)
};

// ---- tape-level building blocks ---------------------------------------

struct GruCellVals {
  Val W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;

  static GruCellVals bind(Tape& tape, GruCellParams& p) {
    return {tape.param(p.W_z), tape.param(p.W_r), tape.param(p.W_h),
            tape.param(p.U_z), tape.param(p.U_r), tape.param(p.U_h),
            tape.param(p.b_z), tape.param(p.b_r), tape.param(p.b_h)};
  }
};

inline Val gru_step(Tape& tape, Val x_t, Val h_prev, const GruCellVals& g) {
  auto z = tape.activate(
      tape.add(tape.affine(x_t, g.W_z, g.b_z), tape.linear(h_prev, g.U_z)),
      Act::sigmoid);
  auto r = tape.activate(
      tape.add(tape.affine(x_t, g.W_r, g.b_r), tape.linear(h_prev, g.U_r)),
      Act::sigmoid);
  auto h_cand = tape.activate(
      tape.add(tape.affine(x_t, g.W_h, g.b_h),
               tape.linear(tape.mul(r, h_prev), g.U_h)),
      Act::tanh);
  return tape.add(tape.mul(tape.one_minus(z), h_prev), tape.mul(z, h_cand));
}

inline Val gru_step(Tape& tape, Val x_t, Val h_prev, GruCellParams& params) {
  return gru_step(tape, x_t, h_prev, GruCellVals::bind(tape, params));
}

// H rows for every timestep; recurrences run over valid positions only and
// padded rows stay exactly zero, which makes padding extension a no-op.
inline std::vector<Val> bigru_forward(Tape& tape, const Tensor& x,
                                      const std::vector<double>& mask,
                                      GruCellParams& fwd_params,
                                      GruCellParams& bwd_params) {
  if (x.rank() != 2 || x.rows() != mask.size()) {
    throw ShapeError("bigru_forward: x " + x.shape_str() + " vs mask [" +
                     std::to_string(mask.size()) + "]");
  }
  std::vector<std::size_t> valid;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t] != 0.0) valid.push_back(t);
  }
  if (valid.empty()) {
    throw DegenerateInputError("bigru_forward: empty mask");
  }
  const std::size_t u = fwd_params.b_z.value.numel();
  const std::size_t d = x.cols();

  std::vector<Val> rows(mask.size());
  for (std::size_t t : valid) {
    std::vector<double> row(x.values.begin() + static_cast<long>(t * d),
                            x.values.begin() + static_cast<long>((t + 1) * d));
    rows[t] = tape.input(row);
  }

  const GruCellVals fg = GruCellVals::bind(tape, fwd_params);
  const GruCellVals bg = GruCellVals::bind(tape, bwd_params);

  std::vector<Val> h_fwd(valid.size()), h_bwd(valid.size());
  Val h = tape.input(Tensor({u}));
  for (std::size_t i = 0; i < valid.size(); ++i) {
    h = gru_step(tape, rows[valid[i]], h, fg);
    h_fwd[i] = h;
  }
  h = tape.input(Tensor({u}));
  for (std::size_t i = valid.size(); i-- > 0;) {
    h = gru_step(tape, rows[valid[i]], h, bg);
    h_bwd[i] = h;
  }

  std::vector<Val> out(mask.size());
  for (std::size_t t = 0; t < mask.size(); ++t) out[t] = tape.input(Tensor({2 * u}));
  for (std::size_t i = 0; i < valid.size(); ++i) {
    out[valid[i]] = tape.concat(h_fwd[i], h_bwd[i]);
  }
  return out;
}

struct AttentionVals {
  Val W_a, b_a, v_a;

  static AttentionVals bind(Tape& tape, AttentionParams& p) {
    return {tape.param(p.W_a), tape.param(p.b_a), tape.param(p.v_a)};
  }
};

inline std::pair<Val, Val> attention(Tape& tape, const std::vector<Val>& h_rows,
                                     const std::vector<double>& mask,
                                     const AttentionVals& a) {
  if (h_rows.size() != mask.size()) {
    throw ShapeError("attention: " + std::to_string(h_rows.size()) +
                     " rows vs mask [" + std::to_string(mask.size()) + "]");
  }
  std::vector<Val> scores(h_rows.size());
  for (std::size_t t = 0; t < h_rows.size(); ++t) {
    if (mask[t] != 0.0) {
      scores[t] = tape.dot(
          a.v_a,
          tape.activate(tape.affine(h_rows[t], a.W_a, a.b_a), Act::tanh));
    } else {
      scores[t] = tape.input(Tensor({1}));
    }
  }
  Val alpha = tape.masked_softmax(tape.stack_scalars(scores), mask);
  Val context = tape.lincomb(alpha, h_rows);
  return {context, alpha};
}

inline std::pair<Val, Val> attention(Tape& tape, const std::vector<Val>& h_rows,
                                     const std::vector<double>& mask,
                                     AttentionParams& params) {
  return attention(tape, h_rows, mask, AttentionVals::bind(tape, params));
}

namespace detail {

inline Val mlp_head(Tape& tape, Val input, MlpParams& mlp) {
  auto h1 = tape.activate(
      tape.affine(input, tape.param(mlp.W1), tape.param(mlp.b1)), Act::relu);
  return tape.affine(h1, tape.param(mlp.W2), tape.param(mlp.b2));
}

inline Val head_input(Tape& tape, Val context, const std::vector<double>& meta,
                      const ModelParams& params) {
  if (params.config.m != meta.size()) {
    throw ShapeError("metadata width " + std::to_string(meta.size()) +
                     " does not match configured m = " +
                     std::to_string(params.config.m));
  }
  if (meta.empty()) return context;
  return tape.concat(context, tape.input(meta));
}

}  // namespace detail

struct SingleForward {
  Val p_hat;
  Val alpha;
  Val context;
  std::vector<Val> h_rows;
};

inline SingleForward single_task_forward_tape(Tape& tape, const Tensor& x,
                                              const std::vector<double>& mask,
                                              const std::vector<double>& meta,
                                              ModelParams& params) {
  if (params.mode != Mode::single_task) {
    throw ContractError("single_task_forward on a multi_task model");
  }
  SingleForward out;
  out.h_rows = bigru_forward(tape, x, mask, params.fwd, params.bwd);
  auto [context, alpha] = attention(tape, out.h_rows, mask, params.attn[0]);
  out.context = context;
  out.alpha = alpha;
  out.p_hat = tape.activate(
      detail::mlp_head(
          tape, detail::head_input(tape, context, meta, params), params.heads[0]),
      Act::sigmoid);
  return out;
}

struct MultiForward {
  std::vector<Val> scores;  // 11 scalars, unclamped
  std::vector<Val> alphas;
  std::vector<Val> contexts;
  std::vector<Val> h_rows;
};

inline MultiForward multi_task_forward_tape(Tape& tape, const Tensor& x,
                                            const std::vector<double>& mask,
                                            const std::vector<double>& meta,
                                            ModelParams& params) {
  if (params.mode != Mode::multi_task) {
    throw ContractError("multi_task_forward on a single_task model");
  }
  MultiForward out;
  out.h_rows = bigru_forward(tape, x, mask, params.fwd, params.bwd);
  for (int i = 0; i < kNumCodes; ++i) {
    auto [context, alpha] = attention(tape, out.h_rows, mask, params.attn[i]);
    out.contexts.push_back(context);
    out.alphas.push_back(alpha);
    out.scores.push_back(detail::mlp_head(
        tape, detail::head_input(tape, context, meta, params),
        params.heads[i]));
  }
  return out;
}

namespace detail {

inline void fill_trace_common(Tape& tape, const std::vector<Val>& h_rows,
                              ForwardTrace& trace) {
  for (Val h : h_rows) trace.H.push_back(tape.value(h).values);
}

}  // namespace detail

inline std::pair<double, ForwardTrace> single_task_forward(
    const Tensor& x, const std::vector<double>& mask,
    const std::vector<double>& meta, ModelParams& params) {
  Tape tape(false);
  SingleForward f = single_task_forward_tape(tape, x, mask, meta, params);
  ForwardTrace trace;
  detail::fill_trace_common(tape, f.h_rows, trace);
  trace.alphas.push_back(tape.value(f.alpha).values);
  trace.contexts.push_back(tape.value(f.context).values);
  trace.outputs.push_back(tape.scalar(f.p_hat));
  return {trace.outputs[0], std::move(trace)};
}

inline std::pair<std::vector<double>, ForwardTrace> multi_task_forward(
    const Tensor& x, const std::vector<double>& mask,
    const std::vector<double>& meta, ModelParams& params) {
  Tape tape(false);
  MultiForward f = multi_task_forward_tape(tape, x, mask, meta, params);
  ForwardTrace trace;
  detail::fill_trace_common(tape, f.h_rows, trace);
  for (int i = 0; i < kNumCodes; ++i) {
    trace.alphas.push_back(tape.value(f.alphas[i]).values);
    trace.contexts.push_back(tape.value(f.contexts[i]).values);
    trace.outputs.push_back(tape.scalar(f.scores[i]));
  }
  return {trace.outputs, std::move(trace)};
}

struct TotalPrediction {
  std::array<double, kNumCodes> clamped{};
  double total = 0.0;
  int label = 0;
};

inline TotalPrediction predict_total(const std::vector<double>& scores) {
  if (scores.size() != static_cast<std::size_t>(kNumCodes)) {
    throw ShapeError("predict_total expects 11 scores, got " +
                     std::to_string(scores.size()));
  }
  TotalPrediction out;
  for (int i = 0; i < kNumCodes; ++i) {
    out.clamped[i] = std::clamp(scores[i], 0.0, static_cast<double>(kCodeMax));
    out.total += out.clamped[i];
  }
  out.label = out.total >= kCompetenceThreshold ? 1 : 0;
  return out;
}

// ---- persistence -------------------------------------------------------

constexpr int kModelFormatVersion = 1;

inline void save_model(ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const ModelConfig& c = params.config;
  out << "{\"format_version\":" << kModelFormatVersion << ",\"mode\":\""
      << mode_to_string(params.mode) << "\",\"config\":{\"d\":" << c.d
      << ",\"u\":" << c.u << ",\"p\":" << c.p << ",\"q\":" << c.q
      << ",\"m\":" << c.m << ",\"max_len\":" << c.max_len
      << "},\"tensors\":{";
  bool first = true;
  for (Parameter* p : params.all()) {
    if (!first) out << ',';
    first = false;
    out << '"' << p->name << "\":{\"shape\":[";
    for (std::size_t i = 0; i < p->value.shape.size(); ++i) {
      if (i) out << ',';
      out << p->value.shape[i];
    }
    out << "],\"values\":[";
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      if (i) out << ',';
      out << format_sig(p->value.values[i], 17);
    }
    out << "]}";
  }
  out << "}}\n";
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ValidationError(path + ": unsupported format_version " +
                            std::to_string(version));
    }
    const Mode mode = mode_from_string(j.at("mode").get<std::string>());
    const auto& jc = j.at("config");
    ModelConfig cfg;
    cfg.d = jc.at("d").get<std::size_t>();
    cfg.u = jc.at("u").get<std::size_t>();
    cfg.p = jc.at("p").get<std::size_t>();
    cfg.q = jc.at("q").get<std::size_t>();
    cfg.m = jc.at("m").get<std::size_t>();
    cfg.max_len = jc.at("max_len").get<std::size_t>();

    ModelParams params = ModelParams::init(mode, cfg, 0);
    const auto& tensors = j.at("tensors");
    std::size_t used = 0;
    for (Parameter* p : params.all()) {
      if (!tensors.contains(p->name)) {
        throw ValidationError(path + ": missing tensor '" + p->name + "'");
      }
      const auto& jt = tensors.at(p->name);
      std::vector<std::size_t> shape =
          jt.at("shape").get<std::vector<std::size_t>>();
      if (shape != p->value.shape) {
        throw ValidationError(path + ": tensor '" + p->name +
                              "' shape mismatch");
      }
      std::vector<double> vals = jt.at("values").get<std::vector<double>>();
      if (vals.size() != p->value.numel()) {
        throw ValidationError(path + ": tensor '" + p->name +
                              "' value count mismatch");
      }
      p->value.values = std::move(vals);
      ++used;
    }
    if (tensors.size() != used) {
      throw ValidationError(path + ": unexpected extra tensors");
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace sescore
