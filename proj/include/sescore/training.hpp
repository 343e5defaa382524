#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sescore/common.hpp"
#include "sescore/data.hpp"
#include "sescore/model.hpp"
#include "sescore/tape.hpp"

namespace sescore {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::optional<std::size_t> batch_size;  // role-dependent default
  std::optional<std::size_t> max_len;     // role-dependent default
  std::uint64_t seed = 42;
  Mode mode = Mode::single_task;
  bool metadata_enabled = true;
  Role role_filter = Role::therapist_only;

  std::size_t effective_batch_size() const {
    if (batch_size) return *batch_size;
    return role_filter == Role::therapist_only ? 128 : 64;
  }
  std::size_t effective_max_len() const {
    if (max_len) return *max_len;
    return role_filter == Role::therapist_only ? 256 : 512;
  }
};

// One session, ready for the network: merged, role-filtered, truncated,
// padded, with encoded metadata and both label views.
struct TrainSample {
  std::string session_id;
  std::string therapist_id;
  Tensor x;  // max_len x d
  std::vector<double> mask;
  std::vector<double> meta;
  int label = 0;
  std::array<int, kNumCodes> targets{};
};

// Joins transcripts with their embedding rows (one row per merged all-roles
// turn), then selects rows by role. Sessions with no retained rows under
// therapist_only are dropped.
inline std::vector<TrainSample> prepare_samples(
    const std::vector<Session>& sessions,
    const std::map<std::string, EmbeddedSession>& embeddings,
    const MetadataVocab& vocab, Role role, bool metadata_enabled,
    std::size_t max_len) {
  std::vector<TrainSample> out;
  for (const Session& s : sessions) {
    auto it = embeddings.find(s.session_id);
    if (it == embeddings.end()) {
      throw ValidationError("no embeddings for session '" + s.session_id + "'");
    }
    const std::vector<Utterance> merged = merge_turns(s.utterances);
    if (it->second.matrix.rows() != merged.size()) {
      throw ValidationError("session '" + s.session_id + "' has " +
                            std::to_string(merged.size()) +
                            " merged turns but " +
                            std::to_string(it->second.matrix.rows()) +
                            " embedding rows");
    }
    const std::vector<std::size_t> rows = role_row_indices(merged, role);
    if (rows.empty()) continue;

    const std::size_t d = it->second.matrix.cols();
    Tensor selected({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        selected.at(r, c) = it->second.matrix.at(rows[r], c);
      }
    }
    TrainSample sample;
    sample.session_id = s.session_id;
    sample.therapist_id = s.therapist_id;
    auto [x, mask] = truncate_pad(selected, max_len);
    sample.x = std::move(x);
    sample.mask = std::move(mask);
    sample.meta = encode_metadata(s.metadata, vocab, metadata_enabled);
    sample.label = binarize_total(s.labels.total);
    sample.targets = s.labels.codes;
    out.push_back(std::move(sample));
  }
  return out;
}

// ---- losses ------------------------------------------------------------

inline Val weighted_bce(Tape& tape, Val p_hat, int y, double w0, double w1) {
  Val pc = tape.clip(p_hat, 1e-12, 1.0 - 1e-12);
  if (y == 1) return tape.scale(tape.log(pc), -w1);
  return tape.scale(tape.log(tape.one_minus(pc)), -w0);
}

inline double weighted_bce(double p_hat, int y, double w0, double w1) {
  const double pc = std::clamp(p_hat, 1e-12, 1.0 - 1e-12);
  return y == 1 ? -w1 * std::log(pc) : -w0 * std::log(1.0 - pc);
}

struct MultiTaskLoss {
  double total = 0.0;
  std::array<double, kNumCodes> per_code{};
};

// L = sum over codes of the batch-mean squared error; unclamped predictions.
inline MultiTaskLoss multi_task_loss(
    const std::vector<std::array<double, kNumCodes>>& preds,
    const std::vector<std::array<int, kNumCodes>>& targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ShapeError("multi_task_loss: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(targets.size()) +
                     " targets");
  }
  MultiTaskLoss out;
  for (int i = 0; i < kNumCodes; ++i) {
    double acc = 0.0;
    for (std::size_t b = 0; b < preds.size(); ++b) {
      const double diff = preds[b][i] - static_cast<double>(targets[b][i]);
      acc += diff * diff;
    }
    out.per_code[i] = acc / static_cast<double>(preds.size());
    out.total += out.per_code[i];
  }
  return out;
}

// Per-sample squared-error sum over codes; averaging these over a batch
// reproduces the batch loss above exactly.
inline Val multi_task_sample_loss(Tape& tape, const MultiForward& f,
                                  const std::array<int, kNumCodes>& targets) {
  Val loss = tape.input(Tensor({1}));
  for (int i = 0; i < kNumCodes; ++i) {
    auto diff = tape.sub(f.scores[i],
                         tape.input({static_cast<double>(targets[i])}));
    loss = tape.add(loss, tape.mul(diff, diff));
  }
  return loss;
}

// ---- optimizer -----------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(const std::vector<Parameter*>& params) {
    AdamState s;
    for (const Parameter* p : params) {
      s.m.emplace_back(p->value.shape);
      s.v.emplace_back(p->value.shape);
    }
    return s;
  }
};

inline void adam_step(const std::vector<Parameter*>& params, AdamState& state,
                      double lr) {
  if (params.size() != state.m.size()) {
    throw ContractError("adam_step: state does not match parameter list");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      const double g = p.grad.values[k];
      double& m = state.m[i].values[k];
      double& v = state.v[i].values[k];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p.value.values[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    p.zero_grad();
  }
}

// ---- batching ------------------------------------------------------------

struct Batch {
  std::vector<std::size_t> indices;
};

inline std::vector<Batch> make_batches(std::size_t n, std::size_t batch_size,
                                       std::uint64_t epoch_seed) {
  if (n == 0) throw DegenerateInputError("make_batches: empty dataset");
  if (batch_size == 0) throw ContractError("make_batches: batch_size 0");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(epoch_seed);
  rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    Batch b;
    const std::size_t end = std::min(n, start + batch_size);
    b.indices.assign(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(end));
    out.push_back(std::move(b));
  }
  return out;
}

// ---- training loop -------------------------------------------------------

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;     // 1-based
  std::size_t stopped_epoch = 0;  // 1-based
};

inline void write_history_json(const std::string& path,
                               const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "{\"epochs\":[";
  for (std::size_t i = 0; i < h.train_loss.size(); ++i) {
    if (i) out << ',';
    out << "{\"train_loss\":" << format_sig(h.train_loss[i], 17)
        << ",\"val_loss\":" << format_sig(h.val_loss[i], 17) << '}';
  }
  out << "],\"best_epoch\":" << h.best_epoch
      << ",\"stopped_epoch\":" << h.stopped_epoch << "}\n";
}

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

namespace detail {

struct EarlyStopper {
  std::size_t patience;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  // Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double val) {
    if (val < best) {
      best = val;
      best_epoch = epoch;
      return false;
    }
    return epoch - best_epoch >= patience;
  }
};

inline double sample_loss_single(Tape& tape, TrainSample const& s,
                                 ModelParams& params, double w0, double w1,
                                 Val* out_loss) {
  SingleForward f = single_task_forward_tape(tape, s.x, s.mask, s.meta, params);
  Val loss = weighted_bce(tape, f.p_hat, s.label, w0, w1);
  if (out_loss) *out_loss = loss;
  return tape.scalar(loss);
}

inline double sample_loss_multi(Tape& tape, TrainSample const& s,
                                ModelParams& params, Val* out_loss) {
  MultiForward f = multi_task_forward_tape(tape, s.x, s.mask, s.meta, params);
  Val loss = multi_task_sample_loss(tape, f, s.targets);
  if (out_loss) *out_loss = loss;
  return tape.scalar(loss);
}

inline double dataset_loss(const std::vector<TrainSample>& set,
                           ModelParams& params, Mode mode, double w0,
                           double w1) {
  double acc = 0.0;
  for (const TrainSample& s : set) {
    Tape tape(false);
    acc += mode == Mode::single_task
               ? sample_loss_single(tape, s, params, w0, w1, nullptr)
               : sample_loss_multi(tape, s, params, nullptr);
  }
  return acc / static_cast<double>(set.size());
}

}  // namespace detail

inline TrainResult train(const std::vector<TrainSample>& train_set,
                         const std::vector<TrainSample>& val_set,
                         const TrainConfig& cfg, const ModelConfig& arch) {
  if (train_set.empty() || val_set.empty()) {
    throw DegenerateInputError("train: empty train or validation set");
  }
  std::set<std::string> train_th, val_th;
  for (const auto& s : train_set) train_th.insert(s.therapist_id);
  for (const auto& s : val_set) val_th.insert(s.therapist_id);
  for (const auto& t : val_th) {
    if (train_th.count(t)) {
      throw ProtocolError("train: therapist '" + t +
                          "' appears in both train and validation sets");
    }
  }

  ModelConfig mc = arch;
  mc.d = train_set[0].x.cols();
  mc.m = train_set[0].meta.size();
  mc.max_len = train_set[0].x.rows();
  for (const auto& s : train_set) {
    if (s.meta.size() != mc.m || s.x.cols() != mc.d ||
        s.x.rows() != mc.max_len) {
      throw ShapeError("train: inconsistent sample shapes");
    }
  }

  ModelParams params = ModelParams::init(cfg.mode, mc, sub_seed(cfg.seed, "init"));
  std::vector<Parameter*> plist = params.all();
  AdamState adam = AdamState::init(plist);

  double w0 = 1.0, w1 = 1.0;
  if (cfg.mode == Mode::single_task) {
    std::vector<int> labels;
    for (const auto& s : train_set) labels.push_back(s.label);
    std::tie(w0, w1) = class_weights(labels);
  }

  TrainHistory history;
  detail::EarlyStopper stopper{cfg.patience};
  ModelParams best = params;
  const std::uint64_t shuffle_root = sub_seed(cfg.seed, "shuffle");

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double epoch_acc = 0.0;
    const auto batches =
        make_batches(train_set.size(), cfg.effective_batch_size(),
                     shuffle_root + epoch);
    for (const Batch& batch : batches) {
      const double inv = 1.0 / static_cast<double>(batch.indices.size());
      for (std::size_t idx : batch.indices) {
        const TrainSample& s = train_set[idx];
        Tape tape;
        Val loss{};
        epoch_acc += cfg.mode == Mode::single_task
                         ? detail::sample_loss_single(tape, s, params, w0, w1,
                                                      &loss)
                         : detail::sample_loss_multi(tape, s, params, &loss);
        tape.set_seed_grad(inv);
        tape.backward(loss);
      }
      adam_step(plist, adam, cfg.learning_rate);
    }
    history.train_loss.push_back(epoch_acc /
                                 static_cast<double>(train_set.size()));
    const double val =
        detail::dataset_loss(val_set, params, cfg.mode, w0, w1);
    history.val_loss.push_back(val);

    const bool stop = stopper.update(epoch, val);
    if (stopper.best_epoch == epoch) best = params;
    if (stop) {
      history.stopped_epoch = epoch;
      break;
    }
  }
  if (history.stopped_epoch == 0) history.stopped_epoch = cfg.max_epochs;
  history.best_epoch = stopper.best_epoch;
  return {std::move(best), std::move(history)};
}

}  // namespace sescore
