#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sescore/common.hpp"
#include "sescore/data.hpp"
#include "sescore/model.hpp"
#include "sescore/training.hpp"

namespace sescore {

constexpr std::size_t kDefaultFolds = 10;
constexpr std::size_t kDefaultBootstrapN = 100000;

// ---- grouped folds -------------------------------------------------------

struct FoldAssignment {
  std::vector<std::vector<std::size_t>> folds;  // session indices per fold
};

// Therapists are shuffled (seeded), then assigned largest-first to the fold
// with the fewest sessions, so all of a therapist's sessions share a fold.
inline FoldAssignment grouped_kfold(
    const std::vector<std::string>& therapist_of_session, std::size_t k,
    std::uint64_t seed) {
  if (k == 0) throw ContractError("grouped_kfold: k must be positive");
  std::map<std::string, std::vector<std::size_t>> by_therapist;
  for (std::size_t i = 0; i < therapist_of_session.size(); ++i) {
    by_therapist[therapist_of_session[i]].push_back(i);
  }
  if (by_therapist.size() < k) {
    throw DegenerateInputError(
        "grouped_kfold: " + std::to_string(by_therapist.size()) +
        " therapists cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::string> therapists;
  for (const auto& [id, sessions] : by_therapist) therapists.push_back(id);
  Rng rng(seed);
  rng.shuffle(therapists);
  std::stable_sort(therapists.begin(), therapists.end(),
                   [&](const std::string& a, const std::string& b) {
                     return by_therapist[a].size() > by_therapist[b].size();
                   });

  FoldAssignment out;
  out.folds.assign(k, {});
  std::vector<std::size_t> load(k, 0);
  for (const std::string& t : therapists) {
    const std::size_t target = static_cast<std::size_t>(
        std::min_element(load.begin(), load.end()) - load.begin());
    const auto& sessions = by_therapist[t];
    out.folds[target].insert(out.folds[target].end(), sessions.begin(),
                             sessions.end());
    load[target] += sessions.size();
  }
  for (auto& fold : out.folds) std::sort(fold.begin(), fold.end());
  return out;
}

// ---- metrics ---------------------------------------------------------------

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct F1Result {
  double macro_f1 = 0.0;
  ClassStats class0, class1;
  Confusion confusion;
};

namespace detail {

inline ClassStats class_stats(std::size_t tp, std::size_t fp, std::size_t fn,
                              std::size_t support) {
  ClassStats s;
  s.support = support;
  s.precision = tp + fp == 0 ? 0.0
                             : static_cast<double>(tp) /
                                   static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0
                          : static_cast<double>(tp) /
                                static_cast<double>(tp + fn);
  s.f1 = s.precision + s.recall == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace detail

inline F1Result macro_f1(const std::vector<int>& preds,
                         const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw ShapeError("macro_f1: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(labels.size()) +
                     " labels");
  }
  F1Result out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 1) {
      (preds[i] == 1 ? out.confusion.tp : out.confusion.fn) += 1;
    } else {
      (preds[i] == 1 ? out.confusion.fp : out.confusion.tn) += 1;
    }
  }
  const Confusion& c = out.confusion;
  out.class1 = detail::class_stats(c.tp, c.fp, c.fn, c.tp + c.fn);
  out.class0 = detail::class_stats(c.tn, c.fn, c.fp, c.tn + c.fp);
  out.macro_f1 = 0.5 * (out.class0.f1 + out.class1.f1);
  return out;
}

// ---- paired bootstrap ------------------------------------------------------

struct BootstrapResult {
  double delta_observed = 0.0;
  double p_value = 1.0;
  std::size_t n_resamples = 0;
};

namespace detail {

inline double fast_macro_f1(const std::vector<int>& preds,
                            const std::vector<int>& labels,
                            const std::vector<std::size_t>& idx) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i : idx) {
    if (labels[i] == 1) {
      (preds[i] == 1 ? tp : fn) += 1;
    } else {
      (preds[i] == 1 ? fp : tn) += 1;
    }
  }
  auto f1 = [](std::size_t tp_, std::size_t fp_, std::size_t fn_) {
    const double denom = static_cast<double>(2 * tp_ + fp_ + fn_);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp_) / denom;
  };
  return 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
}

}  // namespace detail

// One-sided test of "system A beats system B" by resampling sessions.
inline BootstrapResult paired_bootstrap(const std::vector<int>& preds_a,
                                        const std::vector<int>& preds_b,
                                        const std::vector<int>& labels,
                                        std::size_t n = kDefaultBootstrapN,
                                        std::uint64_t seed = 42) {
  if (preds_a.size() != labels.size() || preds_b.size() != labels.size() ||
      labels.empty()) {
    throw ShapeError("paired_bootstrap: misaligned prediction vectors");
  }
  const std::size_t m = labels.size();
  std::vector<std::size_t> all(m);
  for (std::size_t i = 0; i < m; ++i) all[i] = i;

  BootstrapResult out;
  out.n_resamples = n;
  out.delta_observed = detail::fast_macro_f1(preds_a, labels, all) -
                       detail::fast_macro_f1(preds_b, labels, all);

  Rng rng(sub_seed(seed, "bootstrap"));
  std::vector<std::size_t> idx(m);
  std::size_t at_or_below_zero = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < m; ++i) idx[i] = rng.below(m);
    const double delta = detail::fast_macro_f1(preds_a, labels, idx) -
                         detail::fast_macro_f1(preds_b, labels, idx);
    if (delta <= 0.0) ++at_or_below_zero;
  }
  out.p_value = (static_cast<double>(at_or_below_zero) + 1.0) /
                (static_cast<double>(n) + 1.0);
  return out;
}

// ---- saliency --------------------------------------------------------------

constexpr std::size_t kSaliencyBins = 100;

struct SaliencyCurve {
  std::string code;
  std::array<double, kSaliencyBins> bins{};
  std::size_t n_sessions = 0;
};

// Treats attention over T turns as a density on normalized session time:
// alpha_t becomes height alpha_t*T at position (t+0.5)/T, linearly
// interpolated between turns and clamped at the ends. Each bin takes the
// average of that density over its interval, so total mass is preserved for
// every T and sessions of different lengths share a common axis. Bins that
// contain no turn position reduce to the density at their center.
inline std::array<double, kSaliencyBins> resample_curve(
    const std::vector<double>& alpha) {
  if (alpha.empty()) throw DegenerateInputError("resample_curve: empty alpha");
  const std::size_t t_len = alpha.size();
  const double t_d = static_cast<double>(t_len);
  auto knot_x = [&](std::size_t t) {
    return (static_cast<double>(t) + 0.5) / t_d;
  };
  auto density = [&](double x) {
    const double pos = x * t_d - 0.5;
    if (pos <= 0.0) return alpha.front() * t_d;
    if (pos >= t_d - 1.0) return alpha.back() * t_d;
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= t_len - 1) lo = t_len - 2;
    const double frac = pos - static_cast<double>(lo);
    return (alpha[lo] * (1.0 - frac) + alpha[lo + 1] * frac) * t_d;
  };
  std::array<double, kSaliencyBins> bins{};
  const double nb = static_cast<double>(kSaliencyBins);
  for (std::size_t b = 0; b < kSaliencyBins; ++b) {
    const double lo = static_cast<double>(b) / nb;
    const double hi = static_cast<double>(b + 1) / nb;
    // Turn positions strictly inside (lo, hi): lo*T - 0.5 < t < hi*T - 0.5.
    const double t_min = std::floor(lo * t_d - 0.5) + 1.0;
    const double t_max = std::ceil(hi * t_d - 0.5) - 1.0;
    std::size_t first = t_min < 0.0 ? 0 : static_cast<std::size_t>(t_min);
    std::size_t last = t_max < 0.0 ? 0 : static_cast<std::size_t>(t_max);
    if (last > t_len - 1) last = t_len - 1;
    bool any = false;
    for (std::size_t t = first; t <= last && t < t_len; ++t) {
      const double x = knot_x(t);
      if (x > lo && x < hi) {
        any = true;
        break;
      }
    }
    if (!any) {
      bins[b] = density(0.5 * (lo + hi));
      continue;
    }
    double area = 0.0;
    double x_prev = lo;
    double g_prev = density(lo);
    for (std::size_t t = first; t <= last && t < t_len; ++t) {
      const double x = knot_x(t);
      if (x <= lo || x >= hi) continue;
      const double g = alpha[t] * t_d;
      area += 0.5 * (g_prev + g) * (x - x_prev);
      x_prev = x;
      g_prev = g;
    }
    area += 0.5 * (g_prev + density(hi)) * (hi - x_prev);
    bins[b] = area / (hi - lo);
  }
  return bins;
}

// Valid-position attention weights from a full-length trace row.
inline std::vector<double> valid_alpha(const std::vector<double>& alpha,
                                       const std::vector<double>& mask) {
  std::vector<double> out;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t] != 0.0) out.push_back(alpha[t]);
  }
  return out;
}

inline std::vector<SaliencyCurve> aggregate_saliency(
    ModelParams& params, const std::vector<TrainSample>& samples) {
  if (samples.empty()) {
    throw DegenerateInputError("aggregate_saliency: no sessions");
  }
  const bool multi = params.mode == Mode::multi_task;
  const std::size_t heads = multi ? kNumCodes : 1;
  std::vector<SaliencyCurve> curves(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    curves[h].code = multi ? code_names()[h] : std::string("total");
  }
  for (const TrainSample& s : samples) {
    ForwardTrace trace;
    if (multi) {
      trace = multi_task_forward(s.x, s.mask, s.meta, params).second;
    } else {
      trace = single_task_forward(s.x, s.mask, s.meta, params).second;
    }
    for (std::size_t h = 0; h < heads; ++h) {
      const auto bins = resample_curve(valid_alpha(trace.alphas[h], s.mask));
      for (std::size_t b = 0; b < kSaliencyBins; ++b) {
        curves[h].bins[b] += bins[b];
      }
      curves[h].n_sessions += 1;
    }
  }
  for (auto& c : curves) {
    for (double& v : c.bins) v /= static_cast<double>(c.n_sessions);
  }
  if (multi) {
    SaliencyCurve mean;
    mean.code = "mean";
    mean.n_sessions = curves[0].n_sessions;
    for (const auto& c : curves) {
      for (std::size_t b = 0; b < kSaliencyBins; ++b) {
        mean.bins[b] += c.bins[b];
      }
    }
    for (double& v : mean.bins) v /= static_cast<double>(kNumCodes);
    curves.push_back(std::move(mean));
  }
  return curves;
}

inline void write_saliency_csv(const std::string& path,
                               const std::vector<SaliencyCurve>& curves) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "code";
  for (std::size_t b = 0; b < kSaliencyBins; ++b) out << ",bin_" << b;
  out << '\n';
  for (const auto& c : curves) {
    out << c.code;
    for (double v : c.bins) out << ',' << format_sig(v, 9);
    out << '\n';
  }
}

// ---- cross-validation ------------------------------------------------------

struct CrossvalConfig {
  TrainConfig train;
  ModelConfig arch;  // u, p, q are read; d/m/max_len derive from data
  std::size_t k = kDefaultFolds;
  double val_fraction = 0.1;
  std::size_t threads = 1;
};

struct SessionPrediction {
  std::string session_id;
  std::size_t fold = 0;
  int label = 0;
  int pred = 0;
  double p_hat = 0.0;    // single-task
  double total = 0.0;    // multi-task, clamped sum
  std::array<double, kNumCodes> codes{};  // multi-task, clamped
};

struct EvalReport {
  Mode mode = Mode::single_task;
  bool metadata_enabled = true;
  Role role = Role::therapist_only;
  std::size_t k = kDefaultFolds;
  std::uint64_t seed = 0;
  std::vector<SessionPrediction> predictions;  // sorted by session_id
  std::vector<F1Result> per_fold;
  F1Result pooled;
};

namespace detail {

// Splits the training pool of a fold into train/val therapist groups.
inline void carve_validation(const std::vector<TrainSample>& pool,
                             double val_fraction, std::uint64_t seed,
                             std::vector<TrainSample>& train_out,
                             std::vector<TrainSample>& val_out) {
  std::vector<std::string> therapists;
  {
    std::set<std::string> seen;
    for (const auto& s : pool) {
      if (seen.insert(s.therapist_id).second) {
        therapists.push_back(s.therapist_id);
      }
    }
  }
  std::sort(therapists.begin(), therapists.end());
  Rng rng(seed);
  rng.shuffle(therapists);
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(val_fraction * static_cast<double>(therapists.size()))));
  std::set<std::string> val_ids(therapists.begin(),
                                therapists.begin() + static_cast<long>(n_val));
  for (const auto& s : pool) {
    (val_ids.count(s.therapist_id) ? val_out : train_out).push_back(s);
  }
}

inline SessionPrediction predict_sample(const TrainSample& s,
                                        ModelParams& params) {
  SessionPrediction p;
  p.session_id = s.session_id;
  p.label = s.label;
  if (params.mode == Mode::single_task) {
    p.p_hat = single_task_forward(s.x, s.mask, s.meta, params).first;
    p.pred = p.p_hat >= 0.5 ? 1 : 0;
  } else {
    const auto scores = multi_task_forward(s.x, s.mask, s.meta, params).first;
    const TotalPrediction t = predict_total(scores);
    p.codes = t.clamped;
    p.total = t.total;
    p.pred = t.label;
  }
  return p;
}

}  // namespace detail

inline EvalReport cross_validate(const std::vector<Session>& sessions,
                                 const std::map<std::string, EmbeddedSession>& embeddings,
                                 const MetadataVocab& vocab,
                                 const CrossvalConfig& cfg) {
  std::vector<TrainSample> samples = prepare_samples(
      sessions, embeddings, vocab, cfg.train.role_filter,
      cfg.train.metadata_enabled, cfg.train.effective_max_len());
  if (samples.empty()) {
    throw DegenerateInputError("cross_validate: no usable sessions");
  }
  std::sort(samples.begin(), samples.end(),
            [](const TrainSample& a, const TrainSample& b) {
              return a.session_id < b.session_id;
            });

  std::vector<std::string> therapist_of;
  for (const auto& s : samples) therapist_of.push_back(s.therapist_id);
  const FoldAssignment folds =
      grouped_kfold(therapist_of, cfg.k, sub_seed(cfg.train.seed, "folds"));

  std::vector<std::vector<SessionPrediction>> fold_preds(cfg.k);
  std::atomic<std::size_t> next_fold{0};
  auto run_fold = [&]() {
    for (;;) {
      const std::size_t f = next_fold.fetch_add(1);
      if (f >= cfg.k) return;
      std::vector<TrainSample> pool, test;
      std::set<std::size_t> test_idx(folds.folds[f].begin(),
                                     folds.folds[f].end());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        (test_idx.count(i) ? test : pool).push_back(samples[i]);
      }
      std::vector<TrainSample> train_set, val_set;
      detail::carve_validation(
          pool, cfg.val_fraction,
          sub_seed(cfg.train.seed, "valcarve" + std::to_string(f)), train_set,
          val_set);
      TrainResult result = train(train_set, val_set, cfg.train, cfg.arch);
      for (const TrainSample& s : test) {
        SessionPrediction p = detail::predict_sample(s, result.params);
        p.fold = f;
        fold_preds[f].push_back(std::move(p));
      }
    }
  };
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(cfg.threads, cfg.k));
  if (workers == 1) {
    run_fold();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run_fold);
    for (auto& t : threads) t.join();
  }

  EvalReport report;
  report.mode = cfg.train.mode;
  report.metadata_enabled = cfg.train.metadata_enabled;
  report.role = cfg.train.role_filter;
  report.k = cfg.k;
  report.seed = cfg.train.seed;
  for (std::size_t f = 0; f < cfg.k; ++f) {
    std::vector<int> preds, labels;
    for (const auto& p : fold_preds[f]) {
      preds.push_back(p.pred);
      labels.push_back(p.label);
      report.predictions.push_back(p);
    }
    report.per_fold.push_back(macro_f1(preds, labels));
  }
  std::sort(report.predictions.begin(), report.predictions.end(),
            [](const SessionPrediction& a, const SessionPrediction& b) {
              return a.session_id < b.session_id;
            });
  std::vector<int> preds, labels;
  for (const auto& p : report.predictions) {
    preds.push_back(p.pred);
    labels.push_back(p.label);
  }
  report.pooled = macro_f1(preds, labels);
  return report;
}

inline void write_report_json(const std::string& path, const EvalReport& r,
                              const BootstrapResult* bootstrap = nullptr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  auto f1_block = [&](const F1Result& f) {
    std::string s = "{\"macro_f1\":" + format_sig(f.macro_f1, 17);
    s += ",\"confusion\":{\"tp\":" + std::to_string(f.confusion.tp) +
         ",\"fp\":" + std::to_string(f.confusion.fp) +
         ",\"tn\":" + std::to_string(f.confusion.tn) +
         ",\"fn\":" + std::to_string(f.confusion.fn) + "}";
    auto cls = [&](const char* name, const ClassStats& c) {
      s += std::string(",\"") + name + "\":{\"precision\":" +
           format_sig(c.precision, 17) + ",\"recall\":" +
           format_sig(c.recall, 17) + ",\"f1\":" + format_sig(c.f1, 17) +
           ",\"support\":" + std::to_string(c.support) + "}";
    };
    cls("class0", f.class0);
    cls("class1", f.class1);
    s += "}";
    return s;
  };
  out << "{\"mode\":\"" << mode_to_string(r.mode) << "\",\"metadata\":"
      << (r.metadata_enabled ? "true" : "false") << ",\"role\":\""
      << role_to_string(r.role) << "\",\"k\":" << r.k
      << ",\"seed\":" << r.seed << ",\"pooled\":" << f1_block(r.pooled)
      << ",\"per_fold\":[";
  for (std::size_t f = 0; f < r.per_fold.size(); ++f) {
    if (f) out << ',';
    out << f1_block(r.per_fold[f]);
  }
  out << "],\"predictions\":[";
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    const auto& p = r.predictions[i];
    if (i) out << ',';
    out << "{\"session_id\":\"" << p.session_id << "\",\"fold\":" << p.fold
        << ",\"label\":" << p.label << ",\"pred\":" << p.pred;
    if (r.mode == Mode::single_task) {
      out << ",\"p_hat\":" << format_sig(p.p_hat, 17);
    } else {
      out << ",\"total\":" << format_sig(p.total, 17) << ",\"codes\":[";
      for (int c = 0; c < kNumCodes; ++c) {
        if (c) out << ',';
        out << format_sig(p.codes[c], 17);
      }
      out << ']';
    }
    out << '}';
  }
  out << ']';
  if (bootstrap) {
    out << ",\"bootstrap\":{\"delta_observed\":"
        << format_sig(bootstrap->delta_observed, 17)
        << ",\"p_value\":" << format_sig(bootstrap->p_value, 17)
        << ",\"n_resamples\":" << bootstrap->n_resamples << '}';
  }
  out << "}\n";
}

// Minimal view of a written report: what the paired bootstrap needs.
struct ReportPredictions {
  std::vector<std::string> session_ids;  // sorted, as written
  std::vector<int> preds;
  std::vector<int> labels;
  double pooled_macro_f1 = 0.0;
};

inline ReportPredictions load_report_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  ReportPredictions out;
  try {
    out.pooled_macro_f1 = j.at("pooled").at("macro_f1").get<double>();
    for (const auto& p : j.at("predictions")) {
      out.session_ids.push_back(p.at("session_id").get<std::string>());
      out.preds.push_back(p.at("pred").get<int>());
      out.labels.push_back(p.at("label").get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (out.session_ids.empty()) {
    throw ValidationError(path + ": report has no predictions");
  }
  return out;
}

// ---- ablation --------------------------------------------------------------

struct AblationCell {
  bool metadata = false;
  Mode mode = Mode::single_task;
  Role role = Role::therapist_only;
  double macro_f1 = 0.0;
};

struct ToggleSummary {
  std::string name;
  double mean_yes = 0.0;
  double mean_no = 0.0;
  double relative_improvement = 0.0;
};

inline double relative_improvement(double mean_yes, double mean_no) {
  if (mean_no == 0.0) {
    throw DegenerateInputError("relative improvement undefined for zero base");
  }
  return (mean_yes - mean_no) / mean_no;
}

struct AblationReport {
  std::vector<AblationCell> cells;  // exactly 8, fixed enumeration order
  std::vector<ToggleSummary> toggles;
};

inline AblationReport run_ablation(
    const std::vector<Session>& sessions,
    const std::map<std::string, EmbeddedSession>& embeddings,
    const MetadataVocab& vocab, const CrossvalConfig& base) {
  AblationReport report;
  for (bool metadata : {true, false}) {
    for (Mode mode : {Mode::single_task, Mode::multi_task}) {
      for (Role role : {Role::therapist_only, Role::all}) {
        CrossvalConfig cfg = base;
        cfg.train.metadata_enabled = metadata;
        cfg.train.mode = mode;
        cfg.train.role_filter = role;
        const EvalReport r = cross_validate(sessions, embeddings, vocab, cfg);
        report.cells.push_back({metadata, mode, role, r.pooled.macro_f1});
      }
    }
  }
  auto summarize = [&](const std::string& name, auto is_yes) {
    ToggleSummary t;
    t.name = name;
    double yes = 0.0, no = 0.0;
    for (const auto& c : report.cells) {
      (is_yes(c) ? yes : no) += c.macro_f1;
    }
    t.mean_yes = yes / 4.0;
    t.mean_no = no / 4.0;
    t.relative_improvement = relative_improvement(t.mean_yes, t.mean_no);
    return t;
  };
  report.toggles.push_back(summarize(
      "metadata", [](const AblationCell& c) { return c.metadata; }));
  report.toggles.push_back(summarize("multi_task", [](const AblationCell& c) {
    return c.mode == Mode::multi_task;
  }));
  report.toggles.push_back(summarize("all_utterances", [](const AblationCell& c) {
    return c.role == Role::all;
  }));
  return report;
}

inline void write_ablation_json(const std::string& path,
                                const AblationReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "{\"cells\":[";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    if (i) out << ',';
    out << "{\"metadata\":" << (c.metadata ? "true" : "false")
        << ",\"mode\":\"" << mode_to_string(c.mode) << "\",\"role\":\""
        << role_to_string(c.role)
        << "\",\"macro_f1\":" << format_sig(c.macro_f1, 17) << '}';
  }
  out << "],\"toggles\":[";
  for (std::size_t i = 0; i < r.toggles.size(); ++i) {
    const auto& t = r.toggles[i];
    if (i) out << ',';
    out << "{\"name\":\"" << t.name << "\",\"mean_yes\":"
        << format_sig(t.mean_yes, 17)
        << ",\"mean_no\":" << format_sig(t.mean_no, 17)
        << ",\"relative_improvement\":"
        << format_sig(t.relative_improvement, 17) << '}';
  }
  out << "]}\n";
}

}  // namespace sescore
