#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sescore/common.hpp"
#include "sescore/data.hpp"
#include "sescore/evaluation.hpp"

namespace sescore {

constexpr std::size_t kBaselineTopFeatures = 32;

// ---- tf-idf ----------------------------------------------------------------

struct TfidfVocab {
  std::vector<std::string> terms;  // sorted unique
  std::vector<std::size_t> df;     // document frequency per term
  std::size_t n_docs = 0;

  double idf(std::size_t i) const {
    return std::log((1.0 + static_cast<double>(n_docs)) /
                    (1.0 + static_cast<double>(df[i]))) +
           1.0;
  }
};

using Document = std::vector<std::string>;

// One document per session: all tokens of the retained turns, in order.
inline Document session_document(const Session& s, Role role) {
  Document doc;
  for (const Utterance& u : s.utterances) {
    if (role == Role::therapist_only && u.speaker_role != "therapist") {
      continue;
    }
    doc.insert(doc.end(), u.tokens.begin(), u.tokens.end());
  }
  return doc;
}

inline TfidfVocab fit_tfidf(const std::vector<Document>& docs) {
  if (docs.empty()) throw DegenerateInputError("fit_tfidf: empty corpus");
  std::map<std::string, std::size_t> df;
  for (const Document& doc : docs) {
    std::set<std::string> uniq(doc.begin(), doc.end());
    for (const std::string& term : uniq) df[term] += 1;
  }
  TfidfVocab vocab;
  vocab.n_docs = docs.size();
  for (const auto& [term, count] : df) {
    vocab.terms.push_back(term);
    vocab.df.push_back(count);
  }
  return vocab;
}

// Raw-count tf times smooth idf ln((1+N)/(1+df))+1, L2-normalized.
// Unseen tokens are ignored; an empty or fully-unseen document maps to zero.
inline std::vector<double> tfidf_transform(const Document& doc,
                                           const TfidfVocab& vocab) {
  std::vector<double> out(vocab.terms.size(), 0.0);
  for (const std::string& tok : doc) {
    const auto it =
        std::lower_bound(vocab.terms.begin(), vocab.terms.end(), tok);
    if (it != vocab.terms.end() && *it == tok) {
      out[static_cast<std::size_t>(it - vocab.terms.begin())] += 1.0;
    }
  }
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= vocab.idf(i);
    norm_sq += out[i] * out[i];
  }
  if (norm_sq > 0.0) {
    const double norm = std::sqrt(norm_sq);
    for (double& v : out) v /= norm;
  }
  return out;
}

// ---- univariate F-test selection --------------------------------------

struct FeatureSelection {
  std::vector<std::size_t> indices;  // descending F, ties by lower index
  std::vector<double> f_stats;       // aligned with indices
};

// One-way ANOVA F per feature. Zero within-class variance with positive
// between-class variance ranks as +inf; a constant feature scores 0.
inline FeatureSelection f_test_select(const std::vector<std::vector<double>>& x,
                                      const std::vector<int>& y,
                                      std::size_t k = kBaselineTopFeatures) {
  if (x.size() != y.size() || x.empty()) {
    throw ShapeError("f_test_select: " + std::to_string(x.size()) +
                     " rows vs " + std::to_string(y.size()) + " labels");
  }
  double n1 = 0.0;
  for (int label : y) n1 += label;
  const double n = static_cast<double>(x.size());
  const double n0 = n - n1;
  if (n0 == 0.0 || n1 == 0.0) {
    throw DegenerateInputError("f_test_select: only one class present");
  }
  const std::size_t n_features = x[0].size();
  std::vector<double> f(n_features, 0.0);
  for (std::size_t j = 0; j < n_features; ++j) {
    double sum0 = 0.0, sum1 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      (y[i] == 1 ? sum1 : sum0) += x[i][j];
    }
    const double mu0 = sum0 / n0;
    const double mu1 = sum1 / n1;
    const double mu = (sum0 + sum1) / n;
    const double ssb =
        n0 * (mu0 - mu) * (mu0 - mu) + n1 * (mu1 - mu) * (mu1 - mu);
    double ssw = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i][j] - (y[i] == 1 ? mu1 : mu0);
      ssw += d * d;
    }
    if (ssw == 0.0) {
      f[j] = ssb > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    } else {
      f[j] = ssb / (ssw / (n - 2.0));
    }
  }
  std::vector<std::size_t> order(n_features);
  for (std::size_t j = 0; j < n_features; ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (f[a] != f[b]) return f[a] > f[b];
    return a < b;
  });
  FeatureSelection sel;
  const std::size_t keep = std::min(k, n_features);
  for (std::size_t j = 0; j < keep; ++j) {
    sel.indices.push_back(order[j]);
    sel.f_stats.push_back(f[order[j]]);
  }
  return sel;
}

inline std::vector<double> select_columns(const std::vector<double>& row,
                                          const FeatureSelection& sel) {
  std::vector<double> out;
  out.reserve(sel.indices.size());
  for (std::size_t j : sel.indices) out.push_back(row[j]);
  return out;
}

// ---- linear SVM -------------------------------------------------------

struct LinearSvmModel {
  std::vector<double> w;
  double b = 0.0;
  double c = 1.0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
};

inline double svm_decision(const LinearSvmModel& model,
                           const std::vector<double>& x) {
  if (x.size() != model.w.size()) {
    throw ShapeError("svm_decision: " + std::to_string(x.size()) +
                     " features vs weight length " +
                     std::to_string(model.w.size()));
  }
  double s = model.b;
  for (std::size_t j = 0; j < x.size(); ++j) s += model.w[j] * x[j];
  return s;
}

// Scaled objective lambda/2 ||w||^2 + (1/n) sum c_i hinge_i with
// lambda = 1/(C n); same minimizer as the C-weighted primal.
inline double svm_objective(const LinearSvmModel& model,
                            const std::vector<std::vector<double>>& x,
                            const std::vector<int>& y_pm,
                            const std::vector<double>& weights) {
  const double n = static_cast<double>(x.size());
  const double lambda = 1.0 / (model.c * n);
  double norm_sq = 0.0;
  for (double w : model.w) norm_sq += w * w;
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double margin =
        static_cast<double>(y_pm[i]) * svm_decision(model, x[i]);
    hinge += weights[i] * std::max(0.0, 1.0 - margin);
  }
  return 0.5 * lambda * norm_sq + hinge / n;
}

// Seeded subgradient descent with step 1/(lambda t) and a class-weighted
// hinge; the bias stays unregularized.
inline LinearSvmModel svm_train(const std::vector<std::vector<double>>& x,
                                const std::vector<int>& y_pm, double c,
                                std::size_t epochs, std::uint64_t seed) {
  if (x.size() != y_pm.size() || x.empty()) {
    throw ShapeError("svm_train: " + std::to_string(x.size()) + " rows vs " +
                     std::to_string(y_pm.size()) + " labels");
  }
  std::vector<int> y01;
  for (int y : y_pm) {
    if (y != 1 && y != -1) {
      throw ValidationError("svm_train: labels must be +1 or -1");
    }
    y01.push_back(y == 1 ? 1 : 0);
  }
  const auto [w0, w1] = class_weights(y01);
  std::vector<double> weights;
  for (int y : y01) weights.push_back(y == 1 ? w1 : w0);

  const std::size_t n = x.size();
  const double lambda = 1.0 / (c * static_cast<double>(n));
  LinearSvmModel model;
  model.w.assign(x[0].size(), 0.0);
  model.c = c;
  model.epochs = epochs;
  model.seed = seed;

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t t = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double margin =
          static_cast<double>(y_pm[i]) * svm_decision(model, x[i]);
      const double shrink = 1.0 - eta * lambda;
      for (double& w : model.w) w *= shrink;
      if (margin < 1.0) {
        const double step = eta * weights[i] * static_cast<double>(y_pm[i]);
        for (std::size_t j = 0; j < model.w.size(); ++j) {
          model.w[j] += step * x[i][j];
        }
        model.b += step;
      }
    }
  }
  return model;
}

// ---- fitted pipeline ---------------------------------------------------

struct BaselinePipeline {
  TfidfVocab vocab;
  FeatureSelection selection;
  LinearSvmModel svm;
};

inline BaselinePipeline baseline_fit(const std::vector<Document>& docs,
                                     const std::vector<int>& labels, double c,
                                     std::size_t epochs, std::uint64_t seed) {
  BaselinePipeline pipe;
  pipe.vocab = fit_tfidf(docs);
  std::vector<std::vector<double>> x;
  for (const Document& doc : docs) {
    x.push_back(tfidf_transform(doc, pipe.vocab));
  }
  pipe.selection = f_test_select(x, labels);
  std::vector<std::vector<double>> x_sel;
  for (const auto& row : x) x_sel.push_back(select_columns(row, pipe.selection));
  std::vector<int> y_pm;
  for (int y : labels) y_pm.push_back(y == 1 ? 1 : -1);
  pipe.svm = svm_train(x_sel, y_pm, c, epochs, seed);
  return pipe;
}

inline double baseline_decision(const BaselinePipeline& pipe,
                                const Document& doc) {
  const std::vector<double> x = tfidf_transform(doc, pipe.vocab);
  return svm_decision(pipe.svm, select_columns(x, pipe.selection));
}

// ---- grouped cross-validation -----------------------------------------

struct BaselineConfig {
  Role role_filter = Role::therapist_only;
  std::size_t k = kDefaultFolds;
  double c = 1.0;
  std::size_t epochs = 50;
  std::uint64_t seed = 42;
};

// Same grouped fold protocol as the neural pipeline: sessions sorted by id,
// sessions with no retained turns skipped, folds drawn from
// sub_seed(seed, "folds"). Reports the SVM decision value in p_hat.
inline EvalReport baseline_crossval(const std::vector<Session>& sessions,
                                    const BaselineConfig& cfg) {
  struct Entry {
    std::string session_id;
    std::string therapist_id;
    Document doc;
    int label;
  };
  std::vector<Entry> entries;
  for (const Session& s : sessions) {
    const std::vector<Utterance> merged = merge_turns(s.utterances);
    bool retained = false;
    for (const Utterance& u : merged) {
      if (cfg.role_filter == Role::all || u.speaker_role == "therapist") {
        retained = true;
        break;
      }
    }
    if (!retained) continue;
    entries.push_back({s.session_id, s.therapist_id,
                       session_document(s, cfg.role_filter),
                       binarize_total(s.labels.total)});
  }
  if (entries.empty()) {
    throw DegenerateInputError("baseline_crossval: no usable sessions");
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) {
              return a.session_id < b.session_id;
            });
  std::vector<std::string> therapist_of;
  for (const auto& e : entries) therapist_of.push_back(e.therapist_id);
  const FoldAssignment folds =
      grouped_kfold(therapist_of, cfg.k, sub_seed(cfg.seed, "folds"));

  EvalReport report;
  report.mode = Mode::single_task;
  report.metadata_enabled = false;
  report.role = cfg.role_filter;
  report.k = cfg.k;
  report.seed = cfg.seed;
  for (std::size_t f = 0; f < cfg.k; ++f) {
    std::set<std::size_t> test_idx(folds.folds[f].begin(),
                                   folds.folds[f].end());
    std::vector<Document> train_docs;
    std::vector<int> train_labels;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!test_idx.count(i)) {
        train_docs.push_back(entries[i].doc);
        train_labels.push_back(entries[i].label);
      }
    }
    const BaselinePipeline pipe =
        baseline_fit(train_docs, train_labels, cfg.c, cfg.epochs,
                     sub_seed(cfg.seed, "svm" + std::to_string(f)));
    std::vector<int> preds, labels;
    for (std::size_t i : folds.folds[f]) {
      SessionPrediction p;
      p.session_id = entries[i].session_id;
      p.fold = f;
      p.label = entries[i].label;
      p.p_hat = baseline_decision(pipe, entries[i].doc);
      p.pred = p.p_hat >= 0.0 ? 1 : 0;
      preds.push_back(p.pred);
      labels.push_back(p.label);
      report.predictions.push_back(std::move(p));
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

// ---- model file ---------------------------------------------------------

inline void save_baseline(const std::string& path,
                          const BaselinePipeline& pipe) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "{\"vocab\":[";
  for (std::size_t i = 0; i < pipe.vocab.terms.size(); ++i) {
    if (i) out << ',';
    out << nlohmann::json(pipe.vocab.terms[i]).dump();
  }
  out << "],\"df\":[";
  for (std::size_t i = 0; i < pipe.vocab.df.size(); ++i) {
    if (i) out << ',';
    out << pipe.vocab.df[i];
  }
  out << "],\"n_docs\":" << pipe.vocab.n_docs << ",\"idf\":[";
  for (std::size_t i = 0; i < pipe.vocab.terms.size(); ++i) {
    if (i) out << ',';
    out << format_sig(pipe.vocab.idf(i), 17);
  }
  out << "],\"selected\":[";
  for (std::size_t i = 0; i < pipe.selection.indices.size(); ++i) {
    if (i) out << ',';
    out << pipe.selection.indices[i];
  }
  out << "],\"f_stats\":[";
  for (std::size_t i = 0; i < pipe.selection.f_stats.size(); ++i) {
    if (i) out << ',';
    const double f = pipe.selection.f_stats[i];
    if (std::isinf(f)) {
      out << "\"inf\"";
    } else {
      out << format_sig(f, 17);
    }
  }
  out << "],\"w\":[";
  for (std::size_t i = 0; i < pipe.svm.w.size(); ++i) {
    if (i) out << ',';
    out << format_sig(pipe.svm.w[i], 17);
  }
  out << "],\"b\":" << format_sig(pipe.svm.b, 17)
      << ",\"c\":" << format_sig(pipe.svm.c, 17)
      << ",\"epochs\":" << pipe.svm.epochs << ",\"seed\":" << pipe.svm.seed
      << "}\n";
}

inline BaselinePipeline load_baseline(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  BaselinePipeline pipe;
  try {
    pipe.vocab.terms = j.at("vocab").get<std::vector<std::string>>();
    pipe.vocab.df = j.at("df").get<std::vector<std::size_t>>();
    pipe.vocab.n_docs = j.at("n_docs").get<std::size_t>();
    pipe.selection.indices =
        j.at("selected").get<std::vector<std::size_t>>();
    for (const auto& f : j.at("f_stats")) {
      if (f.is_string()) {
        pipe.selection.f_stats.push_back(
            std::numeric_limits<double>::infinity());
      } else {
        pipe.selection.f_stats.push_back(f.get<double>());
      }
    }
    pipe.svm.w = j.at("w").get<std::vector<double>>();
    pipe.svm.b = j.at("b").get<double>();
    pipe.svm.c = j.at("c").get<double>();
    pipe.svm.epochs = j.at("epochs").get<std::size_t>();
    pipe.svm.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (pipe.vocab.terms.size() != pipe.vocab.df.size() ||
      pipe.selection.indices.size() != pipe.svm.w.size()) {
    throw ValidationError(path + ": inconsistent baseline model");
  }
  return pipe;
}

}  // namespace sescore
