#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sescore/baseline.hpp"
#include "sescore/common.hpp"
#include "sescore/data.hpp"
#include "sescore/evaluation.hpp"
#include "sescore/model.hpp"
#include "sescore/synthetic.hpp"
#include "sescore/training.hpp"

namespace sescore {
namespace cli {

constexpr const char* kToolkitVersion = "0.1.0";
constexpr const char* kThreadsEnvVar = "SESSION_CODER_THREADS";

// Effective settings for one run. Defaults are the published training
// configuration; a --config JSON file overrides them and flags override both.
struct RunConfig {
  std::string transcripts;
  std::string embeddings;
  std::string vocab;
  std::string out = ".";

  std::string mode = "single_task";
  bool metadata_enabled = true;
  std::string role = "therapist_only";
  std::size_t u = 64;
  std::size_t p = 10;
  std::size_t q = 20;
  std::optional<std::size_t> max_len;     // role default 256/512
  std::optional<std::size_t> batch_size;  // role default 128/64

  double lr = 0.001;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;

  std::size_t k = kDefaultFolds;
  std::size_t bootstrap_n = kDefaultBootstrapN;
  std::uint64_t seed = 42;
  std::size_t parallel_folds = 1;

  double svm_c = 1.0;
  std::size_t svm_epochs = 50;
  std::size_t dim = 768;  // hash embedding width

  Mode mode_enum() const { return mode_from_string(mode); }
  Role role_enum() const { return role_from_string(role); }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.learning_rate = lr;
    tc.max_epochs = max_epochs;
    tc.patience = patience;
    tc.batch_size = batch_size;
    tc.max_len = max_len;
    tc.seed = seed;
    tc.mode = mode_enum();
    tc.metadata_enabled = metadata_enabled;
    tc.role_filter = role_enum();
    return tc;
  }

  ModelConfig arch_config() const {
    ModelConfig mc;
    mc.u = u;
    mc.p = p;
    mc.q = q;
    return mc;
  }

  std::size_t effective_threads() const {
    std::size_t threads = parallel_folds == 0 ? 1 : parallel_folds;
    if (const char* env = std::getenv(kThreadsEnvVar)) {
      char* end = nullptr;
      const unsigned long cap = std::strtoul(env, &end, 10);
      if (end == env || *end != '\0' || cap == 0) {
        throw ValidationError(std::string(kThreadsEnvVar) + " must be a " +
                              "positive integer, got '" + env + "'");
      }
      threads = std::min<std::size_t>(threads, cap);
    }
    return threads;
  }
};

namespace detail {

inline std::string normalize_mode(const std::string& s) {
  if (s == "single" || s == "single_task") return "single_task";
  if (s == "multi" || s == "multi_task") return "multi_task";
  throw ValidationError("unknown mode '" + s + "'");
}

inline bool parse_on_off(const std::string& s) {
  if (s == "on" || s == "true") return true;
  if (s == "off" || s == "false") return false;
  throw ValidationError("expected on|off, got '" + s + "'");
}

inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j,
                              const std::string& path) {
  if (!j.is_object()) throw ValidationError(path + ": config must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "transcripts") {
        cfg.transcripts = value.get<std::string>();
      } else if (key == "embeddings") {
        cfg.embeddings = value.get<std::string>();
      } else if (key == "vocab") {
        cfg.vocab = value.get<std::string>();
      } else if (key == "out") {
        cfg.out = value.get<std::string>();
      } else if (key == "mode") {
        cfg.mode = normalize_mode(value.get<std::string>());
      } else if (key == "metadata") {
        cfg.metadata_enabled = value.is_boolean()
                                   ? value.get<bool>()
                                   : parse_on_off(value.get<std::string>());
      } else if (key == "role") {
        cfg.role = role_to_string(role_from_string(value.get<std::string>()));
      } else if (key == "u") {
        cfg.u = value.get<std::size_t>();
      } else if (key == "p") {
        cfg.p = value.get<std::size_t>();
      } else if (key == "q") {
        cfg.q = value.get<std::size_t>();
      } else if (key == "max_len") {
        cfg.max_len = value.get<std::size_t>();
      } else if (key == "batch_size") {
        cfg.batch_size = value.get<std::size_t>();
      } else if (key == "lr") {
        cfg.lr = value.get<double>();
      } else if (key == "max_epochs") {
        cfg.max_epochs = value.get<std::size_t>();
      } else if (key == "patience") {
        cfg.patience = value.get<std::size_t>();
      } else if (key == "k") {
        cfg.k = value.get<std::size_t>();
      } else if (key == "bootstrap_n") {
        cfg.bootstrap_n = value.get<std::size_t>();
      } else if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "parallel_folds") {
        cfg.parallel_folds = value.get<std::size_t>();
      } else if (key == "svm_c") {
        cfg.svm_c = value.get<double>();
      } else if (key == "svm_epochs") {
        cfg.svm_epochs = value.get<std::size_t>();
      } else if (key == "dim") {
        cfg.dim = value.get<std::size_t>();
      } else {
        throw ValidationError(path + ": unknown config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ": bad value for '" + key + "': " +
                            e.what());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  apply_config_json(cfg, j, path);
}

// The config file is applied before CLI11 sees the flags, so flag values
// land on top of config values.
inline void preload_config(RunConfig& cfg,
                           const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" || args[i] == "-c") {
      if (i + 1 >= args.size()) {
        throw ValidationError("--config requires a path");
      }
      load_config_file(cfg, args[i + 1]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      load_config_file(cfg, args[i].substr(std::string("--config=").size()));
    }
  }
}

inline std::string hash_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(ss.str())));
  return std::string(buf);
}

inline nlohmann::json config_echo(const RunConfig& cfg) {
  nlohmann::json j;
  j["transcripts"] = cfg.transcripts;
  j["embeddings"] = cfg.embeddings;
  j["vocab"] = cfg.vocab;
  j["out"] = cfg.out;
  j["mode"] = cfg.mode;
  j["metadata"] = cfg.metadata_enabled;
  j["role"] = cfg.role;
  j["u"] = cfg.u;
  j["p"] = cfg.p;
  j["q"] = cfg.q;
  if (cfg.max_len) j["max_len"] = *cfg.max_len;
  if (cfg.batch_size) j["batch_size"] = *cfg.batch_size;
  j["lr"] = cfg.lr;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  j["k"] = cfg.k;
  j["bootstrap_n"] = cfg.bootstrap_n;
  j["seed"] = cfg.seed;
  j["parallel_folds"] = cfg.parallel_folds;
  j["svm_c"] = cfg.svm_c;
  j["svm_epochs"] = cfg.svm_epochs;
  j["dim"] = cfg.dim;
  return j;
}

inline void write_manifest(const RunConfig& cfg, const std::string& command,
                           const std::vector<std::string>& input_paths,
                           double wall_seconds) {
  nlohmann::json j;
  j["command"] = command;
  j["toolkit_version"] = kToolkitVersion;
  j["seed"] = cfg.seed;
  j["wall_clock_seconds"] = wall_seconds;
  j["config"] = config_echo(cfg);
  nlohmann::json inputs = nlohmann::json::object();
  for (const std::string& path : input_paths) {
    inputs[path] = hash_file_hex(path);
  }
  j["inputs"] = inputs;
  const std::string path =
      (std::filesystem::path(cfg.out) / ("manifest_" + command + ".json"))
          .string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out) / name).string();
}

inline void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create " + cfg.out + ": " + ec.message());
}

struct Dataset {
  std::vector<Session> sessions;
  std::map<std::string, EmbeddedSession> embeddings;
  MetadataVocab vocab;
};

inline Dataset load_dataset(const RunConfig& cfg, bool need_embeddings) {
  if (cfg.transcripts.empty()) {
    throw ValidationError("missing --transcripts (or config 'transcripts')");
  }
  Dataset ds;
  ds.sessions = load_sessions(cfg.transcripts);
  if (need_embeddings) {
    if (cfg.embeddings.empty()) {
      throw ValidationError("missing --embeddings (or config 'embeddings')");
    }
    ds.embeddings = load_embeddings(cfg.embeddings);
    if (cfg.vocab.empty()) {
      throw ValidationError("missing --vocab (or config 'vocab')");
    }
    ds.vocab = load_vocab_json(cfg.vocab);
  }
  return ds;
}

// Applies the keys present in the file onto `spec`, leaving the rest as-is.
inline SyntheticSpec load_synth_spec(const std::string& path,
                                     SyntheticSpec spec) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_sessions") {
        spec.n_sessions = value.get<std::size_t>();
      } else if (key == "n_therapists") {
        spec.n_therapists = value.get<std::size_t>();
      } else if (key == "d") {
        spec.d = value.get<std::size_t>();
      } else if (key == "turns_mean") {
        spec.turns_mean = value.get<double>();
      } else if (key == "turns_std") {
        spec.turns_std = value.get<double>();
      } else if (key == "signal_scale") {
        spec.signal_scale = value.get<double>();
      } else if (key == "noise_scale") {
        spec.noise_scale = value.get<double>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else if (key == "regions") {
        if (!value.is_array() || value.size() != kNumCodes) {
          throw ValidationError(path + ": regions must list " +
                                std::to_string(kNumCodes) + " entries");
        }
        for (int i = 0; i < kNumCodes; ++i) {
          spec.regions[i].clear();
          for (const auto& pair : value[i]) {
            spec.regions[i].push_back(
                {pair.at(0).get<double>(), pair.at(1).get<double>()});
          }
        }
      } else if (key == "directions") {
        for (const auto& row : value) {
          spec.directions.push_back(row.get<std::vector<double>>());
        }
      } else {
        throw ValidationError(path + ": unknown spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return spec;
}

// ---- command bodies -----------------------------------------------------

inline void cmd_synth(RunConfig& cfg, const std::string& spec_path,
                      SyntheticSpec spec) {
  ensure_out_dir(cfg);
  const SyntheticData data = generate_synthetic(spec);
  write_sessions_jsonl(out_path(cfg, "sessions.jsonl"), data.sessions);
  write_embeddings_jsonl(out_path(cfg, "embeddings.jsonl"), data.embeddings);
  write_vocab_json(out_path(cfg, "vocab.json"), data.vocab);
  std::cout << "wrote " << data.sessions.size() << " sessions to " << cfg.out
            << "\n";
  if (!spec_path.empty()) {
    std::cout << "spec: " << spec_path << "\n";
  }
}

inline void cmd_embed(RunConfig& cfg, const std::string& provider,
                      const std::string& source) {
  ensure_out_dir(cfg);
  const std::vector<Session> sessions = load_sessions(cfg.transcripts);
  if (sessions.empty()) {
    throw DegenerateInputError(cfg.transcripts + ": no sessions");
  }
  std::vector<EmbeddedSession> rows;
  if (provider == "hash") {
    for (const Session& s : sessions) {
      const std::vector<Utterance> merged = merge_turns(s.utterances);
      EmbeddedSession es;
      es.session_id = s.session_id;
      es.matrix = Tensor({merged.size(), cfg.dim});
      for (std::size_t r = 0; r < merged.size(); ++r) {
        const std::vector<double> v = hash_embed(merged[r], cfg.dim);
        for (std::size_t c = 0; c < cfg.dim; ++c) es.matrix.at(r, c) = v[c];
      }
      rows.push_back(std::move(es));
    }
  } else if (provider == "file") {
    if (source.empty()) {
      throw ValidationError("provider=file requires --source");
    }
    const auto external = load_embeddings(source);
    std::vector<std::string> missing;
    for (const Session& s : sessions) {
      const auto it = external.find(s.session_id);
      if (it == external.end()) {
        missing.push_back(s.session_id);
        continue;
      }
      const std::size_t merged_rows = merge_turns(s.utterances).size();
      if (it->second.matrix.rows() != merged_rows) {
        throw ValidationError("session '" + s.session_id + "' has " +
                              std::to_string(merged_rows) +
                              " merged turns but " +
                              std::to_string(it->second.matrix.rows()) +
                              " embedding rows");
      }
      rows.push_back(it->second);
    }
    if (!missing.empty()) {
      std::string ids;
      for (const auto& id : missing) {
        if (!ids.empty()) ids += ", ";
        ids += id;
      }
      throw ValidationError(source + ": missing sessions: " + ids);
    }
  } else {
    throw ValidationError("unknown provider '" + provider + "'");
  }
  write_embeddings_jsonl(out_path(cfg, "embeddings.jsonl"), rows);
  std::cout << "wrote embeddings for " << rows.size() << " sessions to "
            << cfg.out << "\n";
}

inline void cmd_train(RunConfig& cfg) {
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset(cfg, true);
  const TrainConfig tc = cfg.train_config();
  const std::vector<TrainSample> samples =
      prepare_samples(ds.sessions, ds.embeddings, ds.vocab, tc.role_filter,
                      tc.metadata_enabled, tc.effective_max_len());
  std::vector<TrainSample> train_set, val_set;
  sescore::detail::carve_validation(samples, 0.1,
                                    sub_seed(cfg.seed, "valcarve"), train_set,
                                    val_set);
  TrainResult result = train(train_set, val_set, tc, cfg.arch_config());
  save_model(result.params, out_path(cfg, "model.json"));
  write_history_json(out_path(cfg, "history.json"), result.history);
  const double best_val =
      result.history.best_epoch > 0
          ? result.history.val_loss[result.history.best_epoch - 1]
          : 0.0;
  std::cout << "best epoch " << result.history.best_epoch << ", val loss "
            << format_sig(best_val, 9) << "\n"
            << "wrote model.json and history.json to " << cfg.out << "\n";
}

inline void cmd_crossval(RunConfig& cfg) {
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset(cfg, true);
  CrossvalConfig cv;
  cv.train = cfg.train_config();
  cv.arch = cfg.arch_config();
  cv.k = cfg.k;
  cv.threads = cfg.effective_threads();
  const EvalReport report =
      cross_validate(ds.sessions, ds.embeddings, ds.vocab, cv);
  write_report_json(out_path(cfg, "report.json"), report);
  std::cout << "pooled macro-F1 " << format_sig(report.pooled.macro_f1, 9)
            << " over " << report.predictions.size() << " sessions\n"
            << "wrote report.json to " << cfg.out << "\n";
}

inline void cmd_baseline(RunConfig& cfg) {
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset(cfg, false);
  BaselineConfig bc;
  bc.role_filter = cfg.role_enum();
  bc.k = cfg.k;
  bc.c = cfg.svm_c;
  bc.epochs = cfg.svm_epochs;
  bc.seed = cfg.seed;
  const EvalReport report = baseline_crossval(ds.sessions, bc);
  write_report_json(out_path(cfg, "baseline_report.json"), report);

  std::vector<Document> docs;
  std::vector<int> labels;
  for (const Session& s : ds.sessions) {
    Document doc = session_document(s, bc.role_filter);
    if (doc.empty()) continue;
    docs.push_back(std::move(doc));
    labels.push_back(binarize_total(s.labels.total));
  }
  const BaselinePipeline pipe = baseline_fit(
      docs, labels, bc.c, bc.epochs, sub_seed(cfg.seed, "svmfull"));
  save_baseline(out_path(cfg, "baseline_model.json"), pipe);
  std::cout << "pooled macro-F1 " << format_sig(report.pooled.macro_f1, 9)
            << " over " << report.predictions.size() << " sessions\n"
            << "wrote baseline_report.json and baseline_model.json to "
            << cfg.out << "\n";
}

inline void cmd_ablate(RunConfig& cfg) {
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset(cfg, true);
  CrossvalConfig base;
  base.train = cfg.train_config();
  base.arch = cfg.arch_config();
  base.k = cfg.k;
  base.threads = cfg.effective_threads();
  const AblationReport report =
      run_ablation(ds.sessions, ds.embeddings, ds.vocab, base);
  write_ablation_json(out_path(cfg, "ablation.json"), report);
  for (const auto& t : report.toggles) {
    std::cout << t.name << ": "
              << format_sig(100.0 * t.relative_improvement, 4)
              << "% relative improvement\n";
  }
  std::cout << "wrote ablation.json to " << cfg.out << "\n";
}

inline void cmd_saliency(RunConfig& cfg, const std::string& model_path) {
  ensure_out_dir(cfg);
  if (model_path.empty()) throw ValidationError("missing --model");
  ModelParams params = load_model(model_path);
  const Dataset ds = load_dataset(cfg, true);
  const std::vector<TrainSample> samples = prepare_samples(
      ds.sessions, ds.embeddings, ds.vocab, cfg.role_enum(),
      params.config.m > 0, params.config.max_len);
  const std::vector<SaliencyCurve> curves = aggregate_saliency(params, samples);
  write_saliency_csv(out_path(cfg, "saliency.csv"), curves);
  std::cout << "wrote " << curves.size() << " saliency curves over "
            << samples.size() << " sessions to " << cfg.out << "\n";
}

inline void cmd_evaluate(RunConfig& cfg, const std::string& report_a,
                         const std::string& report_b) {
  ensure_out_dir(cfg);
  if (report_a.empty() || report_b.empty()) {
    throw ValidationError("evaluate requires --report-a and --report-b");
  }
  const ReportPredictions a = load_report_predictions(report_a);
  const ReportPredictions b = load_report_predictions(report_b);
  if (a.session_ids != b.session_ids) {
    throw ProtocolError("reports cover different session sets");
  }
  if (a.labels != b.labels) {
    throw ProtocolError("reports disagree on session labels");
  }
  const BootstrapResult bs =
      paired_bootstrap(a.preds, b.preds, a.labels, cfg.bootstrap_n, cfg.seed);
  nlohmann::json j;
  j["report_a"] = report_a;
  j["report_b"] = report_b;
  j["macro_f1_a"] = a.pooled_macro_f1;
  j["macro_f1_b"] = b.pooled_macro_f1;
  j["delta_observed"] = bs.delta_observed;
  j["p_value"] = bs.p_value;
  j["n_resamples"] = bs.n_resamples;
  const std::string path = out_path(cfg, "comparison.json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  std::cout << "delta " << format_sig(bs.delta_observed, 9) << ", p = "
            << format_sig(bs.p_value, 9) << "\n"
            << "wrote comparison.json to " << cfg.out << "\n";
}

}  // namespace detail

// Entry point shared by the binary and the tests. Args exclude the program
// name. Returns the process exit code.
inline int run(const std::vector<std::string>& args) {
  RunConfig cfg;
  std::string provider = "hash";
  std::string source;
  std::string spec_path;
  std::string model_path;
  std::string report_a, report_b;
  std::string config_path;
  SyntheticSpec synth_spec;

  CLI::App app{"session-level therapy quality scoring toolkit"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config_path, "flat JSON config file");
    sub->add_option("--seed", cfg.seed, "root random seed");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--role", cfg.role, "utterance filter")
        ->check(CLI::IsMember({"therapist_only", "all"}));
    sub->add_option_function<std::string>(
           "--mode",
           [&](const std::string& s) { cfg.mode = detail::normalize_mode(s); },
           "network head layout")
        ->check(CLI::IsMember({"single", "multi", "single_task", "multi_task"}));
    sub->add_option_function<std::string>(
           "--metadata",
           [&](const std::string& s) {
             cfg.metadata_enabled = detail::parse_on_off(s);
           },
           "metadata fusion")
        ->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--parallel-folds", cfg.parallel_folds,
                    "fold-level worker count");
  };
  auto add_data = [&](CLI::App* sub, bool with_embeddings) {
    sub->add_option("--transcripts", cfg.transcripts, "session JSONL file");
    if (with_embeddings) {
      sub->add_option("--embeddings", cfg.embeddings, "embedding JSONL file");
      sub->add_option("--vocab", cfg.vocab, "metadata vocabulary JSON");
    }
  };
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--lr", cfg.lr, "learning rate");
    sub->add_option("--max-epochs", cfg.max_epochs, "epoch cap");
    sub->add_option("--patience", cfg.patience, "early stopping patience");
    sub->add_option("--batch-size", cfg.batch_size, "minibatch size");
    sub->add_option("--max-len", cfg.max_len, "turn truncation length");
    sub->add_option("--u", cfg.u, "GRU units per direction");
    sub->add_option("--p", cfg.p, "attention projection width");
    sub->add_option("--q", cfg.q, "MLP hidden width");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--spec", spec_path, "synthetic spec JSON");
  synth->add_option("--sessions", synth_spec.n_sessions, "session count");
  synth->add_option("--therapists", synth_spec.n_therapists, "therapist count");
  synth->add_option("--dim", synth_spec.d, "embedding width");
  synth->add_option("--turns-mean", synth_spec.turns_mean, "mean turn count");
  synth->add_option("--turns-std", synth_spec.turns_std, "turn count spread");
  synth->add_option("--signal-scale", synth_spec.signal_scale,
                    "marker amplitude");
  synth->add_option("--noise-scale", synth_spec.noise_scale,
                    "embedding noise amplitude");

  CLI::App* embed = app.add_subcommand("embed", "embed merged talk turns");
  add_common(embed);
  add_data(embed, false);
  embed->add_option("--provider", provider, "hash or file")
      ->check(CLI::IsMember({"hash", "file"}));
  embed->add_option("--dim", cfg.dim, "hash embedding width");
  embed->add_option("--source", source, "external embedding JSONL (file provider)");

  CLI::App* train_cmd = app.add_subcommand("train", "train one model");
  add_common(train_cmd);
  add_data(train_cmd, true);
  add_train_flags(train_cmd);

  CLI::App* crossval = app.add_subcommand(
      "crossval", "grouped k-fold cross-validation of the network");
  add_common(crossval);
  add_data(crossval, true);
  add_train_flags(crossval);
  crossval->add_option("--k", cfg.k, "fold count");

  CLI::App* baseline_cmd = app.add_subcommand(
      "baseline", "tf-idf + F-test + linear SVM reference system");
  add_common(baseline_cmd);
  add_data(baseline_cmd, false);
  baseline_cmd->add_option("--k", cfg.k, "fold count");
  baseline_cmd->add_option("--svm-c", cfg.svm_c, "hinge penalty");
  baseline_cmd->add_option("--svm-epochs", cfg.svm_epochs, "SVM epochs");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "2x2x2 toggle grid over metadata, heads, and roles");
  add_common(ablate);
  add_data(ablate, true);
  add_train_flags(ablate);
  ablate->add_option("--k", cfg.k, "fold count");

  CLI::App* saliency = app.add_subcommand(
      "saliency", "aggregate attention curves for a trained model");
  add_common(saliency);
  add_data(saliency, true);
  saliency->add_option("--model", model_path, "model JSON file");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "paired bootstrap comparison of two reports");
  add_common(evaluate);
  evaluate->add_option("--report-a", report_a, "first report JSON");
  evaluate->add_option("--report-b", report_b, "second report JSON");
  evaluate->add_option("--bootstrap-n", cfg.bootstrap_n, "resample count");

  const auto emit_error = [](const std::string& type,
                             const std::string& message) {
    nlohmann::json j;
    j["error"] = {{"type", type}, {"message", message}};
    std::cerr << j.dump() << "\n";
    std::cout << "error: " << message << "\n";
  };

  try {
    detail::preload_config(cfg, args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    const auto started = std::chrono::steady_clock::now();
    std::string command;
    std::vector<std::string> inputs;
    if (!config_path.empty()) inputs.push_back(config_path);

    if (synth->parsed()) {
      command = "synth";
      SyntheticSpec base;
      base.seed = cfg.seed;
      SyntheticSpec merged =
          spec_path.empty() ? base : detail::load_synth_spec(spec_path, base);
      if (!spec_path.empty()) inputs.push_back(spec_path);
      if (synth->count("--sessions")) merged.n_sessions = synth_spec.n_sessions;
      if (synth->count("--therapists")) {
        merged.n_therapists = synth_spec.n_therapists;
      }
      if (synth->count("--dim")) merged.d = synth_spec.d;
      if (synth->count("--turns-mean")) merged.turns_mean = synth_spec.turns_mean;
      if (synth->count("--turns-std")) merged.turns_std = synth_spec.turns_std;
      if (synth->count("--signal-scale")) {
        merged.signal_scale = synth_spec.signal_scale;
      }
      if (synth->count("--noise-scale")) {
        merged.noise_scale = synth_spec.noise_scale;
      }
      if (synth->count("--seed")) merged.seed = cfg.seed;
      detail::cmd_synth(cfg, spec_path, merged);
    } else if (embed->parsed()) {
      command = "embed";
      inputs.push_back(cfg.transcripts);
      if (!source.empty()) inputs.push_back(source);
      detail::cmd_embed(cfg, provider, source);
    } else if (train_cmd->parsed()) {
      command = "train";
      inputs.insert(inputs.end(),
                    {cfg.transcripts, cfg.embeddings, cfg.vocab});
      detail::cmd_train(cfg);
    } else if (crossval->parsed()) {
      command = "crossval";
      inputs.insert(inputs.end(),
                    {cfg.transcripts, cfg.embeddings, cfg.vocab});
      detail::cmd_crossval(cfg);
    } else if (baseline_cmd->parsed()) {
      command = "baseline";
      inputs.push_back(cfg.transcripts);
      detail::cmd_baseline(cfg);
    } else if (ablate->parsed()) {
      command = "ablate";
      inputs.insert(inputs.end(),
                    {cfg.transcripts, cfg.embeddings, cfg.vocab});
      detail::cmd_ablate(cfg);
    } else if (saliency->parsed()) {
      command = "saliency";
      inputs.insert(inputs.end(),
                    {cfg.transcripts, cfg.embeddings, cfg.vocab, model_path});
      detail::cmd_saliency(cfg, model_path);
    } else if (evaluate->parsed()) {
      command = "evaluate";
      inputs.insert(inputs.end(), {report_a, report_b});
      detail::cmd_evaluate(cfg, report_a, report_b);
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();
    detail::write_manifest(cfg, command, inputs, wall);
    return 0;
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error("UsageError", e.what());
    return 2;
  } catch (const ShapeError& e) {
    emit_error("ShapeError", e.what());
  } catch (const ContractError& e) {
    emit_error("ContractError", e.what());
  } catch (const DegenerateInputError& e) {
    emit_error("DegenerateInputError", e.what());
  } catch (const ParseError& e) {
    emit_error("ParseError", e.what());
  } catch (const ValidationError& e) {
    emit_error("ValidationError", e.what());
  } catch (const ProtocolError& e) {
    emit_error("ProtocolError", e.what());
  } catch (const IoError& e) {
    emit_error("IoError", e.what());
  } catch (const std::exception& e) {
    emit_error("InternalError", e.what());
  }
  return 1;
}

}  // namespace cli
}  // namespace sescore
