#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sescore/cli.hpp"

using namespace sescore;

namespace {

namespace fs = std::filesystem;

struct CaptureStreams {
  std::stringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
  CaptureStreams()
      : old_out(std::cout.rdbuf(out.rdbuf())),
        old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~CaptureStreams() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

int run_quiet(const std::vector<std::string>& args, std::string* err = nullptr) {
  CaptureStreams capture;
  const int rc = cli::run(args);
  if (err) *err = capture.err.str();
  return rc;
}

std::string fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sescore_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

// A small dataset every CLI test can share.
const std::string& fixture_dir() {
  static const std::string dir = [] {
    const std::string d = fresh_dir("fixture");
    const int rc = run_quiet({"synth", "--out", d, "--seed", "23",
                              "--sessions", "24", "--therapists", "6",
                              "--dim", "12", "--turns-mean", "10",
                              "--turns-std", "2"});
    REQUIRE(rc == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> with_fixture(std::vector<std::string> args) {
  const std::string& d = fixture_dir();
  args.insert(args.end(), {"--transcripts", d + "/sessions.jsonl",
                           "--embeddings", d + "/embeddings.jsonl", "--vocab",
                           d + "/vocab.json"});
  return args;
}

const std::vector<std::string> kTinyTrainFlags = {
    "--u", "3", "--p", "2", "--q", "3", "--max-epochs", "2", "--patience",
    "2", "--batch-size", "8", "--max-len", "24", "--seed", "31"};

}  // namespace

TEST_CASE("run config defaults match the published hyperparameters") {
  const cli::RunConfig cfg;
  REQUIRE(cfg.lr == 0.001);
  REQUIRE(cfg.max_epochs == 200);
  REQUIRE(cfg.patience == 10);
  REQUIRE(cfg.u == 64);
  REQUIRE(cfg.p == 10);
  REQUIRE(cfg.q == 20);
  REQUIRE(cfg.k == 10);
  REQUIRE(cfg.bootstrap_n == 100000);
  REQUIRE(cfg.seed == 42);
  REQUIRE(cfg.mode == "single_task");
  REQUIRE(cfg.metadata_enabled);
  REQUIRE(cfg.role == "therapist_only");
  REQUIRE_FALSE(cfg.max_len.has_value());
  REQUIRE_FALSE(cfg.batch_size.has_value());

  TrainConfig therapist = cfg.train_config();
  REQUIRE(therapist.effective_max_len() == 256);
  REQUIRE(therapist.effective_batch_size() == 128);

  cli::RunConfig all_cfg;
  all_cfg.role = "all";
  TrainConfig all_turns = all_cfg.train_config();
  REQUIRE(all_turns.effective_max_len() == 512);
  REQUIRE(all_turns.effective_batch_size() == 64);
}

TEST_CASE("synth writes a reproducible dataset") {
  const std::string dir1 = fresh_dir("synth1");
  const std::string dir2 = fresh_dir("synth2");
  const std::vector<std::string> flags = {
      "--seed", "7", "--sessions", "10", "--therapists", "5",
      "--dim", "12", "--turns-mean", "8", "--turns-std", "1"};
  for (const std::string& dir : {dir1, dir2}) {
    std::vector<std::string> args = {"synth", "--out", dir};
    args.insert(args.end(), flags.begin(), flags.end());
    REQUIRE(run_quiet(args) == 0);
  }
  for (const char* name :
       {"sessions.jsonl", "embeddings.jsonl", "vocab.json"}) {
    REQUIRE(read_file(dir1 + "/" + name) == read_file(dir2 + "/" + name));
  }
  REQUIRE(line_count(dir1 + "/sessions.jsonl") == 10);

  const nlohmann::json manifest =
      nlohmann::json::parse(read_file(dir1 + "/manifest_synth.json"));
  REQUIRE(manifest.at("command") == "synth");
  REQUIRE(manifest.at("toolkit_version") == cli::kToolkitVersion);
  REQUIRE(manifest.at("seed") == 7);
  REQUIRE(manifest.at("config").contains("lr"));

  const auto sessions = load_sessions(dir1 + "/sessions.jsonl");
  std::set<std::string> therapists;
  for (const auto& s : sessions) therapists.insert(s.therapist_id);
  REQUIRE(therapists.size() == 5);
}

TEST_CASE("synth honors a spec file with flag overrides") {
  const std::string dir = fresh_dir("synthspec");
  const std::string spec_path = dir + "/spec.json";
  {
    std::ofstream out(spec_path);
    out << R"({"n_sessions": 8, "n_therapists": 4, "d": 12, "seed": 5})";
  }
  REQUIRE(run_quiet({"synth", "--out", dir, "--spec", spec_path,
                     "--therapists", "2"}) == 0);
  const auto sessions = load_sessions(dir + "/sessions.jsonl");
  REQUIRE(sessions.size() == 8);
  std::set<std::string> therapists;
  for (const auto& s : sessions) therapists.insert(s.therapist_id);
  REQUIRE(therapists.size() == 2);

  const std::string dir2 = fresh_dir("synthspec2");
  {
    std::ofstream out(dir2 + "/spec.json");
    out << R"({"n_sessions": 8, "n_therapists": 4, "d": 12, "seed": 5})";
  }
  REQUIRE(run_quiet({"synth", "--out", dir2, "--spec", dir2 + "/spec.json",
                     "--therapists", "2"}) == 0);
  REQUIRE(read_file(dir + "/sessions.jsonl") ==
          read_file(dir2 + "/sessions.jsonl"));
}

TEST_CASE("embed computes hash vectors per merged turn") {
  const std::string dir = fresh_dir("embed");
  REQUIRE(run_quiet({"embed", "--transcripts",
                     fixture_dir() + "/sessions.jsonl", "--provider", "hash",
                     "--dim", "16", "--out", dir}) == 0);
  const auto embs = load_embeddings(dir + "/embeddings.jsonl");
  const auto sessions = load_sessions(fixture_dir() + "/sessions.jsonl");
  REQUIRE(embs.size() == sessions.size());
  for (const auto& s : sessions) {
    const auto it = embs.find(s.session_id);
    REQUIRE(it != embs.end());
    REQUIRE(it->second.matrix.cols() == 16);
    REQUIRE(it->second.matrix.rows() == merge_turns(s.utterances).size());
  }

  const std::string dir2 = fresh_dir("embed2");
  REQUIRE(run_quiet({"embed", "--transcripts",
                     fixture_dir() + "/sessions.jsonl", "--provider", "hash",
                     "--dim", "16", "--out", dir2}) == 0);
  REQUIRE(read_file(dir + "/embeddings.jsonl") ==
          read_file(dir2 + "/embeddings.jsonl"));
}

TEST_CASE("embed file provider validates and re-keys") {
  const std::string dir = fresh_dir("embedfile");
  REQUIRE(run_quiet({"embed", "--transcripts",
                     fixture_dir() + "/sessions.jsonl", "--provider", "file",
                     "--source", fixture_dir() + "/embeddings.jsonl", "--out",
                     dir}) == 0);
  REQUIRE(read_file(dir + "/embeddings.jsonl") ==
          read_file(fixture_dir() + "/embeddings.jsonl"));

  const std::string missing_dir = fresh_dir("embedmissing");
  {
    std::ofstream out(missing_dir + "/partial.jsonl");
    std::ifstream in(fixture_dir() + "/embeddings.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (++n > 3) out << line << "\n";
    }
  }
  std::string err;
  const int rc = run_quiet(
      {"embed", "--transcripts", fixture_dir() + "/sessions.jsonl",
       "--provider", "file", "--source", missing_dir + "/partial.jsonl",
       "--out", missing_dir},
      &err);
  REQUIRE(rc == 1);
  const nlohmann::json j = nlohmann::json::parse(err);
  REQUIRE(j.at("error").at("type") == "ValidationError");
  REQUIRE(j.at("error").at("message").get<std::string>().find("missing") !=
          std::string::npos);
}

TEST_CASE("train writes a loadable model and history") {
  const std::string dir = fresh_dir("train");
  std::vector<std::string> args =
      with_fixture({"train", "--out", dir, "--role", "all"});
  args.insert(args.end(), kTinyTrainFlags.begin(), kTinyTrainFlags.end());
  REQUIRE(run_quiet(args) == 0);

  ModelParams params = load_model(dir + "/model.json");
  REQUIRE(params.mode == Mode::single_task);
  REQUIRE(params.config.u == 3);
  REQUIRE(params.config.max_len == 24);

  const nlohmann::json history =
      nlohmann::json::parse(read_file(dir + "/history.json"));
  REQUIRE(history.at("epochs").size() == 2);
  REQUIRE(nlohmann::json::parse(read_file(dir + "/manifest_train.json"))
              .at("command") == "train");
}

TEST_CASE("config file values sit between defaults and flags") {
  const std::string dir = fresh_dir("precedence");
  const std::string config_path = dir + "/config.json";
  {
    std::ofstream out(config_path);
    out << R"({"u": 5, "q": 4, "mode": "multi", "role": "all",)"
        << R"( "max_epochs": 2, "patience": 2, "batch_size": 8,)"
        << R"( "max_len": 24, "seed": 31})";
  }
  std::vector<std::string> args = with_fixture(
      {"train", "--out", dir, "--config", config_path, "--u", "3", "--p", "2"});
  REQUIRE(run_quiet(args) == 0);

  ModelParams params = load_model(dir + "/model.json");
  REQUIRE(params.mode == Mode::multi_task);  // config, no flag
  REQUIRE(params.config.u == 3);             // flag beats config's 5
  REQUIRE(params.config.q == 4);             // config beats default 20
  REQUIRE(params.config.p == 2);             // flag beats default 10

  std::string err;
  {
    std::ofstream out(config_path);
    out << R"({"nonsense_key": 1})";
  }
  REQUIRE(run_quiet(args, &err) == 1);
  REQUIRE(nlohmann::json::parse(err).at("error").at("type") ==
          "ValidationError");
}

TEST_CASE("crossval emits a reproducible pooled report") {
  const std::string dir1 = fresh_dir("crossval1");
  const std::string dir2 = fresh_dir("crossval2");
  for (const std::string& dir : {dir1, dir2}) {
    std::vector<std::string> args = with_fixture(
        {"crossval", "--out", dir, "--role", "all", "--k", "3"});
    args.insert(args.end(), kTinyTrainFlags.begin(), kTinyTrainFlags.end());
    REQUIRE(run_quiet(args) == 0);
  }
  REQUIRE(read_file(dir1 + "/report.json") == read_file(dir2 + "/report.json"));

  const nlohmann::json report =
      nlohmann::json::parse(read_file(dir1 + "/report.json"));
  REQUIRE(report.at("per_fold").size() == 3);
  REQUIRE(report.at("predictions").size() == 24);
  REQUIRE(report.at("k") == 3);
}

TEST_CASE("evaluate compares two reports with a paired bootstrap") {
  const std::string dir = fresh_dir("evaluate");
  std::vector<std::string> args = with_fixture(
      {"crossval", "--out", dir, "--role", "all", "--k", "3"});
  args.insert(args.end(), kTinyTrainFlags.begin(), kTinyTrainFlags.end());
  REQUIRE(run_quiet(args) == 0);

  REQUIRE(run_quiet({"evaluate", "--report-a", dir + "/report.json",
                     "--report-b", dir + "/report.json", "--bootstrap-n",
                     "999", "--out", dir}) == 0);
  const nlohmann::json cmp =
      nlohmann::json::parse(read_file(dir + "/comparison.json"));
  REQUIRE(cmp.at("delta_observed") == 0.0);
  REQUIRE(cmp.at("p_value") == 1.0);
  REQUIRE(cmp.at("n_resamples") == 999);
}

TEST_CASE("saliency writes one curve per head") {
  const std::string dir = fresh_dir("saliency");
  std::vector<std::string> args = with_fixture(
      {"train", "--out", dir, "--role", "all", "--mode", "multi"});
  args.insert(args.end(), kTinyTrainFlags.begin(), kTinyTrainFlags.end());
  REQUIRE(run_quiet(args) == 0);

  std::vector<std::string> sal = with_fixture(
      {"saliency", "--out", dir, "--role", "all", "--model",
       dir + "/model.json"});
  REQUIRE(run_quiet(sal) == 0);
  REQUIRE(line_count(dir + "/saliency.csv") == kNumCodes + 2);
  std::ifstream in(dir + "/saliency.csv");
  std::string header;
  std::getline(in, header);
  REQUIRE(header.rfind("code,bin_0,", 0) == 0);
}

TEST_CASE("ablate sweeps the toggle grid from the command line") {
  const std::string dir = fresh_dir("ablate");
  std::vector<std::string> args =
      with_fixture({"ablate", "--out", dir, "--k", "3"});
  args.insert(args.end(), kTinyTrainFlags.begin(), kTinyTrainFlags.end());
  REQUIRE(run_quiet(args) == 0);
  const nlohmann::json report =
      nlohmann::json::parse(read_file(dir + "/ablation.json"));
  REQUIRE(report.at("cells").size() == 8);
  REQUIRE(report.at("toggles").size() == 3);
}

TEST_CASE("worker env var caps parallel folds") {
  const std::string dir1 = fresh_dir("threads1");
  const std::string dir2 = fresh_dir("threads2");
  std::vector<std::string> base = with_fixture(
      {"crossval", "--role", "all", "--k", "3", "--parallel-folds", "3"});
  base.insert(base.end(), kTinyTrainFlags.begin(), kTinyTrainFlags.end());

  std::vector<std::string> serial = base;
  serial.insert(serial.end(), {"--out", dir1});
  setenv(cli::kThreadsEnvVar, "1", 1);
  REQUIRE(run_quiet(serial) == 0);
  unsetenv(cli::kThreadsEnvVar);

  std::vector<std::string> parallel = base;
  parallel.insert(parallel.end(), {"--out", dir2});
  REQUIRE(run_quiet(parallel) == 0);
  REQUIRE(read_file(dir1 + "/report.json") == read_file(dir2 + "/report.json"));

  setenv(cli::kThreadsEnvVar, "zero", 1);
  std::string err;
  REQUIRE(run_quiet(parallel, &err) == 1);
  unsetenv(cli::kThreadsEnvVar);
  REQUIRE(nlohmann::json::parse(err).at("error").at("type") ==
          "ValidationError");
}

TEST_CASE("usage errors exit with code two and error json") {
  std::string err;
  REQUIRE(run_quiet({"no_such_command"}, &err) == 2);
  REQUIRE(nlohmann::json::parse(err).at("error").at("type") == "UsageError");
  REQUIRE(run_quiet({}, &err) == 2);
  REQUIRE(run_quiet({"--help"}) == 0);
  REQUIRE(run_quiet({"crossval"}, &err) == 1);  // missing inputs
}
