#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sescore/common.hpp"
#include "sescore/tensor.hpp"

namespace sescore {

// The 11 observer-rated quality codes, in canonical order. Every per-code
// container in the toolkit is indexed by this order.
inline const std::array<std::string, 11>& code_names() {
  static const std::array<std::string, 11> names = {
      "ag", "fb", "un", "ip", "co", "pt", "gd", "cb", "sc", "at", "hw"};
  return names;
}

constexpr int kNumCodes = 11;
constexpr int kCodeMax = 6;
constexpr int kCompetenceThreshold = 40;

struct Utterance {
  std::string speaker_role;  // "therapist" or "patient"
  std::vector<std::string> tokens;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct CtrsLabels {
  std::array<int, kNumCodes> codes{};
  int total = 0;

  static CtrsLabels from_codes(const std::array<int, kNumCodes>& c) {
    CtrsLabels l;
    l.codes = c;
    l.total = 0;
    for (int v : c) l.total += v;
    return l;
  }
};

struct MetadataRecord {
  std::string clinic;
  std::string level_of_care;
  std::string population;
  std::string assessment_time;
};

struct MetadataVocab {
  std::vector<std::string> clinic;
  std::vector<std::string> level_of_care;
  std::vector<std::string> population;
  std::vector<std::string> assessment_time;

  std::size_t width() const {
    return clinic.size() + level_of_care.size() + population.size() +
           assessment_time.size();
  }
};

struct Session {
  std::string session_id;
  std::string therapist_id;
  std::vector<Utterance> utterances;
  CtrsLabels labels;
  MetadataRecord metadata;
};

struct EmbeddedSession {
  std::string session_id;
  Tensor matrix;  // one row per retained turn
  std::vector<double> mask;
};

enum class Role { therapist_only, all };

inline Role role_from_string(const std::string& s) {
  if (s == "therapist_only") return Role::therapist_only;
  if (s == "all") return Role::all;
  throw ValidationError("unknown role '" + s + "'");
}

inline std::string role_to_string(Role r) {
  return r == Role::therapist_only ? "therapist_only" : "all";
}

inline int binarize_total(int total) {
  return total >= kCompetenceThreshold ? 1 : 0;
}

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace detail {

inline Session parse_session(const nlohmann::json& j, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  Session s;
  try {
    s.session_id = j.at("session_id").get<std::string>();
    s.therapist_id = j.at("therapist_id").get<std::string>();
    const auto& meta = j.at("metadata");
    s.metadata.clinic = meta.at("clinic").get<std::string>();
    s.metadata.level_of_care = meta.at("level_of_care").get<std::string>();
    s.metadata.population = meta.at("population").get<std::string>();
    s.metadata.assessment_time = meta.at("assessment_time").get<std::string>();
    const auto& ctrs = j.at("ctrs");
    std::array<int, kNumCodes> codes{};
    for (int i = 0; i < kNumCodes; ++i) {
      codes[i] = ctrs.at(code_names()[i]).get<int>();
    }
    s.labels = CtrsLabels::from_codes(codes);
    for (const auto& ju : j.at("utterances")) {
      Utterance u;
      u.speaker_role = ju.at("role").get<std::string>();
      u.start_s = ju.at("start_s").get<double>();
      u.end_s = ju.at("end_s").get<double>();
      u.tokens = tokenize(ju.at("text").get<std::string>());
      s.utterances.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + e.what());
  }

  if (s.therapist_id.empty()) {
    throw ValidationError(where + "empty therapist_id");
  }
  for (int i = 0; i < kNumCodes; ++i) {
    if (s.labels.codes[i] < 0 || s.labels.codes[i] > kCodeMax) {
      throw ValidationError(where + "code '" + code_names()[i] + "' = " +
                            std::to_string(s.labels.codes[i]) +
                            " outside 0..6");
    }
  }
  for (const Utterance& u : s.utterances) {
    if (u.speaker_role != "therapist" && u.speaker_role != "patient") {
      throw ValidationError(where + "unknown role '" + u.speaker_role + "'");
    }
    if (u.tokens.empty()) {
      throw ValidationError(where + "utterance with empty text");
    }
    if (u.end_s < u.start_s || u.start_s < 0.0) {
      throw ValidationError(where + "utterance with invalid time span");
    }
  }
  std::stable_sort(
      s.utterances.begin(), s.utterances.end(),
      [](const Utterance& a, const Utterance& b) { return a.start_s < b.start_s; });
  return s;
}

}  // namespace detail

inline std::vector<Session> load_sessions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Session> out;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    Session s = detail::parse_session(j, line_no);
    auto [it, inserted] = seen.emplace(s.session_id, line_no);
    if (!inserted) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": duplicate session_id '" + s.session_id + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline Session filter_role(const Session& session, Role keep) {
  if (keep == Role::all) return session;
  Session out = session;
  out.utterances.clear();
  for (const Utterance& u : session.utterances) {
    if (u.speaker_role == "therapist") out.utterances.push_back(u);
  }
  if (out.utterances.empty()) {
    throw DegenerateInputError("session '" + session.session_id +
                               "' has no therapist utterances");
  }
  return out;
}

inline std::vector<Utterance> merge_turns(const std::vector<Utterance>& utts,
                                          double max_gap_s = 2.0) {
  std::vector<Utterance> out;
  for (const Utterance& u : utts) {
    if (!out.empty() && out.back().speaker_role == u.speaker_role &&
        u.start_s - out.back().end_s < max_gap_s) {
      Utterance& prev = out.back();
      prev.tokens.insert(prev.tokens.end(), u.tokens.begin(), u.tokens.end());
      prev.end_s = u.end_s;
    } else {
      out.push_back(u);
    }
  }
  return out;
}

// Indices into the merged all-roles turn list that survive the role filter.
inline std::vector<std::size_t> role_row_indices(
    const std::vector<Utterance>& merged, Role keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    if (keep == Role::all || merged[i].speaker_role == "therapist") {
      idx.push_back(i);
    }
  }
  return idx;
}

inline std::vector<double> encode_metadata(const MetadataRecord& record,
                                           const MetadataVocab& vocab,
                                           bool enabled) {
  if (!enabled) return {};
  std::vector<double> out(vocab.width(), 0.0);
  std::size_t offset = 0;
  auto put = [&](const std::vector<std::string>& cats, const std::string& v) {
    auto it = std::find(cats.begin(), cats.end(), v);
    if (it != cats.end()) {
      out[offset + static_cast<std::size_t>(it - cats.begin())] = 1.0;
    }
    offset += cats.size();
  };
  put(vocab.clinic, record.clinic);
  put(vocab.level_of_care, record.level_of_care);
  put(vocab.population, record.population);
  put(vocab.assessment_time, record.assessment_time);
  return out;
}

// Deterministic token-hashing embedder: each token lands in one of d buckets
// with a sign bit, then turns are average-pooled. A platform-stable stand-in
// for a learned sentence encoder.
inline std::vector<double> hash_embed(const Utterance& utt, std::size_t d = 768) {
  if (d < 1) throw ContractError("hash_embed: d must be >= 1");
  std::vector<double> out(d, 0.0);
  for (const std::string& tok : utt.tokens) {
    const std::uint64_t h = fnv1a64(tok);
    const std::size_t bucket = static_cast<std::size_t>(h % d);
    const double sign = ((h >> 63) & 1ull) == 0 ? 1.0 : -1.0;
    out[bucket] += sign;
  }
  const double n = static_cast<double>(utt.tokens.size());
  for (double& v : out) v /= n;
  return out;
}

inline std::map<std::string, EmbeddedSession> load_embeddings(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, EmbeddedSession> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim_seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
    EmbeddedSession es;
    std::size_t dim = 0;
    try {
      es.session_id = j.at("session_id").get<std::string>();
      dim = j.at("dim").get<std::size_t>();
      const auto& vecs = j.at("vectors");
      es.matrix = Tensor({vecs.size(), dim});
      std::size_t r = 0;
      for (const auto& row : vecs) {
        if (row.size() != dim) {
          throw ValidationError(where + "row " + std::to_string(r) + " has " +
                                std::to_string(row.size()) +
                                " values, expected " + std::to_string(dim));
        }
        for (std::size_t c = 0; c < dim; ++c) {
          es.matrix.at(r, c) = row[c].get<double>();
        }
        ++r;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
    if (dim_seen == 0) {
      dim_seen = dim;
    } else if (dim != dim_seen) {
      throw ValidationError(where + "dimension " + std::to_string(dim) +
                            " differs from earlier " +
                            std::to_string(dim_seen));
    }
    if (!out.emplace(es.session_id, std::move(es)).second) {
      throw ValidationError(where + "duplicate session_id");
    }
  }
  return out;
}

inline std::map<std::string, EmbeddedSession> embedding_map(
    const std::vector<EmbeddedSession>& rows) {
  std::map<std::string, EmbeddedSession> out;
  for (const EmbeddedSession& e : rows) {
    if (!out.emplace(e.session_id, e).second) {
      throw ValidationError("duplicate session_id '" + e.session_id + "'");
    }
  }
  return out;
}

// Head truncation: sessions longer than max_len keep their first max_len
// turns; shorter ones are zero-padded with a matching 0/1 mask.
inline std::pair<Tensor, std::vector<double>> truncate_pad(
    const Tensor& matrix, std::size_t max_len) {
  if (matrix.rank() != 2 || matrix.rows() == 0) {
    throw ShapeError("truncate_pad expects a nonempty matrix, got " +
                     matrix.shape_str());
  }
  const std::size_t t = matrix.rows(), d = matrix.cols();
  const std::size_t keep = std::min(t, max_len);
  Tensor out({max_len, d});
  std::copy(matrix.values.begin(),
            matrix.values.begin() + static_cast<long>(keep * d),
            out.values.begin());
  std::vector<double> mask(max_len, 0.0);
  std::fill(mask.begin(), mask.begin() + static_cast<long>(keep), 1.0);
  return {std::move(out), std::move(mask)};
}

inline std::pair<double, double> class_weights(const std::vector<int>& labels) {
  if (labels.empty()) throw DegenerateInputError("class_weights: no labels");
  double n1 = 0.0;
  for (int y : labels) n1 += y;
  const double n = static_cast<double>(labels.size());
  const double n0 = n - n1;
  if (n0 == 0.0 || n1 == 0.0) {
    throw DegenerateInputError("class_weights: only one class present");
  }
  return {n / (2.0 * n0), n / (2.0 * n1)};
}

// ---- writers used by the generator and the embed command --------------

inline void write_sessions_jsonl(const std::string& path,
                                 const std::vector<Session>& sessions) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Session& s : sessions) {
    nlohmann::json j;
    j["session_id"] = s.session_id;
    j["therapist_id"] = s.therapist_id;
    j["metadata"] = {{"clinic", s.metadata.clinic},
                     {"level_of_care", s.metadata.level_of_care},
                     {"population", s.metadata.population},
                     {"assessment_time", s.metadata.assessment_time}};
    nlohmann::json ctrs;
    for (int i = 0; i < kNumCodes; ++i) {
      ctrs[code_names()[i]] = s.labels.codes[i];
    }
    j["ctrs"] = std::move(ctrs);
    nlohmann::json utts = nlohmann::json::array();
    for (const Utterance& u : s.utterances) {
      std::string text;
      for (std::size_t i = 0; i < u.tokens.size(); ++i) {
        if (i) text += ' ';
        text += u.tokens[i];
      }
      utts.push_back({{"role", u.speaker_role},
                      {"start_s", u.start_s},
                      {"end_s", u.end_s},
                      {"text", text}});
    }
    j["utterances"] = std::move(utts);
    out << j.dump() << '\n';
  }
}

inline void write_embeddings_jsonl(const std::string& path,
                                   const std::vector<EmbeddedSession>& embs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const EmbeddedSession& e : embs) {
    out << "{\"session_id\":\"" << e.session_id
        << "\",\"dim\":" << e.matrix.cols() << ",\"vectors\":[";
    for (std::size_t r = 0; r < e.matrix.rows(); ++r) {
      if (r) out << ',';
      out << '[';
      for (std::size_t c = 0; c < e.matrix.cols(); ++c) {
        if (c) out << ',';
        out << format_sig(e.matrix.at(r, c), 9);
      }
      out << ']';
    }
    out << "]}\n";
  }
}

inline void write_vocab_json(const std::string& path,
                             const MetadataVocab& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  nlohmann::json j = {{"clinic", vocab.clinic},
                      {"level_of_care", vocab.level_of_care},
                      {"population", vocab.population},
                      {"assessment_time", vocab.assessment_time}};
  out << j.dump(2) << '\n';
}

inline MetadataVocab load_vocab_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  MetadataVocab v;
  try {
    v.clinic = j.at("clinic").get<std::vector<std::string>>();
    v.level_of_care = j.at("level_of_care").get<std::vector<std::string>>();
    v.population = j.at("population").get<std::vector<std::string>>();
    v.assessment_time = j.at("assessment_time").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  auto check_unique = [&](const std::vector<std::string>& cats,
                          const char* name) {
    std::vector<std::string> sorted = cats;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError(std::string(path) + ": duplicate category in " +
                            name);
    }
  };
  check_unique(v.clinic, "clinic");
  check_unique(v.level_of_care, "level_of_care");
  check_unique(v.population, "population");
  check_unique(v.assessment_time, "assessment_time");
  return v;
}

// Builds a vocabulary from observed data, sorted for determinism.
inline MetadataVocab vocab_from_sessions(const std::vector<Session>& sessions) {
  auto collect = [&](auto getter) {
    std::vector<std::string> vals;
    for (const Session& s : sessions) vals.push_back(getter(s));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    return vals;
  };
  MetadataVocab v;
  v.clinic = collect([](const Session& s) { return s.metadata.clinic; });
  v.level_of_care =
      collect([](const Session& s) { return s.metadata.level_of_care; });
  v.population =
      collect([](const Session& s) { return s.metadata.population; });
  v.assessment_time =
      collect([](const Session& s) { return s.metadata.assessment_time; });
  return v;
}

}  // namespace sescore
