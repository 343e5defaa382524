#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sescore/common.hpp"
#include "sescore/data.hpp"
#include "sescore/tensor.hpp"

namespace sescore {

// Interval set on the normalized session timeline, e.g. {{0,0.1},{0.9,1}}.
using RegionMap = std::vector<std::pair<double, double>>;

// Controlled dataset with planted, code-specific signals: each code owns an
// orthogonal direction injected into therapist turns inside its region, with
// amplitude proportional to the code's score. Texts carry matching cue
// tokens so lexical baselines see the same signal.
struct SyntheticSpec {
  std::size_t n_sessions = 200;
  std::size_t n_therapists = 50;
  std::size_t d = 16;
  double turns_mean = 80.0;
  double turns_std = 8.0;
  std::vector<std::vector<double>> directions;  // defaults to basis vectors
  std::array<RegionMap, kNumCodes> regions = default_regions();
  double signal_scale = 1.0;
  double noise_scale = 0.5;
  std::uint64_t seed = 42;

  static std::array<RegionMap, kNumCodes> default_regions() {
    std::array<RegionMap, kNumCodes> r;
    for (auto& m : r) m = {{0.0, 1.0}};
    r[0] = {{0.0, 0.1}};               // ag: session opening
    r[10] = {{0.0, 0.1}, {0.9, 1.0}};  // hw: both ends
    return r;
  }
};

struct SyntheticData {
  std::vector<Session> sessions;
  std::vector<EmbeddedSession> embeddings;
  MetadataVocab vocab;
};

namespace detail {

inline bool in_region(const RegionMap& region, double frac) {
  for (const auto& [lo, hi] : region) {
    if (frac >= lo && frac < hi) return true;
  }
  return false;
}

inline std::string padded_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
  return std::string(buf);
}

inline void validate_spec(const SyntheticSpec& spec) {
  if (spec.n_sessions == 0 || spec.n_therapists == 0) {
    throw ValidationError("synthetic spec needs sessions and therapists");
  }
  if (spec.d < static_cast<std::size_t>(kNumCodes)) {
    throw ValidationError("synthetic spec needs d >= 11 for orthogonal "
                          "directions, got d = " + std::to_string(spec.d));
  }
  for (const auto& region : spec.regions) {
    for (const auto& [lo, hi] : region) {
      if (lo < 0.0 || hi > 1.0 || lo >= hi) {
        throw ValidationError("synthetic region outside [0,1]");
      }
    }
  }
}

inline std::vector<std::vector<double>> resolve_directions(
    const SyntheticSpec& spec) {
  std::vector<std::vector<double>> dirs = spec.directions;
  if (dirs.empty()) {
    dirs.assign(kNumCodes, std::vector<double>(spec.d, 0.0));
    for (int i = 0; i < kNumCodes; ++i) dirs[i][i] = 1.0;
  }
  if (dirs.size() != static_cast<std::size_t>(kNumCodes)) {
    throw ValidationError("synthetic spec needs 11 signal directions");
  }
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    if (dirs[i].size() != spec.d) {
      throw ValidationError("signal direction dimension mismatch");
    }
    double norm = 0.0;
    for (double v : dirs[i]) norm += v * v;
    if (std::abs(norm - 1.0) > 1e-9) {
      throw ValidationError("signal directions must be unit vectors");
    }
    for (std::size_t j = i + 1; j < dirs.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < spec.d; ++k) dot += dirs[i][k] * dirs[j][k];
      if (std::abs(dot) > 1e-9) {
        throw ValidationError("signal directions must be pairwise orthogonal");
      }
    }
  }
  return dirs;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  detail::validate_spec(spec);
  const auto dirs = detail::resolve_directions(spec);
  Rng rng(sub_seed(spec.seed, "synth"));

  static const std::array<const char*, 8> fillers = {
      "okay", "so", "well", "right", "yeah", "today", "think", "about"};

  SyntheticData out;
  out.vocab.clinic.reserve(25);
  for (std::size_t i = 0; i < 25; ++i) {
    out.vocab.clinic.push_back(detail::padded_id("clinic_", i));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    out.vocab.level_of_care.push_back("loc_" + std::to_string(i));
  }
  for (std::size_t i = 0; i < 9; ++i) {
    out.vocab.population.push_back("pop_" + std::to_string(i));
  }
  for (std::size_t i = 0; i < 7; ++i) {
    out.vocab.assessment_time.push_back("at_" + std::to_string(i));
  }

  for (std::size_t s = 0; s < spec.n_sessions; ++s) {
    Session sess;
    sess.session_id = detail::padded_id("S", s);
    const std::size_t th = s % spec.n_therapists;
    sess.therapist_id = detail::padded_id("TH", th);

    std::array<int, kNumCodes> codes{};
    for (int i = 0; i < kNumCodes; ++i) {
      codes[i] = static_cast<int>(rng.below(kCodeMax + 1));
    }
    sess.labels = CtrsLabels::from_codes(codes);

    const long drawn =
        std::lround(spec.turns_mean + spec.turns_std * rng.gaussian());
    const std::size_t turns = static_cast<std::size_t>(std::max(8l, drawn));

    EmbeddedSession emb;
    emb.session_id = sess.session_id;
    emb.matrix = Tensor({turns, spec.d});

    for (std::size_t t = 0; t < turns; ++t) {
      Utterance u;
      u.speaker_role = t % 2 == 0 ? "therapist" : "patient";
      u.start_s = 4.0 * static_cast<double>(t);
      u.end_s = u.start_s + 3.0;
      const std::size_t n_fill = 3 + rng.below(3);
      for (std::size_t f = 0; f < n_fill; ++f) {
        u.tokens.push_back(fillers[rng.below(fillers.size())]);
      }

      for (std::size_t c = 0; c < spec.d; ++c) {
        emb.matrix.at(t, c) = spec.noise_scale * rng.gaussian();
      }
      const double frac = (static_cast<double>(t) + 0.5) /
                          static_cast<double>(turns);
      if (u.speaker_role == "therapist") {
        for (int i = 0; i < kNumCodes; ++i) {
          if (!detail::in_region(spec.regions[i], frac)) continue;
          const double amp = spec.signal_scale *
                             static_cast<double>(codes[i]) /
                             static_cast<double>(kCodeMax);
          for (std::size_t c = 0; c < spec.d; ++c) {
            emb.matrix.at(t, c) += amp * dirs[i][c];
          }
          for (int rep = 0; rep < codes[i]; ++rep) {
            u.tokens.push_back("cue_" + code_names()[i]);
          }
        }
      }
      sess.utterances.push_back(std::move(u));
    }

    sess.metadata.clinic = out.vocab.clinic[th % out.vocab.clinic.size()];
    sess.metadata.level_of_care =
        out.vocab.level_of_care[rng.below(out.vocab.level_of_care.size())];
    sess.metadata.population =
        out.vocab.population[rng.below(out.vocab.population.size())];
    const double roll = rng.uniform();
    const int shift = roll < 0.05 ? -1 : (roll < 0.95 ? 0 : 1);
    const int at = std::clamp(sess.labels.total / 10 + shift, 0, 6);
    sess.metadata.assessment_time = out.vocab.assessment_time[at];

    out.sessions.push_back(std::move(sess));
    out.embeddings.push_back(std::move(emb));
  }
  return out;
}

}  // namespace sescore
