#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/candidate.hpp"

namespace sage {

/// A finished reasoning chain (ending with `</think>`) plus its greedy answer.
struct Completion {
  CandidateSequence chain;
  std::vector<TokenId> answer;
  bool forced = false;  // `</think>` was appended at the step budget
  std::string strategy;
  std::uint64_t seed = 0;
  double phi = 0.0;
};

enum class EventKind {
  Accepted,          // joined the completion set
  Rejected,          // `</think>` ranked below the tolerance rank; dropped
  Surplus,           // would have accepted, but r completions were already reached
  Forced,            // closed at the step budget
  PrunedTerminated,  // beam search only: a finished beam lost its slot
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Accepted: return "accepted";
    case EventKind::Rejected: return "rejected";
    case EventKind::Surplus: return "surplus";
    case EventKind::Forced: return "forced";
    case EventKind::PrunedTerminated: return "pruned_terminated";
  }
  return "?";
}

struct TraceEvent {
  EventKind kind = EventKind::Accepted;
  std::size_t step = 0;
  std::size_t parent = 0;  // beam index of the parent at that step
  std::size_t rank = 0;    // 1-based rank of `</think>` in the parent's window; 0 when not applicable
  std::vector<TokenId> tokens;
  double phi = 0.0;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

/// `</think>` seen at `rank` inside a window of nominal size `window`.
struct EotObservation {
  std::size_t step = 0;
  std::size_t parent = 0;
  std::size_t rank = 0;
  std::size_t window = 0;

  friend bool operator==(const EotObservation&, const EotObservation&) = default;
};

struct BeamEntry {
  std::vector<TokenId> tokens;
  double phi = 0.0;

  friend bool operator==(const BeamEntry&, const BeamEntry&) = default;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t pool_size = 0;     // candidates competing for retention this step
  std::vector<BeamEntry> beam;   // retained beam after the step (empty once finished)

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct SearchTrace {
  std::string strategy;
  /// How the retention pool is formed; "per_parent_window" means every parent
  /// contributes its full window, so the pool holds up to m * 2m candidates.
  std::string pool_mode = "per_parent_window";
  std::size_t window = 0;
  std::vector<StepRecord> steps;
  std::vector<EotObservation> eot;
  std::vector<TraceEvent> events;
};

inline nlohmann::json to_json(const SearchTrace& t) {
  nlohmann::json j;
  j["strategy"] = t.strategy;
  j["pool_mode"] = t.pool_mode;
  j["window"] = t.window;
  auto steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    auto beam = nlohmann::json::array();
    for (const auto& b : s.beam) beam.push_back({{"tokens", b.tokens}, {"phi", b.phi}});
    steps.push_back({{"step", s.step}, {"pool_size", s.pool_size}, {"beam", std::move(beam)}});
  }
  j["steps"] = std::move(steps);
  auto eot = nlohmann::json::array();
  for (const auto& o : t.eot)
    eot.push_back({{"step", o.step}, {"parent", o.parent}, {"rank", o.rank}, {"window", o.window}});
  j["eot"] = std::move(eot);
  auto events = nlohmann::json::array();
  for (const auto& e : t.events)
    events.push_back({{"kind", to_string(e.kind)},
                      {"step", e.step},
                      {"parent", e.parent},
                      {"rank", e.rank},
                      {"tokens", e.tokens},
                      {"phi", e.phi}});
  j["events"] = std::move(events);
  return j;
}

/// Only the fields metrics need are read back.
inline std::vector<EotObservation> eot_from_json(const nlohmann::json& j) {
  std::vector<EotObservation> out;
  for (const auto& o : j.at("eot"))
    out.push_back({o.at("step").get<std::size_t>(), o.at("parent").get<std::size_t>(),
                   o.at("rank").get<std::size_t>(), o.at("window").get<std::size_t>()});
  return out;
}

}  // namespace sage
