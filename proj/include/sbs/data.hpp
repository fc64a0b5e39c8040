#pragma once

#include <array>
#include <string>
#include <vector>

#include "sbs/features.hpp"

namespace sbs {

inline const std::array<std::string, 4> kClassLabels = {"joy", "anger", "sadness",
                                                        "fear"};

int label_index(const std::string& label);

struct UtteranceRecord {
  std::string utterance_id;
  std::string actor_id;
  char gender = 'F';  // 'F' or 'M'
  std::string corpus;
  std::string label;
  std::string feature_path;
};

using Manifest = std::vector<UtteranceRecord>;

/// CSV with header utterance_id,actor_id,gender,corpus,label,feature_path.
void save_manifest(const std::string& path, const Manifest& manifest);
Manifest load_manifest(const std::string& path);

/// Synthetic 4-class corpus: per class, tone clusters whose energy sits in a
/// class-specific frequency band (two classes per half-band), with per-actor
/// timbre jitter and additive noise. Every utterance derives its own seed, so
/// generation is reproducible and order-independent.
struct SynthSpec {
  Index actor_count = 8;
  Index per_class = 20;  // utterances per actor per class
  double noise_level = 0.05;
  double min_seconds = 1.0;
  double max_seconds = 1.5;
  int sample_rate = 16000;
  std::uint64_t seed = 1234;
  std::string corpus = "synth";
  std::string out_dir;  // WAVs land in <out_dir>/wav
};

/// Writes WAVs and returns the manifest rows (feature_path left empty).
Manifest generate_synthetic_corpus(const SynthSpec& spec);

/// Synthesizes one utterance without touching the file system.
Waveform synth_utterance(const SynthSpec& spec, Index actor, int class_idx,
                         Index repetition);

struct ActorPartition {
  std::vector<std::vector<std::string>> sets;  // k disjoint actor-id sets
};

/// Greedy balanced assignment: within each (corpus, gender) cell, actors are
/// shuffled by seed and dealt round-robin across partitions; per-partition
/// cell counts differ by at most one.
ActorPartition partition_actors(const Manifest& manifest, Index k,
                                std::uint64_t seed);

void save_partition(const std::string& path, const ActorPartition& p);

struct FoldSplit {
  std::vector<Index> train;  // manifest row indices
  std::vector<Index> valid;
};

/// Fold i validates on partition i and trains on the rest; actors never
/// appear on both sides.
std::vector<FoldSplit> make_folds(const ActorPartition& partition,
                                  const Manifest& manifest);

}  // namespace sbs
