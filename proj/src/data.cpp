#include "sbs/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

namespace sbs {

namespace fs = std::filesystem;

int label_index(const std::string& label) {
  for (std::size_t i = 0; i < kClassLabels.size(); ++i)
    if (kClassLabels[i] == label) return static_cast<int>(i);
  throw ValueError(str("unknown label: ", label));
}

void save_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open for writing: ", path));
  os << "utterance_id,actor_id,gender,corpus,label,feature_path\n";
  for (const auto& r : manifest)
    os << r.utterance_id << ',' << r.actor_id << ',' << r.gender << ','
       << r.corpus << ',' << r.label << ',' << r.feature_path << '\n';
  if (!os) throw IoError(str("short write to ", path));
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open for reading: ", path));
  std::string line;
  if (!std::getline(is, line))
    throw IoError(str("empty manifest: ", path));
  if (line != "utterance_id,actor_id,gender,corpus,label,feature_path")
    throw IoError(str("unexpected manifest header in ", path, ": ", line));
  Manifest out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (cols.size() != 6)
      throw IoError(str("bad manifest row in ", path, ": ", line));
    UtteranceRecord r;
    r.utterance_id = cols[0];
    r.actor_id = cols[1];
    if (cols[2] != "F" && cols[2] != "M")
      throw IoError(str("bad gender in ", path, ": ", line));
    r.gender = cols[2][0];
    r.corpus = cols[3];
    r.label = cols[4];
    label_index(r.label);  // validates
    r.feature_path = cols[5];
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

// Class frequency bands in Hz. Two classes sit in the lower half of the
// spectrum and two in the upper half, so sub-band shaking has a physically
// distinct target per class pair.
struct Band {
  double lo, hi;
};

// The two classes of each half-band overlap by roughly half their width: an
// actor's placement inside the overlap is unambiguous for seen actors but
// confusable for unseen ones, which keeps speaker-independent validation
// well below ceiling.
Band class_band(int class_idx) {
  switch (class_idx) {
    case 0: return {4150.0, 6350.0};   // joy: upper half-band
    case 1: return {1350.0, 3450.0};   // anger: lower half-band
    case 2: return {250.0, 2050.0};    // sadness: lower half-band
    case 3: return {5450.0, 7650.0};   // fear: upper half-band
  }
  throw ValueError(str("class index out of range: ", class_idx));
}

}  // namespace

Waveform synth_utterance(const SynthSpec& spec, Index actor, int class_idx,
                         Index repetition) {
  // Every (actor, class) pair keeps its own tone placement inside the class
  // band: utterances of one actor cluster tightly while actors spread across
  // the band. Seen-actor classification is easy, unseen-actor classification
  // requires the band itself.
  RandomStream actor_rng(derive_seed(spec.seed, "actor", actor, class_idx));
  const Band band = class_band(class_idx);
  const double width = band.hi - band.lo;
  const double actor_center = band.lo + actor_rng.uniform(0.1, 0.9) * width;
  const double roughness = actor_rng.uniform(0.0, 0.5);

  // identity tones shared by all of an actor's utterances: they make seen
  // actors easy to memorize and mislead on unseen ones, like speaker timbre
  RandomStream id_rng(derive_seed(spec.seed, "actor-id", actor));
  constexpr int kIdTones = 3;
  double id_freq[kIdTones], id_amp[kIdTones];
  for (int i = 0; i < kIdTones; ++i) {
    id_freq[i] = id_rng.uniform(400.0, 7200.0);
    id_amp[i] = id_rng.uniform(0.7, 1.1);
  }

  RandomStream rng(derive_seed(spec.seed, "utt", actor, class_idx, repetition));
  const double seconds = rng.uniform(spec.min_seconds, spec.max_seconds);
  const Index n = static_cast<Index>(std::lround(seconds * spec.sample_rate));

  constexpr int kTones = 3 + kIdTones;
  double freq[kTones], amp[kTones], phase[kTones];
  for (int i = 0; i < 3; ++i) {
    freq[i] = actor_center * rng.uniform(0.95, 1.05) + width * 0.05 * rng.normal();
    amp[i] = rng.uniform(0.4, 1.0);
    phase[i] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  }
  for (int i = 0; i < kIdTones; ++i) {
    freq[3 + i] = id_freq[i] * rng.uniform(0.99, 1.01);
    amp[3 + i] = id_amp[i];
    phase[3 + i] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  }
  // slow amplitude wobble, stronger for "rough" actors
  const double wob_rate = rng.uniform(2.0, 6.0);
  const double wob_depth = 0.2 + 0.3 * roughness;

  Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.resize(static_cast<std::size_t>(n));
  const double two_pi = 2.0 * 3.14159265358979323846;
  double peak = 0.0;
  for (Index t = 0; t < n; ++t) {
    const double sec = double(t) / spec.sample_rate;
    double v = 0.0;
    for (int i = 0; i < kTones; ++i)
      v += amp[i] * std::sin(two_pi * freq[i] * sec + phase[i]);
    v *= 1.0 + wob_depth * std::sin(two_pi * wob_rate * sec);
    // attack / release ramps over the first and last 10%
    const double pos = double(t) / double(n - 1);
    const double env = std::min({1.0, pos / 0.1, (1.0 - pos) / 0.1});
    v *= std::max(env, 0.0);
    v += spec.noise_level * rng.normal();
    w.samples[static_cast<std::size_t>(t)] = v;
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.0)
    for (auto& s : w.samples) s *= 0.7 / peak;
  return w;
}

Manifest generate_synthetic_corpus(const SynthSpec& spec) {
  if (spec.actor_count < 1 || spec.per_class < 0)
    throw ValueError("generate_synthetic_corpus: invalid counts");
  const fs::path wav_dir = fs::path(spec.out_dir) / "wav";
  std::error_code ec;
  fs::create_directories(wav_dir, ec);
  if (ec) throw IoError(str("cannot create ", wav_dir.string(), ": ", ec.message()));

  Manifest manifest;
  for (Index a = 0; a < spec.actor_count; ++a) {
    for (int c = 0; c < 4; ++c) {
      for (Index r = 0; r < spec.per_class; ++r) {
        UtteranceRecord rec;
        rec.actor_id = str("a", a < 10 ? "0" : "", a);
        rec.gender = (a % 2 == 0) ? 'F' : 'M';
        rec.corpus = spec.corpus;
        rec.label = kClassLabels[static_cast<std::size_t>(c)];
        rec.utterance_id = str(rec.actor_id, "_", rec.label, "_", r < 10 ? "0" : "", r);
        const fs::path wav_path = wav_dir / (rec.utterance_id + ".wav");
        Waveform w = synth_utterance(spec, a, c, r);
        write_wav(wav_path.string(), w);
        manifest.push_back(std::move(rec));
      }
    }
  }
  return manifest;
}

ActorPartition partition_actors(const Manifest& manifest, Index k,
                                std::uint64_t seed) {
  if (k < 1) throw ValueError("partition_actors: k must be >= 1");
  // collect distinct actors with their (corpus, gender) cell
  std::map<std::string, std::pair<std::string, char>> actors;
  for (const auto& r : manifest) {
    auto it = actors.find(r.actor_id);
    if (it == actors.end()) {
      actors.emplace(r.actor_id, std::make_pair(r.corpus, r.gender));
    } else if (it->second != std::make_pair(r.corpus, r.gender)) {
      throw ValueError(str("actor ", r.actor_id, " appears with inconsistent ",
                           "corpus/gender in the manifest"));
    }
  }
  if (static_cast<Index>(actors.size()) < k)
    throw ValueError(str("partition_actors: ", actors.size(), " actors < ", k,
                         " partitions"));

  std::map<std::pair<std::string, char>, std::vector<std::string>> cells;
  for (const auto& [id, cell] : actors) cells[cell].push_back(id);

  ActorPartition part;
  part.sets.resize(static_cast<std::size_t>(k));
  Index cell_index = 0;
  for (auto& [cell, ids] : cells) {
    std::sort(ids.begin(), ids.end());
    RandomStream rng(derive_seed(seed, "partition", cell_index++));
    for (std::size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
    for (std::size_t i = 0; i < ids.size(); ++i)
      part.sets[i % static_cast<std::size_t>(k)].push_back(ids[i]);
  }
  return part;
}

void save_partition(const std::string& path, const ActorPartition& p) {
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open for writing: ", path));
  for (std::size_t i = 0; i < p.sets.size(); ++i) {
    os << "# partition " << (i + 1) << "\n";
    for (const auto& id : p.sets[i]) os << id << "\n";
  }
  if (!os) throw IoError(str("short write to ", path));
}

std::vector<FoldSplit> make_folds(const ActorPartition& partition,
                                  const Manifest& manifest) {
  const std::size_t k = partition.sets.size();
  std::map<std::string, std::size_t> owner;
  for (std::size_t i = 0; i < k; ++i)
    for (const auto& id : partition.sets[i]) {
      if (owner.count(id))
        throw ValueError(str("actor ", id, " appears in two partitions"));
      owner[id] = i;
    }

  std::vector<FoldSplit> folds(k);
  for (Index row = 0; row < static_cast<Index>(manifest.size()); ++row) {
    const auto it = owner.find(manifest[static_cast<std::size_t>(row)].actor_id);
    if (it == owner.end())
      throw ValueError(str("actor ", manifest[static_cast<std::size_t>(row)].actor_id,
                           " is missing from the partition"));
    for (std::size_t f = 0; f < k; ++f) {
      if (it->second == f)
        folds[f].valid.push_back(row);
      else
        folds[f].train.push_back(row);
    }
  }
  return folds;
}

}  // namespace sbs
