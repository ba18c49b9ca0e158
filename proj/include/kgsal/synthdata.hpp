#pragma once

#include <map>
#include <string>
#include <vector>

#include "kgsal/datamodel.hpp"

namespace kgsal {

enum class UsefulnessTag { kKgUseful, kTextUseful, kNeither };

std::string usefulness_tag_name(UsefulnessTag t);

// Controls the planted-signal benchmark generator.
//
// KG_USEFUL instances: only the correct choice's KG contains a signal path, a
// 1-hop QUESTION->ANSWER path whose nodes both carry `signal_marker` and whose
// edge uses the dedicated signal relation. Question text is noise.
//
// TEXT_USEFUL instances: the question embeds a key token equal to the correct
// choice's text token; all KGs are noise.
//
// NEITHER instances: answer is instance-specific noise.
//
// Non-KG_USEFUL instances may contain a near-miss path (marker nodes joined by
// a non-signal relation) on a uniformly random choice, so that marker labels
// alone do not identify the signal.
struct GenConfig {
  int n_train = 2000;
  int n_dev = 500;
  int n_test = 500;
  int n_choices = 4;
  int vocab_size = 40;  // noise token vocabulary
  std::pair<int, int> kg_nodes_range = {4, 8};
  std::pair<int, int> kg_paths_range = {3, 5};
  double rho_kg_useful = 0.4;
  double rho_text_useful = 0.4;
  std::string signal_marker = "sig";
  uint64_t seed = 0;

  // Artifact knobs (defaults used by the benchmark).
  int n_keys = 8;           // answer-text key vocabulary
  int n_concepts = 300;     // noise concept vocabulary
  int n_relations = 6;      // noise relations, plus one signal relation
  int question_len = 5;
  double near_miss_prob = 0.5;
};

struct GeneratedData {
  Dataset train;
  Dataset dev;
  Dataset test;
  std::map<std::string, UsefulnessTag> tags;  // acceptance-test sidecar only
};

// Deterministic in cfg (including cfg.seed). Tags are never visible to models.
GeneratedData generate_dataset(const GenConfig& cfg);

// Reads a JSONL dataset, validating every instance. Parse failures and
// invariant violations are fatal with file/line or instance context.
Dataset ingest_jsonl(const std::string& path);

enum class PerturbMode { kRelation, kNode };

// Applies one global label permutation across the dataset's relation (or node
// concept) vocabulary. Graph topology is untouched.
Dataset perturb_kg(const Dataset& instances, PerturbMode mode, uint64_t seed);

// Nested subsampling: the fraction-f subset is a prefix of the fraction-f'
// subset for f < f' under the same seed. Original instance order is kept.
Dataset subsample_train(const Dataset& train, double fraction, uint64_t seed);

void write_tags(const std::map<std::string, UsefulnessTag>& tags, const std::string& path);
std::map<std::string, UsefulnessTag> read_tags(const std::string& path);

}  // namespace kgsal
