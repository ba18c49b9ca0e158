#include "kgsal/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "kgsal/rng.hpp"

namespace kgsal {

using nlohmann::json;

std::string usefulness_tag_name(UsefulnessTag t) {
  switch (t) {
    case UsefulnessTag::kKgUseful: return "KG_USEFUL";
    case UsefulnessTag::kTextUseful: return "TEXT_USEFUL";
    case UsefulnessTag::kNeither: return "NEITHER";
  }
  throw std::logic_error("bad UsefulnessTag");
}

namespace {

std::string noise_token(int i) { return "w" + std::to_string(i); }
std::string key_token(int i) { return "k" + std::to_string(i); }
std::string concept_label(int i) { return "c" + std::to_string(i); }
std::string relation_label(int i) { return "r" + std::to_string(i); }
constexpr const char* kSignalRelation = "rs";

struct GenContext {
  const GenConfig& cfg;
  std::vector<std::string> relations;  // shared relation vocabulary per KG
};

// Noise KG: random typed nodes, paths built first, then materialized as edges.
ContextKG make_noise_kg(const GenContext& ctx, Rng& rng) {
  const GenConfig& cfg = ctx.cfg;
  ContextKG kg;
  kg.relations = ctx.relations;

  const int span = cfg.kg_nodes_range.second - cfg.kg_nodes_range.first + 1;
  const int n_nodes = cfg.kg_nodes_range.first + rng.next_int(span);
  std::vector<int> q_nodes, a_nodes;
  for (int i = 0; i < n_nodes; ++i) {
    NodeType type;
    if (i == 0) {
      type = NodeType::kQuestion;
    } else if (i == 1) {
      type = NodeType::kAnswer;
    } else {
      const int t = rng.next_int(3);
      type = t == 0 ? NodeType::kQuestion : t == 1 ? NodeType::kAnswer
                                                   : NodeType::kIntermediate;
    }
    if (type == NodeType::kQuestion) q_nodes.push_back(i);
    if (type == NodeType::kAnswer) a_nodes.push_back(i);
    kg.nodes.push_back({i, concept_label(rng.next_int(cfg.n_concepts)), type});
  }

  const int n_noise_rel = cfg.n_relations;  // relation 0..n-1 noise, last is signal
  const int pspan = cfg.kg_paths_range.second - cfg.kg_paths_range.first + 1;
  const int n_paths = cfg.kg_paths_range.first + rng.next_int(pspan);
  for (int p = 0; p < n_paths; ++p) {
    const int head = q_nodes[rng.next_int(static_cast<int>(q_nodes.size()))];
    const int tail = a_nodes[rng.next_int(static_cast<int>(a_nodes.size()))];
    const bool two_hop = n_nodes > 2 && rng.next_bool(0.5);
    if (two_hop) {
      int mid = rng.next_int(n_nodes);
      const int e1 = static_cast<int>(kg.edges.size());
      kg.edges.push_back({head, rng.next_int(n_noise_rel), mid});
      kg.edges.push_back({mid, rng.next_int(n_noise_rel), tail});
      kg.paths.push_back({{e1, e1 + 1}});
    } else {
      const int e = static_cast<int>(kg.edges.size());
      kg.edges.push_back({head, rng.next_int(n_noise_rel), tail});
      kg.paths.push_back({{e}});
    }
  }

  // a little extra connectivity outside of paths
  const int extra = rng.next_int(3);
  for (int i = 0; i < extra; ++i) {
    kg.edges.push_back({rng.next_int(n_nodes), rng.next_int(n_noise_rel),
                        rng.next_int(n_nodes)});
  }
  return kg;
}

// Appends a 1-hop marker-node path. `use_signal_relation` distinguishes the
// true signal from near-miss distractors.
void plant_marker_path(ContextKG& kg, const GenConfig& cfg, bool use_signal_relation,
                       Rng& rng) {
  const int head = static_cast<int>(kg.nodes.size());
  kg.nodes.push_back({head, cfg.signal_marker, NodeType::kQuestion});
  const int tail = head + 1;
  kg.nodes.push_back({tail, cfg.signal_marker, NodeType::kAnswer});
  const int rel = use_signal_relation ? static_cast<int>(kg.relations.size()) - 1
                                      : rng.next_int(cfg.n_relations);
  const int e = static_cast<int>(kg.edges.size());
  kg.edges.push_back({head, rel, tail});
  kg.paths.push_back({{e}});
}

QAInstance make_instance(const GenContext& ctx, const std::string& id,
                         UsefulnessTag tag, Rng rng) {
  const GenConfig& cfg = ctx.cfg;
  QAInstance inst;
  inst.id = id;
  inst.target = rng.next_int(cfg.n_choices);

  // distinct key tokens per choice
  std::vector<int> keys(cfg.n_keys);
  for (int i = 0; i < cfg.n_keys; ++i) keys[i] = i;
  rng.shuffle(keys);

  for (int c = 0; c < cfg.n_choices; ++c) {
    AnswerChoice choice;
    choice.text = {key_token(keys[c])};
    choice.kg = make_noise_kg(ctx, rng);
    inst.choices.push_back(std::move(choice));
  }

  inst.question.reserve(cfg.question_len);
  for (int i = 0; i < cfg.question_len; ++i) {
    inst.question.push_back(noise_token(rng.next_int(cfg.vocab_size)));
  }

  switch (tag) {
    case UsefulnessTag::kKgUseful:
      plant_marker_path(inst.choices[inst.target].kg, cfg, /*signal=*/true, rng);
      break;
    case UsefulnessTag::kTextUseful: {
      const int pos = rng.next_int(cfg.question_len);
      inst.question[pos] = key_token(keys[inst.target]);
      break;
    }
    case UsefulnessTag::kNeither:
      break;
  }

  // near-miss marker path on a uniformly random choice (never in KG_USEFUL,
  // where marker paths must single out the correct choice)
  if (tag != UsefulnessTag::kKgUseful && rng.next_bool(cfg.near_miss_prob)) {
    const int c = rng.next_int(cfg.n_choices);
    plant_marker_path(inst.choices[c].kg, cfg, /*signal=*/false, rng);
  }
  return inst;
}

Dataset make_split(const GenContext& ctx, const std::string& split, int n,
                   const Rng& root, std::map<std::string, UsefulnessTag>& tags) {
  const GenConfig& cfg = ctx.cfg;
  const int n_kg = static_cast<int>(std::lround(cfg.rho_kg_useful * n));
  const int n_text = static_cast<int>(std::lround(cfg.rho_text_useful * n));
  if (n_kg + n_text > n) {
    throw std::runtime_error("generate_dataset: rho_kg_useful + rho_text_useful > 1");
  }
  std::vector<UsefulnessTag> order;
  order.reserve(n);
  for (int i = 0; i < n_kg; ++i) order.push_back(UsefulnessTag::kKgUseful);
  for (int i = 0; i < n_text; ++i) order.push_back(UsefulnessTag::kTextUseful);
  while (static_cast<int>(order.size()) < n) order.push_back(UsefulnessTag::kNeither);
  Rng shuffle_rng = root.sub("typeshuffle:" + split);
  shuffle_rng.shuffle(order);

  Dataset out;
  out.reserve(n);
  char buf[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%s-%05d", split.c_str(), i);
    Rng inst_rng = root.sub("inst:" + split, static_cast<uint64_t>(i));
    out.push_back(make_instance(ctx, buf, order[i], inst_rng));
    tags[buf] = order[i];
  }
  return out;
}

}  // namespace

GeneratedData generate_dataset(const GenConfig& cfg) {
  if (cfg.n_choices < 2) throw std::runtime_error("generate_dataset: n_choices < 2");
  if (cfg.rho_kg_useful < 0 || cfg.rho_text_useful < 0 ||
      cfg.rho_kg_useful + cfg.rho_text_useful > 1.0) {
    throw std::runtime_error("generate_dataset: invalid rho configuration");
  }
  if (cfg.kg_nodes_range.first < 2 || cfg.kg_nodes_range.second < cfg.kg_nodes_range.first) {
    throw std::runtime_error("generate_dataset: infeasible kg_nodes_range");
  }
  if (cfg.kg_paths_range.first < 1 || cfg.kg_paths_range.second < cfg.kg_paths_range.first) {
    throw std::runtime_error("generate_dataset: infeasible kg_paths_range (signal path required)");
  }
  if (cfg.n_keys < cfg.n_choices) {
    throw std::runtime_error("generate_dataset: n_keys must be >= n_choices");
  }

  GenContext ctx{cfg, {}};
  for (int i = 0; i < cfg.n_relations; ++i) ctx.relations.push_back(relation_label(i));
  ctx.relations.push_back(kSignalRelation);

  Rng root(cfg.seed);
  GeneratedData data;
  data.train = make_split(ctx, "train", cfg.n_train, root, data.tags);
  data.dev = make_split(ctx, "dev", cfg.n_dev, root, data.tags);
  data.test = make_split(ctx, "test", cfg.n_test, root, data.tags);
  return data;
}

Dataset ingest_jsonl(const std::string& path) {
  Dataset data = deserialize_dataset(path);
  for (const QAInstance& inst : data) {
    auto violations = validate_instance(inst);
    if (!violations.empty()) {
      throw std::runtime_error("ingest_jsonl: " + path + ": invariant violation: " +
                               violations.front());
    }
  }
  return data;
}

namespace {

// sorted unique labels -> permuted labels, one permutation for the dataset
std::map<std::string, std::string> label_permutation(const std::set<std::string>& labels,
                                                     uint64_t seed) {
  std::vector<std::string> sorted(labels.begin(), labels.end());
  std::vector<int> perm(sorted.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  Rng rng = Rng(seed).sub("label-permutation");
  rng.shuffle(perm);
  std::map<std::string, std::string> out;
  for (size_t i = 0; i < sorted.size(); ++i) out[sorted[i]] = sorted[perm[i]];
  return out;
}

}  // namespace

Dataset perturb_kg(const Dataset& instances, PerturbMode mode, uint64_t seed) {
  std::set<std::string> labels;
  for (const QAInstance& inst : instances) {
    for (const AnswerChoice& c : inst.choices) {
      if (mode == PerturbMode::kRelation) {
        labels.insert(c.kg.relations.begin(), c.kg.relations.end());
      } else {
        for (const KGNode& n : c.kg.nodes) labels.insert(n.label);
      }
    }
  }
  const auto perm = label_permutation(labels, seed);

  Dataset out = instances;
  for (QAInstance& inst : out) {
    for (AnswerChoice& c : inst.choices) {
      if (mode == PerturbMode::kRelation) {
        for (std::string& r : c.kg.relations) r = perm.at(r);
      } else {
        for (KGNode& n : c.kg.nodes) n.label = perm.at(n.label);
      }
    }
  }
  return out;
}

Dataset subsample_train(const Dataset& train, double fraction, uint64_t seed) {
  static const double kAllowed[] = {0.1, 0.3, 0.5, 0.7, 1.0};
  bool ok = false;
  for (double f : kAllowed) ok = ok || std::abs(fraction - f) < 1e-9;
  if (!ok) throw std::runtime_error("subsample_train: unsupported fraction");

  const size_t n = train.size();
  const size_t m = static_cast<size_t>(std::lround(fraction * static_cast<double>(n)));
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = Rng(seed).sub("subsample");
  rng.shuffle(idx);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.reserve(m);
  for (size_t i : idx) out.push_back(train[i]);
  return out;
}

void write_tags(const std::map<std::string, UsefulnessTag>& tags, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_tags: cannot write " + path);
  for (const auto& [id, tag] : tags) {
    out << json{{"id", id}, {"tag", usefulness_tag_name(tag)}}.dump() << '\n';
  }
}

std::map<std::string, UsefulnessTag> read_tags(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_tags: cannot open " + path);
  std::map<std::string, UsefulnessTag> tags;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string name = j.at("tag").get<std::string>();
    UsefulnessTag tag = name == "KG_USEFUL" ? UsefulnessTag::kKgUseful
                        : name == "TEXT_USEFUL" ? UsefulnessTag::kTextUseful
                                                : UsefulnessTag::kNeither;
    tags[j.at("id").get<std::string>()] = tag;
  }
  return tags;
}

}  // namespace kgsal
