#include "kgsal/datamodel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kgsal {

using nlohmann::json;

std::string node_type_tag(NodeType t) {
  switch (t) {
    case NodeType::kQuestion: return "Q";
    case NodeType::kAnswer: return "A";
    case NodeType::kIntermediate: return "I";
  }
  throw std::logic_error("bad NodeType");
}

NodeType node_type_from_tag(const std::string& tag) {
  if (tag == "Q") return NodeType::kQuestion;
  if (tag == "A") return NodeType::kAnswer;
  if (tag == "I") return NodeType::kIntermediate;
  throw std::runtime_error("unknown node type tag: " + tag);
}

Unit graph_unit() { return Unit{UnitKind::kGraph, -1}; }
Unit node_unit(int node_index) { return Unit{UnitKind::kNode, node_index}; }
Unit path_unit(int path_index) { return Unit{UnitKind::kPath, path_index}; }

SaliencyRecord make_saliency_record(Unit unit, double phi, bool is_correct,
                                    bool degenerate) {
  SaliencyRecord rec;
  rec.unit = unit;
  rec.phi = phi;
  rec.s = is_correct ? phi : -phi;
  rec.y = 0;
  rec.degenerate = degenerate;
  return rec;
}

const std::vector<SaliencyRecord>& ExplanationCache::at(const std::string& instance_id,
                                                        int choice) const {
  auto it = records.find({instance_id, choice});
  if (it == records.end()) {
    throw std::runtime_error("explanation cache miss: (" + instance_id + ", " +
                             std::to_string(choice) + ")");
  }
  return it->second;
}

bool ExplanationCache::contains(const std::string& instance_id, int choice) const {
  return records.count({instance_id, choice}) > 0;
}

std::string expl_method_tag(ExplMethod m) {
  switch (m) {
    case ExplMethod::kEnsemble: return "ensemble";
    case ExplMethod::kGrad: return "grad";
    case ExplMethod::kOccl: return "occl";
    case ExplMethod::kRandom: return "random";
    case ExplMethod::kHeuristic: return "heuristic";
  }
  throw std::logic_error("bad ExplMethod");
}

ExplMethod expl_method_from_tag(const std::string& tag) {
  if (tag == "ensemble") return ExplMethod::kEnsemble;
  if (tag == "grad") return ExplMethod::kGrad;
  if (tag == "occl") return ExplMethod::kOccl;
  if (tag == "random") return ExplMethod::kRandom;
  if (tag == "heuristic") return ExplMethod::kHeuristic;
  throw std::runtime_error("unknown explanation method: " + tag);
}

std::string granularity_tag(Granularity g) {
  return g == Granularity::kCoarse ? "coarse" : "fine";
}

Granularity granularity_from_tag(const std::string& tag) {
  if (tag == "coarse") return Granularity::kCoarse;
  if (tag == "fine") return Granularity::kFine;
  throw std::runtime_error("unknown granularity: " + tag);
}

// ---------------------------------------------------------------------------
// Validation

std::vector<std::string> validate_kg(const ContextKG& kg) {
  std::vector<std::string> violations;
  const int n_nodes = static_cast<int>(kg.nodes.size());
  const int n_rels = static_cast<int>(kg.relations.size());
  const int n_edges = static_cast<int>(kg.edges.size());

  if (n_nodes == 0) violations.push_back("nodes: empty (at least one node required)");

  for (int i = 0; i < n_nodes; ++i) {
    if (kg.nodes[i].id != i) {
      violations.push_back("nodes[" + std::to_string(i) + "]: id " +
                           std::to_string(kg.nodes[i].id) +
                           " not dense (expected " + std::to_string(i) + ")");
    }
  }

  for (int i = 0; i < n_edges; ++i) {
    const KGEdge& e = kg.edges[i];
    if (e.head < 0 || e.head >= n_nodes || e.tail < 0 || e.tail >= n_nodes) {
      violations.push_back("edges[" + std::to_string(i) + "]: endpoint references missing node");
    }
    if (e.relation < 0 || e.relation >= n_rels) {
      violations.push_back("edges[" + std::to_string(i) + "]: relation index out of range");
    }
  }

  for (int i = 0; i < static_cast<int>(kg.paths.size()); ++i) {
    const KGPath& p = kg.paths[i];
    if (p.edges.empty() || p.edges.size() > 2) {
      violations.push_back("paths[" + std::to_string(i) + "]: has " +
                           std::to_string(p.edges.size()) + " edges (must be 1 or 2)");
      continue;
    }
    bool refs_ok = true;
    for (int ei : p.edges) {
      if (ei < 0 || ei >= n_edges) {
        violations.push_back("paths[" + std::to_string(i) + "]: edge index out of range");
        refs_ok = false;
      }
    }
    if (refs_ok && p.edges.size() == 2) {
      const KGEdge& a = kg.edges[p.edges[0]];
      const KGEdge& b = kg.edges[p.edges[1]];
      if (a.tail != b.head) {
        violations.push_back("paths[" + std::to_string(i) + "]: edges are not chained");
      }
    }
  }
  return violations;
}

std::vector<std::string> validate_instance(const QAInstance& inst) {
  std::vector<std::string> violations;
  if (inst.choices.size() < 2) {
    violations.push_back(inst.id + ": fewer than 2 answer choices");
  }
  if (inst.target < 0 || inst.target >= static_cast<int>(inst.choices.size())) {
    violations.push_back(inst.id + ": target index out of range");
  }
  for (size_t c = 0; c < inst.choices.size(); ++c) {
    for (const std::string& v : validate_kg(inst.choices[c].kg)) {
      violations.push_back(inst.id + "/choice " + std::to_string(c) + ": " + v);
    }
  }
  return violations;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization

namespace {

json kg_to_json(const ContextKG& kg) {
  json nodes = json::array();
  for (const KGNode& n : kg.nodes) {
    nodes.push_back({n.id, n.label, node_type_tag(n.type)});
  }
  json edges = json::array();
  for (const KGEdge& e : kg.edges) edges.push_back({e.head, e.relation, e.tail});
  json paths = json::array();
  for (const KGPath& p : kg.paths) paths.push_back(p.edges);
  return {{"nodes", nodes}, {"relations", kg.relations}, {"edges", edges}, {"paths", paths}};
}

ContextKG kg_from_json(const json& j) {
  ContextKG kg;
  for (const auto& n : j.at("nodes")) {
    kg.nodes.push_back({n.at(0).get<int>(), n.at(1).get<std::string>(),
                        node_type_from_tag(n.at(2).get<std::string>())});
  }
  kg.relations = j.at("relations").get<std::vector<std::string>>();
  for (const auto& e : j.at("edges")) {
    kg.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()});
  }
  for (const auto& p : j.at("paths")) {
    kg.paths.push_back({p.get<std::vector<int>>()});
  }
  return kg;
}

json instance_to_json(const QAInstance& inst) {
  json choices = json::array();
  for (const AnswerChoice& c : inst.choices) {
    choices.push_back({{"text", c.text}, {"kg", kg_to_json(c.kg)}});
  }
  return {{"id", inst.id}, {"question", inst.question}, {"choices", choices},
          {"target", inst.target}};
}

QAInstance instance_from_json(const json& j) {
  QAInstance inst;
  inst.id = j.at("id").get<std::string>();
  inst.question = j.at("question").get<std::vector<std::string>>();
  for (const auto& c : j.at("choices")) {
    AnswerChoice choice;
    choice.text = c.at("text").get<std::vector<std::string>>();
    choice.kg = kg_from_json(c.at("kg"));
    inst.choices.push_back(std::move(choice));
  }
  inst.target = j.at("target").get<int>();
  return inst;
}

}  // namespace

void serialize_dataset(const Dataset& instances, const std::string& destination) {
  for (const QAInstance& inst : instances) {
    auto violations = validate_instance(inst);
    if (!violations.empty()) {
      throw std::runtime_error("serialize_dataset: invariant violation in instance " +
                               inst.id + ": " + violations.front());
    }
  }
  std::ofstream out(destination);
  if (!out) throw std::runtime_error("serialize_dataset: cannot write " + destination);
  for (const QAInstance& inst : instances) {
    out << instance_to_json(inst).dump() << '\n';
  }
  if (!out) throw std::runtime_error("serialize_dataset: write failed for " + destination);
}

Dataset deserialize_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("deserialize_dataset: cannot open " + path);
  Dataset out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      out.push_back(instance_from_json(j));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed instance line: " + e.what());
    }
  }
  return out;
}

// Cache file: one header line, then one line per (instance, choice).
void save_cache(const ExplanationCache& cache, const std::string& destination) {
  std::ofstream out(destination);
  if (!out) throw std::runtime_error("save_cache: cannot write " + destination);
  json header = {{"method", expl_method_tag(cache.method)},
                 {"granularity", granularity_tag(cache.granularity)},
                 {"T", cache.threshold_T},
                 {"k", cache.top_k_percent},
                 {"model_hash", cache.model_hash},
                 {"model_nokg_hash", cache.model_nokg_hash}};
  out << header.dump() << '\n';
  for (const auto& [key, recs] : cache.records) {
    json jrecs = json::array();
    for (const SaliencyRecord& r : recs) {
      std::string kind = r.unit.kind == UnitKind::kGraph ? "graph"
                         : r.unit.kind == UnitKind::kNode ? "node" : "path";
      jrecs.push_back({{"kind", kind}, {"ref", r.unit.ref}, {"phi", r.phi},
                       {"s", r.s}, {"y", r.y}, {"deg", r.degenerate}});
    }
    out << json{{"id", key.first}, {"choice", key.second}, {"records", jrecs}}.dump() << '\n';
  }
}

ExplanationCache load_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cache: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_cache: empty file " + path);
  json header = json::parse(line);
  ExplanationCache cache;
  cache.method = expl_method_from_tag(header.at("method").get<std::string>());
  cache.granularity = granularity_from_tag(header.at("granularity").get<std::string>());
  cache.threshold_T = header.at("T").get<double>();
  cache.top_k_percent = header.at("k").get<double>();
  cache.model_hash = header.at("model_hash").get<std::string>();
  cache.model_nokg_hash = header.at("model_nokg_hash").get<std::string>();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    std::vector<SaliencyRecord> recs;
    for (const auto& r : j.at("records")) {
      SaliencyRecord rec;
      const std::string kind = r.at("kind").get<std::string>();
      rec.unit.kind = kind == "graph" ? UnitKind::kGraph
                      : kind == "node" ? UnitKind::kNode : UnitKind::kPath;
      rec.unit.ref = r.at("ref").get<int>();
      rec.phi = r.at("phi").get<double>();
      rec.s = r.at("s").get<double>();
      rec.y = r.at("y").get<int>();
      rec.degenerate = r.at("deg").get<bool>();
      recs.push_back(rec);
    }
    cache.records[{j.at("id").get<std::string>(), j.at("choice").get<int>()}] = std::move(recs);
  }
  return cache;
}

// ---------------------------------------------------------------------------

namespace {

bool kgs_equal(const ContextKG& a, const ContextKG& b) {
  if (a.nodes.size() != b.nodes.size() || a.relations != b.relations ||
      a.edges.size() != b.edges.size() || a.paths.size() != b.paths.size()) {
    return false;
  }
  for (size_t i = 0; i < a.nodes.size(); ++i) {
    if (a.nodes[i].id != b.nodes[i].id || a.nodes[i].label != b.nodes[i].label ||
        a.nodes[i].type != b.nodes[i].type) {
      return false;
    }
  }
  for (size_t i = 0; i < a.edges.size(); ++i) {
    if (a.edges[i].head != b.edges[i].head || a.edges[i].relation != b.edges[i].relation ||
        a.edges[i].tail != b.edges[i].tail) {
      return false;
    }
  }
  for (size_t i = 0; i < a.paths.size(); ++i) {
    if (a.paths[i].edges != b.paths[i].edges) return false;
  }
  return true;
}

}  // namespace

bool instances_equal(const QAInstance& a, const QAInstance& b) {
  if (a.id != b.id || a.question != b.question || a.target != b.target ||
      a.choices.size() != b.choices.size()) {
    return false;
  }
  for (size_t i = 0; i < a.choices.size(); ++i) {
    if (a.choices[i].text != b.choices[i].text) return false;
    if (!kgs_equal(a.choices[i].kg, b.choices[i].kg)) return false;
  }
  return true;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!instances_equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace kgsal
