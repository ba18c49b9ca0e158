#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kgsal {

enum class NodeType { kQuestion, kAnswer, kIntermediate };

std::string node_type_tag(NodeType t);
NodeType node_type_from_tag(const std::string& tag);

struct KGNode {
  int id = 0;  // dense: id == position in ContextKG::nodes
  std::string label;
  NodeType type = NodeType::kIntermediate;
};

struct KGEdge {
  int head = 0;      // node index
  int relation = 0;  // index into ContextKG::relations
  int tail = 0;      // node index
};

struct KGPath {
  std::vector<int> edges;  // 1 or 2 edge indices (1-hop or 2-hop)
};

// Per-(question, choice) contextualized subgraph. Immutable after construction.
struct ContextKG {
  std::vector<KGNode> nodes;
  std::vector<std::string> relations;
  std::vector<KGEdge> edges;
  std::vector<KGPath> paths;
};

struct AnswerChoice {
  std::vector<std::string> text;
  ContextKG kg;
};

struct QAInstance {
  std::string id;
  std::vector<std::string> question;
  std::vector<AnswerChoice> choices;
  int target = 0;
};

using Dataset = std::vector<QAInstance>;

// ---------------------------------------------------------------------------
// Explanation units and saliency records

enum class UnitKind { kGraph, kNode, kPath };

struct Unit {
  UnitKind kind = UnitKind::kGraph;
  int ref = -1;  // node index or path index; -1 for kGraph

  bool operator==(const Unit&) const = default;
};

Unit graph_unit();
Unit node_unit(int node_index);
Unit path_unit(int path_index);

// One scored unit. `s` must equal +phi or -phi (sign per correctness of the
// owning answer choice); enforced by make_saliency_record.
struct SaliencyRecord {
  Unit unit;
  double phi = 0.0;
  double s = 0.0;
  int y = 0;
  bool degenerate = false;  // e.g. occlusion fallback on a single-unit KG
};

SaliencyRecord make_saliency_record(Unit unit, double phi, bool is_correct,
                                    bool degenerate = false);

enum class ExplMethod { kEnsemble, kGrad, kOccl, kRandom, kHeuristic };
enum class Granularity { kCoarse, kFine };

std::string expl_method_tag(ExplMethod m);
ExplMethod expl_method_from_tag(const std::string& tag);
std::string granularity_tag(Granularity g);
Granularity granularity_from_tag(const std::string& tag);

struct ExplanationCache {
  ExplMethod method = ExplMethod::kEnsemble;
  Granularity granularity = Granularity::kCoarse;
  double threshold_T = 0.01;
  double top_k_percent = 10.0;
  std::string model_hash;       // KG model checkpoint hash (when applicable)
  std::string model_nokg_hash;  // No-KG model checkpoint hash (ensemble only)
  std::map<std::pair<std::string, int>, std::vector<SaliencyRecord>> records;

  const std::vector<SaliencyRecord>& at(const std::string& instance_id, int choice) const;
  bool contains(const std::string& instance_id, int choice) const;
};

// ---------------------------------------------------------------------------
// Validation

// Empty result iff all ContextKG invariants hold. Each violation names the
// offending field and index.
std::vector<std::string> validate_kg(const ContextKG& kg);

std::vector<std::string> validate_instance(const QAInstance& inst);

// ---------------------------------------------------------------------------
// Serialization (JSON-lines; see README for the schema)

void serialize_dataset(const Dataset& instances, const std::string& destination);
Dataset deserialize_dataset(const std::string& path);

void save_cache(const ExplanationCache& cache, const std::string& destination);
ExplanationCache load_cache(const std::string& path);

bool instances_equal(const QAInstance& a, const QAInstance& b);
bool datasets_equal(const Dataset& a, const Dataset& b);

}  // namespace kgsal
