#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kgsal/autodiff.hpp"
#include "kgsal/datamodel.hpp"
#include "kgsal/rng.hpp"

namespace kgsal {

// Table 1 unit kinds: node-attention encoders attend over nodes, path-attention
// encoders over paths.
enum class EncoderStyle { kNodeAttn, kPathAttn };

enum class HeadKind { kPlausibility, kUsefulness };

struct ModelConfig {
  bool use_kg = true;
  EncoderStyle style = EncoderStyle::kNodeAttn;
  HeadKind head = HeadKind::kPlausibility;
  int dim = 64;
  int text_hidden = 64;
  int predictor_hidden = 0;  // 0 => linear task head
  bool relational_layer = true;
  double dropout = 0.0;
};

// id 0 is reserved for UNK in every vocabulary.
struct Vocab {
  std::vector<std::string> items;  // items[0] == "<unk>"
  std::map<std::string, int> index;

  int lookup(const std::string& s) const {
    auto it = index.find(s);
    return it == index.end() ? 0 : it->second;
  }
  int size() const { return static_cast<int>(items.size()); }
};

struct Vocabs {
  Vocab tokens;
  Vocab concepts;
  Vocab relations;
};

Vocabs build_vocabs(const Dataset& train);

// Per-unit weights in [0,1]; applied as alpha <- normalize(alpha ⊙ m).
struct AttentionMask {
  std::vector<double> weights;
};

using MaskSet = std::vector<AttentionMask>;  // one per answer choice

struct ModelOutput {
  std::vector<double> rho;                      // plausibility per choice
  std::vector<double> p;                        // softmax(rho)
  std::vector<std::vector<double>> attention;   // per choice; empty for No-KG
  std::vector<double> usefulness;               // usefulness head only
};

// Tape handles exposed for saliency computation.
struct ChoiceTrace {
  ad::Var x;                             // statement embedding
  ad::Var g;                             // graph embedding (invalid for No-KG)
  ad::Var alpha;                         // attention weights over units
  std::vector<ad::Var> unit_embeds;      // node-unit input embeddings (node attn)
  std::vector<ad::Var> node_embeds;      // per-node e_v (path attn constituents)
  std::vector<ad::Var> rel_embeds;       // per-edge relation embedding (path attn)
  ad::Var rho;
  ad::Var usefulness;
};

struct ForwardTrace {
  ad::Var logits;
  ad::Var p;
  std::vector<ChoiceTrace> choices;
};

// Additive probe on one embedding slot, used by finite-difference checks.
struct EmbedOffset {
  int choice = 0;
  enum class Slot { kNodeEmbed, kRelEmbed } slot = Slot::kNodeEmbed;
  int index = 0;  // node index or edge index
  std::vector<double> delta;
};

struct ParamInfo {
  std::string name;
  ad::Var var;
};

class Model {
 public:
  Model(ModelConfig cfg, Vocabs vocabs, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabs& vocabs() const { return vocabs_; }

  int unit_count(const ContextKG& kg) const;

  // Builds the full instance forward pass on the internal tape. The returned
  // trace is valid until the next build_forward/forward call on this model.
  ForwardTrace build_forward(const QAInstance& inst, const MaskSet* masks = nullptr,
                             Rng* dropout_rng = nullptr,
                             const EmbedOffset* offset = nullptr);

  ModelOutput forward(const QAInstance& inst, const MaskSet* masks = nullptr);

  // Forward pass with choice `choice`'s graph embedding replaced by zeros
  // (coarse occlusion ablation).
  ModelOutput forward_zero_graph(const QAInstance& inst, int choice);

  ModelOutput output_from_trace(const ForwardTrace& trace) const;

  ad::Tape& tape() { return tape_; }
  int param_mark() const { return param_mark_; }
  const std::vector<ParamInfo>& params() const { return params_; }

  uint64_t param_hash() const;
  std::vector<double> snapshot_params() const;
  void restore_params(const std::vector<double>& snapshot);

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  ad::Var param(const std::string& name, int rows, int cols, double stddev, Rng& rng);
  ad::Var embed_statement(const QAInstance& inst, int choice, Rng* dropout_rng);
  void encode_choice(const QAInstance& inst, int choice, ad::Var x, ChoiceTrace& tr,
                     const AttentionMask* mask, Rng* dropout_rng,
                     const EmbedOffset* offset);
  ad::Var dropout_vec(ad::Var v, Rng* rng);

  ModelConfig cfg_;
  Vocabs vocabs_;
  uint64_t init_seed_ = 0;
  ad::Tape tape_;
  std::vector<ParamInfo> params_;
  std::map<std::string, ad::Var> param_by_name_;
  int param_mark_ = 0;
};

// Builds hard attention masks for one instance from a fine explanation cache.
MaskSet masks_from_cache(const ExplanationCache& cache, const QAInstance& inst,
                         const Model& model);

}  // namespace kgsal
