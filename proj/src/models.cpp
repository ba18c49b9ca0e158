#include "kgsal/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace kgsal {

using ad::Var;
using nlohmann::json;

namespace {

Vocab make_vocab(const std::vector<std::string>& sorted_unique) {
  Vocab v;
  v.items.push_back("<unk>");
  for (const std::string& s : sorted_unique) v.items.push_back(s);
  for (int i = 0; i < static_cast<int>(v.items.size()); ++i) v.index[v.items[i]] = i;
  return v;
}

}  // namespace

Vocabs build_vocabs(const Dataset& train) {
  std::vector<std::string> tokens, concepts, relations;
  for (const QAInstance& inst : train) {
    tokens.insert(tokens.end(), inst.question.begin(), inst.question.end());
    for (const AnswerChoice& c : inst.choices) {
      tokens.insert(tokens.end(), c.text.begin(), c.text.end());
      for (const KGNode& n : c.kg.nodes) concepts.push_back(n.label);
      relations.insert(relations.end(), c.kg.relations.begin(), c.kg.relations.end());
    }
  }
  auto dedup = [](std::vector<std::string>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  dedup(tokens);
  dedup(concepts);
  dedup(relations);
  return Vocabs{make_vocab(tokens), make_vocab(concepts), make_vocab(relations)};
}

// ---------------------------------------------------------------------------

Var Model::param(const std::string& name, int rows, int cols, double stddev, Rng& rng) {
  std::vector<double> init(static_cast<size_t>(rows) * cols);
  for (double& x : init) x = stddev > 0.0 ? rng.next_normal(0.0, stddev) : 0.0;
  Var v = tape_.leaf(init);
  params_.push_back({name, v});
  param_by_name_[name] = v;
  return v;
}

Model::Model(ModelConfig cfg, Vocabs vocabs, uint64_t init_seed)
    : cfg_(std::move(cfg)), vocabs_(std::move(vocabs)), init_seed_(init_seed) {
  Rng rng = Rng(init_seed).sub("init");
  const int d = cfg_.dim;
  const int h = cfg_.text_hidden;
  const double emb_std = 0.5;
  const double mat_std = 1.0 / std::sqrt(static_cast<double>(d));

  param("tok_emb", vocabs_.tokens.size(), d, emb_std, rng);
  param("text_W1", h, d, mat_std, rng);
  param("text_b1", 1, h, 0.0, rng);
  param("text_W2", d, h, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  param("text_b2", 1, d, 0.0, rng);

  if (cfg_.use_kg) {
    param("concept_emb", vocabs_.concepts.size(), d, emb_std, rng);
    param("type_emb", 3, d, emb_std, rng);
    param("rel_emb", vocabs_.relations.size(), d, emb_std, rng);
    if (cfg_.style == EncoderStyle::kNodeAttn && cfg_.relational_layer) {
      param("rel_W_self", d, d, mat_std, rng);
      param("rel_W_msg", d, d, mat_std, rng);
      param("rel_b", 1, d, 0.0, rng);
    }
    if (cfg_.style == EncoderStyle::kPathAttn) {
      param("path_W", d, d, mat_std, rng);
      param("path_b", 1, d, 0.0, rng);
    }
    param("att_W", d, d, mat_std, rng);
  }

  const int task_in = cfg_.use_kg ? 2 * d : d;
  const double task_std = 1.0 / std::sqrt(static_cast<double>(task_in));
  if (cfg_.head == HeadKind::kPlausibility) {
    if (cfg_.predictor_hidden > 0) {
      param("task_W1", cfg_.predictor_hidden, task_in, task_std, rng);
      param("task_b1", 1, cfg_.predictor_hidden, 0.0, rng);
      param("task_w2", 1, cfg_.predictor_hidden,
            1.0 / std::sqrt(static_cast<double>(cfg_.predictor_hidden)), rng);
      param("task_b2", 1, 1, 0.0, rng);
    } else {
      param("task_w", 1, task_in, task_std, rng);
      param("task_b", 1, 1, 0.0, rng);
    }
  } else {
    param("use_w", 1, task_in, task_std, rng);
    param("use_b", 1, 1, 0.0, rng);
  }
  param_mark_ = tape_.mark();
}

int Model::unit_count(const ContextKG& kg) const {
  return cfg_.style == EncoderStyle::kNodeAttn ? static_cast<int>(kg.nodes.size())
                                               : static_cast<int>(kg.paths.size());
}

Var Model::dropout_vec(Var v, Rng* rng) {
  if (cfg_.dropout <= 0.0 || rng == nullptr) return v;
  const int n = tape_.size(v);
  std::vector<double> mask(n);
  const double keep = 1.0 - cfg_.dropout;
  for (double& m : mask) m = rng->next_bool(keep) ? 1.0 / keep : 0.0;
  return tape_.cmul(v, tape_.leaf(mask));
}

Var Model::embed_statement(const QAInstance& inst, int choice, Rng* dropout_rng) {
  // statement = question ⊕ choice text; ids are sorted so mean pooling is
  // exactly permutation invariant
  std::vector<int> ids;
  for (const std::string& t : inst.question) ids.push_back(vocabs_.tokens.lookup(t));
  for (const std::string& t : inst.choices[choice].text) {
    ids.push_back(vocabs_.tokens.lookup(t));
  }
  std::sort(ids.begin(), ids.end());

  const int d = cfg_.dim;
  Var tok_emb = param_by_name_.at("tok_emb");
  std::vector<Var> rows;
  rows.reserve(ids.size());
  for (int id : ids) rows.push_back(tape_.row(tok_emb, id, d));
  Var pooled = tape_.mean_many(rows);

  Var h1 = tape_.tanh_(tape_.add(
      tape_.matvec(param_by_name_.at("text_W1"), pooled, cfg_.text_hidden),
      param_by_name_.at("text_b1")));
  Var x = tape_.add(tape_.matvec(param_by_name_.at("text_W2"), h1, d),
                    param_by_name_.at("text_b2"));
  return dropout_vec(x, dropout_rng);
}

void Model::encode_choice(const QAInstance& inst, int choice, Var x, ChoiceTrace& tr,
                          const AttentionMask* mask, Rng* dropout_rng,
                          const EmbedOffset* offset) {
  const ContextKG& kg = inst.choices[choice].kg;
  const int d = cfg_.dim;
  const int n_nodes = static_cast<int>(kg.nodes.size());

  Var concept_emb = param_by_name_.at("concept_emb");
  Var type_emb = param_by_name_.at("type_emb");
  Var rel_emb = param_by_name_.at("rel_emb");

  // per-node input embeddings (the node unit embeddings)
  tr.node_embeds.clear();
  tr.node_embeds.reserve(n_nodes);
  for (int v = 0; v < n_nodes; ++v) {
    const KGNode& node = kg.nodes[v];
    Var e = tape_.add(
        tape_.row(concept_emb, vocabs_.concepts.lookup(node.label), d),
        tape_.row(type_emb, static_cast<int>(node.type), d));
    if (offset && offset->choice == choice &&
        offset->slot == EmbedOffset::Slot::kNodeEmbed && offset->index == v) {
      e = tape_.add(e, tape_.leaf(offset->delta));
    }
    tr.node_embeds.push_back(e);
  }

  // per-edge relation embeddings
  tr.rel_embeds.clear();
  tr.rel_embeds.reserve(kg.edges.size());
  for (int e = 0; e < static_cast<int>(kg.edges.size()); ++e) {
    Var r = tape_.row(rel_emb, vocabs_.relations.lookup(kg.relations[kg.edges[e].relation]), d);
    if (offset && offset->choice == choice &&
        offset->slot == EmbedOffset::Slot::kRelEmbed && offset->index == e) {
      r = tape_.add(r, tape_.leaf(offset->delta));
    }
    tr.rel_embeds.push_back(r);
  }

  // unit representations
  std::vector<Var> unit_reprs;
  if (cfg_.style == EncoderStyle::kNodeAttn) {
    tr.unit_embeds = tr.node_embeds;
    if (cfg_.relational_layer) {
      Var w_self = param_by_name_.at("rel_W_self");
      Var w_msg = param_by_name_.at("rel_W_msg");
      Var b = param_by_name_.at("rel_b");
      std::vector<std::vector<Var>> incoming(n_nodes);
      for (int e = 0; e < static_cast<int>(kg.edges.size()); ++e) {
        const KGEdge& edge = kg.edges[e];
        incoming[edge.tail].push_back(
            tape_.add(tr.node_embeds[edge.head], tr.rel_embeds[e]));
      }
      for (int v = 0; v < n_nodes; ++v) {
        Var msg = incoming[v].empty() ? tape_.leaf_zeros(d)
                                      : tape_.mean_many(incoming[v]);
        Var pre = tape_.add(tape_.add(tape_.matvec(w_self, tr.node_embeds[v], d),
                                      tape_.matvec(w_msg, msg, d)),
                            b);
        unit_reprs.push_back(tape_.tanh_(pre));
      }
    } else {
      unit_reprs = tr.node_embeds;
    }
  } else {
    Var w_path = param_by_name_.at("path_W");
    Var b_path = param_by_name_.at("path_b");
    for (const KGPath& path : kg.paths) {
      const KGEdge& first = kg.edges[path.edges.front()];
      const KGEdge& last = kg.edges[path.edges.back()];
      // head/tail node embeddings plus every relation embedding; the
      // intermediate node of a 2-hop path is deliberately not used
      std::vector<Var> parts = {tr.node_embeds[first.head], tr.node_embeds[last.tail]};
      for (int e : path.edges) parts.push_back(tr.rel_embeds[e]);
      Var z = tape_.tanh_(tape_.add(tape_.matvec(w_path, tape_.sum_many(parts), d), b_path));
      unit_reprs.push_back(z);
    }
  }

  const int n_units = static_cast<int>(unit_reprs.size());
  if (n_units == 0) throw ad::DegenerateMaskError();
  if (mask && static_cast<int>(mask->weights.size()) != n_units) {
    throw std::runtime_error("attention mask length mismatch: " +
                             std::to_string(mask->weights.size()) + " vs " +
                             std::to_string(n_units) + " units");
  }

  // text-conditioned bilinear attention
  Var q = tape_.matvec(param_by_name_.at("att_W"), x, d);
  std::vector<Var> scores;
  scores.reserve(n_units);
  for (Var h : unit_reprs) scores.push_back(tape_.dot(q, h));
  Var score_vec = tape_.stack_scalars(scores);
  tr.alpha = mask ? tape_.masked_softmax(score_vec, mask->weights)
                  : tape_.softmax(score_vec);
  tr.g = dropout_vec(tape_.weighted_sum(tr.alpha, unit_reprs), dropout_rng);
}

ForwardTrace Model::build_forward(const QAInstance& inst, const MaskSet* masks,
                                  Rng* dropout_rng, const EmbedOffset* offset) {
  tape_.reset_to(param_mark_);
  ForwardTrace trace;
  const int n_choices = static_cast<int>(inst.choices.size());
  trace.choices.resize(n_choices);

  std::vector<Var> rhos;
  for (int c = 0; c < n_choices; ++c) {
    ChoiceTrace& tr = trace.choices[c];
    tr.x = embed_statement(inst, c, dropout_rng);

    Var task_in = tr.x;
    if (cfg_.use_kg) {
      const AttentionMask* mask = masks ? &(*masks)[c] : nullptr;
      encode_choice(inst, c, tr.x, tr, mask, dropout_rng, offset);
      task_in = tape_.concat(tr.x, tr.g);
    }

    if (cfg_.head == HeadKind::kPlausibility) {
      if (cfg_.predictor_hidden > 0) {
        Var h = tape_.tanh_(tape_.add(
            tape_.matvec(param_by_name_.at("task_W1"), task_in, cfg_.predictor_hidden),
            param_by_name_.at("task_b1")));
        tr.rho = tape_.add(tape_.dot(param_by_name_.at("task_w2"), h),
                           param_by_name_.at("task_b2"));
      } else {
        tr.rho = tape_.add(tape_.dot(param_by_name_.at("task_w"), task_in),
                           param_by_name_.at("task_b"));
      }
      rhos.push_back(tr.rho);
    } else {
      tr.usefulness = tape_.sigmoid_(tape_.add(
          tape_.dot(param_by_name_.at("use_w"), task_in), param_by_name_.at("use_b")));
    }
  }

  if (cfg_.head == HeadKind::kPlausibility) {
    trace.logits = tape_.stack_scalars(rhos);
    trace.p = tape_.softmax(trace.logits);
  }
  return trace;
}

ModelOutput Model::output_from_trace(const ForwardTrace& trace) const {
  ModelOutput out;
  const int n_choices = static_cast<int>(trace.choices.size());
  if (trace.logits.valid()) {
    auto lv = tape_.value(trace.logits);
    auto pv = tape_.value(trace.p);
    out.rho.assign(lv.begin(), lv.end());
    out.p.assign(pv.begin(), pv.end());
  }
  out.attention.resize(n_choices);
  for (int c = 0; c < n_choices; ++c) {
    const ChoiceTrace& tr = trace.choices[c];
    if (tr.alpha.valid()) {
      auto av = tape_.value(tr.alpha);
      out.attention[c].assign(av.begin(), av.end());
    }
    if (tr.usefulness.valid()) out.usefulness.push_back(tape_.scalar(tr.usefulness));
  }
  return out;
}

ModelOutput Model::forward(const QAInstance& inst, const MaskSet* masks) {
  return output_from_trace(build_forward(inst, masks));
}

ModelOutput Model::forward_zero_graph(const QAInstance& inst, int choice) {
  if (!cfg_.use_kg || cfg_.head != HeadKind::kPlausibility) {
    throw std::logic_error("forward_zero_graph requires a KG plausibility model");
  }
  tape_.reset_to(param_mark_);
  ForwardTrace trace;
  const int n_choices = static_cast<int>(inst.choices.size());
  trace.choices.resize(n_choices);
  std::vector<Var> rhos;
  for (int c = 0; c < n_choices; ++c) {
    ChoiceTrace& tr = trace.choices[c];
    tr.x = embed_statement(inst, c, nullptr);
    Var g;
    if (c == choice) {
      g = tape_.leaf_zeros(cfg_.dim);
    } else {
      encode_choice(inst, c, tr.x, tr, nullptr, nullptr, nullptr);
      g = tr.g;
    }
    Var task_in = tape_.concat(tr.x, g);
    if (cfg_.predictor_hidden > 0) {
      Var h = tape_.tanh_(tape_.add(
          tape_.matvec(param_by_name_.at("task_W1"), task_in, cfg_.predictor_hidden),
          param_by_name_.at("task_b1")));
      tr.rho = tape_.add(tape_.dot(param_by_name_.at("task_w2"), h),
                         param_by_name_.at("task_b2"));
    } else {
      tr.rho = tape_.add(tape_.dot(param_by_name_.at("task_w"), task_in),
                         param_by_name_.at("task_b"));
    }
    rhos.push_back(tr.rho);
  }
  trace.logits = tape_.stack_scalars(rhos);
  trace.p = tape_.softmax(trace.logits);
  return output_from_trace(trace);
}

uint64_t Model::param_hash() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (const ParamInfo& p : params_) {
    auto vals = tape_.value(p.var);
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(vals.data());
    for (size_t i = 0; i < vals.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

std::vector<double> Model::snapshot_params() const {
  std::vector<double> snap;
  for (const ParamInfo& p : params_) {
    auto vals = tape_.value(p.var);
    snap.insert(snap.end(), vals.begin(), vals.end());
  }
  return snap;
}

void Model::restore_params(const std::vector<double>& snapshot) {
  size_t off = 0;
  for (const ParamInfo& p : params_) {
    auto vals = tape_.value_mut(p.var);
    std::copy(snapshot.begin() + off, snapshot.begin() + off + vals.size(), vals.begin());
    off += vals.size();
  }
  if (off != snapshot.size()) throw std::logic_error("restore_params: size mismatch");
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

json vocab_to_json(const Vocab& v) {
  return json(std::vector<std::string>(v.items.begin() + 1, v.items.end()));
}

Vocab vocab_from_json(const json& j) {
  return make_vocab(j.get<std::vector<std::string>>());
}

}  // namespace

void Model::save(const std::string& path) const {
  json jparams;
  for (const ParamInfo& p : params_) {
    auto vals = tape_.value(p.var);
    jparams[p.name] = std::vector<double>(vals.begin(), vals.end());
  }
  json j = {
      {"config",
       {{"use_kg", cfg_.use_kg},
        {"style", cfg_.style == EncoderStyle::kNodeAttn ? "node_attn" : "path_attn"},
        {"head", cfg_.head == HeadKind::kPlausibility ? "plausibility" : "usefulness"},
        {"dim", cfg_.dim},
        {"text_hidden", cfg_.text_hidden},
        {"predictor_hidden", cfg_.predictor_hidden},
        {"relational_layer", cfg_.relational_layer},
        {"dropout", cfg_.dropout}}},
      {"vocabs",
       {{"tokens", vocab_to_json(vocabs_.tokens)},
        {"concepts", vocab_to_json(vocabs_.concepts)},
        {"relations", vocab_to_json(vocabs_.relations)}}},
      {"init_seed", init_seed_},
      {"params", jparams},
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Model::save: cannot write " + path);
  out << j.dump();
}

Model Model::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Model::load: cannot open " + path);
  json j = json::parse(in);
  const json& jc = j.at("config");
  ModelConfig cfg;
  cfg.use_kg = jc.at("use_kg").get<bool>();
  cfg.style = jc.at("style").get<std::string>() == "node_attn" ? EncoderStyle::kNodeAttn
                                                               : EncoderStyle::kPathAttn;
  cfg.head = jc.at("head").get<std::string>() == "plausibility" ? HeadKind::kPlausibility
                                                                : HeadKind::kUsefulness;
  cfg.dim = jc.at("dim").get<int>();
  cfg.text_hidden = jc.at("text_hidden").get<int>();
  cfg.predictor_hidden = jc.at("predictor_hidden").get<int>();
  cfg.relational_layer = jc.at("relational_layer").get<bool>();
  cfg.dropout = jc.at("dropout").get<double>();

  Vocabs vocabs{vocab_from_json(j.at("vocabs").at("tokens")),
                vocab_from_json(j.at("vocabs").at("concepts")),
                vocab_from_json(j.at("vocabs").at("relations"))};
  Model m(cfg, vocabs, j.at("init_seed").get<uint64_t>());
  const json& jp = j.at("params");
  for (const ParamInfo& p : m.params_) {
    auto vals = m.tape_.value_mut(p.var);
    std::vector<double> stored = jp.at(p.name).get<std::vector<double>>();
    if (stored.size() != vals.size()) {
      throw std::runtime_error("Model::load: parameter size mismatch for " + p.name);
    }
    std::copy(stored.begin(), stored.end(), vals.begin());
  }
  return m;
}

MaskSet masks_from_cache(const ExplanationCache& cache, const QAInstance& inst,
                         const Model& model) {
  MaskSet masks;
  for (int c = 0; c < static_cast<int>(inst.choices.size()); ++c) {
    const auto& records = cache.at(inst.id, c);
    const int n_units = model.unit_count(inst.choices[c].kg);
    AttentionMask m;
    m.weights.assign(n_units, 0.0);
    int covered = 0;
    for (const SaliencyRecord& r : records) {
      if (r.unit.kind == UnitKind::kGraph) continue;
      if (r.unit.ref < 0 || r.unit.ref >= n_units) {
        throw std::runtime_error("masks_from_cache: stale cache for " + inst.id);
      }
      m.weights[r.unit.ref] = static_cast<double>(r.y);
      ++covered;
    }
    if (covered != n_units) {
      throw std::runtime_error("masks_from_cache: cache does not cover every unit of " +
                               inst.id + " choice " + std::to_string(c));
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace kgsal
