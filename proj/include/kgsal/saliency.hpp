#pragma once

#include <string>
#include <vector>

#include "kgsal/datamodel.hpp"
#include "kgsal/models.hpp"
#include "kgsal/train.hpp"

namespace kgsal {

// Ensemble coarse score: probability gap between the KG and No-KG models,
// signed by whether this answer choice is the correct one.
double coarse_score(double p_kg, double p_nokg, bool is_correct);

// y_c = 1 iff s_c > T (strict); ties map to "KG not useful".
int binarize_coarse(double s_c, double T);

// s_f = phi for correct choices, -phi otherwise.
double sign_fine(double phi, bool is_correct);

// Exactly max(1, ceil(k_percent/100 * n)) positives; every positive's score is
// >= every negative's; ties broken by lower unit index.
std::vector<int> binarize_topk(const std::vector<double>& scores, double k_percent);

// gradient x input attribution for every fine unit of one choice's KG.
// Node units: dot(unit embedding, d p_choice / d unit embedding).
// Path units: sum of the constituent node/relation embedding scores.
std::vector<double> phi_grad(Model& model, const QAInstance& inst, int choice);

// per-choice phi vectors from a single forward pass (one backward per choice)
std::vector<std::vector<double>> phi_grad_all(Model& model, const QAInstance& inst);

struct OcclResult {
  std::vector<double> phi;
  std::vector<bool> degenerate;  // true where the zero-graph fallback was used
};

// leave-one-out attribution: p drop when the unit is masked out of attention
// pooling (surviving weights renormalized). A single-unit KG falls back to a
// zero graph embedding and is flagged.
OcclResult phi_occl(Model& model, const QAInstance& inst, int choice);

// graph-embedding-level coarse ablation scores (raw, unsigned)
double coarse_phi_grad(Model& model, const QAInstance& inst, int choice);
double coarse_phi_occl(Model& model, const QAInstance& inst, int choice);

// ---------------------------------------------------------------------------
// cache builders

std::string hash_hex(uint64_t h);

// Eq.-1-based coarse cache from frozen per-choice probability tables.
ExplanationCache build_coarse_cache_from_tables(const PredTable& kg_probs,
                                                const PredTable& nokg_probs,
                                                const Dataset& data, double T,
                                                const std::string& model_hash = "",
                                                const std::string& model_nokg_hash = "");

ExplanationCache build_coarse_ensemble_cache(Model& f_kg, Model& f_nokg,
                                             const Dataset& data, double T);

// method is kGrad or kOccl
ExplanationCache build_fine_cache(Model& f_kg, const Dataset& data, ExplMethod method,
                                  double k_percent);

// coarse ablation cache: Grad/Occl computed on the graph embedding itself
ExplanationCache build_coarse_ablation_cache(Model& f_kg, const Dataset& data,
                                             ExplMethod method, double T);

}  // namespace kgsal
