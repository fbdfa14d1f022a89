#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xrhead/layers.hpp"

namespace xrhead {

enum class HeadKind { Align, Pwcs, Mlps, CrmFull, CrmBase, CrmXclass, CrmXpart };

/// Config-string names: ALIGN, PWCS, MLPS, CRM_FULL, CRM_BASE, CRM_XCLASS, CRM_XPART.
std::string_view head_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);
std::vector<HeadKind> all_head_kinds();

/// Heads whose logits are cosine similarities in [-1, 1].
bool is_cosine_head(HeadKind kind);
bool is_crm_head(HeadKind kind);

/// A differentiable map standing in for a classifier.
using Classifier = std::function<Tensor(const Tensor&)>;

/// logits[w] = <v/|v|, t_w/|t_w|>. v is [E] (-> [W]) or [B x E] (-> [B x W]); t is [W x E].
Tensor align_predict(const Tensor& v, const Tensor& t);

/// logits[w] = (1/S) sum_s cos(V_s, T[w, s]). V is [S x E] or [B x S x E]; T is [W x S x E].
Tensor pwcs_predict(const Tensor& V, const Tensor& T);

/// Flat index of <V_s, T[w, s']> inside a cross relation.
constexpr std::size_t relation_index(std::size_t s, std::size_t s_prompt, std::size_t w,
                                     std::size_t parts, std::size_t classes) {
  return s * (parts * classes) + s_prompt * classes + w;
}

/// R[relation_index(s, s', w)] = <V_s, T[w, s']>, length S*S*W per image.
/// V is [S x E] (-> [S*S*W]) or [B x S x E] (-> [B x S*S*W]).
/// With `normalize_prompts` the rows of T are l2-normalized first.
Tensor cross_relation(const Tensor& V, const Tensor& T, bool normalize_prompts = false);

/// Gather orders used by the CRM variants, as indices into one R.
/// Diagonal entries (s == s'), ordered class-major: position w*S + s.
std::vector<std::size_t> diagonal_indices(std::size_t parts, std::size_t classes);
/// Full per-class blocks, ordered (w, s, s'): position w*S*S + s*S + s'.
std::vector<std::size_t> block_indices(std::size_t parts, std::size_t classes);

/// Input rows the given CRM kind feeds its classifier, from R [B x S*S*W]:
/// FULL [B x SSW], BASE [B*W x S], XCLASS [B x S*W], XPART [B*W x S*S].
Tensor crm_inputs(const Tensor& R, HeadKind kind, std::size_t parts, std::size_t classes);

/// logits = theta(R), R [B x S*S*W] -> [B x W].
Tensor crm_predict(const Tensor& R, const Classifier& theta);

/// BASE / XPART apply a shared theta to each class block (theta output width 1);
/// XCLASS applies theta to all diagonals at once (output width W).
Tensor crm_variant_predict(const Tensor& R, HeadKind kind, std::size_t parts, std::size_t classes,
                           const Classifier& theta);

/// (1/S) sum_s f_s(V_s). V is [B x S x E]; one classifier per part.
Tensor mlps_predict(const Tensor& V, std::span<const Classifier> heads);

struct HeadConfig {
  HeadKind kind = HeadKind::CrmFull;
  std::size_t parts = 4;
  std::size_t classes = 20;
  std::size_t dim = 64;
  std::size_t crm_hidden = 512;     // hidden width of the FULL and XCLASS classifiers
  std::size_t shared_hidden = 0;    // BASE / XPART shared classifier width; 0 means 4*S
  std::size_t mlp_hidden = 512;     // per-part MLPS width
  bool normalize_prompts = false;   // l2-normalize T rows before building R
};

/// A prediction strategy together with its trainable classifier(s).
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(const HeadConfig& config, std::mt19937_64& rng);

  /// V [B x S x E], T [W x S x E] -> logits [B x W].
  Tensor forward(const Tensor& V, const Tensor& T, bool training);

  const HeadConfig& config() const { return config_; }
  HeadKind kind() const { return config_.kind; }
  void collect(std::vector<Parameter>& out) const;
  std::vector<Mlp>& classifiers() { return mlps_; }
  const std::vector<Mlp>& classifiers() const { return mlps_; }

 private:
  HeadConfig config_;
  std::vector<Mlp> mlps_;  // FULL/XCLASS/BASE/XPART: one; MLPS: S; cosine heads: none
};

}  // namespace xrhead
