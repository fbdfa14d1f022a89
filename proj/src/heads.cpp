#include "xrhead/heads.hpp"

#include <array>

#include "xrhead/errors.hpp"

namespace xrhead {

namespace {

constexpr std::array<std::pair<HeadKind, std::string_view>, 7> kNames{{
    {HeadKind::Align, "ALIGN"},
    {HeadKind::Pwcs, "PWCS"},
    {HeadKind::Mlps, "MLPS"},
    {HeadKind::CrmFull, "CRM_FULL"},
    {HeadKind::CrmBase, "CRM_BASE"},
    {HeadKind::CrmXclass, "CRM_XCLASS"},
    {HeadKind::CrmXpart, "CRM_XPART"},
}};

Tensor as_batch(const Tensor& V) {
  if (V.rank() == 2) return reshape(V, {1, V.dim(0), V.dim(1)});
  if (V.rank() != 3) throw DimensionError("part features must be [S x E] or [B x S x E], got " + shape_str(V.shape()));
  return V;
}

Tensor drop_batch(const Tensor& out, bool had_batch) {
  return had_batch ? out : reshape(out, {out.numel()});
}

void check_parts(const Tensor& V, const Tensor& T) {
  if (T.rank() != 3 || T.dim(1) != V.dim(1) || T.dim(2) != V.dim(2)) {
    throw DimensionError("part features " + shape_str(V.shape()) + " and prompt features " +
                         shape_str(T.shape()) + " disagree on S or E");
  }
}

}  // namespace

std::string_view head_name(HeadKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

std::vector<HeadKind> all_head_kinds() {
  std::vector<HeadKind> out;
  for (const auto& [k, n] : kNames) out.push_back(k);
  return out;
}

bool is_cosine_head(HeadKind kind) { return kind == HeadKind::Align || kind == HeadKind::Pwcs; }

bool is_crm_head(HeadKind kind) {
  return kind == HeadKind::CrmFull || kind == HeadKind::CrmBase || kind == HeadKind::CrmXclass ||
         kind == HeadKind::CrmXpart;
}

Tensor align_predict(const Tensor& v, const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("align_predict: prompt features must be [W x E], got " + shape_str(t.shape()));
  const bool batched = v.rank() == 2;
  Tensor vb = batched ? v : reshape(v, {1, v.numel()});
  if (vb.rank() != 2 || vb.dim(1) != t.dim(1)) {
    throw DimensionError("align_predict: visual feature " + shape_str(v.shape()) + " vs prompts " +
                         shape_str(t.shape()));
  }
  Tensor logits = matmul(l2_normalize(vb), transpose(l2_normalize(t)));
  return drop_batch(logits, batched);
}

Tensor pwcs_predict(const Tensor& V, const Tensor& T) {
  const bool batched = V.rank() == 3;
  Tensor Vb = as_batch(V);
  check_parts(Vb, T);
  Tensor vn = permute(l2_normalize(Vb), {1, 0, 2});  // [S x B x E]
  Tensor tn = permute(l2_normalize(T), {1, 0, 2});   // [S x W x E]
  Tensor logits = mean_axis(bmm(vn, tn, true), 0);   // [B x W]
  return drop_batch(logits, batched);
}

Tensor cross_relation(const Tensor& V, const Tensor& T, bool normalize_prompts) {
  const bool batched = V.rank() == 3;
  Tensor Vb = as_batch(V);
  check_parts(Vb, T);
  const std::size_t batch = Vb.dim(0), parts = Vb.dim(1), dim = Vb.dim(2), classes = T.dim(0);
  Tensor t = normalize_prompts ? l2_normalize(T) : T;
  // rows of tp indexed s' * W + w
  Tensor tp = reshape(permute(t, {1, 0, 2}), {parts * classes, dim});
  Tensor prod = matmul(reshape(Vb, {batch * parts, dim}), transpose(tp));  // [(B*S) x (S*W)]
  return drop_batch(reshape(prod, {batch, parts * parts * classes}), batched);
}

std::vector<std::size_t> diagonal_indices(std::size_t parts, std::size_t classes) {
  std::vector<std::size_t> idx;
  idx.reserve(parts * classes);
  for (std::size_t w = 0; w < classes; ++w) {
    for (std::size_t s = 0; s < parts; ++s) idx.push_back(relation_index(s, s, w, parts, classes));
  }
  return idx;
}

std::vector<std::size_t> block_indices(std::size_t parts, std::size_t classes) {
  std::vector<std::size_t> idx;
  idx.reserve(parts * parts * classes);
  for (std::size_t w = 0; w < classes; ++w) {
    for (std::size_t s = 0; s < parts; ++s) {
      for (std::size_t sp = 0; sp < parts; ++sp) idx.push_back(relation_index(s, sp, w, parts, classes));
    }
  }
  return idx;
}

Tensor crm_inputs(const Tensor& R, HeadKind kind, std::size_t parts, std::size_t classes) {
  Tensor Rb = R.rank() == 1 ? reshape(R, {1, R.numel()}) : R;
  if (Rb.rank() != 2 || Rb.dim(1) != parts * parts * classes) {
    throw DimensionError("cross relation " + shape_str(R.shape()) + " does not match S=" +
                         std::to_string(parts) + ", W=" + std::to_string(classes));
  }
  const std::size_t batch = Rb.dim(0);
  switch (kind) {
    case HeadKind::CrmFull:
      return Rb;
    case HeadKind::CrmBase:
      return reshape(take_last(Rb, diagonal_indices(parts, classes)), {batch * classes, parts});
    case HeadKind::CrmXclass:
      return take_last(Rb, diagonal_indices(parts, classes));
    case HeadKind::CrmXpart:
      return reshape(take_last(Rb, block_indices(parts, classes)), {batch * classes, parts * parts});
    default:
      throw ConfigError("crm_inputs: " + std::string(head_name(kind)) + " is not a CRM head");
  }
}

Tensor crm_predict(const Tensor& R, const Classifier& theta) {
  Tensor Rb = R.rank() == 1 ? reshape(R, {1, R.numel()}) : R;
  Tensor logits = theta(Rb);
  return R.rank() == 1 ? reshape(logits, {logits.numel()}) : logits;
}

Tensor crm_variant_predict(const Tensor& R, HeadKind kind, std::size_t parts, std::size_t classes,
                           const Classifier& theta) {
  if (kind != HeadKind::CrmBase && kind != HeadKind::CrmXclass && kind != HeadKind::CrmXpart) {
    throw ConfigError("crm_variant_predict: unsupported kind " + std::string(head_name(kind)));
  }
  const bool batched = R.rank() == 2;
  const std::size_t batch = batched ? R.dim(0) : 1;
  Tensor out = theta(crm_inputs(R, kind, parts, classes));
  const std::size_t expected = kind == HeadKind::CrmXclass ? classes : 1;
  if (out.rank() != 2 || out.dim(1) != expected) {
    throw DimensionError("classifier for " + std::string(head_name(kind)) + " must output width " +
                         std::to_string(expected) + ", got " + shape_str(out.shape()));
  }
  Tensor logits = reshape(out, {batch, classes});
  return drop_batch(logits, batched);
}

Tensor mlps_predict(const Tensor& V, std::span<const Classifier> heads) {
  if (V.rank() != 3) throw DimensionError("mlps_predict expects [B x S x E], got " + shape_str(V.shape()));
  const std::size_t parts = V.dim(1);
  if (heads.size() != parts) {
    throw ConfigError("mlps_predict: " + std::to_string(heads.size()) + " classifiers for S=" +
                      std::to_string(parts));
  }
  Tensor by_part = permute(V, {1, 0, 2});  // [S x B x E]
  Tensor total;
  for (std::size_t s = 0; s < parts; ++s) {
    Tensor rows = reshape(gather_rows(by_part, std::span(&s, 1)), {V.dim(0), V.dim(2)});
    Tensor out = heads[s](rows);
    total = total.defined() ? add(total, out) : out;
  }
  return scale(total, 1.0 / static_cast<double>(parts));
}

PredictionHead::PredictionHead(const HeadConfig& config, std::mt19937_64& rng) : config_(config) {
  const std::size_t S = config_.parts, W = config_.classes;
  if (S == 0 || W == 0 || config_.dim == 0) throw ConfigError("head extents must be positive");
  const std::size_t shared = config_.shared_hidden == 0 ? 4 * S : config_.shared_hidden;
  switch (config_.kind) {
    case HeadKind::Align:
    case HeadKind::Pwcs:
      break;
    case HeadKind::CrmFull:
      mlps_.emplace_back("head.crm", S * S * W, config_.crm_hidden, W, rng);
      break;
    case HeadKind::CrmXclass:
      mlps_.emplace_back("head.crm", S * W, config_.crm_hidden, W, rng);
      break;
    case HeadKind::CrmBase:
      mlps_.emplace_back("head.crm", S, shared, 1, rng);
      break;
    case HeadKind::CrmXpart:
      mlps_.emplace_back("head.crm", S * S, shared, 1, rng);
      break;
    case HeadKind::Mlps:
      for (std::size_t s = 0; s < S; ++s) {
        mlps_.emplace_back("head.part" + std::to_string(s), config_.dim, config_.mlp_hidden, W, rng);
      }
      break;
  }
}

Tensor PredictionHead::forward(const Tensor& V, const Tensor& T, bool training) {
  const std::size_t S = config_.parts, W = config_.classes;
  if (V.rank() != 3 || V.dim(1) != S) {
    throw DimensionError("head expects [B x " + std::to_string(S) + " x E] part features, got " +
                         shape_str(V.shape()));
  }
  switch (config_.kind) {
    case HeadKind::Align:
      return align_predict(sum_axis(V, 1), sum_axis(T, 1));
    case HeadKind::Pwcs:
      return pwcs_predict(V, T);
    case HeadKind::Mlps: {
      std::vector<Classifier> heads;
      for (auto& mlp : mlps_) heads.push_back([&mlp, training](const Tensor& x) { return mlp.forward(x, training); });
      return mlps_predict(V, heads);
    }
    case HeadKind::CrmFull: {
      Mlp& mlp = mlps_.front();
      return crm_predict(cross_relation(V, T, config_.normalize_prompts),
                         [&mlp, training](const Tensor& x) { return mlp.forward(x, training); });
    }
    default: {
      Mlp& mlp = mlps_.front();
      return crm_variant_predict(cross_relation(V, T, config_.normalize_prompts), config_.kind, S, W,
                                 [&mlp, training](const Tensor& x) { return mlp.forward(x, training); });
    }
  }
}

void PredictionHead::collect(std::vector<Parameter>& out) const {
  for (const auto& mlp : mlps_) mlp.collect(out);
}

}  // namespace xrhead
