#include "xrhead/model.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>

#include "xrhead/binary_io.hpp"
#include "xrhead/errors.hpp"

namespace xrhead {

namespace {

constexpr std::uint32_t kModelVersion = 1;

UnaConfig una_config(const TrainConfig& c) {
  UnaConfig u;
  u.dim = c.E;
  u.parts = c.S;
  u.tau = c.tau;
  u.squared_denominator = c.eq6_squared_denominator;
  return u;
}

HeadConfig head_config(const TrainConfig& c, std::size_t classes) {
  HeadConfig h;
  h.kind = c.kind();
  h.parts = c.S;
  h.classes = classes;
  h.dim = c.E;
  h.crm_hidden = c.crm_hidden;
  h.shared_hidden = c.shared_hidden;
  h.mlp_hidden = c.mlp_hidden;
  h.normalize_prompts = c.normalize_prompts_in_relation;
  return h;
}

PromptBank make_bank(const TrainConfig& c, const Tensor& class_embeddings, std::mt19937_64& rng) {
  if (class_embeddings.rank() != 2 || class_embeddings.dim(1) != c.E_word) {
    throw DimensionError("class embeddings " + shape_str(class_embeddings.shape()) +
                         " do not match E_word=" + std::to_string(c.E_word));
  }
  return init_bank(class_embeddings.dim(0), c.S, c.M, c.E_word, rng(), class_embeddings);
}

}  // namespace

XrModel::XrModel(const TrainConfig& config, const Tensor& class_embeddings, std::size_t patch_dim,
                 std::optional<PromptFeatures> manual)
    : config_((config.validate(), config)),
      classes_(class_embeddings.dim(0)),
      image_encoder_(config.encoder_seed, patch_dim, config.E),
      text_encoder_(config.encoder_seed + 1, config.E_word, config.E, config.M + 1),
      manual_(std::move(manual)) {
  // Shared modules draw from one stream and the head from another, so every
  // head kind starts from the same prompt and attention initialization.
  std::mt19937_64 shared_rng(config_.model_seed);
  bank_ = make_bank(config_, class_embeddings, shared_rng);
  una_ = UnifiedAttention(una_config(config_), shared_rng);
  std::mt19937_64 head_rng(config_.model_seed ^ 0x5bd1e9955bd1e995ull);
  head_ = PredictionHead(head_config(config_, classes_), head_rng);

  if (config_.manual_prompts() && !manual_) {
    throw ConfigError("manual prompt mode needs prompt features");
  }
  if (manual_) {
    const Shape want{classes_, config_.S, config_.E};
    if (manual_->T.shape() != want) {
      throw DimensionError("manual prompt features must be " + shape_str(want) + ", got " +
                           shape_str(manual_->T.shape()));
    }
    manual_->T = manual_->T.detach();
  }
}

Tensor XrModel::encode_images(const Tensor& patches) const {
  if (patches.rank() != 3) throw DimensionError("expected [B x N x D_in] patches, got " + shape_str(patches.shape()));
  const std::size_t B = patches.dim(0), N = patches.dim(1);
  Tensor flat = image_encoder_.encode(reshape(patches, {B * N, patches.dim(2)}));
  return reshape(flat, {B, N, config_.E}).detach();
}

PromptFeatures XrModel::prompt_features() const {
  if (manual_) return *manual_;
  return encode_bank(bank_, text_encoder_);
}

XrModel::Output XrModel::forward(const Tensor& X, bool training) {
  if (head_.kind() == HeadKind::Mlps) {
    // prompts take no part in this head's prediction
    auto out = una_.forward(X, training);
    return {head_.forward(out.parts.V, Tensor(), training), out.attention, out.parts.V};
  }
  return forward(X, prompt_features(), training);
}

XrModel::Output XrModel::forward(const Tensor& X, const PromptFeatures& prompts, bool training) {
  auto out = una_.forward(X, training);
  return {head_.forward(out.parts.V, prompts.T, training), out.attention, out.parts.V};
}

Tensor XrModel::loss_logits(const Tensor& logits) const {
  return is_cosine_head(head_.kind()) ? scale(logits, config_.logit_scale) : logits;
}

std::vector<Parameter> XrModel::parameters() const {
  std::vector<Parameter> out;
  if (!manual_) out.push_back(bank_.contexts);
  una_.collect(out);
  head_.collect(out);
  check_unique_names(out);
  return out;
}

std::uint64_t XrModel::frozen_checksum() const {
  std::uint64_t h = image_encoder_.checksum() ^ (text_encoder_.checksum() * 31);
  h = fnv1a(std::vector<double>(bank_.class_embeddings.values().begin(), bank_.class_embeddings.values().end()), h);
  if (manual_) h = fnv1a(std::vector<double>(manual_->T.values().begin(), manual_->T.values().end()), h);
  return h;
}

template <class Self>
auto XrModel::batch_norms_of(Self& self) {
  using StatePtr = decltype(&self.una_.bn.state);
  std::vector<std::pair<std::string, StatePtr>> out{{"una.phi.bn", &self.una_.bn.state}};
  for (auto& mlp : self.head_.classifiers()) {
    const std::string& gname = mlp.bn.gamma.name;
    out.emplace_back(gname.substr(0, gname.size() - std::string(".gamma").size()), &mlp.bn.state);
  }
  return out;
}

void XrModel::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  ByteWriter w;
  w.magic("XRVM");
  w.u32(kModelVersion);
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> entries;
  for (const auto& p : parameters()) {
    entries.push_back({p.name, {p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}}});
  }
  for (auto& [name, state] : batch_norms_of(*this)) {
    entries.push_back({name + ".running_mean", {{state->running_mean.size()}, state->running_mean}});
    entries.push_back({name + ".running_var", {{state->running_var.size()}, state->running_var}});
  }
  const Tensor& ce = bank_.class_embeddings;
  entries.push_back({"prompts.class_embeddings", {ce.shape(), {ce.values().begin(), ce.values().end()}}});
  if (manual_) {
    entries.push_back({"prompts.manual", {manual_->T.shape(), {manual_->T.values().begin(), manual_->T.values().end()}}});
  }
  w.u64(image_encoder_.in_dim());
  w.u64(entries.size());
  for (const auto& [name, payload] : entries) {
    w.string(name);
    w.u32(static_cast<std::uint32_t>(payload.first.size()));
    for (std::size_t e : payload.first) w.u64(e);
    for (double v : payload.second) w.f64(v);
  }
  write_file_atomic((std::filesystem::path(dir) / "model.bin").string(), w.bytes());
  write_text_atomic((std::filesystem::path(dir) / "config.json").string(), nlohmann::json(config_).dump(2) + "\n");
}

XrModel XrModel::load(const std::string& dir) {
  const TrainConfig config = load_config((std::filesystem::path(dir) / "config.json").string());
  ByteReader r(read_file_bytes((std::filesystem::path(dir) / "model.bin").string()));
  r.expect_magic("XRVM");
  const std::uint64_t version_at = r.offset();
  if (r.u32() != kModelVersion) throw FormatError("unsupported model version", version_at);
  const std::size_t patch_dim = r.u64();
  const std::uint64_t count = r.u64();
  std::map<std::string, Tensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string();
    const std::uint64_t rank_at = r.offset();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("invalid rank", rank_at);
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    r.require(shape_numel(shape) * 8, "tensor payload");
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64();
    entries[name] = Tensor(std::move(shape), std::move(values));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in model file", r.offset());

  auto take = [&entries](const std::string& name) -> Tensor& {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("model file lacks tensor '" + name + "'", 0);
    return it->second;
  };
  std::optional<PromptFeatures> manual;
  if (config.manual_prompts()) manual = PromptFeatures{take("prompts.manual")};
  XrModel model(config, take("prompts.class_embeddings"), patch_dim, manual);
  for (auto& p : model.parameters()) {
    const Tensor& src = take(p.name);
    if (src.shape() != p.tensor.shape()) throw FormatError("shape mismatch for '" + p.name + "'", 0);
    std::copy(src.values().begin(), src.values().end(), p.tensor.values_mut().begin());
  }
  for (auto& [name, state] : batch_norms_of(model)) {
    const Tensor& mean = take(name + ".running_mean");
    const Tensor& var = take(name + ".running_var");
    if (mean.numel() != state->running_mean.size() || var.numel() != state->running_var.size()) {
      throw FormatError("batch-norm statistics size mismatch for '" + name + "'", 0);
    }
    state->running_mean.assign(mean.values().begin(), mean.values().end());
    state->running_var.assign(var.values().begin(), var.values().end());
  }
  return model;
}

}  // namespace xrhead
