#include "xrhead/harness.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "xrhead/binary_io.hpp"
#include "xrhead/errors.hpp"

namespace xrhead {

bool RunReport::same_outcome(const RunReport& o) const {
  return nlohmann::json(config) == nlohmann::json(o.config) && epoch_loss == o.epoch_loss &&
         epoch_lr == o.epoch_lr && train_accuracy == o.train_accuracy && test_accuracy == o.test_accuracy &&
         frozen_checksum_before == o.frozen_checksum_before && frozen_checksum_after == o.frozen_checksum_after &&
         dropped_samples == o.dropped_samples;
}

void to_json(nlohmann::json& j, const RunReport& r) {
  j = nlohmann::json{{"config", r.config},
                     {"epoch_loss", r.epoch_loss},
                     {"epoch_lr", r.epoch_lr},
                     {"train_accuracy", r.train_accuracy},
                     {"test_accuracy", r.test_accuracy},
                     {"seconds", r.seconds},
                     {"frozen_checksum_before", r.frozen_checksum_before},
                     {"frozen_checksum_after", r.frozen_checksum_after},
                     {"dropped_samples", r.dropped_samples}};
}

void from_json(const nlohmann::json& j, RunReport& r) {
  j.at("config").get_to(r.config);
  j.at("epoch_loss").get_to(r.epoch_loss);
  j.at("epoch_lr").get_to(r.epoch_lr);
  j.at("train_accuracy").get_to(r.train_accuracy);
  j.at("test_accuracy").get_to(r.test_accuracy);
  j.at("seconds").get_to(r.seconds);
  j.at("frozen_checksum_before").get_to(r.frozen_checksum_before);
  j.at("frozen_checksum_after").get_to(r.frozen_checksum_after);
  j.at("dropped_samples").get_to(r.dropped_samples);
}

Dataset prepare_dataset(const TrainConfig& config) {
  if (!config.dataset_file.empty()) return load_dataset(config.dataset_file);
  SyntheticSpec spec = config.dataset_spec;
  spec.seed = config.data_seed;
  return generate(spec);
}

std::optional<PromptFeatures> prepare_prompts(const TrainConfig& config, std::size_t classes) {
  if (!config.manual_prompts()) return std::nullopt;
  FeatureFile file = load_features(config.prompt_file);
  const Shape want{classes, config.S, config.E};
  if (file.tensor.shape() != want) {
    throw DimensionError("prompt file '" + config.prompt_file + "' holds " + shape_str(file.tensor.shape()) +
                         ", expected " + shape_str(want));
  }
  return prompt_features_from(file.tensor);
}

namespace {

using Clock = std::chrono::steady_clock;

// Frozen image features for every sample, cached once per run.
struct FeatureCache {
  std::vector<double> values;  // [n x N x E]
  std::size_t tokens = 0, dim = 0;

  FeatureCache(const XrModel& model, std::span<const Sample> samples, std::size_t tokens_, std::size_t patch_dim)
      : tokens(tokens_), dim(model.config().E) {
    values.reserve(samples.size() * tokens * dim);
    constexpr std::size_t chunk = 256;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
      std::vector<const Sample*> ptrs;
      for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) ptrs.push_back(&samples[i]);
      Tensor X = model.encode_images(stack_patches(ptrs, tokens, patch_dim));
      values.insert(values.end(), X.values().begin(), X.values().end());
    }
  }

  Tensor batch(std::span<const std::size_t> idx) const {
    const std::size_t block = tokens * dim;
    std::vector<double> v(idx.size() * block);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(values.data() + idx[i] * block, block, v.data() + i * block);
    }
    return Tensor({idx.size(), tokens, dim}, std::move(v));
  }
};

std::vector<std::size_t> predict_cached(XrModel& model, const FeatureCache& cache, std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  const PromptFeatures prompts = model.prompt_features();
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < count; start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, count - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor X = cache.batch(idx);
    Tensor logits = model.head().kind() == HeadKind::Mlps ? model.forward(X, false).logits
                                                           : model.forward(X, prompts, false).logits;
    const std::size_t W = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out.push_back(argmax_lowest(logits.values().subspan(b * W, W)));
    }
  }
  return out;
}

double accuracy_of(const std::vector<std::size_t>& predicted, std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("cannot evaluate on an empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += predicted[i] == samples[i].label;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

TrainedRun train(const TrainConfig& config) {
  config.validate();
  return train(config, prepare_dataset(config));
}

TrainedRun train(const TrainConfig& config, Dataset dataset) {
  config.validate();
  const auto start = Clock::now();
  if (dataset.class_embeddings.dim(1) != config.E_word) {
    throw ConfigError("dataset word_dim " + std::to_string(dataset.class_embeddings.dim(1)) +
                      " differs from E_word " + std::to_string(config.E_word));
  }
  std::vector<Sample> split = few_shot_split(dataset, config.shots, config.data_seed);
  if (dataset.test.empty()) throw DataError("dataset has an empty test split");

  XrModel model(config, dataset.class_embeddings, dataset.patch_dim(),
                prepare_prompts(config, dataset.classes()));
  RunReport report;
  report.config = config;
  report.frozen_checksum_before = model.frozen_checksum();

  const FeatureCache train_cache(model, split, dataset.tokens(), dataset.patch_dim());
  std::vector<Parameter> params = model.parameters();
  OptimState opt;
  opt.lr0 = config.lr0;
  opt.weight_decay = config.weight_decay;
  opt.momentum = config.momentum;
  opt.total_epochs = config.epochs;

  std::vector<std::size_t> labels_all(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) labels_all[i] = split[i].label;

  std::mt19937_64 order_rng(config.model_seed + 0x632be59bd9b4e019ull);
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  bool warned = false;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.epoch = epoch;
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - b0);
      if (n < 2) {
        // batch-norm needs two rows; the singleton tail is skipped
        if (!warned) {
          std::cerr << "warning: dropping a singleton tail batch each epoch (batch-norm needs >= 2 samples)\n";
          warned = true;
        }
        if (epoch == 0) report.dropped_samples += n;
        continue;
      }
      std::span<const std::size_t> idx(order.data() + b0, n);
      std::vector<std::size_t> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = labels_all[idx[i]];
      zero_grads(params);
      auto out = model.forward(train_cache.batch(idx), true);
      Tensor loss = cross_entropy(model.loss_logits(out.logits), labels);
      backward(loss);
      sgd_step(params, opt);
      loss_sum += loss.item();
      ++batches;
    }
    report.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    report.epoch_lr.push_back(opt.current_lr());
  }

  report.train_accuracy = accuracy_of(predict_cached(model, train_cache, split.size()), split);
  const FeatureCache test_cache(model, dataset.test, dataset.tokens(), dataset.patch_dim());
  report.test_accuracy = accuracy_of(predict_cached(model, test_cache, dataset.test.size()), dataset.test);
  report.frozen_checksum_after = model.frozen_checksum();
  report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return {std::move(model), std::move(dataset), std::move(split), std::move(report)};
}

std::size_t argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> predict(XrModel& model, std::span<const Sample> samples) {
  if (samples.empty()) return {};
  const std::size_t patch_dim = model.image_encoder().in_dim();
  const std::size_t tokens = samples.front().patches.size() / patch_dim;
  const FeatureCache cache(model, samples, tokens, patch_dim);
  return predict_cached(model, cache, samples.size());
}

double evaluate(XrModel& model, std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("cannot evaluate on an empty split");
  return accuracy_of(predict(model, samples), samples);
}

const HeadSummary& CompareResult::of(HeadKind kind) const {
  for (const auto& s : summary) {
    if (s.head == head_name(kind)) return s;
  }
  throw ConfigError("head " + std::string(head_name(kind)) + " was not compared");
}

std::string CompareResult::csv() const {
  CsvTable t({"head", "seed_index", "data_seed", "model_seed", "train_accuracy", "test_accuracy"});
  for (const auto& r : rows) {
    t.add_row({r.head, std::to_string(r.seed_index), std::to_string(r.data_seed), std::to_string(r.model_seed),
               format_double(r.train_accuracy), format_double(r.test_accuracy)});
  }
  return t.str();
}

std::string CompareResult::summary_csv() const {
  CsvTable t({"head", "mean_test_accuracy", "std_test_accuracy"});
  for (const auto& s : summary) {
    t.add_row({s.head, format_double(s.mean_test_accuracy), format_double(s.std_test_accuracy)});
  }
  return t.str();
}

std::string CompareResult::svg() const {
  std::vector<std::string> labels;
  std::vector<double> means, stds;
  for (const auto& s : summary) {
    labels.push_back(s.head);
    means.push_back(s.mean_test_accuracy);
    stds.push_back(s.std_test_accuracy);
  }
  return svg_bar_chart("Test accuracy by prediction head (mean +- std over seeds)", labels, means, stds);
}

CompareResult compare_heads(const TrainConfig& config, const std::vector<HeadKind>& kinds, std::size_t seeds) {
  if (kinds.size() < 2) throw ConfigError("compare_heads needs at least two head kinds");
  if (seeds == 0) throw ConfigError("compare_heads needs at least one seed");
  config.validate();
  // results keyed by (head position, seed) so the table order never depends on run order
  std::map<std::pair<std::size_t, std::size_t>, CompareRow> keyed;
  for (std::size_t s = 0; s < seeds; ++s) {
    TrainConfig seeded = config;
    seeded.data_seed = config.data_seed + s;
    seeded.model_seed = config.model_seed + s;
    const Dataset data = prepare_dataset(seeded);
    for (std::size_t h = 0; h < kinds.size(); ++h) {
      TrainConfig run_cfg = seeded;
      run_cfg.head_kind = std::string(head_name(kinds[h]));
      const TrainedRun run = train(run_cfg, data);
      keyed[{h, s}] = CompareRow{run_cfg.head_kind, s, seeded.data_seed, seeded.model_seed,
                                 run.report.train_accuracy, run.report.test_accuracy};
    }
  }
  CompareResult result;
  for (const auto& [key, row] : keyed) result.rows.push_back(row);
  for (std::size_t h = 0; h < kinds.size(); ++h) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) sum += keyed[{h, s}].test_accuracy;
    const double m = sum / static_cast<double>(seeds);
    for (std::size_t s = 0; s < seeds; ++s) sq += std::pow(keyed[{h, s}].test_accuracy - m, 2);
    const double sd = seeds > 1 ? std::sqrt(sq / static_cast<double>(seeds - 1)) : 0.0;
    result.summary.push_back({std::string(head_name(kinds[h])), m, sd});
  }
  return result;
}

std::string SweepResult::csv() const {
  CsvTable t({"S", "train_accuracy", "test_accuracy", "seconds", "default"});
  for (const auto& r : rows) {
    t.add_row({std::to_string(r.parts), format_double(r.train_accuracy), format_double(r.test_accuracy),
               format_double(r.seconds), r.is_default ? "1" : "0"});
  }
  return t.str();
}

std::string SweepResult::svg() const {
  Series acc{"test accuracy", {}, {}};
  for (const auto& r : rows) {
    acc.x.push_back(static_cast<double>(r.parts));
    acc.y.push_back(r.test_accuracy);
  }
  std::string title = "Test accuracy vs number of parts";
  if (!default_near_best) title += " (S=4 more than 1 point below best)";
  return svg_line_plot(title, "S (prompts / part features)", "test accuracy", {acc});
}

SweepResult sweep_parts(const TrainConfig& config, const std::vector<std::size_t>& part_counts) {
  if (part_counts.empty()) throw ConfigError("sweep_parts needs at least one S value");
  for (std::size_t s : part_counts) {
    if (s == 0) throw ConfigError("sweep_parts: every S must be >= 1");
  }
  config.validate();
  const Dataset data = prepare_dataset(config);
  SweepResult result;
  for (std::size_t s : part_counts) {
    TrainConfig run_cfg = config;
    run_cfg.S = s;
    const TrainedRun run = train(run_cfg, data);
    result.rows.push_back({s, run.report.train_accuracy, run.report.test_accuracy, run.report.seconds, s == 4});
  }
  double best = 0.0;
  for (const auto& r : result.rows) best = std::max(best, r.test_accuracy);
  for (const auto& r : result.rows) {
    if (r.is_default) result.default_near_best = best - r.test_accuracy <= 0.01;
  }
  std::vector<SweepRow> by_s = result.rows;
  std::sort(by_s.begin(), by_s.end(), [](const SweepRow& a, const SweepRow& b) { return a.parts < b.parts; });
  for (std::size_t i = 1; i < by_s.size(); ++i) {
    if (by_s[i].parts > by_s[i - 1].parts && by_s[i].seconds < by_s[i - 1].seconds) result.runtime_monotone = false;
  }
  return result;
}

std::string EmbeddingStats::histogram_csv() const {
  CsvTable t({"bin", "lower", "upper", "count"});
  for (std::size_t i = 0; i < counts.size(); ++i) {
    t.add_row({std::to_string(i), format_double(edges[i]), format_double(edges[i + 1]), std::to_string(counts[i])});
  }
  return t.str();
}

std::string EmbeddingStats::svg() const {
  return svg_histogram("Nearest-neighbour distance of class-name embeddings", edges, counts);
}

EmbeddingStats analyze_embeddings(const Tensor& embeddings, std::size_t bins) {
  if (embeddings.rank() != 2) throw DimensionError("embeddings must be [W x E], got " + shape_str(embeddings.shape()));
  if (embeddings.dim(0) < 2) throw DataError("nearest-neighbour analysis needs at least 2 embeddings");
  if (bins == 0) throw ConfigError("bins must be positive");
  const std::size_t W = embeddings.dim(0), E = embeddings.dim(1);
  const auto v = embeddings.values();
  EmbeddingStats st;
  st.min_distances.assign(W, INFINITY);
  for (std::size_t i = 0; i < W; ++i) {
    for (std::size_t j = i + 1; j < W; ++j) {
      double ss = 0.0;
      for (std::size_t e = 0; e < E; ++e) ss += (v[i * E + e] - v[j * E + e]) * (v[i * E + e] - v[j * E + e]);
      const double d = std::sqrt(ss);
      st.min_distances[i] = std::min(st.min_distances[i], d);
      st.min_distances[j] = std::min(st.min_distances[j], d);
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(st.min_distances.begin(), st.min_distances.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) hi = lo + 1.0;
  st.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) st.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  st.edges.back() = hi;
  st.counts.assign(bins, 0);
  for (double d : st.min_distances) {
    auto bin = static_cast<std::size_t>((d - lo) / (hi - lo) * static_cast<double>(bins));
    ++st.counts[std::min(bin, bins - 1)];
  }
  st.mean = std::accumulate(st.min_distances.begin(), st.min_distances.end(), 0.0) / static_cast<double>(W);
  std::vector<double> sorted = st.min_distances;
  std::sort(sorted.begin(), sorted.end());
  st.median = W % 2 ? sorted[W / 2] : 0.5 * (sorted[W / 2 - 1] + sorted[W / 2]);
  return st;
}

Tensor project_2d(const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw DimensionError("embeddings must be [W x E], got " + shape_str(embeddings.shape()));
  const std::size_t W = embeddings.dim(0), E = embeddings.dim(1);
  if (W < 3) throw DataError("project_2d needs at least 3 embeddings");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat X = Eigen::Map<const RowMat>(embeddings.values().data(), W, E);
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(W - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const double scale = std::max(1.0, solver.eigenvalues().cwiseAbs().maxCoeff());
  std::vector<double> out(W * 2, 0.0);
  for (std::size_t c = 0; c < 2 && c < E; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(E - 1 - c);  // eigenvalues ascend
    if (solver.eigenvalues()(col) <= 1e-12 * scale) continue;
    Eigen::VectorXd coords = X * solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    coords.cwiseAbs().maxCoeff(&arg);
    if (coords(arg) < 0) coords = -coords;
    for (std::size_t i = 0; i < W; ++i) out[i * 2 + c] = coords(static_cast<Eigen::Index>(i));
  }
  return Tensor({W, 2}, std::move(out));
}

std::vector<std::vector<double>> attention_map(XrModel& model, const Sample& sample) {
  const std::size_t patch_dim = model.image_encoder().in_dim();
  const std::size_t tokens = sample.patches.size() / patch_dim;
  Tensor X = model.encode_images(stack_patches({&sample}, tokens, patch_dim));
  auto out = model.una().forward(X, false);
  const std::size_t slots = out.attention.dim(2);
  std::vector<std::vector<double>> rows(tokens, std::vector<double>(slots));
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t s = 0; s < slots; ++s) rows[i][s] = out.attention.values()[i * slots + s];
  }
  return rows;
}

void export_attention(XrModel& model, std::span<const Sample> samples, std::size_t count, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t S = model.config().S;
  std::vector<std::string> header{"token", "true_part"};
  for (std::size_t s = 0; s < S; ++s) header.push_back("part_" + std::to_string(s));
  header.push_back("background");
  for (std::size_t i = 0; i < std::min(count, samples.size()); ++i) {
    const auto rows = attention_map(model, samples[i]);
    CsvTable t(header);
    for (std::size_t n = 0; n < rows.size(); ++n) {
      std::vector<std::string> row{std::to_string(n), std::to_string(samples[i].part_assignment.at(n))};
      for (double w : rows[n]) row.push_back(format_double(w));
      t.add_row(std::move(row));
    }
    const auto base = (std::filesystem::path(dir) / ("attention_" + std::to_string(i))).string();
    write_text_atomic(base + ".csv", t.str());
    write_text_atomic(base + ".svg", svg_heat_strip("sample " + std::to_string(i) + " (label " +
                                                        std::to_string(samples[i].label) + ")",
                                                    rows));
  }
}

std::vector<GradCheckEntry> pipeline_gradcheck(const TrainConfig& config, double eps) {
  config.validate();
  const Dataset data = prepare_dataset(config);
  XrModel model(config, data.class_embeddings, data.patch_dim(), prepare_prompts(config, data.classes()));
  const std::size_t W = data.classes();
  std::vector<const Sample*> batch;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < config.batch_size; ++i) {
    const std::size_t want = i % W, occurrence = i / W;
    std::size_t seen = 0;
    for (const auto& s : data.train) {
      if (s.label == want && seen++ == occurrence) {
        batch.push_back(&s);
        break;
      }
    }
    if (batch.size() != i + 1) throw DataError("not enough samples of class " + std::to_string(want) + " for gradcheck");
    labels.push_back(want);
  }
  const Tensor X = model.encode_images(stack_patches(batch, data.tokens(), data.patch_dim()));
  std::vector<Parameter> params = model.parameters();
  auto loss_fn = [&] { return cross_entropy(model.loss_logits(model.forward(X, true).logits), labels); };
  return finite_diff_check(loss_fn, params, eps);
}

Tensor class_name_embeddings(const XrModel& model) {
  const PromptBank& bank = model.bank();
  const std::size_t W = bank.class_embeddings.dim(0), L = bank.context_len + 1, Ew = bank.word_dim;
  std::vector<double> seqs(W * L * Ew, 0.0);
  for (std::size_t w = 0; w < W; ++w) {
    const auto row = bank.class_embeddings.values().subspan(w * Ew, Ew);
    std::copy(row.begin(), row.end(), seqs.begin() + static_cast<std::ptrdiff_t>((w * L + L - 1) * Ew));
  }
  return model.text_encoder().encode_batch(Tensor({W, L, Ew}, std::move(seqs))).detach();
}

double mutual_information(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("mutual_information needs equal, non-empty labelings");
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0 / n;
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
  }
  double mi = 0.0;
  for (const auto& [key, p] : joint) mi += p * std::log(p / (pa[key.first] * pb[key.second]));
  return mi;
}

}  // namespace xrhead
