// xrhead command-line driver.
#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <utility>

#include "xrhead/binary_io.hpp"
#include "xrhead/errors.hpp"
#include "xrhead/harness.hpp"

namespace fs = std::filesystem;
using namespace xrhead;

namespace {

TrainConfig config_from(const std::string& path) {
  TrainConfig c = load_config(path);
  apply_seed_env(c);
  c.validate();
  return c;
}

template <class T>
std::vector<T> parse_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(start, end - start);
    if (item.empty()) throw ConfigError("empty entry in list '" + text + "'");
    out.push_back(parse(item));
    start = end + 1;
  }
  return out;
}

std::size_t parse_count(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || s[0] == '-') throw ConfigError("'" + s + "' is not a non-negative integer");
  return static_cast<std::size_t>(v);
}

HeadKind parse_kind(const std::string& s) { return parse_head_kind(s); }

// Writes a group of report files only once all of them are rendered.
void write_reports(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  fs::create_directories(dir);
  for (const auto& [name, text] : files) write_text_atomic((dir / name).string(), text);
  for (const auto& [name, text] : files) std::cout << "wrote " << (dir / name).string() << "\n";
}

// Builds the model directory next to its destination and swaps it in at the end.
void write_model_dir(const fs::path& out, const TrainedRun& run) {
  if (fs::exists(out) && !fs::is_empty(out) && !fs::exists(out / "model.bin")) {
    throw ConfigError("refusing to replace non-model directory '" + out.string() + "'");
  }
  fs::path stage = out;
  stage += ".partial";
  fs::remove_all(stage);
  try {
    run.model.save(stage.string());
    save_dataset(run.dataset, (stage / "dataset.xrvd").string());
    save_features((stage / "cne.xrvf").string(), class_name_embeddings(run.model),
                  {run.dataset.class_names, run.dataset.part_names});
    write_text_atomic((stage / "report.json").string(), nlohmann::json(run.report).dump(2) + "\n");
    CsvTable loss({"epoch", "loss", "lr"});
    Series curve{"training loss", {}, {}};
    for (std::size_t e = 0; e < run.report.epoch_loss.size(); ++e) {
      loss.add_row({std::to_string(e), format_double(run.report.epoch_loss[e]), format_double(run.report.epoch_lr[e])});
      curve.x.push_back(static_cast<double>(e));
      curve.y.push_back(run.report.epoch_loss[e]);
    }
    write_text_atomic((stage / "loss.csv").string(), loss.str());
    write_text_atomic((stage / "loss.svg").string(), svg_line_plot("Training loss", "epoch", "loss", {curve}));
  } catch (...) {
    fs::remove_all(stage);
    throw;
  }
  fs::remove_all(out);
  fs::rename(stage, out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xrhead: prompt-tuned cross-relation heads on frozen encoders"};
  app.require_subcommand(1);

  std::string spec_file, out, config_file, model_dir, data_file, heads = "PWCS,CRM_FULL,MLPS", parts = "1,2,4,8",
                                                                       features_file;
  std::size_t seeds = 5, bins = 20, count = 4;
  double eps = 1e-5;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
  gen->add_option("--spec", spec_file, "Synthetic spec JSON")->required();
  gen->add_option("--out", out, "Output dataset file")->required();

  auto* tr = app.add_subcommand("train", "Train one model and write a model directory");
  tr->add_option("--config", config_file, "TrainConfig JSON")->required();
  tr->add_option("--out", out, "Model directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a trained model on a dataset's test split");
  ev->add_option("--model", model_dir, "Model directory")->required();
  ev->add_option("--data", data_file, "Dataset file")->required();

  auto* cmp = app.add_subcommand("compare", "Compare prediction heads over several seeds");
  cmp->add_option("--config", config_file, "TrainConfig JSON")->required();
  cmp->add_option("--heads", heads, "Comma-separated head kinds")->capture_default_str();
  cmp->add_option("--seeds", seeds, "Number of seeds")->capture_default_str();
  cmp->add_option("--out", out, "Report directory")->default_str(".");

  auto* sw = app.add_subcommand("sweep", "Sweep the number of parts S");
  sw->add_option("--config", config_file, "TrainConfig JSON")->required();
  sw->add_option("--parts", parts, "Comma-separated S values")->capture_default_str();
  sw->add_option("--out", out, "Report directory")->default_str(".");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full pipeline");
  gc->add_option("--config", config_file, "TrainConfig JSON")->required();
  gc->add_option("--eps", eps, "Finite-difference step")->capture_default_str();

  auto* cne = app.add_subcommand("analyze-cne", "Nearest-neighbour analysis of class-name embeddings");
  cne->add_option("--features", features_file, "Feature file holding [W x E] embeddings")->required();
  cne->add_option("--bins", bins, "Histogram bins")->capture_default_str();
  cne->add_option("--out", out, "Report directory")->default_str(".");

  auto* att = app.add_subcommand("export-attn", "Export attention maps of test samples");
  att->add_option("--model", model_dir, "Model directory")->required();
  att->add_option("--n", count, "Number of samples")->capture_default_str();
  att->add_option("--out", out, "Output directory (default <model>/attention)");

  CLI11_PARSE(app, argc, argv);
  if (out.empty()) out = ".";

  try {
    if (*gen) {
      SyntheticSpec spec;
      try {
        spec = nlohmann::json::parse(read_text_file(spec_file)).get<SyntheticSpec>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + spec_file + "': " + e.what());
      }
      if (const char* env = std::getenv("XRHEAD_SEED")) spec.seed = parse_count(env);
      const Dataset ds = generate(spec);
      save_dataset(ds, out);
      std::cout << "wrote " << out << " (" << ds.train.size() << " train, " << ds.test.size() << " test)\n";
    } else if (*tr) {
      const TrainedRun run = train(config_from(config_file));
      write_model_dir(out, run);
      std::cout << "train_accuracy," << format_double(run.report.train_accuracy) << "\n"
                << "test_accuracy," << format_double(run.report.test_accuracy) << "\n"
                << "wrote " << out << "\n";
    } else if (*ev) {
      XrModel model = XrModel::load(model_dir);
      const Dataset ds = load_dataset(data_file);
      std::cout << "accuracy," << format_double(evaluate(model, ds.test)) << "\n";
    } else if (*cmp) {
      const auto kinds = parse_list<HeadKind>(heads, parse_kind);
      const CompareResult res = compare_heads(config_from(config_file), kinds, seeds);
      std::cout << res.summary_csv();
      write_reports(out, {{"compare.csv", res.csv()}, {"compare_summary.csv", res.summary_csv()},
                          {"compare.svg", res.svg()}});
    } else if (*sw) {
      const auto s_list = parse_list<std::size_t>(parts, parse_count);
      const SweepResult res = sweep_parts(config_from(config_file), s_list);
      std::cout << res.csv();
      if (!res.default_near_best) std::cout << "flag: S=4 is more than 1 point below the best S\n";
      if (!res.runtime_monotone) std::cout << "flag: runtime did not grow monotonically with S\n";
      write_reports(out, {{"sweep.csv", res.csv()}, {"sweep.svg", res.svg()}});
    } else if (*gc) {
      const auto entries = pipeline_gradcheck(config_from(config_file), eps);
      CsvTable t({"parameter", "coords", "max_rel_error"});
      for (const auto& e : entries) t.add_row({e.name, std::to_string(e.coords_checked), format_double(e.max_rel_error)});
      std::cout << t.str() << "max," << format_double(max_error(entries)) << "\n";
      if (max_error(entries) >= 1e-4) {
        std::cerr << "error: gradient check exceeds 1e-4\n";
        return 1;
      }
    } else if (*cne) {
      const FeatureFile f = load_features(features_file);
      const EmbeddingStats st = analyze_embeddings(f.tensor, bins);
      std::vector<std::pair<std::string, std::string>> files{{"cne_histogram.csv", st.histogram_csv()},
                                                             {"cne_histogram.svg", st.svg()}};
      if (f.tensor.dim(0) >= 3) {
        const Tensor xy = project_2d(f.tensor);
        CsvTable t({"class", "x", "y"});
        for (std::size_t i = 0; i < xy.dim(0); ++i) {
          const std::string name = i < f.meta.class_names.size() ? f.meta.class_names[i] : std::to_string(i);
          t.add_row({name, format_double(xy.values()[2 * i]), format_double(xy.values()[2 * i + 1])});
        }
        files.emplace_back("cne_projection.csv", t.str());
      }
      std::cout << "mean_min_distance," << format_double(st.mean) << "\n"
                << "median_min_distance," << format_double(st.median) << "\n";
      write_reports(out, files);
    } else if (*att) {
      XrModel model = XrModel::load(model_dir);
      const Dataset ds = load_dataset((fs::path(model_dir) / "dataset.xrvd").string());
      const std::string dir = att->count("--out") ? out : (fs::path(model_dir) / "attention").string();
      export_attention(model, ds.test, count, dir);
      std::cout << "wrote " << std::min(count, ds.test.size()) << " attention maps to " << dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
