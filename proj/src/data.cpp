#include "xrhead/data.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "xrhead/binary_io.hpp"
#include "xrhead/errors.hpp"

namespace xrhead {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

std::vector<double> normal_vec(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// j-th sibling arrangement: the j-th permutation (lexicographic) that fixes
// part 0. Each represents one class of permutations equal up to a cyclic
// relabelling of the patterns.
std::vector<std::size_t> sibling_permutation(std::size_t j, std::size_t parts) {
  std::vector<std::size_t> perm(parts);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t n = 0; n < j; ++n) {
    if (!std::next_permutation(perm.begin() + 1, perm.end())) {
      throw ConfigError("too many sibling classes for the available part arrangements");
    }
  }
  return perm;
}

std::size_t factorial_capped(std::size_t n) {
  std::size_t f = 1;
  for (std::size_t i = 2; i <= n && f < (1u << 20); ++i) f *= i;
  return f;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (classes == 0 || superclasses == 0 || parts == 0 || tokens == 0 || patch_dim == 0 || word_dim == 0) {
    throw ConfigError("synthetic spec extents must be positive");
  }
  if (classes % superclasses != 0) {
    throw ConfigError("classes (" + std::to_string(classes) + ") must be divisible by superclasses (" +
                      std::to_string(superclasses) + ")");
  }
  if (cross_structure && parts < 2) throw ConfigError("cross structure needs at least 2 parts");
  if (cross_structure && classes / superclasses > factorial_capped(parts - 1)) {
    throw ConfigError("cross structure: more siblings per superclass than (parts-1)! arrangements");
  }
  if (!(noise >= 0.0) || !(class_offset >= 0.0)) throw ConfigError("noise and class_offset must be >= 0");
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("per-class sample counts must be positive");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"classes", s.classes},
                     {"superclasses", s.superclasses},
                     {"parts", s.parts},
                     {"tokens", s.tokens},
                     {"patch_dim", s.patch_dim},
                     {"word_dim", s.word_dim},
                     {"noise", s.noise},
                     {"class_offset", s.class_offset},
                     {"train_per_class", s.train_per_class},
                     {"test_per_class", s.test_per_class},
                     {"cross_structure", s.cross_structure},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  const nlohmann::json defaults = s;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown synthetic spec key '" + key + "'");
  }
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("classes", s.classes);
    get("superclasses", s.superclasses);
    get("parts", s.parts);
    get("tokens", s.tokens);
    get("patch_dim", s.patch_dim);
    get("word_dim", s.word_dim);
    get("noise", s.noise);
    get("class_offset", s.class_offset);
    get("train_per_class", s.train_per_class);
    get("test_per_class", s.test_per_class);
    get("cross_structure", s.cross_structure);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t W = spec.classes, G = spec.superclasses, P = spec.parts, D = spec.patch_dim;
  const std::size_t siblings = W / G;
  std::mt19937_64 rng(spec.seed);

  // slot 0 is background, slot p+1 is part p
  std::vector<std::vector<double>> codes(P + 1);
  for (auto& c : codes) c = normal_vec(D, 1.0, rng);
  const std::vector<double> background = normal_vec(D, 1.0, rng);

  // prototypes[k][p], D values each; bases[g] is the superclass pattern set
  std::vector<std::vector<std::vector<double>>> prototypes(W, std::vector<std::vector<double>>(P));
  std::vector<std::vector<std::vector<double>>> bases(G);
  std::vector<std::vector<std::size_t>> arrangement(W);
  for (std::size_t g = 0; g < G; ++g) {
    auto& base = bases[g];
    base.resize(P);
    for (auto& b : base) b = normal_vec(D, 1.0, rng);
    for (std::size_t j = 0; j < siblings; ++j) {
      const std::size_t k = g * siblings + j;
      if (spec.cross_structure) {
        arrangement[k] = sibling_permutation(j, P);
        for (std::size_t p = 0; p < P; ++p) prototypes[k][p] = base[arrangement[k][p]];
      } else {
        for (std::size_t p = 0; p < P; ++p) {
          auto offset = normal_vec(D, spec.class_offset, rng);
          prototypes[k][p] = base[p];
          for (std::size_t d = 0; d < D; ++d) prototypes[k][p][d] += offset[d];
        }
      }
    }
  }

  // class-name table: mean over parts of a per-part projection of the prototypes
  std::vector<std::vector<double>> projections(P);
  for (auto& proj : projections) proj = normal_vec(D * spec.word_dim, 1.0 / std::sqrt(static_cast<double>(D)), rng);
  std::vector<double> table(W * spec.word_dim, 0.0);
  for (std::size_t k = 0; k < W; ++k) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t d = 0; d < D; ++d) {
        const double x = prototypes[k][p][d];
        for (std::size_t e = 0; e < spec.word_dim; ++e) {
          table[k * spec.word_dim + e] += x * projections[p][d * spec.word_dim + e] / static_cast<double>(P);
        }
      }
    }
  }
  for (double& v : table) v = to_f32(v);

  std::normal_distribution<double> noise(0.0, 1.0);
  // With cross structure, the n-th sample of a class rotates its patterns by
  // n mod P: each part sees every pattern equally often in every sibling, and
  // only the relative placement of patterns identifies the class.
  auto part_pattern = [&](std::size_t k, std::size_t p, std::size_t n) -> const std::vector<double>& {
    if (!spec.cross_structure) return prototypes[k][p];
    return bases[k / siblings][(arrangement[k][p] + n) % P];
  };
  auto make_sample = [&](std::size_t k, std::size_t n) {
    Sample s;
    s.label = k;
    s.part_assignment.resize(spec.tokens);
    for (std::size_t i = 0; i < spec.tokens; ++i) s.part_assignment[i] = static_cast<std::uint32_t>(i % (P + 1));
    std::shuffle(s.part_assignment.begin(), s.part_assignment.end(), rng);
    s.patches.resize(spec.tokens * D);
    for (std::size_t i = 0; i < spec.tokens; ++i) {
      const std::uint32_t slot = s.part_assignment[i];
      const auto& proto = slot == 0 ? background : part_pattern(k, slot - 1, n);
      for (std::size_t d = 0; d < D; ++d) {
        const double eps = spec.noise > 0.0 ? spec.noise * noise(rng) : 0.0;
        s.patches[i * D + d] = to_f32(codes[slot][d] + proto[d] + eps);
      }
    }
    return s;
  };

  Dataset ds;
  ds.spec = spec;
  for (std::size_t k = 0; k < W; ++k) {
    for (std::size_t i = 0; i < spec.train_per_class; ++i) ds.train.push_back(make_sample(k, i));
  }
  for (std::size_t k = 0; k < W; ++k) {
    for (std::size_t i = 0; i < spec.test_per_class; ++i) ds.test.push_back(make_sample(k, i));
  }
  ds.class_embeddings = Tensor({W, spec.word_dim}, std::move(table));
  for (std::size_t k = 0; k < W; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%03zu", k);
    ds.class_names.emplace_back(name);
  }
  for (std::size_t p = 0; p < P; ++p) ds.part_names.push_back("part_" + std::to_string(p));
  return ds;
}

std::vector<Sample> few_shot_split(const Dataset& ds, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ConfigError("few_shot_split: shots must be positive");
  std::vector<std::vector<std::size_t>> by_class(ds.classes());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    if (ds.train[i].label >= ds.classes()) throw DataError("sample label outside class range");
    by_class[ds.train[i].label].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.size() < shots) {
      const std::string name = k < ds.class_names.size() ? ds.class_names[k] : std::to_string(k);
      throw DataError("class '" + name + "' has " + std::to_string(idx.size()) + " training samples, " +
                      std::to_string(shots) + " shots requested");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(shots));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Sample> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(ds.train[i]);
  return out;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  const SyntheticSpec& s = ds.spec;
  ByteWriter w;
  w.magic("XRVD");
  w.u32(kDatasetVersion);
  for (std::size_t v : {s.classes, s.superclasses, s.parts, s.tokens, s.patch_dim, s.word_dim}) w.u64(v);
  w.u64(ds.train.size());
  w.u64(ds.test.size());
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const Sample& smp : *split) {
      w.u32(static_cast<std::uint32_t>(smp.label));
      for (std::uint32_t p : smp.part_assignment) w.u32(p);
      for (double v : smp.patches) w.f32(static_cast<float>(v));
    }
  }
  for (double v : ds.class_embeddings.values()) w.f32(static_cast<float>(v));
  nlohmann::json meta{{"class_names", ds.class_names}, {"part_names", ds.part_names}, {"spec", s}};
  w.string(meta.dump());
  return w.bytes();
}

Dataset decode_dataset(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("XRVD");
  const std::uint64_t version_at = r.offset();
  if (r.u32() != kDatasetVersion) throw FormatError("unsupported dataset version", version_at);
  std::uint64_t header[6];
  for (auto& h : header) {
    const std::uint64_t at = r.offset();
    h = r.u64();
    if (h == 0 || h > (1u << 24)) throw FormatError("invalid dataset extent", at);
  }
  const std::size_t W = header[0], N = header[3], D = header[4], Ew = header[5];
  const std::uint64_t n_train = r.u64();
  const std::uint64_t n_test = r.u64();
  Dataset ds;
  for (auto [split, count] : {std::pair{&ds.train, n_train}, std::pair{&ds.test, n_test}}) {
    r.require(count * (4 + 4 * N + 4 * N * D), "samples");
    split->resize(count);
    for (Sample& smp : *split) {
      const std::uint64_t at = r.offset();
      smp.label = r.u32();
      if (smp.label >= W) throw FormatError("label outside class range", at);
      smp.part_assignment.resize(N);
      for (auto& p : smp.part_assignment) p = r.u32();
      smp.patches.resize(N * D);
      for (double& v : smp.patches) v = r.f32();
    }
  }
  r.require(W * Ew * 4, "class embeddings");
  std::vector<double> table(W * Ew);
  for (double& v : table) v = r.f32();
  ds.class_embeddings = Tensor({W, Ew}, std::move(table));
  const std::uint64_t meta_at = r.offset();
  try {
    const auto meta = nlohmann::json::parse(r.string());
    ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
    ds.part_names = meta.at("part_names").get<std::vector<std::string>>();
    ds.spec = meta.at("spec").get<SyntheticSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset metadata: ") + e.what(), meta_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad dataset metadata: ") + e.what(), meta_at);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after metadata", r.offset());
  const SyntheticSpec& s = ds.spec;
  if (s.classes != W || s.superclasses != header[1] || s.parts != header[2] || s.tokens != N ||
      s.patch_dim != D || s.word_dim != Ew) {
    throw FormatError("metadata spec disagrees with the binary header", meta_at);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { write_file_atomic(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

Tensor stack_patches(const std::vector<const Sample*>& samples, std::size_t tokens, std::size_t patch_dim) {
  std::vector<double> v;
  v.reserve(samples.size() * tokens * patch_dim);
  for (const Sample* s : samples) {
    if (s->patches.size() != tokens * patch_dim) throw DimensionError("sample patch block has the wrong size");
    v.insert(v.end(), s->patches.begin(), s->patches.end());
  }
  return Tensor({samples.size(), tokens, patch_dim}, std::move(v));
}

}  // namespace xrhead
