#include "mjave/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace mjave {

namespace {

using Rng = std::mt19937_64;

const std::array<const char*, 8> kLabelNames = {
    "color", "material", "style", "season",
    "pattern", "fit", "length", "occasion"};

const std::array<const char*, 16> kSylA = {
    "ba", "de", "fi", "go", "hu", "ka", "le", "mi",
    "no", "pu", "ra", "se", "ti", "vo", "wa", "zu"};

const std::array<const char*, 16> kSylB = {
    "bel", "dor", "fan", "gim", "hol", "ket", "lum", "mar",
    "neb", "pon", "rud", "sil", "tam", "ver", "wen", "zor"};

// Value indices 4 and 5 are two-token phrases so that I- tags occur in gold.
const std::array<const char*, 2> kPhraseTail = {"cut", "trim"};

const std::array<const char*, 4> kSubjects = {"piece", "item", "product",
                                              "arrival"};
const std::array<const char*, 4> kOpeners = {"this", "the", "our", "new"};
const std::array<const char*, 4> kVerbs = {"features", "offers", "shows",
                                           "includes"};
const std::array<const char*, 4> kLinks = {"with", "and", "plus", "also"};

std::string label_name(std::size_t l) {
  if (l < kLabelNames.size()) return kLabelNames[l];
  return "attr" + std::to_string(l);
}

// Regular value surface; unique per (label, value) by table construction.
std::vector<std::string> value_tokens(std::size_t label, std::size_t value) {
  const std::string head = std::string(kSylA[label]) + kSylB[value];
  if (value == 4 || value == 5)
    return {head, kPhraseTail[value - 4]};
  return {head};
}

// Ambiguous surfaces live in a reserved "qi" prefix space, two per pair.
std::string ambiguous_word(std::size_t pair, std::size_t variant) {
  return std::string("qi") + kSylA[pair * 2 + variant];
}

std::vector<double> unit_vector(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = dist(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> noisy(const std::vector<double>& base, double std_dev,
                          Rng& rng) {
  std::normal_distribution<double> dist(0.0, std_dev);
  std::vector<double> v(base.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = base[i] + dist(rng);
  return v;
}

std::vector<double> pure_noise(std::size_t dim, double std_dev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std_dev);
  std::vector<double> v(dim);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::size_t draw(Rng& rng, std::size_t bound) {
  return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng);
}

bool draw_prob(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

struct Slot {
  std::vector<std::string> tokens;
  int label = -1;                  // -1 for the distractor slot
  const std::vector<double>* prototype = nullptr;  // null for the distractor
};

void validate(const SyntheticConfig& c) {
  if (c.n < 10) throw ConfigError("synthetic: n must be at least 10");
  if (c.num_labels < 2 || c.num_labels > kSylA.size())
    throw ConfigError("synthetic: num_labels must be in [2, 16]");
  if (c.values_per_label < 4 || c.values_per_label > kSylB.size())
    throw ConfigError("synthetic: values_per_label must be in [4, 16]");
  if (c.ambiguity < 0.0 || c.ambiguity > 1.0)
    throw ConfigError("synthetic: ambiguity must be in [0, 1]");
  if (c.d_v < 4) throw ConfigError("synthetic: d_v must be at least 4");
  if (c.k < 4) throw ConfigError("synthetic: k must be at least 4");
  if (c.noise_std < 0.0 || c.noise_std > 1.0)
    throw ConfigError("synthetic: noise_std must be in [0, 1]");
  if (c.max_len < 14)
    throw ConfigError("synthetic: max_len must be at least 14");
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  validate(config);
  const std::size_t L = config.num_labels;
  const std::size_t vpl = config.values_per_label;
  Rng rng(config.seed);

  // Prototypes: one per regular (label, value); for each ambiguous surface,
  // one per side of its label pair, so only the image resolves the pair.
  std::vector<std::vector<std::vector<double>>> proto(L);
  for (std::size_t l = 0; l < L; ++l) {
    proto[l].reserve(vpl);
    for (std::size_t v = 0; v < vpl; ++v)
      proto[l].push_back(unit_vector(config.d_v, rng));
  }
  const std::size_t num_pairs = L / 2;
  // [pair][variant][side]
  std::vector<std::array<std::array<std::vector<double>, 2>, 2>> amb_proto(
      num_pairs);
  for (std::size_t p = 0; p < num_pairs; ++p)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t s = 0; s < 2; ++s)
        amb_proto[p][j][s] = unit_vector(config.d_v, rng);

  std::vector<std::string> labels;
  for (std::size_t l = 0; l < L; ++l) labels.push_back(label_name(l));
  const TagScheme scheme(labels);

  std::vector<Instance> all;
  all.reserve(config.n);
  for (std::size_t idx = 0; idx < config.n; ++idx) {
    const std::size_t first_label = idx % L;
    const bool paired = (first_label ^ 1u) < L;
    const bool ambiguous = paired && draw_prob(rng, config.ambiguity);

    std::vector<Slot> slots;
    std::set<int> used_labels;
    std::set<int> excluded = {static_cast<int>(first_label)};
    if (ambiguous) excluded.insert(static_cast<int>(first_label ^ 1u));

    // First span honors the round-robin label so no class starves.
    {
      Slot s;
      s.label = static_cast<int>(first_label);
      if (ambiguous) {
        const std::size_t pair = first_label / 2;
        const std::size_t variant = draw(rng, 2);
        const std::size_t side = first_label % 2;
        s.tokens = {ambiguous_word(pair, variant)};
        s.prototype = &amb_proto[pair][variant][side];
      } else {
        const std::size_t v = draw(rng, vpl);
        s.tokens = value_tokens(first_label, v);
        s.prototype = &proto[first_label][v];
      }
      slots.push_back(std::move(s));
      used_labels.insert(static_cast<int>(first_label));
    }

    // Up to two more spans with distinct labels outside the excluded set.
    // Skewed toward none so the image-bound spans dominate the span budget.
    const std::size_t roll = draw(rng, 20);
    const std::size_t extra = roll < 12 ? 0u : (roll < 17 ? 1u : 2u);
    std::vector<int> pool;
    for (std::size_t l = 0; l < L; ++l)
      if (!excluded.count(static_cast<int>(l)))
        pool.push_back(static_cast<int>(l));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t e = 0; e < extra && e < pool.size(); ++e) {
      Slot s;
      s.label = pool[e];
      const std::size_t v = draw(rng, vpl);
      s.tokens = value_tokens(static_cast<std::size_t>(pool[e]), v);
      s.prototype = &proto[static_cast<std::size_t>(pool[e])][v];
      slots.push_back(std::move(s));
      used_labels.insert(pool[e]);
    }

    // Distractor: a genuine-looking value word of an unused label whose
    // prototype never enters the image; gold tag O.
    if (draw_prob(rng, config.ambiguity / 2.0)) {
      std::vector<int> dpool;
      for (std::size_t l = 0; l < L; ++l) {
        const int li = static_cast<int>(l);
        if (!used_labels.count(li) && !excluded.count(li)) dpool.push_back(li);
      }
      if (!dpool.empty()) {
        Slot s;
        s.label = -1;
        const std::size_t dl =
            static_cast<std::size_t>(dpool[draw(rng, dpool.size())]);
        s.tokens = value_tokens(dl, draw(rng, 4));  // single-token values only
        slots.push_back(std::move(s));
      }
    }

    std::shuffle(slots.begin(), slots.end(), rng);

    Instance inst;
    std::ostringstream id;
    id << "synth-" << std::setw(6) << std::setfill('0') << idx;
    inst.id = id.str();
    inst.has_gold = true;
    inst.tokens = {kOpeners[draw(rng, kOpeners.size())],
                   kSubjects[draw(rng, kSubjects.size())],
                   kVerbs[draw(rng, kVerbs.size())]};

    std::vector<Span> spans;
    for (std::size_t si = 0; si < slots.size(); ++si) {
      if (si > 0) inst.tokens.push_back(kLinks[draw(rng, kLinks.size())]);
      const std::size_t start = inst.tokens.size();
      for (const auto& t : slots[si].tokens) inst.tokens.push_back(t);
      if (slots[si].label >= 0)
        spans.push_back({start, inst.tokens.size(), slots[si].label});
    }
    if (inst.tokens.size() > config.max_len)
      throw ConfigError("synthetic: template exceeds max_len");
    std::sort(spans.begin(), spans.end());
    inst.tags = spans_to_tags(spans, inst.tokens.size(), scheme);
    inst.attributes.assign(used_labels.begin(), used_labels.end());

    // One region per true span carries its prototype; the rest is noise.
    std::vector<std::size_t> region_order(config.k);
    for (std::size_t r = 0; r < config.k; ++r) region_order[r] = r;
    std::shuffle(region_order.begin(), region_order.end(), rng);
    inst.image.regions.assign(config.k, {});
    std::size_t next_region = 0;
    for (const auto& slot : slots)
      if (slot.prototype)
        inst.image.regions[region_order[next_region++]] =
            noisy(*slot.prototype, config.noise_std, rng);
    for (auto& region : inst.image.regions)
      if (region.empty())
        region = pure_noise(config.d_v, config.noise_std, rng);

    std::vector<double> mean(config.d_v, 0.0);
    for (const auto& region : inst.image.regions)
      for (std::size_t i = 0; i < config.d_v; ++i) mean[i] += region[i];
    for (auto& x : mean) x /= static_cast<double>(config.k);
    inst.image.global = noisy(mean, config.noise_std, rng);

    all.push_back(std::move(inst));
  }

  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t n_train = config.n * 70 / 100;
  const std::size_t n_valid = config.n * 15 / 100;

  SyntheticDataset ds;
  ds.manifest.labels = labels;
  ds.manifest.d_v = config.d_v;
  ds.manifest.k = config.k;
  ds.manifest.max_len = config.max_len;
  ds.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.valid.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                  all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  ds.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid),
                 all.end());

  if (ds.train.empty() || ds.valid.empty() || ds.test.empty())
    throw ConfigError("synthetic: n too small to stratify the splits");
  std::set<int> train_labels;
  for (const auto& inst : ds.train)
    train_labels.insert(inst.attributes.begin(), inst.attributes.end());
  if (train_labels.size() != L)
    throw ConfigError(
        "synthetic: n too small to stratify: a label is missing from train");
  return ds;
}

void write_synthetic(const SyntheticDataset& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const TagScheme scheme(dataset.manifest.labels);
  const auto base = std::filesystem::path(dir);
  save_manifest(dataset.manifest, (base / "manifest.json").string());
  save_instances(dataset.train, scheme, (base / "train.jsonl").string());
  save_instances(dataset.valid, scheme, (base / "valid.jsonl").string());
  save_instances(dataset.test, scheme, (base / "test.jsonl").string());
}

}  // namespace mjave
