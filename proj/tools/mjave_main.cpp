// mjave: synthetic data generation, training, evaluation, image-awareness
// testing, prediction and gate inspection for the multimodal attribute /
// value extraction model.
//
// Exit codes: 0 success, 2 bad flags or configuration, 3 bad data or shapes,
// 4 numeric failure (divergence, non-finite values).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mjave/checkpoint.hpp"
#include "mjave/evaluation.hpp"
#include "mjave/synthetic.hpp"
#include "mjave/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mjave;

namespace {

bool verbose() {
  const char* v = std::getenv("MJAVE_VERBOSE");
  return v != nullptr && *v != '\0' && std::string(v) != "0";
}

void note(const std::string& message) {
  if (verbose()) std::cerr << "[mjave] " << message << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

json prf_json(const PRF& p) {
  json j;
  j["precision"] = p.precision;
  j["recall"] = p.recall;
  j["f1"] = p.f1;
  j["tp"] = p.tp;
  j["fp"] = p.fp;
  j["fn"] = p.fn;
  return j;
}

json report_json(const MetricsReport& r) {
  json j;
  j["attributes"] = prf_json(r.attributes);
  j["values"] = prf_json(r.values);
  auto labeled = [](const std::vector<std::pair<std::string, PRF>>& rows) {
    json arr = json::array();
    for (const auto& [label, prf] : rows) {
      json row;
      row["label"] = label;
      row.update(prf_json(prf));
      arr.push_back(std::move(row));
    }
    return arr;
  };
  j["per_label_attributes"] = labeled(r.per_label_attributes);
  j["per_label_values"] = labeled(r.per_label_values);
  return j;
}

void emit(const json& j, const std::string& out_file) {
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) write_text(out_file, text);
}

std::string split_file(const std::string& data_dir, const std::string& split) {
  if (split != "train" && split != "valid" && split != "test")
    throw ConfigError("unknown split '" + split +
                      "'; valid splits: train, valid, test");
  return (fs::path(data_dir) / (split + ".jsonl")).string();
}

// A checkpoint applied to one split of a dataset directory. `instances`
// must outlive `prepared` (prepared instances point into it).
struct Session {
  Checkpoint<double> ckpt;
  Vocabulary vocab;
  TagScheme scheme;
  std::vector<Instance> instances;
  std::vector<PreparedInstance<double>> prepared;
};

Session open_session(const std::string& checkpoint_path,
                     const std::string& data_dir, const std::string& split) {
  Session s;
  s.ckpt = load_checkpoint<double>(checkpoint_path);
  const auto manifest =
      load_manifest((fs::path(data_dir) / "manifest.json").string());
  check_compatible(s.ckpt, manifest);
  s.vocab = Vocabulary(s.ckpt.vocab_tokens);
  s.scheme = TagScheme(s.ckpt.labels);
  s.instances = load_instances(split_file(data_dir, split), manifest);
  s.prepared = prepare_instances<double>(s.instances, s.vocab, s.ckpt.config);
  note("loaded " + std::to_string(s.instances.size()) + " instances from " +
       split);
  return s;
}

// Attribute metrics from the attribute model, value metrics from the value
// model; one and the same forward pass in the multitask case.
MetricsReport eval_checkpoint(const Checkpoint<double>& ckpt,
                              const std::vector<PreparedInstance<double>>& data,
                              const TagScheme& scheme) {
  if (ckpt.multitask())
    return evaluate_dataset(ckpt.models.front().second, ckpt.ablation, data,
                            scheme);
  const auto attr_report =
      evaluate_dataset(ckpt.attribute_model(), ckpt.ablation, data, scheme);
  auto report =
      evaluate_dataset(ckpt.value_model(), ckpt.ablation, data, scheme);
  report.attributes = attr_report.attributes;
  report.per_label_attributes = attr_report.per_label_attributes;
  return report;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  sd = 0;
  if (xs.size() < 2) return;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthCli {
  std::string out;
  SyntheticConfig cfg;
};

void run_synth(const SynthCli& a) {
  const auto ds = generate_synthetic(a.cfg);
  write_synthetic(ds, a.out);
  json j;
  j["out"] = a.out;
  j["seed"] = a.cfg.seed;
  j["labels"] = ds.manifest.labels.size();
  j["train"] = ds.train.size();
  j["valid"] = ds.valid.size();
  j["test"] = ds.test.size();
  std::cout << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCli {
  std::string data, out, config_file, ablation;
  std::size_t epochs = 20, batch = 32, seeds = 1, patience = 0;
  std::size_t hidden = 32, attention_dim = 32, layers = 1, ff_hidden = 64;
  double lr = 1e-4, lambda = 0.5, train_fraction = 1.0;
  std::uint64_t seed = 1;
  bool freeze_text_encoder = false;
  bool include_special_in_sums = false;
  bool untie_visual_value = false;

  // Option handles, used to give explicit flags precedence over the file.
  CLI::Option *o_epochs = nullptr, *o_batch = nullptr, *o_seeds = nullptr,
              *o_patience = nullptr, *o_hidden = nullptr, *o_attn = nullptr,
              *o_layers = nullptr, *o_ff = nullptr, *o_lr = nullptr,
              *o_lambda = nullptr, *o_fraction = nullptr, *o_seed = nullptr,
              *o_freeze = nullptr, *o_special = nullptr, *o_untie = nullptr,
              *o_ablation = nullptr;
};

void apply_config_file(TrainCli& a) {
  const json cfg = read_json_file(a.config_file);
  if (!cfg.is_object())
    throw ConfigError(a.config_file + ": config must be a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    try {
      if (key == "epochs") {
        if (!a.o_epochs->count()) a.epochs = value.get<std::size_t>();
      } else if (key == "batch_size") {
        if (!a.o_batch->count()) a.batch = value.get<std::size_t>();
      } else if (key == "seeds") {
        if (!a.o_seeds->count()) a.seeds = value.get<std::size_t>();
      } else if (key == "patience") {
        if (!a.o_patience->count()) a.patience = value.get<std::size_t>();
      } else if (key == "hidden") {
        if (!a.o_hidden->count()) a.hidden = value.get<std::size_t>();
      } else if (key == "attention_dim") {
        if (!a.o_attn->count()) a.attention_dim = value.get<std::size_t>();
      } else if (key == "encoder_layers") {
        if (!a.o_layers->count()) a.layers = value.get<std::size_t>();
      } else if (key == "ff_hidden") {
        if (!a.o_ff->count()) a.ff_hidden = value.get<std::size_t>();
      } else if (key == "learning_rate") {
        if (!a.o_lr->count()) a.lr = value.get<double>();
      } else if (key == "lambda") {
        if (!a.o_lambda->count()) a.lambda = value.get<double>();
      } else if (key == "train_fraction") {
        if (!a.o_fraction->count()) a.train_fraction = value.get<double>();
      } else if (key == "seed") {
        if (!a.o_seed->count()) a.seed = value.get<std::uint64_t>();
      } else if (key == "freeze_text_encoder") {
        if (!a.o_freeze->count()) a.freeze_text_encoder = value.get<bool>();
      } else if (key == "include_special_in_sums") {
        if (!a.o_special->count())
          a.include_special_in_sums = value.get<bool>();
      } else if (key == "untie_visual_value") {
        if (!a.o_untie->count()) a.untie_visual_value = value.get<bool>();
      } else if (key == "ablation") {
        if (!a.o_ablation->count()) a.ablation = value.get<std::string>();
      } else {
        throw ConfigError(a.config_file + ": unknown config key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError(a.config_file + ": bad value for '" + key +
                        "': " + e.what());
    }
  }
}

json train_one_seed(const TrainCli& a, const Manifest& manifest,
                    const Vocabulary& vocab, const TagScheme& scheme,
                    const ModelConfig& mc, const TrainConfig& tc,
                    const std::vector<PreparedInstance<double>>& train_set,
                    const std::vector<PreparedInstance<double>>& valid_set,
                    const std::string& dir) {
  fs::create_directories(dir);
  Checkpoint<double> ckpt;
  ckpt.config = mc;
  ckpt.ablation = tc.ablation;
  ckpt.labels = manifest.labels;
  ckpt.vocab_tokens = vocab.tokens();

  std::ostringstream lines;
  auto log_epochs = [&](const std::vector<EpochMetrics>& log,
                        const char* task) {
    for (const auto& em : log) {
      json j;
      j["epoch"] = em.epoch;
      if (task) j["task"] = task;
      j["loss_a"] = em.loss_a;
      j["loss_v"] = em.loss_v;
      j["kl"] = em.kl;
      j["loss"] = em.loss;
      j["attr_f1"] = em.attr_f1;
      j["value_f1"] = em.value_f1;
      lines << j.dump() << "\n";
    }
  };

  json summary;
  summary["seed"] = tc.seed;
  if (tc.ablation.use_mtl) {
    note("training joint model, seed " + std::to_string(tc.seed));
    auto res = train(train_set, valid_set, mc, tc, scheme, LossMode::kJoint);
    log_epochs(res.log, nullptr);
    summary["best_epoch"] = res.best_epoch;
    ckpt.models.emplace_back("model", std::move(res.best));
  } else {
    // No multitask: two single-task models sharing the initialization seed.
    note("training attribute model, seed " + std::to_string(tc.seed));
    auto attr_res =
        train(train_set, valid_set, mc, tc, scheme, LossMode::kAttributesOnly);
    note("training value model, seed " + std::to_string(tc.seed));
    auto value_res =
        train(train_set, valid_set, mc, tc, scheme, LossMode::kValuesOnly);
    log_epochs(attr_res.log, "attributes");
    log_epochs(value_res.log, "values");
    summary["best_epoch"] =
        json{{"attributes", attr_res.best_epoch}, {"values", value_res.best_epoch}};
    ckpt.models.emplace_back("attr_model", std::move(attr_res.best));
    ckpt.models.emplace_back("value_model", std::move(value_res.best));
  }

  const std::string ckpt_path = (fs::path(dir) / "model.ckpt").string();
  save_checkpoint(ckpt, ckpt_path);
  write_text((fs::path(dir) / "metrics.jsonl").string(), lines.str());

  json resolved;
  resolved["data"] = a.data;
  resolved["out"] = dir;
  resolved["model"] = detail::dims_to_json(mc);
  resolved["train"] = json{{"lambda", tc.lambda},
                           {"learning_rate", tc.learning_rate},
                           {"batch_size", tc.batch_size},
                           {"epochs", tc.epochs},
                           {"seed", tc.seed},
                           {"train_fraction", tc.train_fraction},
                           {"patience", tc.patience},
                           {"freeze_text_encoder", tc.freeze_text_encoder}};
  resolved["ablation"] = detail::ablation_to_json(tc.ablation);
  write_text((fs::path(dir) / "config.json").string(),
             resolved.dump(2) + "\n");

  const auto report = eval_checkpoint(ckpt, valid_set, scheme);
  summary["checkpoint"] = ckpt_path;
  summary["valid"] = report_json(report);
  return summary;
}

void run_train(TrainCli& a) {
  if (!a.config_file.empty()) apply_config_file(a);
  if (a.seeds == 0) throw ConfigError("train: --seeds must be >= 1");

  const auto manifest =
      load_manifest((fs::path(a.data) / "manifest.json").string());
  const auto train_inst = load_instances(split_file(a.data, "train"), manifest);
  const auto valid_inst = load_instances(split_file(a.data, "valid"), manifest);
  const auto vocab = Vocabulary::build(train_inst);
  const TagScheme scheme(manifest.labels);

  ModelConfig mc;
  mc.hidden = a.hidden;
  mc.attention_dim = a.attention_dim;
  mc.visual_dim = manifest.d_v;
  mc.regions = manifest.k;
  mc.num_labels = manifest.labels.size();
  mc.vocab_size = vocab.size();
  mc.max_len = manifest.max_len;
  mc.encoder_layers = a.layers;
  mc.ff_hidden = a.ff_hidden;
  mc.include_special_in_sums = a.include_special_in_sums;
  mc.untie_visual_value = a.untie_visual_value;

  TrainConfig tc;
  tc.lambda = a.lambda;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.train_fraction = a.train_fraction;
  tc.patience = a.patience;
  tc.freeze_text_encoder = a.freeze_text_encoder;
  if (!a.ablation.empty()) tc.ablation.apply(a.ablation);

  const auto train_set = prepare_instances<double>(train_inst, vocab, mc);
  const auto valid_set = prepare_instances<double>(valid_inst, vocab, mc);

  json runs = json::array();
  std::vector<double> attr_f1s, value_f1s;
  for (std::size_t i = 0; i < a.seeds; ++i) {
    TrainConfig seeded = tc;
    seeded.seed = a.seed + i;
    const std::string dir =
        a.seeds > 1
            ? (fs::path(a.out) / ("seed_" + std::to_string(seeded.seed)))
                  .string()
            : a.out;
    json summary = train_one_seed(a, manifest, vocab, scheme, mc, seeded,
                                  train_set, valid_set, dir);
    attr_f1s.push_back(summary["valid"]["attributes"]["f1"].get<double>());
    value_f1s.push_back(summary["valid"]["values"]["f1"].get<double>());
    runs.push_back(std::move(summary));
  }

  if (a.seeds > 1) {
    json agg;
    agg["runs"] = std::move(runs);
    double m = 0, sd = 0;
    mean_std(attr_f1s, m, sd);
    agg["attr_f1"] = json{{"mean", m}, {"std", sd}};
    mean_std(value_f1s, m, sd);
    agg["value_f1"] = json{{"mean", m}, {"std", sd}};
    write_text((fs::path(a.out) / "summary.json").string(),
               agg.dump(2) + "\n");
    std::cout << agg.dump(2) << "\n";
  } else {
    std::cout << runs.front().dump(2) << "\n";
  }
}

// ---------------------------------------------------------------------------
// eval / awareness / predict / inspect
// ---------------------------------------------------------------------------

struct EvalCli {
  std::string checkpoint, data, split = "test", upper_bound, out;
};

void run_eval(const EvalCli& a) {
  const Session s = open_session(a.checkpoint, a.data, a.split);
  MetricsReport report;
  if (a.upper_bound.empty()) {
    report = eval_checkpoint(s.ckpt, s.prepared, s.scheme);
  } else {
    const auto& params = a.upper_bound == "value_given_gold_attrs"
                             ? s.ckpt.value_model()
                             : s.ckpt.attribute_model();
    report = upper_bound_eval(params, s.ckpt.ablation, s.prepared, s.scheme,
                              a.upper_bound);
  }
  json j;
  j["checkpoint"] = a.checkpoint;
  j["data"] = a.data;
  j["split"] = a.split;
  j["instances"] = s.prepared.size();
  if (!a.upper_bound.empty()) j["upper_bound"] = a.upper_bound;
  j.update(report_json(report));
  emit(j, a.out);
}

struct AwarenessCli {
  std::string checkpoint, data, split = "test", out;
  std::size_t permutations = 8;
  std::uint64_t seed = 1;
  bool force_identity = false;
};

void run_awareness(const AwarenessCli& a) {
  const Session s = open_session(a.checkpoint, a.data, a.split);
  const auto value_rep =
      awareness(s.ckpt.value_model(), s.ckpt.ablation, s.prepared, s.scheme,
                a.permutations, a.seed, a.force_identity);
  const auto attr_rep =
      s.ckpt.multitask()
          ? value_rep
          : awareness(s.ckpt.attribute_model(), s.ckpt.ablation, s.prepared,
                      s.scheme, a.permutations, a.seed, a.force_identity);

  json j;
  j["checkpoint"] = a.checkpoint;
  j["split"] = a.split;
  j["instances"] = s.prepared.size();
  j["permutations"] = a.permutations;
  j["seed"] = a.seed;
  j["force_identity"] = a.force_identity;
  j["congruent"] = json{{"value_f1", value_rep.congruent_value_f1},
                        {"attr_f1", attr_rep.congruent_attr_f1}};
  j["incongruent"] = json{{"value_f1", value_rep.incongruent_value_f1},
                          {"attr_f1", attr_rep.incongruent_attr_f1}};
  j["delta"] = json{{"value", json{{"mean", value_rep.delta_value_mean},
                                   {"std", value_rep.delta_value_std}}},
                    {"attr", json{{"mean", attr_rep.delta_attr_mean},
                                  {"std", attr_rep.delta_attr_std}}}};
  j["p_values"] = json{{"value", value_rep.p_values_value},
                       {"attr", attr_rep.p_values_attr}};
  j["fisher"] = json{{"value", value_rep.fisher_p_value},
                     {"attr", attr_rep.fisher_p_attr}};
  emit(j, a.out);
}

struct PredictCli {
  std::string checkpoint, input, out;
};

void run_predict(const PredictCli& a) {
  const auto ckpt = load_checkpoint<double>(a.checkpoint);
  const Vocabulary vocab(ckpt.vocab_tokens);
  const TagScheme scheme(ckpt.labels);
  Manifest manifest;
  manifest.labels = ckpt.labels;
  manifest.d_v = ckpt.config.visual_dim;
  manifest.k = ckpt.config.regions;
  manifest.max_len = ckpt.config.max_len;
  const auto instances = load_instances(a.input, manifest);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary);
    if (!file) throw DataError("cannot write " + a.out);
    os = &file;
  }

  AblationConfig ablation = ckpt.ablation;
  ablation.teacher_force_attributes = false;
  ablation.teacher_force_values = false;
  for (const auto& inst : instances) {
    const auto prep = prepare_instance<double>(inst, vocab, ckpt.config);
    const auto attr_pred = predict_one(ckpt.attribute_model(), ablation, prep);
    const auto value_pred =
        ckpt.multitask() ? attr_pred
                         : predict_one(ckpt.value_model(), ablation, prep);

    json line;
    line["id"] = inst.id;
    json attrs = json::array();
    for (int label : attr_pred.attributes)
      attrs.push_back(json{{"label", scheme.label_name(label)},
                           {"score", attr_pred.attr_scores[label]}});
    line["attributes"] = std::move(attrs);
    json scores;
    for (std::size_t l = 0; l < attr_pred.attr_scores.size(); ++l)
      scores[scheme.label_name(static_cast<int>(l))] =
          attr_pred.attr_scores[l];
    line["attribute_scores"] = std::move(scores);
    json values = json::array();
    for (const auto& span : tags_to_spans(value_pred.tags, scheme)) {
      json sj;
      sj["label"] = scheme.label_name(span.label);
      sj["start"] = span.start;
      sj["end"] = span.end;
      json toks = json::array();
      for (std::size_t i = span.start; i < span.end; ++i)
        toks.push_back(inst.tokens[i]);
      sj["tokens"] = std::move(toks);
      values.push_back(std::move(sj));
    }
    line["values"] = std::move(values);
    *os << line.dump() << "\n";
  }
  if (!a.out.empty() && !file) throw DataError("write failed: " + a.out);
}

struct InspectCli {
  std::string checkpoint, data, split = "test", instance_id, out = ".";
};

void run_inspect(const InspectCli& a) {
  const Session s = open_session(a.checkpoint, a.data, a.split);
  std::size_t index = s.instances.size();
  for (std::size_t i = 0; i < s.instances.size(); ++i)
    if (s.instances[i].id == a.instance_id) {
      index = i;
      break;
    }
  if (index == s.instances.size())
    throw DataError("instance '" + a.instance_id + "' not found in split '" +
                    a.split + "'");

  const auto dump =
      inspect_gates(s.ckpt.value_model(), s.ckpt.ablation, s.prepared[index]);
  fs::create_directories(a.out);
  auto num = [](double x) { return json(x).dump(); };

  std::ostringstream g;
  g << "token,g_global\n";
  for (std::size_t i = 0; i < dump.tokens.size(); ++i)
    g << dump.tokens[i] << "," << num(dump.global_gate[i]) << "\n";
  const std::string global_path =
      (fs::path(a.out) / "global_gate.csv").string();
  write_text(global_path, g.str());

  std::ostringstream r;
  r << "region,g_regional\n";
  for (std::size_t k = 0; k < dump.regional_gate.size(); ++k)
    r << k << "," << num(dump.regional_gate[k]) << "\n";
  const std::string regional_path =
      (fs::path(a.out) / "regional_gate.csv").string();
  write_text(regional_path, r.str());

  std::ostringstream m;
  m << "token";
  if (!dump.attn_visual.empty())
    for (std::size_t k = 0; k < dump.attn_visual.front().size(); ++k)
      m << ",region_" << k;
  m << "\n";
  for (std::size_t i = 0; i < dump.tokens.size(); ++i) {
    m << dump.tokens[i];
    for (double w : dump.attn_visual[i]) m << "," << num(w);
    m << "\n";
  }
  const std::string attn_path = (fs::path(a.out) / "attention.csv").string();
  write_text(attn_path, m.str());

  json j;
  j["instance"] = a.instance_id;
  j["files"] = json::array({global_path, regional_path, attn_path});
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "multimodal joint attribute prediction and value extraction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mjave 1.0.0");

  SynthCli synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--n", synth_args.cfg.n, "total instances");
  synth->add_option("--seed", synth_args.cfg.seed, "generator seed");
  synth->add_option("--labels", synth_args.cfg.num_labels, "attribute labels");
  synth->add_option("--ambiguity", synth_args.cfg.ambiguity,
                    "fraction of instances with an ambiguous value word");
  synth->add_option("--dv", synth_args.cfg.d_v, "visual feature width");
  synth->add_option("--k", synth_args.cfg.k, "image regions");
  synth->add_option("--values-per-label", synth_args.cfg.values_per_label,
                    "distinct values per label");
  synth->add_option("--noise-std", synth_args.cfg.noise_std,
                    "feature noise level");
  synth->add_option("--max-len", synth_args.cfg.max_len, "token budget");
  synth->callback([&] { run_synth(synth_args); });

  TrainCli train_args;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", train_args.data, "dataset directory")->required();
  tr->add_option("--out", train_args.out, "output directory")->required();
  tr->add_option("--config", train_args.config_file,
                 "JSON config file (flags take precedence)");
  train_args.o_epochs = tr->add_option("--epochs", train_args.epochs, "epochs");
  train_args.o_batch = tr->add_option("--batch", train_args.batch, "batch size");
  train_args.o_lr = tr->add_option("--lr", train_args.lr, "learning rate");
  train_args.o_lambda =
      tr->add_option("--lambda", train_args.lambda, "consistency loss weight");
  train_args.o_seed = tr->add_option("--seed", train_args.seed, "base seed");
  train_args.o_seeds = tr->add_option(
      "--seeds", train_args.seeds, "number of seeds (seed, seed+1, ...)");
  train_args.o_fraction = tr->add_option(
      "--train-fraction", train_args.train_fraction, "training data fraction");
  train_args.o_patience =
      tr->add_option("--patience", train_args.patience,
                     "early-stop patience in epochs (0 disables)");
  train_args.o_freeze = tr->add_flag("--freeze-text-encoder",
                                     train_args.freeze_text_encoder,
                                     "do not update text encoder parameters");
  train_args.o_ablation = tr->add_option(
      "--ablation", train_args.ablation,
      "comma-separated switches, e.g. use_visual=false,use_kl=0");
  train_args.o_hidden =
      tr->add_option("--hidden", train_args.hidden, "hidden width");
  train_args.o_attn = tr->add_option("--attention-dim", train_args.attention_dim,
                                     "attention width");
  train_args.o_layers =
      tr->add_option("--layers", train_args.layers, "encoder layers");
  train_args.o_ff =
      tr->add_option("--ff-hidden", train_args.ff_hidden, "feed-forward width");
  train_args.o_special =
      tr->add_flag("--include-special-in-sums",
                   train_args.include_special_in_sums,
                   "include [CLS]/[SEP] positions in pooled sums");
  train_args.o_untie =
      tr->add_flag("--untie-visual-value", train_args.untie_visual_value,
                   "separate visual projection for the value head");
  tr->callback([&] { run_train(train_args); });

  EvalCli eval_args;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")
      ->required();
  ev->add_option("--data", eval_args.data, "dataset directory")->required();
  ev->add_option("--split", eval_args.split, "train, valid or test");
  ev->add_option("--upper-bound", eval_args.upper_bound,
                 "teacher-forcing mode: value_given_gold_attrs or "
                 "attr_given_gold_values");
  ev->add_option("--out", eval_args.out, "also write the report here");
  ev->callback([&] { run_eval(eval_args); });

  AwarenessCli aware_args;
  auto* aw = app.add_subcommand(
      "awareness", "test image sensitivity under deranged image assignments");
  aw->add_option("--checkpoint", aware_args.checkpoint, "checkpoint file")
      ->required();
  aw->add_option("--data", aware_args.data, "dataset directory")->required();
  aw->add_option("--split", aware_args.split, "train, valid or test");
  aw->add_option("--permutations", aware_args.permutations,
                 "number of derangements");
  aw->add_option("--seed", aware_args.seed, "permutation seed");
  aw->add_flag("--force-identity", aware_args.force_identity,
               "use identity assignments (diagnostic; deltas must be zero)");
  aw->add_option("--out", aware_args.out, "also write the report here");
  aw->callback([&] { run_awareness(aware_args); });

  PredictCli predict_args;
  auto* pr = app.add_subcommand("predict", "predict attributes and values");
  pr->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file")
      ->required();
  pr->add_option("--input", predict_args.input,
                 "JSONL instances (gold fields optional)")
      ->required();
  pr->add_option("--out", predict_args.out, "output JSONL (default stdout)");
  pr->callback([&] { run_predict(predict_args); });

  InspectCli inspect_args;
  auto* in = app.add_subcommand("inspect", "dump gates and attention maps");
  in->add_option("--checkpoint", inspect_args.checkpoint, "checkpoint file")
      ->required();
  in->add_option("--data", inspect_args.data, "dataset directory")->required();
  in->add_option("--split", inspect_args.split, "train, valid or test");
  in->add_option("--instance-id", inspect_args.instance_id, "instance to dump")
      ->required();
  in->add_option("--out", inspect_args.out, "output directory");
  in->callback([&] { run_inspect(inspect_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
