#pragma once

// The Adam optimizer and the deterministic multitask training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mjave/errors.hpp"
#include "mjave/evaluation.hpp"
#include "mjave/losses.hpp"
#include "mjave/metrics.hpp"
#include "mjave/model.hpp"
#include "mjave/random.hpp"
#include "mjave/tensor.hpp"

namespace mjave {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(ModelParams<T>& params, AdamConfig config, bool skip_encoder = false)
      : config_(config) {
    params.visit([&](const std::string& name, Tensor<T>& t) {
      if (skip_encoder && name.rfind("encoder/", 0) == 0) return;
      slots_.push_back({&t, std::vector<T>(t.size(), T(0)),
                        std::vector<T>(t.size(), T(0))});
    });
  }

  // One update with every accumulated gradient multiplied by grad_scale
  // (1/batch for mean reduction); gradients are cleared afterwards.
  void step(double grad_scale) {
    ++t_;
    const T lr = static_cast<T>(config_.learning_rate);
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T eps = static_cast<T>(config_.epsilon);
    const T bc1 = T(1) - static_cast<T>(std::pow(config_.beta1, t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(config_.beta2, t_));
    const T gs = static_cast<T>(grad_scale);
    for (auto& slot : slots_) {
      auto& value = slot.param->mutable_value();
      const auto& grad = slot.param->grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const T g = grad[i] * gs;
        slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
        slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
        const T m_hat = slot.m[i] / bc1;
        const T v_hat = slot.v[i] / bc2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
      slot.param->zero_grad();
    }
  }

  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor<T>* param;
    std::vector<T> m, v;
  };
  AdamConfig config_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lambda = 0.5;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  double train_fraction = 1.0;
  std::size_t patience = 0;  // 0 disables early stopping
  bool freeze_text_encoder = false;
  AblationConfig ablation;

  void validate() const {
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (learning_rate <= 0) throw ConfigError("train: learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("train: batch size must be > 0");
    if (epochs == 0) throw ConfigError("train: epochs must be > 0");
    if (train_fraction <= 0 || train_fraction > 1)
      throw ConfigError("train: train_fraction must be in (0, 1]");
    ablation.validate();
  }
};

// Which loss drives the optimization. Joint is the multitask setting; the
// single-task modes realize the "no multitask" ablation as two separate runs
// that share only the initialization seed.
enum class LossMode { kJoint, kAttributesOnly, kValuesOnly };

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_a = 0, loss_v = 0, kl = 0, loss = 0;
  double attr_f1 = 0, value_f1 = 0;
};

template <typename T>
struct TrainResult {
  ModelParams<T> best;
  std::vector<EpochMetrics> log;
  std::size_t best_epoch = 0;
  double best_metric = 0;
};

// Stratified, seeded subsample keyed by each instance's first gold label.
template <typename T>
std::vector<const PreparedInstance<T>*> sample_fraction(
    const std::vector<PreparedInstance<T>>& instances, double fraction,
    std::uint64_t seed) {
  if (fraction >= 1.0) {
    std::vector<const PreparedInstance<T>*> all;
    for (const auto& inst : instances) all.push_back(&inst);
    return all;
  }
  std::map<int, std::vector<const PreparedInstance<T>*>> buckets;
  for (const auto& inst : instances) {
    const int key =
        inst.source->attributes.empty() ? -1 : inst.source->attributes.front();
    buckets[key].push_back(&inst);
  }
  Rng rng(seed ^ 0x5851f42d4c957f2dull);
  std::vector<const PreparedInstance<T>*> out;
  for (auto& [key, bucket] : buckets) {
    std::shuffle(bucket.begin(), bucket.end(), rng);
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(fraction * static_cast<double>(bucket.size()))));
    for (std::size_t i = 0; i < keep && i < bucket.size(); ++i)
      out.push_back(bucket[i]);
  }
  return out;
}

template <typename T>
TrainResult<T> train(const std::vector<PreparedInstance<T>>& train_set,
                     const std::vector<PreparedInstance<T>>& valid_set,
                     const ModelConfig& model_config, const TrainConfig& config,
                     const TagScheme& scheme, LossMode mode = LossMode::kJoint) {
  config.validate();
  if (train_set.empty() || valid_set.empty())
    throw DataError("train: empty train or validation set");

  ModelParams<T> params = ModelParams<T>::init(model_config, config.seed);
  if (config.freeze_text_encoder)
    params.visit([](const std::string& name, Tensor<T>& t) {
      if (name.rfind("encoder/", 0) == 0) t.set_requires_grad(false);
    });

  auto pool = sample_fraction(train_set, config.train_fraction, config.seed);
  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  Adam<T> optimizer(params, adam_config, config.freeze_text_encoder);

  const bool with_kl = config.ablation.use_kl && mode == LossMode::kJoint;
  Rng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult<T> result;
  result.best_metric = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_a = 0, sum_v = 0, sum_kl = 0, sum_total = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), begin + config.batch_size);
      try {
        for (std::size_t i = begin; i < end; ++i) {
          const auto& inst = *pool[order[i]];
          auto out = forward(inst.enc, inst.image, params, config.ablation,
                             &inst.gold_attr_row);
          Tensor<T> la = loss_attribute(out.attr_probs, inst.gold_attr_row);
          Tensor<T> lv =
              loss_value(out.tag_probs, inst.gold_tags_padded, inst.enc.real);
          Tensor<T> mapped = map_value_to_attribute(
              out.tag_probs, inst.enc.real, model_config.num_labels);
          Tensor<T> kl = kl_penalty(out.attr_probs, mapped);

          Tensor<T> objective;
          switch (mode) {
            case LossMode::kAttributesOnly: objective = la; break;
            case LossMode::kValuesOnly: objective = lv; break;
            case LossMode::kJoint:
              objective = with_kl ? total_loss(la, lv, kl, config.lambda)
                                  : add(la, lv);
              break;
          }
          backward(objective);
          sum_a += static_cast<double>(la.item());
          sum_v += static_cast<double>(lv.item());
          sum_kl += static_cast<double>(kl.item());
          sum_total += static_cast<double>(objective.item());
        }
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << ", batch "
           << begin / config.batch_size << ": " << e.what();
        throw NumericError(os.str());
      }
      optimizer.step(1.0 / static_cast<double>(end - begin));
    }

    auto report = evaluate_dataset(params, config.ablation, valid_set, scheme);
    EpochMetrics em;
    em.epoch = epoch;
    const double denom = static_cast<double>(pool.size());
    em.loss_a = sum_a / denom;
    em.loss_v = sum_v / denom;
    em.kl = sum_kl / denom;
    em.loss = sum_total / denom;
    em.attr_f1 = report.attributes.f1;
    em.value_f1 = report.values.f1;
    result.log.push_back(em);

    const double metric =
        mode == LossMode::kAttributesOnly ? em.attr_f1 : em.value_f1;
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best = params.clone();
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace mjave
