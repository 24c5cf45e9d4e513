#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgtext/contrastive.hpp"
#include "ecgtext/encoder.hpp"
#include "ecgtext/signal_io.hpp"
#include "ecgtext/text_embed.hpp"

namespace ecgtext::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  int batch_size = 32;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool shuffle = true;
  // Decoupled decay shrinks parameters directly by lr * wd per step; the
  // coupled variant folds wd * param into the gradient instead.
  bool decoupled_weight_decay = true;
  double clip_norm = 0.0;  // 0 disables clipping
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::string checkpoint_dir;
  CheckpointExtras checkpoint_extras;

  void validate() const {
    if (batch_size < 2) {
      throw std::invalid_argument("train config: batch_size must be >= 2 (in-batch negatives)");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate <= 0");
    if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay < 0");
    if (epochs < 0) throw std::invalid_argument("train config: epochs < 0");
  }
};

// First/second moment buffers per parameter plus the shared step counter.
template <typename S>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::unordered_map<std::string, std::pair<std::vector<S>, std::vector<S>>> moments;
};

struct TrainLogRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double batch_loss = 0.0;
  double temperature = 0.0;
  double grad_norm = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRecord> records;
  std::vector<std::string> warnings;

  void write_jsonl(std::ostream& out) const {
    for (const auto& r : records) {
      nlohmann::json j{{"epoch", r.epoch},
                       {"step", r.step},
                       {"batch_loss", r.batch_loss},
                       {"tau", r.temperature},
                       {"grad_norm", r.grad_norm}};
      out << j.dump() << "\n";
    }
  }
};

// Bias-corrected Adam on one tensor. Weight decay is applied by the caller
// (it depends on the parameter's decay exemption), not here.
template <typename S>
void adam_update_tensor(std::span<S> param, std::span<const S> grad, std::vector<S>& m,
                        std::vector<S>& v, std::int64_t step, double lr, double beta1,
                        double beta2, double epsilon) {
  if (m.size() != param.size()) m.assign(param.size(), S(0));
  if (v.size() != param.size()) v.assign(param.size(), S(0));
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
    m[i] = static_cast<S>(mi);
    v[i] = static_cast<S>(vi);
    const double m_hat = mi / bc1;
    const double v_hat = vi / bc2;
    param[i] = static_cast<S>(static_cast<double>(param[i]) -
                              lr * m_hat / (std::sqrt(v_hat) + epsilon));
  }
}

// One optimizer step over every trainable tensor, consuming the gradients
// accumulated by backward(). Weight decay skips batch-norm parameters and
// the temperature.
template <typename S>
void adam_step(ModelParams<S>& params, AdamState<S>& state, const TrainConfig& config) {
  auto named = params.parameters();
  for (auto& p : named) {
    if (!p.tensor->has_grad()) {
      throw std::invalid_argument("adam_step: missing gradient for tensor '" + p.name + "'");
    }
    for (S g : p.tensor->grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw std::runtime_error("adam_step: non-finite gradient in tensor '" + p.name + "'");
      }
    }
  }
  ++state.step;
  for (auto& p : named) {
    auto data = p.tensor->raw_data();
    const auto grad = p.tensor->grad();
    auto& [m, v] = state.moments[p.name];
    const bool decay = config.weight_decay > 0.0 && !p.decay_exempt;
    if (decay && !config.decoupled_weight_decay) {
      std::vector<S> coupled(grad.begin(), grad.end());
      for (std::size_t i = 0; i < coupled.size(); ++i)
        coupled[i] += static_cast<S>(config.weight_decay) * data[i];
      adam_update_tensor<S>(data, coupled, m, v, state.step, config.learning_rate, state.beta1,
                            state.beta2, state.epsilon);
      continue;
    }
    if (decay) {
      const S shrink = static_cast<S>(1.0 - config.learning_rate * config.weight_decay);
      for (auto& x : data) x *= shrink;
    }
    adam_update_tensor<S>(data, grad, m, v, state.step, config.learning_rate, state.beta1,
                          state.beta2, state.epsilon);
  }
}

namespace detail {

// Stack per-record signals into one [N, leads, samples] batch tensor.
template <typename S>
Tensor<S> stack_records(std::span<const io::DatasetItem* const> items) {
  const auto& first = items.front()->record;
  const std::int64_t leads = first.header.num_leads;
  const std::int64_t samples = first.header.samples_per_lead;
  auto batch = Tensor<S>::zeros({static_cast<std::int64_t>(items.size()), leads, samples});
  auto out = batch.raw_data();
  for (std::size_t n = 0; n < items.size(); ++n) {
    const auto& rec = items[n]->record;
    if (rec.header.num_leads != leads || rec.header.samples_per_lead != samples) {
      throw ShapeError("pretrain: record '" + rec.header.record_id +
                       "' does not match batch geometry [" + std::to_string(leads) + "," +
                       std::to_string(samples) + "]");
    }
    const auto src = rec.signal.data();
    for (std::int64_t i = 0; i < leads * samples; ++i)
      out[static_cast<std::int64_t>(n) * leads * samples + i] = static_cast<S>(src[i]);
  }
  return batch;
}

template <typename S>
Tensor<S> rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  const std::int64_t d = static_cast<std::int64_t>(rows.front().size());
  auto t = Tensor<S>::zeros({n, d});
  auto out = t.raw_data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      out[i * d + j] = static_cast<S>(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
  return t;
}

inline bool rows_equal(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace detail

// Contrastive pretraining loop. Per batch: render report prompts, look up
// frozen text embeddings, encode + project the signals, form the similarity
// matrix, take the symmetric batch loss, backpropagate, and apply Adam to
// the encoder-side parameters only. The text provider is re-checked for
// bitwise-identical output after every epoch.
template <typename S>
TrainLog pretrain(std::span<const io::DatasetItem> items, const text::EmbeddingProvider& provider,
                  const text::TextAdapter& adapter, ModelParams<S>& params,
                  const TrainConfig& config) {
  config.validate();
  if (adapter.out_dim() != params.config.projection_dim) {
    throw ShapeError("pretrain: text side yields " + std::to_string(adapter.out_dim()) +
                     "-dim vectors but the projection head emits " +
                     std::to_string(params.config.projection_dim));
  }
  if (provider.dimension() != adapter.in_dim()) {
    throw ShapeError("pretrain: provider dimension " + std::to_string(provider.dimension()) +
                     " does not match adapter input " + std::to_string(adapter.in_dim()));
  }

  TrainLog log;
  AdamState<S> state;

  // Snapshot the frozen provider on the full prompt set.
  std::vector<text::PromptedText> probe_prompts;
  for (const auto& item : items) probe_prompts.push_back(text::render_report_prompt(item.report));
  const auto frozen_baseline = provider.embed(probe_prompts);

  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 shuffle_rng(config.seed);
  std::int64_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) {
      // Fisher-Yates with our own generator: identical order on every
      // standard library.
      for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(shuffle_rng.index(i));
        std::swap(order[i - 1], order[j]);
      }
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count = std::min(order.size() - start,
                                         static_cast<std::size_t>(config.batch_size));
      if (count < static_cast<std::size_t>(config.batch_size)) {
        const std::string w = "dropping short batch of " + std::to_string(count) +
                              " items at end of epoch " + std::to_string(epoch);
        log.warnings.push_back(w);
        std::cerr << "[pretrain] warning: " << w << "\n";
        break;
      }
      std::vector<const io::DatasetItem*> batch_items;
      std::vector<text::PromptedText> prompts;
      batch_items.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        batch_items.push_back(&items[order[start + i]]);
        prompts.push_back(text::render_report_prompt(batch_items.back()->report));
      }
      auto batch_ids = [&batch_items] {
        std::string ids;
        for (const auto* it : batch_items) {
          if (!ids.empty()) ids += ", ";
          ids += it->record.header.record_id;
        }
        return ids;
      };

      Tensor<S> loss;
      try {
        auto batch = detail::stack_records<S>(batch_items);
        auto text_rows = adapter.apply(provider.embed(prompts));
        auto text_matrix = detail::rows_to_tensor<S>(text_rows);  // constant: no grad
        auto raw = encode(params, batch, Mode::train);
        auto embedded = project(params, raw);
        auto sim = similarity_matrix(text_matrix, embedded);
        auto tau = ecgtext::exp(params.log_temperature);
        loss = batch_loss(sim, tau);
      } catch (const std::exception& e) {
        throw std::runtime_error("pretrain: aborted on batch [" + batch_ids() + "]: " + e.what());
      }
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("pretrain: non-finite loss on batch [" + batch_ids() + "]");
      }

      for (auto& p : params.parameters()) p.tensor->zero_grad();
      loss.backward();

      double sq_norm = 0.0;
      for (auto& p : params.parameters())
        for (S g : p.tensor->grad()) sq_norm += static_cast<double>(g) * static_cast<double>(g);
      const double grad_norm = std::sqrt(sq_norm);
      if (config.clip_norm > 0.0 && grad_norm > config.clip_norm) {
        const S scale = static_cast<S>(config.clip_norm / grad_norm);
        for (auto& p : params.parameters())
          for (auto& g : p.tensor->impl->grad) g *= scale;
      }

      adam_step(params, state, config);
      ++step;
      log.records.push_back(TrainLogRecord{epoch, step, loss_value,
                                           static_cast<double>(params.temperature()), grad_norm});
    }

    const auto now = provider.embed(probe_prompts);
    if (!detail::rows_equal(now, frozen_baseline)) {
      throw std::runtime_error("pretrain: frozen text provider produced different embeddings "
                               "after epoch " + std::to_string(epoch));
    }

    if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
        (epoch + 1) % config.checkpoint_every == 0) {
      const auto path = std::filesystem::path(config.checkpoint_dir) /
                        ("checkpoint_ep" + std::to_string(epoch + 1) + ".bin");
      save_checkpoint(params, path, config.checkpoint_extras);
    }
  }
  return log;
}

}  // namespace ecgtext::train
