#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgtext/contrastive.hpp"
#include "ecgtext/encoder.hpp"
#include "ecgtext/signal_io.hpp"
#include "ecgtext/text_embed.hpp"

namespace ecgtext::zeroshot {

enum class Task { diagnostic, form, rhythm, external };

Task task_from_string(const std::string& s);
std::string task_to_string(Task t);

// Ordered class-name list for one classification task. The order fixes the
// indexing of probability vectors and the confusion matrix. External
// catalogs (cross-dataset evaluation) reuse the diagnostic prompt template.
struct ClassCatalog {
  Task task = Task::diagnostic;
  std::vector<std::string> labels;

  void validate() const;
  text::LabelTask template_task() const;
  int index_of(const std::string& label) const;  // throws CatalogError when missing

  static ClassCatalog from_json(const nlohmann::json& j);
  static ClassCatalog from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct PerClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;  // row sum: true instances in the split
};

// Confusion counts (rows = true class, cols = predicted class) plus the
// macro-averaged summary. Classes absent from the split are excluded from
// the macro means.
struct EvalReport {
  std::vector<std::string> labels;
  std::vector<std::vector<std::int64_t>> confusion;
  std::vector<PerClassMetrics> per_class;
  std::int64_t total = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  nlohmann::json to_json() const;
  // Four-column metric row, the shape used for reported results tables.
  std::string summary_text() const;
};

EvalReport report_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion,
                                 const std::vector<std::string>& labels);

// Numerically stable softmax (max subtraction); strictly positive output.
std::vector<double> softmax(std::span<const double> logits);

// Frozen embeddings of the rendered class prompts, adapter-mapped to the
// shared dimension; row k corresponds to labels[k].
Tensor<double> build_class_embeddings(const ClassCatalog& catalog,
                                      const text::EmbeddingProvider& provider,
                                      const text::TextAdapter& adapter);

struct Classification {
  std::vector<double> probabilities;
  int predicted = 0;
};

// Softmax over cosine similarities scaled by 1/tau; argmax ties break to
// the lowest index. Probabilities are temperature-dependent, the argmax is
// not.
Classification classify(std::span<const double> ecg_embedding,
                        const Tensor<double>& class_embeddings, double tau);

// Full zero-shot pass: eval-mode encode + project each record, classify
// against the class prompts, and accumulate the confusion matrix.
template <typename S>
EvalReport evaluate(std::span<const io::DatasetItem> items, ModelParams<S>& params,
                    const ClassCatalog& catalog, const text::EmbeddingProvider& provider,
                    const text::TextAdapter& adapter) {
  catalog.validate();
  // Validate every item label before any encoding work, so a catalog/test
  // mismatch surfaces as one error naming the offending labels.
  std::vector<int> truths;
  truths.reserve(items.size());
  std::string missing;
  for (const auto& item : items) {
    if (item.labels.size() != 1) {
      throw CatalogError("evaluate: record '" + item.record.header.record_id + "' carries " +
                         std::to_string(item.labels.size()) + " labels; test items need exactly one");
    }
    bool found = false;
    for (std::size_t i = 0; i < catalog.labels.size(); ++i) {
      if (catalog.labels[i] == item.labels.front()) {
        truths.push_back(static_cast<int>(i));
        found = true;
        break;
      }
    }
    if (!found && missing.find("'" + item.labels.front() + "'") == std::string::npos) {
      if (!missing.empty()) missing += ", ";
      missing += "'" + item.labels.front() + "'";
    }
  }
  if (!missing.empty()) {
    throw CatalogError("evaluate: test labels not in the catalog: " + missing);
  }
  const auto class_embeddings = build_class_embeddings(catalog, provider, adapter);
  const std::size_t k = catalog.labels.size();
  std::vector<std::vector<std::int64_t>> confusion(k, std::vector<std::int64_t>(k, 0));
  const double tau = static_cast<double>(params.temperature());
  for (std::size_t item_idx = 0; item_idx < items.size(); ++item_idx) {
    const auto& item = items[item_idx];
    const int truth = truths[item_idx];
    const auto& rec = item.record;
    const std::int64_t leads = rec.header.num_leads;
    const std::int64_t samples = rec.header.samples_per_lead;
    auto x = Tensor<S>::zeros({1, leads, samples});
    auto xd = x.raw_data();
    const auto src = rec.signal.data();
    for (std::int64_t i = 0; i < leads * samples; ++i) xd[i] = static_cast<S>(src[i]);
    auto embedded = project(params, encode(params, x, Mode::eval));
    std::vector<double> e(static_cast<std::size_t>(embedded.numel()));
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<double>(embedded.data()[i]);
    const auto cls = classify(e, class_embeddings, tau);
    confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(cls.predicted)] += 1;
  }
  return report_from_confusion(confusion, catalog.labels);
}

}  // namespace ecgtext::zeroshot
