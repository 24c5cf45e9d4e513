#include "ecgtext/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ecgtext/error.hpp"

namespace ecgtext::zeroshot {

Task task_from_string(const std::string& s) {
  if (s == "diagnostic") return Task::diagnostic;
  if (s == "form") return Task::form;
  if (s == "rhythm") return Task::rhythm;
  if (s == "external") return Task::external;
  throw CatalogError("unknown task '" + s + "'");
}

std::string task_to_string(Task t) {
  switch (t) {
    case Task::diagnostic: return "diagnostic";
    case Task::form: return "form";
    case Task::rhythm: return "rhythm";
    case Task::external: return "external";
  }
  return "diagnostic";
}

void ClassCatalog::validate() const {
  if (labels.empty()) throw CatalogError("catalog has no labels");
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw CatalogError("catalog contains an empty label");
    if (!seen.insert(l).second) throw CatalogError("catalog label duplicated: '" + l + "'");
  }
}

text::LabelTask ClassCatalog::template_task() const {
  switch (task) {
    case Task::diagnostic: return text::LabelTask::diagnostic;
    case Task::form: return text::LabelTask::form;
    case Task::rhythm: return text::LabelTask::rhythm;
    case Task::external: return text::LabelTask::diagnostic;
  }
  return text::LabelTask::diagnostic;
}

int ClassCatalog::index_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return static_cast<int>(i);
  }
  throw CatalogError("label '" + label + "' is not in the catalog");
}

ClassCatalog ClassCatalog::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("task") || !j.contains("labels")) {
    throw CatalogError("catalog JSON needs keys 'task' and 'labels'");
  }
  ClassCatalog c;
  try {
    c.task = task_from_string(j.at("task").get<std::string>());
    c.labels = j.at("labels").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CatalogError(std::string("catalog JSON: ") + e.what());
  }
  c.validate();
  return c;
}

ClassCatalog ClassCatalog::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw LoadError("catalog not found: " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CatalogError("catalog " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ClassCatalog::to_json() const {
  return nlohmann::json{{"task", task_to_string(task)}, {"labels", labels}};
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

Tensor<double> build_class_embeddings(const ClassCatalog& catalog,
                                      const text::EmbeddingProvider& provider,
                                      const text::TextAdapter& adapter) {
  catalog.validate();
  std::vector<text::PromptedText> prompts;
  prompts.reserve(catalog.labels.size());
  for (const auto& label : catalog.labels) {
    prompts.push_back(text::render_label_prompt(label, catalog.template_task()));
  }
  const auto rows = adapter.apply(provider.embed(prompts));
  const std::int64_t k = static_cast<std::int64_t>(rows.size());
  const std::int64_t d = static_cast<std::int64_t>(rows.front().size());
  auto out = Tensor<double>::zeros({k, d});
  auto dst = out.raw_data();
  for (std::int64_t i = 0; i < k; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      dst[i * d + j] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return out;
}

Classification classify(std::span<const double> ecg_embedding,
                        const Tensor<double>& class_embeddings, double tau) {
  if (!class_embeddings.defined() || class_embeddings.dim() != 2) {
    throw ShapeError("classify: class embeddings must be [K,D]");
  }
  const std::int64_t k = class_embeddings.size(0);
  const std::int64_t d = class_embeddings.size(1);
  if (k < 2) throw std::invalid_argument("classify: need at least 2 classes");
  if (static_cast<std::int64_t>(ecg_embedding.size()) != d) {
    throw ShapeError("classify: embedding length " + std::to_string(ecg_embedding.size()) +
                     " does not match class dimension " + std::to_string(d));
  }
  if (!(tau > 0.0)) throw std::invalid_argument("classify: temperature must be positive");
  std::vector<double> logits(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    std::span<const double> row(class_embeddings.data().data() + i * d,
                                static_cast<std::size_t>(d));
    logits[static_cast<std::size_t>(i)] = cosine_similarity<double>(ecg_embedding, row) / tau;
  }
  Classification result;
  result.probabilities = softmax(logits);
  result.predicted = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[static_cast<std::size_t>(result.predicted)]) {
      result.predicted = static_cast<int>(i);
    }
  }
  return result;
}

EvalReport report_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion,
                                 const std::vector<std::string>& labels) {
  const std::size_t k = labels.size();
  if (confusion.size() != k) {
    throw ShapeError("report: confusion has " + std::to_string(confusion.size()) +
                     " rows for " + std::to_string(k) + " labels");
  }
  for (const auto& row : confusion) {
    if (row.size() != k) throw ShapeError("report: confusion matrix is not square");
  }
  EvalReport r;
  r.labels = labels;
  r.confusion = confusion;
  std::int64_t total = 0, diagonal = 0;
  std::vector<std::int64_t> row_sum(k, 0), col_sum(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      total += confusion[i][j];
      row_sum[i] += confusion[i][j];
      col_sum[j] += confusion[i][j];
      if (i == j) diagonal += confusion[i][j];
    }
  r.total = total;
  r.accuracy = total > 0 ? static_cast<double>(diagonal) / static_cast<double>(total) : 0.0;
  int present = 0;
  double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    PerClassMetrics m;
    m.label = labels[i];
    m.support = row_sum[i];
    const double tp = static_cast<double>(confusion[i][i]);
    m.precision = col_sum[i] > 0 ? tp / static_cast<double>(col_sum[i]) : 0.0;
    m.recall = row_sum[i] > 0 ? tp / static_cast<double>(row_sum[i]) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    r.per_class.push_back(m);
    if (row_sum[i] > 0) {
      ++present;
      sum_p += m.precision;
      sum_r += m.recall;
      sum_f += m.f1;
    }
  }
  if (present > 0) {
    r.macro_precision = sum_p / present;
    r.macro_recall = sum_r / present;
    r.macro_f1 = sum_f / present;
  }
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : per_class) {
    per.push_back({{"label", m.label},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"support", m.support}});
  }
  return nlohmann::json{{"labels", labels},
                        {"confusion", confusion},
                        {"total", total},
                        {"accuracy", accuracy},
                        {"macro_precision", macro_precision},
                        {"macro_recall", macro_recall},
                        {"macro_f1", macro_f1},
                        {"per_class", per}};
}

std::string EvalReport::summary_text() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "Accuracy  Precision  Recall  F1\n%.4f    %.4f     %.4f  %.4f\n", accuracy,
                macro_precision, macro_recall, macro_f1);
  return std::string(buf);
}

}  // namespace ecgtext::zeroshot
