#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ecgtext::text {

enum class TemplateKind { report, diagnostic_label, form_label, rhythm_label };

enum class LabelTask { diagnostic, form, rhythm };

LabelTask label_task_from_string(const std::string& s);

// A raw string plus its rendered full-sentence form. Rendering only wraps;
// the raw text is never otherwise altered.
struct PromptedText {
  std::string raw_text;
  TemplateKind kind;
  std::string rendered;
};

// "The report of the ECG is that {text}"
PromptedText render_report_prompt(const std::string& text);

// "The ECG of {label}, a type of diagnostic." (and the form/rhythm variants)
PromptedText render_label_prompt(const std::string& label, LabelTask task);

// Frozen text-side encoder. Either a lookup table of precomputed vectors
// keyed by rendered prompt string, or a deterministic stub that hashes
// token content into a unit-norm pseudo-random vector. Immutable after
// construction; output never carries gradients.
class EmbeddingProvider {
 public:
  enum class Kind { precomputed, stub };

  static EmbeddingProvider stub(int dimension, std::uint64_t seed);
  static EmbeddingProvider precomputed(std::map<std::string, std::vector<double>> table,
                                       int dimension);

  Kind kind() const { return kind_; }
  int dimension() const { return dimension_; }
  std::size_t table_size() const { return table_.size(); }
  std::uint64_t stub_seed() const { return stub_seed_; }
  const std::map<std::string, std::vector<double>>& table() const { return table_; }

  std::vector<double> embed_one(const std::string& rendered) const;
  std::vector<std::vector<double>> embed(std::span<const PromptedText> prompts) const;

 private:
  EmbeddingProvider() = default;
  Kind kind_ = Kind::stub;
  int dimension_ = 0;
  std::uint64_t stub_seed_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

// Embedding table file: header line `dim=<D>`, then one row per prompt:
// rendered string, a tab, then D space-separated decimal floats.
EmbeddingProvider load_precomputed(const std::filesystem::path& path);
void save_embedding_file(const std::filesystem::path& path,
                         const std::map<std::string, std::vector<double>>& table, int dimension);

// Frozen linear map bridging a provider dimension to the shared embedding
// dimension D. Identity when the dimensions already agree; otherwise a
// seeded Gaussian matrix scaled by 1/sqrt(in_dim), regenerable from
// (in_dim, out_dim, seed) recorded in checkpoints.
class TextAdapter {
 public:
  static TextAdapter identity(int dim);
  static TextAdapter random_frozen(int in_dim, int out_dim, std::uint64_t seed);

  bool is_identity() const { return identity_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> apply(std::span<const double> v) const;
  std::vector<std::vector<double>> apply(const std::vector<std::vector<double>>& rows) const;

 private:
  TextAdapter() = default;
  bool identity_ = true;
  int in_dim_ = 0;
  int out_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> matrix_;  // [out_dim, in_dim], row-major
};

}  // namespace ecgtext::text
