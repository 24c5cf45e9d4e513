#include "ecgtext/text_embed.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ecgtext/error.hpp"
#include "ecgtext/rng.hpp"

namespace ecgtext::text {

namespace {

constexpr const char* kReportPrefix = "The report of the ECG is that ";

std::string task_noun(LabelTask task) {
  switch (task) {
    case LabelTask::diagnostic: return "diagnostic";
    case LabelTask::form: return "form";
    case LabelTask::rhythm: return "rhythm";
  }
  throw std::invalid_argument("render_label_prompt: unknown task");
}

TemplateKind task_kind(LabelTask task) {
  switch (task) {
    case LabelTask::diagnostic: return TemplateKind::diagnostic_label;
    case LabelTask::form: return TemplateKind::form_label;
    case LabelTask::rhythm: return TemplateKind::rhythm_label;
  }
  throw std::invalid_argument("render_label_prompt: unknown task");
}

// Lowercased alphanumeric runs; bytes >= 0x80 stay inside tokens so UTF-8
// sequences are not split.
std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : s) {
    const bool word = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c >= 0x80;
    if (word) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                         : static_cast<char>(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

void add_hashed_direction(std::vector<double>& acc, const std::string& key, std::uint64_t seed) {
  SplitMix64 rng(fnv1a64(key) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
  const std::size_t d = acc.size();
  std::vector<double> dir(d);
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dir[i] = rng.normal();
    sq += dir[i] * dir[i];
  }
  const double norm = std::sqrt(sq);
  for (std::size_t i = 0; i < d; ++i) acc[i] += norm > 0.0 ? dir[i] / norm : 0.0;
}

}  // namespace

LabelTask label_task_from_string(const std::string& s) {
  if (s == "diagnostic") return LabelTask::diagnostic;
  if (s == "form") return LabelTask::form;
  if (s == "rhythm") return LabelTask::rhythm;
  throw std::invalid_argument("unknown label task '" + s + "'");
}

PromptedText render_report_prompt(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("render_report_prompt: empty report text");
  return PromptedText{text, TemplateKind::report, kReportPrefix + text};
}

PromptedText render_label_prompt(const std::string& label, LabelTask task) {
  if (label.empty()) throw std::invalid_argument("render_label_prompt: empty label");
  return PromptedText{label, task_kind(task),
                      "The ECG of " + label + ", a type of " + task_noun(task) + "."};
}

EmbeddingProvider EmbeddingProvider::stub(int dimension, std::uint64_t seed) {
  if (dimension < 1) throw std::invalid_argument("stub provider: dimension must be >= 1");
  EmbeddingProvider p;
  p.kind_ = Kind::stub;
  p.dimension_ = dimension;
  p.stub_seed_ = seed;
  return p;
}

EmbeddingProvider EmbeddingProvider::precomputed(
    std::map<std::string, std::vector<double>> table, int dimension) {
  if (dimension < 1) throw std::invalid_argument("precomputed provider: dimension must be >= 1");
  for (const auto& [key, vec] : table) {
    if (static_cast<int>(vec.size()) != dimension) {
      throw FormatError("precomputed provider: entry '" + key + "' has " +
                        std::to_string(vec.size()) + " values, expected " +
                        std::to_string(dimension));
    }
  }
  EmbeddingProvider p;
  p.kind_ = Kind::precomputed;
  p.dimension_ = dimension;
  p.table_ = std::move(table);
  return p;
}

std::vector<double> EmbeddingProvider::embed_one(const std::string& rendered) const {
  if (kind_ == Kind::precomputed) {
    auto it = table_.find(rendered);
    if (it == table_.end()) {
      throw MissingEmbeddingError("no precomputed embedding for prompt: \"" + rendered + "\"");
    }
    return it->second;
  }
  // Stub: superpose one hashed unit direction per token (bag of tokens), so
  // prompts sharing content words land near each other, then normalize.
  std::vector<double> acc(static_cast<std::size_t>(dimension_), 0.0);
  const auto tokens = tokenize(rendered);
  if (tokens.empty()) {
    add_hashed_direction(acc, rendered, stub_seed_);
  } else {
    for (const auto& tok : tokens) add_hashed_direction(acc, tok, stub_seed_);
  }
  double sq = 0.0;
  for (double v : acc) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm < 1e-12) {
    // Token directions cancelled; fall back to hashing the whole string.
    add_hashed_direction(acc, rendered + "#", stub_seed_);
    sq = 0.0;
    for (double v : acc) sq += v * v;
    norm = std::sqrt(sq);
  }
  for (double& v : acc) v /= norm;
  return acc;
}

std::vector<std::vector<double>> EmbeddingProvider::embed(
    std::span<const PromptedText> prompts) const {
  std::vector<std::vector<double>> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) out.push_back(embed_one(p.rendered));
  return out;
}

EmbeddingProvider load_precomputed(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("embedding file not found: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError("embedding file " + path.string() + ": empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("dim=", 0) != 0) {
    throw FormatError("embedding file " + path.string() + ": first line must be 'dim=<D>'");
  }
  int dim = 0;
  const char* begin = line.data() + 4;
  const char* end = line.data() + line.size();
  auto res = std::from_chars(begin, end, dim);
  if (res.ec != std::errc{} || res.ptr != end || dim < 1) {
    throw FormatError("embedding file " + path.string() + ": bad dimension header '" + line + "'");
  }
  std::map<std::string, std::vector<double>> table;
  long line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("embedding file " + path.string() + " line " + std::to_string(line_no) +
                        ": missing tab separator");
    }
    std::string key = line.substr(0, tab);
    std::vector<double> vec;
    vec.reserve(static_cast<std::size_t>(dim));
    std::istringstream values(line.substr(tab + 1));
    std::string tok;
    while (values >> tok) {
      double v = 0.0;
      const char* tb = tok.data();
      const char* te = tok.data() + tok.size();
      auto vres = std::from_chars(tb, te, v);
      if (vres.ec != std::errc{} || vres.ptr != te) {
        throw FormatError("embedding file " + path.string() + " line " + std::to_string(line_no) +
                          ": bad float '" + tok + "'");
      }
      vec.push_back(v);
    }
    if (static_cast<int>(vec.size()) != dim) {
      throw FormatError("embedding file " + path.string() + " line " + std::to_string(line_no) +
                        ": expected " + std::to_string(dim) + " values, got " +
                        std::to_string(vec.size()));
    }
    if (!table.emplace(std::move(key), std::move(vec)).second) {
      throw FormatError("embedding file " + path.string() + " line " + std::to_string(line_no) +
                        ": duplicate prompt key");
    }
  }
  return EmbeddingProvider::precomputed(std::move(table), dim);
}

void save_embedding_file(const std::filesystem::path& path,
                         const std::map<std::string, std::vector<double>>& table, int dimension) {
  std::string out = "dim=" + std::to_string(dimension) + "\n";
  for (const auto& [key, vec] : table) {
    if (key.find('\t') != std::string::npos || key.find('\n') != std::string::npos) {
      throw std::invalid_argument("embedding key may not contain tab or newline: \"" + key + "\"");
    }
    if (static_cast<int>(vec.size()) != dimension) {
      throw std::invalid_argument("embedding row '" + key + "' does not match dimension " +
                                  std::to_string(dimension));
    }
    out += key;
    out += '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) {
      if (i) out += ' ';
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof(buf), vec[i]);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot open embedding file for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw LoadError("failed writing embedding file: " + path.string());
}

TextAdapter TextAdapter::identity(int dim) {
  if (dim < 1) throw std::invalid_argument("adapter: dimension must be >= 1");
  TextAdapter a;
  a.identity_ = true;
  a.in_dim_ = dim;
  a.out_dim_ = dim;
  return a;
}

TextAdapter TextAdapter::random_frozen(int in_dim, int out_dim, std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("adapter: dimensions must be >= 1");
  TextAdapter a;
  a.identity_ = false;
  a.in_dim_ = in_dim;
  a.out_dim_ = out_dim;
  a.seed_ = seed;
  a.matrix_.resize(static_cast<std::size_t>(in_dim) * static_cast<std::size_t>(out_dim));
  SplitMix64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (auto& v : a.matrix_) v = rng.normal() * scale;
  return a;
}

std::vector<double> TextAdapter::apply(std::span<const double> v) const {
  if (static_cast<int>(v.size()) != in_dim_) {
    throw std::invalid_argument("adapter: expected " + std::to_string(in_dim_) +
                                "-dim vector, got " + std::to_string(v.size()));
  }
  if (identity_) return std::vector<double>(v.begin(), v.end());
  std::vector<double> out(static_cast<std::size_t>(out_dim_), 0.0);
  for (int o = 0; o < out_dim_; ++o) {
    double acc = 0.0;
    for (int i = 0; i < in_dim_; ++i) {
      acc += matrix_[static_cast<std::size_t>(o) * static_cast<std::size_t>(in_dim_) +
                     static_cast<std::size_t>(i)] *
             v[static_cast<std::size_t>(i)];
    }
    out[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

std::vector<std::vector<double>> TextAdapter::apply(
    const std::vector<std::vector<double>>& rows) const {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(apply(r));
  return out;
}

}  // namespace ecgtext::text
