#pragma once

#include <stdexcept>
#include <string>

namespace ecgtext {

// Tensor/record dimension mismatches. Messages carry both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed textual input (headers, CSV rows, manifests). Carries the
// 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Structured file (checkpoint, embedding table, signal container) violates
// its documented format or version.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Manifest-level constraint violations (duplicate records, bad split tags).
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A referenced input file is missing or unreadable.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Class catalog and evaluation data disagree.
class CatalogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration or command-line input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An embedding has (numerically) zero norm; cosine similarity is undefined.
class DegenerateEmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precomputed embedding table has no entry for a rendered prompt.
class MissingEmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ecgtext
