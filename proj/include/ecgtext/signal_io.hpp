#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecgtext/tensor.hpp"

namespace ecgtext::io {

enum class StorageFormat { int16le, csv };

// Geometry and calibration of one stored record. Physical value of a raw
// sample is (raw - baseline) / gain, in millivolts.
struct RecordHeader {
  std::string record_id;
  int num_leads = 0;
  double sampling_rate = 0.0;
  std::int64_t samples_per_lead = 0;
  std::vector<std::string> lead_filenames;
  std::vector<double> gains;
  std::vector<int> baselines;
  StorageFormat format = StorageFormat::int16le;
};

// Multi-lead waveform in millivolts, [num_leads, samples_per_lead].
struct EcgRecord {
  RecordHeader header;
  Tensor<double> signal;
};

enum class Split { train, test_superclass, test_form, test_rhythm };

Split split_from_string(const std::string& s);
std::string split_to_string(Split s);

struct ManifestEntry {
  std::string record_path;
  std::string report;
  std::vector<std::string> labels;
  Split split = Split::train;
};

// Header text: line 1 is `record_id num_leads sampling_rate samples_per_lead`,
// followed by one `filename format gain baseline` line per lead. Format
// token "16" selects little-endian int16 storage.
RecordHeader parse_header(const std::string& text);
std::string serialize_header(const RecordHeader& header);

// Binary samples, int16 little-endian, interleaved lead-major per frame:
// frame 0 lead 0, frame 0 lead 1, ..., frame 1 lead 0, ...
EcgRecord parse_signal(const RecordHeader& header, std::string_view bytes);
std::string write_signal(const EcgRecord& record);

// Text fixture format: line 1 `record_id,sampling_rate`, then one
// comma-separated frame per line (one column per lead).
EcgRecord parse_csv_record(const std::string& text);
std::string write_csv_record(const EcgRecord& record);

// Linear interpolation onto a uniform grid at target_hz; output length is
// round(samples * target_hz / source_hz).
EcgRecord resample(const EcgRecord& record, double target_hz);

// Per-lead mean 0 / stddev 1; flatline leads (stddev < 1e-8) become zeros.
EcgRecord zscore_normalize(const EcgRecord& record);

// Cyclic channel replication up to target_leads (used to feed few-lead
// records into an encoder trained on more leads).
EcgRecord replicate_leads(const EcgRecord& record, int target_leads);

// Manifest: UTF-8, one JSON object per line with keys `record`, `report`,
// `labels` (array of strings), `split`.
std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path);

struct LoadOptions {
  std::optional<double> resample_hz;
  std::optional<std::int64_t> window_samples;  // crop or zero-pad to this length
  bool zscore = true;
  std::optional<int> target_leads;
};

struct DatasetItem {
  EcgRecord record;
  std::string report;
  std::vector<std::string> labels;
  Split split = Split::train;
};

// Reads every manifest entry in order, resolving record paths relative to
// the manifest location, and applies the requested preprocessing.
std::vector<DatasetItem> load_dataset(const std::filesystem::path& manifest_path,
                                      const LoadOptions& options = {});

std::vector<DatasetItem> filter_split(const std::vector<DatasetItem>& items, Split split);

}  // namespace ecgtext::io
