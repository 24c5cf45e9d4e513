#include "ecgtext/signal_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "ecgtext/error.hpp"

namespace ecgtext::io {

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) {
    if (cur.back() == '\r') cur.pop_back();
    lines.push_back(cur);
  }
  return lines;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string t;
  while (in >> t) tokens.push_back(t);
  return tokens;
}

double parse_double(const std::string& token, const char* what, long line) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  auto res = std::from_chars(token.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ParseError(std::string("invalid ") + what + " '" + token + "'", line);
  }
  return v;
}

std::int64_t parse_int(const std::string& token, const char* what, long line) {
  std::int64_t v = 0;
  const char* end = token.data() + token.size();
  auto res = std::from_chars(token.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ParseError(std::string("invalid ") + what + " '" + token + "'", line);
  }
  return v;
}

// Shortest round-trip decimal form; integers print without an exponent.
std::string format_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::filesystem::path& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(std::string(what) + " not found: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test_superclass") return Split::test_superclass;
  if (s == "test_form") return Split::test_form;
  if (s == "test_rhythm") return Split::test_rhythm;
  throw ManifestError("unknown split tag '" + s + "'");
}

std::string split_to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_superclass: return "test_superclass";
    case Split::test_form: return "test_form";
    case Split::test_rhythm: return "test_rhythm";
  }
  return "train";
}

RecordHeader parse_header(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("empty header", 1);
  const auto head = split_tokens(lines[0]);
  if (head.size() != 4) {
    throw ParseError("header line must be 'record_id num_leads sampling_rate samples_per_lead'",
                     1);
  }
  RecordHeader h;
  h.record_id = head[0];
  h.num_leads = static_cast<int>(parse_int(head[1], "lead count", 1));
  h.sampling_rate = parse_double(head[2], "sampling rate", 1);
  h.samples_per_lead = parse_int(head[3], "sample count", 1);
  if (h.num_leads < 1) throw ParseError("lead count must be >= 1", 1);
  if (!(h.sampling_rate > 0.0)) throw ParseError("sampling rate must be > 0", 1);
  if (h.samples_per_lead < 1) throw ParseError("sample count must be >= 1", 1);

  long line_no = 1;
  for (int lead = 0; lead < h.num_leads; ++lead) {
    ++line_no;
    if (static_cast<std::size_t>(line_no) > lines.size()) {
      throw ParseError("missing lead line for lead " + std::to_string(lead), line_no);
    }
    const auto tok = split_tokens(lines[static_cast<std::size_t>(line_no) - 1]);
    if (tok.size() != 4) {
      throw ParseError("lead line must be 'filename format gain baseline'", line_no);
    }
    if (tok[1] != "16") {
      throw FormatError("unsupported format token '" + tok[1] + "' (line " +
                        std::to_string(line_no) + ")");
    }
    const double gain = parse_double(tok[2], "gain", line_no);
    if (gain == 0.0) throw ParseError("gain must be non-zero", line_no);
    h.lead_filenames.push_back(tok[0]);
    h.gains.push_back(gain);
    h.baselines.push_back(static_cast<int>(parse_int(tok[3], "baseline", line_no)));
  }
  for (std::size_t i = static_cast<std::size_t>(line_no); i < lines.size(); ++i) {
    if (!split_tokens(lines[i]).empty()) {
      throw ParseError("unexpected trailing content", static_cast<long>(i + 1));
    }
  }
  h.format = StorageFormat::int16le;
  return h;
}

std::string serialize_header(const RecordHeader& header) {
  if (header.format != StorageFormat::int16le) {
    throw std::invalid_argument("serialize_header: only int16le headers have a text form");
  }
  std::string out = header.record_id + " " + std::to_string(header.num_leads) + " " +
                    format_number(header.sampling_rate) + " " +
                    std::to_string(header.samples_per_lead) + "\n";
  for (int lead = 0; lead < header.num_leads; ++lead) {
    out += header.lead_filenames[static_cast<std::size_t>(lead)] + " 16 " +
           format_number(header.gains[static_cast<std::size_t>(lead)]) + " " +
           std::to_string(header.baselines[static_cast<std::size_t>(lead)]) + "\n";
  }
  return out;
}

EcgRecord parse_signal(const RecordHeader& header, std::string_view bytes) {
  if (header.format != StorageFormat::int16le) {
    throw std::invalid_argument("parse_signal: header does not describe int16le storage");
  }
  const std::int64_t leads = header.num_leads;
  const std::int64_t samples = header.samples_per_lead;
  const std::size_t expected = static_cast<std::size_t>(2 * leads * samples);
  if (bytes.size() != expected) {
    throw ParseError("truncated signal for record '" + header.record_id + "': expected " +
                     std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  }
  EcgRecord rec;
  rec.header = header;
  rec.signal = Tensor<double>::zeros({leads, samples});
  auto out = rec.signal.raw_data();
  for (std::int64_t s = 0; s < samples; ++s)
    for (std::int64_t l = 0; l < leads; ++l) {
      const std::size_t off = static_cast<std::size_t>((s * leads + l) * 2);
      const std::uint16_t u = static_cast<std::uint8_t>(bytes[off]) |
                              (static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[off + 1]))
                               << 8);
      const std::int16_t raw = static_cast<std::int16_t>(u);
      out[l * samples + s] =
          (static_cast<double>(raw) - header.baselines[static_cast<std::size_t>(l)]) /
          header.gains[static_cast<std::size_t>(l)];
    }
  return rec;
}

std::string write_signal(const EcgRecord& record) {
  const auto& h = record.header;
  const std::int64_t leads = h.num_leads;
  const std::int64_t samples = h.samples_per_lead;
  std::string out;
  out.reserve(static_cast<std::size_t>(2 * leads * samples));
  for (std::int64_t s = 0; s < samples; ++s)
    for (std::int64_t l = 0; l < leads; ++l) {
      const double mv = record.signal.data()[l * samples + s];
      const double raw_d = mv * h.gains[static_cast<std::size_t>(l)] +
                           h.baselines[static_cast<std::size_t>(l)];
      const long long raw = std::llround(raw_d);
      if (raw < std::numeric_limits<std::int16_t>::min() ||
          raw > std::numeric_limits<std::int16_t>::max()) {
        throw std::invalid_argument("write_signal: sample out of int16 range for record '" +
                                    h.record_id + "'");
      }
      const std::uint16_t u = static_cast<std::uint16_t>(static_cast<std::int16_t>(raw));
      out.push_back(static_cast<char>(u & 0xff));
      out.push_back(static_cast<char>((u >> 8) & 0xff));
    }
  return out;
}

EcgRecord parse_csv_record(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("empty csv record", 1);
  const auto& head = lines[0];
  const auto comma = head.find(',');
  if (comma == std::string::npos || head.find(',', comma + 1) != std::string::npos) {
    throw ParseError("csv record line 1 must be 'record_id,sampling_rate'", 1);
  }
  RecordHeader h;
  h.record_id = head.substr(0, comma);
  h.sampling_rate = parse_double(head.substr(comma + 1), "sampling rate", 1);
  if (h.record_id.empty()) throw ParseError("empty record id", 1);
  if (!(h.sampling_rate > 0.0)) throw ParseError("sampling rate must be > 0", 1);
  h.format = StorageFormat::csv;

  std::vector<std::vector<double>> frames;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (true) {
      const std::size_t next = lines[i].find(',', pos);
      const std::string cell = lines[i].substr(pos, next == std::string::npos ? next : next - pos);
      const double v = parse_double(cell, "sample", static_cast<long>(i + 1));
      if (!std::isfinite(v)) {
        throw ParseError("non-finite sample '" + cell + "'", static_cast<long>(i + 1));
      }
      row.push_back(v);
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (!frames.empty() && row.size() != frames.front().size()) {
      throw ParseError("ragged row: expected " + std::to_string(frames.front().size()) +
                           " columns, got " + std::to_string(row.size()),
                       static_cast<long>(i + 1));
    }
    frames.push_back(std::move(row));
  }
  if (frames.empty()) throw ParseError("csv record has no sample rows", 2);
  h.num_leads = static_cast<int>(frames.front().size());
  h.samples_per_lead = static_cast<std::int64_t>(frames.size());
  h.gains.assign(static_cast<std::size_t>(h.num_leads), 1.0);
  h.baselines.assign(static_cast<std::size_t>(h.num_leads), 0);

  EcgRecord rec;
  rec.header = h;
  rec.signal = Tensor<double>::zeros({h.num_leads, h.samples_per_lead});
  auto out = rec.signal.raw_data();
  for (std::int64_t s = 0; s < h.samples_per_lead; ++s)
    for (std::int64_t l = 0; l < h.num_leads; ++l)
      out[l * h.samples_per_lead + s] =
          frames[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)];
  return rec;
}

std::string write_csv_record(const EcgRecord& record) {
  const auto& h = record.header;
  std::string out = h.record_id + "," + format_number(h.sampling_rate) + "\n";
  for (std::int64_t s = 0; s < h.samples_per_lead; ++s) {
    for (std::int64_t l = 0; l < h.num_leads; ++l) {
      if (l) out += ",";
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof(buf), record.signal.data()[l * h.samples_per_lead + s]);
      out.append(buf, res.ptr);
    }
    out += "\n";
  }
  return out;
}

EcgRecord resample(const EcgRecord& record, double target_hz) {
  if (!(target_hz > 0.0)) throw std::invalid_argument("resample: target_hz must be > 0");
  const double source_hz = record.header.sampling_rate;
  if (target_hz == source_hz) {
    EcgRecord copy;
    copy.header = record.header;
    copy.signal = record.signal.clone_detached();
    return copy;
  }
  const std::int64_t in_len = record.header.samples_per_lead;
  const std::int64_t leads = record.header.num_leads;
  const std::int64_t out_len =
      std::llround(static_cast<double>(in_len) * target_hz / source_hz);
  if (out_len < 1) throw std::invalid_argument("resample: output would be empty");
  EcgRecord out;
  out.header = record.header;
  out.header.sampling_rate = target_hz;
  out.header.samples_per_lead = out_len;
  out.signal = Tensor<double>::zeros({leads, out_len});
  auto dst = out.signal.raw_data();
  const auto src = record.signal.data();
  const double step = source_hz / target_hz;
  for (std::int64_t l = 0; l < leads; ++l)
    for (std::int64_t i = 0; i < out_len; ++i) {
      const double pos = static_cast<double>(i) * step;
      std::int64_t i0 = static_cast<std::int64_t>(std::floor(pos));
      if (i0 >= in_len - 1) {
        dst[l * out_len + i] = src[l * in_len + in_len - 1];
        continue;
      }
      const double frac = pos - static_cast<double>(i0);
      dst[l * out_len + i] = src[l * in_len + i0] * (1.0 - frac) + src[l * in_len + i0 + 1] * frac;
    }
  return out;
}

EcgRecord zscore_normalize(const EcgRecord& record) {
  const std::int64_t leads = record.header.num_leads;
  const std::int64_t n = record.header.samples_per_lead;
  EcgRecord out;
  out.header = record.header;
  out.signal = Tensor<double>::zeros({leads, n});
  auto dst = out.signal.raw_data();
  const auto src = record.signal.data();
  for (std::int64_t l = 0; l < leads; ++l) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += src[l * n + i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = src[l * n + i] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd < 1e-8) continue;  // flatline lead stays all-zero
    for (std::int64_t i = 0; i < n; ++i) dst[l * n + i] = (src[l * n + i] - mean) / sd;
  }
  return out;
}

EcgRecord replicate_leads(const EcgRecord& record, int target_leads) {
  const int src_leads = record.header.num_leads;
  if (target_leads < src_leads) {
    throw ShapeError("replicate_leads: record has " + std::to_string(src_leads) +
                     " leads, cannot shrink to " + std::to_string(target_leads));
  }
  if (target_leads == src_leads) {
    EcgRecord copy;
    copy.header = record.header;
    copy.signal = record.signal.clone_detached();
    return copy;
  }
  const std::int64_t n = record.header.samples_per_lead;
  EcgRecord out;
  out.header = record.header;
  out.header.num_leads = target_leads;
  out.header.gains.clear();
  out.header.baselines.clear();
  out.header.lead_filenames.clear();
  out.signal = Tensor<double>::zeros({target_leads, n});
  auto dst = out.signal.raw_data();
  const auto src = record.signal.data();
  for (int l = 0; l < target_leads; ++l) {
    const int sl = l % src_leads;
    for (std::int64_t i = 0; i < n; ++i) dst[l * n + i] = src[sl * n + i];
    out.header.gains.push_back(record.header.gains[static_cast<std::size_t>(sl)]);
    out.header.baselines.push_back(record.header.baselines[static_cast<std::size_t>(sl)]);
    if (!record.header.lead_filenames.empty()) {
      out.header.lead_filenames.push_back(
          record.header.lead_filenames[static_cast<std::size_t>(sl)]);
    }
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path) {
  const std::string text = read_text_file(path, "manifest");
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen_paths;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const long line_no = static_cast<long>(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError("manifest " + path.string() + " line " + std::to_string(line_no) +
                          ": " + e.what());
    }
    if (!j.is_object() || !j.contains("record") || !j.contains("report") ||
        !j.contains("labels") || !j.contains("split")) {
      throw ManifestError("manifest " + path.string() + " line " + std::to_string(line_no) +
                          ": entry needs keys record/report/labels/split");
    }
    ManifestEntry e;
    try {
      e.record_path = j.at("record").get<std::string>();
      e.report = j.at("report").get<std::string>();
      e.labels = j.at("labels").get<std::vector<std::string>>();
      e.split = split_from_string(j.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
      throw ManifestError("manifest " + path.string() + " line " + std::to_string(line_no) +
                          ": " + ex.what());
    }
    if (!seen_paths.insert(e.record_path).second) {
      throw ManifestError("manifest " + path.string() + ": duplicate record path '" +
                          e.record_path + "'");
    }
    if (e.split != Split::train && e.labels.size() != 1) {
      throw ManifestError("manifest " + path.string() + " line " + std::to_string(line_no) +
                          ": test entries carry exactly one label, got " +
                          std::to_string(e.labels.size()));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

namespace {

EcgRecord load_record_file(const std::filesystem::path& path) {
  if (path.extension() == ".csv") {
    return parse_csv_record(read_text_file(path, "record"));
  }
  const RecordHeader header = parse_header(read_text_file(path, "record header"));
  for (const auto& f : header.lead_filenames) {
    if (f != header.lead_filenames.front()) {
      throw FormatError("record " + path.string() +
                        ": per-lead signal files must all name the same file");
    }
  }
  const auto dat_path = path.parent_path() / header.lead_filenames.front();
  std::ifstream f(dat_path, std::ios::binary);
  if (!f) throw LoadError("signal file not found: " + dat_path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_signal(header, ss.str());
}

EcgRecord fix_window(const EcgRecord& record, std::int64_t window) {
  const std::int64_t n = record.header.samples_per_lead;
  if (n == window) {
    EcgRecord copy;
    copy.header = record.header;
    copy.signal = record.signal.clone_detached();
    return copy;
  }
  const std::int64_t leads = record.header.num_leads;
  EcgRecord out;
  out.header = record.header;
  out.header.samples_per_lead = window;
  out.signal = Tensor<double>::zeros({leads, window});
  auto dst = out.signal.raw_data();
  const auto src = record.signal.data();
  const std::int64_t keep = std::min(n, window);
  for (std::int64_t l = 0; l < leads; ++l)
    for (std::int64_t i = 0; i < keep; ++i) dst[l * window + i] = src[l * n + i];
  return out;
}

}  // namespace

std::vector<DatasetItem> load_dataset(const std::filesystem::path& manifest_path,
                                      const LoadOptions& options) {
  const auto entries = parse_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<DatasetItem> items;
  std::set<std::string> seen_ids;
  items.reserve(entries.size());
  for (const auto& entry : entries) {
    std::filesystem::path record_path(entry.record_path);
    if (record_path.is_relative()) record_path = base / record_path;
    if (!std::filesystem::exists(record_path)) {
      throw LoadError("missing record file: " + record_path.string());
    }
    EcgRecord rec = load_record_file(record_path);
    if (!seen_ids.insert(rec.header.record_id).second) {
      throw ManifestError("manifest " + manifest_path.string() + ": duplicate record_id '" +
                          rec.header.record_id + "'");
    }
    for (double v : rec.signal.data()) {
      if (!std::isfinite(v)) {
        throw ParseError("record '" + rec.header.record_id + "' contains non-finite samples");
      }
    }
    if (options.window_samples && *options.window_samples < 1) {
      throw std::invalid_argument("load_dataset: window_samples must be >= 1");
    }
    if (options.target_leads) rec = replicate_leads(rec, *options.target_leads);
    if (options.resample_hz) rec = resample(rec, *options.resample_hz);
    if (options.zscore) rec = zscore_normalize(rec);
    if (options.window_samples) rec = fix_window(rec, *options.window_samples);
    items.push_back(DatasetItem{std::move(rec), entry.report, entry.labels, entry.split});
  }
  return items;
}

std::vector<DatasetItem> filter_split(const std::vector<DatasetItem>& items, Split split) {
  std::vector<DatasetItem> out;
  for (const auto& item : items) {
    if (item.split != split) continue;
    DatasetItem copy;
    copy.record.header = item.record.header;
    copy.record.signal = item.record.signal.clone_detached();
    copy.report = item.report;
    copy.labels = item.labels;
    copy.split = item.split;
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace ecgtext::io
