#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgtext/rng.hpp"
#include "ecgtext/signal_io.hpp"
#include "ecgtext/tensor.hpp"

namespace testsupport {

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ecgtext_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

template <typename S>
ecgtext::Tensor<S> random_tensor(std::vector<std::int64_t> shape, ecgtext::SplitMix64& rng,
                                 double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  auto t = ecgtext::Tensor<S>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.raw_data()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// Values bounded away from zero, for ops with a kink at the origin.
template <typename S>
ecgtext::Tensor<S> random_tensor_nonzero(std::vector<std::int64_t> shape,
                                         ecgtext::SplitMix64& rng, double min_abs = 0.05,
                                         bool requires_grad = false) {
  auto t = ecgtext::Tensor<S>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.raw_data()) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = static_cast<S>(sign * (min_abs + rng.uniform(0.0, 1.0)));
  }
  return t;
}

// Compares backward() gradients of loss_fn(x) against central finite
// differences. loss_fn must rebuild the graph from its argument on every
// call (pure in x). Returns the worst relative error.
inline double gradient_check(
    const std::function<ecgtext::Tensor<double>(const ecgtext::Tensor<double>&)>& loss_fn,
    const ecgtext::Tensor<double>& x, double h = 1e-4) {
  auto leaf = x.clone_detached();
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  auto loss = loss_fn(leaf);
  loss.backward();
  const auto analytic = leaf.grad();

  auto fd = ecgtext::finite_diff_grad<double>(
      [&](const ecgtext::Tensor<double>& probe) { return loss_fn(probe).item(); }, x, h);

  double worst = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double a = analytic[i];
    const double f = fd.data()[i];
    const double scale = std::max({std::abs(a), std::abs(f), 1e-6});
    worst = std::max(worst, std::abs(a - f) / scale);
  }
  return worst;
}

// --- waveform fixtures -------------------------------------------------------

// Multi-lead record: each lead is a sinusoid with per-lead phase shift plus
// optional deterministic noise.
inline ecgtext::io::EcgRecord make_sine_record(const std::string& id, int leads,
                                               std::int64_t samples, double rate_hz,
                                               double freq_hz, double amplitude = 1.0,
                                               double noise = 0.0, std::uint64_t noise_seed = 0) {
  ecgtext::io::RecordHeader h;
  h.record_id = id;
  h.num_leads = leads;
  h.sampling_rate = rate_hz;
  h.samples_per_lead = samples;
  h.format = ecgtext::io::StorageFormat::csv;
  h.gains.assign(static_cast<std::size_t>(leads), 1.0);
  h.baselines.assign(static_cast<std::size_t>(leads), 0);
  ecgtext::io::EcgRecord rec;
  rec.header = h;
  rec.signal = ecgtext::Tensor<double>::zeros({leads, samples});
  auto out = rec.signal.raw_data();
  ecgtext::SplitMix64 rng(noise_seed);
  for (int l = 0; l < leads; ++l)
    for (std::int64_t i = 0; i < samples; ++i) {
      const double t = static_cast<double>(i) / rate_hz;
      double v = amplitude * std::sin(2.0 * 3.141592653589793 * freq_hz * t + 0.35 * l);
      if (noise > 0.0) v += noise * rng.uniform(-1.0, 1.0);
      out[l * samples + i] = v;
    }
  return rec;
}

// Four distinguishable morphologies (sine, fast sine, square, sawtooth) with
// small per-record deterministic jitter.
inline ecgtext::io::EcgRecord make_class_record(const std::string& id, int class_index, int leads,
                                                std::int64_t samples, double rate_hz,
                                                std::uint64_t jitter_seed) {
  ecgtext::io::RecordHeader h;
  h.record_id = id;
  h.num_leads = leads;
  h.sampling_rate = rate_hz;
  h.samples_per_lead = samples;
  h.format = ecgtext::io::StorageFormat::csv;
  h.gains.assign(static_cast<std::size_t>(leads), 1.0);
  h.baselines.assign(static_cast<std::size_t>(leads), 0);
  ecgtext::io::EcgRecord rec;
  rec.header = h;
  rec.signal = ecgtext::Tensor<double>::zeros({leads, samples});
  auto out = rec.signal.raw_data();
  ecgtext::SplitMix64 rng(jitter_seed);
  const double phase = rng.uniform(0.0, 6.28);
  const double amp = 0.9 + 0.2 * rng.uniform();
  for (int l = 0; l < leads; ++l)
    for (std::int64_t i = 0; i < samples; ++i) {
      const double t = static_cast<double>(i) / rate_hz;
      const double w = 2.0 * 3.141592653589793;
      double v = 0.0;
      switch (class_index % 4) {
        case 0: v = std::sin(w * 2.0 * t + phase + 0.3 * l); break;
        case 1: v = std::sin(w * 9.0 * t + phase + 0.3 * l); break;
        case 2: v = std::sin(w * 4.0 * t + phase) >= 0.0 ? 1.0 : -1.0; break;
        default: {
          const double cycle = t * 6.0 + phase / w;
          v = 2.0 * (cycle - std::floor(cycle)) - 1.0;
          break;
        }
      }
      out[l * samples + i] = amp * v + 0.02 * rng.uniform(-1.0, 1.0);
    }
  return rec;
}

inline std::string manifest_line(const std::string& record, const std::string& report,
                                 const std::vector<std::string>& labels,
                                 const std::string& split) {
  nlohmann::json j{{"record", record}, {"report", report}, {"labels", labels}, {"split", split}};
  return j.dump() + "\n";
}

}  // namespace testsupport
