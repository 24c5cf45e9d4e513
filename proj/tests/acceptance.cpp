// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the process exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgtext/cli.hpp"
#include "ecgtext/trainer.hpp"
#include "ecgtext/zeroshot.hpp"
#include "support.hpp"

using namespace ecgtext;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

EncoderConfig micro_config(int proj_dim = 8) {
  EncoderConfig cfg;
  cfg.in_leads = 2;
  cfg.stage_channels = {4, 6, 8, 10};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.projection_dim = proj_dim;
  return cfg;
}

// Keeps the one-line-per-criterion report clean while in-process CLI runs
// print their own progress and warnings.
class CaptureOutput {
 public:
  CaptureOutput()
      : old_out_(std::cout.rdbuf(buffer_.rdbuf())), old_err_(std::cerr.rdbuf(buffer_.rdbuf())) {}
  ~CaptureOutput() {
    std::cout.rdbuf(old_out_);
    std::cerr.rdbuf(old_err_);
  }

 private:
  std::ostringstream buffer_;
  std::streambuf* old_out_;
  std::streambuf* old_err_;
};

// Replays the backbone forward and reports the smallest distance to a
// non-differentiable point: |pre-activation| at every relu and the win
// margin inside every max-pool window (fully clamped windows are covered by
// the relu term). Central differences are only trustworthy when this margin
// comfortably exceeds the step size.
double kink_margin(ModelParams<double>& params, const Tensor<double>& batch) {
  double margin = std::numeric_limits<double>::infinity();
  auto track_relu = [&margin](const Tensor<double>& pre) {
    for (double v : pre.data()) margin = std::min(margin, std::abs(v));
  };
  const auto& cfg = params.config;
  auto bn = [](const Tensor<double>& x, BatchNormLayer<double>& l) {
    return batchnorm1d(x, l.gamma, l.beta, l.running_mean, l.running_var, true);
  };
  auto x = bn(conv1d(batch, params.stem_conv.weight, params.stem_conv.stride,
                     params.stem_conv.padding),
              params.stem_bn);
  track_relu(x);
  x = relu(x);
  {
    const std::int64_t n = x.size(0), c = x.size(1), len = x.size(2);
    const int k = cfg.pool_kernel, s = cfg.pool_stride, p = cfg.pool_padding;
    const std::int64_t lout = (len + 2 * p - k) / s + 1;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t lo = 0; lo < lout; ++lo) {
          double best = -1e300, second = -1e300;
          for (int t = 0; t < k; ++t) {
            const std::int64_t pos = lo * s - p + t;
            if (pos < 0 || pos >= len) continue;
            const double v = x.at({b, ch, pos});
            if (v > best) {
              second = best;
              best = v;
            } else if (v > second) {
              second = v;
            }
          }
          if (second > -1e300 && best > 0.0) margin = std::min(margin, best - second);
        }
  }
  x = maxpool1d(x, cfg.pool_kernel, cfg.pool_stride, cfg.pool_padding);
  for (auto& stage : params.stages)
    for (auto& blk : stage) {
      auto shortcut = x;
      if (blk.down_conv) {
        shortcut = bn(conv1d(x, blk.down_conv->weight, blk.down_conv->stride,
                             blk.down_conv->padding),
                      *blk.down_bn);
      }
      auto pre1 = bn(conv1d(x, blk.conv1.weight, blk.conv1.stride, blk.conv1.padding), blk.bn1);
      track_relu(pre1);
      auto y = relu(pre1);
      y = bn(conv1d(y, blk.conv2.weight, blk.conv2.stride, blk.conv2.padding), blk.bn2);
      auto pre_out = add(y, shortcut);
      track_relu(pre_out);
      x = relu(pre_out);
    }
  return margin;
}

// --- criterion 1: analytic vs finite-difference gradients ------------------

Outcome criterion_gradients() {
  const auto deadline = 60.0;
  const auto t0 = Clock::now();
  const auto cfg = micro_config(8);
  const double h = 1e-4;

  // Deterministically pick the first fixture whose forward pass stays clear
  // of relu/max-pool kinks; the finite-difference probe is only valid there.
  Tensor<double> batch, text_rows;
  ModelParams<double> base;
  bool found = false;
  for (std::uint64_t seed = 1; seed <= 32 && !found; ++seed) {
    SplitMix64 rng(seed * 101 + 7);
    auto cand_batch = testsupport::random_tensor<double>({2, 2, 64}, rng);
    auto cand_text = testsupport::random_tensor_nonzero<double>({2, 8}, rng, 0.3);
    auto cand = build_encoder<double>(cfg, seed);
    auto probe = cand.clone();
    if (kink_margin(probe, cand_batch) > 10.0 * h) {
      batch = cand_batch;
      text_rows = cand_text;
      base = std::move(cand);
      found = true;
    }
  }
  if (!found) return {false, "no kink-safe fixture among candidate seeds"};

  auto loss_of = [&](ModelParams<double>& m) {
    auto emb = project(m, encode(m, batch, Mode::train));
    auto sim = similarity_matrix(text_rows, emb);
    return batch_loss(sim, ecgtext::exp(m.log_temperature));
  };

  auto work = base.clone();
  for (auto& p : work.parameters()) p.tensor->zero_grad();
  loss_of(work).backward();

  double worst = 0.0;
  std::string worst_name;
  std::int64_t checked = 0;
  for (auto& p : work.parameters()) {
    auto fd = finite_diff_grad<double>(
        [&](const Tensor<double>& probe) {
          auto clone = base.clone();
          for (auto& q : clone.parameters()) {
            if (q.name == p.name) {
              auto dst = q.tensor->raw_data();
              for (std::int64_t i = 0; i < probe.numel(); ++i) dst[i] = probe.data()[i];
            }
          }
          return loss_of(clone).item();
        },
        *p.tensor, h);
    for (std::int64_t i = 0; i < fd.numel(); ++i) {
      const double a = p.tensor->grad()[i];
      const double f = fd.data()[i];
      const double rel = std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = p.name;
      }
      ++checked;
    }
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream detail;
  detail << checked << " parameters, worst rel err " << worst << " (" << worst_name << "), "
         << secs << "s";
  return {worst <= 1e-4 && secs <= deadline, detail.str()};
}

// --- criterion 2: loss anchors ---------------------------------------------

Outcome criterion_loss_anchors() {
  std::ostringstream detail;
  bool pass = true;
  for (std::int64_t n : {2, 4, 8}) {
    auto sim = SimilarityMatrix<double>::from_values(Tensor<double>::full({n, n}, 0.42));
    const double loss = batch_loss(sim, 0.07).item();
    const double want = std::log(static_cast<double>(n));
    if (loss != want) {
      pass = false;
      detail << "uniform N=" << n << " gave " << loss << " != log N; ";
    }
  }

  auto eye = SimilarityMatrix<double>::from_values(
      Tensor<double>::from_data({2, 2}, {1, 0, 0, 1}));
  const double loss = batch_loss(eye, 1.0).item();
  // brute-force softmax oracle over the same matrix
  double oracle = 0.0;
  const double s[2][2] = {{1, 0}, {0, 1}};
  for (int i = 0; i < 2; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < 2; ++j) {
      row += std::exp(s[i][j]);
      col += std::exp(s[j][i]);
    }
    oracle += (-std::log(std::exp(s[i][i]) / row) - std::log(std::exp(s[i][i]) / col)) / 2.0;
  }
  oracle /= 2.0;
  if (std::abs(loss - 0.313262) > 1e-5 || std::abs(loss - oracle) > 1e-12) {
    pass = false;
    detail << "identity anchor gave " << loss << " (oracle " << oracle << "); ";
  }
  if (pass) detail << "uniform N in {2,4,8} exact; identity anchor " << loss;
  return {pass, detail.str()};
}

// --- shared synthetic fixtures ----------------------------------------------

std::vector<io::DatasetItem> eight_pairs() {
  std::vector<io::DatasetItem> items;
  const std::vector<std::string> words{"amber", "briar", "cobalt", "dune",
                                       "ember", "fjord", "garnet", "haze"};
  for (int i = 0; i < 8; ++i) {
    auto rec = testsupport::make_sine_record("p" + std::to_string(i), 2, 64, 100.0,
                                             1.0 + 1.2 * i, 1.0, 0.01,
                                             static_cast<std::uint64_t>(i + 1));
    io::DatasetItem item;
    item.record = io::zscore_normalize(rec);
    item.report = "pair " + words[static_cast<std::size_t>(i)] + " signature " + std::to_string(i);
    item.split = io::Split::train;
    items.push_back(std::move(item));
  }
  return items;
}

// --- criterion 3: frozen text provider --------------------------------------

Outcome criterion_frozen_provider() {
  const auto items = eight_pairs();
  auto provider = text::EmbeddingProvider::stub(16, 7);
  auto adapter = text::TextAdapter::identity(16);

  std::vector<text::PromptedText> probes;
  for (const auto& item : items) probes.push_back(text::render_report_prompt(item.report));
  for (const auto& label : {"Normal ECG", "Myocardial Infarction", "Abnormal QRS"}) {
    probes.push_back(text::render_label_prompt(label, text::LabelTask::diagnostic));
  }
  const auto before = provider.embed(probes);

  auto params = build_encoder<float>(micro_config(16), 5);
  train::TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 50;
  tc.seed = 9;
  train::pretrain<float>(items, provider, adapter, params, tc);

  const auto after = provider.embed(probes);
  if (after.size() != before.size()) return {false, "probe size changed"};
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (after[i] != before[i]) {
      return {false, "embedding of probe " + std::to_string(i) + " changed"};
    }
  }
  return {true, std::to_string(probes.size()) + " prompts bit-identical after training"};
}

// --- criterion 4: overfit / retrieval sanity --------------------------------

Outcome criterion_overfit_retrieval() {
  const auto deadline = 300.0;
  const auto t0 = Clock::now();
  const auto items = eight_pairs();
  auto provider = text::EmbeddingProvider::stub(16, 7);
  auto adapter = text::TextAdapter::identity(16);
  auto params = build_encoder<float>(micro_config(16), 5);
  train::TrainConfig tc;  // default learning rate and decay
  tc.batch_size = 8;
  tc.epochs = 500;  // one batch per epoch: 500 steps
  tc.seed = 9;
  const auto log = train::pretrain<float>(items, provider, adapter, params, tc);
  const double final_loss = log.records.back().batch_loss;

  auto batch = Tensor<float>::zeros({8, 2, 64});
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 2 * 64; ++j)
      batch.raw_data()[i * 2 * 64 + j] = static_cast<float>(items[static_cast<std::size_t>(i)]
                                                                .record.signal.data()[j]);
  auto emb = project(params, encode(params, batch, Mode::eval));
  std::vector<text::PromptedText> prompts;
  for (const auto& item : items) prompts.push_back(text::render_report_prompt(item.report));
  const auto text_rows = provider.embed(prompts);
  int correct = 0;
  for (int j = 0; j < 8; ++j) {
    std::vector<double> ej(16);
    for (int d = 0; d < 16; ++d) ej[static_cast<std::size_t>(d)] = emb.at({j, d});
    int best = -1;
    double best_sim = -2.0;
    for (int i = 0; i < 8; ++i) {
      const double sim = cosine_similarity<double>(text_rows[static_cast<std::size_t>(i)], ej);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    if (best == j) ++correct;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const double bound = 0.1 * std::log(8.0);
  std::ostringstream detail;
  detail << "retrieval " << correct << "/8, loss " << final_loss << " (bound " << bound << "), "
         << log.records.size() << " steps, " << secs << "s";
  return {correct == 8 && final_loss < bound && secs <= deadline, detail.str()};
}

// --- criterion 5: zero-shot pipeline sanity ----------------------------------

Outcome criterion_zeroshot_pipeline() {
  const auto deadline = 600.0;
  const auto t0 = Clock::now();
  const std::vector<std::string> labels{
      "acute anterior myocardial infarction", "left bundle branch block",
      "paroxysmal atrial fibrillation rhythm", "normal sinus conduction pattern"};

  EncoderConfig cfg;
  cfg.in_leads = 2;
  cfg.stage_channels = {8, 12, 16, 24};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.projection_dim = 64;

  std::vector<io::DatasetItem> train_items, test_items;
  for (int i = 0; i < 64; ++i) {
    const int cls = i % 4;
    auto rec = testsupport::make_class_record("tr" + std::to_string(i), cls, 2, 128, 100.0,
                                              static_cast<std::uint64_t>(1000 + i));
    io::DatasetItem item;
    item.record = io::zscore_normalize(rec);
    item.report = labels[static_cast<std::size_t>(cls)];
    item.split = io::Split::train;
    train_items.push_back(std::move(item));
  }
  for (int i = 0; i < 80; ++i) {
    const int cls = i % 4;
    auto rec = testsupport::make_class_record("te" + std::to_string(i), cls, 2, 128, 100.0,
                                              static_cast<std::uint64_t>(9000 + i));
    io::DatasetItem item;
    item.record = io::zscore_normalize(rec);
    item.labels = {labels[static_cast<std::size_t>(cls)]};
    item.split = io::Split::test_superclass;
    test_items.push_back(std::move(item));
  }

  auto provider = text::EmbeddingProvider::stub(64, 7);
  auto adapter = text::TextAdapter::identity(64);
  auto params = build_encoder<float>(cfg, 5);
  train::TrainConfig tc;
  tc.batch_size = 32;
  tc.epochs = 60;
  tc.seed = 3;
  train::pretrain<float>(train_items, provider, adapter, params, tc);

  zeroshot::ClassCatalog catalog;
  catalog.task = zeroshot::Task::diagnostic;
  catalog.labels = labels;
  const auto report = zeroshot::evaluate<float>(test_items, params, catalog, provider, adapter);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream detail;
  detail << "macro F1 " << report.macro_f1 << " accuracy " << report.accuracy << " over "
         << report.total << " items, " << secs << "s";
  return {report.macro_f1 >= 0.95 && secs <= deadline, detail.str()};
}

// --- criterion 6: metric arithmetic ------------------------------------------

Outcome criterion_metrics() {
  const auto report = zeroshot::report_from_confusion({{2, 1}, {0, 3}}, {"a", "b"});
  std::ostringstream detail;
  detail << "accuracy " << report.accuracy << ", macro F1 " << report.macro_f1;
  const bool pass = std::abs(report.accuracy - 0.8333) <= 1e-4 &&
                    std::abs(report.macro_f1 - 0.8286) <= 1e-4;
  return {pass, detail.str()};
}

// --- criterion 7: ingestion round-trips --------------------------------------

Outcome criterion_roundtrips() {
  SplitMix64 rng(505);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    io::RecordHeader h;
    h.record_id = "rt" + std::to_string(trial);
    h.num_leads = 1 + static_cast<int>(rng.index(4));
    h.sampling_rate = 100.0 + static_cast<double>(rng.index(8)) * 50.0;
    h.samples_per_lead = 8 + static_cast<std::int64_t>(rng.index(48));
    h.format = io::StorageFormat::int16le;
    for (int l = 0; l < h.num_leads; ++l) {
      h.lead_filenames.push_back(h.record_id + ".dat");
      h.gains.push_back(100.0 + static_cast<double>(rng.index(400)));
      h.baselines.push_back(static_cast<int>(rng.index(100)) - 50);
    }
    io::EcgRecord rec;
    rec.header = h;
    rec.signal = Tensor<double>::zeros({h.num_leads, h.samples_per_lead});
    for (auto& v : rec.signal.raw_data()) v = rng.uniform(-5.0, 5.0);

    // binary container: lossy only up to quantization
    const auto header_text = io::serialize_header(h);
    const auto parsed_header = io::parse_header(header_text);
    if (io::serialize_header(parsed_header) != header_text) {
      return {false, "header round-trip not canonical on trial " + std::to_string(trial)};
    }
    const auto bytes = io::write_signal(rec);
    const auto back = io::parse_signal(parsed_header, bytes);
    for (std::int64_t l = 0; l < h.num_leads; ++l) {
      const double bound = 1.0 / (2.0 * h.gains[static_cast<std::size_t>(l)]) + 1e-12;
      for (std::int64_t i = 0; i < h.samples_per_lead; ++i) {
        const std::int64_t idx = l * h.samples_per_lead + i;
        if (std::abs(back.signal.data()[idx] - rec.signal.data()[idx]) > bound) {
          return {false, "int16 round-trip exceeded quantization bound on trial " +
                             std::to_string(trial)};
        }
      }
    }

    // text container: bit-exact
    rec.header.format = io::StorageFormat::csv;
    const auto csv_back = io::parse_csv_record(io::write_csv_record(rec));
    for (std::int64_t i = 0; i < rec.signal.numel(); ++i) {
      if (csv_back.signal.data()[i] != rec.signal.data()[i]) {
        return {false, "csv round-trip not bit-exact on trial " + std::to_string(trial)};
      }
    }
    ++checked;
  }
  return {true, std::to_string(checked) + " randomized records, both containers"};
}

// --- criterion 8: determinism of seeded runs ---------------------------------

void write_cli_fixture(const std::filesystem::path& base) {
  const std::vector<std::string> labels{"slow steady waveform", "rapid spiking waveform"};
  std::string manifest;
  for (int i = 0; i < 8; ++i) {
    const std::string name = "r" + std::to_string(i) + ".csv";
    auto rec = testsupport::make_class_record("r" + std::to_string(i), i % 2, 2, 64, 100.0,
                                              static_cast<std::uint64_t>(i + 1));
    testsupport::write_file(base / name, io::write_csv_record(rec));
    manifest += testsupport::manifest_line(name, labels[static_cast<std::size_t>(i % 2)],
                                           {labels[static_cast<std::size_t>(i % 2)]}, "train");
  }
  testsupport::write_file(base / "data.jsonl", manifest);
  testsupport::write_file(base / "micro.json",
                          nlohmann::json{{"in_leads", 2},
                                         {"stage_channels", {4, 6, 8, 10}},
                                         {"blocks_per_stage", {1, 1, 1, 1}},
                                         {"projection_dim", 16},
                                         {"stub_dim", 16},
                                         {"sample_rate_hz", 100.0},
                                         {"window_seconds", 0.64},
                                         {"batch_size", 4},
                                         {"epochs", 3}}
                              .dump(2));
}

Outcome criterion_determinism() {
  testsupport::TempDir dir("accept_det");
  write_cli_fixture(dir.path());
  auto run_once = [&](const std::string& tag) {
    CaptureOutput silence;
    const auto out = dir.path() / tag;
    const int rc = cli::run({"pretrain", "--manifest", (dir.path() / "data.jsonl").string(),
                             "--stub-text", "--config", (dir.path() / "micro.json").string(),
                             "--seed", "17", "--out", out.string()});
    return std::pair<int, std::filesystem::path>(rc, out);
  };
  const auto a = run_once("a");
  const auto b = run_once("b");
  if (a.first != 0 || b.first != 0) return {false, "pretrain run failed"};
  const auto log_a = testsupport::read_file(a.second / "train_log.jsonl");
  const auto log_b = testsupport::read_file(b.second / "train_log.jsonl");
  const auto ckpt_a = testsupport::read_file(a.second / "checkpoint.bin");
  const auto ckpt_b = testsupport::read_file(b.second / "checkpoint.bin");
  if (log_a.empty() || ckpt_a.empty()) return {false, "missing artifacts"};
  if (log_a != log_b) return {false, "train logs differ"};
  if (ckpt_a != ckpt_b) return {false, "checkpoints differ"};
  return {true, "logs (" + std::to_string(log_a.size()) + " B) and checkpoints (" +
                    std::to_string(ckpt_a.size()) + " B) byte-identical"};
}

// --- criterion 9: hyperparameter wiring --------------------------------------

Outcome criterion_hyperparameters() {
  // library defaults
  const auto defaults = cli::to_json(cli::RunConfig{});
  auto check = [&](const nlohmann::json& j, const std::string& where) -> std::string {
    if (j.at("tau_init") != 0.07) return where + ": tau_init != 0.07";
    if (j.at("projection_dim") != 128) return where + ": projection_dim != 128";
    if (j.at("learning_rate") != 1e-3) return where + ": learning_rate != 1e-3";
    if (j.at("weight_decay") != 1e-3) return where + ": weight_decay != 1e-3";
    if (j.at("batch_size") != 32) return where + ": batch_size != 32";
    if (j.at("epochs") != 50) return where + ": epochs != 50";
    return "";
  };
  std::string err = check(defaults, "defaults");
  if (!err.empty()) return {false, err};

  // end-to-end: a default-config run echoes the same values to disk
  testsupport::TempDir dir("accept_hp");
  write_cli_fixture(dir.path());
  const auto out = dir.path() / "run";
  int rc;
  {
    CaptureOutput silence;  // batch 32 > 8 fixture pairs: every batch drops
    rc = cli::run({"pretrain", "--manifest", (dir.path() / "data.jsonl").string(), "--stub-text",
                   "--out", out.string()});
  }
  if (rc != 0) return {false, "default pretrain run failed"};
  const auto echoed = nlohmann::json::parse(testsupport::read_file(out / "resolved_config.json"));
  err = check(echoed, "resolved_config.json");
  if (!err.empty()) return {false, err};
  // the model side: a freshly built encoder starts at tau = 0.07
  auto params = build_encoder<double>(EncoderConfig{}, 1);
  if (std::abs(params.temperature() - 0.07) > 1e-12) return {false, "built tau != 0.07"};
  return {true, "tau 0.07, D 128, lr 1e-3, wd 1e-3, batch 32, epochs 50 in defaults and echo"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* label;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness vs finite differences", criterion_gradients},
      {2, "contrastive loss anchors", criterion_loss_anchors},
      {3, "frozen text provider across training", criterion_frozen_provider},
      {4, "overfit and in-batch retrieval", criterion_overfit_retrieval},
      {5, "zero-shot pipeline on separable classes", criterion_zeroshot_pipeline},
      {6, "macro metric arithmetic", criterion_metrics},
      {7, "ingestion round-trips", criterion_roundtrips},
      {8, "seeded run determinism", criterion_determinism},
      {9, "default hyperparameter wiring", criterion_hyperparameters},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s - %s (%.2fs)\n", outcome.pass ? "PASS" : "FAIL", c.id,
                c.label, outcome.detail.c_str(), secs);
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  if (failures == 0) {
    std::printf("all %zu criteria passed\n", criteria.size());
  } else {
    std::printf("%d criteria FAILED\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
