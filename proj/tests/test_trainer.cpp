#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "ecgtext/trainer.hpp"
#include "support.hpp"

using namespace ecgtext;
using testsupport::TempDir;

namespace {

EncoderConfig micro_config(int leads = 2, int proj = 16) {
  EncoderConfig cfg;
  cfg.in_leads = leads;
  cfg.stage_channels = {4, 6, 8, 10};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.projection_dim = proj;
  return cfg;
}

// n training pairs with distinct morphologies and distinct report texts.
std::vector<io::DatasetItem> synthetic_pairs(int n, int leads, std::int64_t samples) {
  std::vector<io::DatasetItem> items;
  const std::vector<std::string> words{"amber", "briar", "cobalt", "dune",
                                       "ember", "fjord", "garnet", "haze"};
  for (int i = 0; i < n; ++i) {
    auto rec = testsupport::make_sine_record("p" + std::to_string(i), leads, samples, 100.0,
                                             1.0 + 1.3 * i, 1.0, 0.01,
                                             static_cast<std::uint64_t>(i + 1));
    rec = io::zscore_normalize(rec);
    io::DatasetItem item;
    item.record = std::move(rec);
    item.report = "distinct " + words[static_cast<std::size_t>(i % 8)] + " waveform " +
                  std::to_string(i);
    item.split = io::Split::train;
    items.push_back(std::move(item));
  }
  return items;
}

double scalar_adam_reference(double x0, double g, int steps, double lr, double b1, double b2,
                             double eps) {
  double x = x0, m = 0.0, v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  return x;
}

}  // namespace

TEST_CASE("adam leaves parameters alone with zero gradients and zero decay") {
  auto params = build_encoder<double>(micro_config(), 1);
  const auto before = params.stem_conv.weight.clone_detached();
  for (auto& p : params.parameters()) p.tensor->zero_grad();
  train::AdamState<double> state;
  train::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  train::adam_step(params, state, cfg);
  for (std::int64_t i = 0; i < before.numel(); ++i)
    CHECK(params.stem_conv.weight.data()[i] == before.data()[i]);
  CHECK(state.step == 1);
}

TEST_CASE("adam trajectory matches a hand-stepped scalar reference") {
  std::vector<double> p{0.5};
  std::vector<double> m, v;
  const double g = 0.3, lr = 1e-3;
  for (int t = 1; t <= 200; ++t) {
    std::vector<double> grad{g};
    train::adam_update_tensor<double>(p, grad, m, v, t, lr, 0.9, 0.999, 1e-8);
  }
  const double expected = scalar_adam_reference(0.5, g, 200, lr, 0.9, 0.999, 1e-8);
  CHECK(std::abs(p[0] - expected) < 1e-10);
}

TEST_CASE("decoupled decay shrinks exactly and skips norm/temperature parameters") {
  auto params = build_encoder<double>(micro_config(), 2);
  const auto w0 = params.stem_conv.weight.clone_detached();
  const auto gamma0 = params.stem_bn.gamma.clone_detached();
  const double logtau0 = params.log_temperature.item();

  train::AdamState<double> state;
  train::TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.weight_decay = 1e-1;
  const int steps = 5;
  for (int t = 0; t < steps; ++t) {
    for (auto& p : params.parameters()) p.tensor->zero_grad();
    train::adam_step(params, state, cfg);
  }
  const double factor = std::pow(1.0 - cfg.learning_rate * cfg.weight_decay, steps);
  for (std::int64_t i = 0; i < w0.numel(); ++i)
    CHECK(params.stem_conv.weight.data()[i] ==
          doctest::Approx(w0.data()[i] * factor).epsilon(1e-12));
  for (std::int64_t i = 0; i < gamma0.numel(); ++i)
    CHECK(params.stem_bn.gamma.data()[i] == gamma0.data()[i]);
  CHECK(params.log_temperature.item() == logtau0);
  CHECK(params.proj_bias.data()[0] == 0.0);  // zero stays zero under pure shrinkage
}

TEST_CASE("coupled decay variant moves parameters through the gradient") {
  auto params = build_encoder<double>(micro_config(), 3);
  const double w0 = params.stem_conv.weight.data()[0];
  train::AdamState<double> state;
  train::TrainConfig cfg;
  cfg.decoupled_weight_decay = false;
  cfg.weight_decay = 0.5;
  for (auto& p : params.parameters()) p.tensor->zero_grad();
  train::adam_step(params, state, cfg);
  CHECK(params.stem_conv.weight.data()[0] != w0);
}

TEST_CASE("non-finite gradients abort with the tensor name") {
  auto params = build_encoder<double>(micro_config(), 4);
  for (auto& p : params.parameters()) p.tensor->zero_grad();
  params.proj_weight.impl->grad[0] = std::numeric_limits<double>::quiet_NaN();
  train::AdamState<double> state;
  train::TrainConfig cfg;
  CHECK_THROWS_WITH_AS(train::adam_step(params, state, cfg), doctest::Contains("proj.weight"),
                       std::runtime_error);
}

TEST_CASE("zero epochs returns the initial parameters and an empty log") {
  const auto items = synthetic_pairs(4, 2, 64);
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);
  auto params = build_encoder<float>(micro_config(), 5);
  const auto before = params.stem_conv.weight.clone_detached();
  train::TrainConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size = 4;
  const auto log = train::pretrain<float>(items, provider, adapter, params, cfg);
  CHECK(log.records.empty());
  for (std::int64_t i = 0; i < before.numel(); ++i)
    CHECK(params.stem_conv.weight.data()[i] == before.data()[i]);
}

TEST_CASE("training is deterministic given a seed") {
  const auto items = synthetic_pairs(6, 2, 64);
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);
  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  cfg.seed = 42;

  auto run = [&] {
    auto params = build_encoder<float>(micro_config(), 9);
    auto log = train::pretrain<float>(items, provider, adapter, params, cfg);
    std::ostringstream out;
    log.write_jsonl(out);
    return std::pair<std::string, float>(out.str(), params.stem_conv.weight.data()[0]);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(!a.first.empty());

  // a different shuffle seed takes a different path
  cfg.seed = 43;
  auto params = build_encoder<float>(micro_config(), 9);
  auto log = train::pretrain<float>(items, provider, adapter, params, cfg);
  std::ostringstream out;
  log.write_jsonl(out);
  CHECK(out.str() != a.first);
}

TEST_CASE("partial trailing batches are dropped with a warning") {
  const auto items = synthetic_pairs(5, 2, 64);
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);
  auto params = build_encoder<float>(micro_config(), 6);
  train::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.shuffle = false;
  const auto log = train::pretrain<float>(items, provider, adapter, params, cfg);
  CHECK(log.records.size() == 4);  // two full batches per epoch, remainder dropped
  REQUIRE(log.warnings.size() == 2);
  CHECK(log.warnings[0].find("short batch") != std::string::npos);
}

TEST_CASE("a failing batch aborts with the offending record ids") {
  // flatline records collapse to all-zero inputs; with zero-initialized
  // shifts the encoder emits zero embeddings, which the similarity matrix
  // rejects, and the abort names the batch.
  std::vector<io::DatasetItem> items;
  for (int i = 0; i < 2; ++i) {
    io::EcgRecord rec;
    rec.header.record_id = "flat" + std::to_string(i);
    rec.header.num_leads = 2;
    rec.header.sampling_rate = 100.0;
    rec.header.samples_per_lead = 64;
    rec.header.gains = {1.0, 1.0};
    rec.header.baselines = {0, 0};
    rec.signal = Tensor<double>::zeros({2, 64});
    io::DatasetItem item;
    item.record = std::move(rec);
    item.report = "flat report " + std::to_string(i);
    item.split = io::Split::train;
    items.push_back(std::move(item));
  }
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);
  auto params = build_encoder<float>(micro_config(), 12);
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  CHECK_THROWS_WITH_AS(train::pretrain<float>(items, provider, adapter, params, cfg),
                       doctest::Contains("flat0"), std::runtime_error);
}

TEST_CASE("batch size below two is rejected") {
  train::TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("frozen provider embeddings are identical after training") {
  const auto items = synthetic_pairs(4, 2, 64);
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);

  std::vector<text::PromptedText> probes;
  for (const auto& item : items) probes.push_back(text::render_report_prompt(item.report));
  const auto before = provider.embed(probes);

  auto params = build_encoder<float>(micro_config(), 7);
  train::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  train::pretrain<float>(items, provider, adapter, params, cfg);

  CHECK(provider.embed(probes) == before);
}

TEST_CASE("initial loss sits near log(batch size)") {
  // At the default embedding width (128) the similarity logits are nearly
  // uniform under a fresh encoder; narrow widths would widen the softmax
  // spread at tau 0.07.
  std::vector<io::DatasetItem> items;
  SplitMix64 noise_rng(77);
  for (int i = 0; i < 32; ++i) {
    io::EcgRecord rec;
    rec.header.record_id = "n" + std::to_string(i);
    rec.header.num_leads = 2;
    rec.header.sampling_rate = 100.0;
    rec.header.samples_per_lead = 64;
    rec.header.gains = {1.0, 1.0};
    rec.header.baselines = {0, 0};
    rec.signal = Tensor<double>::zeros({2, 64});
    for (auto& v : rec.signal.raw_data()) v = noise_rng.normal();
    io::DatasetItem item;
    item.record = io::zscore_normalize(rec);
    item.report = "noise report " + std::to_string(i) + " t" + std::to_string(noise_rng.next() % 100000);
    item.split = io::Split::train;
    items.push_back(std::move(item));
  }
  auto provider = text::EmbeddingProvider::stub(128, 5);
  auto adapter = text::TextAdapter::identity(128);
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.shuffle = false;
  for (std::uint64_t model_seed : {1ULL, 2ULL, 3ULL}) {
    auto params = build_encoder<float>(micro_config(2, 128), model_seed);
    const auto log = train::pretrain<float>(items, provider, adapter, params, cfg);
    REQUIRE(!log.records.empty());
    const double expected = std::log(32.0);
    CHECK(log.records.front().batch_loss > 0.85 * expected);
    CHECK(log.records.front().batch_loss < 1.15 * expected);
  }
}

TEST_CASE("a few pairs overfit quickly") {
  const auto items = synthetic_pairs(4, 2, 64);
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);
  auto params = build_encoder<float>(micro_config(), 8);
  train::TrainConfig cfg;
  cfg.epochs = 250;
  cfg.batch_size = 4;
  const auto log = train::pretrain<float>(items, provider, adapter, params, cfg);
  REQUIRE(log.records.size() == 250);
  CHECK(log.records.back().batch_loss < 0.1 * std::log(4.0));
  // every record is finite and the step counter is strictly monotone
  std::int64_t prev_step = 0;
  for (const auto& r : log.records) {
    CHECK(std::isfinite(r.batch_loss));
    CHECK(r.temperature > 0.0);
    CHECK(std::isfinite(r.grad_norm));
    CHECK(r.step > prev_step);
    prev_step = r.step;
  }
}

TEST_CASE("periodic checkpoints land in the requested directory") {
  TempDir dir("trainckpt");
  const auto items = synthetic_pairs(4, 2, 64);
  auto provider = text::EmbeddingProvider::stub(16, 5);
  auto adapter = text::TextAdapter::identity(16);
  auto params = build_encoder<float>(micro_config(), 10);
  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir.path().string();
  train::pretrain<float>(items, provider, adapter, params, cfg);
  CHECK(std::filesystem::exists(dir.path() / "checkpoint_ep2.bin"));
  CHECK(std::filesystem::exists(dir.path() / "checkpoint_ep4.bin"));
  auto loaded = load_checkpoint<float>(dir.path() / "checkpoint_ep4.bin");
  CHECK(loaded.params.config == params.config);
}

TEST_CASE("provider/adapter dimension mismatches are rejected") {
  const auto items = synthetic_pairs(4, 2, 64);
  auto provider = text::EmbeddingProvider::stub(12, 5);
  auto params = build_encoder<float>(micro_config(), 11);
  train::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  auto bad_adapter = text::TextAdapter::identity(12);  // 12 != projection_dim 16
  CHECK_THROWS_AS(train::pretrain<float>(items, provider, bad_adapter, params, cfg), ShapeError);
  auto mismatched = text::TextAdapter::random_frozen(10, 16, 1);
  CHECK_THROWS_AS(train::pretrain<float>(items, provider, mismatched, params, cfg), ShapeError);
  // a proper adapter bridges the gap
  auto good = text::TextAdapter::random_frozen(12, 16, 1);
  CHECK_NOTHROW(train::pretrain<float>(items, provider, good, params, cfg));
}
