#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "posterpp/checkpoint.hpp"
#include "posterpp/data.hpp"
#include "posterpp/train.hpp"
#include "test_util.hpp"

using namespace posterpp;
using posterpp::testing::to_vec;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_height = cfg.input_width = 32;
  cfg.scale_dims = {8, 16, 16};
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.window_tokens = {4, 4, 1};
  cfg.mlp_ratio = 2;
  return cfg;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig t = TrainConfig::preset_named("desk");
  t.epochs = epochs;
  t.batch_size = 4;
  t.target_train_acc = 0.0;
  t.seed = 11;
  return t;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("posterpp_" + name);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

void expect_same_report(const EvalReport& a, const EvalReport& b) {
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_EQ(a.per_class_acc, b.per_class_acc);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.loss), std::bit_cast<std::uint64_t>(b.loss));
  EXPECT_EQ(a.mean_acc, b.mean_acc);
  EXPECT_EQ(a.overall_acc, b.overall_acc);
}

}  // namespace

// --- synthetic data ---------------------------------------------------------

TEST(SynthData, SameSeedIsBitIdentical) {
  const Dataset a = synth_dataset(5, 3, 7, 32), b = synth_dataset(5, 3, 7, 32);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
    EXPECT_TRUE(same_bits(a.samples[i].image, b.samples[i].image));
  }
  EXPECT_FALSE(same_bits(a.samples[0].image, synth_dataset(6, 3, 7, 32).samples[0].image));
}

TEST(SynthData, SizeAndBalance) {
  const Dataset d = synth_dataset(1, 10, 7, 16);
  EXPECT_EQ(d.size(), 70u);
  EXPECT_EQ(d.class_counts(), std::vector<std::size_t>(7, 10));
  EXPECT_EQ(synth_dataset(1, 2, 8, 16).class_counts(), std::vector<std::size_t>(8, 2));
  const auto uneven = synth_dataset_total(1, 80, 7, 16).class_counts();
  EXPECT_EQ(*std::max_element(uneven.begin(), uneven.end()) - *std::min_element(uneven.begin(), uneven.end()), 1u);
}

TEST(SynthData, RejectsBadArguments) {
  EXPECT_THROW(synth_dataset(1, 1, 6, 16), ConfigError);
  EXPECT_THROW(synth_dataset(1, 1, 9, 16), ConfigError);
  EXPECT_THROW(synth_dataset(1, 1, 7, 4), ConfigError);
}

TEST(SynthData, ValuesAreRoughlyCentred) {
  const Dataset d = synth_dataset(2, 4, 7, 32);
  double sum = 0.0, lo = 1e9, hi = -1e9;
  std::size_t n = 0;
  for (const auto& s : d.samples)
    for (double v : s.image.values()) {
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      ++n;
    }
  EXPECT_LT(std::abs(sum / n), 0.2);
  EXPECT_GT(lo, -0.6);
  EXPECT_LT(hi, 0.6);
}

TEST(SynthData, NearestCentroidBeatsChance) {
  const Dataset train_set = synth_dataset(10, 20, 7, 32);
  const Dataset test_set = synth_dataset(99, 10, 7, 32);
  const std::size_t n = train_set.samples[0].image.size();
  std::vector<std::vector<double>> centroid(7, std::vector<double>(n, 0.0));
  for (const auto& s : train_set.samples)
    for (std::size_t i = 0; i < n; ++i) centroid[s.label][i] += s.image[i] / 20.0;
  std::size_t correct = 0;
  for (const auto& s : test_set.samples) {
    std::vector<double> dist(7, 0.0);
    for (std::size_t c = 0; c < 7; ++c)
      for (std::size_t i = 0; i < n; ++i) dist[c] -= std::pow(s.image[i] - centroid[c][i], 2);
    correct += argmax(dist) == s.label;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(test_set.size());
  EXPECT_GT(acc, 1.0 / 7.0) << "accuracy " << acc;
}

TEST(SynthData, SplitIsDeterministicAndComplete) {
  const Dataset d = synth_dataset_total(3, 80, 7, 16);
  const auto [tr, va] = split_dataset(d, 0.2, 4);
  EXPECT_EQ(tr.size(), 64u);
  EXPECT_EQ(va.size(), 16u);
  const auto [tr2, va2] = split_dataset(d, 0.2, 4);
  for (std::size_t i = 0; i < tr.size(); ++i) EXPECT_TRUE(same_bits(tr.samples[i].image, tr2.samples[i].image));
  std::vector<std::size_t> counts(7, 0);
  for (const auto* part : {&tr, &va})
    for (const auto& s : part->samples) ++counts[s.label];
  EXPECT_EQ(counts, d.class_counts());
  EXPECT_THROW(split_dataset(d, 1.0, 4), ConfigError);
}

TEST(SynthData, ModelInputOffset) {
  const Tensor x = to_model_input(Tensor::full({1, 2, 2}, 0.5));
  for (double v : x.values()) EXPECT_DOUBLE_EQ(v, 0.5 - kInputOffset);
}

// --- augmentation -----------------------------------------------------------

TEST(Augment, ForcedFlipTwiceIsIdentity) {
  const Tensor img = synth_dataset(1, 1, 7, 16).samples[3].image;
  const AugmentConfig flip{1.0, 0.0, 0.02, 0.1};
  Rng rng(1);
  const Tensor once = augment(img, flip, rng);
  EXPECT_FALSE(same_bits(once, img));
  EXPECT_TRUE(same_bits(augment(once, flip, rng), img));
  EXPECT_TRUE(same_bits(once, flip_horizontal(img)));
}

TEST(Augment, ZeroProbabilitiesAreIdentity) {
  const Tensor img = synth_dataset(1, 1, 7, 16).samples[0].image;
  const AugmentConfig none{0.0, 0.0, 0.02, 0.1};
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    Rect r;
    EXPECT_TRUE(same_bits(augment(img, none, rng, &r), img));
    EXPECT_EQ(r.area(), 0u);
  }
}

TEST(Augment, ErasedAreaFractionWithinScale) {
  const Tensor img = Tensor::full({3, 64, 64}, -1.0);
  const AugmentConfig erase{0.0, 1.0, 0.02, 0.1};
  Rng rng(3);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Rect r;
    const Tensor out = augment(img, erase, rng, &r);
    const double frac = static_cast<double>(r.area()) / (64.0 * 64.0);
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
    ASSERT_LE(r.top + r.height, 64u);
    ASSERT_LE(r.left + r.width, 64u);
    std::size_t changed = 0;
    for (double v : out.values()) {
      if (v != -1.0) {
        ++changed;
        ASSERT_GE(v, 0.0);
        ASSERT_LT(v, 1.0);
      }
    }
    ASSERT_EQ(changed, 3 * r.area());
  }
  EXPECT_GE(lo, 0.02);
  EXPECT_LE(hi, 0.10);
  EXPECT_LT(lo, 0.03);  // the range is actually explored
  EXPECT_GT(hi, 0.09);
}

TEST(Augment, NarrowScaleStillLandsInRange) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Rect r = erase_rect(7, 9, 0.05, 0.05, rng);
    EXPECT_GE(r.area(), 3u);
    EXPECT_LE(r.area(), 4u);
  }
}

TEST(Augment, ConfigValidation) {
  EXPECT_THROW((AugmentConfig{1.5, 0.0, 0.02, 0.1}.validate()), ConfigError);
  EXPECT_THROW((AugmentConfig{0.5, 0.5, 0.0, 0.1}.validate()), ConfigError);
  EXPECT_THROW((AugmentConfig{0.5, 0.5, 0.2, 0.1}.validate()), ConfigError);
  EXPECT_THROW((AugmentConfig{0.5, 0.5, 0.2, 1.0}.validate()), ConfigError);
}

// --- optimiser and schedule -------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> p{1.0, -2.0, 0.5}, g(3, 0.0);
  const auto before = p;
  AdamState s;
  for (std::uint64_t t = 1; t <= 5; ++t) adam_step(p, g, s, t, 1e-2, 0.0);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  for (double g0 : {0.3, -2.0, 1e-3}) {
    std::vector<double> p{0.7}, g{g0};
    AdamState s;
    adam_step(p, g, s, 1, 1e-3, 0.0);
    EXPECT_NEAR(std::abs(p[0] - 0.7), 1e-3, 1e-6) << g0;
    EXPECT_LT((p[0] - 0.7) * g0, 0.0);
  }
}

TEST(Adam, DecoupledWeightDecay) {
  std::vector<double> p{2.0}, g{0.0};
  AdamState s;
  adam_step(p, g, s, 1, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Adam, ContractErrors) {
  std::vector<double> p(3, 0.0), g(2, 0.0);
  AdamState s;
  EXPECT_THROW(adam_step(p, g, s, 1, 1e-3, 0.0), ContractError);
  std::vector<double> g3(3, 0.0);
  EXPECT_THROW(adam_step(p, g3, s, 0, 1e-3, 0.0), ContractError);
  AdamState wrong{{0.0}, {0.0}};
  EXPECT_THROW(adam_step(p, g3, wrong, 1, 1e-3, 0.0), ContractError);
}

TEST(Adam, SkipsFrozenEntries) {
  ParamStore store;
  Tensor a = store.add("a.w", Tensor::full({2}, 1.0), true);
  Tensor b = store.add("b.w", Tensor::full({2}, 1.0), false);
  a.node()->grad_buffer().assign(2, 0.5);
  Adam adam(store);
  adam.step(store, 1e-2, 1e-4);
  EXPECT_EQ(adam.steps(), 1u);
  EXPECT_NE(a[0], 1.0);
  EXPECT_EQ(b[0], 1.0);
  EXPECT_EQ(b[1], 1.0);
}

TEST(LrSchedule, ExponentialDecay) {
  EXPECT_EQ(lr_schedule(3.5e-4, 0.98, 0), 3.5e-4);
  EXPECT_NEAR(lr_schedule(3.5e-4, 0.98, 1), 3.43e-4, 1e-15);
  EXPECT_NEAR(lr_schedule(1.0, 0.98, 35), 0.4931, 1e-4);
  EXPECT_EQ(lr_schedule(1e-3, 1.0, 100), 1e-3);
}

TEST(TrainPresets, DatasetRecipes) {
  const auto raf = TrainConfig::preset_named("rafdb");
  EXPECT_EQ(raf.lr0, 3.5e-5);
  EXPECT_EQ(raf.lr_alt, 3.5e-4);
  EXPECT_EQ(raf.batch_size, 144u);
  EXPECT_EQ(raf.epochs, 200u);
  EXPECT_EQ(raf.lr_gamma, 0.98);
  EXPECT_EQ(raf.weight_decay, 1e-4);
  EXPECT_EQ(raf.aug.erase_lo, 0.02);
  EXPECT_EQ(raf.aug.erase_hi, 0.1);
  EXPECT_EQ(raf.aug.flip_prob, 0.5);
  for (const char* name : {"affectnet7", "affectnet8"}) {
    const auto a = TrainConfig::preset_named(name);
    EXPECT_EQ(a.lr0, 1e-6);
    EXPECT_EQ(a.aug.erase_prob, 1.0);
    EXPECT_EQ(a.aug.erase_lo, 0.05);
    EXPECT_EQ(a.aug.erase_hi, 0.05);
  }
  EXPECT_EQ(TrainConfig::preset_named("caers").lr0, 4e-5);
  const auto desk = TrainConfig::preset_named("desk");
  EXPECT_EQ(desk.aug.flip_prob, 0.0);
  EXPECT_EQ(desk.aug.erase_prob, 0.0);
  EXPECT_EQ(desk.lr_gamma, 0.98);
  EXPECT_THROW(TrainConfig::preset_named("imagenet"), ConfigError);
}

TEST(TrainPresets, ValidationRejectsBadValues) {
  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    EXPECT_THROW(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.lr0 = 0.0; });
  bad([](TrainConfig& t) { t.lr_gamma = 1.5; });
  bad([](TrainConfig& t) { t.lr_gamma = 0.0; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.aug.erase_hi = 1.0; });
  bad([](TrainConfig& t) { t.target_train_acc = 101.0; });
}

// --- metrics ----------------------------------------------------------------

TEST(EvalReport, PerfectPredictor) {
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 35; ++i) y.push_back(i % 7);
  const EvalReport r = report_from_predictions(y, y, 7);
  EXPECT_EQ(r.mean_acc, 100.0);
  EXPECT_EQ(r.overall_acc, 100.0);
  for (std::size_t a = 0; a < 7; ++a)
    for (std::size_t b = 0; b < 7; ++b) EXPECT_EQ(r.confusion[a][b], a == b ? 5u : 0u);
  EXPECT_EQ(r.class_names.front(), "Neutral");
  EXPECT_EQ(r.class_names.back(), "Anger");
}

TEST(EvalReport, UniformRandomPredictorWithinBinomialBand) {
  Rng rng(7);
  std::vector<std::size_t> y, pred;
  for (std::size_t i = 0; i < 700; ++i) {
    y.push_back(i % 7);
    pred.push_back(rng.below(7));
  }
  const EvalReport r = report_from_predictions(y, pred, 7);
  const double p = 1.0 / 7.0, sigma = 100.0 * std::sqrt(p * (1 - p) / 700.0);
  EXPECT_NEAR(r.overall_acc, 100.0 * p, 3 * sigma);
}

TEST(EvalReport, ConfusionInvariants) {
  Rng rng(8);
  std::vector<std::size_t> y, pred;
  for (std::size_t i = 0; i < 90; ++i) {
    y.push_back(i < 60 ? 0 : 1 + i % 6);  // imbalanced
    pred.push_back(rng.bernoulli(0.6) ? y.back() : rng.below(7));
  }
  const EvalReport r = report_from_predictions(y, pred, 7);
  std::vector<std::size_t> counts(7, 0);
  for (std::size_t l : y) ++counts[l];
  std::size_t trace = 0;
  double mean = 0.0;
  for (std::size_t c = 0; c < 7; ++c) {
    std::size_t row = 0;
    for (std::size_t v : r.confusion[c]) row += v;
    EXPECT_EQ(row, counts[c]);
    trace += r.confusion[c][c];
    EXPECT_DOUBLE_EQ(r.per_class_acc[c], 100.0 * r.confusion[c][c] / counts[c]);
    mean += r.per_class_acc[c] / 7.0;
  }
  EXPECT_DOUBLE_EQ(r.overall_acc, 100.0 * trace / 90.0);
  EXPECT_NEAR(r.mean_acc, mean, 1e-12);
  EXPECT_NE(r.mean_acc, r.overall_acc);
}

TEST(EvalReport, MeanSkipsAbsentClasses) {
  const std::vector<std::size_t> y{0, 0, 1}, pred{0, 1, 1};
  const EvalReport r = report_from_predictions(y, pred, 7);
  EXPECT_DOUBLE_EQ(r.mean_acc, (50.0 + 100.0) / 2.0);
}

TEST(EvalReport, ArgmaxTiesGoLow) {
  const std::vector<double> v{0.1, 0.5, 0.5, 0.2};
  EXPECT_EQ(argmax(v), 1u);
  const std::vector<double> flat(5, 0.0);
  EXPECT_EQ(argmax(flat), 0u);
}

TEST(EvalReport, Errors) {
  const std::vector<std::size_t> none;
  EXPECT_THROW(report_from_predictions(none, none, 7), ContractError);
  const std::vector<std::size_t> y{7}, p{0};
  EXPECT_THROW(report_from_predictions(y, p, 7), IndexError);
  const Model m = Model::build(tiny_config(), 1);
  EXPECT_THROW(evaluate(m, Dataset{{}, 7}), ContractError);
}

TEST(EvalReport, InitialLossNearLogC) {
  const Model m = Model::build(ModelConfig{}, 21);
  const Dataset d = synth_dataset(21, 6, 7, 64);
  const EvalReport r = evaluate(m, d);
  EXPECT_NEAR(r.loss, std::log(7.0), 0.05 * std::log(7.0));
}

// --- checkpoints ------------------------------------------------------------

TEST(Checkpoint, RoundtripIsBitExact) {
  const ModelConfig cfg = tiny_config();
  Model m = Model::build(cfg, 42);
  const auto path = temp_file("roundtrip.ckpt").string();
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path, cfg);
  const auto& a = m.params().entries();
  const auto& b = back.params().entries();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].path, b[i].path);
    EXPECT_EQ(a[i].trainable, b[i].trainable);
    EXPECT_TRUE(same_bits(a[i].tensor, b[i].tensor)) << a[i].path;
  }
  EXPECT_EQ(checkpoint_bytes(m), checkpoint_bytes(back));

  const Dataset d = synth_dataset(4, 2, 7, 32);
  expect_same_report(evaluate(m, d), evaluate(back, d));
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  const Model m = Model::build(tiny_config(), 1);
  const auto bytes = checkpoint_bytes(m);
  ASSERT_GT(bytes.size(), 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "PPV2CKPT");
  EXPECT_EQ(bytes[8], 1);  // version, little-endian
  std::uint64_t digest = 0;
  for (int i = 0; i < 8; ++i) digest |= static_cast<std::uint64_t>(bytes[12 + i]) << (8 * i);
  EXPECT_EQ(digest, config_digest(m.config()));
  EXPECT_EQ(bytes[20] | bytes[21] << 8, static_cast<int>(m.params().size()));
}

TEST(Checkpoint, Errors) {
  const ModelConfig cfg = tiny_config();
  const Model m = Model::build(cfg, 1);
  const auto path = temp_file("errors.ckpt").string();
  save_checkpoint(m, path);

  ModelConfig other = cfg;
  other.vit_depth = 3;
  EXPECT_THROW(load_checkpoint(path, other), ConfigError);
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.ckpt").string(), cfg), IoError);

  auto bytes = checkpoint_bytes(m);
  auto write = [&](const std::vector<unsigned char>& b) {
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
  };
  write({bytes.begin(), bytes.end() - 5});
  EXPECT_THROW(load_checkpoint(path, cfg), IoError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(bad_magic);
  EXPECT_THROW(load_checkpoint(path, cfg), IoError);
  auto trailing = bytes;
  trailing.push_back(0);
  write(trailing);
  EXPECT_THROW(load_checkpoint(path, cfg), IoError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, DigestTracksArchitecture) {
  ModelConfig a = tiny_config(), b = tiny_config();
  EXPECT_EQ(config_digest(a), config_digest(b));
  b.ablations.no_vit = true;
  EXPECT_NE(config_digest(a), config_digest(b));
}

// --- training loop ----------------------------------------------------------

TEST(Train, EpochCsvIsByteIdenticalOnRerun) {
  const Dataset d = synth_dataset_total(1, 20, 7, 32);
  const auto [tr, va] = split_dataset(d, 0.2, 1);
  auto run = [&] {
    Model m = Model::build(tiny_config(), 3);
    std::ostringstream csv;
    train(m, tr, va, tiny_train(3), &csv);
    return std::make_pair(csv.str(), checkpoint_bytes(m));
  };
  const auto [csv1, ckpt1] = run();
  const auto [csv2, ckpt2] = run();
  EXPECT_EQ(csv1, csv2);
  EXPECT_EQ(ckpt1, ckpt2);
  EXPECT_EQ(csv1.substr(0, csv1.find('\n')), "epoch,lr,train_loss,train_acc,val_loss,val_acc");
  EXPECT_EQ(std::count(csv1.begin(), csv1.end(), '\n'), 4);
}

TEST(Train, DifferentSeedChangesTheRun) {
  const Dataset d = synth_dataset_total(1, 12, 7, 32);
  auto run = [&](std::uint64_t seed) {
    Model m = Model::build(tiny_config(), 3);
    TrainConfig t = tiny_train(1);
    t.seed = seed;
    t.aug = {0.5, 0.5, 0.02, 0.1};
    train(m, d, {}, t);
    return checkpoint_bytes(m);
  };
  EXPECT_NE(run(1), run(2));
}

TEST(Train, FrozenLandmarkInvariantOverHundredSteps) {
  const Dataset d = synth_dataset_total(2, 10, 7, 32);
  Model m = Model::build(tiny_config(), 5);
  std::vector<std::pair<std::string, std::vector<double>>> frozen, trainable;
  for (const auto& e : m.params().entries()) (e.trainable ? trainable : frozen).emplace_back(e.path, to_vec(e.tensor));
  ASSERT_FALSE(frozen.empty());
  TrainConfig t = tiny_train(10);
  t.batch_size = 1;  // 10 samples x 10 epochs = 100 optimiser steps
  train(m, d, {}, t);
  for (const auto& [path, before] : frozen) EXPECT_EQ(to_vec(m.params().find(path)->tensor), before) << path;
  // fusion.2 runs single-token windows; softmax over one key gives its bias table no gradient
  for (const auto& [path, before] : trainable) {
    const bool moved = to_vec(m.params().find(path)->tensor) != before;
    EXPECT_EQ(moved, path != "fusion.2.attn.bias_table") << path;
  }
}

TEST(Train, UnfrozenLandmarkMovesAfterOneStep) {
  ModelConfig cfg = tiny_config();
  cfg.landmark_frozen = false;
  Model m = Model::build(cfg, 5);
  const auto before = to_vec(m.params().find("landmark.0.weight")->tensor);
  TrainConfig t = tiny_train(1);
  t.batch_size = 100;
  train(m, synth_dataset_total(2, 7, 7, 32), {}, t);
  EXPECT_NE(to_vec(m.params().find("landmark.0.weight")->tensor), before);
}

TEST(Train, StopsAtTargetOrPatience) {
  const Dataset d = synth_dataset_total(2, 14, 7, 32);
  Model m = Model::build(tiny_config(), 5);
  TrainConfig t = tiny_train(5);
  t.target_train_acc = 1e-9;
  auto r = train(m, d, d, t);
  EXPECT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.stop_reason, "target_train_acc");

  t.target_train_acc = 0.0;
  t.lr0 = 1e-300;  // updates vanish below double resolution, so the validation loss never improves
  t.patience = 2;
  r = train(m, d, d, t);
  EXPECT_EQ(r.stop_reason, "patience");
  EXPECT_EQ(r.epochs.size(), 3u);
}

TEST(Train, LogsScheduleAndRejectsBadInput) {
  const Dataset d = synth_dataset_total(2, 7, 7, 32);
  Model m = Model::build(tiny_config(), 5);
  TrainConfig t = tiny_train(3);
  t.lr0 = 2e-3;
  const auto r = train(m, d, {}, t);
  for (const auto& e : r.epochs) EXPECT_DOUBLE_EQ(e.lr, lr_schedule(2e-3, 0.98, e.epoch));
  EXPECT_THROW(train(m, Dataset{{}, 7}, {}, t), ContractError);
  EXPECT_THROW(train(m, synth_dataset_total(2, 8, 8, 32), {}, t), ConfigError);
}
