#include "crkt/checkpoint.hpp"
#include "crkt/config.hpp"
#include "temp_dir.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace crkt;
using crkt::testing::TempDir;

TEST(Checkpoint, RoundTripPreservesPredictions) {
  SynthConfig sc;
  sc.students = 3;
  const auto d = generate_synthetic(sc, 4);
  ModelConfig mc;
  mc.d_q = mc.d_c = mc.d_g = 8;
  mc.heads = 2;
  mc.top_k = 4;
  mc.ablation = Ablation::no_unc;
  mc.lambda = 0.0;
  const auto map = ConceptMap::from_edges(d.bundle.concept_count, d.truth.edges, MapSource::inferred);
  Model m(mc, Vocabulary::from_bundle(d.bundle), map, 9);
  TempDir dir;
  CheckpointExtras extras;
  extras.question_ids = {5, 6, 7};
  extras.metadata_json = R"({"note": "x"})";
  save_checkpoint(m, dir.path() / "fold0-best", extras);
  const auto loaded = load_checkpoint(dir.path() / "fold0-best");
  EXPECT_EQ(loaded.extras.question_ids, extras.question_ids);
  EXPECT_EQ(loaded.model.config().heads, 2);
  EXPECT_EQ(loaded.model.config().ablation, Ablation::no_unc);
  EXPECT_EQ(loaded.model.concept_map().edges(), map.edges());
  EXPECT_EQ(loaded.model.concept_map().source(), MapSource::inferred);
  const auto& seq = d.bundle.sequences[0].interactions;
  const auto a = m.predict_sequence(seq);
  const auto b = loaded.model.predict_sequence(seq);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_NEAR(a[t].y_hat, b[t].y_hat, 1e-5);
}

TEST(Checkpoint, RejectsUnknownVersionAndGarbage) {
  SynthConfig sc;
  sc.students = 2;
  const auto d = generate_synthetic(sc, 4);
  ModelConfig mc;
  mc.d_q = mc.d_c = mc.d_g = 4;
  mc.top_k = 2;
  Model m(mc, Vocabulary::from_bundle(d.bundle), ConceptMap::from_edges(d.bundle.concept_count, {}), 1);
  TempDir dir;
  const auto path = dir.path() / "ck";
  save_checkpoint(m, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  try {
    load_checkpoint(path);
    FAIL() << "version 99 accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
  }
  dir.write("junk", "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(dir.path() / "junk"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing"), CheckpointError);
}

TEST(Config, ParsesSectionsAndRejectsUnknownKeys) {
  const auto c = run_config_from_json(R"({"model": {"d_q": 16, "ablation": "noMap"},
                                           "loss": {"alpha": 0.2}, "train": {"seed": 4}})");
  EXPECT_EQ(c.model.d_q, 16);
  EXPECT_EQ(c.model.ablation, Ablation::no_map);
  EXPECT_EQ(c.loss.alpha, 0.2);
  EXPECT_EQ(c.loss.beta, 0.1);
  EXPECT_EQ(c.train.seed, 4u);
  EXPECT_THROW(run_config_from_json(R"({"model": {"dq": 16}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"extra": {}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"model": {"d_q": 1.5}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"loss": {"flip_rate": 1.5}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"train": {"patience": 300}})"), ConfigError);
  EXPECT_THROW(run_config_from_json("{"), ConfigError);
  const auto back = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(back), run_config_to_json(c));
}

TEST(Config, PublishedHyperparametersAreAccepted) {
  const auto c = run_config_from_json(R"({"model": {"lambda": 0.5, "gnn_layers": 3, "d_g": 32, "top_k": 10},
                                           "loss": {"alpha": 0.1, "beta": 0.1}, "train": {"learning_rate": 0.001}})");
  EXPECT_NO_THROW(validate(c.model, 10));
}

TEST(Config, GridExpansion) {
  const auto grid = expand_grid(R"({"model": {"lambda": [0.3, 0.5], "top_k": [3, 5, 7]}, "loss": {"alpha": [0.1, 0.2]}})");
  ASSERT_EQ(grid.size(), 12u);
  // Sections expand in key order, the last axis varying fastest.
  EXPECT_EQ(grid[0].loss.alpha, 0.1);
  EXPECT_EQ(grid[1].model.top_k, 5);
  EXPECT_EQ(grid[6].loss.alpha, 0.2);
  EXPECT_EQ(grid.back().model.lambda, 0.5);
  EXPECT_EQ(grid.back().model.top_k, 7);
  EXPECT_EQ(expand_grid(R"({"model": {"d_q": 8}})").size(), 1u);
  EXPECT_THROW(expand_grid(R"({"model": {"d_q": []}})"), ConfigError);
}
