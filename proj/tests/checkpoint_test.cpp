#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "advit/checkpoint.hpp"
#include "advit/errors.hpp"
#include "test_support.hpp"

using namespace advit;

namespace {

vit::ViTConfig micro_model() {
  vit::ViTConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.channels = 1;
  c.embed_dim = 4;
  c.num_heads = 1;
  c.depth = 1;
  c.mlp_ratio = 1.0;
  c.num_classes = 2;
  return c;
}

// A state whose every field differs from its default, so a decoder that
// drops anything is caught.
train::TrainState busy_state(const vit::ViTConfig& model, train::OptimizerKind kind) {
  train::TrainConfig cfg;
  cfg.optimizer.kind = kind;
  cfg.seed = 77;
  auto state = train::initial_state(model, cfg);
  Rng rng(5);
  for (auto& b : state.optimizer.first) {
    b = test::random_tensor<float>(b.shape(), rng, 0.1);
  }
  for (auto& b : state.optimizer.second) {
    b = test::uniform_tensor<float>(b.shape(), rng, 0.0, 0.01);
  }
  state.optimizer.step = 123;
  state.rng.counter = 9;
  state.epoch = 4;
  return state;
}

void expect_same(const train::TrainState& a, const train::TrainState& b) {
  EXPECT_EQ(a.params.config, b.params.config);
  const auto na = a.params.named();
  const auto nb = b.params.named();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].name, nb[i].name);
    EXPECT_TRUE(bit_equal(*na[i].tensor, *nb[i].tensor)) << na[i].name;
  }
  EXPECT_EQ(a.optimizer.kind, b.optimizer.kind);
  EXPECT_EQ(a.optimizer.step, b.optimizer.step);
  ASSERT_EQ(a.optimizer.first.size(), b.optimizer.first.size());
  ASSERT_EQ(a.optimizer.second.size(), b.optimizer.second.size());
  for (std::size_t i = 0; i < a.optimizer.first.size(); ++i) {
    EXPECT_TRUE(bit_equal(a.optimizer.first[i], b.optimizer.first[i]));
  }
  for (std::size_t i = 0; i < a.optimizer.second.size(); ++i) {
    EXPECT_TRUE(bit_equal(a.optimizer.second[i], b.optimizer.second[i]));
  }
  EXPECT_EQ(a.rng, b.rng);
  EXPECT_EQ(a.epoch, b.epoch);
}

CheckpointError::Kind kind_of(std::span<const std::uint8_t> bytes, const vit::ViTConfig* expected = nullptr) {
  try {
    checkpoint::decode(bytes, expected);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode accepted the bytes";
  return CheckpointError::Kind::io;
}

std::string message_of(std::span<const std::uint8_t> bytes, const vit::ViTConfig* expected = nullptr) {
  try {
    checkpoint::decode(bytes, expected);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExactForBothOptimizers) {
  for (auto kind : {train::OptimizerKind::sgd, train::OptimizerKind::adamw}) {
    const auto state = busy_state(micro_model(), kind);
    expect_same(state, checkpoint::decode(checkpoint::encode(state)));
  }
}

TEST(Checkpoint, RoundTripPreservesSignedZeroAndDenormalPayloads) {
  auto state = busy_state(micro_model(), train::OptimizerKind::sgd);
  auto values = state.params.head_bias.data();
  values[0] = -0.0f;
  values[1] = std::numeric_limits<float>::denorm_min();
  expect_same(state, checkpoint::decode(checkpoint::encode(state)));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "advit_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto state = busy_state(micro_model(), train::OptimizerKind::adamw);
  checkpoint::save(dir / "a.avck", state);
  const auto loaded = checkpoint::load(dir / "a.avck");
  checkpoint::save(dir / "b.avck", loaded);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.avck"), slurp(dir / "b.avck"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, EveryFlippedByteIsDetected) {
  const auto bytes = checkpoint::encode(busy_state(micro_model(), train::OptimizerKind::adamw));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5A;
    EXPECT_THROW(checkpoint::decode(bad), CheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, PayloadCorruptionIsAChecksumError) {
  auto bytes = checkpoint::encode(busy_state(micro_model(), train::OptimizerKind::sgd));
  bytes[bytes.size() / 2] ^= 0x01;
  EXPECT_EQ(kind_of(bytes), CheckpointError::Kind::checksum);
}

TEST(Checkpoint, BadMagicAndVersionAreNamed) {
  auto bytes = checkpoint::encode(busy_state(micro_model(), train::OptimizerKind::sgd));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), CheckpointError::Kind::magic);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(kind_of(bad_version), CheckpointError::Kind::version);
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const auto bytes = checkpoint::encode(busy_state(micro_model(), train::OptimizerKind::sgd));
  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    const std::span<const std::uint8_t> head(bytes.data(), n);
    EXPECT_EQ(kind_of(head), CheckpointError::Kind::truncated) << n;
  }
  EXPECT_NE(message_of(std::span<const std::uint8_t>(bytes.data(), bytes.size() / 2)).find("truncated"),
            std::string::npos);
}

TEST(Checkpoint, TrailingBytesAreRejected) {
  auto bytes = checkpoint::encode(busy_state(micro_model(), train::OptimizerKind::sgd));
  bytes.push_back(0);
  EXPECT_THROW(checkpoint::decode(bytes), CheckpointError);
}

TEST(Checkpoint, MismatchedModelNamesTheTensor) {
  const auto bytes = checkpoint::encode(busy_state(micro_model(), train::OptimizerKind::sgd));
  auto other = micro_model();
  other.embed_dim = 8;
  EXPECT_EQ(kind_of(bytes, &other), CheckpointError::Kind::shape_mismatch);
  EXPECT_NE(message_of(bytes, &other).find("patch_embed.weight"), std::string::npos) << message_of(bytes, &other);
  const auto same = micro_model();
  EXPECT_NO_THROW(checkpoint::decode(bytes, &same));
}

TEST(Checkpoint, MissingFileIsAnIoError) {
  try {
    checkpoint::load("/nonexistent/dir/x.avck");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
  }
}
