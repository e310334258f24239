#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "gombf/serialize.hpp"
#include "test_support.hpp"

namespace gombf {
namespace {

namespace fs = std::filesystem;
using testing::random_vector;

struct SectionSpan {
  std::string name;
  std::size_t payload_offset;
  std::size_t payload_size;
};

// Walks the container layout independently of the decoder.
std::vector<SectionSpan> section_spans(const std::string& bytes) {
  std::size_t pos = 8 + 4 + 4 + 4;
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + pos, 4);
  pos += 4;
  std::vector<SectionSpan> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(bytes.data() + pos, 16);
    name.resize(std::strlen(name.c_str()));
    pos += 16;
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos, 8);
    pos += 8;
    out.push_back({name, pos, static_cast<std::size_t>(len)});
    pos += len + 8;
  }
  EXPECT_EQ(pos, bytes.size());
  return out;
}

void expect_integrity_error(const std::string& bytes, const std::string& needle) {
  try {
    decode_cascade(bytes);
    ADD_FAILURE() << "expected an integrity error mentioning '" << needle << "'";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIntegrity) << e.what();
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

class SerializeFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    toy_ = new ToyModel(testing::small_toy(61));
    std::vector<TrainingImage> images;
    for (int s = 0; s < 3; ++s) {
      const auto seq = generate_sequence(*toy_, {}, 3, {10u + s, 5u, 20u + s});
      for (std::size_t f = 0; f < seq.frames.size(); ++f)
        images.push_back({seq.frames[f], seq.statics, seq.ground_truth[f]});
    }
    images_ = new std::vector<TrainingImage>(std::move(images));
    model_ = new CascadeModel(train(1));
  }
  static void TearDownTestSuite() {
    delete toy_;
    delete images_;
    delete model_;
  }

  static CascadeModel train(int threads) {
    CascadeConfig c;
    c.stages = 3;
    c.depth = 3;
    c.ferns_per_group = 4;
    c.features = 50;
    c.initializations = 3;
    c.threads = threads;
    c.noise.expression_pairs = 3;
    c.noise.rotation_pairs = 2;
    c.noise.translation_pairs = 2;
    Rng rng(c.seed);
    auto samples = generate_guess_truth_pairs(*images_, toy_->model, rng, c.noise);
    auto model = train_cascade(toy_->model, *images_, samples, c);
    model.identity_sigma = toy_->identity_sigma;
    return model;
  }

  static ToyModel* toy_;
  static std::vector<TrainingImage>* images_;
  static CascadeModel* model_;
};

ToyModel* SerializeFixture::toy_ = nullptr;
std::vector<TrainingImage>* SerializeFixture::images_ = nullptr;
CascadeModel* SerializeFixture::model_ = nullptr;

TEST_F(SerializeFixture, RoundTripIsBitExact) {
  const std::string bytes = encode_cascade(*model_);
  const CascadeModel back = decode_cascade(bytes);
  EXPECT_TRUE(back == *model_);
  EXPECT_EQ(encode_cascade(back), bytes);
}

TEST_F(SerializeFixture, RoundTripPredictionsIdentical) {
  const CascadeModel back = decode_cascade(encode_cascade(*model_));
  Rng rng(62);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const auto& stage = model_->stages[static_cast<std::size_t>(t) % model_->stages.size()];
    const auto& copy = back.stages[static_cast<std::size_t>(t) % back.stages.size()];
    Vec x(stage.indexer.size());
    for (auto& v : x) v = u(rng);
    EXPECT_TRUE(stage.regressor.predict(x) == copy.regressor.predict(x));
  }
  const auto& im = images_->front();
  EXPECT_TRUE(track_frame(*model_, im.image, im.truth, im.statics).values() ==
              track_frame(back, im.image, im.truth, im.statics).values());
}

TEST_F(SerializeFixture, IdenticalBytesAcrossThreadCounts) {
  EXPECT_EQ(encode_cascade(train(4)), encode_cascade(*model_));
}

TEST_F(SerializeFixture, CorruptByteNamesItsSection) {
  const std::string bytes = encode_cascade(*model_);
  const auto spans = section_spans(bytes);
  ASSERT_EQ(spans.size(), 4u + model_->stages.size());
  EXPECT_EQ(spans[0].name, "header");
  EXPECT_EQ(spans[4].name, "stage 1");
  for (const auto& s : spans) {
    for (std::size_t where : {s.payload_offset, s.payload_offset + s.payload_size / 2,
                              s.payload_offset + s.payload_size - 1}) {
      std::string bad = bytes;
      bad[where] = static_cast<char>(bad[where] ^ 0x5A);
      expect_integrity_error(bad, "'" + s.name + "'");
    }
  }
}

TEST_F(SerializeFixture, TruncationIsDetected) {
  const std::string bytes = encode_cascade(*model_);
  const auto spans = section_spans(bytes);
  expect_integrity_error(bytes.substr(0, 5), "preamble");
  for (const auto& s : spans) expect_integrity_error(bytes.substr(0, s.payload_offset + 1), "'" + s.name + "'");
  expect_integrity_error(bytes.substr(0, bytes.size() - 1), "'" + spans.back().name + "'");
  expect_integrity_error(bytes + "x", "trailing");
}

TEST_F(SerializeFixture, PreambleChecks) {
  const std::string bytes = encode_cascade(*model_);
  std::string magic = bytes;
  magic[0] = 'X';
  expect_integrity_error(magic, "magic");
  std::string version = bytes;
  version[8] = 9;
  expect_integrity_error(version, "version");
  std::string bom = bytes;
  std::swap(bom[12], bom[15]);
  expect_integrity_error(bom, "byte-order");
  EXPECT_THROW(decode_toy_model(bytes), Error);  // wrong file kind
}

TEST_F(SerializeFixture, SaveAndLoadThroughFile) {
  const fs::path dir = fs::temp_directory_path() / "gombf_serialize_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path path = dir / "model.bin";
  save_cascade(*model_, path);
  EXPECT_TRUE(load_cascade(path) == *model_);
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path().filename());
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0], "model.bin");
  EXPECT_THROW(save_cascade(*model_, dir / "missing" / "model.bin"), Error);
  EXPECT_FALSE(fs::exists(dir / "missing"));
  try {
    load_cascade(dir / "nope.bin");
    FAIL() << "expected an I/O error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
  fs::remove_all(dir);
}

TEST(SerializeToyModel, RoundTrip) {
  const auto toy = testing::small_toy(63);
  const std::string bytes = encode_toy_model(toy);
  const ToyModel back = decode_toy_model(bytes);
  EXPECT_TRUE(back.model == toy.model);
  EXPECT_TRUE(same_matrix(back.identity_sigma, toy.identity_sigma));
  EXPECT_EQ(back.spec.seed, toy.spec.seed);
  EXPECT_EQ(back.spec.face_width, toy.spec.face_width);
  EXPECT_EQ(encode_toy_model(back), bytes);
  std::string bad = bytes;
  bad[bad.size() / 2] ^= 1;
  EXPECT_THROW(decode_toy_model(bad), Error);
}

}  // namespace
}  // namespace gombf
