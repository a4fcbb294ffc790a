#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "coinnet/data.hpp"
#include "coinnet/error.hpp"
#include "coinnet/rng.hpp"

using namespace coinnet;
using namespace coinnet::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("coinnet_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(FeatureFile, SingleValueLayout) {
  FeatureMap m(1, 1, 1);
  m.values = {42.0};
  const auto bytes = encode_feature(m);
  ASSERT_EQ(bytes.size(), 24u);
  EXPECT_EQ(std::memcmp(bytes.data(), "CNFM", 4), 0);
  const unsigned char header_tail[16] = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
  EXPECT_EQ(std::memcmp(bytes.data() + 4, header_tail, 16), 0);
  // 42.0f is 0x42280000.
  const unsigned char payload[4] = {0x00, 0x00, 0x28, 0x42};
  EXPECT_EQ(std::memcmp(bytes.data() + 20, payload, 4), 0);
  EXPECT_EQ(decode_feature(bytes), m);
}

TEST(FeatureFile, SizeOfTypicalMap) {
  EXPECT_EQ(encode_feature(FeatureMap(14, 14, 8)).size(), 6292u);
}

TEST(FeatureFile, RoundTripIsExactForFloat32Values) {
  Rng rng(1);
  const auto dir = fresh_dir("roundtrip");
  for (int t = 0; t < 20; ++t) {
    FeatureMap m(1 + rng.uniform_index(9), 1 + rng.uniform_index(9), 1 + rng.uniform_index(17));
    for (auto& v : m.values) v = static_cast<float>(rng.normal() * 100.0);
    write_feature(dir / "m.cnfm", m);
    EXPECT_EQ(read_feature(dir / "m.cnfm"), m);
  }
}

TEST(FeatureFile, TruncatedPayloadNamesSizes) {
  auto bytes = encode_feature(FeatureMap(2, 2, 2, 1.0));
  bytes.resize(bytes.size() - 3);
  const auto msg = error_message([&] { decode_feature(bytes); });
  EXPECT_NE(msg.find("expected 32 bytes"), std::string::npos) << msg;
  EXPECT_NE(msg.find("found 29"), std::string::npos) << msg;
}

TEST(FeatureFile, EveryHeaderMutationRejected) {
  Rng rng(2);
  const auto good = encode_feature(FeatureMap(3, 2, 4, 0.5));
  for (std::size_t pos = 0; pos < kFeatureHeaderBytes; ++pos)
    for (int value = 0; value < 256; ++value) {
      if (value == good[pos]) continue;
      auto bad = good;
      bad[pos] = static_cast<unsigned char>(value);
      ASSERT_THROW(decode_feature(bad), Error) << "byte " << pos << " value " << value;
    }
  for (std::size_t n = 0; n < kFeatureHeaderBytes; ++n) ASSERT_THROW(decode_feature(std::span(good).first(n)), Error);
}

TEST(FeatureFile, NonFinitePayloadRejected) {
  auto bytes = encode_feature(FeatureMap(1, 1, 2, 1.0));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 24, &nan, 4);
  const auto msg = error_message([&] { decode_feature(bytes); });
  EXPECT_NE(msg.find("24"), std::string::npos) << msg;
}

TEST(FeatureFile, MissingFileIsIoError) {
  try {
    read_feature(fs::temp_directory_path() / "coinnet_data_missing.cnfm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(Manifest, LabelsRemapSorted) {
  const std::string text = std::string("# comment\n") + kManifestHeader +
                           "\n"
                           "a\tx/a1.cnfm\tx/a2.cnfm\t9\t-1\n"
                           "b\t/abs/b1.cnfm\tb2.cnfm\t5\t-1\n";
  const auto m = parse_manifest(text, "/base");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.label_values, (std::vector<std::int64_t>{5, 9}));
  EXPECT_EQ(m.records[0].label, 1u);
  EXPECT_EQ(m.records[1].label, 0u);
  EXPECT_EQ(m.records[0].raw_label, 9);
  EXPECT_EQ(m.records[0].alpha_path, fs::path("/base/x/a1.cnfm"));
  EXPECT_EQ(m.records[1].alpha_path, fs::path("/abs/b1.cnfm"));
  EXPECT_FALSE(m.has_groups());
  EXPECT_EQ(m.class_count(), 2u);
}

TEST(Manifest, DuplicateIdCitesBothLines) {
  const std::string text = std::string(kManifestHeader) +
                           "\n"
                           "a\tp\tq\t0\t-1\n"
                           "b\tp\tq\t1\t-1\n"
                           "a\tp\tq\t1\t-1\n";
  const auto msg = error_message([&] { parse_manifest(text, "/"); });
  EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("4"), std::string::npos) << msg;
}

TEST(Manifest, MalformedInputsRejected) {
  const std::string h = std::string(kManifestHeader) + "\n";
  EXPECT_THROW(parse_manifest("", "/"), Error);
  EXPECT_THROW(parse_manifest("id\tpath\n", "/"), Error);
  EXPECT_THROW(parse_manifest(h + "a\tp\tq\t0\n", "/"), Error);
  EXPECT_THROW(parse_manifest(h + "a\tp\tq\tzero\t-1\n", "/"), Error);
  EXPECT_THROW(parse_manifest(h + "a\tp\tq\t0\tx\n", "/"), Error);
  const auto msg = error_message([&] { parse_manifest(h + "a\tp\tq\t0\t-1\nb\tp\n", "/"); });
  EXPECT_NE(msg.find("3"), std::string::npos) << msg;
}

TEST(Manifest, GroupsDetected) {
  const std::string text = std::string(kManifestHeader) +
                           "\n"
                           "a\tp\tq\t0\t7\n"
                           "b\tp\tq\t1\t7\n";
  const auto m = parse_manifest(text, "/");
  EXPECT_TRUE(m.has_groups());
  EXPECT_EQ(m.records[1].group, 7);
}

TEST(Manifest, FormatRoundTrips) {
  const auto dir = fresh_dir("format");
  SynthConfig c;
  c.classes = 3;
  c.samples_per_class = 2;
  c.channels = 2;
  const auto m = generate_synthetic(c, dir);
  const auto again = parse_manifest(format_manifest(m, dir), dir);
  ASSERT_EQ(again.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(again.records[i].sample_id, m.records[i].sample_id);
    EXPECT_EQ(again.records[i].alpha_path, m.records[i].alpha_path);
    EXPECT_EQ(again.records[i].label, m.records[i].label);
  }
}

TEST(Dataset, InconsistentShapesRejected) {
  const auto dir = fresh_dir("shapes");
  write_feature(dir / "a.cnfm", FeatureMap(2, 2, 3));
  write_feature(dir / "b.cnfm", FeatureMap(2, 2, 4));
  std::ofstream(dir / "m.tsv") << kManifestHeader << "\ns1\ta.cnfm\ta.cnfm\t0\t-1\ns2\tb.cnfm\tb.cnfm\t1\t-1\n";
  EXPECT_THROW(load_dataset(load_manifest(dir / "m.tsv")), Error);
}

TEST(Synthetic, ByteIdenticalForSameSeed) {
  SynthConfig c;
  c.classes = 3;
  c.samples_per_class = 4;
  c.seed = 5;
  const auto d1 = fresh_dir("synth1"), d2 = fresh_dir("synth2");
  const auto m1 = generate_synthetic(c, d1);
  generate_synthetic(c, d2);
  EXPECT_EQ(file_bytes(d1 / "manifest.tsv"), file_bytes(d2 / "manifest.tsv"));
  for (const auto& r : m1.records) {
    const auto rel = fs::relative(r.alpha_path, d1);
    EXPECT_EQ(file_bytes(r.alpha_path), file_bytes(d2 / rel));
  }
  c.seed = 6;
  EXPECT_NE(synthesize(c)[0].alpha, load_dataset(m1)[0].alpha);
}

TEST(Synthetic, WrittenFilesMatchInMemoryTensors) {
  SynthConfig c;
  c.classes = 4;
  c.samples_per_class = 3;
  c.styles_per_group = 2;
  const auto m = generate_synthetic(c, fresh_dir("synth3"));
  const auto loaded = load_dataset(m);
  const auto memory = synthesize(c);
  ASSERT_EQ(loaded.size(), 12u);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i].alpha, memory[i].alpha);
    EXPECT_EQ(loaded[i].beta, memory[i].beta);
    EXPECT_EQ(loaded[i].label, memory[i].label);
    EXPECT_EQ(loaded[i].group, memory[i].group);
    EXPECT_EQ(loaded[i].label, i / 3);
    EXPECT_EQ(loaded[i].group, static_cast<std::int64_t>(i / 6));
  }
  EXPECT_EQ(m.class_count(), 4u);
  EXPECT_TRUE(m.has_groups());
}

TEST(Synthetic, NoNoiseNoShiftGivesIdenticalSamples) {
  SynthConfig c;
  c.classes = 2;
  c.samples_per_class = 3;
  c.noise = 0.0;
  c.max_shift = 0;
  const auto ds = synthesize(c);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_EQ(ds[i].alpha, ds[0].alpha);
    EXPECT_EQ(ds[i].beta, ds[0].beta);
  }
  EXPECT_NE(ds[3].alpha, ds[0].alpha);
  for (const auto& s : ds)
    for (double v : s.alpha.values) EXPECT_GE(v, 0.0);
}

TEST(Synthetic, ConfigValidation) {
  SynthConfig c;
  c.classes = 1;
  EXPECT_THROW(c.validate(), Error);
  c = SynthConfig{};
  c.noise = -1;
  EXPECT_THROW(c.validate(), Error);
  c = SynthConfig{};
  c.classes = 10;
  c.styles_per_group = 3;
  EXPECT_THROW(c.validate(), Error);
}

TEST(CircularShift, Examples) {
  FeatureMap m(1, 3, 1);
  m.values = {1, 2, 3};
  EXPECT_EQ(circular_shift(m, 0, 1).values, (std::vector<double>{3, 1, 2}));
  EXPECT_EQ(circular_shift(m, 5, -1).values, (std::vector<double>{2, 3, 1}));
  EXPECT_EQ(circular_shift(circular_shift(m, 2, 2), -2, -2), m);
}
