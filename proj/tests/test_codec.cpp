#include <gtest/gtest.h>

#include <cmath>

#include "mega/codec.hpp"
#include "oracle_helpers.hpp"

using namespace mega;
using oracle::Rng;

namespace {

// Slow bit-by-bit reference for the 4-way interleave.
uint64_t spread4_reference(uint16_t v) {
  uint64_t out = 0;
  for (int b = 0; b < 16; ++b)
    if (v & (1u << b)) out |= 1ull << (4 * b);
  return out;
}

GaussianCloud random_cloud(Rng& rng, int n) {
  GaussianCloud cloud = GaussianCloud::sized(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 4; ++k) {
      cloud.mu4(i, k) = rng.normal(0, 2.0);
      cloud.q_l(i, k) = rng.normal();
      cloud.q_r(i, k) = rng.normal();
      cloud.s4(i, k) = rng.uniform(-3.0, 1.0);
    }
    for (int k = 0; k < 3; ++k) cloud.c_dc(i, k) = rng.normal();
    cloud.o_logit[i] = rng.uniform(-6.0, 6.0);
  }
  return cloud;
}

// Attribute-by-attribute equality against the fp16-rounded source.
void expect_fp16_roundtrip(const GaussianCloud& orig, const GaussianCloud& loaded) {
  ASSERT_EQ(orig.count(), loaded.count());
  for (int i = 0; i < orig.count(); ++i) {
    for (int k = 0; k < 4; ++k) {
      EXPECT_EQ(loaded.mu4(i, k), round_fp16(orig.mu4(i, k)));
      EXPECT_EQ(loaded.q_l(i, k), round_fp16(orig.q_l(i, k)));
      EXPECT_EQ(loaded.q_r(i, k), round_fp16(orig.q_r(i, k)));
      EXPECT_EQ(loaded.s4(i, k), round_fp16(orig.s4(i, k)));
    }
    for (int k = 0; k < 3; ++k) EXPECT_EQ(loaded.c_dc(i, k), round_fp16(orig.c_dc(i, k)));
    EXPECT_EQ(loaded.o_logit[i], round_fp16(orig.o_logit[i]));
  }
}

}  // namespace

TEST(Morton, SpreadMatchesBitReference) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto v = static_cast<uint16_t>(rng.gen());
    EXPECT_EQ(morton_spread4(v), spread4_reference(v)) << v;
  }
  EXPECT_EQ(morton_spread4(0xFFFF), spread4_reference(0xFFFF));
}

TEST(Morton, KeyInterleavesAxes) {
  // Axis k contributes bit 4*b + k.
  EXPECT_EQ(morton_key4d(1, 0, 0, 0), 0x1ull);
  EXPECT_EQ(morton_key4d(0, 1, 0, 0), 0x2ull);
  EXPECT_EQ(morton_key4d(0, 0, 1, 0), 0x4ull);
  EXPECT_EQ(morton_key4d(0, 0, 0, 1), 0x8ull);
  EXPECT_EQ(morton_key4d(2, 0, 0, 0), 0x10ull);
}

TEST(Morton, OrderGroupsNearbyGaussians) {
  Rng rng(2);
  const GaussianCloud cloud = random_cloud(rng, 200);
  const std::vector<int> order = morton_order(cloud);
  EXPECT_EQ(order.size(), 200u);
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sorted[i], i);  // a permutation
  EXPECT_EQ(order, morton_order(cloud));                  // deterministic
}

TEST(Delta, ConstantStream) {
  const std::vector<uint16_t> codes(8, 1234);
  const std::vector<uint8_t> bytes = delta_encode(codes, 1);
  const std::vector<uint16_t> decoded = delta_decode(bytes, 1);
  EXPECT_EQ(decoded, codes);
  EXPECT_EQ(bytes[0] | (bytes[1] << 8), 1234);
  for (size_t i = 2; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
}

TEST(Delta, SimpleRamp) {
  const std::vector<uint16_t> codes = {1, 2, 3};
  const std::vector<uint8_t> bytes = delta_encode(codes, 1);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(bytes[2 * i], 1);
    EXPECT_EQ(bytes[2 * i + 1], 0);
  }
  EXPECT_EQ(delta_decode(bytes, 1), codes);
}

TEST(Delta, WrappingRoundTrip) {
  Rng rng(3);
  for (int stride : {1, 3, 4}) {
    std::vector<uint16_t> codes(stride * 100);
    for (auto& c : codes) c = static_cast<uint16_t>(rng.gen());
    EXPECT_EQ(delta_decode(delta_encode(codes, stride), stride), codes);
  }
}

TEST(Delta, LengthMismatchThrows) {
  EXPECT_THROW(delta_encode(std::vector<uint16_t>(7), 3), ConfigError);
  EXPECT_THROW(delta_decode(std::vector<uint8_t>(7), 1), ConfigError);
  EXPECT_THROW(delta_decode(std::vector<uint8_t>(8), 3), ConfigError);
}

TEST(Archive, EmptyCloudRoundTrip) {
  const GaussianCloud cloud;
  const ColorPredictor cp = ColorPredictor::make(1, 8);
  const DeformPredictor dp = DeformPredictor::make(2, 8, 3, 3, 4);
  const std::vector<uint8_t> bytes = save_model(cloud, &dp, &cp);
  const LoadedModel loaded = load_model(bytes);
  EXPECT_EQ(loaded.cloud.count(), 0);
  ASSERT_TRUE(loaded.color.has_value());
  ASSERT_TRUE(loaded.deform.has_value());
  EXPECT_EQ(loaded.deform->freq_mu, 3);
  EXPECT_EQ(loaded.deform->freq_t, 4);
  EXPECT_EQ(loaded.color->phi.layers.size(), cp.phi.layers.size());
}

TEST(Archive, RandomCloudRoundTripBitExact) {
  Rng rng(4);
  const GaussianCloud cloud = random_cloud(rng, 1000);
  const ColorPredictor cp = ColorPredictor::make(5, 16);
  const std::vector<uint8_t> bytes = save_model(cloud, nullptr, &cp);
  const LoadedModel loaded = load_model(bytes);
  expect_fp16_roundtrip(cloud, loaded.cloud);
  EXPECT_FALSE(loaded.deform.has_value());

  // A second save/load cycle is value-idempotent: fp16 of fp16 is identity.
  const std::vector<uint8_t> bytes2 = save_model(loaded.cloud, nullptr, &*loaded.color);
  const LoadedModel loaded2 = load_model(bytes2);
  EXPECT_EQ(Eigen::MatrixX4d(loaded2.cloud.mu4), Eigen::MatrixX4d(loaded.cloud.mu4));
  EXPECT_EQ(Eigen::MatrixX3d(loaded2.cloud.c_dc), Eigen::MatrixX3d(loaded.cloud.c_dc));
  EXPECT_EQ(Eigen::VectorXd(loaded2.cloud.o_logit), Eigen::VectorXd(loaded.cloud.o_logit));
}

TEST(Archive, DeterministicBytes) {
  Rng rng(5);
  const GaussianCloud cloud = random_cloud(rng, 64);
  const ColorPredictor cp = ColorPredictor::make(6, 8);
  EXPECT_EQ(save_model(cloud, nullptr, &cp), save_model(cloud, nullptr, &cp));
}

TEST(Archive, SmallerThanFp32Storage) {
  Rng rng(6);
  const GaussianCloud cloud = random_cloud(rng, 1000);
  const ColorPredictor cp = ColorPredictor::make(7, 16);
  const std::vector<uint8_t> bytes = save_model(cloud, nullptr, &cp);
  const size_t fp32_bytes = 4 * (cloud.count() * 20 + cp.phi.param_count());
  EXPECT_LT(bytes.size(), fp32_bytes);
}

TEST(Archive, CountsFp16Saturations) {
  GaussianCloud cloud = GaussianCloud::sized(1);
  cloud.mu4(0, 0) = 1e6;  // beyond binary16 range
  int sat = 0;
  save_model(cloud, nullptr, nullptr, &sat);
  EXPECT_EQ(sat, 1);
}

TEST(Archive, DistinctLoadErrors) {
  Rng rng(7);
  const GaussianCloud cloud = random_cloud(rng, 8);
  std::vector<uint8_t> bytes = save_model(cloud, nullptr, nullptr);

  std::vector<uint8_t> bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    load_model(bad_magic);
    FAIL() << "expected BadMagic";
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.kind(), ArchiveError::Kind::BadMagic);
  }

  std::vector<uint8_t> bad_version = bytes;
  bad_version[4] = 0x7F;
  try {
    load_model(bad_version);
    FAIL() << "expected BadVersion";
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.kind(), ArchiveError::Kind::BadVersion);
  }

  std::vector<uint8_t> bad_crc = bytes;
  bad_crc.back() ^= 0xFF;
  try {
    load_model(bad_crc);
    FAIL() << "expected BadCrc";
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.kind(), ArchiveError::Kind::BadCrc);
  }

  std::vector<uint8_t> truncated(bytes.begin(), bytes.begin() + 8);
  EXPECT_THROW(load_model(truncated), ArchiveError);
}

TEST(SizeReport, EmptyCloudHasOnlyHeaderAndMlps) {
  const ColorPredictor cp = ColorPredictor::make(8, 8);
  const std::vector<uint8_t> bytes = save_model(GaussianCloud{}, nullptr, &cp);
  const SizeReport rep = size_report(bytes);
  EXPECT_EQ(rep.count, 0u);
  EXPECT_EQ(rep.attribute_bytes, 0u);
  EXPECT_EQ(rep.permutation_bytes, 0u);
  EXPECT_GT(rep.mlp_bytes, 0u);
  EXPECT_EQ(rep.payload_bytes, 8 + rep.mlp_bytes);
}

TEST(SizeReport, SectionsSumToPayload) {
  Rng rng(9);
  const GaussianCloud cloud = random_cloud(rng, 123);
  const ColorPredictor cp = ColorPredictor::make(10, 16);
  const DeformPredictor dp = DeformPredictor::make(11, 16, 4, 4, 6);
  const std::vector<uint8_t> bytes = save_model(cloud, &dp, &cp);
  const SizeReport rep = size_report(bytes);
  EXPECT_EQ(rep.count, 123u);
  EXPECT_EQ(rep.attribute_bytes, 123u * 20 * 2);
  EXPECT_EQ(rep.permutation_bytes, 123u * 4);
  EXPECT_EQ(rep.payload_bytes,
            8 + rep.permutation_bytes + rep.attribute_bytes + rep.mlp_bytes);
  EXPECT_NEAR(rep.per_gaussian_attribute_bytes(), 40.0, 1e-12);
  EXPECT_EQ(rep.file_bytes, rep.compressed_bytes + 6 + 4);

  // Independent accounting of the MLP sections.
  auto mlp_bytes = [](const Mlp& m) {
    size_t acc = 4;
    for (const auto& l : m.layers) acc += 4 + 4 + 1 + 2 * (l.weight.size() + l.bias.size());
    return acc;
  };
  const size_t expected_mlp = 4 + mlp_bytes(cp.phi) + 6 + 4 + mlp_bytes(dp.enc_mu) +
                              mlp_bytes(dp.enc_dv) + mlp_bytes(dp.enc_t) + mlp_bytes(dp.trunk);
  EXPECT_EQ(rep.mlp_bytes, expected_mlp);
}

TEST(SizeReport, DeflateShrinksCoherentClouds) {
  // Spatially smooth cloud: Morton + delta leaves small residuals.
  const int n = 2000;
  GaussianCloud cloud = GaussianCloud::sized(n);
  for (int i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / n;
    cloud.mu4(i, 0) = std::sin(2 * M_PI * f);
    cloud.mu4(i, 1) = std::cos(2 * M_PI * f);
    cloud.mu4(i, 2) = 0.2 * f;
    cloud.mu4(i, 3) = f;
    cloud.s4.row(i).setConstant(std::log(0.1) + 0.05 * std::sin(20 * f));
    cloud.c_dc.row(i).setConstant(0.3 * f);
    cloud.o_logit[i] = 2.0 * f - 1.0;
  }
  const std::vector<uint8_t> bytes = save_model(cloud, nullptr, nullptr);
  const SizeReport rep = size_report(bytes);
  EXPECT_LT(rep.compressed_bytes, rep.payload_bytes);
  EXPECT_LT(static_cast<double>(rep.compressed_bytes),
            0.95 * static_cast<double>(rep.payload_bytes));
}
