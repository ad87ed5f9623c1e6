#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "iseg/checkpoint.hpp"
#include "iseg/errors.hpp"
#include "test_support.hpp"

namespace iseg {
namespace {

// Independent little-endian writer for the expected byte stream.
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> expected_bytes(const NamedTensors& ts) {
    std::vector<std::uint8_t> b{'C', 'P', 'K', 'T', '1'};
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(kCheckpointVersion >> (8 * i)));
    put_u64(b, ts.size());
    for (const auto& [name, t] : ts) {
        put_u64(b, name.size());
        b.insert(b.end(), name.begin(), name.end());
        put_u64(b, t.rank());
        for (auto d : t.shape()) put_u64(b, d);
        for (double v : t.data()) put_u64(b, std::bit_cast<std::uint64_t>(v));
    }
    return b;
}

NamedTensors sample_tensors() {
    std::mt19937_64 rng(101);
    Tensor odd({5}, {-0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::infinity(),
                     std::numeric_limits<double>::quiet_NaN(), 1.0 / 3.0});
    return {{"conv.w", test::random_tensor({2, 3, 3, 3}, rng)}, {"scalar", Tensor::scalar(2.5)}, {"odd", odd},
            {"empty", Tensor({0, 4})}, {"utf8 \xc3\xa9", Tensor({1}, {7.0})}};
}

TEST(Checkpoint, ByteLayoutMatchesFormat) {
    const auto ts = sample_tensors();
    EXPECT_EQ(encode_checkpoint(ts), expected_bytes(ts));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    test::TempDir dir("ckpt");
    const auto ts = sample_tensors();
    save_checkpoint(dir / "a.ckpt", ts);
    const auto back = load_checkpoint(dir / "a.ckpt");
    ASSERT_EQ(back.size(), ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        EXPECT_EQ(back[i].first, ts[i].first);
        EXPECT_EQ(back[i].second.shape(), ts[i].second.shape());
        const auto a = ts[i].second.data(), b = back[i].second.data();
        ASSERT_EQ(a.size(), b.size());
        if (!a.empty()) EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0) << ts[i].first;
    }
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ts));
}

TEST(Checkpoint, EveryTruncationIsAFormatError) {
    const auto bytes = encode_checkpoint(sample_tensors());
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + n)), FormatError) << n;
    }
}

TEST(Checkpoint, RejectsBadHeaderAndTrailingBytes) {
    auto bytes = encode_checkpoint(sample_tensors());
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad[5] = 2;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    // A huge element count must not trigger a giant allocation.
    bad = expected_bytes({{"t", Tensor({1})}});
    const std::size_t extent_at = 5 + 4 + 8 + 8 + 1 + 8;
    for (int i = 0; i < 8; ++i) bad[extent_at + i] = 0xff;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    test::TempDir dir("ckpt_missing");
    EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), IoError);
}

TEST(Fnv1a, KnownVectors) {
    EXPECT_EQ(fnv1a(nullptr, 0), 0xcbf29ce484222325ULL);
    const std::uint8_t a = 'a';
    EXPECT_EQ(fnv1a(&a, 1), 0xaf63dc4c8601ec8cULL);
    const std::string foobar = "foobar";
    EXPECT_EQ(fnv1a(reinterpret_cast<const std::uint8_t*>(foobar.data()), foobar.size()), 0x85944171f73967e8ULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

} // namespace
} // namespace iseg
