#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dtn/dataset.hpp"
#include "dtn/mmd.hpp"
#include "dtn/run.hpp"
#include "dtn/trainer.hpp"
#include "oracles.hpp"

using namespace dtn;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / (std::string("dtn_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<unsigned char>((v >> shift) & 0xff));
}

std::vector<unsigned char> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels, std::uint32_t magic = 0x803) {
    std::vector<unsigned char> b;
    put_be32(b, magic);
    put_be32(b, count);
    put_be32(b, rows);
    put_be32(b, cols);
    b.insert(b.end(), pixels.begin(), pixels.end());
    return b;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels, std::uint32_t count) {
    std::vector<unsigned char> b;
    put_be32(b, 0x801);
    put_be32(b, count);
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

template <class F>
std::string error_of(F f) {
    try {
        f();
    } catch (const ParseError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(LoadIdx, ScalesEndpointBytes) {
    TempDir dir;
    std::vector<unsigned char> px(9, 0);
    px.insert(px.end(), 9, 255);
    write_bytes(dir / "img", idx_images(2, 3, 3, px));
    write_bytes(dir / "lbl", idx_labels({4, 7}, 2));
    DomainDataset d = load_idx(dir / "img", dir / "lbl");
    ASSERT_EQ(d.size(), 2);
    ASSERT_EQ(d.dim(), 9);
    EXPECT_EQ(d.features.row(0), Eigen::RowVectorXd::Zero(9));
    EXPECT_EQ(d.features.row(1), Eigen::RowVectorXd::Ones(9));
    EXPECT_EQ(*d.labels, (std::vector<int>{4, 7}));
    EXPECT_EQ(d.image_rows, 3);
    EXPECT_EQ(d.image_cols, 3);
}

TEST(LoadIdx, RowMajorFlattening) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(1, 2, 3, {0, 51, 102, 153, 204, 255}));
    DomainDataset d = load_idx(dir / "img", std::nullopt);
    for (Index j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(d.features(0, j), double(j) * 51.0 / 255.0);
    EXPECT_FALSE(d.labeled());
}

TEST(LoadIdx, CountMismatch) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(10, 2, 2, std::vector<unsigned char>(40, 9)));
    write_bytes(dir / "lbl", idx_labels(std::vector<unsigned char>(9, 1), 9));
    std::string msg = error_of([&] { load_idx(dir / "img", dir / "lbl"); });
    EXPECT_NE(msg.find("does not match image count 10"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 4"), std::string::npos) << msg;
}

TEST(LoadIdx, BadMagic) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(1, 1, 1, {0}, 0x801));
    std::string msg = error_of([&] { load_idx(dir / "img", std::nullopt); });
    EXPECT_NE(msg.find("bad image magic 0x00000801"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 0"), std::string::npos) << msg;
}

TEST(LoadIdx, TruncatedPayloadAndHeader) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(3, 2, 2, std::vector<unsigned char>(11, 0)));
    std::string msg = error_of([&] { load_idx(dir / "img", std::nullopt); });
    EXPECT_NE(msg.find("truncated payload"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 27"), std::string::npos) << msg;

    auto header = idx_images(3, 2, 2, {});
    header.resize(10);
    write_bytes(dir / "short", header);
    msg = error_of([&] { load_idx(dir / "short", std::nullopt); });
    EXPECT_NE(msg.find("truncated header at byte offset 8"), std::string::npos) << msg;
}

TEST(LoadIdx, TrailingBytesRejected) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(1, 2, 2, std::vector<unsigned char>(5, 0)));
    std::string msg = error_of([&] { load_idx(dir / "img", std::nullopt); });
    EXPECT_NE(msg.find("trailing"), std::string::npos) << msg;
}

TEST(LoadIdx, MissingFileNamed) {
    std::string msg = error_of([] { load_idx("/nonexistent/dir/images.idx", std::nullopt); });
    EXPECT_NE(msg.find("/nonexistent/dir/images.idx"), std::string::npos) << msg;
}

TEST(LoadIdx, RoundTripAtEightBits) {
    TempDir dir;
    std::mt19937_64 rng(1);
    DomainDataset d;
    d.features.resize(25, 12);
    std::vector<int> labels;
    for (Index i = 0; i < 25; ++i) {
        for (Index j = 0; j < 12; ++j) d.features(i, j) = double(rng() % 256) / 255.0;
        labels.push_back(int(rng() % 10));
    }
    d.labels = labels;
    write_idx(d, 3, 4, dir / "img", dir / "lbl");
    DomainDataset back = load_idx(dir / "img", dir / "lbl");
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.labels, d.labels);
}

TEST(LoadDelimited, SmallTable) {
    TempDir dir;
    write_text(dir / "t.csv", "1,2,0\n3,4,1\n");
    DomainDataset d = load_delimited(dir / "t.csv", true);
    MatrixXd expected(2, 2);
    expected << 1, 2, 3, 4;
    EXPECT_EQ(d.features, expected);
    EXPECT_EQ(*d.labels, (std::vector<int>{0, 1}));

    DomainDataset unlabeled = load_delimited(dir / "t.csv", false);
    EXPECT_EQ(unlabeled.dim(), 3);
    EXPECT_FALSE(unlabeled.labeled());
}

TEST(LoadDelimited, OtherDelimiterAndCrLf) {
    TempDir dir;
    write_text(dir / "t.tsv", "0.5\t-1e-3\t2\r\n7\t8\t0\r\n\n");
    DomainDataset d = load_delimited(dir / "t.tsv", true, '\t');
    EXPECT_DOUBLE_EQ(d.features(0, 1), -1e-3);
    EXPECT_EQ(*d.labels, (std::vector<int>{2, 0}));
}

TEST(LoadDelimited, RaggedRowNamesLine) {
    TempDir dir;
    write_text(dir / "t.csv", "1,2,0\n3,4\n5,6,1\n");
    std::string msg = error_of([&] { load_delimited(dir / "t.csv", true); });
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(LoadDelimited, NonNumericNamesLine) {
    TempDir dir;
    write_text(dir / "t.csv", "1,2\n3,4\n5,x\n");
    std::string msg = error_of([&] { load_delimited(dir / "t.csv", false); });
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    write_text(dir / "u.csv", "1,2,0.5\n");
    msg = error_of([&] { load_delimited(dir / "u.csv", true); });
    EXPECT_NE(msg.find("label"), std::string::npos) << msg;
}

TEST(LoadDelimited, EmptyAndInteriorBlankRejected) {
    TempDir dir;
    write_text(dir / "e.csv", "\n\n");
    EXPECT_FALSE(error_of([&] { load_delimited(dir / "e.csv", false); }).empty());
    write_text(dir / "b.csv", "1,2\n\n3,4\n");
    EXPECT_NE(error_of([&] { load_delimited(dir / "b.csv", false); }).find("line 3"), std::string::npos);
}

TEST(LoadDelimited, ThousandRowRoundTrip) {
    TempDir dir;
    std::mt19937_64 rng(2);
    DomainDataset d;
    d.features = oracle::random_matrix(1000, 6, rng, -1e3, 1e3);
    std::vector<int> labels;
    for (int i = 0; i < 1000; ++i) labels.push_back(int(rng() % 5));
    d.labels = labels;
    save_delimited(d, dir / "r.csv");
    DomainDataset back = load_delimited(dir / "r.csv", true);
    ASSERT_EQ(back.size(), 1000);
    EXPECT_LE((back.features - d.features).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(back.labels, d.labels);
}

TEST(ResizeBilinear, ConstantImageStaysConstant) {
    DomainDataset d;
    d.features = MatrixXd::Constant(2, 16, 0.375);
    DomainDataset r = resize_bilinear(d, {4, 4}, {7, 3});
    ASSERT_EQ(r.dim(), 21);
    for (Index i = 0; i < r.features.size(); ++i) EXPECT_NEAR(r.features.data()[i], 0.375, 1e-15);
}

TEST(ResizeBilinear, IdentityIsBitExact) {
    std::mt19937_64 rng(3);
    DomainDataset d;
    d.features = oracle::random_matrix(3, 20, rng, 0, 1);
    EXPECT_EQ(resize_bilinear(d, {4, 5}, {4, 5}).features, d.features);
}

TEST(ResizeBilinear, TwoByTwoToTwoByFour) {
    DomainDataset d;
    d.features.resize(1, 4);
    d.features << 0, 1, 0, 1;  // [[0,1],[0,1]]
    DomainDataset r = resize_bilinear(d, {2, 2}, {2, 4});
    // corners align, so output column c samples input x = c/3
    const double row[] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
    for (Index rr = 0; rr < 2; ++rr)
        for (Index c = 0; c < 4; ++c) EXPECT_NEAR(r.features(0, rr * 4 + c), row[c], 1e-15);
}

TEST(ResizeBilinear, DownsampleStaysInRange) {
    std::mt19937_64 rng(4);
    DomainDataset d;
    d.features = oracle::random_matrix(5, 28 * 28, rng, 0, 1);
    DomainDataset r = resize_bilinear(d, {28, 28}, {16, 16});
    EXPECT_EQ(r.dim(), 256);
    EXPECT_GE(r.features.minCoeff(), 0.0);
    EXPECT_LE(r.features.maxCoeff(), 1.0);
    // corners are copied
    for (Index i = 0; i < 5; ++i) {
        EXPECT_EQ(r.features(i, 0), d.features(i, 0));
        EXPECT_EQ(r.features(i, 255), d.features(i, 28 * 28 - 1));
    }
}

TEST(ResizeBilinear, DimensionMismatch) {
    DomainDataset d;
    d.features = MatrixXd::Zero(1, 10);
    EXPECT_THROW(resize_bilinear(d, {3, 3}, {2, 2}), ShapeError);
}

TEST(SynthShift, NoShiftMeansAgree) {
    SynthShiftSpec spec;
    spec.classes = 3;
    spec.dim = 2;
    spec.samples_per_class = 300;
    spec.noise = 1.0;
    spec.seed = 5;
    auto [s, t] = gen_synth_shift(spec);
    const double bound = 3.0 * spec.noise / std::sqrt(double(spec.samples_per_class));
    for (int c = 0; c < 3; ++c) {
        VectorXd ms = VectorXd::Zero(2), mt = VectorXd::Zero(2);
        for (Index i = 0; i < s.size(); ++i) {
            if ((*s.labels)[std::size_t(i)] == c) ms += s.features.row(i).transpose();
            if ((*t.labels)[std::size_t(i)] == c) mt += t.features.row(i).transpose();
        }
        ms /= 300.0;
        mt /= 300.0;
        for (Index j = 0; j < 2; ++j) EXPECT_LE(std::abs(ms(j) - mt(j)), bound) << "class " << c << " dim " << j;
    }
}

TEST(SynthShift, SameSeedSameData) {
    SynthShiftSpec spec = benchmark_synth_spec(9);
    auto [s1, t1] = gen_synth_shift(spec);
    auto [s2, t2] = gen_synth_shift(spec);
    EXPECT_EQ(s1.features, s2.features);
    EXPECT_EQ(t1.features, t2.features);
    EXPECT_EQ(s1.labels, s2.labels);
    spec.seed = 10;
    EXPECT_NE(gen_synth_shift(spec).first.features, s1.features);
}

TEST(SynthShift, TargetMeansRotatedAndTranslated) {
    SynthShiftSpec spec = benchmark_synth_spec();
    for (Index c = 0; c < 3; ++c) {
        double a = 2 * std::numbers::pi * double(c) / 3.0 + std::numbers::pi / 8;
        VectorXd m = spec.class_mean(c, DomainRole::Target);
        EXPECT_NEAR(m(0), 2.0 * std::cos(a) + 1.0, 1e-15);
        EXPECT_NEAR(m(1), 2.0 * std::sin(a), 1e-15);
    }
}

TEST(SynthShift, ValidatesSpec) {
    SynthShiftSpec spec;
    spec.rotation = 2 * std::numbers::pi;
    EXPECT_THROW(gen_synth_shift(spec), ArgumentError);
    spec.rotation = 0;
    spec.noise_ratio = 0;
    EXPECT_THROW(gen_synth_shift(spec), ArgumentError);
}

TEST(SynthShift, UnshiftedMmdShrinksWithSampleSize) {
    double previous = std::numeric_limits<double>::infinity();
    for (Index m : {50, 500, 5000}) {
        SynthShiftSpec spec;
        spec.dim = 10;
        spec.samples_per_class = m;
        spec.seed = 11;
        auto [s, t] = gen_synth_shift(spec);
        double mmd = marginal_mmd(s.features.transpose(), t.features.transpose());
        EXPECT_LT(mmd, previous) << "m = " << m;
        previous = mmd;
    }
}

constexpr double kPinnedSourceAccuracy = 1.0;
constexpr double kPinnedTargetAccuracy = 419.0 / 450.0;

// A source-trained MLP loses accuracy on the shifted target. The gap below was
// measured once with this generator and training configuration and is pinned
// as a regression value.
TEST(SynthShift, ShiftCostsSourceOnlyAccuracy) {
    RunManifest m = benchmark_manifest(0);
    SynthShiftSpec spec = *m.data.synthetic;
    auto [source, target] = gen_synth_shift(spec);
    spec.seed += 1000;
    DomainDataset held_out = gen_synth_shift(spec).first;
    Architecture specs = build_architecture(m, source);
    NetworkParams p = train_source_only(source, specs, m.config);
    double source_acc = accuracy(predict(p, specs, held_out), *held_out.labels);
    double target_acc = accuracy(predict(p, specs, target), *target.labels);
    EXPECT_GT(source_acc - target_acc, 0.05);
    EXPECT_NEAR(source_acc, kPinnedSourceAccuracy, 1e-9);
    EXPECT_NEAR(target_acc, kPinnedTargetAccuracy, 1e-9);
}
