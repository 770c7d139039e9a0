#pragma once

/// @file dataset.hpp Domain datasets: IDX and delimited-text I/O, bilinear
/// resampling of image rows, and a synthetic shifted Gaussian-mixture generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dtn/error.hpp"
#include "dtn/nn.hpp"

namespace dtn {

enum class DomainRole { Source, Target };

inline std::string to_string(DomainRole r) { return r == DomainRole::Source ? "source" : "target"; }

/// Row-per-sample feature matrix with optional labels in [0, C).
struct DomainDataset {
    MatrixXd features;
    std::optional<std::vector<int>> labels;
    std::string name;
    DomainRole role = DomainRole::Source;
    Index image_rows = 0;  ///< set when rows are flattened images
    Index image_cols = 0;

    Index size() const { return features.rows(); }
    Index dim() const { return features.cols(); }
    bool labeled() const { return labels.has_value(); }

    void validate() const {
        if (!features.allFinite()) throw ArgumentError("dataset '" + name + "' has non-finite features");
        if (labels) {
            if (static_cast<Index>(labels->size()) != features.rows())
                throw ShapeError("dataset '" + name + "' has " + std::to_string(labels->size()) + " labels for " +
                                 std::to_string(features.rows()) + " samples");
            for (std::size_t i = 0; i < labels->size(); ++i)
                if ((*labels)[i] < 0)
                    throw ArgumentError("dataset '" + name + "' has a negative label at row " + std::to_string(i));
        }
    }
};

/// max label + 1, or 0 for an unlabeled dataset.
inline Index label_count(const DomainDataset& d) {
    if (!d.labels || d.labels->empty()) return 0;
    return *std::max_element(d.labels->begin(), d.labels->end()) + 1;
}

// ---------------------------------------------------------------- IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::filesystem::path& path) {
    if (offset + 4 > buf.size())
        throw ParseError(path.string() + ": truncated header at byte offset " + std::to_string(offset) +
                         " (file has " + std::to_string(buf.size()) + " bytes)");
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
    out.write(bytes, 4);
}

inline void check_payload(const std::vector<unsigned char>& buf, std::size_t start, std::size_t expected,
                          const std::filesystem::path& path) {
    if (buf.size() < start + expected)
        throw ParseError(path.string() + ": truncated payload, expected " + std::to_string(expected) +
                         " bytes from byte offset " + std::to_string(start) + " but file ends at byte offset " +
                         std::to_string(buf.size()));
    if (buf.size() > start + expected)
        throw ParseError(path.string() + ": " + std::to_string(buf.size() - start - expected) +
                         " trailing bytes after payload end at byte offset " + std::to_string(start + expected));
}

}  // namespace detail

/// Reads an unsigned-byte image file (and optionally its label file). Pixels are scaled to [0,1].
inline DomainDataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels,
                              DomainRole role = DomainRole::Source) {
    auto buf = detail::read_file(images);
    std::uint32_t magic = detail::read_be32(buf, 0, images);
    if (magic != kIdxImageMagic) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "0x%08x", magic);
        throw ParseError(images.string() + ": bad image magic " + hex + " at byte offset 0 (expected 0x00000803)");
    }
    const std::size_t count = detail::read_be32(buf, 4, images);
    const std::size_t rows = detail::read_be32(buf, 8, images);
    const std::size_t cols = detail::read_be32(buf, 12, images);
    const std::size_t pixels = rows * cols;
    detail::check_payload(buf, 16, count * pixels, images);

    DomainDataset d;
    d.name = images.stem().string();
    d.role = role;
    d.image_rows = static_cast<Index>(rows);
    d.image_cols = static_cast<Index>(cols);
    d.features.resize(static_cast<Index>(count), static_cast<Index>(pixels));
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < pixels; ++j)
            d.features(static_cast<Index>(i), static_cast<Index>(j)) = buf[16 + i * pixels + j] / 255.0;

    if (labels) {
        auto lbuf = detail::read_file(*labels);
        std::uint32_t lmagic = detail::read_be32(lbuf, 0, *labels);
        if (lmagic != kIdxLabelMagic) {
            char hex[16];
            std::snprintf(hex, sizeof hex, "0x%08x", lmagic);
            throw ParseError(labels->string() + ": bad label magic " + hex +
                             " at byte offset 0 (expected 0x00000801)");
        }
        const std::size_t lcount = detail::read_be32(lbuf, 4, *labels);
        if (lcount != count)
            throw ParseError(labels->string() + ": label count " + std::to_string(lcount) +
                             " (byte offset 4) does not match image count " + std::to_string(count));
        detail::check_payload(lbuf, 8, lcount, *labels);
        d.labels = std::vector<int>(lbuf.begin() + 8, lbuf.end());
    }
    return d;
}

/// Quantizes features to bytes (round to nearest after clamping to [0,1]).
inline void write_idx(const DomainDataset& d, Index rows, Index cols, const std::filesystem::path& images,
                      const std::optional<std::filesystem::path>& labels = std::nullopt) {
    if (rows * cols != d.dim())
        throw ShapeError("write_idx: " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " images do not match feature dim " + std::to_string(d.dim()));
    std::ofstream out(images, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + images.string() + "'");
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(d.size()));
    detail::write_be32(out, static_cast<std::uint32_t>(rows));
    detail::write_be32(out, static_cast<std::uint32_t>(cols));
    for (Index i = 0; i < d.size(); ++i)
        for (Index j = 0; j < d.dim(); ++j) {
            double v = std::clamp(d.features(i, j), 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (labels) {
        if (!d.labels) throw ArgumentError("write_idx: dataset has no labels to write");
        std::ofstream lout(*labels, std::ios::binary);
        if (!lout) throw ParseError("cannot write '" + labels->string() + "'");
        detail::write_be32(lout, kIdxLabelMagic);
        detail::write_be32(lout, static_cast<std::uint32_t>(d.labels->size()));
        for (int y : *d.labels) {
            if (y < 0 || y > 255) throw ArgumentError("write_idx: label " + std::to_string(y) + " does not fit a byte");
            lout.put(static_cast<char>(static_cast<unsigned char>(y)));
        }
    }
}

// ---------------------------------------------------------------- delimited text

/// One row per line; the last column is the label when `has_labels`.
inline DomainDataset load_delimited(const std::filesystem::path& path, bool has_labels, char delimiter = ',',
                                    DomainRole role = DomainRole::Source) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    std::size_t blank_run = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            ++blank_run;
            continue;
        }
        if (blank_run > 0 && !rows.empty())
            throw ParseError(path.string() + ": blank line before line " + std::to_string(line_no));
        blank_run = 0;

        std::vector<double> cells;
        std::string_view rest(line);
        while (true) {
            auto pos = rest.find(delimiter);
            std::string_view cell = rest.substr(0, pos);
            while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
            while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
            if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + ", column " +
                                 std::to_string(cells.size() + 1) + ": '" + std::string(cell) + "' is not a number");
            cells.push_back(v);
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        if (rows.empty() && labels.empty()) {
            width = cells.size();
            if (has_labels && width < 2)
                throw ParseError(path.string() + ": line " + std::to_string(line_no) +
                                 " needs at least one feature column and a label column");
        } else if (cells.size() != width) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size()) + " columns, expected " + std::to_string(width));
        }
        if (has_labels) {
            double y = cells.back();
            if (y < 0 || y != std::floor(y) || y > 1e9)
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": label '" +
                                 std::to_string(y) + "' is not a nonnegative integer");
            labels.push_back(static_cast<int>(y));
            cells.pop_back();
        }
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw ParseError(path.string() + ": no data rows");

    DomainDataset d;
    d.name = path.stem().string();
    d.role = role;
    d.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            d.features(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    if (has_labels) d.labels = std::move(labels);
    return d;
}

/// Writes with 17 significant digits so a reload is exact.
inline void save_delimited(const DomainDataset& d, const std::filesystem::path& path, char delimiter = ',') {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path.string() + "'");
    char buf[32];
    for (Index i = 0; i < d.size(); ++i) {
        for (Index j = 0; j < d.dim(); ++j) {
            if (j > 0) out << delimiter;
            std::snprintf(buf, sizeof buf, "%.17g", d.features(i, j));
            out << buf;
        }
        if (d.labels) out << delimiter << (*d.labels)[static_cast<std::size_t>(i)];
        out << '\n';
    }
}

// ---------------------------------------------------------------- resampling

struct ImageShape {
    Index rows = 0;
    Index cols = 0;
};

/// Bilinear resampling of every row (an r x c row-major image) to r' x c'.
/// Corner pixels map onto corner pixels; output is clamped to [0,1].
inline DomainDataset resize_bilinear(const DomainDataset& d, ImageShape from, ImageShape to) {
    if (from.rows * from.cols != d.dim())
        throw ShapeError("resize_bilinear: " + std::to_string(from.rows) + "x" + std::to_string(from.cols) +
                         " does not match feature dim " + std::to_string(d.dim()));
    if (to.rows < 1 || to.cols < 1) throw ArgumentError("resize_bilinear: empty target size");
    DomainDataset out = d;
    out.image_rows = to.rows;
    out.image_cols = to.cols;
    if (from.rows == to.rows && from.cols == to.cols) return out;

    auto coord = [](Index i, Index n_out, Index n_in) {
        if (n_out == 1) return (n_in - 1) / 2.0;
        return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
    };
    out.features.resize(d.size(), to.rows * to.cols);
    for (Index r = 0; r < to.rows; ++r) {
        double y = coord(r, to.rows, from.rows);
        Index y0 = static_cast<Index>(std::floor(y));
        Index y1 = std::min(y0 + 1, from.rows - 1);
        double wy = y - static_cast<double>(y0);
        for (Index c = 0; c < to.cols; ++c) {
            double x = coord(c, to.cols, from.cols);
            Index x0 = static_cast<Index>(std::floor(x));
            Index x1 = std::min(x0 + 1, from.cols - 1);
            double wx = x - static_cast<double>(x0);
            for (Index i = 0; i < d.size(); ++i) {
                auto px = [&](Index rr, Index cc) { return d.features(i, rr * from.cols + cc); };
                double top = (1 - wx) * px(y0, x0) + wx * px(y0, x1);
                double bottom = (1 - wx) * px(y1, x0) + wx * px(y1, x1);
                out.features(i, r * to.cols + c) = std::clamp((1 - wy) * top + wy * bottom, 0.0, 1.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------- synthetic shift

/**
 * Gaussian blobs whose class means sit evenly on a circle in the first two
 * coordinates. The target domain rotates the means by `rotation`, shifts them
 * by `translation` and multiplies the noise scale by `noise_ratio`, so both
 * P(x) and P(y|x) differ between domains.
 */
struct SynthShiftSpec {
    Index classes = 3;
    Index dim = 2;
    Index samples_per_class = 300;  ///< per domain
    double rotation = 0.0;          ///< radians, in [0, 2*pi)
    std::vector<double> translation;  ///< padded with zeros up to `dim`
    double noise_ratio = 1.0;       ///< target noise scale / source noise scale
    double radius = 2.0;            ///< distance of class means from the origin
    double noise = 1.0;             ///< source noise standard deviation
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 1) throw ArgumentError("synthetic spec: classes must be positive");
        if (dim < 2) throw ArgumentError("synthetic spec: dim must be at least 2");
        if (samples_per_class < 1) throw ArgumentError("synthetic spec: samples_per_class must be positive");
        if (!(rotation >= 0.0 && rotation < 2 * std::numbers::pi))
            throw ArgumentError("synthetic spec: rotation must lie in [0, 2*pi)");
        if (!(noise_ratio > 0.0)) throw ArgumentError("synthetic spec: noise_ratio must be positive");
        if (!(noise >= 0.0) || !std::isfinite(radius)) throw ArgumentError("synthetic spec: bad radius or noise");
        if (static_cast<Index>(translation.size()) > dim)
            throw ShapeError("synthetic spec: translation longer than dim");
    }

    VectorXd class_mean(Index c, DomainRole role) const {
        double angle = 2 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        if (role == DomainRole::Target) angle += rotation;
        VectorXd m = VectorXd::Zero(dim);
        m(0) = radius * std::cos(angle);
        m(1) = radius * std::sin(angle);
        if (role == DomainRole::Target)
            for (std::size_t i = 0; i < translation.size(); ++i) m(static_cast<Index>(i)) += translation[i];
        return m;
    }
};

/// Both domains carry labels; target labels are for evaluation only.
inline std::pair<DomainDataset, DomainDataset> gen_synth_shift(const SynthShiftSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    auto make = [&](DomainRole role) {
        DomainDataset d;
        d.role = role;
        d.name = "synthetic-" + to_string(role);
        const Index n = spec.classes * spec.samples_per_class;
        const double sigma = role == DomainRole::Source ? spec.noise : spec.noise * spec.noise_ratio;
        std::normal_distribution<double> gauss(0.0, 1.0);
        d.features.resize(n, spec.dim);
        std::vector<int> labels(static_cast<std::size_t>(n));
        std::vector<VectorXd> means;
        for (Index c = 0; c < spec.classes; ++c) means.push_back(spec.class_mean(c, role));
        for (Index i = 0; i < n; ++i) {
            Index c = i % spec.classes;
            labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
            for (Index j = 0; j < spec.dim; ++j) d.features(i, j) = means[static_cast<std::size_t>(c)](j) + sigma * gauss(rng);
        }
        d.labels = std::move(labels);
        return d;
    };
    DomainDataset source = make(DomainRole::Source);
    DomainDataset target = make(DomainRole::Target);
    return {std::move(source), std::move(target)};
}

}  // namespace dtn
