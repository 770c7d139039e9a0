#pragma once

/// @file run.hpp Run manifests, report files, and the train / sweep / timing /
/// gen-synth / predict commands behind the `dtn` executable.
///
/// Manifest schema (format_version 1), all keys optional unless noted:
///
///     {
///       "format_version": 1,
///       "config": { "lambda", "mu", "batch_size", "label_iters", "learning_rate",
///                   "epochs_per_iter", "baseline_epochs", "seed", "target_nll",
///                   "reshuffle_each_epoch" },
///       "architecture": { "hidden": [32], "activation": "tanh", "classes": 0 },
///       "data": { "synthetic": { "classes", "dim", "samples_per_class", "rotation",
///                                "translation", "noise_ratio", "radius", "noise", "seed" } }
///          or   { "source": <dataset>, "target": <dataset> }            (required)
///       "output_dir": "out",
///       "timestamp": "..."
///     }
///
///     <dataset> = { "format": "delimited", "path": "...", "has_labels": true, "delimiter": "," }
///               | { "format": "idx", "images": "...", "labels": "..." }
///               plus optional "image_shape": [r, c] and "resize_to": [r', c'].
///
/// Relative paths (datasets and output_dir) are resolved against the manifest's directory.
/// "classes": 0 means one output per source label.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dtn/dataset.hpp"
#include "dtn/error.hpp"
#include "dtn/model_io.hpp"
#include "dtn/nn.hpp"
#include "dtn/trainer.hpp"

namespace dtn {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kManifestFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 2;
inline constexpr int kExitNumericalFailure = 3;

struct DatasetSource {
    std::string format = "delimited";  ///< "delimited" or "idx"
    fs::path path;                     ///< delimited
    fs::path images;                   ///< idx
    fs::path labels;                   ///< idx, optional
    bool has_labels = true;            ///< delimited
    char delimiter = ',';
    std::optional<ImageShape> image_shape;
    std::optional<ImageShape> resize_to;
};

struct DataSpec {
    std::optional<SynthShiftSpec> synthetic;
    std::optional<DatasetSource> source;
    std::optional<DatasetSource> target;
};

struct ArchitectureSpec {
    std::vector<Index> hidden{32};
    Activation activation = Activation::Tanh;
    Index classes = 0;
};

struct RunManifest {
    TrainConfig config;
    ArchitectureSpec architecture;
    DataSpec data;
    fs::path output_dir = "out";
    std::string timestamp;
    fs::path base_dir;  ///< not serialized; where relative paths are anchored
};

/// The shifted three-blob benchmark used by the acceptance suite and the
/// bundled manifests.
inline SynthShiftSpec benchmark_synth_spec(std::uint64_t seed = 0) {
    SynthShiftSpec s;
    s.classes = 3;
    s.dim = 2;
    s.samples_per_class = 300;
    s.rotation = std::numbers::pi / 8;
    s.translation = {1.0, 0.0};
    s.noise_ratio = 1.5;
    s.radius = 2.0;
    s.noise = 0.3;
    s.seed = seed;
    return s;
}

inline RunManifest benchmark_manifest(std::uint64_t seed = 0) {
    RunManifest m;
    m.config.lambda = 10.0;
    m.config.mu = 10.0;
    m.config.batch_size = 200;
    m.config.label_iters = 10;
    m.config.learning_rate = 0.001;
    m.config.epochs_per_iter = 10;
    m.config.baseline_epochs = 10;
    m.config.seed = seed;
    m.architecture.hidden = {32};
    m.data.synthetic = benchmark_synth_spec(seed);
    return m;
}

// ---------------------------------------------------------------- JSON mapping

namespace detail {

inline json shape_to_json(const ImageShape& s) { return json::array({s.rows, s.cols}); }

inline ImageShape shape_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ParseError("image shape must be a [rows, cols] pair");
    return {j[0].get<Index>(), j[1].get<Index>()};
}

inline json synth_to_json(const SynthShiftSpec& s) {
    json j;
    j["classes"] = s.classes;
    j["dim"] = s.dim;
    j["samples_per_class"] = s.samples_per_class;
    j["rotation"] = s.rotation;
    j["translation"] = s.translation;
    j["noise_ratio"] = s.noise_ratio;
    j["radius"] = s.radius;
    j["noise"] = s.noise;
    j["seed"] = s.seed;
    return j;
}

inline SynthShiftSpec synth_from_json(const json& j) {
    SynthShiftSpec s;
    s.classes = j.value("classes", s.classes);
    s.dim = j.value("dim", s.dim);
    s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
    s.rotation = j.value("rotation", s.rotation);
    s.translation = j.value("translation", s.translation);
    s.noise_ratio = j.value("noise_ratio", s.noise_ratio);
    s.radius = j.value("radius", s.radius);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

inline json dataset_to_json(const DatasetSource& d) {
    json j;
    j["format"] = d.format;
    if (d.format == "idx") {
        j["images"] = d.images.string();
        if (!d.labels.empty()) j["labels"] = d.labels.string();
    } else {
        j["path"] = d.path.string();
        j["has_labels"] = d.has_labels;
        j["delimiter"] = std::string(1, d.delimiter);
    }
    if (d.image_shape) j["image_shape"] = shape_to_json(*d.image_shape);
    if (d.resize_to) j["resize_to"] = shape_to_json(*d.resize_to);
    return j;
}

inline DatasetSource dataset_from_json(const json& j) {
    DatasetSource d;
    d.format = j.value("format", d.format);
    if (d.format == "idx") {
        d.images = j.at("images").get<std::string>();
        d.labels = j.value("labels", std::string());
    } else if (d.format == "delimited") {
        d.path = j.at("path").get<std::string>();
        d.has_labels = j.value("has_labels", d.has_labels);
        auto delim = j.value("delimiter", std::string(","));
        if (delim.size() != 1) throw ParseError("delimiter must be a single character");
        d.delimiter = delim[0];
    } else {
        throw ParseError("unknown dataset format '" + d.format + "'");
    }
    if (j.contains("image_shape")) d.image_shape = shape_from_json(j["image_shape"]);
    if (j.contains("resize_to")) d.resize_to = shape_from_json(j["resize_to"]);
    return d;
}

}  // namespace detail

inline json config_to_json(const TrainConfig& c) {
    json j;
    j["lambda"] = c.lambda;
    j["mu"] = c.mu;
    j["batch_size"] = c.batch_size;
    j["label_iters"] = c.label_iters;
    j["learning_rate"] = c.learning_rate;
    j["epochs_per_iter"] = c.epochs_per_iter;
    j["baseline_epochs"] = c.baseline_epochs;
    j["seed"] = c.seed;
    j["target_nll"] = c.target_nll;
    j["reshuffle_each_epoch"] = c.reshuffle_each_epoch;
    return j;
}

inline TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.mu = j.value("mu", c.mu);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.label_iters = j.value("label_iters", c.label_iters);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs_per_iter = j.value("epochs_per_iter", c.epochs_per_iter);
    c.baseline_epochs = j.value("baseline_epochs", c.baseline_epochs);
    c.seed = j.value("seed", c.seed);
    c.target_nll = j.value("target_nll", c.target_nll);
    c.reshuffle_each_epoch = j.value("reshuffle_each_epoch", c.reshuffle_each_epoch);
    return c;
}

inline json manifest_to_json(const RunManifest& m) {
    json j;
    j["format_version"] = kManifestFormatVersion;
    j["config"] = config_to_json(m.config);
    j["architecture"] = {{"hidden", m.architecture.hidden},
                         {"activation", to_string(m.architecture.activation)},
                         {"classes", m.architecture.classes}};
    json data;
    if (m.data.synthetic) data["synthetic"] = detail::synth_to_json(*m.data.synthetic);
    if (m.data.source) data["source"] = detail::dataset_to_json(*m.data.source);
    if (m.data.target) data["target"] = detail::dataset_to_json(*m.data.target);
    j["data"] = std::move(data);
    j["output_dir"] = m.output_dir.string();
    j["timestamp"] = m.timestamp;
    return j;
}

inline RunManifest manifest_from_json(const json& j, const fs::path& base_dir = {}) {
    try {
        RunManifest m;
        m.base_dir = base_dir;
        int version = j.value("format_version", kManifestFormatVersion);
        if (version != kManifestFormatVersion)
            throw ParseError("manifest: unsupported format_version " + std::to_string(version));
        if (j.contains("config")) m.config = config_from_json(j["config"]);
        if (j.contains("architecture")) {
            const auto& a = j["architecture"];
            m.architecture.hidden = a.value("hidden", m.architecture.hidden);
            m.architecture.activation = activation_from_string(a.value("activation", std::string("tanh")));
            if (m.architecture.activation == Activation::SoftmaxOutput)
                throw ParseError("manifest: hidden layers cannot use softmax");
            m.architecture.classes = a.value("classes", m.architecture.classes);
        }
        const auto& data = j.at("data");
        if (data.contains("synthetic")) {
            m.data.synthetic = detail::synth_from_json(data["synthetic"]);
        } else {
            m.data.source = detail::dataset_from_json(data.at("source"));
            m.data.target = detail::dataset_from_json(data.at("target"));
        }
        m.output_dir = j.value("output_dir", m.output_dir.string());
        m.timestamp = j.value("timestamp", std::string());
        m.config.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    } catch (const ArgumentError& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
}

inline RunManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return manifest_from_json(j, path.parent_path());
}

inline void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

inline fs::path resolve(const RunManifest& m, const fs::path& p) {
    return p.is_absolute() || m.base_dir.empty() ? p : m.base_dir / p;
}

// ---------------------------------------------------------------- runs

inline DomainDataset load_dataset(const RunManifest& m, const DatasetSource& src, DomainRole role) {
    DomainDataset d;
    if (src.format == "idx") {
        std::optional<fs::path> labels;
        if (!src.labels.empty()) labels = resolve(m, src.labels);
        d = load_idx(resolve(m, src.images), labels, role);
    } else {
        d = load_delimited(resolve(m, src.path), src.has_labels, src.delimiter, role);
    }
    if (src.image_shape) {
        d.image_rows = src.image_shape->rows;
        d.image_cols = src.image_shape->cols;
    }
    if (src.resize_to) {
        if (d.image_rows == 0) throw ParseError("resize_to needs image dimensions (idx input or image_shape)");
        d = resize_bilinear(d, {d.image_rows, d.image_cols}, *src.resize_to);
    }
    d.validate();
    return d;
}

inline std::pair<DomainDataset, DomainDataset> load_datasets(const RunManifest& m) {
    if (m.data.synthetic) return gen_synth_shift(*m.data.synthetic);
    if (!m.data.source || !m.data.target) throw ParseError("manifest names no data");
    return {load_dataset(m, *m.data.source, DomainRole::Source), load_dataset(m, *m.data.target, DomainRole::Target)};
}

inline Architecture build_architecture(const RunManifest& m, const DomainDataset& source) {
    Index classes = std::max(m.architecture.classes, label_count(source));
    if (classes < 1) throw ArgumentError("cannot infer the number of classes");
    return make_mlp(source.dim(), m.architecture.hidden, classes, m.architecture.activation);
}

struct RunResult {
    Architecture specs;
    FitResult fit;
    std::optional<double> baseline_accuracy;
    std::optional<double> final_accuracy;
    double total_seconds = 0.0;

    bool ok() const { return !fit.report.failure; }
};

inline RunResult run_training(const RunManifest& m) {
    auto start = std::chrono::steady_clock::now();
    auto [source, target] = load_datasets(m);
    RunResult r;
    r.specs = build_architecture(m, source);
    r.fit = fit(source, target, r.specs, m.config);
    const auto& acc = r.fit.report.target_accuracy;
    if (!acc.empty()) {
        r.baseline_accuracy = acc.front();
        r.final_accuracy = acc.back();
    }
    r.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double stddev_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double mu = mean_of(v), s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw ArgumentError("median of an empty list");
    std::sort(v.begin(), v.end());
    std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

/// Everything except the "timing" block and the manifest timestamp is a pure
/// function of the manifest.
inline json report_to_json(const RunManifest& m, const RunResult& r) {
    const TrainReport& rep = r.fit.report;
    json j;
    j["format_version"] = kReportFormatVersion;
    j["manifest"] = manifest_to_json(m);
    j["status"] = rep.failure ? "numerical_failure" : "ok";
    j["failure"] = rep.failure ? json(*rep.failure) : json(nullptr);
    json arch = json::array();
    for (const auto& s : r.specs)
        arch.push_back({{"input_dim", s.input_dim}, {"output_dim", s.output_dim}, {"activation", to_string(s.activation)}});
    j["architecture"] = std::move(arch);

    json res;
    res["iterations"] = rep.iterations;
    res["label_changes"] = rep.label_changes;
    res["target_accuracy"] = rep.target_accuracy;
    res["baseline_target_accuracy"] = r.baseline_accuracy ? json(*r.baseline_accuracy) : json(nullptr);
    res["final_target_accuracy"] = r.final_accuracy ? json(*r.final_accuracy) : json(nullptr);
    json epochs = json::array();
    for (const auto& e : rep.epochs) {
        epochs.push_back({{"iteration", e.iteration},
                          {"epoch", e.epoch},
                          {"objective", e.objective.total()},
                          {"neg_log_likelihood", e.objective.neg_log_likelihood},
                          {"marginal_term", e.objective.marginal_term},
                          {"conditional_term", e.objective.conditional_term},
                          {"mmd_mar", e.objective.mmd_mar},
                          {"mmd_con", e.objective.mmd_con}});
    }
    res["epochs"] = std::move(epochs);
    res["baseline_labels"] = rep.baseline_labels;
    res["final_labels"] = rep.final_labels;
    j["result"] = std::move(res);

    std::vector<double> secs;
    for (const auto& e : rep.epochs) secs.push_back(e.seconds);
    j["timing"] = {{"epoch_seconds", secs},
                   {"mean_epoch_seconds", mean_of(secs)},
                   {"stddev_epoch_seconds", stddev_of(secs)},
                   {"total_seconds", r.total_seconds}};
    return j;
}

/// Copy of a report with wall-clock fields removed, for reproducibility checks.
inline json strip_timing(json report) {
    report.erase("timing");
    if (report.contains("manifest")) report["manifest"].erase("timestamp");
    return report;
}

// ---------------------------------------------------------------- commands

/// Command-line overrides for TrainConfig fields.
struct ConfigOverrides {
    std::optional<double> lambda, mu, learning_rate;
    std::optional<Index> batch_size;
    std::optional<int> label_iters, epochs, baseline_epochs;
    std::optional<std::uint64_t> seed;
    std::optional<bool> target_nll;

    void apply(TrainConfig& c) const {
        if (lambda) c.lambda = *lambda;
        if (mu) c.mu = *mu;
        if (learning_rate) c.learning_rate = *learning_rate;
        if (batch_size) c.batch_size = *batch_size;
        if (label_iters) c.label_iters = *label_iters;
        if (epochs) c.epochs_per_iter = *epochs;
        if (baseline_epochs) c.baseline_epochs = *baseline_epochs;
        if (seed) c.seed = *seed;
        if (target_nll) c.target_nll = *target_nll;
    }
};

inline std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Runs the manifest and writes report.json and model.json into its output directory.
inline int cmd_train(const fs::path& manifest_path, const ConfigOverrides& overrides = {},
                     std::ostream& log = std::cerr) {
    try {
        RunManifest m = load_manifest(manifest_path);
        overrides.apply(m.config);
        m.config.validate();
        m.timestamp = utc_timestamp();
        RunResult r = run_training(m);
        fs::path out = resolve(m, m.output_dir);
        write_json(out / "report.json", report_to_json(m, r));
        if (!r.ok()) {
            log << "numerical failure: " << *r.fit.report.failure << '\n';
            return kExitNumericalFailure;
        }
        save_model(out / "model.json", r.specs, r.fit.params);
        log << "iterations " << r.fit.report.iterations;
        if (r.final_accuracy) log << ", target accuracy " << *r.final_accuracy;
        log << ", report " << (out / "report.json").string() << '\n';
        return kExitOk;
    } catch (const NumericalError& e) {
        log << "numerical failure: " << e.what() << '\n';
        return kExitNumericalFailure;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitInputError;
    }
}

enum class SweepParam { LambdaMu, BatchSize, Iters };

inline SweepParam sweep_param_from_string(const std::string& s) {
    if (s == "lambda_mu") return SweepParam::LambdaMu;
    if (s == "batch_size") return SweepParam::BatchSize;
    if (s == "iters") return SweepParam::Iters;
    throw ArgumentError("unknown sweep parameter '" + s + "' (expected lambda_mu, batch_size or iters)");
}

inline std::string to_string(SweepParam p) {
    switch (p) {
        case SweepParam::LambdaMu: return "lambda_mu";
        case SweepParam::BatchSize: return "batch_size";
        case SweepParam::Iters: return "iters";
    }
    return "unknown";
}

struct SweepPoint {
    double value = 0.0;
    int replicate = 0;
    RunManifest manifest;
    std::optional<double> accuracy;
    double seconds = 0.0;
    std::optional<std::string> error;
    json report;
};

struct SweepRow {
    double value = 0.0;
    std::vector<double> accuracies;  ///< successful replicates only
    std::optional<double> median_accuracy;
    double mean_seconds = 0.0;
    int failures = 0;
};

struct SweepResult {
    SweepParam param = SweepParam::LambdaMu;
    std::vector<SweepPoint> points;
    std::vector<SweepRow> rows;
};

/// Manifest for one sweep point. Replicate r shifts both the training seed and
/// the synthetic data seed by r, so every value sees the same replicates.
inline RunManifest sweep_point_manifest(const RunManifest& base, SweepParam param, double value, int replicate) {
    RunManifest m = base;
    switch (param) {
        case SweepParam::LambdaMu: m.config.lambda = m.config.mu = value; break;
        case SweepParam::BatchSize: m.config.batch_size = static_cast<Index>(std::llround(value)); break;
        case SweepParam::Iters: m.config.label_iters = static_cast<int>(std::llround(value)); break;
    }
    m.config.seed = base.config.seed + static_cast<std::uint64_t>(replicate);
    if (m.data.synthetic) m.data.synthetic->seed += static_cast<std::uint64_t>(replicate);
    return m;
}

inline int worker_count_from_env() {
    if (const char* w = std::getenv("DTN_WORKERS")) {
        int n = std::atoi(w);
        if (n > 0) return n;
    }
    return 1;
}

/// Runs every (value, replicate) point; failed points are recorded and skipped.
inline SweepResult run_sweep(const RunManifest& base, SweepParam param, std::span<const double> values, int replicates,
                             int workers = 1) {
    if (values.empty()) throw ArgumentError("sweep: empty value list");
    if (replicates < 1) throw ArgumentError("sweep: need at least one replicate");
    SweepResult result;
    result.param = param;
    for (double v : values)
        for (int r = 0; r < replicates; ++r) {
            SweepPoint p;
            p.value = v;
            p.replicate = r;
            p.manifest = sweep_point_manifest(base, param, v, r);
            result.points.push_back(std::move(p));
        }

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < result.points.size(); i = next++) {
            SweepPoint& p = result.points[i];
            try {
                p.manifest.config.validate();
                RunResult r = run_training(p.manifest);
                p.seconds = r.total_seconds;
                p.report = report_to_json(p.manifest, r);
                if (!r.ok())
                    p.error = *r.fit.report.failure;
                else
                    p.accuracy = r.final_accuracy;
            } catch (const std::exception& e) {
                p.error = e.what();
            }
        }
    };
    workers = std::max(1, std::min<int>(workers, static_cast<int>(result.points.size())));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    for (double v : values) {
        SweepRow row;
        row.value = v;
        std::vector<double> secs;
        for (const auto& p : result.points) {
            if (p.value != v) continue;
            secs.push_back(p.seconds);
            if (p.error || !p.accuracy)
                ++row.failures;
            else
                row.accuracies.push_back(*p.accuracy);
        }
        if (!row.accuracies.empty()) row.median_accuracy = median_of(row.accuracies);
        row.mean_seconds = mean_of(secs);
        result.rows.push_back(std::move(row));
    }
    return result;
}

inline json sweep_summary_to_json(const SweepResult& s) {
    json j;
    j["format_version"] = kReportFormatVersion;
    j["parameter"] = to_string(s.param);
    json rows = json::array();
    for (const auto& r : s.rows)
        rows.push_back({{"value", r.value},
                        {"median_accuracy", r.median_accuracy ? json(*r.median_accuracy) : json(nullptr)},
                        {"accuracies", r.accuracies},
                        {"failures", r.failures},
                        {"mean_seconds", r.mean_seconds}});
    j["series"] = std::move(rows);
    return j;
}

inline std::string format_value(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline int cmd_sweep(const fs::path& manifest_path, const std::string& param_name, std::span<const double> values,
                     int replicates = 1, const ConfigOverrides& overrides = {}, std::ostream& log = std::cerr) {
    try {
        SweepParam param = sweep_param_from_string(param_name);
        if (values.empty()) throw ArgumentError("sweep: empty value list");
        RunManifest base = load_manifest(manifest_path);
        overrides.apply(base.config);
        base.timestamp = utc_timestamp();
        SweepResult s = run_sweep(base, param, values, replicates, worker_count_from_env());
        fs::path dir = resolve(base, base.output_dir) / ("sweep-" + param_name);
        for (const auto& p : s.points) {
            if (p.report.is_null()) continue;
            write_json(dir / (param_name + "=" + format_value(p.value) + "_rep" + std::to_string(p.replicate) + ".json"),
                       p.report);
        }
        write_json(dir / "summary.json", sweep_summary_to_json(s));
        std::ofstream csv(dir / "summary.csv");
        csv << "value,median_accuracy,mean_seconds,failures\n";
        for (const auto& r : s.rows) {
            csv << format_value(r.value) << ',';
            if (r.median_accuracy) csv << *r.median_accuracy;
            csv << ',' << r.mean_seconds << ',' << r.failures << '\n';
        }
        for (const auto& p : s.points)
            if (p.error) log << "point " << param_name << "=" << p.value << " rep " << p.replicate << " failed: " << *p.error << '\n';
        for (const auto& r : s.rows) {
            log << param_name << "=" << r.value << ": median accuracy ";
            if (r.median_accuracy)
                log << *r.median_accuracy;
            else
                log << "n/a";
            log << '\n';
        }
        return kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitInputError;
    }
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty()) throw ArgumentError("linear_fit: need matching non-empty series");
    const double mx = mean_of(x), my = mean_of(y);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LinearFit f;
    f.slope = sxx > 0 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double e = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += e * e;
    }
    f.r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
    return f;
}

struct TimingRow {
    Index n = 0;
    double mean_seconds = 0.0;
    double stddev_seconds = 0.0;
    std::vector<double> epoch_seconds;
};

struct TimingResult {
    std::vector<TimingRow> rows;
    LinearFit fit;
};

/**
 * Mean wall time of one transfer epoch for each per-domain size n. Data come
 * from the base manifest's synthetic spec (the benchmark when absent) with
 * samples_per_class = ceil(n / classes); one untimed warm-up epoch precedes
 * the timed ones.
 */
inline TimingResult run_timing(std::span<const Index> sizes, const RunManifest& base, int epochs = 3) {
    if (sizes.empty()) throw ArgumentError("timing: empty size list");
    if (!std::is_sorted(sizes.begin(), sizes.end())) throw ArgumentError("timing: sizes must be ascending");
    if (epochs < 1) throw ArgumentError("timing: need at least one epoch");
    TimingResult out;
    for (Index n : sizes) {
        if (n < 1) throw ArgumentError("timing: sizes must be positive");
        SynthShiftSpec spec = base.data.synthetic.value_or(benchmark_synth_spec(base.config.seed));
        spec.samples_per_class = (n + spec.classes - 1) / spec.classes;
        auto [source, target] = gen_synth_shift(spec);
        Architecture specs = build_architecture(base, source);
        Rng rng(base.config.seed);
        NetworkParams params = init_params(specs, rng);
        const MatrixXd source_cols = source.features.transpose();
        const MatrixXd target_cols = target.features.transpose();
        const std::vector<int> pseudo = predict(params, specs, target.features);
        auto one_epoch = [&] {
            BatchPlan plan = build_plan(source.size(), target.size(), base.config.batch_size, rng());
            for (const auto& pb : plan.batches) {
                Batch b = gather_batch(source_cols, *source.labels, target_cols, pseudo, pb);
                sgd_step(params, specs, b, base.config);
            }
        };
        one_epoch();
        TimingRow row;
        row.n = n;
        for (int e = 0; e < epochs; ++e) {
            auto start = std::chrono::steady_clock::now();
            one_epoch();
            row.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        }
        row.mean_seconds = mean_of(row.epoch_seconds);
        row.stddev_seconds = stddev_of(row.epoch_seconds);
        out.rows.push_back(std::move(row));
    }
    std::vector<double> xs, ys;
    for (const auto& r : out.rows) {
        xs.push_back(static_cast<double>(r.n));
        ys.push_back(r.mean_seconds);
    }
    out.fit = linear_fit(xs, ys);
    return out;
}

inline json timing_to_json(const TimingResult& t) {
    json j;
    j["format_version"] = kReportFormatVersion;
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"n", r.n},
                        {"mean_seconds", r.mean_seconds},
                        {"stddev_seconds", r.stddev_seconds},
                        {"epoch_seconds", r.epoch_seconds}});
    j["series"] = std::move(rows);
    j["linear_fit"] = {{"slope", t.fit.slope}, {"intercept", t.fit.intercept}, {"r2", t.fit.r2}};
    return j;
}

/// Writes the (n, seconds-per-epoch) series as JSON to `out_path` and as CSV next to it.
inline int cmd_timing(std::span<const Index> sizes, const std::optional<fs::path>& manifest_path, const fs::path& out_path,
                      std::ostream& log = std::cerr) {
    try {
        RunManifest base = manifest_path ? load_manifest(*manifest_path) : benchmark_manifest();
        TimingResult t = run_timing(sizes, base);
        write_json(out_path, timing_to_json(t));
        fs::path csv_path = out_path;
        csv_path.replace_extension(".csv");
        std::ofstream csv(csv_path);
        csv << "n,mean_seconds,stddev_seconds\n";
        for (const auto& r : t.rows) {
            csv << r.n << ',' << r.mean_seconds << ',' << r.stddev_seconds << '\n';
            log << "n=" << r.n << ": " << r.mean_seconds << " s/epoch\n";
        }
        log << "linear fit r2 " << t.fit.r2 << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitInputError;
    }
}

/// Writes source.csv and target.csv (label in the last column) into `out_dir`.
inline int cmd_gen_synth(const SynthShiftSpec& spec, const fs::path& out_dir, std::ostream& log = std::cerr) {
    try {
        auto [source, target] = gen_synth_shift(spec);
        fs::create_directories(out_dir);
        save_delimited(source, out_dir / "source.csv");
        save_delimited(target, out_dir / "target.csv");
        write_json(out_dir / "synthetic.json", detail::synth_to_json(spec));
        log << "wrote " << source.size() << " source and " << target.size() << " target samples to "
            << out_dir.string() << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitInputError;
    }
}

/// Applies a saved model to a delimited feature file; one predicted label per output line.
inline int cmd_predict(const fs::path& model_path, const fs::path& features_path, bool has_labels, char delimiter,
                       const std::optional<fs::path>& out_path, std::ostream& out = std::cout,
                       std::ostream& log = std::cerr) {
    try {
        Model model = load_model(model_path);
        DomainDataset d = load_delimited(features_path, has_labels, delimiter, DomainRole::Target);
        std::vector<int> labels = predict(model.params, model.specs, d);
        std::ofstream file;
        if (out_path) {
            file.open(*out_path);
            if (!file) throw ParseError("cannot write '" + out_path->string() + "'");
        }
        std::ostream& dst = out_path ? static_cast<std::ostream&>(file) : out;
        for (int y : labels) dst << y << '\n';
        if (d.labels) log << "accuracy " << accuracy(labels, *d.labels) << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitInputError;
    }
}

}  // namespace dtn
