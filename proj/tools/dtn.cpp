// dtn: command-line driver for transfer training runs.
//
//   dtn train     <manifest> [config flags]
//   dtn sweep     <manifest> --param lambda_mu|batch_size|iters --values v1,v2,... [--seeds k] [config flags]
//   dtn timing    --sizes 1000,2000,4000,8000 [--manifest m] [--out timing.json]
//   dtn gen-synth --out-dir dir [spec flags | --manifest m]
//   dtn predict   --model model.json --features file.csv [--has-labels] [--out labels.txt]
//
// Exit status: 0 success, 2 input error, 3 numerical failure.
// DTN_WORKERS sets the number of sweep points run in parallel.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtn/run.hpp"

namespace {

void add_config_flags(CLI::App& cmd, dtn::ConfigOverrides& o, std::optional<std::string>& target_nll) {
    cmd.add_option("--lambda", o.lambda, "marginal MMD weight");
    cmd.add_option("--mu", o.mu, "conditional MMD weight");
    cmd.add_option("--batch-size", o.batch_size, "paired batch size S (even)");
    cmd.add_option("--label-iters", o.label_iters, "maximum pseudo-label refinements T");
    cmd.add_option("--lr", o.learning_rate, "SGD learning rate");
    cmd.add_option("--epochs", o.epochs, "epochs per label iteration");
    cmd.add_option("--baseline-epochs", o.baseline_epochs, "epochs of the source-only baseline");
    cmd.add_option("--seed", o.seed, "training seed");
    cmd.add_option("--target-nll", target_nll, "include pseudo-labelled targets in the likelihood")
        ->check(CLI::IsMember({"on", "off"}));
}

void finish_overrides(dtn::ConfigOverrides& o, const std::optional<std::string>& target_nll) {
    if (target_nll) o.target_nll = *target_nll == "on";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep transfer network training and evaluation"};
    app.require_subcommand(1);

    dtn::ConfigOverrides train_overrides;
    std::optional<std::string> train_target_nll;
    std::string train_manifest;
    auto* train = app.add_subcommand("train", "run one manifest and write its report");
    train->add_option("manifest", train_manifest, "run manifest (JSON)")->required();
    add_config_flags(*train, train_overrides, train_target_nll);

    dtn::ConfigOverrides sweep_overrides;
    std::optional<std::string> sweep_target_nll;
    std::string sweep_manifest, sweep_param;
    std::vector<double> sweep_values;
    int sweep_seeds = 1;
    auto* sweep = app.add_subcommand("sweep", "vary one parameter and summarize accuracy");
    sweep->add_option("manifest", sweep_manifest, "base run manifest (JSON)")->required();
    sweep->add_option("--param", sweep_param, "lambda_mu, batch_size or iters")->required();
    sweep->add_option("--values", sweep_values, "comma-separated values")->delimiter(',');
    sweep->add_option("--seeds", sweep_seeds, "replicates per value")->check(CLI::PositiveNumber);
    add_config_flags(*sweep, sweep_overrides, sweep_target_nll);

    std::vector<dtn::Index> timing_sizes;
    std::optional<std::string> timing_manifest;
    std::string timing_out = "timing.json";
    auto* timing = app.add_subcommand("timing", "seconds per epoch as a function of dataset size");
    timing->add_option("--sizes", timing_sizes, "comma-separated per-domain sizes, ascending")
        ->delimiter(',')
        ->required();
    timing->add_option("--manifest", timing_manifest, "base manifest (defaults to the synthetic benchmark)");
    timing->add_option("--out", timing_out, "output JSON path (a CSV is written alongside)");

    dtn::SynthShiftSpec synth = dtn::benchmark_synth_spec();
    std::string synth_out;
    std::optional<std::string> synth_manifest;
    auto* gen = app.add_subcommand("gen-synth", "write a synthetic source/target pair as CSV");
    gen->add_option("--out-dir", synth_out, "output directory")->required();
    gen->add_option("--manifest", synth_manifest, "take the synthetic spec from this manifest");
    gen->add_option("--classes", synth.classes);
    gen->add_option("--dim", synth.dim);
    gen->add_option("--samples-per-class", synth.samples_per_class);
    gen->add_option("--rotation", synth.rotation, "radians");
    gen->add_option("--translation", synth.translation)->delimiter(',');
    gen->add_option("--noise-ratio", synth.noise_ratio);
    gen->add_option("--radius", synth.radius);
    gen->add_option("--noise", synth.noise);
    gen->add_option("--seed", synth.seed);

    std::string model_path, features_path;
    std::optional<std::string> predict_out;
    bool has_labels = false;
    char delimiter = ',';
    auto* pred = app.add_subcommand("predict", "label a feature file with a saved model");
    pred->add_option("--model", model_path)->required();
    pred->add_option("--features", features_path)->required();
    pred->add_flag("--has-labels", has_labels, "last column holds labels; report accuracy");
    pred->add_option("--delimiter", delimiter);
    pred->add_option("--out", predict_out, "write labels here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : dtn::kExitInputError;
    }

    if (*train) {
        finish_overrides(train_overrides, train_target_nll);
        return dtn::cmd_train(train_manifest, train_overrides);
    }
    if (*sweep) {
        finish_overrides(sweep_overrides, sweep_target_nll);
        return dtn::cmd_sweep(sweep_manifest, sweep_param, sweep_values, sweep_seeds, sweep_overrides);
    }
    if (*timing) {
        std::optional<std::filesystem::path> m;
        if (timing_manifest) m = *timing_manifest;
        return dtn::cmd_timing(timing_sizes, m, timing_out);
    }
    if (*gen) {
        if (synth_manifest) {
            try {
                auto m = dtn::load_manifest(*synth_manifest);
                if (!m.data.synthetic) throw dtn::ParseError("manifest has no synthetic data spec");
                synth = *m.data.synthetic;
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << '\n';
                return dtn::kExitInputError;
            }
        }
        return dtn::cmd_gen_synth(synth, synth_out);
    }
    if (*pred) {
        std::optional<std::filesystem::path> out;
        if (predict_out) out = *predict_out;
        return dtn::cmd_predict(model_path, features_path, has_labels, delimiter, out);
    }
    return dtn::kExitInputError;
}
