// clops: ingest traces, pre-train, adapt and evaluate forecasters.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.

#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "clops/cli.hpp"
#include "clops/kernels.hpp"

namespace cli = clops::cli;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& common, bool out_required = true) {
    cmd->add_option("--config", common.config_path, "TOML-style run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--override", common.overrides, "section.key=value, applied after the config file");
    cmd->add_option("--seed", common.seed, "Overrides the config seed");
    auto* out = cmd->add_option("--out", common.out, "Output path");
    if (out_required) out->required();
}

cli::RunConfig resolve(const Common& common) {
    auto kv = common.config_path.empty() ? cli::KeyValues{} : cli::KeyValues::load(common.config_path);
    for (const auto& o : common.overrides) kv.assign(o);
    if (common.seed) kv.set("seed", std::to_string(*common.seed));
    return cli::resolve(kv);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Activation buffers are tens of MB and freed every step; served by mmap
    // they are returned to the OS and page-faulted back in on each step.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    clops::kernels::configure_threads_from_env();

    CLI::App app{"Probabilistic workload forecasting for cluster traces"};
    app.require_subcommand(1);
    Common common;

    std::string trace, kind = "azure2017";
    auto* ingest = app.add_subcommand("ingest", "Parse, aggregate and clean a trace CSV into a store");
    add_common(ingest, common);
    ingest->add_option("--input", trace, "Trace CSV")->required()->check(CLI::ExistingFile);
    ingest->add_option("--kind", kind, "azure2017, borg2011, ali2018 or synthetic");

    std::string store, out_traintest;
    std::optional<double> frac;
    auto* split = app.add_subcommand("split", "Split a store into pre-train and train-test stores");
    add_common(split, common);
    split->add_option("--store", store, "Input store")->required()->check(CLI::ExistingFile);
    split->add_option("--frac", frac, "Train-test fraction (split.frac)");
    split->add_option("--out-traintest", out_traintest, "Train-test store; --out receives pre-train")->required();

    auto* synth = app.add_subcommand("synth", "Generate a synthetic collection");
    add_common(synth, common);

    auto* pre = app.add_subcommand("pretrain", "Pre-train a model; writes a checkpoint and a JSONL log");
    add_common(pre, common);

    std::string mode = "zero_shot", checkpoint;
    auto* adapt = app.add_subcommand("adapt", "Adapt a pre-trained model to the train-test region");
    add_common(adapt, common);
    adapt->add_option("--mode", mode, "zero_shot, finetune or scratch");
    adapt->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint");

    auto* evaluate = app.add_subcommand("evaluate", "Rolling evaluation; writes <out>.json and <out>.csv");
    add_common(evaluate, common);
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint path or 'naive'")->required();

    std::string axis;
    auto* ablate = app.add_subcommand("ablate", "Architecture, head, positional encoding or mask grid");
    add_common(ablate, common);
    ablate->add_option("--axis", axis, "architecture, head, pe or mask")->required();

    std::vector<std::string> sizes;
    std::vector<double> fracs;
    auto* scaling = app.add_subcommand("scaling", "Model size x data fraction grid");
    add_common(scaling, common);
    scaling->add_option("--sizes", sizes, "Model presets")->delimiter(',');
    scaling->add_option("--fracs", fracs, "Pre-train data fractions")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        auto config = resolve(common);
        nlohmann::json summary;
        if (*ingest) {
            summary = cli::cmd_ingest(config, trace, clops::trace_kind_from_string(kind), common.out);
        } else if (*split) {
            if (frac) {
                if (!(*frac > 0.0 && *frac < 1.0)) throw clops::ConfigError("--frac must lie in (0, 1)");
                config.split_frac = *frac;
            }
            summary = cli::cmd_split(config, store, common.out, out_traintest);
        } else if (*synth) {
            summary = cli::cmd_synth(config, common.out);
        } else if (*pre) {
            summary = cli::cmd_pretrain(config, common.out);
        } else if (*adapt) {
            summary = cli::cmd_adapt(config, cli::adapt_mode_from_string(mode), checkpoint, common.out);
        } else if (*evaluate) {
            const auto report = cli::cmd_evaluate(config, checkpoint, common.out);
            summary = {{"smape", report.smape}, {"crps", report.crps}, {"n_series", report.n_series},
                       {"n_windows", report.n_windows}, {"config_hash", config.hash()}};
            if (report.crps_sum) summary["crps_sum"] = *report.crps_sum;
        } else if (*ablate) {
            summary = nlohmann::json::array();
            for (const auto& r : cli::cmd_ablate(config, axis, common.out))
                summary.push_back({{"setting", r.setting}, {"val_loss", r.val_loss}, {"smape", r.smape}, {"crps", r.crps}});
        } else if (*scaling) {
            if (!sizes.empty()) config.scaling.sizes = sizes;
            if (!fracs.empty()) config.scaling.fracs = fracs;
            for (const auto& s : config.scaling.sizes) clops::model_preset(s);
            for (double f : config.scaling.fracs)
                if (!(f > 0.0 && f <= 1.0)) throw clops::ConfigError("--fracs must lie in (0, 1]");
            summary = nlohmann::json::array();
            for (const auto& r : cli::cmd_scaling(config, common.out))
                summary.push_back({{"size", r.size}, {"data_frac", r.data_frac}, {"val_loss_median", r.val_loss_median}});
        }
        std::cout << summary.dump(2) << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "clops: invalid configuration: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "clops: " << e.what() << "\n";
        return 1;
    }
}
