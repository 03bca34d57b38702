#pragma once

// Run configuration and the command implementations behind tools/clops. The
// commands live in the library so tests can drive them without a subprocess.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "clops/evaluation.hpp"
#include "clops/model.hpp"
#include "clops/trace.hpp"
#include "clops/training.hpp"
#include "json.hpp"

namespace clops::cli {

/// Flat "section.key" -> raw value text, read from a TOML-style file:
/// `[section]` headers, `key = value` lines, `#` comments, quoted strings and
/// one-line `[a, b]` arrays.
class KeyValues {
public:
    static KeyValues parse(std::istream& in, const std::string& origin = "<config>");
    static KeyValues load(const std::string& path);

    /// Applies one "key=value" override.
    void assign(const std::string& assignment);
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

struct DataSection {
    std::string pretrain;   // store paths; both empty means "derive from store or synth"
    std::string traintest;
    std::string store;      // single store to split with split.frac
    double missing_thresh = -1.0;  // ingest; negative keeps the schema default
    std::size_t min_length = kMinSeriesLength;
};

struct SynthSection {
    std::size_t n_series = 1100;
    std::size_t length = 1200;
    SyntheticParams params;
};

struct ScalingSection {
    std::vector<std::string> sizes{"tiny", "small"};
    std::vector<double> fracs{0.1, 1.0};
    std::size_t seeds = 3;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string precision = "float";  // float | double
    std::string preset = "tiny";
    ModelConfig model;
    TrainConfig train;
    EvalPlan eval;
    DataSection data;
    SynthSection synth;
    double split_frac = 0.1;
    std::vector<double> lr_grid = default_lr_grid();
    ScalingSection scaling;

    nlohmann::json to_json() const;
    /// 16 hex digits of FNV-1a over the canonical JSON.
    std::string hash() const;
};

/// Resolves defaults, the model preset and every known key. Unknown keys and
/// malformed values throw ConfigError.
RunConfig resolve(const KeyValues& kv);

/// Copies data dimensions (d_y, static, past dynamic) into the model config.
ModelConfig fit_to_data(ModelConfig model, const Collection& collection);

struct Datasets {
    Collection pretrain;
    Collection traintest;
};

/// From the two configured stores, or by splitting data.store, or by
/// splitting a synthetic collection.
Datasets load_datasets(const RunConfig& config);

/// Train-test series with the test region (horizon x windows) removed.
Collection train_region(const Collection& traintest, const EvalPlan& plan);

nlohmann::json cmd_ingest(const RunConfig& config, const std::string& csv_path, TraceKind kind,
                          const std::string& out_store);
nlohmann::json cmd_split(const RunConfig& config, const std::string& store, const std::string& out_pretrain,
                         const std::string& out_traintest);
nlohmann::json cmd_synth(const RunConfig& config, const std::string& out_store);
nlohmann::json cmd_pretrain(const RunConfig& config, const std::string& out_checkpoint);

enum class AdaptMode { zero_shot, finetune, scratch };
AdaptMode adapt_mode_from_string(const std::string& name);
std::string to_string(AdaptMode mode);

/// `checkpoint` may be empty for scratch, which then takes the architecture from the config.
nlohmann::json cmd_adapt(const RunConfig& config, AdaptMode mode, const std::string& checkpoint,
                         const std::string& out_checkpoint);

/// `checkpoint` == "naive" selects the baseline. Writes <out>.json and <out>.csv.
MetricsReport cmd_evaluate(const RunConfig& config, const std::string& checkpoint, const std::string& out_prefix);

struct AblationRow {
    std::string axis, setting;
    std::size_t parameters = 0;
    double val_loss = 0.0;
    double smape = 0.0;
    double crps = 0.0;
    std::string config_hash;
};

/// Axes: architecture, head, pe, mask. Each setting is pre-trained on the
/// pre-train split and scored zero-shot on the train-test split.
std::vector<std::string> ablation_settings(const std::string& axis);
std::vector<AblationRow> cmd_ablate(const RunConfig& config, const std::string& axis, const std::string& out_csv);

struct ScalingRow {
    std::string size;
    std::size_t parameters = 0;
    double data_frac = 0.0;
    std::size_t series = 0;
    std::size_t observations = 0;
    std::vector<double> val_losses;  // one per seed
    double val_loss_median = 0.0;
    double val_loss_mean = 0.0;
    double smape_median = 0.0;
    double crps_median = 0.0;
    std::string config_hash;
};

std::vector<ScalingRow> cmd_scaling(const RunConfig& config, const std::string& out_csv);

/// Writes `text` to path + ".tmp" and renames.
void write_atomic(const std::string& path, const std::string& text);

}  // namespace clops::cli
