#pragma once

// Cluster-trace ETL: row-format CSV traces to cleaned, 5-minute aligned
// series, leakage-free splits, a compressed on-disk store, and a synthetic
// generator for desk-scale experiments.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace clops {

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline constexpr std::int64_t kStepSeconds = 300;

enum class TraceKind { azure2017, borg2011, ali2018, synthetic };

std::string to_string(TraceKind kind);
TraceKind trace_kind_from_string(const std::string& name);

/// Seconds since 1970-01-01 00:00:00 for "YYYY-MM-DD HH:MM:SS" (UTC, no zone).
std::int64_t parse_datetime(const std::string& text);
std::string format_datetime(std::int64_t epoch_seconds);

struct TraceSchema {
    TraceKind kind = TraceKind::azure2017;
    std::vector<std::string> entity_columns;  // joined with '/' into the entity id
    std::string attr_column;
    std::string timestamp_column;
    double timestamp_scale = 1.0;  // raw units per second
    std::vector<std::string> targets;
    std::vector<std::string> past_dynamic;
    std::int64_t reference = 0;  // epoch seconds of raw timestamp 0
    double missing_thresh = 0.01;
    bool bin_average = false;  // irregular samples averaged per 5-minute bin
};

/// Column layout and cleaning defaults per trace kind. CSV input carries a
/// header row naming at least these columns.
TraceSchema default_schema(TraceKind kind);

struct TraceRow {
    std::string entity_id;
    std::string attr;
    std::int64_t timestamp = 0;  // seconds relative to the schema reference
    std::vector<std::optional<double>> metrics;  // targets then past dynamic, schema order
};

struct ParseReport {
    std::size_t rows = 0;
    std::size_t skipped = 0;
};

/// Reads CSV with a header row. Unparseable rows are counted and skipped;
/// an empty metric field becomes a null. Missing mandatory columns throw
/// SchemaError.
std::vector<TraceRow> parse_trace(std::istream& csv, const TraceSchema& schema, ParseReport& report);

struct TimeSeriesRecord {
    std::string series_id;
    std::string attr;
    std::int64_t start = 0;  // epoch seconds of the first step
    std::int64_t freq = kStepSeconds;
    std::size_t length = 0;
    std::size_t d_y = 0;
    std::size_t d_pd = 0;
    std::vector<float> targets;       // d_y x length, row-major; NaN marks a null before cleaning
    std::vector<float> past_dynamic;  // d_pd x length
    std::vector<float> static_real;
    std::vector<std::uint8_t> missing;  // d_y x length

    float target(std::size_t dim, std::size_t t) const { return targets[dim * length + t]; }
    std::int64_t end() const { return start + static_cast<std::int64_t>(length - 1) * freq; }
    bool operator==(const TimeSeriesRecord&) const = default;
};

struct Collection {
    TraceKind kind = TraceKind::synthetic;
    std::int64_t freq = kStepSeconds;
    std::vector<TimeSeriesRecord> series;
    bool operator==(const Collection&) const = default;
};

/// Groups rows per entity, drops duplicate bins (keeping the first row, or
/// averaging for bin-averaged schemas) and fills gaps with nulls. Output is
/// sorted by series_id.
Collection aggregate_series(const std::vector<TraceRow>& rows, const TraceSchema& schema);

struct CleanReport {
    std::size_t kept = 0;
    std::size_t too_short = 0;
    std::size_t too_missing = 0;
    std::size_t constant = 0;
};

inline constexpr std::size_t kMinSeriesLength = 672;

/// Drops short, sparse and constant series, then imputes remaining nulls by
/// carrying the previous value forward (leading nulls take the first
/// observed value). Throws DataError when nothing survives.
Collection clean_series(const Collection& in, double missing_thresh, CleanReport& report,
                        std::size_t min_len = kMinSeriesLength);

struct SplitPlan {
    std::set<std::string> pretrain_attrs;
    std::set<std::string> traintest_attrs;
    std::int64_t end_timestamp = 0;
    std::uint64_t seed = 0;
};

/// Picks n = round(n_valid_attrs * frac * n_series / n_valid_series) attributes
/// for the train-test side, where "valid" means ending at the final timestamp
/// of the collection.
SplitPlan make_split(const Collection& collection, double frac, std::uint64_t seed);

struct SplitResult {
    Collection pretrain;
    Collection traintest;
    std::int64_t test_start = 0;  // first timestamp of the test region
};

/// Train-test keeps end-aligned series of the chosen attributes; pre-train
/// keeps the rest with the test region (last horizon * windows steps) cut off.
SplitResult apply_split(const Collection& collection, const SplitPlan& plan, std::size_t horizon,
                        std::size_t windows);

/// gzip JSON Lines: a "CTS1" header, then one record per line with base64
/// little-endian float32 arrays. Writes path + ".tmp" and renames. `meta`, when
/// given, is stored in the header and ignored on import.
void export_store(const Collection& collection, const std::string& path, const nlohmann::json& meta = {});
Collection import_store(const std::string& path);

struct SyntheticParams {
    double daily_amplitude = 1.0;   // scale of the 288-step sinusoid
    double hourly_amplitude = 0.5;  // scale of the 12-step sinusoid
    double ar_coef = 0.5;
    double noise_std = 0.2;
    double level_min = 4.0;
    double level_max = 8.0;
    std::size_t series_per_attr = 10;
    std::int64_t start = 1609459200;  // 2021-01-01 00:00:00
};

/// Daily + hourly sinusoids with per-series amplitude, phase and level plus
/// AR(1) noise. Deterministic in the seed; series i depends only on (seed, i).
Collection gen_synthetic(std::size_t n_series, std::size_t length, std::uint64_t seed,
                         const SyntheticParams& params = {});

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace clops
