#include "clops/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "clops/rng.hpp"

namespace clops::cli {

namespace {

std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(a, b - a + 1));
}

std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
        return v.substr(1, v.size() - 2);
    return v;
}

std::vector<std::string> split_list(const std::string& key, const std::string& raw) {
    std::string v = trim(raw);
    // Bare comma lists are accepted too, which keeps --override tidy.
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') throw ConfigError("config key '" + key + "': unterminated array");
        v = v.substr(1, v.size() - 2);
    }
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = unquote(trim(item));
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::string hash_json(const nlohmann::json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename F>
decltype(auto) with_precision(const RunConfig& c, F&& f) {
    if (c.precision == "double") return f(double{});
    return f(float{});
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(10);
    o << v;
    return o.str();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_nonempty(const Collection& c, const char* what) {
    if (c.series.empty()) throw DataError(std::string("no ") + what + " series available");
}

nlohmann::json provenance(const RunConfig& c, const std::string& command) {
    return {{"command", command}, {"config_hash", c.hash()}, {"config", c.to_json()}};
}

/// Random subset of round(frac * n) series (at least one), in collection order.
Collection subsample(const Collection& c, double frac, std::uint64_t seed) {
    const std::size_t n = c.series.size();
    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))),
                                                  1, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    CounterRng rng(seed, 0x5ca1e);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng() % (n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    Collection out;
    out.kind = c.kind;
    out.freq = c.freq;
    for (std::size_t i : idx) out.series.push_back(c.series[i]);
    return out;
}

std::size_t observations(const Collection& c) {
    std::size_t n = 0;
    for (const auto& s : c.series) n += s.length * s.d_y;
    return n;
}

}  // namespace

// ------------------------------------------------------------------ key/values

KeyValues KeyValues::parse(std::istream& in, const std::string& origin) {
    KeyValues kv;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string text = trim(strip_comment(line));
        if (text.empty()) continue;
        const auto where = origin + ":" + std::to_string(lineno);
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(std::string_view(text).substr(1, text.size() - 2));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(std::string_view(text).substr(0, eq));
        const std::string value = unquote(trim(std::string_view(text).substr(eq + 1)));
        if (key.empty()) throw ConfigError(where + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (kv.values_.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
        kv.values_[full] = value;
    }
    return kv;
}

KeyValues KeyValues::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    return parse(in, path);
}

void KeyValues::assign(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    values_[trim(std::string_view(assignment).substr(0, eq))] = unquote(trim(std::string_view(assignment).substr(eq + 1)));
}

// ------------------------------------------------------------------ run config

nlohmann::json RunConfig::to_json() const {
    return {
        {"seed", seed},
        {"precision", precision},
        {"preset", preset},
        {"model", model.to_json()},
        {"train", train.to_json()},
        {"eval",
         {{"horizon", eval.horizon},
          {"stride", eval.stride},
          {"windows", eval.windows},
          {"levels", eval.levels},
          {"n_samples", eval.n_samples},
          {"batch", eval.batch}}},
        {"data",
         {{"pretrain", data.pretrain},
          {"traintest", data.traintest},
          {"store", data.store},
          {"missing_thresh", data.missing_thresh},
          {"min_length", data.min_length}}},
        {"synth",
         {{"n_series", synth.n_series},
          {"length", synth.length},
          {"daily_amplitude", synth.params.daily_amplitude},
          {"hourly_amplitude", synth.params.hourly_amplitude},
          {"ar_coef", synth.params.ar_coef},
          {"noise_std", synth.params.noise_std},
          {"level_min", synth.params.level_min},
          {"level_max", synth.params.level_max},
          {"series_per_attr", synth.params.series_per_attr}}},
        {"split", {{"frac", split_frac}}},
        {"adapt", {{"lr_grid", lr_grid}}},
        {"scaling", {{"sizes", scaling.sizes}, {"fracs", scaling.fracs}, {"seeds", scaling.seeds}}},
    };
}

std::string RunConfig::hash() const { return hash_json(to_json()); }

RunConfig resolve(const KeyValues& kv) {
    const auto& m = kv.values();
    std::set<std::string> used;
    auto get = [&](const std::string& key) -> const std::string* {
        const auto it = m.find(key);
        if (it == m.end()) return nullptr;
        used.insert(key);
        return &it->second;
    };
    auto size = [&](const std::string& key, std::size_t& dst) {
        if (auto v = get(key)) dst = parse_number<std::size_t>(key, *v);
    };
    auto real = [&](const std::string& key, double& dst) {
        if (auto v = get(key)) dst = parse_number<double>(key, *v);
    };
    auto str = [&](const std::string& key, std::string& dst) {
        if (auto v = get(key)) dst = *v;
    };
    auto reals = [&](const std::string& key, std::vector<double>& dst) {
        if (auto v = get(key)) {
            dst.clear();
            for (const auto& item : split_list(key, *v)) dst.push_back(parse_number<double>(key, item));
        }
    };

    RunConfig c;
    try {
        if (auto v = get("seed")) c.seed = parse_number<std::uint64_t>("seed", *v);
        str("precision", c.precision);
        if (c.precision != "float" && c.precision != "double")
            throw ConfigError("precision must be float or double, got '" + c.precision + "'");

        str("model.preset", c.preset);
        c.model = model_preset(c.preset);
        if (auto v = get("model.variant")) c.model.variant = variant_from_string(*v);
        size("model.layers", c.model.layers);
        size("model.d_model", c.model.d_model);
        size("model.d_ff", c.model.d_ff);
        size("model.n_heads", c.model.n_heads);
        size("model.d_kv", c.model.d_kv);
        if (auto v = get("model.pe")) c.model.pe = pe_from_string(*v);
        if (auto v = get("model.use_datetime")) c.model.use_datetime = parse_bool("model.use_datetime", *v);
        if (auto v = get("model.attn_mask")) c.model.attn_mask = mask_from_string(*v);
        if (auto v = get("model.head")) c.model.head = head_kind_from_string(*v);
        size("model.context_length", c.model.context_length);
        size("model.horizon", c.model.horizon);
        if (auto v = get("model.lags")) {
            c.model.lags.clear();
            for (const auto& item : split_list("model.lags", *v))
                c.model.lags.push_back(parse_number<std::size_t>("model.lags", item));
        }
        c.model.validate();

        c.train.seed = c.seed;
        size("train.iterations", c.train.iterations);
        size("train.batch_size", c.train.batch_size);
        real("train.peak_lr", c.train.peak_lr);
        size("train.warmup_steps", c.train.warmup_steps);
        real("train.weight_decay", c.train.weight_decay);
        real("train.clip_norm", c.train.clip_norm);
        size("train.eval_every", c.train.eval_every);
        size("train.val_series", c.train.val_series);
        size("train.prefetch", c.train.prefetch);
        size("train.max_bad_steps", c.train.max_bad_steps);
        str("train.checkpoint_dir", c.train.checkpoint_dir);
        c.train.validate();

        c.eval.horizon = c.model.horizon;
        c.eval.stride = c.model.horizon;
        c.eval.seed = c.seed;
        size("eval.stride", c.eval.stride);
        size("eval.windows", c.eval.windows);
        size("eval.n_samples", c.eval.n_samples);
        size("eval.batch", c.eval.batch);
        reals("eval.levels", c.eval.levels);
        if (c.eval.stride == 0 || c.eval.windows == 0 || c.eval.batch == 0)
            throw ConfigError("eval stride, windows and batch must be positive");
        if (c.eval.levels.empty()) throw ConfigError("eval.levels is empty");
        for (std::size_t k = 0; k < c.eval.levels.size(); ++k) {
            const double a = c.eval.levels[k];
            if (!(a > 0.0 && a < 1.0) || (k > 0 && a <= c.eval.levels[k - 1]))
                throw ConfigError("eval.levels must be increasing and inside (0, 1)");
        }
        if (c.eval.n_samples < c.eval.levels.size())
            throw ConfigError("eval.n_samples must be at least the number of levels");

        str("data.pretrain", c.data.pretrain);
        str("data.traintest", c.data.traintest);
        str("data.store", c.data.store);
        real("data.missing_thresh", c.data.missing_thresh);
        size("data.min_length", c.data.min_length);

        size("synth.n_series", c.synth.n_series);
        size("synth.length", c.synth.length);
        real("synth.daily_amplitude", c.synth.params.daily_amplitude);
        real("synth.hourly_amplitude", c.synth.params.hourly_amplitude);
        real("synth.ar_coef", c.synth.params.ar_coef);
        real("synth.noise_std", c.synth.params.noise_std);
        real("synth.level_min", c.synth.params.level_min);
        real("synth.level_max", c.synth.params.level_max);
        size("synth.series_per_attr", c.synth.params.series_per_attr);
        if (c.synth.n_series == 0 || c.synth.params.series_per_attr == 0)
            throw ConfigError("synth.n_series and synth.series_per_attr must be positive");

        real("split.frac", c.split_frac);
        if (!(c.split_frac > 0.0 && c.split_frac < 1.0)) throw ConfigError("split.frac must lie in (0, 1)");

        reals("adapt.lr_grid", c.lr_grid);
        if (c.lr_grid.empty()) throw ConfigError("adapt.lr_grid is empty");

        if (auto v = get("scaling.sizes")) c.scaling.sizes = split_list("scaling.sizes", *v);
        reals("scaling.fracs", c.scaling.fracs);
        size("scaling.seeds", c.scaling.seeds);
        for (const auto& s : c.scaling.sizes) model_preset(s);
        for (double f : c.scaling.fracs)
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError("scaling.fracs must lie in (0, 1]");
        if (c.scaling.seeds == 0) throw ConfigError("scaling.seeds must be positive");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    for (const auto& [key, value] : m)
        if (!used.count(key)) throw ConfigError("unknown config key '" + key + "'");
    return c;
}

ModelConfig fit_to_data(ModelConfig model, const Collection& collection) {
    require_nonempty(collection, "input");
    const auto& s = collection.series.front();
    model.d_y = s.d_y;
    model.n_past_dynamic = s.d_pd;
    model.n_static = s.static_real.size();
    for (const auto& t : collection.series)
        if (t.d_y != s.d_y || t.d_pd != s.d_pd || t.static_real.size() != s.static_real.size())
            throw DataError("series '" + t.series_id + "' has different dimensions from '" + s.series_id + "'");
    model.validate();
    return model;
}

Datasets load_datasets(const RunConfig& c) {
    Datasets d;
    if (!c.data.pretrain.empty() || !c.data.traintest.empty()) {
        if (!c.data.pretrain.empty()) d.pretrain = import_store(c.data.pretrain);
        if (!c.data.traintest.empty()) d.traintest = import_store(c.data.traintest);
        return d;
    }
    const Collection base = c.data.store.empty() ? gen_synthetic(c.synth.n_series, c.synth.length, c.seed, c.synth.params)
                                                 : import_store(c.data.store);
    auto split = apply_split(base, make_split(base, c.split_frac, c.seed), c.eval.horizon, c.eval.windows);
    d.pretrain = std::move(split.pretrain);
    d.traintest = std::move(split.traintest);
    return d;
}

Collection train_region(const Collection& traintest, const EvalPlan& plan) {
    return drop_tail(traintest, plan.horizon * plan.windows);
}

void write_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out << text;
        if (!out.flush()) throw std::runtime_error("failed writing '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

// ------------------------------------------------------------------ data commands

nlohmann::json cmd_ingest(const RunConfig& c, const std::string& csv_path, TraceKind kind, const std::string& out) {
    auto schema = default_schema(kind);
    if (c.data.missing_thresh >= 0.0) schema.missing_thresh = c.data.missing_thresh;
    std::ifstream in(csv_path);
    if (!in) throw DataError("cannot read trace '" + csv_path + "'");
    ParseReport pr;
    const auto rows = parse_trace(in, schema, pr);
    const auto raw = aggregate_series(rows, schema);
    CleanReport cr;
    const auto cleaned = clean_series(raw, schema.missing_thresh, cr, c.data.min_length);
    export_store(cleaned, out, provenance(c, "ingest"));
    return {{"rows", pr.rows},
            {"skipped_rows", pr.skipped},
            {"series_in", raw.series.size()},
            {"kept", cr.kept},
            {"rejected", {{"too_short", cr.too_short}, {"too_missing", cr.too_missing}, {"constant", cr.constant}}},
            {"store", out},
            {"config_hash", c.hash()}};
}

nlohmann::json cmd_split(const RunConfig& c, const std::string& store, const std::string& out_pretrain,
                         const std::string& out_traintest) {
    const auto base = import_store(store);
    const auto plan = make_split(base, c.split_frac, c.seed);
    const auto r = apply_split(base, plan, c.eval.horizon, c.eval.windows);

    // Leakage checks: disjoint attributes, nothing pre-train reaches the test
    // region, every train-test series ends on the final timestamp.
    for (const auto& s : r.pretrain.series) {
        if (plan.traintest_attrs.count(s.attr))
            throw DataError("leakage: pre-train series '" + s.series_id + "' has a train-test attribute");
        if (s.end() >= r.test_start) throw DataError("leakage: pre-train series '" + s.series_id + "' overlaps the test region");
    }
    for (const auto& s : r.traintest.series)
        if (s.end() != plan.end_timestamp || !plan.traintest_attrs.count(s.attr))
            throw DataError("train-test series '" + s.series_id + "' is not end-aligned");

    const auto meta = provenance(c, "split");
    export_store(r.pretrain, out_pretrain, meta);
    export_store(r.traintest, out_traintest, meta);
    return {{"pretrain_series", r.pretrain.series.size()},
            {"traintest_series", r.traintest.series.size()},
            {"pretrain_attrs", plan.pretrain_attrs.size()},
            {"traintest_attrs", plan.traintest_attrs.size()},
            {"test_start", format_datetime(r.test_start)},
            {"config_hash", c.hash()}};
}

nlohmann::json cmd_synth(const RunConfig& c, const std::string& out) {
    const auto coll = gen_synthetic(c.synth.n_series, c.synth.length, c.seed, c.synth.params);
    export_store(coll, out, provenance(c, "synth"));
    return {{"series", coll.series.size()}, {"length", c.synth.length}, {"store", out}, {"config_hash", c.hash()}};
}

// ------------------------------------------------------------------ model commands

nlohmann::json cmd_pretrain(const RunConfig& c, const std::string& out) {
    const auto data = load_datasets(c);
    require_nonempty(data.pretrain, "pre-train");
    const ModelConfig mc = fit_to_data(c.model, data.pretrain);
    const std::string log_path = out + ".log.jsonl";
    TrainConfig tc = c.train;
    tc.log_path = log_path + ".run.tmp";

    return with_precision(c, [&](auto tag) {
        using Real = decltype(tag);
        Model<Real> model(mc, c.seed);
        const auto result = pretrain(model, data.pretrain, tc);

        auto meta = provenance(c, "pretrain");
        meta["steps"] = result.losses.size();
        write_checkpoint(make_checkpoint(model, static_cast<const AdamW<Real>*>(nullptr), meta), out);

        const auto body = read_file(tc.log_path);
        write_atomic(log_path, nlohmann::json{{"config_hash", c.hash()}, {"config", c.to_json()}}.dump() + "\n" + body);
        std::filesystem::remove(tc.log_path);

        nlohmann::json vals = nlohmann::json::array();
        for (const auto& [step, loss] : result.val_losses) vals.push_back({step, loss});
        return nlohmann::json{{"checkpoint", out},
                              {"log", log_path},
                              {"parameters", model.parameter_count()},
                              {"steps", result.losses.size()},
                              {"skipped_steps", result.skipped_steps},
                              {"val_losses", vals},
                              {"config_hash", c.hash()}};
    });
}

AdaptMode adapt_mode_from_string(const std::string& name) {
    if (name == "zero_shot") return AdaptMode::zero_shot;
    if (name == "finetune") return AdaptMode::finetune;
    if (name == "scratch") return AdaptMode::scratch;
    throw ConfigError("unknown adapt mode '" + name + "' (zero_shot, finetune, scratch)");
}

std::string to_string(AdaptMode mode) {
    switch (mode) {
        case AdaptMode::zero_shot: return "zero_shot";
        case AdaptMode::finetune: return "finetune";
        case AdaptMode::scratch: return "scratch";
    }
    return "unknown";
}

nlohmann::json cmd_adapt(const RunConfig& c, AdaptMode mode, const std::string& checkpoint, const std::string& out) {
    if (checkpoint.empty() && mode != AdaptMode::scratch)
        throw ConfigError(to_string(mode) + " needs a pre-trained checkpoint");
    const auto data = load_datasets(c);
    require_nonempty(data.traintest, "train-test");
    const auto region = train_region(data.traintest, c.eval);
    require_nonempty(region, "train-region");

    return with_precision(c, [&](auto tag) {
        using Real = decltype(tag);
        std::unique_ptr<Model<Real>> model;
        if (!checkpoint.empty()) model = model_from_checkpoint<Real>(read_checkpoint(checkpoint));
        auto meta = provenance(c, "adapt");
        meta["mode"] = to_string(mode);
        meta["source"] = checkpoint;
        nlohmann::json info = {{"mode", to_string(mode)}, {"checkpoint", out}, {"config_hash", c.hash()}};

        switch (mode) {
            case AdaptMode::zero_shot: zero_shot(*model, region); break;
            case AdaptMode::finetune: {
                const auto fr = finetune(*model, region, c.lr_grid, c.train);
                nlohmann::json runs = nlohmann::json::array();
                for (const auto& r : fr.runs)
                    runs.push_back({{"lr", r.lr},
                                    {"val_loss", std::isfinite(r.val_loss) ? nlohmann::json(r.val_loss) : nlohmann::json()},
                                    {"diverged", r.diverged}});
                info["runs"] = runs;
                info["base_val_loss"] = fr.base_val_loss;
                info["best_lr"] = fr.best_lr ? nlohmann::json(*fr.best_lr) : nlohmann::json();
                info["fell_back"] = fr.fell_back;
                meta["finetune"] = info;
                break;
            }
            case AdaptMode::scratch: {
                const ModelConfig mc = model ? model->config() : fit_to_data(c.model, region);
                model = train_from_scratch<Real>(mc, region, c.train, c.seed);
                break;
            }
        }
        info["parameters"] = model->parameter_count();
        write_checkpoint(make_checkpoint(*model, static_cast<const AdamW<Real>*>(nullptr), meta), out);
        return info;
    });
}

namespace {

template <typename Real>
MetricsReport evaluate_model(Model<Real>& model, const Collection& traintest, const EvalPlan& plan,
                             const std::string& fingerprint) {
    if (model.config().horizon != plan.horizon)
        throw ConfigError("checkpoint horizon " + std::to_string(model.config().horizon) +
                          " does not match the evaluation horizon " + std::to_string(plan.horizon));
    zero_shot(model, traintest);
    return rolling_evaluate(model_forecaster(model), traintest, model.config().context_length, plan, fingerprint);
}

}  // namespace

MetricsReport cmd_evaluate(const RunConfig& c, const std::string& checkpoint, const std::string& out_prefix) {
    const auto data = load_datasets(c);
    require_nonempty(data.traintest, "train-test");
    MetricsReport report;
    if (checkpoint == "naive") {
        report = rolling_evaluate(naive_forecaster(c.model.context_length, c.eval.horizon), data.traintest,
                                  c.model.context_length, c.eval, c.hash());
    } else {
        const auto ckpt = read_checkpoint(checkpoint);
        report = with_precision(c, [&](auto tag) {
            using Real = decltype(tag);
            auto model = model_from_checkpoint<Real>(ckpt);
            return evaluate_model(*model, data.traintest, c.eval, c.hash());
        });
    }
    auto j = report.to_json();
    j["config_hash"] = c.hash();
    j["config"] = c.to_json();
    j["forecaster"] = checkpoint;
    write_atomic(out_prefix + ".json", j.dump(2) + "\n");
    write_atomic(out_prefix + ".csv", report.to_csv());
    return report;
}

// ------------------------------------------------------------------ studies

std::vector<std::string> ablation_settings(const std::string& axis) {
    if (axis == "architecture")
        return {"masked_encoder", "enc_dec_ims", "enc_dec_dms", "encoder_mean", "encoder_cls", "encoder_flatten"};
    if (axis == "head") return {"student_t", "mv_student_t", "iqf"};
    if (axis == "pe") return {"datetime_only", "SPE", "LPE", "RoPE"};
    if (axis == "mask") return {"full", "full_causal", "mask_causal"};
    throw ConfigError("unknown ablation axis '" + axis + "' (architecture, head, pe, mask)");
}

namespace {

void apply_setting(ModelConfig& m, const std::string& axis, const std::string& setting) {
    if (axis == "architecture") m.variant = variant_from_string(setting);
    else if (axis == "head") m.head = head_kind_from_string(setting);
    else if (axis == "mask") m.attn_mask = mask_from_string(setting);
    else if (setting == "SPE") m.pe = PositionalEncoding::sinusoidal;
    else if (setting == "LPE") m.pe = PositionalEncoding::learned;
    else if (setting == "RoPE") m.pe = PositionalEncoding::rope;
    else m.pe = PositionalEncoding::datetime_only;
    m.validate();
}

struct Scored {
    std::size_t parameters = 0;
    double val_loss = 0.0, smape = 0.0, crps = 0.0;
};

/// Pre-trains one model and scores it: validation loss on the held-out final
/// horizon of `val_source`, then zero-shot metrics on `traintest` when non-empty.
template <typename Real>
Scored train_and_score(const ModelConfig& mc, const TrainConfig& tc, const EvalPlan& plan, std::uint64_t seed,
                       const Collection& train, const Collection& val_source, const Collection& traintest,
                       const std::string& fingerprint) {
    Model<Real> model(mc, seed);
    pretrain(model, train, tc);
    Scored s;
    s.parameters = model.parameter_count();
    const auto windows = final_windows(val_source, mc.context_length, mc.horizon, tc.val_series);
    s.val_loss = validation_loss(model, val_source, windows);
    s.smape = s.crps = std::numeric_limits<double>::quiet_NaN();
    if (!traintest.series.empty()) {
        const auto r = evaluate_model(model, traintest, plan, fingerprint);
        s.smape = r.smape;
        s.crps = r.crps;
    }
    return s;
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const RunConfig& c, const std::string& axis, const std::string& out_csv) {
    const auto settings = ablation_settings(axis);
    const auto data = load_datasets(c);
    require_nonempty(data.pretrain, "pre-train");
    std::vector<AblationRow> rows;
    for (const auto& setting : settings) {
        RunConfig rc = c;
        try {
            apply_setting(rc.model, axis, setting);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        const ModelConfig mc = fit_to_data(rc.model, data.pretrain);
        const auto scored = with_precision(c, [&](auto tag) {
            return train_and_score<decltype(tag)>(mc, rc.train, rc.eval, rc.seed, data.pretrain, data.pretrain,
                                                  data.traintest, rc.hash());
        });
        rows.push_back({axis, setting, scored.parameters, scored.val_loss, scored.smape, scored.crps, rc.hash()});
    }
    std::string csv = "axis,setting,parameters,val_loss,smape,crps,config_hash\n";
    for (const auto& r : rows)
        csv += r.axis + "," + r.setting + "," + std::to_string(r.parameters) + "," + fmt(r.val_loss) + "," + fmt(r.smape) +
               "," + fmt(r.crps) + "," + r.config_hash + "\n";
    write_atomic(out_csv, csv);
    return rows;
}

std::vector<ScalingRow> cmd_scaling(const RunConfig& c, const std::string& out_csv) {
    const auto data = load_datasets(c);
    require_nonempty(data.pretrain, "pre-train");
    std::vector<ScalingRow> rows;
    for (const auto& size : c.scaling.sizes) {
        // The preset supplies the sizes; every other model setting comes from the config.
        const ModelConfig preset = model_preset(size);
        RunConfig rc = c;
        rc.preset = size;
        rc.model.layers = preset.layers;
        rc.model.d_model = preset.d_model;
        rc.model.d_ff = preset.d_ff;
        rc.model.n_heads = preset.n_heads;
        rc.model.d_kv = preset.d_kv;
        const ModelConfig mc = fit_to_data(rc.model, data.pretrain);

        for (double frac : c.scaling.fracs) {
            const Collection subset = subsample(data.pretrain, frac, c.seed);
            ScalingRow row;
            row.size = size;
            row.data_frac = frac;
            row.series = subset.series.size();
            row.observations = observations(subset);
            auto point = rc.to_json();
            point["data_frac"] = frac;
            row.config_hash = hash_json(point);
            std::vector<double> smapes, crpss;
            for (std::size_t k = 0; k < c.scaling.seeds; ++k) {
                const std::uint64_t seed = c.seed + k;
                TrainConfig tc = rc.train;
                tc.seed = seed;
                EvalPlan plan = rc.eval;
                plan.seed = seed;
                const auto s = with_precision(c, [&](auto tag) {
                    return train_and_score<decltype(tag)>(mc, tc, plan, seed, subset, data.pretrain, data.traintest,
                                                          row.config_hash);
                });
                row.parameters = s.parameters;
                row.val_losses.push_back(s.val_loss);
                smapes.push_back(s.smape);
                crpss.push_back(s.crps);
            }
            row.val_loss_median = median(row.val_losses);
            row.val_loss_mean = std::accumulate(row.val_losses.begin(), row.val_losses.end(), 0.0) /
                                static_cast<double>(row.val_losses.size());
            row.smape_median = median(smapes);
            row.crps_median = median(crpss);
            rows.push_back(std::move(row));
        }
    }
    std::string csv =
        "size,parameters,data_frac,series,observations,val_loss_median,val_loss_mean,val_losses,smape_median,"
        "crps_median,config_hash\n";
    for (const auto& r : rows) {
        std::string losses;
        for (std::size_t i = 0; i < r.val_losses.size(); ++i) losses += (i ? ";" : "") + fmt(r.val_losses[i]);
        csv += r.size + "," + std::to_string(r.parameters) + "," + fmt(r.data_frac) + "," + std::to_string(r.series) +
               "," + std::to_string(r.observations) + "," + fmt(r.val_loss_median) + "," + fmt(r.val_loss_mean) + "," +
               losses + "," + fmt(r.smape_median) + "," + fmt(r.crps_median) + "," + r.config_hash + "\n";
    }
    write_atomic(out_csv, csv);
    return rows;
}

}  // namespace clops::cli
