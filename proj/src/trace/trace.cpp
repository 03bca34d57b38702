#include "clops/trace.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <istream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include "clops/calendar.hpp"
#include "clops/rng.hpp"
#include "json.hpp"

namespace clops {

std::string to_string(TraceKind kind) {
    switch (kind) {
        case TraceKind::azure2017: return "azure2017";
        case TraceKind::borg2011: return "borg2011";
        case TraceKind::ali2018: return "ali2018";
        case TraceKind::synthetic: return "synthetic";
    }
    return "unknown";
}

TraceKind trace_kind_from_string(const std::string& name) {
    if (name == "azure2017") return TraceKind::azure2017;
    if (name == "borg2011") return TraceKind::borg2011;
    if (name == "ali2018") return TraceKind::ali2018;
    if (name == "synthetic") return TraceKind::synthetic;
    throw ConfigError("unknown trace kind '" + name + "'");
}

std::int64_t parse_datetime(const std::string& text) {
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
    if (std::sscanf(text.c_str(), "%d-%u-%u %u:%u:%u", &y, &mo, &d, &h, &mi, &s) != 6 || mo < 1 || mo > 12 ||
        d < 1 || d > 31 || h > 23 || mi > 59 || s > 59)
        throw ConfigError("bad datetime '" + text + "', expected YYYY-MM-DD HH:MM:SS");
    return epoch_from_civil(y, mo, d, h, mi, s);
}

std::string format_datetime(std::int64_t epoch_seconds) {
    const auto c = civil_time(epoch_seconds);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02u:%02u:%02u", c.year, c.month, c.day, c.hour, c.minute,
                  c.second);
    return buf;
}

TraceSchema default_schema(TraceKind kind) {
    TraceSchema s;
    s.kind = kind;
    switch (kind) {
        case TraceKind::azure2017:
            s.entity_columns = {"vm_id"};
            s.attr_column = "subscription_id";
            s.timestamp_column = "timestamp";
            s.targets = {"avg_cpu"};
            s.past_dynamic = {"min_cpu", "max_cpu"};
            s.reference = parse_datetime("2016-11-15 00:00:00");
            s.missing_thresh = 0.00125;
            break;
        case TraceKind::borg2011:
            s.entity_columns = {"job_id", "task_index"};
            s.attr_column = "user";
            s.timestamp_column = "start_time";
            s.timestamp_scale = 1e6;  // microseconds
            s.targets = {"cpu_rate", "canonical_memory_usage"};
            s.past_dynamic = {"assigned_memory_usage", "unmapped_page_cache", "total_page_cache",
                              "local_disk_space_usage", "sample_portion"};
            s.reference = parse_datetime("2011-05-01 19:00:00");
            s.missing_thresh = 0.01;
            break;
        case TraceKind::ali2018:
            s.entity_columns = {"container_id"};
            s.attr_column = "app_du";
            s.timestamp_column = "time_stamp";
            s.targets = {"cpu_util_percent", "mem_util_percent"};
            s.past_dynamic = {"cpi", "mem_gps", "mpki", "net_in", "net_out", "disk_io_percent"};
            s.reference = parse_datetime("2018-01-01 12:00:00");
            s.missing_thresh = 0.01;
            s.bin_average = true;
            break;
        case TraceKind::synthetic:
            s.entity_columns = {"series_id"};
            s.attr_column = "attr";
            s.timestamp_column = "timestamp";
            s.targets = {"value"};
            s.missing_thresh = 0.01;
            break;
    }
    return s;
}

// ----------------------------------------------------------------------- parse

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    out = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && std::isfinite(out);
}

}  // namespace

std::vector<TraceRow> parse_trace(std::istream& csv, const TraceSchema& schema, ParseReport& report) {
    std::string line;
    if (!std::getline(csv, line)) throw SchemaError("trace is empty, expected a header row");
    const auto header = split_csv_line(line);
    auto column = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw SchemaError("trace is missing mandatory column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    std::vector<std::size_t> entity_cols;
    for (const auto& c : schema.entity_columns) entity_cols.push_back(column(c));
    const std::size_t attr_col = column(schema.attr_column);
    const std::size_t ts_col = column(schema.timestamp_column);
    std::vector<std::size_t> metric_cols;
    for (const auto& c : schema.targets) metric_cols.push_back(column(c));
    for (const auto& c : schema.past_dynamic) metric_cols.push_back(column(c));

    std::vector<TraceRow> rows;
    while (std::getline(csv, line)) {
        if (line.empty() || line == "\r") continue;
        ++report.rows;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            ++report.skipped;
            continue;
        }
        double ts = 0;
        if (!parse_double(fields[ts_col], ts) || ts < 0) {
            ++report.skipped;
            continue;
        }
        TraceRow row;
        bool has_id = true;
        for (std::size_t i = 0; i < entity_cols.size(); ++i) {
            has_id = has_id && !fields[entity_cols[i]].empty();
            row.entity_id += (i ? "/" : "") + fields[entity_cols[i]];
        }
        if (!has_id) {
            ++report.skipped;
            continue;
        }
        row.attr = fields[attr_col];
        row.timestamp = static_cast<std::int64_t>(std::floor(ts / schema.timestamp_scale));
        bool ok = true;
        for (std::size_t c : metric_cols) {
            double v = 0;
            if (fields[c].empty()) {
                row.metrics.emplace_back(std::nullopt);
            } else if (parse_double(fields[c], v)) {
                row.metrics.emplace_back(v);
            } else {
                ok = false;
                break;
            }
        }
        if (!ok) {
            ++report.skipped;
            continue;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ------------------------------------------------------------------- aggregate

Collection aggregate_series(const std::vector<TraceRow>& rows, const TraceSchema& schema) {
    const std::size_t dy = schema.targets.size(), dpd = schema.past_dynamic.size(), nm = dy + dpd;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i) groups[rows[i].entity_id].push_back(i);

    Collection out;
    out.kind = schema.kind;
    for (auto& [entity, idx] : groups) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return rows[a].timestamp < rows[b].timestamp; });
        auto bin_of = [](std::int64_t ts) {
            return ts >= 0 ? ts / kStepSeconds : -((-ts + kStepSeconds - 1) / kStepSeconds);
        };
        const std::int64_t first = bin_of(rows[idx.front()].timestamp);
        const std::int64_t last = bin_of(rows[idx.back()].timestamp);
        const auto len = static_cast<std::size_t>(last - first + 1);

        std::vector<double> sums(nm * len, 0.0);
        std::vector<std::size_t> counts(nm * len, 0);
        std::vector<std::uint8_t> seen(len, 0);
        for (std::size_t r : idx) {
            const auto t = static_cast<std::size_t>(bin_of(rows[r].timestamp) - first);
            if (seen[t] && !schema.bin_average) continue;  // duplicate timestamp: first row wins
            seen[t] = 1;
            for (std::size_t m = 0; m < nm; ++m)
                if (rows[r].metrics[m]) {
                    sums[m * len + t] += *rows[r].metrics[m];
                    ++counts[m * len + t];
                }
        }

        TimeSeriesRecord rec;
        rec.series_id = entity;
        rec.attr = rows[idx.front()].attr;
        rec.start = schema.reference + first * kStepSeconds;
        rec.length = len;
        rec.d_y = dy;
        rec.d_pd = dpd;
        rec.targets.resize(dy * len);
        rec.past_dynamic.resize(dpd * len);
        rec.missing.assign(dy * len, 0);
        const float nan = std::numeric_limits<float>::quiet_NaN();
        for (std::size_t m = 0; m < nm; ++m)
            for (std::size_t t = 0; t < len; ++t) {
                const std::size_t c = counts[m * len + t];
                const float v = c ? static_cast<float>(sums[m * len + t] / static_cast<double>(c)) : nan;
                if (m < dy) {
                    rec.targets[m * len + t] = v;
                    rec.missing[m * len + t] = c == 0;
                } else {
                    rec.past_dynamic[(m - dy) * len + t] = v;
                }
            }
        out.series.push_back(std::move(rec));
    }
    return out;
}

// ----------------------------------------------------------------------- clean

namespace {

void carry_forward(float* row, std::size_t len) {
    std::size_t first = 0;
    while (first < len && std::isnan(row[first])) ++first;
    const float fill = first < len ? row[first] : 0.0f;
    for (std::size_t t = 0; t < first; ++t) row[t] = fill;
    for (std::size_t t = first + 1; t < len; ++t)
        if (std::isnan(row[t])) row[t] = row[t - 1];
}

bool has_constant_target(const TimeSeriesRecord& s) {
    for (std::size_t d = 0; d < s.d_y; ++d) {
        bool found = false, varies = false;
        float ref = 0.0f;
        for (std::size_t t = 0; t < s.length && !varies; ++t) {
            if (s.missing[d * s.length + t]) continue;
            const float v = s.targets[d * s.length + t];
            if (!found) {
                ref = v;
                found = true;
            } else if (v != ref) {
                varies = true;
            }
        }
        if (!varies) return true;
    }
    return false;
}

}  // namespace

Collection clean_series(const Collection& in, double missing_thresh, CleanReport& report, std::size_t min_len) {
    Collection out;
    out.kind = in.kind;
    out.freq = in.freq;
    for (const auto& s : in.series) {
        if (s.length < min_len) {
            ++report.too_short;
            continue;
        }
        const auto n_missing = static_cast<std::size_t>(std::count(s.missing.begin(), s.missing.end(), 1));
        if (static_cast<double>(n_missing) > missing_thresh * static_cast<double>(s.missing.size())) {
            ++report.too_missing;
            continue;
        }
        if (has_constant_target(s)) {
            ++report.constant;
            continue;
        }
        TimeSeriesRecord c = s;
        for (std::size_t d = 0; d < c.d_y; ++d) carry_forward(c.targets.data() + d * c.length, c.length);
        for (std::size_t d = 0; d < c.d_pd; ++d) carry_forward(c.past_dynamic.data() + d * c.length, c.length);
        out.series.push_back(std::move(c));
        ++report.kept;
    }
    if (out.series.empty()) throw DataError("cleaning removed every series");
    return out;
}

// ----------------------------------------------------------------------- split

SplitPlan make_split(const Collection& collection, double frac, std::uint64_t seed) {
    if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
    if (collection.series.empty()) throw DataError("cannot split an empty collection");
    SplitPlan plan;
    plan.seed = seed;
    for (const auto& s : collection.series) plan.end_timestamp = std::max(plan.end_timestamp, s.end());

    std::set<std::string> all_attrs, valid_attrs;
    std::size_t n_valid = 0;
    for (const auto& s : collection.series) {
        all_attrs.insert(s.attr);
        if (s.end() == plan.end_timestamp) {
            valid_attrs.insert(s.attr);
            ++n_valid;
        }
    }
    const double n_series = static_cast<double>(collection.series.size());
    auto n = static_cast<std::size_t>(
        std::llround(static_cast<double>(valid_attrs.size()) * frac * n_series / static_cast<double>(n_valid)));
    n = std::min(n, valid_attrs.size());

    std::vector<std::string> pool(valid_attrs.begin(), valid_attrs.end());
    CounterRng rng(seed, 0x5b1175);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    plan.traintest_attrs.insert(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
    for (const auto& a : all_attrs)
        if (!plan.traintest_attrs.count(a)) plan.pretrain_attrs.insert(a);
    return plan;
}

SplitResult apply_split(const Collection& collection, const SplitPlan& plan, std::size_t horizon,
                        std::size_t windows) {
    SplitResult r;
    r.pretrain.kind = r.traintest.kind = collection.kind;
    r.pretrain.freq = r.traintest.freq = collection.freq;
    r.test_start = plan.end_timestamp - static_cast<std::int64_t>(horizon * windows - 1) * collection.freq;
    for (const auto& s : collection.series) {
        if (plan.traintest_attrs.count(s.attr)) {
            if (s.end() == plan.end_timestamp) r.traintest.series.push_back(s);
            continue;
        }
        if (s.start >= r.test_start) continue;
        const auto keep = static_cast<std::size_t>((r.test_start - s.start + s.freq - 1) / s.freq);
        if (keep >= s.length) {
            r.pretrain.series.push_back(s);
            continue;
        }
        TimeSeriesRecord t = s;
        t.length = keep;
        auto cut = [&](std::vector<float>& v, std::size_t rows) {
            std::vector<float> out(rows * keep);
            for (std::size_t d = 0; d < rows; ++d)
                std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(d * s.length), keep,
                            out.begin() + static_cast<std::ptrdiff_t>(d * keep));
            v = std::move(out);
        };
        cut(t.targets, t.d_y);
        cut(t.past_dynamic, t.d_pd);
        std::vector<std::uint8_t> missing(t.d_y * keep);
        for (std::size_t d = 0; d < t.d_y; ++d)
            std::copy_n(s.missing.begin() + static_cast<std::ptrdiff_t>(d * s.length), keep,
                        missing.begin() + static_cast<std::ptrdiff_t>(d * keep));
        t.missing = std::move(missing);
        r.pretrain.series.push_back(std::move(t));
    }
    return r;
}

// ----------------------------------------------------------------------- store

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) chunk |= bytes[i + 2];
        out += kAlphabet[(chunk >> 18) & 63];
        out += kAlphabet[(chunk >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(chunk >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kAlphabet[chunk & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw StoreError("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t chunk = 0;
        int pad = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            const char c = text[i + j];
            int v = 0;
            if (c == '=') {
                ++pad;
            } else if ((v = value(c)) < 0 || pad > 0) {
                throw StoreError("invalid base64 character");
            }
            chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
        }
        out.push_back(static_cast<std::uint8_t>(chunk >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(chunk >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk));
    }
    return out;
}

namespace {

constexpr const char* kStoreFormat = "CTS1";
constexpr int kStoreVersion = 1;

std::string encode_floats(const std::vector<float>& v) {
    std::vector<std::uint8_t> bytes(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(v[i]);
        for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return base64_encode(bytes);
}

std::vector<float> decode_floats(const std::string& text, std::size_t expected) {
    const auto bytes = base64_decode(text);
    if (bytes.size() != expected * 4) throw StoreError("array length does not match its declared shape");
    std::vector<float> v(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        v[i] = std::bit_cast<float>(bits);
    }
    return v;
}

std::string record_line(const TimeSeriesRecord& s) {
    nlohmann::json j = {
        {"series_id", s.series_id},
        {"attr", s.attr},
        {"start", s.start},
        {"freq", s.freq},
        {"length", s.length},
        {"d_y", s.d_y},
        {"d_pd", s.d_pd},
        {"targets", encode_floats(s.targets)},
        {"past_dynamic", encode_floats(s.past_dynamic)},
        {"static_real", encode_floats(s.static_real)},
        {"missing", base64_encode(s.missing)},
    };
    return j.dump();
}

TimeSeriesRecord parse_record(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    TimeSeriesRecord s;
    s.series_id = j.at("series_id").get<std::string>();
    s.attr = j.at("attr").get<std::string>();
    s.start = j.at("start").get<std::int64_t>();
    s.freq = j.at("freq").get<std::int64_t>();
    s.length = j.at("length").get<std::size_t>();
    s.d_y = j.at("d_y").get<std::size_t>();
    s.d_pd = j.at("d_pd").get<std::size_t>();
    s.targets = decode_floats(j.at("targets").get<std::string>(), s.d_y * s.length);
    s.past_dynamic = decode_floats(j.at("past_dynamic").get<std::string>(), s.d_pd * s.length);
    const auto stat = base64_decode(j.at("static_real").get<std::string>());
    s.static_real = decode_floats(j.at("static_real").get<std::string>(), stat.size() / 4);
    s.missing = base64_decode(j.at("missing").get<std::string>());
    if (s.missing.size() != s.d_y * s.length) throw StoreError("missing mask does not match its declared shape");
    return s;
}

}  // namespace

void export_store(const Collection& collection, const std::string& path, const nlohmann::json& meta) {
    std::string body;
    for (const auto& s : collection.series) body += record_line(s) + "\n";
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    nlohmann::json header = {{"format", kStoreFormat},
                                   {"version", kStoreVersion},
                                   {"kind", to_string(collection.kind)},
                                   {"freq", collection.freq},
                                   {"count", collection.series.size()},
                                   {"checksum", crc}};
    nlohmann::json full = header;
    if (!meta.is_null()) full["meta"] = meta;
    const std::string text = full.dump() + "\n" + body;

    const std::string tmp = path + ".tmp";
    gzFile f = gzopen(tmp.c_str(), "wb");
    if (!f) throw StoreError("cannot open '" + tmp + "' for writing");
    const bool ok = gzwrite(f, text.data(), static_cast<unsigned>(text.size())) == static_cast<int>(text.size());
    if (gzclose(f) != Z_OK || !ok) throw StoreError("failed writing '" + tmp + "'");
    std::filesystem::rename(tmp, path);
}

Collection import_store(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw StoreError("cannot open store '" + path + "'");
    std::string text;
    char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof buf)) > 0) text.append(buf, static_cast<std::size_t>(n));
    int err = Z_OK;
    gzerror(f, &err);
    gzclose(f);
    if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw StoreError("store '" + path + "' is corrupted or truncated");

    const auto nl = text.find('\n');
    if (nl == std::string::npos) throw StoreError("store '" + path + "' has no header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text.substr(0, nl));
    } catch (const nlohmann::json::exception&) {
        throw StoreError("store '" + path + "' has an unreadable header");
    }
    if (header.value("format", "") != kStoreFormat)
        throw StoreError("store '" + path + "' has format '" + header.value("format", "") + "', expected " +
                         kStoreFormat);
    if (header.value("version", 0) != kStoreVersion)
        throw StoreError("store '" + path + "' has unsupported version " + std::to_string(header.value("version", 0)));
    const std::string body = text.substr(nl + 1);
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    if (crc != header.at("checksum").get<unsigned long>())
        throw StoreError("store '" + path + "' failed its checksum");

    Collection c;
    c.kind = trace_kind_from_string(header.at("kind").get<std::string>());
    c.freq = header.at("freq").get<std::int64_t>();
    std::istringstream lines(body);
    std::string line;
    while (std::getline(lines, line))
        if (!line.empty()) c.series.push_back(parse_record(line));
    if (c.series.size() != header.at("count").get<std::size_t>())
        throw StoreError("store '" + path + "' record count does not match its header");
    return c;
}

// ------------------------------------------------------------------- synthetic

Collection gen_synthetic(std::size_t n_series, std::size_t length, std::uint64_t seed,
                         const SyntheticParams& params) {
    Collection c;
    c.kind = TraceKind::synthetic;
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n_series; ++i) {
        CounterRng rng(seed, i);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double level = params.level_min + (params.level_max - params.level_min) * unit(rng);
        const double amp_d = params.daily_amplitude * (0.5 + unit(rng));
        const double amp_h = params.hourly_amplitude * (0.5 + unit(rng));
        const double phase_d = two_pi * unit(rng), phase_h = two_pi * unit(rng);
        const double phi = params.ar_coef;
        double e = params.noise_std * normal(rng) / std::sqrt(std::max(1e-12, 1.0 - phi * phi));

        TimeSeriesRecord s;
        char id[32], attr[32];
        std::snprintf(id, sizeof id, "syn-%06zu", i);
        std::snprintf(attr, sizeof attr, "grp-%05zu", i / std::max<std::size_t>(1, params.series_per_attr));
        s.series_id = id;
        s.attr = attr;
        s.start = params.start;
        s.length = length;
        s.d_y = 1;
        s.targets.resize(length);
        s.missing.assign(length, 0);
        for (std::size_t t = 0; t < length; ++t) {
            const double td = static_cast<double>(t);
            s.targets[t] = static_cast<float>(level + amp_d * std::sin(two_pi * td / 288.0 + phase_d) +
                                              amp_h * std::sin(two_pi * td / 12.0 + phase_h) + e);
            e = phi * e + params.noise_std * normal(rng);
        }
        c.series.push_back(std::move(s));
    }
    return c;
}

}  // namespace clops
