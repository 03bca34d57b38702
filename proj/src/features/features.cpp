#include "clops/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "clops/calendar.hpp"

namespace clops {

NormStats instance_normalize(std::span<double> window, std::size_t d_y, std::span<const std::uint8_t> valid) {
    if (d_y == 0 || window.size() % d_y != 0) throw DimensionError("window size is not a multiple of d_y");
    const std::size_t len = window.size() / d_y;
    if (!valid.empty() && valid.size() != len) throw DimensionError("valid mask length does not match the window");
    auto used = [&](std::size_t t) { return valid.empty() || valid[t] != 0; };
    std::size_t n = 0;
    for (std::size_t t = 0; t < len; ++t) n += used(t);

    NormStats s;
    s.loc.assign(d_y, 0.0);
    s.scale.assign(d_y, std::sqrt(s.eps));
    for (std::size_t d = 0; d < d_y; ++d) {
        if (n == 0) continue;
        double sum = 0.0;
        for (std::size_t t = 0; t < len; ++t)
            if (used(t)) sum += window[t * d_y + d];
        const double mu = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::size_t t = 0; t < len; ++t)
            if (used(t)) sq += (window[t * d_y + d] - mu) * (window[t * d_y + d] - mu);
        s.loc[d] = mu;
        s.scale[d] = std::sqrt(sq / static_cast<double>(n) + s.eps);
    }
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t d = 0; d < d_y; ++d)
            window[t * d_y + d] = used(t) ? (window[t * d_y + d] - s.loc[d]) / s.scale[d] : 0.0;
    return s;
}

ForecastDistribution unnormalize_forecast(const ForecastDistribution& dist, std::span<const NormStats> stats) {
    if (stats.size() != dist.batch)
        throw ContractError("unnormalize_forecast needs one NormStats per batch row, got " +
                            std::to_string(stats.size()) + " for " + std::to_string(dist.batch));
    ForecastDistribution out = dist;
    const std::size_t d_y = dist.dims;
    for (std::size_t b = 0; b < dist.batch; ++b) {
        const auto& s = stats[b];
        if (s.loc.size() != d_y || s.scale.size() != d_y) throw ContractError("NormStats dimension mismatch");
        for (std::size_t h = 0; h < dist.horizon; ++h) {
            auto p = out.step(b, h);
            switch (dist.kind) {
                case DistributionKind::student_t:
                case DistributionKind::normal: {
                    const std::size_t k = dist.kind == DistributionKind::student_t ? 3 : 2;
                    for (std::size_t d = 0; d < d_y; ++d) {
                        p[d * k] = p[d * k] * s.scale[d] + s.loc[d];
                        p[d * k + 1] *= s.scale[d];
                    }
                    break;
                }
                case DistributionKind::quantiles: {
                    const std::size_t k = dist.levels.size();
                    for (std::size_t d = 0; d < d_y; ++d)
                        for (std::size_t j = 0; j < k; ++j) p[d * k + j] = p[d * k + j] * s.scale[d] + s.loc[d];
                    break;
                }
                case DistributionKind::mv_student_t: {
                    // x = loc + S y with S diagonal, so the scale factor becomes S L.
                    for (std::size_t d = 0; d < d_y; ++d) {
                        p[d] = p[d] * s.scale[d] + s.loc[d];
                        for (std::size_t j = 0; j < d_y; ++j) p[d_y + d * d_y + j] *= s.scale[d];
                    }
                    break;
                }
            }
        }
    }
    return out;
}

std::vector<double> log_scale_feature(const NormStats& stats) {
    std::vector<double> out(stats.scale.size());
    std::transform(stats.scale.begin(), stats.scale.end(), out.begin(), [](double s) { return std::log(s); });
    return out;
}

std::array<double, kDatetimeFeatures> datetime_features(std::int64_t epoch_seconds) {
    const auto c = civil_time(epoch_seconds);
    return {c.minute / 59.0 - 0.5, c.hour / 23.0 - 0.5, c.weekday / 6.0 - 0.5, (c.day - 1) / 30.0 - 0.5,
            (c.day_of_year - 1) / 365.0 - 0.5};
}

LagMatrix lag_features(std::span<const float> y, std::ptrdiff_t anchor, std::size_t positions,
                       std::span<const std::size_t> lags) {
    LagMatrix m;
    m.positions = positions;
    m.n_lags = lags.size();
    m.values.assign(positions * lags.size(), 0.0);
    m.valid.assign(positions * lags.size(), 0);
    const auto len = static_cast<std::ptrdiff_t>(y.size());
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t j = 0; j < lags.size(); ++j) {
            const std::ptrdiff_t idx = anchor + static_cast<std::ptrdiff_t>(p) - static_cast<std::ptrdiff_t>(lags[j]);
            if (idx < 0 || idx >= len) continue;
            m.values[p * lags.size() + j] = y[static_cast<std::size_t>(idx)];
            m.valid[p * lags.size() + j] = 1;
        }
    return m;
}

WindowBatch make_window_batch(const Collection& collection, std::span<const WindowRef> windows, std::size_t L,
                              std::size_t H, std::span<const std::size_t> lags) {
    if (windows.empty()) throw ContractError("make_window_batch needs at least one window");
    if (L == 0 || H == 0) throw ContractError("context length and horizon must be positive");
    const auto& first = collection.series.at(windows.front().series);
    WindowBatch wb;
    wb.batch = windows.size();
    wb.context_length = L;
    wb.horizon = H;
    wb.d_y = first.d_y;
    wb.d_pd = first.d_pd;
    wb.n_static = first.static_real.size();
    wb.lags.assign(lags.begin(), lags.end());
    wb.windows.assign(windows.begin(), windows.end());
    const std::size_t B = wb.batch, dy = wb.d_y, dpd = wb.d_pd, nl = lags.size(), T = L + H;

    wb.context_targets.assign(B * L * dy, 0.0);
    wb.future_targets.assign(B * H * dy, 0.0);
    wb.lag_values.assign(B * T * dy * nl, 0.0);
    wb.lag_valid.assign(B * T * dy * nl, 0);
    wb.past_dynamic.assign(B * L * dpd, 0.0);
    wb.datetime.assign(B * T * kDatetimeFeatures, 0.0);
    wb.static_feats.assign(B * (dy + wb.n_static), 0.0);
    wb.context_valid.assign(B * L, 0);
    wb.stats.resize(B);

    for (std::size_t b = 0; b < B; ++b) {
        const auto& ref = windows[b];
        const auto& s = collection.series.at(ref.series);
        if (s.d_y != dy || s.d_pd != dpd || s.static_real.size() != wb.n_static)
            throw DimensionError("series '" + s.series_id + "' has a different channel layout from the batch");
        const auto len = static_cast<std::ptrdiff_t>(s.length);
        auto in_range = [&](std::ptrdiff_t t) { return t >= 0 && t < len; };

        // Raw context, normalized in place; the future reuses the context stats.
        std::vector<double> ctx(L * dy, 0.0);
        std::vector<std::uint8_t> valid(L, 0);
        for (std::size_t p = 0; p < L; ++p) {
            const std::ptrdiff_t t = ref.start + static_cast<std::ptrdiff_t>(p);
            if (!in_range(t)) continue;
            valid[p] = 1;
            for (std::size_t d = 0; d < dy; ++d) ctx[p * dy + d] = s.target(d, static_cast<std::size_t>(t));
        }
        const auto stats = instance_normalize(ctx, dy, valid);
        std::copy(ctx.begin(), ctx.end(), wb.context_targets.begin() + static_cast<std::ptrdiff_t>(b * L * dy));
        std::copy(valid.begin(), valid.end(), wb.context_valid.begin() + static_cast<std::ptrdiff_t>(b * L));

        for (std::size_t p = 0; p < H; ++p) {
            const std::ptrdiff_t t = ref.start + static_cast<std::ptrdiff_t>(L + p);
            if (!in_range(t)) continue;
            for (std::size_t d = 0; d < dy; ++d)
                wb.future_targets[(b * H + p) * dy + d] =
                    (s.target(d, static_cast<std::size_t>(t)) - stats.loc[d]) / stats.scale[d];
        }

        for (std::size_t d = 0; d < dy; ++d) {
            const auto m = lag_features(std::span<const float>(s.targets).subspan(d * s.length, s.length),
                                        ref.start, T, lags);
            for (std::size_t p = 0; p < T; ++p)
                for (std::size_t j = 0; j < nl; ++j) {
                    const std::size_t dst = ((b * T + p) * dy + d) * nl + j;
                    if (!m.valid[p * nl + j]) continue;
                    wb.lag_values[dst] = (m.values[p * nl + j] - stats.loc[d]) / stats.scale[d];
                    wb.lag_valid[dst] = 1;
                }
        }

        if (dpd > 0) {
            std::vector<double> pd(L * dpd, 0.0);
            for (std::size_t p = 0; p < L; ++p) {
                const std::ptrdiff_t t = ref.start + static_cast<std::ptrdiff_t>(p);
                if (!in_range(t)) continue;
                for (std::size_t d = 0; d < dpd; ++d)
                    pd[p * dpd + d] = s.past_dynamic[d * s.length + static_cast<std::size_t>(t)];
            }
            instance_normalize(pd, dpd, valid);
            std::copy(pd.begin(), pd.end(), wb.past_dynamic.begin() + static_cast<std::ptrdiff_t>(b * L * dpd));
        }

        for (std::size_t p = 0; p < T; ++p) {
            const auto f = datetime_features(s.start + (ref.start + static_cast<std::ptrdiff_t>(p)) * s.freq);
            std::copy(f.begin(), f.end(), wb.datetime.begin() + static_cast<std::ptrdiff_t>((b * T + p) * kDatetimeFeatures));
        }

        const auto ls = log_scale_feature(stats);
        const std::size_t ns = dy + wb.n_static;
        std::copy(ls.begin(), ls.end(), wb.static_feats.begin() + static_cast<std::ptrdiff_t>(b * ns));
        std::copy(s.static_real.begin(), s.static_real.end(),
                  wb.static_feats.begin() + static_cast<std::ptrdiff_t>(b * ns + dy));
        wb.stats[b] = stats;
    }
    return wb;
}

std::vector<WindowRef> sample_window_refs(const Collection& collection, std::size_t B, std::size_t L, std::size_t H,
                                          std::uint64_t seed, std::uint64_t iteration) {
    if (collection.series.empty()) throw DataError("cannot sample windows from an empty collection");
    std::vector<double> cumulative(collection.series.size());
    double total = 0.0;
    for (std::size_t i = 0; i < collection.series.size(); ++i) {
        const auto& s = collection.series[i];
        if (s.length <= H) throw DataError("series '" + s.series_id + "' is too short to hold a horizon and context");
        total += static_cast<double>(s.length);
        cumulative[i] = total;
    }
    std::vector<WindowRef> refs(B);
    for (std::size_t slot = 0; slot < B; ++slot) {
        CounterRng rng(seed, iteration, slot);
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        const auto i = std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
        const auto len = static_cast<std::ptrdiff_t>(collection.series[i].length);
        const auto span = len - static_cast<std::ptrdiff_t>(L + H);
        refs[slot].series = i;
        refs[slot].start = span >= 0 ? static_cast<std::ptrdiff_t>(rng() % static_cast<std::uint64_t>(span + 1)) : span;
    }
    return refs;
}

WindowBatch sample_windows(const Collection& collection, std::size_t B, std::size_t L, std::size_t H,
                           std::span<const std::size_t> lags, std::uint64_t seed, std::uint64_t iteration) {
    const auto refs = sample_window_refs(collection, B, L, H, seed, iteration);
    return make_window_batch(collection, refs, L, H, lags);
}

template <typename Real>
ModelInput<Real> assemble_inputs(const WindowBatch& wb, const ModelConfig& c) {
    auto mismatch = [](const std::string& what, std::size_t got, std::size_t want) {
        throw DimensionError("batch " + what + " is " + std::to_string(got) + ", model config expects " +
                             std::to_string(want));
    };
    if (wb.d_y != c.d_y) mismatch("d_y", wb.d_y, c.d_y);
    if (wb.context_length != c.context_length) mismatch("context length", wb.context_length, c.context_length);
    if (wb.horizon != c.horizon) mismatch("horizon", wb.horizon, c.horizon);
    if (wb.n_static != c.n_static) mismatch("static feature count", wb.n_static, c.n_static);
    if (wb.d_pd != c.n_past_dynamic) mismatch("past dynamic count", wb.d_pd, c.n_past_dynamic);
    if (wb.lags != c.lags) throw DimensionError("batch lag set differs from the model config");

    const std::size_t B = wb.batch, L = wb.context_length, H = wb.horizon, T = L + H, dy = wb.d_y,
                      nl = wb.lags.size(), din = c.d_in(), ns = dy + wb.n_static;
    const bool masked = c.variant == Variant::masked_encoder;
    std::vector<Real> ctx(B * L * din, Real(0)), fut(B * H * din, Real(0)), tgt(B * H * dy);

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < T; ++p) {
            const bool future = p >= L;
            Real* row = future ? &fut[(b * H + p - L) * din] : &ctx[(b * L + p) * din];
            if (!future)
                for (std::size_t d = 0; d < dy; ++d) row[d] = static_cast<Real>(wb.context_targets[(b * L + p) * dy + d]);
            for (std::size_t d = 0; d < dy; ++d)
                for (std::size_t j = 0; j < nl; ++j) {
                    if (future && (masked || wb.lags[j] < H)) continue;
                    row[c.lag_offset() + d * nl + j] = static_cast<Real>(wb.lag_values[((b * T + p) * dy + d) * nl + j]);
                }
            for (std::size_t k = 0; k < ns; ++k)
                row[c.log_scale_offset() + k] = static_cast<Real>(wb.static_feats[b * ns + k]);
            if (!future)
                for (std::size_t k = 0; k < wb.d_pd; ++k)
                    row[c.past_dynamic_offset() + k] = static_cast<Real>(wb.past_dynamic[(b * L + p) * wb.d_pd + k]);
            if (c.use_datetime)
                for (std::size_t k = 0; k < kDatetimeFeatures; ++k)
                    row[c.datetime_offset() + k] = static_cast<Real>(wb.datetime[(b * T + p) * kDatetimeFeatures + k]);
        }
    std::transform(wb.future_targets.begin(), wb.future_targets.end(), tgt.begin(),
                   [](double v) { return static_cast<Real>(v); });

    ModelInput<Real> in;
    in.context = Tensor<Real>::from_values({B, L, din}, std::move(ctx));
    in.future = Tensor<Real>::from_values({B, H, din}, std::move(fut));
    in.future_targets = Tensor<Real>::from_values({B, H, dy}, std::move(tgt));
    if (std::find(wb.context_valid.begin(), wb.context_valid.end(), 0) != wb.context_valid.end())
        in.context_valid = wb.context_valid;
    return in;
}

template ModelInput<float> assemble_inputs<float>(const WindowBatch&, const ModelConfig&);
template ModelInput<double> assemble_inputs<double>(const WindowBatch&, const ModelConfig&);

}  // namespace clops
