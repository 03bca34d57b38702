#include "clops/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "clops/rng.hpp"

namespace clops {

double smape(std::span<const double> y, std::span<const double> yhat, std::size_t d_y) {
    if (y.size() != yhat.size() || d_y == 0 || y.size() % d_y != 0)
        throw DimensionError("smape needs matching [H x d_y] blocks");
    const std::size_t H = y.size() / d_y;
    if (H == 0) return 0.0;
    double total = 0.0;
    for (std::size_t d = 0; d < d_y; ++d) {
        double sum = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
            const double a = y[h * d_y + d], b = yhat[h * d_y + d];
            const double den = std::abs(a) + std::abs(b);
            if (den > 0.0) sum += std::abs(a - b) / den;
        }
        total += 200.0 / static_cast<double>(H) * sum;
    }
    return total / static_cast<double>(d_y);
}

double pinball(double alpha, double q, double y) { return (alpha - (y < q ? 1.0 : 0.0)) * (y - q); }

QuantileScorer::QuantileScorer(std::vector<double> levels) : levels_(std::move(levels)), loss_(levels_.size(), 0.0) {
    if (levels_.empty()) throw ContractError("quantile scorer needs at least one level");
}

void QuantileScorer::add(double y, std::span<const double> quantiles) {
    if (quantiles.size() != levels_.size()) throw DimensionError("quantile count does not match the scorer levels");
    for (std::size_t k = 0; k < levels_.size(); ++k) loss_[k] += pinball(levels_[k], quantiles[k], y);
    abs_sum_ += std::abs(y);
    ++count_;
}

void QuantileScorer::merge(const QuantileScorer& other) {
    if (other.levels_ != levels_) throw ContractError("cannot merge scorers with different levels");
    for (std::size_t k = 0; k < loss_.size(); ++k) loss_[k] += other.loss_[k];
    abs_sum_ += other.abs_sum_;
    count_ += other.count_;
}

double QuantileScorer::wql(std::size_t k) const {
    if (!(abs_sum_ > 0.0))
        throw DataError("weighted quantile loss is undefined: sum of |y| is zero over " + std::to_string(count_) +
                        " observations");
    return 2.0 * loss_.at(k) / abs_sum_;
}

double QuantileScorer::crps() const {
    double s = 0.0;
    for (std::size_t k = 0; k < levels_.size(); ++k) s += wql(k);
    return s / static_cast<double>(levels_.size());
}

double wql(std::span<const double> y, std::span<const double> q, double alpha) {
    if (y.size() != q.size()) throw DimensionError("wql needs one forecast per observation");
    QuantileScorer s({alpha});
    for (std::size_t i = 0; i < y.size(); ++i) s.add(y[i], q.subspan(i, 1));
    return s.wql(0);
}

double crps(std::span<const double> y, std::span<const double> q, std::span<const double> levels) {
    const std::size_t K = levels.size();
    if (q.size() != y.size() * K) throw DimensionError("crps needs [N x K] quantiles");
    QuantileScorer s({levels.begin(), levels.end()});
    for (std::size_t i = 0; i < y.size(); ++i) s.add(y[i], q.subspan(i * K, K));
    return s.crps();
}

void summed_quantiles(std::span<const double> samples, std::span<const double> y, std::size_t n_samples,
                      std::size_t horizon, std::size_t dims, std::span<const double> levels,
                      std::vector<double>& q_out, std::vector<double>& y_out) {
    if (n_samples < levels.size())
        throw ContractError("crps_sum needs at least as many samples (" + std::to_string(n_samples) +
                            ") as quantile levels (" + std::to_string(levels.size()) + ")");
    if (samples.size() != n_samples * horizon * dims || y.size() != horizon * dims)
        throw DimensionError("crps_sum expects samples [S x H x d] and targets [H x d]");
    const std::size_t K = levels.size();
    q_out.assign(horizon * K, 0.0);
    y_out.assign(horizon, 0.0);
    std::vector<double> sums(n_samples);
    for (std::size_t h = 0; h < horizon; ++h) {
        for (std::size_t s = 0; s < n_samples; ++s) {
            double acc = 0.0;
            for (std::size_t d = 0; d < dims; ++d) acc += samples[(s * horizon + h) * dims + d];
            sums[s] = acc;
        }
        std::sort(sums.begin(), sums.end());
        for (std::size_t k = 0; k < K; ++k) q_out[h * K + k] = empirical_quantile(sums, levels[k]);
        for (std::size_t d = 0; d < dims; ++d) y_out[h] += y[h * dims + d];
    }
}

double crps_sum(std::span<const double> samples, std::span<const double> y, std::size_t n_samples,
                std::size_t horizon, std::size_t dims, std::span<const double> levels) {
    std::vector<double> q, ys;
    summed_quantiles(samples, y, n_samples, horizon, dims, levels, q, ys);
    return crps(ys, q, levels);
}

ForecastDistribution naive_forecast(std::span<const double> context, std::size_t d_y, std::size_t horizon,
                                    std::span<const std::uint8_t> valid) {
    if (d_y == 0 || context.size() % d_y != 0) throw DimensionError("naive context must be [L x d_y]");
    const std::size_t L = context.size() / d_y;
    if (!valid.empty() && valid.size() != L) throw DimensionError("naive valid mask length mismatch");
    auto used = [&](std::size_t t) { return valid.empty() || valid[t] != 0; };

    ForecastDistribution f;
    f.kind = DistributionKind::normal;
    f.batch = 1;
    f.horizon = horizon;
    f.dims = d_y;
    f.params.assign(horizon * d_y * 2, 0.0);
    for (std::size_t d = 0; d < d_y; ++d) {
        double last = 0.0, sq = 0.0, prev = 0.0;
        std::size_t n_obs = 0, n_res = 0;
        for (std::size_t t = 0; t < L; ++t) {
            if (!used(t)) continue;
            const double v = context[t * d_y + d];
            if (n_obs > 0) {
                sq += (v - prev) * (v - prev);
                ++n_res;
            }
            prev = last = v;
            ++n_obs;
        }
        const double sigma = n_res > 0 ? std::sqrt(sq / static_cast<double>(n_res)) : 0.0;
        for (std::size_t h = 0; h < horizon; ++h) {
            f.params[(h * d_y + d) * 2] = last;
            f.params[(h * d_y + d) * 2 + 1] = sigma * std::sqrt(static_cast<double>(h + 1));
        }
    }
    return f;
}

std::vector<std::size_t> window_starts(std::size_t length, const EvalPlan& plan) {
    if (plan.windows == 0 || plan.horizon == 0) throw ConfigError("evaluation plan needs windows and horizon > 0");
    const std::size_t span = plan.horizon + (plan.windows - 1) * plan.stride;
    if (length <= span)
        throw DataError("series of length " + std::to_string(length) + " cannot hold " +
                        std::to_string(plan.windows) + " evaluation windows of horizon " +
                        std::to_string(plan.horizon) + " with some context");
    std::vector<std::size_t> out(plan.windows);
    for (std::size_t w = 0; w < plan.windows; ++w) out[w] = length - plan.horizon - (plan.windows - 1 - w) * plan.stride;
    return out;
}

template <typename Real>
Forecaster model_forecaster(Model<Real>& model) {
    return [&model](const Collection& c, std::span<const WindowRef> refs) {
        const auto& cfg = model.config();
        const auto wb = make_window_batch(c, refs, cfg.context_length, cfg.horizon, cfg.lags);
        return unnormalize_forecast(model.predict(assemble_inputs<Real>(wb, cfg)), wb.stats);
    };
}

Forecaster naive_forecaster(std::size_t context_length, std::size_t horizon) {
    return [context_length, horizon](const Collection& c, std::span<const WindowRef> refs) {
        ForecastDistribution out;
        for (std::size_t b = 0; b < refs.size(); ++b) {
            const auto& s = c.series.at(refs[b].series);
            std::vector<double> ctx(context_length * s.d_y, 0.0);
            std::vector<std::uint8_t> valid(context_length, 0);
            for (std::size_t p = 0; p < context_length; ++p) {
                const std::ptrdiff_t t = refs[b].start + static_cast<std::ptrdiff_t>(p);
                if (t < 0 || t >= static_cast<std::ptrdiff_t>(s.length)) continue;
                valid[p] = 1;
                for (std::size_t d = 0; d < s.d_y; ++d) ctx[p * s.d_y + d] = s.target(d, static_cast<std::size_t>(t));
            }
            auto f = naive_forecast(ctx, s.d_y, horizon, valid);
            if (b == 0) {
                out = f;
                out.batch = refs.size();
                out.params.reserve(refs.size() * f.params.size());
            } else {
                out.params.insert(out.params.end(), f.params.begin(), f.params.end());
            }
        }
        return out;
    };
}

MetricsReport rolling_evaluate(const Forecaster& forecaster, const Collection& collection, std::size_t context_length,
                               const EvalPlan& plan, const std::string& fingerprint) {
    if (collection.series.empty()) throw DataError("nothing to evaluate: empty collection");
    const std::size_t H = plan.horizon, K = plan.levels.size();
    std::vector<double> levels = plan.levels;
    auto median_it = std::find(levels.begin(), levels.end(), 0.5);
    const bool extra_median = median_it == levels.end();
    if (extra_median) levels.push_back(0.5);
    const std::size_t median_k = extra_median ? K : static_cast<std::size_t>(median_it - levels.begin());
    const std::size_t K_all = levels.size();

    struct Job {
        std::size_t series, window, first;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < collection.series.size(); ++i) {
        const auto starts = window_starts(collection.series[i].length, plan);
        for (std::size_t w = 0; w < starts.size(); ++w) jobs.push_back({i, w, starts[w]});
    }

    const std::size_t d_y = collection.series.front().d_y;
    QuantileScorer pooled(plan.levels), pooled_sum(plan.levels);
    std::vector<double> series_smape(collection.series.size(), 0.0);
    MetricsReport report;
    report.levels = plan.levels;
    report.fingerprint = fingerprint;
    report.n_series = collection.series.size();
    report.n_windows = jobs.size();

    for (std::size_t j0 = 0; j0 < jobs.size(); j0 += plan.batch) {
        const std::size_t n = std::min(plan.batch, jobs.size() - j0);
        std::vector<WindowRef> refs(n);
        for (std::size_t b = 0; b < n; ++b)
            refs[b] = {jobs[j0 + b].series,
                       static_cast<std::ptrdiff_t>(jobs[j0 + b].first) - static_cast<std::ptrdiff_t>(context_length)};
        const auto dist = forecaster(collection, refs);
        if (dist.batch != n || dist.horizon != H || dist.dims != d_y)
            throw DimensionError("forecaster returned a distribution of the wrong shape");

        for (std::size_t b = 0; b < n; ++b) {
            const auto& job = jobs[j0 + b];
            const auto& s = collection.series[job.series];
            const std::size_t row[1] = {b};
            const auto one = dist.select_rows(row);
            const std::uint64_t seed = counter_seed(plan.seed, job.series, job.window);
            const auto q = predictive_quantiles(one, levels, plan.n_samples, seed);  // [H x d x K_all]

            std::vector<double> y(H * d_y), med(H * d_y);
            QuantileScorer local(plan.levels);
            std::vector<double> qk(K);
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t d = 0; d < d_y; ++d) {
                    const double yv = s.target(d, job.first + h);
                    y[h * d_y + d] = yv;
                    const double* qp = &q[(h * d_y + d) * K_all];
                    med[h * d_y + d] = qp[median_k];
                    std::copy_n(qp, K, qk.begin());
                    local.add(yv, qk);
                }
            pooled.merge(local);
            if (d_y > 1) {
                const auto paths = sample_paths(one, plan.n_samples, seed);
                std::vector<double> qs, ys;
                summed_quantiles(paths, y, plan.n_samples, H, d_y, plan.levels, qs, ys);
                for (std::size_t h = 0; h < H; ++h) pooled_sum.add(ys[h], std::span<const double>(qs).subspan(h * K, K));
            }
            WindowScore ws;
            ws.series_id = s.series_id;
            ws.window = job.window;
            ws.forecast_start = s.start + static_cast<std::int64_t>(job.first) * s.freq;
            ws.smape = smape(y, med, d_y);
            ws.crps = local.abs_sum() > 0.0 ? local.crps() : std::numeric_limits<double>::quiet_NaN();
            series_smape[job.series] += ws.smape / static_cast<double>(plan.windows);
            report.windows.push_back(std::move(ws));
        }
    }

    double total = 0.0;
    for (double v : series_smape) total += v;
    report.smape = total / static_cast<double>(series_smape.size());
    report.crps = pooled.crps();
    for (std::size_t k = 0; k < K; ++k) report.wql.push_back(pooled.wql(k));
    if (d_y > 1) report.crps_sum = pooled_sum.crps();
    return report;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j = {{"smape", smape},       {"crps", crps},         {"wql", wql},
                        {"levels", levels},     {"n_series", n_series}, {"n_windows", n_windows},
                        {"fingerprint", fingerprint}};
    j["crps_sum"] = crps_sum ? nlohmann::json(*crps_sum) : nlohmann::json(nullptr);
    auto& rows = j["windows"] = nlohmann::json::array();
    for (const auto& w : windows)
        rows.push_back({{"series_id", w.series_id},
                        {"window", w.window},
                        {"forecast_start", w.forecast_start},
                        {"smape", w.smape},
                        {"crps", std::isfinite(w.crps) ? nlohmann::json(w.crps) : nlohmann::json(nullptr)}});
    return j;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "series_id,window,forecast_start,smape,crps,crps_sum,config_hash\n";
    for (const auto& w : windows) {
        out << w.series_id << ',' << w.window << ',' << w.forecast_start << ',' << w.smape << ',';
        if (std::isfinite(w.crps)) out << w.crps;
        out << ",," << fingerprint << '\n';
    }
    out << "ALL,," << ',' << smape << ',' << crps << ',';
    if (crps_sum) out << *crps_sum;
    out << ',' << fingerprint << '\n';
    return out.str();
}

template Forecaster model_forecaster<float>(Model<float>&);
template Forecaster model_forecaster<double>(Model<double>&);

}  // namespace clops
