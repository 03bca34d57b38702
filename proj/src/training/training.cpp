#include "clops/training.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace clops {

// ---------------------------------------------------------------------- config

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (iterations == 0 || batch_size == 0) fail("iterations and batch_size must be positive");
    if (warmup_steps > iterations) fail("warmup_steps exceeds iterations");
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) fail("peak_lr must be positive");
    if (weight_decay < 0.0 || clip_norm <= 0.0) fail("weight_decay must be >= 0 and clip_norm > 0");
    if (max_bad_steps == 0) fail("max_bad_steps must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"iterations", iterations}, {"batch_size", batch_size},     {"peak_lr", peak_lr},
            {"warmup_steps", warmup_steps}, {"weight_decay", weight_decay}, {"clip_norm", clip_norm},
            {"seed", seed},             {"eval_every", eval_every},     {"val_series", val_series},
            {"prefetch", prefetch},     {"max_bad_steps", max_bad_steps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.val_series = j.value("val_series", c.val_series);
    c.prefetch = j.value("prefetch", c.prefetch);
    c.max_bad_steps = j.value("max_bad_steps", c.max_bad_steps);
    return c;
}

double lr_at(std::size_t step, std::size_t iterations, std::size_t warmup, double peak) {
    if (step > iterations) return 0.0;
    if (step <= warmup) return warmup == 0 ? peak : peak * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(iterations - warmup);
    return std::max(0.0, peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// ----------------------------------------------------------------------- AdamW

template <typename Real>
AdamW<Real>::AdamW(ParameterStore<Real>& params, AdamWConfig config) : params_(&params), config_(config) {
    for (const auto& p : params.items()) {
        m_.emplace_back(p.tensor.size(), Real(0));
        v_.emplace_back(p.tensor.size(), Real(0));
    }
}

template <typename Real>
bool AdamW<Real>::step(double lr) {
    auto& items = params_->items();
    for (const auto& p : items)
        for (Real g : p.tensor.grad())
            if (!std::isfinite(g)) {
                ++skipped_;
                return false;
            }
    ++steps_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const auto decay = static_cast<Real>(1.0 - lr * config_.weight_decay);
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto values = items[i].tensor.values_mut();
        const auto grad = items[i].tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        if (items[i].decay)
            for (auto& x : values) x *= decay;
        if (grad.empty()) {
            // No gradient reached this parameter: treat as zero.
            for (std::size_t k = 0; k < values.size(); ++k) {
                m[k] = static_cast<Real>(b1 * m[k]);
                v[k] = static_cast<Real>(b2 * v[k]);
                values[k] -= static_cast<Real>(lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps));
            }
            continue;
        }
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = grad[k];
            m[k] = static_cast<Real>(b1 * m[k] + (1.0 - b1) * g);
            v[k] = static_cast<Real>(b2 * v[k] + (1.0 - b2) * g * g);
            values[k] -= static_cast<Real>(lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps));
        }
    }
    return true;
}

template <typename Real>
double grad_norm(const ParameterStore<Real>& params) {
    double sq = 0.0;
    for (const auto& p : params.items())
        for (Real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(sq);
}

template <typename Real>
double clip_grad_norm(ParameterStore<Real>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (std::isfinite(norm) && norm > max_norm) {
        const auto factor = static_cast<Real>(max_norm / norm);
        for (auto& p : params.items())
            for (auto& g : p.tensor.grad_mut()) g *= factor;
    }
    return norm;
}

template <typename Real>
void copy_parameters(const Model<Real>& from, Model<Real>& to) {
    for (auto& p : to.params().items()) {
        const auto* src = from.params().find(p.name);
        if (!src) throw ContractError("source model has no parameter '" + p.name + "'");
        if (src->tensor.shape() != p.tensor.shape())
            throw DimensionError("parameter '" + p.name + "' shape mismatch");
        const auto v = src->tensor.values();
        std::copy(v.begin(), v.end(), p.tensor.values_mut().begin());
    }
}

// ------------------------------------------------------------------ checkpoint

namespace {

constexpr char kMagic[] = "CLOPS1";
constexpr std::size_t kMagicSize = 6;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.append(c, n);
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32s(const std::vector<float>& v) {
        for (float x : v) u32(std::bit_cast<std::uint32_t>(x));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}
    void need(std::size_t n) const {
        if (pos_ + n > end_) throw CheckpointError("checkpoint is truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::vector<float> f32s(std::size_t n) {
        need(n * 4);
        std::vector<float> v(n);
        for (auto& x : v) x = std::bit_cast<float>(u32());
        return v;
    }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

private:
    const std::string& data_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

template <typename Real>
std::vector<float> to_f32(std::span<const Real> v) {
    return {v.begin(), v.end()};
}

}  // namespace

template <typename Real>
Checkpoint make_checkpoint(const Model<Real>& model, const AdamW<Real>* optimizer, nlohmann::json meta) {
    Checkpoint c;
    c.config = model.config();
    c.meta = meta.is_null() ? nlohmann::json::object() : std::move(meta);
    for (const auto& p : model.params().items())
        c.tensors.push_back({p.name, p.tensor.shape(), to_f32<Real>(p.tensor.values())});
    if (optimizer) {
        OptimizerBlock o;
        o.steps = optimizer->steps();
        for (const auto& m : optimizer->first_moments()) o.m.push_back(to_f32<Real>(m));
        for (const auto& v : optimizer->second_moments()) o.v.push_back(to_f32<Real>(v));
        c.optimizer = std::move(o);
    }
    return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    Writer w;
    w.bytes(kMagic, kMagicSize);
    w.u8(kCheckpointVersion);
    const nlohmann::json header = {{"model", ckpt.config.to_json()}, {"meta", ckpt.meta}};
    w.str(header.dump());
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.u64(d);
        w.f32s(t.values);
    }
    w.u8(ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        w.u64(ckpt.optimizer->steps);
        for (std::size_t i = 0; i < ckpt.optimizer->m.size(); ++i) {
            w.f32s(ckpt.optimizer->m[i]);
            w.f32s(ckpt.optimizer->v[i]);
        }
    }
    auto& buf = w.buffer();
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    w.u32(crc);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot open '" + tmp + "' for writing");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw CheckpointError("failed writing '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    const std::string data((std::istreambuf_iterator<char>(in)), {});
    if (data.size() < kMagicSize + 1 + 4 || data.compare(0, kMagicSize, kMagic) != 0)
        throw CheckpointError("'" + path + "' is not a CLOPS1 checkpoint");
    const std::size_t body = data.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[body + i])) << (8 * i);
    const auto crc =
        static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(body)));
    if (crc != stored) throw CheckpointError("checkpoint '" + path + "' failed its CRC check");

    Reader r(data, body);
    r.skip(kMagicSize);
    const auto version = r.u8();
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    Checkpoint c;
    const auto header = nlohmann::json::parse(r.str());
    c.config = ModelConfig::from_json(header.at("model"));
    c.meta = header.value("meta", nlohmann::json::object());
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        CheckpointTensor t;
        t.name = r.str();
        const auto rank = r.u32();
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.u64()));
        t.values = r.f32s(shape_numel(t.shape));
        c.tensors.push_back(std::move(t));
    }
    if (r.u8()) {
        OptimizerBlock o;
        o.steps = r.u64();
        for (const auto& t : c.tensors) {
            o.m.push_back(r.f32s(t.values.size()));
            o.v.push_back(r.f32s(t.values.size()));
        }
        c.optimizer = std::move(o);
    }
    if (r.pos() != body) throw CheckpointError("checkpoint has trailing bytes");
    return c;
}

template <typename Real>
std::unique_ptr<Model<Real>> model_from_checkpoint(const Checkpoint& ckpt) {
    auto model = std::make_unique<Model<Real>>(ckpt.config, 0);
    auto& items = model->params().items();
    if (items.size() != ckpt.tensors.size())
        throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                              std::to_string(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& t = ckpt.tensors[i];
        if (t.name != items[i].name || t.shape != items[i].tensor.shape())
            throw CheckpointError("checkpoint tensor '" + t.name + "' does not match model parameter '" +
                                  items[i].name + "'");
        std::copy(t.values.begin(), t.values.end(), items[i].tensor.values_mut().begin());
    }
    return model;
}

template <typename Real>
void restore_optimizer(const Checkpoint& ckpt, AdamW<Real>& optimizer) {
    if (!ckpt.optimizer) throw CheckpointError("checkpoint has no optimizer block (inference-only)");
    const auto& o = *ckpt.optimizer;
    auto& m = optimizer.first_moments();
    auto& v = optimizer.second_moments();
    if (o.m.size() != m.size()) throw CheckpointError("optimizer block does not match the model");
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (o.m[i].size() != m[i].size()) throw CheckpointError("optimizer moment size mismatch");
        std::copy(o.m[i].begin(), o.m[i].end(), m[i].begin());
        std::copy(o.v[i].begin(), o.v[i].end(), v[i].begin());
    }
    optimizer.set_steps(o.steps);
}

// -------------------------------------------------------------------- training

Collection drop_tail(const Collection& collection, std::size_t steps) {
    Collection out;
    out.kind = collection.kind;
    out.freq = collection.freq;
    for (const auto& s : collection.series) {
        if (s.length <= steps) continue;
        if (steps == 0) {
            out.series.push_back(s);
            continue;
        }
        TimeSeriesRecord t = s;
        const std::size_t keep = s.length - steps;
        t.length = keep;
        auto cut = [&](auto& v, std::size_t rows) {
            std::remove_reference_t<decltype(v)> r(rows * keep);
            for (std::size_t d = 0; d < rows; ++d)
                std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(d * s.length), keep,
                            r.begin() + static_cast<std::ptrdiff_t>(d * keep));
            v = std::move(r);
        };
        cut(t.targets, t.d_y);
        cut(t.past_dynamic, t.d_pd);
        cut(t.missing, t.d_y);
        out.series.push_back(std::move(t));
    }
    return out;
}

std::vector<WindowRef> final_windows(const Collection& collection, std::size_t L, std::size_t H,
                                     std::size_t max_windows) {
    const std::size_t n = collection.series.size();
    const std::size_t k = std::min(n, max_windows);
    std::vector<WindowRef> out;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = i * n / k;
        const auto& s = collection.series[idx];
        if (s.length <= H) continue;
        out.push_back({idx, static_cast<std::ptrdiff_t>(s.length) - static_cast<std::ptrdiff_t>(L + H)});
    }
    return out;
}

template <typename Real>
double validation_loss(Model<Real>& model, const Collection& collection, std::span<const WindowRef> windows,
                       std::size_t chunk) {
    if (windows.empty()) throw DataError("no validation windows");
    NoGradGuard guard;
    const auto& c = model.config();
    double total = 0.0;
    for (std::size_t i = 0; i < windows.size(); i += chunk) {
        const auto part = windows.subspan(i, std::min(chunk, windows.size() - i));
        const auto wb = make_window_batch(collection, part, c.context_length, c.horizon, c.lags);
        total += static_cast<double>(model.loss(assemble_inputs<Real>(wb, c)).item()) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(windows.size());
}

BatchPrefetcher::BatchPrefetcher(const Collection& collection, std::size_t B, std::size_t L, std::size_t H,
                                 std::vector<std::size_t> lags, std::uint64_t seed, std::size_t first,
                                 std::size_t last, std::size_t depth)
    : collection_(collection),
      B_(B),
      L_(L),
      H_(H),
      lags_(std::move(lags)),
      seed_(seed),
      next_(first),
      last_(last),
      depth_(depth),
      consumed_(first) {
    if (depth_ == 0) return;
    worker_ = std::thread([this] {
        try {
            for (std::size_t it = next_; it < last_; ++it) {
                auto wb = sample_windows(collection_, B_, L_, H_, lags_, seed_, it);
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stop_ || queue_.size() < depth_; });
                if (stop_) return;
                queue_.push_back(std::move(wb));
                cv_.notify_all();
            }
        } catch (...) {
            std::lock_guard lock(mutex_);
            error_ = std::current_exception();
            cv_.notify_all();
        }
    });
}

BatchPrefetcher::~BatchPrefetcher() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

WindowBatch BatchPrefetcher::next() {
    if (consumed_ >= last_) throw ContractError("prefetcher range exhausted");
    if (depth_ == 0) return sample_windows(collection_, B_, L_, H_, lags_, seed_, consumed_++);
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty() && error_) std::rethrow_exception(error_);
    auto wb = std::move(queue_.front());
    queue_.pop_front();
    ++consumed_;
    cv_.notify_all();
    return wb;
}

template <typename Real>
Trainer<Real>::Trainer(Model<Real>& model, TrainConfig config)
    : model_(&model),
      config_(std::move(config)),
      optimizer_(model.params(), AdamWConfig{0.9, 0.999, 1e-8, config_.weight_decay}) {
    config_.validate();
}

template <typename Real>
TrainResult Trainer<Real>::run(const Collection& train, std::size_t until, const Collection* val_source,
                               std::span<const WindowRef> val_windows) {
    TrainResult result;
    until = std::min(until, config_.iterations);
    if (step_ >= until) return result;
    const auto& mc = model_->config();
    BatchPrefetcher batches(train, config_.batch_size, mc.context_length, mc.horizon, mc.lags, config_.seed, step_,
                            until, config_.prefetch);
    std::ofstream log;
    if (!config_.log_path.empty()) log.open(config_.log_path, std::ios::app);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t bad = 0;

    while (step_ < until) {
        const auto wb = batches.next();
        const auto in = assemble_inputs<Real>(wb, mc);
        model_->params().zero_grad();
        const auto loss = model_->loss(in);
        const double lv = static_cast<double>(loss.item());
        const double lr = lr_at(step_ + 1, config_);
        double gn = std::numeric_limits<double>::quiet_NaN();
        bool applied = false;
        if (std::isfinite(lv)) {
            bad = 0;
            loss.backward();
            gn = clip_grad_norm(model_->params(), config_.clip_norm);
            applied = optimizer_.step(lr);
        } else {
            ++bad;
        }
        if (!applied) ++result.skipped_steps;
        result.losses.push_back(lv);
        ++step_;

        LogEntry e{step_, lv, lr, gn,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), std::nullopt};
        const bool eval_now = config_.eval_every > 0 && (step_ % config_.eval_every == 0 || step_ == until);
        if (eval_now && val_source && !val_windows.empty()) {
            e.val_loss = validation_loss(*model_, *val_source, val_windows);
            result.val_losses.emplace_back(step_, *e.val_loss);
        }
        if (log) {
            nlohmann::json j = {{"step", e.step}, {"loss", std::isfinite(e.loss) ? nlohmann::json(e.loss) : nullptr},
                                {"lr", e.lr},     {"grad_norm", std::isfinite(e.grad_norm) ? nlohmann::json(e.grad_norm) : nullptr},
                                {"wallclock", e.wallclock}};
            if (e.val_loss) j["val_loss"] = *e.val_loss;
            log << j.dump() << '\n';
        }
        if (eval_now && !config_.checkpoint_dir.empty()) {
            std::filesystem::create_directories(config_.checkpoint_dir);
            char name[64];
            std::snprintf(name, sizeof name, "step_%07zu.clops", step_);
            write_checkpoint(checkpoint(), (std::filesystem::path(config_.checkpoint_dir) / name).string());
        }
        if (bad >= config_.max_bad_steps) {
            result.aborted = true;
            break;
        }
    }
    return result;
}

template <typename Real>
Checkpoint Trainer<Real>::checkpoint(nlohmann::json meta) const {
    if (meta.is_null()) meta = nlohmann::json::object();
    meta["step"] = step_;
    meta["train"] = config_.to_json();
    return make_checkpoint(*model_, &optimizer_, std::move(meta));
}

template <typename Real>
void Trainer<Real>::resume(const Checkpoint& ckpt) {
    const auto loaded = model_from_checkpoint<Real>(ckpt);
    copy_parameters(*loaded, *model_);
    restore_optimizer(ckpt, optimizer_);
    step_ = ckpt.meta.value("step", static_cast<std::size_t>(ckpt.optimizer->steps));
}

template <typename Real>
TrainResult pretrain(Model<Real>& model, const Collection& collection, const TrainConfig& config) {
    const auto& mc = model.config();
    const auto train = drop_tail(collection, mc.horizon);
    if (train.series.empty()) throw DataError("no series long enough to train on");
    const auto val = final_windows(collection, mc.context_length, mc.horizon, config.val_series);
    Trainer<Real> trainer(model, config);
    auto result = trainer.run(train, SIZE_MAX, &collection, val);
    if (result.aborted)
        throw NumericError("training aborted after " + std::to_string(config.max_bad_steps) +
                           " consecutive non-finite losses at step " + std::to_string(trainer.step()));
    return result;
}

template <typename Real>
FinetuneResult finetune(Model<Real>& model, const Collection& train_region, const std::vector<double>& lr_grid,
                        const TrainConfig& config) {
    if (lr_grid.empty()) throw ConfigError("fine-tune learning-rate grid is empty");
    const auto& mc = model.config();
    zero_shot(model, train_region);
    const auto train = drop_tail(train_region, mc.horizon);
    if (train.series.empty()) throw DataError("train region is empty after holding out the validation horizon");
    const auto val = final_windows(train_region, mc.context_length, mc.horizon, config.val_series);

    FinetuneResult result;
    result.base_val_loss = validation_loss(model, train_region, val);
    std::unique_ptr<Model<Real>> best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (double lr : lr_grid) {
        auto candidate = std::make_unique<Model<Real>>(mc, 0);
        copy_parameters(model, *candidate);
        TrainConfig c = config;
        c.peak_lr = lr;
        c.log_path.clear();
        c.checkpoint_dir.clear();
        Trainer<Real> trainer(*candidate, c);
        const auto r = trainer.run(train);
        FinetuneRun run{lr, std::numeric_limits<double>::quiet_NaN(), r.aborted};
        if (!run.diverged) {
            run.val_loss = validation_loss(*candidate, train_region, val);
            run.diverged = !std::isfinite(run.val_loss);
        }
        if (!run.diverged && run.val_loss < best_loss) {
            best_loss = run.val_loss;
            best = std::move(candidate);
            result.best_lr = lr;
        }
        result.runs.push_back(run);
    }
    if (best) {
        copy_parameters(*best, model);
    } else {
        result.fell_back = true;
    }
    return result;
}

template <typename Real>
void zero_shot(const Model<Real>& model, const Collection& collection) {
    const auto& c = model.config();
    for (const auto& s : collection.series)
        if (s.d_y != c.d_y || s.d_pd != c.n_past_dynamic || s.static_real.size() != c.n_static)
            throw DimensionError("series '" + s.series_id + "' has d_y=" + std::to_string(s.d_y) +
                                 ", d_pd=" + std::to_string(s.d_pd) + "; model expects d_y=" +
                                 std::to_string(c.d_y) + ", d_pd=" + std::to_string(c.n_past_dynamic));
}

template <typename Real>
std::unique_ptr<Model<Real>> train_from_scratch(const ModelConfig& config, const Collection& train_region,
                                                const TrainConfig& train_config, std::uint64_t init_seed) {
    auto model = std::make_unique<Model<Real>>(config, init_seed);
    zero_shot(*model, train_region);
    pretrain(*model, train_region, train_config);
    return model;
}

#define CLOPS_TRAINING_INSTANTIATE(Real)                                                                        \
    template class AdamW<Real>;                                                                                 \
    template class Trainer<Real>;                                                                               \
    template double grad_norm<Real>(const ParameterStore<Real>&);                                               \
    template double clip_grad_norm<Real>(ParameterStore<Real>&, double);                                        \
    template void copy_parameters<Real>(const Model<Real>&, Model<Real>&);                                      \
    template Checkpoint make_checkpoint<Real>(const Model<Real>&, const AdamW<Real>*, nlohmann::json);          \
    template std::unique_ptr<Model<Real>> model_from_checkpoint<Real>(const Checkpoint&);                       \
    template void restore_optimizer<Real>(const Checkpoint&, AdamW<Real>&);                                     \
    template double validation_loss<Real>(Model<Real>&, const Collection&, std::span<const WindowRef>,          \
                                          std::size_t);                                                         \
    template TrainResult pretrain<Real>(Model<Real>&, const Collection&, const TrainConfig&);                   \
    template FinetuneResult finetune<Real>(Model<Real>&, const Collection&, const std::vector<double>&,          \
                                           const TrainConfig&);                                                 \
    template void zero_shot<Real>(const Model<Real>&, const Collection&);                                       \
    template std::unique_ptr<Model<Real>> train_from_scratch<Real>(const ModelConfig&, const Collection&,       \
                                                                   const TrainConfig&, std::uint64_t);

CLOPS_TRAINING_INSTANTIATE(float)
CLOPS_TRAINING_INSTANTIATE(double)

}  // namespace clops
