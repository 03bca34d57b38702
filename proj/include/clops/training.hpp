#pragma once

// Optimization and training protocols: warmup + cosine schedule, AdamW with a
// decay mask, the pre-training loop, fine-tuning over a learning-rate grid,
// zero-shot and from-scratch adaptation, and the CLOPS1 checkpoint format.

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "clops/features.hpp"
#include "clops/model.hpp"
#include "clops/trace.hpp"
#include "json.hpp"

namespace clops {

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch_size = 64;
    double peak_lr = 1e-3;
    std::size_t warmup_steps = 200;
    double weight_decay = 0.1;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t eval_every = 200;  // validation + optional checkpoint cadence; 0 disables
    std::size_t val_series = 64;   // cap on validation windows
    std::size_t prefetch = 4;      // bounded queue depth; 0 samples inline
    std::size_t max_bad_steps = 10;
    std::string log_path;          // JSON Lines, empty disables
    std::string checkpoint_dir;    // periodic checkpoints, empty disables

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Warmup to `peak` over `warmup` steps, then cosine decay to 0 at
/// `iterations`. Steps past the end return 0.
double lr_at(std::size_t step, std::size_t iterations, std::size_t warmup, double peak);
inline double lr_at(std::size_t step, const TrainConfig& c) {
    return lr_at(step, c.iterations, c.warmup_steps, c.peak_lr);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

/// AdamW over a ParameterStore. Decay is decoupled and applied before the
/// Adam update, only to parameters flagged `decay`.
template <typename Real>
class AdamW {
public:
    AdamW(ParameterStore<Real>& params, AdamWConfig config = {});

    /// Applies one update from the accumulated gradients. Returns false and
    /// leaves everything untouched when any gradient is non-finite.
    bool step(double lr);

    std::uint64_t steps() const { return steps_; }
    std::uint64_t skipped() const { return skipped_; }
    const AdamWConfig& config() const { return config_; }

    std::vector<std::vector<Real>>& first_moments() { return m_; }
    std::vector<std::vector<Real>>& second_moments() { return v_; }
    const std::vector<std::vector<Real>>& first_moments() const { return m_; }
    const std::vector<std::vector<Real>>& second_moments() const { return v_; }
    void set_steps(std::uint64_t steps) { steps_ = steps; }

private:
    ParameterStore<Real>* params_;
    AdamWConfig config_;
    std::vector<std::vector<Real>> m_, v_;
    std::uint64_t steps_ = 0;
    std::uint64_t skipped_ = 0;
};

/// Global L2 norm of all parameter gradients.
template <typename Real>
double grad_norm(const ParameterStore<Real>& params);

/// Scales gradients so their global norm is at most max_norm; returns the norm before clipping.
template <typename Real>
double clip_grad_norm(ParameterStore<Real>& params, double max_norm);

/// Copies parameter values by name; shapes must agree.
template <typename Real>
void copy_parameters(const Model<Real>& from, Model<Real>& to);

// ------------------------------------------------------------------ checkpoint

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct OptimizerBlock {
    std::uint64_t steps = 0;
    std::vector<std::vector<float>> m, v;  // parameter order
};

struct Checkpoint {
    ModelConfig config;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<CheckpointTensor> tensors;
    std::optional<OptimizerBlock> optimizer;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

template <typename Real>
Checkpoint make_checkpoint(const Model<Real>& model, const AdamW<Real>* optimizer, nlohmann::json meta = {});
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

/// Builds a model from the stored config and values.
template <typename Real>
std::unique_ptr<Model<Real>> model_from_checkpoint(const Checkpoint& ckpt);
template <typename Real>
void restore_optimizer(const Checkpoint& ckpt, AdamW<Real>& optimizer);

// -------------------------------------------------------------------- training

/// Drops the last `steps` observations of every series.
Collection drop_tail(const Collection& collection, std::size_t steps);

/// The last L+H window of up to `max_windows` series, spread evenly over the collection.
std::vector<WindowRef> final_windows(const Collection& collection, std::size_t L, std::size_t H,
                                     std::size_t max_windows);

/// Mean head loss over fixed windows, evaluated in chunks without recording a graph.
template <typename Real>
double validation_loss(Model<Real>& model, const Collection& collection, std::span<const WindowRef> windows,
                       std::size_t chunk = 64);

struct LogEntry {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    double wallclock = 0.0;
    std::optional<double> val_loss;
};

struct TrainResult {
    std::vector<double> losses;  // one per executed step, NaN for skipped steps
    std::vector<std::pair<std::size_t, double>> val_losses;
    std::size_t skipped_steps = 0;
    bool aborted = false;
};

/// Windows for a range of iterations, produced ahead of time by one worker
/// thread through a bounded queue. Batches are a pure function of
/// (seed, iteration), so prefetch depth never changes results.
class BatchPrefetcher {
public:
    BatchPrefetcher(const Collection& collection, std::size_t B, std::size_t L, std::size_t H,
                    std::vector<std::size_t> lags, std::uint64_t seed, std::size_t first, std::size_t last,
                    std::size_t depth);
    ~BatchPrefetcher();
    BatchPrefetcher(const BatchPrefetcher&) = delete;
    BatchPrefetcher& operator=(const BatchPrefetcher&) = delete;

    /// Next batch in iteration order; throws when the range is exhausted.
    WindowBatch next();

private:
    const Collection& collection_;
    std::size_t B_, L_, H_;
    std::vector<std::size_t> lags_;
    std::uint64_t seed_;
    std::size_t next_, last_, depth_;
    std::deque<WindowBatch> queue_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::atomic<bool> stop_{false};
    std::exception_ptr error_;
    std::thread worker_;
    std::size_t consumed_;
};

/// Stateful training loop: optimizer state and step counter live here so a
/// run can be checkpointed and resumed mid-schedule.
template <typename Real>
class Trainer {
public:
    Trainer(Model<Real>& model, TrainConfig config);

    /// Trains on windows sampled from `train` until step `until` (or the end
    /// of the schedule). Validation runs every eval_every steps on `val_windows`
    /// over `val_source` when given.
    TrainResult run(const Collection& train, std::size_t until = SIZE_MAX, const Collection* val_source = nullptr,
                    std::span<const WindowRef> val_windows = {});

    std::size_t step() const { return step_; }
    AdamW<Real>& optimizer() { return optimizer_; }
    const TrainConfig& config() const { return config_; }

    Checkpoint checkpoint(nlohmann::json meta = {}) const;
    /// Restores parameters, optimizer moments and the step counter.
    void resume(const Checkpoint& ckpt);

private:
    Model<Real>* model_;
    TrainConfig config_;
    AdamW<Real> optimizer_;
    std::size_t step_ = 0;
};

/// Pre-training with a held-out final horizon per series for validation.
template <typename Real>
TrainResult pretrain(Model<Real>& model, const Collection& collection, const TrainConfig& config);

struct FinetuneRun {
    double lr = 0.0;
    double val_loss = 0.0;
    bool diverged = false;
};

struct FinetuneResult {
    std::vector<FinetuneRun> runs;
    double base_val_loss = 0.0;  // the starting model on the same validation windows
    std::optional<double> best_lr;  // empty when every run diverged
    bool fell_back = false;
};

inline std::vector<double> default_lr_grid() { return {1e-3, 1e-4, 1e-5, 1e-6, 1e-7}; }

/// Fine-tunes a copy of `model` per learning rate on `train_region` minus its
/// last horizon, validates on that horizon, and leaves the best parameters in
/// `model`. When every run diverges `model` is left unchanged and flagged.
template <typename Real>
FinetuneResult finetune(Model<Real>& model, const Collection& train_region, const std::vector<double>& lr_grid,
                        const TrainConfig& config);

/// Checks that the model can consume the collection; no parameter changes.
template <typename Real>
void zero_shot(const Model<Real>& model, const Collection& collection);

/// Fresh model of the same architecture trained on `train_region` only.
template <typename Real>
std::unique_ptr<Model<Real>> train_from_scratch(const ModelConfig& config, const Collection& train_region,
                                                const TrainConfig& train_config, std::uint64_t init_seed);

}  // namespace clops
