#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unistd.h>

#include <zlib.h>

#include "clops/training.hpp"
#include "doctest.h"

using namespace clops;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(Variant v = Variant::masked_encoder) {
    ModelConfig c;
    c.variant = v;
    c.layers = 1;
    c.d_model = 16;
    c.d_ff = 32;
    c.n_heads = 2;
    c.d_kv = 8;
    c.context_length = 16;
    c.horizon = 4;
    c.lags = {1, 2, 4};
    return c;
}

TrainConfig quick_train(std::size_t iterations = 60) {
    TrainConfig t;
    t.iterations = iterations;
    t.batch_size = 8;
    t.warmup_steps = 10;
    t.peak_lr = 3e-3;
    t.eval_every = 20;
    t.val_series = 8;
    return t;
}

std::string temp_file(const std::string& name) {
    return (fs::temp_directory_path() / ("clops_training_test_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

// Independent single-tensor AdamW reference.
struct RefAdam {
    std::vector<double> p, m, v;
    int t = 0;
    void step(const std::vector<double>& g, double lr, double wd, bool decay) {
        ++t;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (decay) p[i] -= lr * wd * p[i];
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            p[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
    }
};

}  // namespace

TEST_CASE("learning-rate schedule examples") {
    CHECK(lr_at(0, 100000, 10000, 1e-3) == 0.0);
    CHECK(lr_at(10000, 100000, 10000, 1e-3) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(5000, 100000, 10000, 1e-3) == doctest::Approx(5e-4));
    CHECK(lr_at(100000, 100000, 10000, 1e-3) <= 1e-9);
    CHECK(lr_at(100001, 100000, 10000, 1e-3) == 0.0);
    // Continuous at the junction.
    CHECK(lr_at(10001, 100000, 10000, 1e-3) == doctest::Approx(1e-3).epsilon(1e-8));
    // Halfway through the cosine phase the rate is half the peak.
    CHECK(lr_at(55000, 100000, 10000, 1e-3) == doctest::Approx(5e-4).epsilon(1e-9));
    double prev = 1.0;
    for (std::size_t s = 10000; s <= 100000; s += 997) {
        const double lr = lr_at(s, 100000, 10000, 1e-3);
        CHECK(lr <= prev);
        CHECK(lr >= 0.0);
        prev = lr;
    }
    CHECK(lr_at(0, 10, 0, 1e-3) == 1e-3);
}

TEST_CASE("AdamW with zero gradients only applies decoupled decay") {
    ParameterStore<double> store(1);
    auto w = store.add("w.weight", {4}, Init::trunc_normal, true);
    auto b = store.add("w.bias", {4}, Init::trunc_normal, false);
    const std::vector<double> w0(w.values().begin(), w.values().end()), b0(b.values().begin(), b.values().end());
    w.grad_mut();
    AdamW<double> opt(store, {0.9, 0.999, 1e-8, 0.1});
    for (auto& p : store.items()) std::fill(p.tensor.grad_mut().begin(), p.tensor.grad_mut().end(), 0.0);
    REQUIRE(opt.step(1e-3));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(w.values()[i] == doctest::Approx(w0[i] * 0.9999).epsilon(1e-14));
        CHECK(b.values()[i] == b0[i]);
    }
}

TEST_CASE("AdamW matches an independent reference and descends") {
    ParameterStore<double> store(3);
    auto w = store.add("w", {3}, Init::trunc_normal, true);
    RefAdam ref{{w.values().begin(), w.values().end()}, std::vector<double>(3), std::vector<double>(3)};
    AdamW<double> opt(store, {0.9, 0.999, 1e-8, 0.05});
    for (int t = 0; t < 25; ++t) {
        std::vector<double> g{0.3 * t - 2.0, 1.0, -0.5 + 0.01 * t};
        std::copy(g.begin(), g.end(), w.grad_mut().begin());
        opt.step(1e-2);
        ref.step(g, 1e-2, 0.05, true);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.values()[i] == doctest::Approx(ref.p[i]).epsilon(1e-12));

    ParameterStore<double> s2(4);
    auto x = s2.add("x", {2}, Init::zeros, true);
    AdamW<double> o2(s2, {0.9, 0.999, 1e-8, 0.0});
    for (int t = 0; t < 50; ++t) {
        x.grad_mut()[0] = 0.7;
        x.grad_mut()[1] = -0.7;
        o2.step(1e-2);
    }
    CHECK(x.values()[0] < 0.0);
    CHECK(x.values()[1] > 0.0);
}

TEST_CASE("AdamW skips non-finite gradients") {
    ParameterStore<float> store(1);
    auto w = store.add("w", {2}, Init::trunc_normal, true);
    const std::vector<float> before(w.values().begin(), w.values().end());
    AdamW<float> opt(store);
    w.grad_mut()[0] = std::nanf("");
    w.grad_mut()[1] = 1.0f;
    CHECK_FALSE(opt.step(1e-3));
    CHECK(opt.skipped() == 1);
    CHECK(opt.steps() == 0);
    CHECK(std::equal(before.begin(), before.end(), w.values().begin()));
}

TEST_CASE("gradient clipping caps the global norm") {
    ParameterStore<double> store(1);
    auto a = store.add("a", {2}, Init::zeros, true);
    auto b = store.add("b", {1}, Init::zeros, true);
    a.grad_mut()[0] = 3.0;
    a.grad_mut()[1] = 0.0;
    b.grad_mut()[0] = 4.0;
    CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
    CHECK(grad_norm(store) == doctest::Approx(1.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(clip_grad_norm(store, 2.0) == doctest::Approx(1.0));
    CHECK(grad_norm(store) == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip gives identical forecasts") {
    const auto cfg = tiny_config(Variant::enc_dec_ims);
    Model<float> model(cfg, 5);
    AdamW<float> opt(model.params());
    const auto path = temp_file("rt.clops");
    write_checkpoint(make_checkpoint(model, &opt, {{"note", "x"}}), path);
    CHECK_FALSE(fs::exists(path + ".tmp"));
    const auto ck = read_checkpoint(path);
    CHECK(ck.meta["note"] == "x");
    CHECK(ck.optimizer.has_value());
    const auto loaded = model_from_checkpoint<float>(ck);

    const auto data = gen_synthetic(4, 200, 1);
    const auto wb = sample_windows(data, 4, cfg.context_length, cfg.horizon, cfg.lags, 0, 0);
    const auto in = assemble_inputs<float>(wb, cfg);
    CHECK(model.predict(in).params == loaded->predict(in).params);

    // Corrupt one byte in the middle.
    auto bytes = slurp(path);
    bytes[bytes.size() / 2] ^= 0x5a;
    spit(path, bytes);
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
    fs::remove(path);
}

TEST_CASE("checkpoint without optimizer block is inference-only") {
    const auto cfg = tiny_config();
    Model<float> model(cfg, 2);
    const auto path = temp_file("noopt.clops");
    write_checkpoint(make_checkpoint<float>(model, nullptr), path);
    const auto ck = read_checkpoint(path);
    CHECK_FALSE(ck.optimizer.has_value());
    const auto loaded = model_from_checkpoint<float>(ck);
    AdamW<float> opt(loaded->params());
    CHECK_THROWS_AS(restore_optimizer(ck, opt), CheckpointError);
    fs::remove(path);
}

TEST_CASE("checkpoint with another version byte is rejected") {
    Model<float> model(tiny_config(), 2);
    const auto path = temp_file("ver.clops");
    write_checkpoint(make_checkpoint<float>(model, nullptr), path);
    auto bytes = slurp(path);
    CHECK(bytes.compare(0, 6, "CLOPS1") == 0);
    bytes[6] = 2;
    const std::size_t body = bytes.size() - 4;
    const auto crc = static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), body));
    for (int i = 0; i < 4; ++i) bytes[body + i] = static_cast<char>((crc >> (8 * i)) & 0xff);
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("version"), CheckpointError);
    fs::remove(path);
}

TEST_CASE("short pre-training run lowers the loss") {
    const auto data = gen_synthetic(40, 400, 3);
    Model<float> model(tiny_config(), 1);
    auto tc = quick_train(240);
    const auto r = pretrain(model, data, tc);
    REQUIRE(r.losses.size() == 240);
    const auto q = r.losses.size() / 4;
    const double first = std::accumulate(r.losses.begin(), r.losses.begin() + q, 0.0) / q;
    const double last = std::accumulate(r.losses.end() - q, r.losses.end(), 0.0) / q;
    CHECK(last < first);
    CHECK(r.val_losses.size() == 240 / 20);
    CHECK(r.val_losses.back().second < r.val_losses.front().second);
}

TEST_CASE("training is deterministic and independent of prefetch depth") {
    const auto data = gen_synthetic(12, 300, 4);
    auto run = [&](std::size_t prefetch) {
        Model<float> model(tiny_config(Variant::enc_dec_dms), 7);
        auto tc = quick_train(100);
        tc.prefetch = prefetch;
        Trainer<float> trainer(model, tc);
        const auto r = trainer.run(drop_tail(data, 4));
        const auto path = temp_file("det" + std::to_string(prefetch) + ".clops");
        write_checkpoint(trainer.checkpoint(), path);
        auto bytes = slurp(path);
        fs::remove(path);
        return std::make_pair(r.losses, bytes);
    };
    const auto a = run(4), b = run(4), c = run(0);
    REQUIRE(a.first.size() == 100);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first == c.first);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted trajectory") {
    const auto data = drop_tail(gen_synthetic(10, 300, 5), 4);
    const auto tc = quick_train(60);

    Model<float> full(tiny_config(), 3);
    Trainer<float> t_full(full, tc);
    const auto r_full = t_full.run(data);

    Model<float> first(tiny_config(), 3);
    Trainer<float> t_first(first, tc);
    const auto r1 = t_first.run(data, 25);
    const auto path = temp_file("resume.clops");
    write_checkpoint(t_first.checkpoint(), path);

    const auto ck = read_checkpoint(path);
    auto resumed = model_from_checkpoint<float>(ck);
    Trainer<float> t_resumed(*resumed, tc);
    t_resumed.resume(ck);
    CHECK(t_resumed.step() == 25);
    const auto r2 = t_resumed.run(data);

    std::vector<double> joined = r1.losses;
    joined.insert(joined.end(), r2.losses.begin(), r2.losses.end());
    CHECK(joined == r_full.losses);
    const auto p_full = full.params().items();
    const auto& p_res = resumed->params().items();
    for (std::size_t i = 0; i < p_full.size(); ++i) {
        const auto x = p_full[i].tensor.values(), y = p_res[i].tensor.values();
        REQUIRE(std::equal(x.begin(), x.end(), y.begin()));
    }
    fs::remove(path);
}

TEST_CASE("training aborts after repeated non-finite losses") {
    auto data = gen_synthetic(4, 200, 6);
    for (auto& s : data.series) std::fill(s.targets.begin(), s.targets.end(), std::nanf(""));
    Model<float> model(tiny_config(), 1);
    auto tc = quick_train(50);
    Trainer<float> trainer(model, tc);
    const auto r = trainer.run(data);
    CHECK(r.aborted);
    CHECK(r.losses.size() == 10);
    CHECK(r.skipped_steps == 10);
    CHECK_THROWS_AS(pretrain(model, data, tc), NumericError);
}

TEST_CASE("training log is JSON lines with the documented fields") {
    const auto data = gen_synthetic(6, 200, 2);
    Model<float> model(tiny_config(), 1);
    auto tc = quick_train(20);
    tc.eval_every = 10;
    tc.log_path = temp_file("log.jsonl");
    tc.checkpoint_dir = temp_file("ckpts");
    pretrain(model, data, tc);
    std::ifstream in(tc.log_path);
    std::string line;
    std::size_t n = 0, with_val = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* k : {"step", "loss", "lr", "grad_norm", "wallclock"}) CHECK(j.contains(k));
        with_val += j.contains("val_loss");
        ++n;
    }
    CHECK(n == 20);
    CHECK(with_val == 2);
    CHECK(fs::exists(fs::path(tc.checkpoint_dir) / "step_0000020.clops"));
    fs::remove(tc.log_path);
    fs::remove_all(tc.checkpoint_dir);
}

TEST_CASE("fine-tuning selects from the grid and falls back when all runs diverge") {
    const auto cfg = tiny_config();
    const auto region = gen_synthetic(8, 200, 8);
    Model<float> model(cfg, 4);
    auto tc = quick_train(30);

    Model<float> single(cfg, 4);
    const auto r1 = finetune(single, region, {1e-3}, tc);
    REQUIRE(r1.runs.size() == 1);
    CHECK(r1.best_lr == 1e-3);
    CHECK_FALSE(r1.fell_back);

    Model<float> again(cfg, 4);
    const auto r2 = finetune(again, region, {1e-3}, tc);
    CHECK(r2.runs[0].val_loss == r1.runs[0].val_loss);

    Model<float> graded(cfg, 4);
    const auto r3 = finetune(graded, region, {1e-3, 1e-5, 1e-7}, tc);
    CHECK(r3.runs.size() == 3);
    double best = 1e300;
    for (const auto& r : r3.runs) best = std::min(best, r.val_loss);
    CHECK(r3.best_lr.has_value());
    CHECK(best == doctest::Approx(validation_loss(graded, region,
                                                  final_windows(region, cfg.context_length, cfg.horizon, tc.val_series))));

    // Poison everything the training windows can reach while the validation
    // windows (the last L + H steps plus the longest lag) stay clean.
    auto bad = region;
    for (auto& s : bad.series)
        for (std::size_t t = 0; t + cfg.context_length + cfg.horizon + 5 <= s.length; ++t) s.targets[t] = std::nanf("");
    Model<float> victim(cfg, 4);
    const auto before = make_checkpoint<float>(victim, nullptr).tensors;
    const auto r4 = finetune(victim, bad, {1e-3, 1e-4}, tc);
    CHECK(r4.fell_back);
    CHECK_FALSE(r4.best_lr.has_value());
    for (const auto& r : r4.runs) CHECK(r.diverged);
    const auto after = make_checkpoint<float>(victim, nullptr).tensors;
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].values == after[i].values);
    CHECK(std::isfinite(r4.base_val_loss));
}

TEST_CASE("zero-shot leaves parameters alone and checks dimensions") {
    const auto cfg = tiny_config();
    Model<float> model(cfg, 4);
    const auto before = make_checkpoint<float>(model, nullptr).tensors;
    zero_shot(model, gen_synthetic(3, 100, 1));
    const auto after = make_checkpoint<float>(model, nullptr).tensors;
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].values == after[i].values);
    auto two = gen_synthetic(1, 100, 1);
    two.series[0].d_y = 2;
    CHECK_THROWS_AS(zero_shot(model, two), DimensionError);
}

TEST_CASE("from-scratch mode trains a fresh model on the train region") {
    const auto cfg = tiny_config();
    const auto region = gen_synthetic(6, 200, 9);
    const auto m = train_from_scratch<float>(cfg, region, quick_train(20), 11);
    Model<float> fresh(cfg, 11);
    const auto a = make_checkpoint<float>(*m, nullptr).tensors, b = make_checkpoint<float>(fresh, nullptr).tensors;
    bool changed = false;
    for (std::size_t i = 0; i < a.size(); ++i) changed = changed || a[i].values != b[i].values;
    CHECK(changed);
}

TEST_CASE("drop_tail and final_windows") {
    auto c = gen_synthetic(5, 50, 1);
    c.series[2].length = 3;
    c.series[2].targets.resize(3);
    c.series[2].missing.resize(3);
    const auto d = drop_tail(c, 4);
    CHECK(d.series.size() == 4);
    CHECK(d.series[0].length == 46);
    CHECK(std::equal(d.series[0].targets.begin(), d.series[0].targets.end(), c.series[0].targets.begin()));
    const auto w = final_windows(c, 16, 4, 10);
    CHECK(w.size() == 4);
    CHECK(w[0].start == 30);
    const auto w2 = final_windows(gen_synthetic(10, 50, 1), 16, 4, 3);
    CHECK(w2.size() == 3);
}
