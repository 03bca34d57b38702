#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "clops/model.hpp"
#include "doctest.h"

using namespace clops;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(gen);
    return T::from_values(std::move(shape), std::move(v));
}

ModelConfig small_config(Variant variant, std::size_t l = 8, std::size_t h = 4) {
    ModelConfig c;
    c.variant = variant;
    c.layers = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.n_heads = 2;
    c.d_kv = 8;
    c.context_length = l;
    c.horizon = h;
    c.lags = {1, 2, 4};
    return c;
}

ModelInput<double> random_input(const ModelConfig& c, std::size_t batch, unsigned seed) {
    ModelInput<double> in;
    in.context = random_tensor({batch, c.context_length, c.d_in()}, seed);
    in.future = random_tensor({batch, c.horizon, c.d_in()}, seed + 1);
    in.future_targets = random_tensor({batch, c.horizon, c.d_y}, seed + 2);
    return in;
}

// Copy of x with rows [from, T) of axis 1 replaced by fresh noise.
T perturb_from(const T& x, std::size_t from, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> v(x.values().begin(), x.values().end());
    const std::size_t t = x.dim(1), d = x.dim(2);
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t i = from; i < t; ++i)
            for (std::size_t j = 0; j < d; ++j) v[(b * t + i) * d + j] += noise(gen);
    return T::from_values(x.shape(), std::move(v));
}

double relative_gap(double got, double want) { return std::abs(got - want) / want; }

}  // namespace

TEST_CASE("size presets reproduce the published parameter counts") {
    const std::pair<const char*, double> expected[] = {{"base", 10.7e6}, {"large", 28.4e6}, {"xlarge", 85.1e6}};
    for (const auto& [name, count] : expected) {
        Model<float> model(model_preset(name), 0);
        CHECK(relative_gap(static_cast<double>(model.parameter_count()), count) < 0.03);
    }
}

TEST_CASE("decay mask partitions the parameters") {
    Model<float> model(model_preset("tiny"), 0);
    std::size_t decayed = 0, excluded = 0;
    for (const auto& p : model.params().items()) {
        (p.decay ? decayed : excluded) += p.tensor.size();
        const bool bias_or_norm = p.name.ends_with(".bias") || p.name.ends_with(".gain");
        CHECK(p.decay != bias_or_norm);
    }
    CHECK(decayed + excluded == model.parameter_count());
}

TEST_CASE("attention examples") {
    auto v = random_tensor({1, 1, 1, 4}, 1);
    auto out = scaled_dot_attention(random_tensor({1, 1, 1, 4}, 2), random_tensor({1, 1, 1, 4}, 3), v, T{});
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.values()[i] == doctest::Approx(v.values()[i]));

    auto vals = random_tensor({1, 1, 3, 2}, 4);
    out = scaled_dot_attention(T::zeros({1, 1, 2, 2}), random_tensor({1, 1, 3, 2}, 5), vals, T{});
    for (std::size_t j = 0; j < 2; ++j) {
        const double m = (vals.at({0, 0, 0, j}) + vals.at({0, 0, 1, j}) + vals.at({0, 0, 2, j})) / 3;
        CHECK(out.at({0, 0, 1, j}) == doctest::Approx(m));
    }

    const auto mask = build_attention_mask(AttentionMask::full_causal, 2, 1);
    std::vector<double> bias(9);
    for (std::size_t i = 0; i < 9; ++i) bias[i] = mask[i] ? 0.0 : -1e9;
    out = scaled_dot_attention(random_tensor({1, 1, 3, 2}, 6), random_tensor({1, 1, 3, 2}, 7), vals,
                               T::from_values({3, 3}, bias));
    CHECK(out.at({0, 0, 0, 0}) == doctest::Approx(vals.at({0, 0, 0, 0})));
    CHECK(out.at({0, 0, 0, 1}) == doctest::Approx(vals.at({0, 0, 0, 1})));

    CHECK_THROWS_AS(scaled_dot_attention(vals, vals, vals, T::zeros({2, 2})), DimensionError);
}

TEST_CASE("attention masks") {
    const auto full = build_attention_mask(AttentionMask::full, 2, 2);
    CHECK(std::accumulate(full.begin(), full.end(), 0) == 16);

    const auto causal = build_attention_mask(AttentionMask::full_causal, 3, 2);
    for (std::size_t t = 0; t < 5; ++t)
        CHECK(std::accumulate(causal.begin() + t * 5, causal.begin() + (t + 1) * 5, 0) == static_cast<int>(t + 1));

    const std::size_t l = 3, h = 2, n = l + h;
    const auto mc = build_attention_mask(AttentionMask::mask_causal, l, h);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            bool expect = i < l ? j < l : j <= i;
            CHECK(static_cast<bool>(mc[i * n + j]) == expect);
        }
}

TEST_CASE("rope rotation properties") {
    auto x = random_tensor({1, 3, 8}, 9);
    const std::vector<double> zeros{0, 0, 0};
    auto same = rope_rotate(x, zeros);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.values()[i] == x.values()[i]);

    const std::vector<double> pos{3, 17, 250};
    auto r = rope_rotate(x, pos);
    for (std::size_t i = 0; i < x.size(); i += 2) {
        const double a = std::hypot(x.values()[i], x.values()[i + 1]);
        const double b = std::hypot(r.values()[i], r.values()[i + 1]);
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }

    // Scores depend only on the offset between query and key positions.
    auto q = random_tensor({1, 1, 16}, 10), k = random_tensor({1, 1, 16}, 11);
    auto score = [&](double i, double j) {
        const std::vector<double> pi{i}, pj{j};
        return matmul_nt(rope_rotate(q, pi), rope_rotate(k, pj)).item();
    };
    for (double c : {1.0, 7.0, 123.0}) CHECK(std::abs(score(5, 2) - score(5 + c, 2 + c)) < 1e-5);
}

TEST_CASE("sinusoidal table") {
    const std::vector<double> pos{0, 1, 50};
    const auto t = sinusoidal_table(pos, 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(t[i] == (i % 2 == 0 ? 0.0 : 1.0));
    for (double v : t) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("learned positional tables are reproducible under a seed") {
    auto c = small_config(Variant::masked_encoder);
    c.pe = PositionalEncoding::learned;
    Model<double> a(c, 5), b(c, 5);
    const auto* pa = a.params().find("learned_pe");
    const auto* pb = b.params().find("learned_pe");
    REQUIRE(pa);
    CHECK(pa->tensor.dim(0) == c.context_length + c.horizon);
    CHECK(std::equal(pa->tensor.values().begin(), pa->tensor.values().end(), pb->tensor.values().begin()));
}

TEST_CASE("every variant emits B x H x d_y parameters") {
    for (auto v : {Variant::masked_encoder, Variant::enc_dec_ims, Variant::enc_dec_dms, Variant::encoder_mean,
                   Variant::encoder_cls, Variant::encoder_flatten}) {
        auto c = small_config(v);
        Model<double> model(c, 1);
        auto out = model.forward(random_input(c, 3, 20));
        CHECK(out.mu.shape() == Shape{3, c.horizon, 1});
        CHECK(out.sigma.shape() == Shape{3, c.horizon, 1});
    }
}

TEST_CASE("attention score sizes per variant") {
    const std::size_t l = 8, h = 4;
    auto check = [&](Variant v, std::size_t tq, std::size_t tk) {
        auto c = small_config(v, l, h);
        Model<double> model(c, 1);
        model.forward(random_input(c, 1, 3));
        CHECK(model.last_trace().score_shapes.front() == std::pair<std::size_t, std::size_t>{tq, tk});
    };
    check(Variant::masked_encoder, l + h, l + h);
    check(Variant::encoder_mean, l, l);
    check(Variant::encoder_flatten, l, l);
    check(Variant::encoder_cls, l + 1, l + 1);
}

TEST_CASE("decoder iteration counts") {
    auto c = small_config(Variant::enc_dec_ims);
    Model<double> ims(c, 1);
    ims.predict(random_input(c, 2, 4));
    CHECK(ims.last_trace().decoder_iterations == c.horizon);
    c.variant = Variant::enc_dec_dms;
    Model<double> dms(c, 1);
    dms.predict(random_input(c, 2, 4));
    CHECK(dms.last_trace().decoder_iterations == 1);
}

TEST_CASE("iterative decoding agrees with teacher forcing on its own mean path") {
    for (auto head : {HeadKind::student_t, HeadKind::iqf}) {
        auto c = small_config(Variant::enc_dec_ims);
        c.head = head;
        Model<double> model(c, 2);
        auto in = random_input(c, 2, 30);
        auto infer = model.forward(in, ForwardMode::infer);
        in.future_targets = head == HeadKind::iqf ? mean_axis(infer.quantiles, 3) : infer.mu;
        auto train = model.forward(in, ForwardMode::train);
        const auto a = head == HeadKind::iqf ? infer.quantiles.values() : infer.mu.values();
        const auto b = head == HeadKind::iqf ? train.quantiles.values() : train.mu.values();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
    }
}

TEST_CASE("full causal mask: predictions ignore later inputs") {
    auto c = small_config(Variant::masked_encoder);
    c.attn_mask = AttentionMask::full_causal;
    Model<double> model(c, 3);
    auto in = random_input(c, 2, 40);
    const auto base = model.forward(in).mu;
    for (std::size_t t = 0; t + 1 < c.horizon; ++t) {
        auto probe = in;
        probe.future = perturb_from(in.future, t + 1, 50 + static_cast<unsigned>(t));
        const auto out = model.forward(probe).mu;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t s = 0; s <= t; ++s) CHECK(std::abs(out.at({b, s, 0}) - base.at({b, s, 0})) <= 1e-6);
    }
}

TEST_CASE("without positional information the masked encoder ignores context order") {
    auto c = small_config(Variant::masked_encoder);
    c.pe = PositionalEncoding::datetime_only;
    c.use_datetime = false;
    Model<double> model(c, 4);
    auto in = random_input(c, 1, 60);
    const auto base = model.forward(in).mu;

    std::vector<std::size_t> order(c.context_length);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937 gen(1);
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<double> shuffled(in.context.size());
    const std::size_t d = c.d_in();
    for (std::size_t i = 0; i < order.size(); ++i)
        std::copy_n(in.context.values().begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                    shuffled.begin() + static_cast<std::ptrdiff_t>(i * d));
    in.context = T::from_values(in.context.shape(), shuffled);
    const auto out = model.forward(in).mu;
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.values()[i] == doctest::Approx(base.values()[i]).epsilon(1e-9));
}

TEST_CASE("flatten head rejects a different context length") {
    auto c = small_config(Variant::encoder_flatten);
    Model<double> model(c, 1);
    auto other = c;
    other.context_length = 6;
    CHECK_THROWS_AS(model.forward(random_input(other, 1, 3)), ContractError);
}

TEST_CASE("identical batches give identical outputs") {
    auto c = small_config(Variant::masked_encoder);
    Model<float> model(c, 8);
    ModelInput<float> in;
    in.context = Tensor<float>::full({2, c.context_length, c.d_in()}, 0.3f);
    in.future = Tensor<float>::full({2, c.horizon, c.d_in()}, -0.2f);
    const auto a = model.predict(in);
    const auto b = model.predict(in);
    CHECK(a.params == b.params);
}

TEST_CASE("padded context positions are ignored") {
    for (auto v : {Variant::masked_encoder, Variant::enc_dec_dms, Variant::encoder_mean, Variant::encoder_flatten}) {
        auto c = small_config(v);
        Model<double> model(c, 9);
        auto in = random_input(c, 1, 70);
        in.context_valid.assign(c.context_length, 1);
        for (std::size_t i = 0; i < 3; ++i) in.context_valid[i] = 0;
        const auto base = model.forward(in).mu;
        auto probe = in;
        std::vector<double> ctx(in.context.values().begin(), in.context.values().end());
        for (std::size_t i = 0; i < 3 * c.d_in(); ++i) ctx[i] += 5.0;
        probe.context = T::from_values(in.context.shape(), ctx);
        const auto out = model.forward(probe).mu;
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out.values()[i] - base.values()[i]) < 1e-9);
    }
}

TEST_CASE("model losses pass the finite-difference check in the inputs") {
    for (auto v : {Variant::masked_encoder, Variant::enc_dec_ims, Variant::encoder_cls}) {
        auto c = small_config(v);
        c.pe = PositionalEncoding::rope;
        Model<double> model(c, 11);
        auto in = random_input(c, 2, 80);
        const double err = finite_diff_check(
            [&](const T& ctx) {
                auto probe = in;
                probe.context = ctx;
                return model.loss(probe);
            },
            in.context);
        CHECK(err < 1e-4);
    }
}
