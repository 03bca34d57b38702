#include <cmath>
#include <random>
#include <stdexcept>

#include "clops/model.hpp"
#include "clops/rng.hpp"

namespace clops {

// ------------------------------------------------------------------ parameters

namespace {

std::uint64_t name_hash(const std::string& name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr double kInitStd = 0.02;

}  // namespace

template <typename Real>
Tensor<Real> ParameterStore<Real>::add(const std::string& name, Shape shape, Init init, bool decay) {
    if (find(name)) throw std::logic_error("duplicate parameter name '" + name + "'");
    std::vector<Real> values(shape_numel(shape), Real(0));
    if (init == Init::ones) std::fill(values.begin(), values.end(), Real(1));
    if (init == Init::trunc_normal) {
        CounterRng rng(seed_, name_hash(name));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : values) {
            double z = normal(rng);
            while (std::abs(z) > 2.0) z = normal(rng);
            v = static_cast<Real>(kInitStd * z);
        }
    }
    auto t = Tensor<Real>::from_values(std::move(shape), std::move(values), true);
    items_.push_back({name, t, decay});
    return t;
}

template <typename Real>
const Parameter<Real>* ParameterStore<Real>::find(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return &p;
    return nullptr;
}

template <typename Real>
std::size_t ParameterStore<Real>::count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
}

template <typename Real>
void ParameterStore<Real>::zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------- blocks

template <typename Real>
Tensor<Real> Linear<Real>::operator()(const Tensor<Real>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

template <typename Real>
Tensor<Real> LayerNorm<Real>::operator()(const Tensor<Real>& x) const {
    return layer_norm(x, gain, bias, static_cast<Real>(1e-5));
}

template <typename Real>
Tensor<Real> FeedForward<Real>::operator()(const Tensor<Real>& x) const {
    return out(gelu(in(x)));
}

template <typename Real>
Tensor<Real> split_heads(const Tensor<Real>& x, std::size_t n_heads) {
    const std::size_t b = x.dim(0), t = x.dim(1), width = x.dim(2);
    return permute(reshape(x, {b, t, n_heads, width / n_heads}), {0, 2, 1, 3});
}

template <typename Real>
Tensor<Real> merge_heads(const Tensor<Real>& x) {
    const std::size_t b = x.dim(0), h = x.dim(1), t = x.dim(2), d = x.dim(3);
    return reshape(permute(x, {0, 2, 1, 3}), {b, t, h * d});
}

template <typename Real>
Tensor<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                  const Tensor<Real>& bias) {
    const Real inv = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(q.dim(3))));
    return attention(q, k, v, bias, inv);
}

namespace {

constexpr double kMaskedScore = -1e9;

template <typename Real>
Linear<Real> make_linear(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out) {
    return {store.add(name + ".weight", {in, out}, Init::trunc_normal, true),
            store.add(name + ".bias", {out}, Init::zeros, false)};
}

template <typename Real>
LayerNorm<Real> make_norm(ParameterStore<Real>& store, const std::string& name, std::size_t d) {
    return {store.add(name + ".gain", {d}, Init::ones, false), store.add(name + ".bias", {d}, Init::zeros, false)};
}

template <typename Real>
Attention<Real> make_attention(ParameterStore<Real>& store, const std::string& name, const ModelConfig& c) {
    const std::size_t width = c.n_heads * c.d_kv;
    return {make_linear(store, name + ".q", c.d_model, width), make_linear(store, name + ".k", c.d_model, width),
            make_linear(store, name + ".v", c.d_model, width), make_linear(store, name + ".o", width, c.d_model),
            c.n_heads, c.d_kv};
}

template <typename Real>
FeedForward<Real> make_ff(ParameterStore<Real>& store, const std::string& name, const ModelConfig& c) {
    return {make_linear(store, name + ".in", c.d_model, c.d_ff), make_linear(store, name + ".out", c.d_ff, c.d_model)};
}

std::vector<double> position_range(std::size_t start, std::size_t count) {
    std::vector<double> p(count);
    for (std::size_t i = 0; i < count; ++i) p[i] = static_cast<double>(start + i);
    return p;
}

// Additive score bias from an allowed-pair pattern (empty = all allowed) and
// per-batch key validity (empty = all valid). A query left with no visible
// key keeps its own position so softmax never spreads over masked entries.
template <typename Real>
Tensor<Real> attention_bias(const std::vector<std::uint8_t>& allowed, std::size_t tq, std::size_t tk,
                            const std::vector<std::uint8_t>& key_valid, std::size_t batch, std::size_t heads,
                            std::size_t query_offset = 0) {
    bool any_blocked = false;
    for (auto a : allowed) any_blocked |= a == 0;
    bool any_padded = false;
    for (auto k : key_valid) any_padded |= k == 0;
    if (!any_blocked && !any_padded) return {};
    const auto is_allowed = [&](std::size_t i, std::size_t j) { return allowed.empty() || allowed[i * tk + j] != 0; };
    if (!any_padded) {
        std::vector<Real> bias(tq * tk);
        for (std::size_t i = 0; i < tq; ++i)
            for (std::size_t j = 0; j < tk; ++j) bias[i * tk + j] = is_allowed(i, j) ? Real(0) : Real(kMaskedScore);
        return Tensor<Real>::from_values({tq, tk}, std::move(bias));
    }
    std::vector<Real> bias(batch * heads * tq * tk);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<Real> block(tq * tk);
        for (std::size_t i = 0; i < tq; ++i) {
            bool visible = false;
            for (std::size_t j = 0; j < tk; ++j) {
                const bool ok = is_allowed(i, j) && key_valid[b * tk + j] != 0;
                visible |= ok;
                block[i * tk + j] = ok ? Real(0) : Real(kMaskedScore);
            }
            const std::size_t self = i + query_offset;
            if (!visible && self < tk) block[i * tk + self] = Real(0);
        }
        for (std::size_t h = 0; h < heads; ++h)
            std::copy(block.begin(), block.end(), bias.begin() + static_cast<std::ptrdiff_t>((b * heads + h) * tq * tk));
    }
    return Tensor<Real>::from_values({batch, heads, tq, tk}, std::move(bias));
}

template <typename Real>
HeadOutput<Real> concat_steps(const std::vector<HeadOutput<Real>>& steps) {
    HeadOutput<Real> out;
    out.kind = steps.front().kind;
    out.levels = steps.front().levels;
    auto join = [&](auto member) {
        if (!(steps.front().*member).defined()) return Tensor<Real>{};
        std::vector<Tensor<Real>> parts;
        for (const auto& s : steps) parts.push_back(s.*member);
        return concat(parts, 1);
    };
    out.mu = join(&HeadOutput<Real>::mu);
    out.sigma = join(&HeadOutput<Real>::sigma);
    out.nu = join(&HeadOutput<Real>::nu);
    out.tril = join(&HeadOutput<Real>::tril);
    out.quantiles = join(&HeadOutput<Real>::quantiles);
    return out;
}

}  // namespace

// ----------------------------------------------------------------------- model

template <typename Real>
Model<Real>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), params_(seed) {
    config_.validate();
    const auto& c = config_;
    const std::size_t d = c.d_model;
    const std::size_t raw = head_raw_size(c.head, c.d_y, levels().size());
    const bool pooled = c.variant == Variant::encoder_mean || c.variant == Variant::encoder_cls ||
                        c.variant == Variant::encoder_flatten;
    const bool enc_dec = c.variant == Variant::enc_dec_ims || c.variant == Variant::enc_dec_dms;

    input_proj_ = make_linear(params_, "input_proj", c.d_in(), d);
    if (c.variant == Variant::masked_encoder)
        mask_embedding_ = params_.add("mask_embedding", {d}, Init::trunc_normal, true);
    if (c.variant == Variant::encoder_cls) cls_token_ = params_.add("cls_token", {d}, Init::trunc_normal, true);
    if (c.pe == PositionalEncoding::learned)
        learned_pe_ = params_.add("learned_pe", {c.context_length + c.horizon, d}, Init::trunc_normal, true);

    for (std::size_t i = 0; i < c.layers; ++i) {
        const std::string p = "encoder." + std::to_string(i);
        encoder_.push_back({make_norm(params_, p + ".ln_attn", d), make_norm(params_, p + ".ln_ff", d),
                            make_attention(params_, p + ".attn", c), make_ff(params_, p + ".ff", c)});
    }
    encoder_norm_ = make_norm(params_, "encoder.norm", d);

    if (enc_dec) {
        decoder_proj_ = make_linear(params_, "decoder_proj", c.d_in(), d);
        for (std::size_t i = 0; i < c.layers; ++i) {
            const std::string p = "decoder." + std::to_string(i);
            decoder_.push_back({make_norm(params_, p + ".ln_self", d), make_norm(params_, p + ".ln_cross", d),
                                make_norm(params_, p + ".ln_ff", d), make_attention(params_, p + ".self_attn", c),
                                make_attention(params_, p + ".cross_attn", c), make_ff(params_, p + ".ff", c)});
        }
        decoder_norm_ = make_norm(params_, "decoder.norm", d);
    }

    if (pooled) {
        const std::size_t in = c.variant == Variant::encoder_flatten ? d * c.context_length : d;
        head_ = make_linear(params_, "head", in, c.horizon * raw);
    } else {
        head_ = make_linear(params_, "head", d, raw);
    }
}

template <typename Real>
std::vector<double> Model<Real>::levels() const {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

template <typename Real>
Tensor<Real> Model<Real>::add_positions(const Tensor<Real>& x, std::span<const double> positions) const {
    const std::size_t d = config_.d_model;
    if (config_.pe == PositionalEncoding::sinusoidal) {
        const auto table = sinusoidal_table(positions, d);
        return add(x, Tensor<Real>::from_values({positions.size(), d}, std::vector<Real>(table.begin(), table.end())));
    }
    if (config_.pe == PositionalEncoding::learned) {
        const auto start = static_cast<std::size_t>(positions.front());
        const std::size_t max_len = learned_pe_.dim(0);
        if (start + positions.size() > max_len)
            throw DimensionError("position " + std::to_string(start + positions.size() - 1) +
                                 " exceeds the learned table of " + std::to_string(max_len));
        return add(x, slice(learned_pe_, 0, start, positions.size()));
    }
    return x;
}

template <typename Real>
Tensor<Real> Model<Real>::self_attention(const Attention<Real>& a, const Tensor<Real>& x,
                                         std::span<const double> positions, const Tensor<Real>& bias) {
    auto q = split_heads(a.q(x), a.n_heads);
    auto k = split_heads(a.k(x), a.n_heads);
    auto v = split_heads(a.v(x), a.n_heads);
    if (config_.pe == PositionalEncoding::rope) {
        q = rope_rotate(q, positions);
        k = rope_rotate(k, positions);
    }
    trace_.score_shapes.emplace_back(q.dim(2), k.dim(2));
    return a.o(merge_heads(scaled_dot_attention(q, k, v, bias)));
}

template <typename Real>
Tensor<Real> Model<Real>::run_encoder(Tensor<Real> x, std::span<const double> positions, const Tensor<Real>& bias) {
    for (const auto& layer : encoder_) {
        x = add(x, self_attention(layer.attn, layer.ln_attn(x), positions, bias));
        x = add(x, layer.ff(layer.ln_ff(x)));
    }
    return encoder_norm_(x);
}

template <typename Real>
HeadOutput<Real> Model<Real>::forward(const ModelInput<Real>& in, ForwardMode mode) {
    const auto& c = config_;
    if (in.context.rank() != 3 || in.context.dim(2) != c.d_in() || in.future.rank() != 3 ||
        in.future.dim(2) != c.d_in() || in.future.dim(0) != in.context.dim(0))
        throw DimensionError("model expects context [B x L x " + std::to_string(c.d_in()) + "] and future [B x H x " +
                             std::to_string(c.d_in()) + "], got " + shape_string(in.context.shape()) + " and " +
                             shape_string(in.future.shape()));
    if (in.future.dim(1) != c.horizon)
        throw DimensionError("future has " + std::to_string(in.future.dim(1)) + " steps, model horizon is " +
                             std::to_string(c.horizon));
    trace_ = {};
    switch (c.variant) {
        case Variant::masked_encoder: return forward_masked_encoder(in);
        case Variant::enc_dec_ims:
        case Variant::enc_dec_dms: return forward_enc_dec(in, mode);
        default: return forward_pooled(in);
    }
}

template <typename Real>
HeadOutput<Real> Model<Real>::forward_masked_encoder(const ModelInput<Real>& in) {
    const auto& c = config_;
    const std::size_t b = in.batch(), l = in.context.dim(1), h = c.horizon, t = l + h;
    auto x = input_proj_(concat<Real>({in.context, in.future}, 1));
    std::vector<Real> indicator(t, Real(0));
    for (std::size_t i = l; i < t; ++i) indicator[i] = Real(1);
    x = add(x, mul(Tensor<Real>::from_values({t, 1}, std::move(indicator)), mask_embedding_));
    const auto positions = position_range(0, t);
    x = add_positions(x, positions);

    std::vector<std::uint8_t> key_valid;
    if (!in.context_valid.empty()) {
        key_valid.assign(b * t, 1);
        for (std::size_t i = 0; i < b; ++i)
            std::copy_n(in.context_valid.begin() + static_cast<std::ptrdiff_t>(i * l), l,
                        key_valid.begin() + static_cast<std::ptrdiff_t>(i * t));
    }
    const auto allowed = build_attention_mask(c.attn_mask, l, h);
    const auto bias = attention_bias<Real>(allowed, t, t, key_valid, b, c.n_heads);
    auto hidden = run_encoder(x, positions, bias);
    auto raw = head_(slice(hidden, 1, l, h));
    return constrain_head(raw, c.head, c.d_y, levels());
}

template <typename Real>
HeadOutput<Real> Model<Real>::forward_pooled(const ModelInput<Real>& in) {
    const auto& c = config_;
    const std::size_t b = in.batch(), l = in.context.dim(1), d = c.d_model;
    if (c.variant == Variant::encoder_flatten && l != c.context_length)
        throw ContractError("encoder_flatten is built for context length " + std::to_string(c.context_length) +
                            ", got " + std::to_string(l));
    auto x = input_proj_(in.context);
    std::vector<std::uint8_t> key_valid = in.context_valid;
    const bool cls = c.variant == Variant::encoder_cls;
    if (cls) {
        x = concat<Real>({add(Tensor<Real>::zeros({b, 1, d}), cls_token_), x}, 1);
        if (!key_valid.empty()) {
            std::vector<std::uint8_t> shifted(b * (l + 1), 1);
            for (std::size_t i = 0; i < b; ++i)
                std::copy_n(in.context_valid.begin() + static_cast<std::ptrdiff_t>(i * l), l,
                            shifted.begin() + static_cast<std::ptrdiff_t>(i * (l + 1) + 1));
            key_valid = std::move(shifted);
        }
    }
    const std::size_t t = cls ? l + 1 : l;
    const auto positions = position_range(0, t);
    x = add_positions(x, positions);
    const auto bias = attention_bias<Real>({}, t, t, key_valid, b, c.n_heads);
    auto hidden = run_encoder(x, positions, bias);

    if (!in.context_valid.empty() && !cls) {
        // Padded positions must not reach the pooled representation.
        std::vector<Real> weight(b * l);
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t valid = 0;
            for (std::size_t j = 0; j < l; ++j) valid += in.context_valid[i * l + j] != 0;
            const Real w = c.variant == Variant::encoder_mean && valid > 0
                               ? static_cast<Real>(static_cast<double>(l) / static_cast<double>(valid))
                               : Real(1);
            for (std::size_t j = 0; j < l; ++j) weight[i * l + j] = in.context_valid[i * l + j] ? w : Real(0);
        }
        hidden = mul(hidden, Tensor<Real>::from_values({b, l, 1}, std::move(weight)));
    }
    Tensor<Real> pooled;
    if (c.variant == Variant::encoder_mean) pooled = mean_axis(hidden, 1);
    if (cls) pooled = select(hidden, 1, 0);
    if (c.variant == Variant::encoder_flatten) pooled = reshape(hidden, {b, l * d});
    const std::size_t raw = head_raw_size(c.head, c.d_y, levels().size());
    return constrain_head(reshape(head_(pooled), {b, c.horizon, raw}), c.head, c.d_y, levels());
}

template <typename Real>
Tensor<Real> Model<Real>::decoder_inputs_teacher_forced(const ModelInput<Real>& in) const {
    const auto& c = config_;
    if (!in.future_targets.defined()) throw ContractError("teacher forcing needs future targets");
    const std::size_t l = in.context.dim(1), h = c.horizon, dy = c.d_y;
    auto last = slice(slice(in.context, 1, l - 1, 1), 2, 0, dy);
    auto prev = h > 1 ? concat<Real>({last, slice(in.future_targets, 1, 0, h - 1)}, 1) : last;
    return concat<Real>({prev, slice(in.future, 2, dy, c.d_in() - dy)}, 2);
}

template <typename Real>
HeadOutput<Real> Model<Real>::forward_enc_dec(const ModelInput<Real>& in, ForwardMode mode) {
    const auto& c = config_;
    const std::size_t b = in.batch(), l = in.context.dim(1), h = c.horizon;
    const auto enc_positions = position_range(0, l);
    auto x = add_positions(input_proj_(in.context), enc_positions);
    const auto enc_bias = attention_bias<Real>({}, l, l, in.context_valid, b, c.n_heads);
    auto memory = run_encoder(x, enc_positions, enc_bias);

    const bool ims = c.variant == Variant::enc_dec_ims;
    const auto cross_bias = attention_bias<Real>({}, h, l, in.context_valid, b, c.n_heads, l);
    if (ims && mode == ForwardMode::infer) {
        const auto step_bias = attention_bias<Real>({}, 1, l, in.context_valid, b, c.n_heads, l);
        return decode_iteratively(in, memory, step_bias);
    }

    const auto dec_positions = position_range(l, h);
    auto y = add_positions(decoder_proj_(ims ? decoder_inputs_teacher_forced(in) : in.future), dec_positions);
    Tensor<Real> self_bias;
    if (ims) {
        std::vector<std::uint8_t> causal(h * h, 0);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j <= i; ++j) causal[i * h + j] = 1;
        self_bias = attention_bias<Real>(causal, h, h, {}, b, c.n_heads);
    }
    for (const auto& layer : decoder_) {
        y = add(y, self_attention(layer.self_attn, layer.ln_self(y), dec_positions, self_bias));
        const auto& a = layer.cross_attn;
        auto q = split_heads(a.q(layer.ln_cross(y)), a.n_heads);
        auto k = split_heads(a.k(memory), a.n_heads);
        auto v = split_heads(a.v(memory), a.n_heads);
        if (c.pe == PositionalEncoding::rope) {
            q = rope_rotate(q, dec_positions);
            k = rope_rotate(k, enc_positions);
        }
        trace_.score_shapes.emplace_back(h, l);
        y = add(y, a.o(merge_heads(scaled_dot_attention(q, k, v, cross_bias))));
        y = add(y, layer.ff(layer.ln_ff(y)));
    }
    trace_.decoder_iterations = 1;
    return constrain_head(head_(decoder_norm_(y)), c.head, c.d_y, levels());
}

template <typename Real>
HeadOutput<Real> Model<Real>::decode_iteratively(const ModelInput<Real>& in, const Tensor<Real>& memory,
                                                 const Tensor<Real>& cross_bias) {
    const auto& c = config_;
    const std::size_t b = in.batch(), l = in.context.dim(1), h = c.horizon, dy = c.d_y;
    const auto enc_positions = position_range(0, l);
    const bool rope = c.pe == PositionalEncoding::rope;

    struct Cache {
        Tensor<Real> self_k, self_v, cross_k, cross_v;
    };
    std::vector<Cache> caches(decoder_.size());
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const auto& a = decoder_[i].cross_attn;
        caches[i].cross_k = split_heads(a.k(memory), a.n_heads);
        caches[i].cross_v = split_heads(a.v(memory), a.n_heads);
        if (rope) caches[i].cross_k = rope_rotate(caches[i].cross_k, enc_positions);
    }

    auto prev = slice(slice(in.context, 1, l - 1, 1), 2, 0, dy);  // [B, 1, d_y]
    std::vector<HeadOutput<Real>> steps;
    for (std::size_t t = 0; t < h; ++t) {
        const std::vector<double> pos{static_cast<double>(l + t)};
        auto input = concat<Real>({prev, slice(slice(in.future, 1, t, 1), 2, dy, c.d_in() - dy)}, 2);
        auto y = add_positions(decoder_proj_(input), pos);
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const auto& layer = decoder_[i];
            auto& cache = caches[i];
            const auto& sa = layer.self_attn;
            auto x = layer.ln_self(y);
            auto q = split_heads(sa.q(x), sa.n_heads);
            auto k = split_heads(sa.k(x), sa.n_heads);
            auto v = split_heads(sa.v(x), sa.n_heads);
            if (rope) {
                q = rope_rotate(q, pos);
                k = rope_rotate(k, pos);
            }
            cache.self_k = t == 0 ? k : concat<Real>({cache.self_k, k}, 2);
            cache.self_v = t == 0 ? v : concat<Real>({cache.self_v, v}, 2);
            trace_.score_shapes.emplace_back(1, t + 1);
            y = add(y, sa.o(merge_heads(scaled_dot_attention(q, cache.self_k, cache.self_v, Tensor<Real>{}))));

            const auto& ca = layer.cross_attn;
            auto cq = split_heads(ca.q(layer.ln_cross(y)), ca.n_heads);
            if (rope) cq = rope_rotate(cq, pos);
            trace_.score_shapes.emplace_back(1, l);
            y = add(y, ca.o(merge_heads(scaled_dot_attention(cq, cache.cross_k, cache.cross_v, cross_bias))));
            y = add(y, layer.ff(layer.ln_ff(y)));
        }
        auto step = constrain_head(head_(decoder_norm_(y)), c.head, c.d_y, levels());
        if (sample_feedback) {
            const auto dist = to_distribution(step);
            std::vector<Real> draws(b * dy);
            std::vector<double> one(dy);
            for (std::size_t s = 0; s < b; ++s) {
                CounterRng rng(feedback_seed, s, t);
                dist.sample(s, 0, rng, one);
                for (std::size_t j = 0; j < dy; ++j) draws[s * dy + j] = static_cast<Real>(one[j]);
            }
            prev = Tensor<Real>::from_values({b, 1, dy}, std::move(draws));
        } else {
            prev = step.kind == HeadKind::iqf ? mean_axis(step.quantiles, 3) : step.mu;
        }
        steps.push_back(std::move(step));
    }
    trace_.decoder_iterations = h;
    return concat_steps(steps);
}

template <typename Real>
Tensor<Real> Model<Real>::loss(const ModelInput<Real>& in) {
    if (!in.future_targets.defined()) throw ContractError("loss needs future targets");
    return head_loss(forward(in, ForwardMode::train), in.future_targets);
}

template <typename Real>
ForecastDistribution Model<Real>::predict(const ModelInput<Real>& in) {
    NoGradGuard guard;
    return to_distribution(forward(in, ForwardMode::infer));
}

#define CLOPS_INSTANTIATE_MODEL(Real)                                                                   \
    template class ParameterStore<Real>;                                                                \
    template struct Linear<Real>;                                                                       \
    template struct LayerNorm<Real>;                                                                    \
    template struct FeedForward<Real>;                                                                  \
    template Tensor<Real> split_heads(const Tensor<Real>&, std::size_t);                                \
    template Tensor<Real> merge_heads(const Tensor<Real>&);                                             \
    template Tensor<Real> scaled_dot_attention(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                                               const Tensor<Real>&);                                    \
    template class Model<Real>;

CLOPS_INSTANTIATE_MODEL(float)
CLOPS_INSTANTIATE_MODEL(double)

}  // namespace clops
