#pragma once

// Transformer forecasting models. One class covers the masked encoder, the
// two encoder-decoder variants and the three pooled encoder variants; they
// share the layer blocks below and differ only in how inputs are arranged
// and where the head reads its representation.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clops/heads.hpp"
#include "clops/tensor.hpp"
#include "json.hpp"

namespace clops {

enum class Variant { masked_encoder, enc_dec_ims, enc_dec_dms, encoder_mean, encoder_cls, encoder_flatten };
enum class PositionalEncoding { datetime_only, sinusoidal, learned, rope };
enum class AttentionMask { full, full_causal, mask_causal };

std::string to_string(Variant v);
std::string to_string(PositionalEncoding pe);
std::string to_string(AttentionMask m);
Variant variant_from_string(const std::string& name);
PositionalEncoding pe_from_string(const std::string& name);
AttentionMask mask_from_string(const std::string& name);

/// Lags for 5-minute data: sub-hour, multi-hour and daily multiples.
std::vector<std::size_t> default_lags();

/// Number of date/time channels (minute, hour, weekday, day of month, day of year).
inline constexpr std::size_t kDatetimeFeatures = 5;

struct ModelConfig {
    Variant variant = Variant::masked_encoder;
    std::size_t layers = 2;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t n_heads = 4;
    std::size_t d_kv = 16;
    PositionalEncoding pe = PositionalEncoding::rope;
    bool use_datetime = true;
    AttentionMask attn_mask = AttentionMask::full;
    HeadKind head = HeadKind::student_t;
    std::size_t context_length = 96;  // L
    std::size_t horizon = 24;         // H
    std::size_t d_y = 1;
    std::size_t n_static = 0;
    std::size_t n_past_dynamic = 0;
    std::vector<std::size_t> lags = default_lags();

    /// Channels per position: [targets | lags | log scale | static | past dynamic | datetime].
    std::size_t d_in() const;
    std::size_t lag_offset() const { return d_y; }
    std::size_t log_scale_offset() const { return d_y + d_y * lags.size(); }
    std::size_t static_offset() const { return log_scale_offset() + d_y; }
    std::size_t past_dynamic_offset() const { return static_offset() + n_static; }
    std::size_t datetime_offset() const { return past_dynamic_offset() + n_past_dynamic; }

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Size presets: tiny, small, base, large, xlarge.
ModelConfig model_preset(const std::string& name);

/// Row-major (L+H) x (L+H) boolean matrix; entry (i, j) allows query i to see key j.
std::vector<std::uint8_t> build_attention_mask(AttentionMask scheme, std::size_t context_length, std::size_t horizon);

/// Sinusoidal table [positions x d_model]: sin on even channels, cos on odd.
std::vector<double> sinusoidal_table(std::span<const double> positions, std::size_t d_model);

template <typename Real>
struct Parameter {
    std::string name;
    Tensor<Real> tensor;
    bool decay = true;
};

enum class Init { trunc_normal, zeros, ones };

/// Named learnable tensors in registration order. Initial values depend only
/// on (seed, name), so adding a parameter never perturbs the others.
template <typename Real>
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor<Real> add(const std::string& name, Shape shape, Init init, bool decay);

    std::vector<Parameter<Real>>& items() { return items_; }
    const std::vector<Parameter<Real>>& items() const { return items_; }
    const Parameter<Real>* find(const std::string& name) const;
    std::size_t count() const;
    void zero_grad();

private:
    std::uint64_t seed_;
    std::vector<Parameter<Real>> items_;
};

template <typename Real>
struct Linear {
    Tensor<Real> weight;  // [in, out]
    Tensor<Real> bias;    // [out]
    Tensor<Real> operator()(const Tensor<Real>& x) const;
};

template <typename Real>
struct LayerNorm {
    Tensor<Real> gain, bias;
    Tensor<Real> operator()(const Tensor<Real>& x) const;
};

template <typename Real>
struct Attention {
    Linear<Real> q, k, v, o;
    std::size_t n_heads = 0, d_kv = 0;
};

template <typename Real>
struct FeedForward {
    Linear<Real> in, out;
    Tensor<Real> operator()(const Tensor<Real>& x) const;
};

template <typename Real>
struct EncoderLayer {
    LayerNorm<Real> ln_attn, ln_ff;
    Attention<Real> attn;
    FeedForward<Real> ff;
};

template <typename Real>
struct DecoderLayer {
    LayerNorm<Real> ln_self, ln_cross, ln_ff;
    Attention<Real> self_attn, cross_attn;
    FeedForward<Real> ff;
};

/// Splits x[B, T, h*d_kv] into [B, h, T, d_kv] and back.
template <typename Real> Tensor<Real> split_heads(const Tensor<Real>& x, std::size_t n_heads);
template <typename Real> Tensor<Real> merge_heads(const Tensor<Real>& x);

/// softmax(q k^T / sqrt(d_kv) + bias) v on q[B,h,Tq,d], k,v[B,h,Tk,d].
/// `bias` is undefined, [Tq, Tk] or [B, h, Tq, Tk].
template <typename Real>
Tensor<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                  const Tensor<Real>& bias);

/// Inputs for one batch of windows, already normalized and assembled.
template <typename Real>
struct ModelInput {
    Tensor<Real> context;         // [B, L, d_in]
    Tensor<Real> future;          // [B, H, d_in], unknown channels zeroed
    Tensor<Real> future_targets;  // [B, H, d_y], normalized; may be undefined at inference
    std::vector<std::uint8_t> context_valid;  // [B x L], empty when nothing is padded

    std::size_t batch() const { return context.dim(0); }
};

enum class ForwardMode { train, infer };

struct ForwardTrace {
    std::vector<std::pair<std::size_t, std::size_t>> score_shapes;  // (Tq, Tk) per attention call
    std::size_t decoder_iterations = 0;
};

template <typename Real>
class Model {
public:
    Model(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParameterStore<Real>& params() { return params_; }
    const ParameterStore<Real>& params() const { return params_; }
    std::size_t parameter_count() const { return params_.count(); }
    std::vector<double> levels() const;

    /// Train mode uses teacher forcing for the IMS decoder; infer mode decodes
    /// step by step, feeding back the predicted mean (or a draw when
    /// `sample_feedback` is set).
    HeadOutput<Real> forward(const ModelInput<Real>& in, ForwardMode mode = ForwardMode::train);

    /// Loss of a train-mode forward pass against in.future_targets.
    Tensor<Real> loss(const ModelInput<Real>& in);

    /// Inference without graph recording, in normalized scale.
    ForecastDistribution predict(const ModelInput<Real>& in);

    const ForwardTrace& last_trace() const { return trace_; }

    bool sample_feedback = false;
    std::uint64_t feedback_seed = 0;

private:
    ModelConfig config_;
    ParameterStore<Real> params_;

    Linear<Real> input_proj_, decoder_proj_, head_;
    Tensor<Real> mask_embedding_, cls_token_, learned_pe_;
    std::vector<EncoderLayer<Real>> encoder_;
    std::vector<DecoderLayer<Real>> decoder_;
    LayerNorm<Real> encoder_norm_, decoder_norm_;
    ForwardTrace trace_;

    Tensor<Real> add_positions(const Tensor<Real>& x, std::span<const double> positions) const;
    Tensor<Real> run_encoder(Tensor<Real> x, std::span<const double> positions, const Tensor<Real>& bias);
    Tensor<Real> self_attention(const Attention<Real>& a, const Tensor<Real>& x, std::span<const double> positions,
                                const Tensor<Real>& bias);
    HeadOutput<Real> forward_masked_encoder(const ModelInput<Real>& in);
    HeadOutput<Real> forward_pooled(const ModelInput<Real>& in);
    HeadOutput<Real> forward_enc_dec(const ModelInput<Real>& in, ForwardMode mode);
    HeadOutput<Real> decode_iteratively(const ModelInput<Real>& in, const Tensor<Real>& memory,
                                        const Tensor<Real>& cross_bias);
    Tensor<Real> decoder_inputs_teacher_forced(const ModelInput<Real>& in) const;
};

}  // namespace clops
