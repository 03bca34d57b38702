#include <cmath>
#include <stdexcept>

#include "clops/model.hpp"

namespace clops {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& name, const std::pair<const char*, Enum> (&table)[N], const char* what) {
    for (const auto& [key, value] : table)
        if (name == key) return value;
    throw std::invalid_argument(std::string("unknown ") + what + " '" + name + "'");
}

constexpr std::pair<const char*, Variant> kVariants[] = {
    {"masked_encoder", Variant::masked_encoder}, {"enc_dec_ims", Variant::enc_dec_ims},
    {"enc_dec_dms", Variant::enc_dec_dms},       {"encoder_mean", Variant::encoder_mean},
    {"encoder_cls", Variant::encoder_cls},       {"encoder_flatten", Variant::encoder_flatten},
};
constexpr std::pair<const char*, PositionalEncoding> kEncodings[] = {
    {"datetime_only", PositionalEncoding::datetime_only},
    {"sinusoidal", PositionalEncoding::sinusoidal},
    {"learned", PositionalEncoding::learned},
    {"rope", PositionalEncoding::rope},
};
constexpr std::pair<const char*, AttentionMask> kMasks[] = {
    {"full", AttentionMask::full},
    {"full_causal", AttentionMask::full_causal},
    {"mask_causal", AttentionMask::mask_causal},
};

template <typename Enum, std::size_t N>
std::string enum_name(Enum value, const std::pair<const char*, Enum> (&table)[N]) {
    for (const auto& [key, v] : table)
        if (v == value) return key;
    return "unknown";
}

}  // namespace

std::string to_string(Variant v) { return enum_name(v, kVariants); }
std::string to_string(PositionalEncoding pe) { return enum_name(pe, kEncodings); }
std::string to_string(AttentionMask m) { return enum_name(m, kMasks); }
Variant variant_from_string(const std::string& name) { return parse_enum(name, kVariants, "variant"); }
PositionalEncoding pe_from_string(const std::string& name) { return parse_enum(name, kEncodings, "positional encoding"); }
AttentionMask mask_from_string(const std::string& name) { return parse_enum(name, kMasks, "attention mask"); }

std::vector<std::size_t> default_lags() {
    return {1, 2, 3, 4, 5, 6, 7, 12, 24, 36, 48, 96, 144, 288, 576, 864, 1200};
}

std::size_t ModelConfig::d_in() const {
    return datetime_offset() + (use_datetime ? kDatetimeFeatures : 0);
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (layers == 0 || d_model == 0 || d_ff == 0 || n_heads == 0 || d_kv == 0) fail("sizes must be positive");
    if (context_length == 0 || horizon == 0 || d_y == 0) fail("context_length, horizon and d_y must be positive");
    if (pe == PositionalEncoding::rope && d_kv % 2 != 0) fail("rope needs an even d_kv");
    if (pe == PositionalEncoding::sinusoidal && d_model % 2 != 0) fail("sinusoidal encoding needs an even d_model");
    if (head == HeadKind::mv_student_t && d_y < 1) fail("mv_student_t needs d_y >= 1");
}

nlohmann::json ModelConfig::to_json() const {
    return {
        {"variant", to_string(variant)},
        {"layers", layers},
        {"d_model", d_model},
        {"d_ff", d_ff},
        {"n_heads", n_heads},
        {"d_kv", d_kv},
        {"pe", to_string(pe)},
        {"use_datetime", use_datetime},
        {"attn_mask", to_string(attn_mask)},
        {"head", to_string(head)},
        {"context_length", context_length},
        {"horizon", horizon},
        {"d_y", d_y},
        {"n_static", n_static},
        {"n_past_dynamic", n_past_dynamic},
        {"lags", lags},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.layers = j.at("layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_kv = j.at("d_kv").get<std::size_t>();
    c.pe = pe_from_string(j.at("pe").get<std::string>());
    c.use_datetime = j.at("use_datetime").get<bool>();
    c.attn_mask = mask_from_string(j.at("attn_mask").get<std::string>());
    c.head = head_kind_from_string(j.at("head").get<std::string>());
    c.context_length = j.at("context_length").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.d_y = j.at("d_y").get<std::size_t>();
    c.n_static = j.at("n_static").get<std::size_t>();
    c.n_past_dynamic = j.at("n_past_dynamic").get<std::size_t>();
    c.lags = j.at("lags").get<std::vector<std::size_t>>();
    c.validate();
    return c;
}

ModelConfig model_preset(const std::string& name) {
    ModelConfig c;
    auto sizes = [&c](std::size_t n, std::size_t d, std::size_t ff, std::size_t heads, std::size_t kv) {
        c.layers = n;
        c.d_model = d;
        c.d_ff = ff;
        c.n_heads = heads;
        c.d_kv = kv;
    };
    if (name == "tiny") {
        sizes(2, 64, 256, 4, 16);
        c.context_length = 96;
        c.horizon = 24;
    } else if (name == "small") {
        sizes(3, 128, 512, 4, 32);
        c.context_length = 96;
        c.horizon = 24;
    } else if (name == "base" || name == "large" || name == "xlarge") {
        if (name == "base") sizes(6, 384, 1536, 6, 64);
        if (name == "large") sizes(9, 512, 2048, 8, 64);
        if (name == "xlarge") sizes(12, 768, 3072, 12, 64);
        c.context_length = 480;
        c.horizon = 48;
    } else {
        throw std::invalid_argument("unknown model preset '" + name + "'");
    }
    return c;
}

std::vector<std::uint8_t> build_attention_mask(AttentionMask scheme, std::size_t context_length,
                                               std::size_t horizon) {
    const std::size_t t = context_length + horizon;
    std::vector<std::uint8_t> mask(t * t, 1);
    if (scheme == AttentionMask::full) return mask;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) {
            bool ok = j <= i;
            // Context attends bidirectionally within itself; the prediction
            // range sees all context and is causal among itself.
            if (scheme == AttentionMask::mask_causal) ok = (i < context_length && j < context_length) ||
                                                           (i >= context_length && j <= i);
            mask[i * t + j] = ok ? 1 : 0;
        }
    return mask;
}

std::vector<double> sinusoidal_table(std::span<const double> positions, std::size_t d_model) {
    std::vector<double> table(positions.size() * d_model);
    for (std::size_t p = 0; p < positions.size(); ++p)
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double angle = positions[p] / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
            table[p * d_model + i] = std::sin(angle);
            if (i + 1 < d_model) table[p * d_model + i + 1] = std::cos(angle);
        }
    return table;
}

}  // namespace clops
