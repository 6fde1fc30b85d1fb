#pragma once
// Matching backbone (embedders + ring GCN + fusion) and searching head, their
// parameter sets, and the "PRNG" checkpoint container.

#include "fragmenta/binary_io.hpp"
#include "fragmenta/contour_codec.hpp"
#include "fragmenta/nn/layers.hpp"
#include "fragmenta/nn/losses.hpp"
#include "fragmenta/rng.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fragmenta::nn {

struct ModelConfig {
    int d_feat = 64;
    int d_search = 128;
    int gcn_layers = 4;
    int ring_k = 8;
    int attn_layers = 2;
    int conv_channels = 16;
    int ff_hidden = 128;
    int patch_size = 7;
    int texture_patch_size = 7;
    codec::ContourEncoding contour_mode = codec::ContourEncoding::EdgeOnly;
    double beta1 = 0.55;
    double gamma = 8.0;
    double temperature = 0.12;
    double lr = 1e-3;
    double lr_floor_ratio = 0.01; // cosine annealing floor as a fraction of lr
    int batch_match = 20;
    int batch_search = 175;
    int match_steps = 200;
    int search_steps = 200;
    std::size_t l_max_match = 2900;
    std::size_t l_max_search = 1408;
    codec::TruncateMode search_truncation = codec::TruncateMode::UniformStride;
    double divergence_factor = 10.0;
    int divergence_patience = 50;

    void validate() const {
        auto fail = [](const std::string& what) { throw ConfigError("model: " + what); };
        if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0,1)");
        if (!(gamma >= 0.0)) fail("gamma must be >= 0");
        if (!(temperature > 0.0)) fail("temperature must be > 0");
        if (!(lr >= 0.0)) fail("lr must be >= 0");
        if (!(lr_floor_ratio >= 0.0 && lr_floor_ratio <= 1.0)) fail("lr_floor_ratio must lie in [0,1]");
        if (d_feat < 1 || d_search < 1 || conv_channels < 1 || ff_hidden < 1) fail("widths must be >= 1");
        if (gcn_layers < 0 || attn_layers < 0) fail("layer counts must be >= 0");
        if (ring_k < 1) fail("ring_k must be >= 1");
        if (patch_size < 3 || patch_size % 2 == 0) fail("patch_size must be odd and >= 3");
        if (texture_patch_size < 5 || texture_patch_size % 2 == 0) fail("texture_patch_size must be odd and >= 5");
        if (batch_match < 1 || batch_search < 2) fail("batch sizes too small");
        if (match_steps < 0 || search_steps < 0) fail("step counts must be >= 0");
        if (l_max_match < 1 || l_max_search < 1) fail("l_max must be >= 1");
        if (!(divergence_factor > 1.0) || divergence_patience < 1) fail("divergence guard invalid");
    }
};

// ---------------------------------------------------------------------------
// Parameters and checkpoints

class ParameterSet {
public:
    Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) throw InvalidInput("duplicate parameter '" + name + "'");
        auto p = std::make_unique<Parameter>();
        p->name = name;
        p->value = Matrix::Zero(rows, cols);
        p->zero_grad();
        index_[name] = p.get();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    /// Glorot-uniform weights.
    Parameter& add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                          double gain = 1.0) {
        Parameter& p = add(name, rows, cols);
        const double a = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = uniform(rng, -a, a);
        return p;
    }

    Parameter& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
        return *it->second;
    }

    std::vector<std::unique_ptr<Parameter>>& all() { return params_; }
    const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }
    void set_frozen(bool frozen) {
        for (auto& p : params_) p->frozen = frozen;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

    /// FNV-1a over the raw bytes of every value, in declaration order.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params_) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
            for (std::size_t i = 0; i < static_cast<std::size_t>(p->value.size()) * sizeof(double); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        }
        return h;
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, Parameter*> index_;
};

// "PRNG" container: magic, u32 version, u32 count, then per parameter:
// name, u32 rank (=2), u32 rows, u32 cols, rows*cols float64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write '" + tmp + "'");
        bin::write_magic(out, "PRNG");
        bin::write_le(out, kCheckpointVersion);
        bin::write_le(out, static_cast<std::uint32_t>(params.all().size()));
        for (const auto& p : params.all()) {
            bin::write_string(out, p->name);
            bin::write_le(out, std::uint32_t{2});
            bin::write_le(out, static_cast<std::uint32_t>(p->value.rows()));
            bin::write_le(out, static_cast<std::uint32_t>(p->value.cols()));
            for (Eigen::Index i = 0; i < p->value.size(); ++i) bin::write_f64(out, p->value.data()[i]);
        }
        if (!out) throw DataError("cannot write '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

/// Fills an already-built parameter set; names, count and shapes must agree.
inline void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    bin::expect_magic(in, "PRNG");
    const auto version = bin::read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto count = bin::read_le<std::uint32_t>(in);
    if (count != params.all().size()) {
        throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                        std::to_string(params.all().size()));
    }
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string name = bin::read_string(in);
        const auto rank = bin::read_le<std::uint32_t>(in);
        const auto rows = bin::read_le<std::uint32_t>(in);
        const auto cols = bin::read_le<std::uint32_t>(in);
        Parameter* p = nullptr;
        try {
            p = &params.get(name);
        } catch (const InvalidInput&) {
            throw DataError("checkpoint parameter '" + name + "' not in model");
        }
        if (rank != 2 || rows != p->value.rows() || cols != p->value.cols()) {
            throw DataError("checkpoint shape mismatch for '" + name + "'");
        }
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = bin::read_f64(in);
    }
}

// ---------------------------------------------------------------------------
// Model inputs

/// Per-point network inputs of one fragment; `source[r]` is the contour index of row r.
struct FragmentInput {
    Matrix contour_patches; // M x (P*P*C)
    Matrix texture_patches; // M x (P*P*3)
    std::vector<std::size_t> source;
    std::size_t contour_length = 0;

    std::size_t rows() const { return source.size(); }
};

inline Matrix patches_to_matrix(const codec::PatchSet& p, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p.stride()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double* src = p.row_ptr(rows[r]);
        std::copy(src, src + p.stride(), out.row(static_cast<Eigen::Index>(r)).data());
    }
    return out;
}

/// Encodes a fragment; contours longer than l_max are subsampled at even stride.
inline FragmentInput encode_fragment(const RgbImage& pixels, const Mask& mask, const OrderedContour& contour,
                                     const ModelConfig& cfg, std::size_t l_max) {
    if (contour.size() == 0) throw InvalidInput("encode_fragment: empty contour");
    FragmentInput in;
    in.contour_length = contour.size();
    in.source = codec::truncation_indices(contour.size(), l_max, codec::TruncateMode::UniformStride);
    const auto cp = codec::encode_contour_patches(contour, mask, cfg.patch_size, cfg.contour_mode);
    const auto tp = codec::crop_texture_patches(pixels, mask, contour, cfg.texture_patch_size);
    in.contour_patches = patches_to_matrix(cp, in.source);
    in.texture_patches = patches_to_matrix(tp, in.source);
    return in;
}

// ---------------------------------------------------------------------------
// Matching model

struct MatchingFeatures {
    Var f_c, f_t, f_f, gate;
};

class MatchingModel {
public:
    MatchingModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "init-matching"));
        const int c_in = codec::channels_for(cfg_.contour_mode);
        const int ch = cfg_.conv_channels;
        const int d = cfg_.d_feat;
        params_.add_weight("contour.conv.w", 9 * c_in, ch, rng);
        params_.add("contour.conv.b", 1, ch);
        params_.add_weight("contour.fc.w", ch, d, rng);
        params_.add("contour.fc.b", 1, d);
        params_.add_weight("texture.conv1.w", 27, ch, rng);
        params_.add("texture.conv1.b", 1, ch);
        params_.add_weight("texture.conv2.w", 9 * ch, d, rng);
        params_.add("texture.conv2.b", 1, d);
        for (const char* branch : {"contour", "texture"}) {
            for (int l = 0; l < cfg_.gcn_layers; ++l) {
                const std::string base = std::string(branch) + ".gcn" + std::to_string(l);
                params_.add_weight(base + ".w", d, d, rng, 0.5);
                params_.add(base + ".b", 1, d);
            }
        }
        params_.add_weight("fusion.w", 2 * d, d, rng);
        params_.add("fusion.b", 1, d);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    /// Post-GCN branch features and their fusion.
    MatchingFeatures forward(Tape& tape, const FragmentInput& in) {
        const int c_in = codec::channels_for(cfg_.contour_mode);
        auto w = [&](const char* name) { return tape.param(params_.get(name)); };
        const ContourEmbedWeights ce{w("contour.conv.w"), w("contour.conv.b"), w("contour.fc.w"), w("contour.fc.b")};
        const TextureEmbedWeights te{w("texture.conv1.w"), w("texture.conv1.b"), w("texture.conv2.w"),
                                     w("texture.conv2.b")};
        Var f_c = patch_embed_contour(tape.constant(in.contour_patches), cfg_.patch_size, c_in, ce);
        Var f_t = patch_embed_texture(tape.constant(in.texture_patches), cfg_.texture_patch_size, te);
        for (int l = 0; l < cfg_.gcn_layers; ++l) {
            const std::string c = "contour.gcn" + std::to_string(l);
            const std::string t = "texture.gcn" + std::to_string(l);
            f_c = gcn_layer(f_c, static_cast<std::size_t>(cfg_.ring_k),
                            {tape.param(params_.get(c + ".w")), tape.param(params_.get(c + ".b"))});
            f_t = gcn_layer(f_t, static_cast<std::size_t>(cfg_.ring_k),
                            {tape.param(params_.get(t + ".w")), tape.param(params_.get(t + ".b"))});
        }
        const auto fused = self_gated_fusion(f_t, f_c, {w("fusion.w"), w("fusion.b")});
        return {f_c, f_t, fused.fused, fused.gate};
    }

    /// Fused features without recording gradients.
    Matrix fused_features(const FragmentInput& in) {
        Tape tape(false);
        return forward(tape, in).f_f.value();
    }

    /// Focal loss for one pair; s_gt rows index `m`, columns index `n`.
    Var pair_loss(Tape& tape, const FragmentInput& m, const FragmentInput& n, const Matrix& s_gt) {
        const auto fm = forward(tape, m);
        const auto fn = forward(tape, n);
        Var s = dual_softmax(similarity_logits(fm.f_f, fn.f_f));
        return focal_matching_loss(s, s_gt, cfg_.beta1, cfg_.gamma);
    }

private:
    ModelConfig cfg_;
    ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Searching model

/// Frozen backbone output consumed by the searching head.
struct SearchInput {
    Matrix f_c;                      // L x D
    Matrix f_t;                      // L x D
    std::vector<std::uint8_t> mask;  // L
};

class SearchingModel {
public:
    SearchingModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "init-searching"));
        const int d = cfg_.d_feat;
        for (const char* branch : {"contour", "texture"}) {
            for (int l = 0; l < cfg_.attn_layers; ++l) {
                const std::string base = std::string("search.") + branch + ".attn" + std::to_string(l);
                params_.add_weight(base + ".wq", d, d, rng);
                params_.add_weight(base + ".wk", d, d, rng);
                params_.add_weight(base + ".wv", d, d, rng, 0.5);
                params_.add_weight(base + ".w1", d, cfg_.ff_hidden, rng, 0.5);
                params_.add(base + ".b1", 1, cfg_.ff_hidden);
                params_.add_weight(base + ".w2", cfg_.ff_hidden, d, rng, 0.5);
                params_.add(base + ".b2", 1, d);
            }
        }
        params_.add_weight("search.point.w", 2 * d, d, rng);
        params_.add("search.point.b", 1, d);
        params_.add_weight("search.out.w", d, cfg_.d_search, rng);
        params_.add("search.out.b", 1, cfg_.d_search);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    Var embed(Tape& tape, const SearchInput& in) {
        Var h_c = tape.constant(in.f_c);
        Var h_t = tape.constant(in.f_t);
        for (int l = 0; l < cfg_.attn_layers; ++l) {
            h_c = linear_attention_layer(h_c, in.mask, weights(tape, "contour", l));
            h_t = linear_attention_layer(h_t, in.mask, weights(tape, "texture", l));
        }
        auto w = [&](const char* name) { return tape.param(params_.get(name)); };
        return search_head(h_c, h_t, in.mask,
                           {w("search.point.w"), w("search.point.b"), w("search.out.w"), w("search.out.b")});
    }

    Matrix embed_value(const SearchInput& in) {
        Tape tape(false);
        return embed(tape, in).value();
    }

private:
    AttentionWeights weights(Tape& tape, const char* branch, int layer) {
        const std::string base = std::string("search.") + branch + ".attn" + std::to_string(layer);
        auto w = [&](const char* suffix) { return tape.param(params_.get(base + suffix)); };
        return {w(".wq"), w(".wk"), w(".wv"), w(".w1"), w(".b1"), w(".w2"), w(".b2")};
    }

    ModelConfig cfg_;
    ParameterSet params_;
};

/// Post-GCN features of the frozen backbone, padded or truncated to l_max_search.
inline SearchInput make_search_input(MatchingModel& backbone, const FragmentInput& in) {
    Tape tape(false);
    const auto f = backbone.forward(tape, in);
    const auto& cfg = backbone.config();
    const std::size_t rows = static_cast<std::size_t>(f.f_c.rows());
    const std::size_t d = static_cast<std::size_t>(f.f_c.cols());
    auto pad = [&](const Matrix& m) {
        std::vector<double> flat(m.data(), m.data() + m.size());
        return codec::pad_or_truncate(flat, rows, d, cfg.l_max_search, codec::PadPolicy::Truncate,
                                      cfg.search_truncation);
    };
    const auto pc = pad(f.f_c.value());
    const auto pt = pad(f.f_t.value());
    SearchInput out;
    // Only the valid prefix is materialized; padded rows are masked anyway.
    const Eigen::Index valid = static_cast<Eigen::Index>(pc.valid_count());
    out.f_c = ConstMatrixMap(pc.features.data(), static_cast<Eigen::Index>(pc.l_max), static_cast<Eigen::Index>(d))
                  .topRows(valid);
    out.f_t = ConstMatrixMap(pt.features.data(), static_cast<Eigen::Index>(pt.l_max), static_cast<Eigen::Index>(d))
                  .topRows(valid);
    out.mask.assign(static_cast<std::size_t>(valid), 1);
    return out;
}

} // namespace fragmenta::nn
