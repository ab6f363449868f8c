#include "gridcast/models.hpp"

#include <algorithm>
#include <cmath>

#include "gridcast/kernels.hpp"

namespace gridcast {

namespace {

constexpr double kBnMomentum = 0.9;
constexpr double kBnEps = 1e-5;

Tensor uniform_fan_in(Rng& rng, std::vector<std::int64_t> shape, std::int64_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.next_range(-bound, bound);
    return t;
}

}  // namespace

// --- config -------------------------------------------------------------------

bool ModelConfig::is_rae() const { return variant.rfind("rae", 0) == 0; }

void ModelConfig::flags_for(const std::string& variant, bool& input_skip, bool& exogenous,
                            bool& clf_head) {
    if (variant == "rae_all") {
        input_skip = true, exogenous = true, clf_head = false;
    } else if (variant == "rae_not_in") {
        input_skip = false, exogenous = true, clf_head = false;
    } else if (variant == "rae_not_exo") {
        input_skip = true, exogenous = false, clf_head = false;
    } else if (variant == "rae_clf") {
        input_skip = true, exogenous = true, clf_head = true;
    } else if (variant == "convlstm") {
        input_skip = false, exogenous = false, clf_head = false;
    } else if (variant == "convlstm_clf") {
        input_skip = false, exogenous = false, clf_head = true;
    } else {
        throw ConfigError("model: unknown variant '" + variant + "'");
    }
}

void ModelConfig::apply_variant() {
    flags_for(variant, use_input_skip, use_exogenous, use_clf_head);
}

void ModelConfig::validate() const {
    bool skip = false, exo = false, clf = false;
    flags_for(variant, skip, exo, clf);
    if (skip != use_input_skip || exo != use_exogenous || clf != use_clf_head)
        throw ConfigError("model: flags conflict with variant '" + variant + "'");
    if (q < 1 || q > 12) throw ConfigError("model: q must lie in [1,12]");
    if (grid_h < 1 || grid_w < 1) throw ConfigError("model: grid dims must be positive");
    if (is_rae()) {
        if (num_blocks < 1) throw ConfigError("model: num_blocks must be >= 1");
        if (static_cast<std::int64_t>(block_multipliers.size()) != num_blocks)
            throw ConfigError("model: block_multipliers must list one factor per block");
        if (base_channels < 1) throw ConfigError("model: base_channels must be >= 1");
        for (auto m : block_multipliers)
            if (m < 1) throw ConfigError("model: block multipliers must be >= 1");
        if (canvas_size < (std::int64_t{1} << num_blocks))
            throw ConfigError("model: canvas_size must be at least 2^num_blocks");
        if ((canvas_size & (canvas_size - 1)) != 0)
            throw ConfigError("model: canvas_size must be a power of two");
        if (grid_h > canvas_size || grid_w > canvas_size)
            throw ConfigError("model: the grid must fit on the canvas");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("model: dropout_rate must lie in [0,1)");
        if (gru_encoder_units.empty() || gru_decoder_units.empty())
            throw ConfigError("model: recurrent unit lists must be non-empty");
        for (auto u : gru_encoder_units)
            if (u < 1) throw ConfigError("model: recurrent units must be >= 1");
        std::vector<std::int64_t> mirrored(gru_decoder_units.rbegin(), gru_decoder_units.rend());
        if (mirrored != gru_encoder_units)
            throw ConfigError(
                "model: gru_decoder_units reversed must equal gru_encoder_units");
    } else {
        if (convlstm_units.empty())
            throw ConfigError("model: convlstm_units must be non-empty");
        for (auto u : convlstm_units)
            if (u < 1) throw ConfigError("model: convlstm units must be >= 1");
    }
}

ShapeTrace trace_shapes(const ModelConfig& config) {
    config.validate();
    ShapeTrace trace;
    std::int64_t size = config.canvas_size;
    for (std::int64_t j = 0; j < config.num_blocks; ++j) {
        trace.pre_pool_sizes.push_back(size);
        size /= 2;
        trace.post_pool_sizes.push_back(size);
        trace.channels.push_back(config.block_channels(j));
    }
    trace.bottleneck_flat = config.bottleneck_flat();
    trace.embed_dim = config.embed_dim();
    return trace;
}

// --- parameter store ------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (params_.count(name)) throw DomainError("ParamStore: duplicate parameter '" + name + "'");
    order_.push_back(name);
    return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DomainError("ParamStore: no parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DomainError("ParamStore: no parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
    if (buffers_.count(name)) throw DomainError("ParamStore: duplicate buffer '" + name + "'");
    buffer_order_.push_back(name);
    return buffers_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw DomainError("ParamStore: no buffer '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw DomainError("ParamStore: no buffer '" + name + "'");
    return it->second;
}

std::int64_t ParamStore::total_params() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

namespace {

void copy_overlap(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() == src.shape()) {
        std::copy(src.data(), src.data() + src.numel(), dst.data());
        return;
    }
    if (dst.rank() != src.rank())
        throw FormatError("warm start: '" + name + "' rank differs between checkpoints");
    std::int64_t axis = -1;
    for (std::size_t a = 0; a < dst.rank(); ++a) {
        if (dst.shape()[a] != src.shape()[a]) {
            if (axis >= 0)
                throw FormatError("warm start: '" + name + "' differs in more than one axis");
            axis = static_cast<std::int64_t>(a);
        }
    }
    const std::int64_t n = std::min(dst.shape()[axis], src.shape()[axis]);
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t a = 0; a < axis; ++a) outer *= dst.shape()[a];
    for (std::size_t a = static_cast<std::size_t>(axis) + 1; a < dst.rank(); ++a)
        inner *= dst.shape()[a];
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < n; ++k)
            std::copy(src.data() + (o * src.shape()[axis] + k) * inner,
                      src.data() + (o * src.shape()[axis] + k + 1) * inner,
                      dst.data() + (o * dst.shape()[axis] + k) * inner);
}

}  // namespace

void copy_overlapping_params(ParamStore& dst, const ParamStore& src) {
    for (const auto& name : src.names())
        if (dst.has(name)) copy_overlap(dst.at(name), src.at(name), name);
    for (const auto& name : src.buffer_names())
        if (dst.has_buffer(name)) copy_overlap(dst.buffer(name), src.buffer(name), name);
}

nn::Value BoundParams::at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw DomainError("BoundParams: no parameter '" + name + "'");
    return it->second;
}

// --- construction ----------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(hash_mix(init_seed, 0x6d6f64656cULL));
    if (config_.is_rae())
        init_rae(rng);
    else
        init_convlstm(rng);
}

namespace {

// conv + batch-norm parameter block
void add_conv_bn(ParamStore& store, Rng& rng, const std::string& prefix, std::int64_t k,
                 std::int64_t cin, std::int64_t cout) {
    store.add(prefix + ".w", uniform_fan_in(rng, {k, k, cin, cout}, k * k * cin));
    store.add(prefix + ".b", Tensor({cout}));
    store.add(prefix + ".bn.g", Tensor::full({cout}, 1.0));
    store.add(prefix + ".bn.b", Tensor({cout}));
    store.add_buffer(prefix + ".bn.m", Tensor({cout}));
    store.add_buffer(prefix + ".bn.v", Tensor::full({cout}, 1.0));
}

void add_gru_layer(ParamStore& store, Rng& rng, const std::string& prefix, std::int64_t din,
                   std::int64_t units) {
    store.add(prefix + ".wx", uniform_fan_in(rng, {din, 3 * units}, din));
    store.add(prefix + ".bx", Tensor({3 * units}));
    store.add(prefix + ".whzr", uniform_fan_in(rng, {units, 2 * units}, units));
    store.add(prefix + ".whn", uniform_fan_in(rng, {units, units}, units));
}

}  // namespace

void Model::init_rae(Rng& rng) {
    const ModelConfig& c = config_;
    std::int64_t cin = 3;
    for (std::int64_t j = 0; j < c.num_blocks; ++j) {
        const std::int64_t cj = c.block_channels(j);
        const std::string b = "enc.b" + std::to_string(j);
        add_conv_bn(store_, rng, b + ".c0", 3, cin, cj);
        add_conv_bn(store_, rng, b + ".c1", 3, cj, cj);
        cin = cj;
    }
    const std::int64_t flat = c.bottleneck_flat();
    const std::int64_t fc_in = flat + (c.use_exogenous ? kExoDim : 0);
    const std::int64_t embed = c.embed_dim();
    store_.add("enc.fc.w", uniform_fan_in(rng, {fc_in, embed}, fc_in));
    store_.add("enc.fc.b", Tensor({embed}));

    std::int64_t din = embed;
    for (std::size_t i = 0; i < c.gru_encoder_units.size(); ++i) {
        add_gru_layer(store_, rng, "gru_enc.l" + std::to_string(i), din, c.gru_encoder_units[i]);
        din = c.gru_encoder_units[i];
    }
    din = embed;
    for (std::size_t i = 0; i < c.gru_decoder_units.size(); ++i) {
        add_gru_layer(store_, rng, "gru_dec.l" + std::to_string(i), din, c.gru_decoder_units[i]);
        din = c.gru_decoder_units[i];
    }

    store_.add("dec.fc.w", uniform_fan_in(rng, {embed, flat}, embed));
    store_.add("dec.fc.b", Tensor({flat}));
    for (std::int64_t j = c.num_blocks - 1; j >= 0; --j) {
        const std::int64_t cj = c.block_channels(j);
        const std::int64_t cup =
            j == c.num_blocks - 1 ? c.block_channels(c.num_blocks - 1) : c.block_channels(j + 1);
        const std::string b = "dec.b" + std::to_string(j);
        store_.add(b + ".up.w", uniform_fan_in(rng, {4, cup, cj}, cup));
        store_.add(b + ".up.b", Tensor({cj}));
        add_conv_bn(store_, rng, b + ".c0", 3, 2 * cj, cj);
        add_conv_bn(store_, rng, b + ".c1", 3, cj, cj);
    }

    const std::int64_t head_in = c.block_channels(0) + (c.use_input_skip ? 3 : 0);
    const std::int64_t head_out = c.use_clf_head ? 7 : 3;
    store_.add("head.conv.w", uniform_fan_in(rng, {3, 3, head_in, head_out}, 9 * head_in));
    store_.add("head.conv.b", Tensor({head_out}));
    if (c.use_clf_head) {
        store_.add("head.fuse.w", uniform_fan_in(rng, {1, 1, 7, 3}, 7));
        store_.add("head.fuse.b", Tensor({3}));
    }
}

void Model::init_convlstm(Rng& rng) {
    std::vector<std::int64_t> widths = config_.convlstm_units;
    widths.push_back(3);  // final layer emits the frame channels
    std::int64_t xin = 3;
    for (std::size_t l = 0; l < widths.size(); ++l) {
        const std::int64_t u = widths[l];
        const std::string p = "clstm.l" + std::to_string(l);
        store_.add(p + ".w", uniform_fan_in(rng, {3, 3, xin + u, 4 * u}, 9 * (xin + u)));
        store_.add(p + ".b", Tensor({4 * u}));
        xin = u;
    }
    if (config_.use_clf_head) {
        const std::int64_t hu = config_.convlstm_units.back();
        store_.add("clstm.aux.w", uniform_fan_in(rng, {3, 3, hu, 5}, 9 * hu));
        store_.add("clstm.aux.b", Tensor({5}));
    }
}

BoundParams Model::bind(nn::Graph& g) const {
    BoundParams bp;
    for (const auto& name : store_.names())
        bp.values[name] = g.leaf(store_.at(name), g.training());
    return bp;
}

// --- recurrent autoencoder ---------------------------------------------------------

Model::FrameEncoding Model::encode_frames(nn::Graph& g, const BoundParams& bp, nn::Value frames,
                                          std::optional<nn::Value> exo) {
    using namespace nn;
    const ModelConfig& c = config_;
    const auto& sh = g.val(frames).shape();
    if (sh.size() != 4 || sh[1] != c.canvas_size || sh[2] != c.canvas_size || sh[3] != 3)
        throw DomainError("encode_frames: expects (N, canvas, canvas, 3)");
    const std::int64_t n = sh[0];

    FrameEncoding out;
    Value x = frames;
    for (std::int64_t j = 0; j < c.num_blocks; ++j) {
        const std::string b = "enc.b" + std::to_string(j);
        for (const char* cl : {".c0", ".c1"}) {
            const std::string p = b + cl;
            x = conv2d(g, x, bp.at(p + ".w"), bp.at(p + ".b"), 3);
            x = batchnorm(g, x, bp.at(p + ".bn.g"), bp.at(p + ".bn.b"),
                          store_.buffer(p + ".bn.m"), store_.buffer(p + ".bn.v"), kBnMomentum,
                          kBnEps);
            x = relu(g, x);
        }
        out.pre_pool.push_back(x);
        x = maxpool2(g, x);
        x = dropout(g, x, c.dropout_rate);
    }
    x = reshape(g, x, {n, c.bottleneck_flat()});
    if (c.use_exogenous) {
        if (!exo) throw DomainError("encode_frames: this variant needs context rows");
        const auto& esh = g.val(*exo).shape();
        if (esh.size() != 2 || esh[0] != n || esh[1] != kExoDim)
            throw DomainError("encode_frames: context rows must be (N, 21)");
        x = concat_last(g, x, *exo);
    }
    out.embeddings = add_bias(g, matmul(g, x, bp.at("enc.fc.w")), bp.at("enc.fc.b"));
    return out;
}

nn::Value Model::gru_cell(nn::Graph& g, const BoundParams& bp, const std::string& prefix,
                          nn::Value x, nn::Value h) const {
    using namespace nn;
    const std::int64_t u = g.val(h).shape().back();
    Value gx = add_bias(g, matmul(g, x, bp.at(prefix + ".wx")), bp.at(prefix + ".bx"));
    Value zr = matmul(g, h, bp.at(prefix + ".whzr"));
    Value z = sigmoid(g, add(g, slice_last(g, gx, 0, u), slice_last(g, zr, 0, u)));
    Value r = sigmoid(g, add(g, slice_last(g, gx, u, u), slice_last(g, zr, u, u)));
    Value cand = tanh_op(
        g, add(g, slice_last(g, gx, 2 * u, u), matmul(g, mul(g, r, h), bp.at(prefix + ".whn"))));
    // carry gate: h' = z*h + (1-z)*cand
    return add(g, mul(g, z, h), sub(g, cand, mul(g, z, cand)));
}

RecurrentState Model::encode_sequence(nn::Graph& g, const BoundParams& bp, nn::Value embeddings,
                                      std::int64_t batch, std::int64_t q) const {
    using namespace nn;
    if (q < 1) throw DomainError("encode_sequence: q must be >= 1");
    const auto& units = config_.gru_encoder_units;
    RecurrentState state;
    for (auto u : units) state.hidden.push_back(g.leaf(Tensor({batch, u})));
    for (std::int64_t t = 0; t < q; ++t) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(batch));
        for (std::int64_t b = 0; b < batch; ++b) idx[static_cast<std::size_t>(b)] = b * q + t;
        Value x = gather_rows(g, embeddings, idx);
        for (std::size_t i = 0; i < units.size(); ++i) {
            state.hidden[i] = gru_cell(g, bp, "gru_enc.l" + std::to_string(i), x, state.hidden[i]);
            x = state.hidden[i];
        }
    }
    return state;
}

nn::Value Model::predict_embeddings(nn::Graph& g, const BoundParams& bp,
                                    const RecurrentState& state, std::int64_t batch) const {
    using namespace nn;
    const auto& units = config_.gru_decoder_units;
    const std::size_t layers = units.size();
    if (state.hidden.size() != layers)
        throw DomainError("predict_embeddings: state has the wrong layer count");
    std::vector<Value> hidden(layers);
    for (std::size_t i = 0; i < layers; ++i) hidden[i] = state.hidden[layers - 1 - i];

    Value prev = g.leaf(Tensor({batch, config_.embed_dim()}));
    std::vector<Value> steps;
    for (int t = 0; t < 3; ++t) {
        Value x = prev;
        for (std::size_t i = 0; i < layers; ++i) {
            hidden[i] = gru_cell(g, bp, "gru_dec.l" + std::to_string(i), x, hidden[i]);
            x = hidden[i];
        }
        steps.push_back(x);
        prev = x;
    }
    Value flat = concat_last(g, concat_last(g, steps[0], steps[1]), steps[2]);
    return reshape(g, flat, {batch, 3, config_.embed_dim()});
}

PredictionBundle Model::decode_frames(nn::Graph& g, const BoundParams& bp, nn::Value embeddings,
                                      const SkipStack& skips) {
    using namespace nn;
    const ModelConfig& c = config_;
    const auto& sh = g.val(embeddings).shape();
    if (sh.size() != 3 || sh[1] != 3 || sh[2] != c.embed_dim())
        throw DomainError("decode_frames: embeddings must be (B, 3, embed_dim)");
    const std::int64_t batch = sh[0];
    if (static_cast<std::int64_t>(skips.maps.size()) != c.num_blocks)
        throw DomainError("decode_frames: one skip map per block required");
    for (std::int64_t j = 0; j < c.num_blocks; ++j) {
        const auto& ms = g.val(skips.maps[static_cast<std::size_t>(j)]).shape();
        const std::int64_t want = c.canvas_size >> j;
        if (ms.size() != 4 || ms[0] != batch || ms[1] != want || ms[2] != want ||
            ms[3] != c.block_channels(j))
            throw DomainError("decode_frames: skip map " + std::to_string(j) +
                              " has the wrong shape");
    }
    if (c.use_input_skip && !skips.raw_frame)
        throw DomainError("decode_frames: this variant needs the raw last frame");

    std::vector<std::int64_t> tile(static_cast<std::size_t>(batch * 3));
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < 3; ++t) tile[static_cast<std::size_t>(b * 3 + t)] = b;

    Value x = reshape(g, embeddings, {batch * 3, c.embed_dim()});
    x = add_bias(g, matmul(g, x, bp.at("dec.fc.w")), bp.at("dec.fc.b"));
    const std::int64_t bs = c.bottleneck_size();
    x = reshape(g, x, {batch * 3, bs, bs, c.block_channels(c.num_blocks - 1)});
    for (std::int64_t j = c.num_blocks - 1; j >= 0; --j) {
        const std::string b = "dec.b" + std::to_string(j);
        x = convtr2(g, x, bp.at(b + ".up.w"), bp.at(b + ".up.b"));
        x = concat_last(g, x, gather_rows(g, skips.maps[static_cast<std::size_t>(j)], tile));
        for (const char* cl : {".c0", ".c1"}) {
            const std::string p = b + cl;
            x = conv2d(g, x, bp.at(p + ".w"), bp.at(p + ".b"), 3);
            x = batchnorm(g, x, bp.at(p + ".bn.g"), bp.at(p + ".bn.b"),
                          store_.buffer(p + ".bn.m"), store_.buffer(p + ".bn.v"), kBnMomentum,
                          kBnEps);
            x = relu(g, x);
        }
        x = dropout(g, x, c.dropout_rate);
    }
    if (c.use_input_skip) x = concat_last(g, x, gather_rows(g, *skips.raw_frame, tile));
    const std::int64_t off_y = (c.canvas_size - c.grid_h) / 2;
    const std::int64_t off_x = (c.canvas_size - c.grid_w) / 2;
    x = crop_hw(g, x, off_y, off_x, c.grid_h, c.grid_w);

    Value head = conv2d(g, x, bp.at("head.conv.w"), bp.at("head.conv.b"), 3);
    PredictionBundle out;
    if (!c.use_clf_head) {
        out.frames = reshape(g, relu(g, head), {batch, 3, c.grid_h, c.grid_w, 3});
    } else {
        Value reg = relu(g, slice_last(g, head, 0, 2));
        Value logits = slice_last(g, head, 2, 5);
        Value fused = concat_last(g, reg, softmax_last(g, logits));
        Value mixed = conv2d(g, fused, bp.at("head.fuse.w"), bp.at("head.fuse.b"), 1);
        out.frames = reshape(g, relu(g, mixed), {batch, 3, c.grid_h, c.grid_w, 3});
        out.aux_heading_logits = reshape(g, logits, {batch, 3, c.grid_h, c.grid_w, 5});
    }
    return out;
}

PredictionBundle Model::forward_rae(nn::Graph& g, const BoundParams& bp, const Batch& batch,
                                    TargetBundle* targets) {
    using namespace nn;
    const ModelConfig& c = config_;
    const std::int64_t bsize = batch.size();
    const std::int64_t q = c.q;
    const std::int64_t n_in = bsize * q;
    const std::int64_t n = n_in + (targets ? bsize * 3 : 0);
    const std::int64_t s = c.canvas_size;

    Tensor canvas({n, s, s, 3});
    kern::bilinear_resize(batch.inputs.data(), canvas.data(), n_in, c.grid_h, c.grid_w, s, s, 3);
    if (targets)
        kern::bilinear_resize(batch.targets.data(), canvas.data() + n_in * s * s * 3, bsize * 3,
                              c.grid_h, c.grid_w, s, s, 3);
    Value frames = g.leaf(std::move(canvas));

    std::optional<Value> exo;
    if (c.use_exogenous) {
        Value exo_rows = g.leaf(batch.exo);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        for (std::int64_t b = 0; b < bsize; ++b) {
            for (std::int64_t t = 0; t < q; ++t) idx[static_cast<std::size_t>(b * q + t)] = b;
            if (targets)
                for (std::int64_t t = 0; t < 3; ++t)
                    idx[static_cast<std::size_t>(n_in + b * 3 + t)] = b;
        }
        exo = gather_rows(g, exo_rows, idx);
    }

    FrameEncoding enc = encode_frames(g, bp, frames, exo);
    RecurrentState state = encode_sequence(g, bp, enc.embeddings, bsize, q);
    Value predicted = predict_embeddings(g, bp, state, bsize);

    std::vector<std::int64_t> last(static_cast<std::size_t>(bsize));
    for (std::int64_t b = 0; b < bsize; ++b) last[static_cast<std::size_t>(b)] = b * q + q - 1;
    SkipStack skips;
    for (auto& m : enc.pre_pool) skips.maps.push_back(gather_rows(g, m, last));
    if (c.use_input_skip) skips.raw_frame = gather_rows(g, frames, last);

    PredictionBundle out = decode_frames(g, bp, predicted, skips);
    out.embeddings = predicted;

    if (targets) {
        targets->frames = g.leaf(batch.targets);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(bsize * 3));
        for (std::int64_t i = 0; i < bsize * 3; ++i)
            idx[static_cast<std::size_t>(i)] = n_in + i;
        Value e3 = gather_rows(g, enc.embeddings, idx);
        targets->embeddings = reshape(g, e3, {bsize, 3, c.embed_dim()});
    }
    return out;
}

// --- convolutional-recurrent baseline -------------------------------------------------

PredictionBundle Model::forward_convlstm(nn::Graph& g, const BoundParams& bp, const Batch& batch,
                                         TargetBundle* targets) {
    using namespace nn;
    const ModelConfig& c = config_;
    const std::int64_t bsize = batch.size();
    const std::int64_t q = c.q;
    std::vector<std::int64_t> widths = c.convlstm_units;
    widths.push_back(3);
    const std::size_t layers = widths.size();

    Value inputs = g.leaf(batch.inputs);
    Value rows = reshape(g, inputs, {bsize * q, c.grid_h, c.grid_w, 3});

    std::vector<Value> h(layers), cell(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        h[l] = g.leaf(Tensor({bsize, c.grid_h, c.grid_w, widths[l]}));
        cell[l] = g.leaf(Tensor({bsize, c.grid_h, c.grid_w, widths[l]}));
    }

    auto step = [&](Value x) {
        for (std::size_t l = 0; l < layers; ++l) {
            const std::int64_t u = widths[l];
            const std::string p = "clstm.l" + std::to_string(l);
            Value gates = conv2d(g, concat_last(g, x, h[l]), bp.at(p + ".w"), bp.at(p + ".b"), 3);
            Value in_g = sigmoid(g, slice_last(g, gates, 0, u));
            Value forget = sigmoid(g, slice_last(g, gates, u, u));
            Value out_g = sigmoid(g, slice_last(g, gates, 2 * u, u));
            Value cand = tanh_op(g, slice_last(g, gates, 3 * u, u));
            cell[l] = add(g, mul(g, forget, cell[l]), mul(g, in_g, cand));
            // the frame-emitting layer rectifies so outputs cover [0, inf)
            h[l] = mul(g, out_g, l + 1 == layers ? relu(g, cell[l]) : tanh_op(g, cell[l]));
            x = h[l];
        }
        return x;
    };

    Value cur;
    for (std::int64_t t = 0; t < q; ++t) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(bsize));
        for (std::int64_t b = 0; b < bsize; ++b) idx[static_cast<std::size_t>(b)] = b * q + t;
        cur = step(gather_rows(g, rows, idx));
    }

    std::vector<Value> frames, aux;
    for (int t = 0; t < 3; ++t) {
        cur = step(cur);  // feeds the previous frame estimate back in
        frames.push_back(reshape(g, cur, {bsize, c.grid_h * c.grid_w * 3}));
        if (c.use_clf_head)
            aux.push_back(reshape(g,
                                  conv2d(g, h[layers - 2], bp.at("clstm.aux.w"),
                                         bp.at("clstm.aux.b"), 3),
                                  {bsize, c.grid_h * c.grid_w * 5}));
    }

    PredictionBundle out;
    Value stacked = concat_last(g, concat_last(g, frames[0], frames[1]), frames[2]);
    out.frames = reshape(g, stacked, {bsize, 3, c.grid_h, c.grid_w, 3});
    if (c.use_clf_head) {
        Value astack = concat_last(g, concat_last(g, aux[0], aux[1]), aux[2]);
        out.aux_heading_logits = reshape(g, astack, {bsize, 3, c.grid_h, c.grid_w, 5});
    }
    if (targets) targets->frames = g.leaf(batch.targets);
    return out;
}

PredictionBundle Model::forward(nn::Graph& g, const BoundParams& bp, const Batch& batch,
                                TargetBundle* targets) {
    const ModelConfig& c = config_;
    const auto& sh = batch.inputs.shape();
    if (sh.size() != 5 || sh[4] != 3) throw DomainError("forward: inputs must be (B,q,H,W,3)");
    if (sh[1] != c.q)
        throw DomainError("forward: batch input length " + std::to_string(sh[1]) +
                          " != configured q " + std::to_string(c.q));
    if (sh[2] != c.grid_h || sh[3] != c.grid_w)
        throw DomainError("forward: batch grid dims disagree with the model config");
    return c.is_rae() ? forward_rae(g, bp, batch, targets)
                      : forward_convlstm(g, bp, batch, targets);
}

}  // namespace gridcast
