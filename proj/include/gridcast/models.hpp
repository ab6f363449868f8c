#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridcast/graph.hpp"
#include "gridcast/sampler.hpp"
#include "gridcast/tensor.hpp"

namespace gridcast {

// Variants: rae_all, rae_not_in (no raw-frame skip), rae_not_exo (no context
// vector), rae_clf (adds the per-pixel heading classifier), convlstm,
// convlstm_clf. The three flags are derived from the variant; setting them to
// anything else is a config error.
struct ModelConfig {
    std::string variant = "rae_all";
    bool use_input_skip = true;
    bool use_exogenous = true;
    bool use_clf_head = false;

    std::int64_t canvas_size = 512;  // power of two, >= 2^num_blocks
    std::int64_t grid_h = 495;
    std::int64_t grid_w = 436;
    std::int64_t num_blocks = 6;
    std::int64_t base_channels = 16;
    std::vector<std::int64_t> block_multipliers = {1, 2, 4, 8, 8, 2};
    double dropout_rate = 0.5;
    std::vector<std::int64_t> gru_encoder_units = {2048, 256, 128};
    std::vector<std::int64_t> gru_decoder_units = {128, 256, 2048};
    std::vector<std::int64_t> convlstm_units = {32, 64, 64};
    std::int64_t q = 3;

    bool is_rae() const;
    // flags implied by a variant name; throws ConfigError on an unknown name
    static void flags_for(const std::string& variant, bool& input_skip, bool& exogenous,
                          bool& clf_head);
    void apply_variant();  // overwrite the flags from the variant name
    void validate() const;

    std::int64_t embed_dim() const { return gru_encoder_units.front(); }
    std::int64_t block_channels(std::int64_t block) const {
        return base_channels * block_multipliers[static_cast<std::size_t>(block)];
    }
    std::int64_t bottleneck_size() const { return canvas_size >> num_blocks; }
    std::int64_t bottleneck_flat() const {
        return bottleneck_size() * bottleneck_size() * block_channels(num_blocks - 1);
    }
};

// Per-block dims of the conv encoder, computable without instantiating weights.
struct ShapeTrace {
    std::vector<std::int64_t> pre_pool_sizes;   // spatial size entering each pool
    std::vector<std::int64_t> post_pool_sizes;  // spatial size after each block
    std::vector<std::int64_t> channels;         // width of each block
    std::int64_t bottleneck_flat = 0;
    std::int64_t embed_dim = 0;
};
ShapeTrace trace_shapes(const ModelConfig& config);

// Named tensors: trainable parameters plus non-trainable buffers (batch-norm
// running statistics), each kept in insertion order.
class ParamStore {
  public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }

    Tensor& add_buffer(const std::string& name, Tensor t);
    Tensor& buffer(const std::string& name);
    const Tensor& buffer(const std::string& name) const;
    bool has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }
    const std::vector<std::string>& buffer_names() const { return buffer_order_; }

    std::int64_t total_params() const;

  private:
    std::vector<std::string> order_;
    std::vector<std::string> buffer_order_;
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> buffers_;
};

// Warm start: copy src entries into dst by name. Shapes may differ in at most
// one axis; the overlapping slice is copied and the rest keeps dst's fresh
// initialization. Entries on either side without a counterpart are left alone.
void copy_overlapping_params(ParamStore& dst, const ParamStore& src);

// Graph leaves for one forward/backward pass.
struct BoundParams {
    std::map<std::string, nn::Value> values;
    nn::Value at(const std::string& name) const;
};

struct PredictionBundle {
    nn::Value frames;                             // (B, 3, grid_h, grid_w, 3), >= 0
    std::optional<nn::Value> embeddings;          // (B, 3, embed_dim)
    std::optional<nn::Value> aux_heading_logits;  // (B, 3, grid_h, grid_w, 5)
};

struct TargetBundle {
    nn::Value frames;                     // (B, 3, grid_h, grid_w, 3) leaf
    std::optional<nn::Value> embeddings;  // shared encoder applied to the targets
};

// Pre-pool activations of the last input frame, one per block, deepest last;
// raw_frame is the canvas-resolution frame itself when the variant uses it.
struct SkipStack {
    std::vector<nn::Value> maps;
    std::optional<nn::Value> raw_frame;
};

struct RecurrentState {
    std::vector<nn::Value> hidden;  // one per recurrent layer
};

class Model {
  public:
    Model(ModelConfig config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    BoundParams bind(nn::Graph& g) const;

    // Conv encoder over N stacked canvas frames (N, S, S, 3); exo is (N, 21)
    // rows when the variant uses it. Returns (N, embed_dim) embeddings plus the
    // per-block pre-pool activations.
    struct FrameEncoding {
        nn::Value embeddings;
        std::vector<nn::Value> pre_pool;
    };
    FrameEncoding encode_frames(nn::Graph& g, const BoundParams& bp, nn::Value frames,
                                std::optional<nn::Value> exo);

    // Recurrent encoding of per-frame embeddings laid out (batch*q, E) with row
    // b*q + t; returns the final hidden state of every layer.
    RecurrentState encode_sequence(nn::Graph& g, const BoundParams& bp, nn::Value embeddings,
                                   std::int64_t batch, std::int64_t q) const;

    // Recurrent decoder unrolled exactly 3 steps, autoregressive in embedding
    // space; returns (B, 3, embed_dim).
    nn::Value predict_embeddings(nn::Graph& g, const BoundParams& bp,
                                 const RecurrentState& state, std::int64_t batch) const;

    // Mirror decoder: embeddings (B, 3, E) + the last input frame's skips →
    // frames (B, 3, grid_h, grid_w, 3) and, for the classifier variant, the
    // per-pixel heading logits.
    PredictionBundle decode_frames(nn::Graph& g, const BoundParams& bp, nn::Value embeddings,
                                   const SkipStack& skips);

    // Full pass over a batch. When `targets` is given it is filled with the
    // target-frame leaf and (for recurrent-autoencoder variants) the shared
    // encoder's embeddings of those frames, computed in the same conv pass.
    PredictionBundle forward(nn::Graph& g, const BoundParams& bp, const Batch& batch,
                             TargetBundle* targets = nullptr);

  private:
    void init_rae(Rng& rng);
    void init_convlstm(Rng& rng);
    nn::Value gru_cell(nn::Graph& g, const BoundParams& bp, const std::string& prefix,
                       nn::Value x, nn::Value h) const;
    PredictionBundle forward_rae(nn::Graph& g, const BoundParams& bp, const Batch& batch,
                                 TargetBundle* targets);
    PredictionBundle forward_convlstm(nn::Graph& g, const BoundParams& bp, const Batch& batch,
                                      TargetBundle* targets);

    ModelConfig config_;
    ParamStore store_;
};

}  // namespace gridcast
