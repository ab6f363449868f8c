#pragma once

#include <cstdint>
#include <string>

#include "gridcast/graph.hpp"
#include "gridcast/models.hpp"
#include "gridcast/tensor.hpp"

namespace gridcast {

struct LossWeights {
    double alpha = 0.5;       // frame-space weight
    double beta = 0.5;        // embedding-space weight
    double clf_weight = 1.0;  // heading classifier weight (classifier variants)
    bool stop_target_gradients = false;

    // config-level strictness: alpha, beta in (0,1), clf_weight >= 0
    void validate() const;
};

// mean((a-b)^2) with a shape check
nn::Value l2_loss(nn::Graph& g, nn::Value a, nn::Value b);
double l2_value(const Tensor& a, const Tensor& b);

// alpha * L2(frames) + beta * L2(embeddings); requires embeddings on both sides
nn::Value rae_loss(nn::Graph& g, const PredictionBundle& pred, const TargetBundle& target,
                   const LossWeights& w);

// class ids of the five heading levels {0, 1, 85, 170, 255} on the [0,1] scale
std::int32_t heading_class_of(double normalized);

// mean softmax cross-entropy of (B,3,H,W,5) logits against the heading channel
// of the normalized target frames
nn::Value heading_ce_loss(nn::Graph& g, nn::Value logits, const Tensor& target_frames);

// the full objective for any variant: dual-space loss for recurrent
// autoencoders, plain frame L2 for baselines, plus the weighted classifier
// term when the bundle carries heading logits
nn::Value training_loss(nn::Graph& g, const PredictionBundle& pred, const TargetBundle& target,
                        const LossWeights& w);

// --- evaluation metrics -----------------------------------------------------

struct MetricReport {
    double mse_total = 0.0;
    // [channel][horizon]: (speed, volume, heading) x (+5, +10, +15 min)
    double mse_breakdown[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double heading_accuracy_all = 0.0;   // every pixel
    double heading_accuracy_data = 0.0;  // pixels with target volume > 0
    std::int64_t elements = 0;           // scalar comparisons
    std::int64_t pixels = 0;             // per-channel cells
    std::int64_t data_pixels = 0;
};

// pred and target are (B, 3, H, W, 3) on the normalized [0,1] scale
MetricReport mse_metric(const Tensor& pred, const Tensor& target);

// Streaming form of mse_metric: feed any number of (pred, target) pairs, merge
// associatively, and read the combined report at the end.
struct MetricAccumulator {
    double sse[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    std::int64_t elements = 0;
    std::int64_t pixels = 0;
    std::int64_t data_pixels = 0;
    std::int64_t heading_hits_all = 0;
    std::int64_t heading_hits_data = 0;

    void add(const Tensor& pred, const Tensor& target);
    void merge(const MetricAccumulator& other);
    MetricReport report() const;  // zeros when nothing was added
};

struct HeadingAccuracy {
    double all_pixels = 0.0;
    double data_pixels = 0.0;
    std::int64_t pixel_count = 0;
    std::int64_t data_pixel_count = 0;
    std::int64_t hit_all_count = 0;
    std::int64_t hit_data_count = 0;
};
// fraction of pixels whose predicted heading snaps to the target level
HeadingAccuracy heading_accuracy(const Tensor& pred_frames, const Tensor& target_frames);

// every future frame is a copy of the last input frame
Tensor persistence_prediction(const Tensor& inputs);

// tab-separated report: scalars first, then the horizon x channel table
void write_metric_report(const MetricReport& report, const std::string& path);
MetricReport read_metric_report(const std::string& path);

}  // namespace gridcast
