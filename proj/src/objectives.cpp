#include "gridcast/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gridcast/codec.hpp"

namespace gridcast {

void LossWeights::validate() const {
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("loss: alpha must lie in (0,1)");
    if (beta <= 0.0 || beta >= 1.0) throw ConfigError("loss: beta must lie in (0,1)");
    if (clf_weight < 0.0) throw ConfigError("loss: clf_weight must be >= 0");
}

nn::Value l2_loss(nn::Graph& g, nn::Value a, nn::Value b) {
    if (g.val(a).shape() != g.val(b).shape())
        throw DomainError("l2_loss: tensors differ in shape");
    return nn::l2(g, a, b);
}

double l2_value(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DomainError("l2_value: tensors differ in shape");
    if (a.numel() == 0) throw DomainError("l2_value: empty tensors");
    double sum = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.numel());
}

nn::Value rae_loss(nn::Graph& g, const PredictionBundle& pred, const TargetBundle& target,
                   const LossWeights& w) {
    if (!pred.embeddings)
        throw DomainError("rae_loss: prediction carries no embeddings (baseline bundle?)");
    if (!target.embeddings)
        throw DomainError("rae_loss: target carries no embeddings");
    nn::Value e3 = *target.embeddings;
    if (w.stop_target_gradients) e3 = nn::detach(g, e3);
    nn::Value frame_term = l2_loss(g, pred.frames, target.frames);
    nn::Value embed_term = l2_loss(g, *pred.embeddings, e3);
    return nn::add(g, nn::affine(g, frame_term, w.alpha, 0.0),
                   nn::affine(g, embed_term, w.beta, 0.0));
}

std::int32_t heading_class_of(double normalized) {
    const long long level = round_half_away(normalized * 255.0);
    switch (level) {
        case 0: return 0;
        case 1: return 1;
        case 85: return 2;
        case 170: return 3;
        case 255: return 4;
        default:
            throw DataError("heading value " + std::to_string(normalized) +
                            " is not one of the five levels");
    }
}

nn::Value heading_ce_loss(nn::Graph& g, nn::Value logits, const Tensor& target_frames) {
    const auto& lsh = g.val(logits).shape();
    const auto& tsh = target_frames.shape();
    if (lsh.size() != 5 || lsh.back() != 5)
        throw DomainError("heading_ce_loss: logits must be (B,3,H,W,5)");
    if (tsh.size() != 5 || tsh.back() != 3)
        throw DomainError("heading_ce_loss: targets must be (B,3,H,W,3)");
    for (int a = 0; a < 4; ++a)
        if (lsh[a] != tsh[a]) throw DomainError("heading_ce_loss: logits/target dims disagree");

    const std::int64_t pixels = target_frames.numel() / 3;
    std::vector<std::int32_t> classes(static_cast<std::size_t>(pixels));
    for (std::int64_t p = 0; p < pixels; ++p)
        classes[static_cast<std::size_t>(p)] = heading_class_of(target_frames[p * 3 + 2]);
    return nn::softmax_cross_entropy(g, logits, classes);
}

nn::Value training_loss(nn::Graph& g, const PredictionBundle& pred, const TargetBundle& target,
                        const LossWeights& w) {
    nn::Value base = pred.embeddings ? rae_loss(g, pred, target, w)
                                     : l2_loss(g, pred.frames, target.frames);
    if (pred.aux_heading_logits) {
        nn::Value ce = heading_ce_loss(g, *pred.aux_heading_logits, g.val(target.frames));
        base = nn::add(g, base, nn::affine(g, ce, w.clf_weight, 0.0));
    }
    return base;
}

// --- metrics -------------------------------------------------------------------

void MetricAccumulator::add(const Tensor& pred, const Tensor& target) {
    const auto& sh = pred.shape();
    if (sh != target.shape()) throw DomainError("mse_metric: tensors differ in shape");
    if (sh.size() != 5 || sh[1] != 3 || sh[4] != 3)
        throw DomainError("mse_metric: expects (B,3,H,W,3)");
    const std::int64_t b = sh[0], h = sh[2], w = sh[3];

    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t t = 0; t < 3; ++t)
            for (std::int64_t p = 0; p < h * w; ++p)
                for (std::int64_t c = 0; c < 3; ++c) {
                    const std::int64_t at = ((i * 3 + t) * h * w + p) * 3 + c;
                    const double d = pred[at] - target[at];
                    sse[c][t] += d * d;
                }

    const HeadingAccuracy acc = heading_accuracy(pred, target);
    elements += pred.numel();
    pixels += acc.pixel_count;
    data_pixels += acc.data_pixel_count;
    heading_hits_all += acc.hit_all_count;
    heading_hits_data += acc.hit_data_count;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < 3; ++t) sse[c][t] += other.sse[c][t];
    elements += other.elements;
    pixels += other.pixels;
    data_pixels += other.data_pixels;
    heading_hits_all += other.heading_hits_all;
    heading_hits_data += other.heading_hits_data;
}

MetricReport MetricAccumulator::report() const {
    MetricReport out;
    if (elements == 0) return out;
    const double cell = static_cast<double>(pixels) / 3.0;  // per (channel, horizon)
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < 3; ++t) {
            out.mse_breakdown[c][t] = sse[c][t] / cell;
            total += sse[c][t];
        }
    out.mse_total = total / static_cast<double>(elements);
    out.heading_accuracy_all =
        static_cast<double>(heading_hits_all) / static_cast<double>(pixels);
    out.heading_accuracy_data =
        data_pixels > 0 ? static_cast<double>(heading_hits_data) / static_cast<double>(data_pixels)
                        : 0.0;
    out.elements = elements;
    out.pixels = pixels;
    out.data_pixels = data_pixels;
    return out;
}

MetricReport mse_metric(const Tensor& pred, const Tensor& target) {
    MetricAccumulator acc;
    acc.add(pred, target);
    return acc.report();
}

HeadingAccuracy heading_accuracy(const Tensor& pred_frames, const Tensor& target_frames) {
    if (pred_frames.shape() != target_frames.shape())
        throw DomainError("heading_accuracy: tensors differ in shape");
    if (pred_frames.shape().empty() || pred_frames.shape().back() != 3)
        throw DomainError("heading_accuracy: expects a trailing (speed,volume,heading) axis");
    const std::int64_t pixels = pred_frames.numel() / 3;
    HeadingAccuracy acc;
    acc.pixel_count = pixels;
    for (std::int64_t p = 0; p < pixels; ++p) {
        const bool hit = snap_heading(pred_frames[p * 3 + 2]) == target_frames[p * 3 + 2];
        acc.hit_all_count += hit;
        if (target_frames[p * 3 + 1] > 0.0) {
            ++acc.data_pixel_count;
            acc.hit_data_count += hit;
        }
    }
    acc.all_pixels =
        pixels > 0 ? static_cast<double>(acc.hit_all_count) / static_cast<double>(pixels) : 0.0;
    acc.data_pixels = acc.data_pixel_count > 0 ? static_cast<double>(acc.hit_data_count) /
                                                     static_cast<double>(acc.data_pixel_count)
                                               : 0.0;
    return acc;
}

Tensor persistence_prediction(const Tensor& inputs) {
    const auto& sh = inputs.shape();
    if (sh.size() != 5 || sh[4] != 3)
        throw DomainError("persistence_prediction: expects (B,q,H,W,3)");
    const std::int64_t b = sh[0], q = sh[1], frame = sh[2] * sh[3] * 3;
    Tensor out({b, 3, sh[2], sh[3], 3});
    for (std::int64_t i = 0; i < b; ++i) {
        const double* last = inputs.data() + (i * q + q - 1) * frame;
        for (std::int64_t t = 0; t < 3; ++t)
            std::copy(last, last + frame, out.data() + (i * 3 + t) * frame);
    }
    return out;
}

// --- report files -----------------------------------------------------------------

void write_metric_report(const MetricReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_metric_report: cannot open '" + path + "'");
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "mse_total\t" << fmt(report.mse_total) << "\n";
    out << "heading_accuracy_all\t" << fmt(report.heading_accuracy_all) << "\n";
    out << "heading_accuracy_data\t" << fmt(report.heading_accuracy_data) << "\n";
    out << "elements\t" << report.elements << "\n";
    out << "pixels\t" << report.pixels << "\n";
    out << "data_pixels\t" << report.data_pixels << "\n";
    out << "horizon_min\tspeed\tvolume\theading\n";
    for (int t = 0; t < 3; ++t) {
        out << (t + 1) * 5;
        for (int c = 0; c < 3; ++c) out << "\t" << fmt(report.mse_breakdown[c][t]);
        out << "\n";
    }
    if (!out) throw IoError("write_metric_report: short write to '" + path + "'");
}

MetricReport read_metric_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_metric_report: cannot open '" + path + "'");
    MetricReport report;
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line))
            throw FormatError("read_metric_report: '" + path + "' is missing " + what);
        return line;
    };
    auto scalar = [&](const char* key) {
        next_line(key);
        std::istringstream row(line);
        std::string name;
        double value = 0.0;
        if (!(row >> name >> value) || name != key)
            throw FormatError("read_metric_report: '" + path + "' expected a '" +
                              std::string(key) + "' row");
        return value;
    };
    report.mse_total = scalar("mse_total");
    report.heading_accuracy_all = scalar("heading_accuracy_all");
    report.heading_accuracy_data = scalar("heading_accuracy_data");
    report.elements = static_cast<std::int64_t>(scalar("elements"));
    report.pixels = static_cast<std::int64_t>(scalar("pixels"));
    report.data_pixels = static_cast<std::int64_t>(scalar("data_pixels"));
    next_line("the table header");
    if (line != "horizon_min\tspeed\tvolume\theading")
        throw FormatError("read_metric_report: '" + path + "' has a malformed table header");
    for (int t = 0; t < 3; ++t) {
        next_line("a table row");
        std::istringstream row(line);
        int horizon = 0;
        if (!(row >> horizon) || horizon != (t + 1) * 5)
            throw FormatError("read_metric_report: '" + path + "' table rows out of order");
        for (int c = 0; c < 3; ++c)
            if (!(row >> report.mse_breakdown[c][t]))
                throw FormatError("read_metric_report: '" + path + "' truncated table row");
    }
    return report;
}

}  // namespace gridcast
