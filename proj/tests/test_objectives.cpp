#include <doctest.h>

#include <cmath>
#include <fstream>
#include <vector>
#include "gridcast/codec.hpp"
#include "gridcast/graph.hpp"
#include "gridcast/models.hpp"
#include "gridcast/objectives.hpp"
#include "temp_dir.hpp"

using namespace gridcast;

namespace {

Tensor random_unit(const std::vector<std::int64_t>& shape, std::uint64_t seed) {
    Tensor t(shape);
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.next_unit();
    return t;
}

// frames filled with valid channel values: random speed/volume, heading at a level
Tensor random_frames(std::int64_t b, std::int64_t h, std::int64_t w, std::uint64_t seed) {
    static const double kLevels[5] = {0.0, 1.0 / 255.0, 85.0 / 255.0, 170.0 / 255.0, 1.0};
    Tensor t({b, 3, h, w, 3});
    Rng rng(seed);
    for (std::int64_t p = 0; p < t.numel() / 3; ++p) {
        t[p * 3 + 0] = rng.next_unit();
        t[p * 3 + 1] = rng.next_unit();
        t[p * 3 + 2] = kLevels[rng.next_below(5)];
    }
    return t;
}

}  // namespace

TEST_CASE("loss weights accept the defaults and reject boundary values") {
    LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.alpha = 0.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w.alpha = 1.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w = LossWeights{};
    w.beta = 0.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w = LossWeights{};
    w.clf_weight = -0.1;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w.clf_weight = 0.0;
    CHECK_NOTHROW(w.validate());
}

TEST_CASE("l2 loss matches a scalar-loop oracle") {
    nn::Graph g(false, 0);
    nn::Value a = g.leaf(Tensor::zeros({4, 5}), false);
    nn::Value b = g.leaf(Tensor::full({4, 5}, 0.5), false);
    CHECK(g.val(l2_loss(g, a, b))[0] == doctest::Approx(0.25).epsilon(1e-15));

    Tensor ta = random_unit({3, 7, 2}, 11);
    Tensor tb = random_unit({3, 7, 2}, 12);
    double want = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) want += (ta[i] - tb[i]) * (ta[i] - tb[i]);
    want /= static_cast<double>(ta.numel());
    nn::Value va = g.leaf(ta, false);
    nn::Value vb = g.leaf(tb, false);
    CHECK(g.val(l2_loss(g, va, vb))[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(l2_value(ta, tb) == doctest::Approx(want).epsilon(1e-15));

    nn::Value odd = g.leaf(Tensor::zeros({4, 4}), false);
    CHECK_THROWS_AS(l2_loss(g, a, odd), DomainError);
    CHECK_THROWS_AS(l2_value(ta, Tensor::zeros({3, 7, 3})), DomainError);
}

TEST_CASE("dual-space loss combines frame and embedding error") {
    nn::Graph g(false, 0);
    auto bundle = [&](double frame_fill, double emb_fill) {
        PredictionBundle p;
        p.frames = g.leaf(Tensor::full({2, 3, 4, 4, 3}, frame_fill), false);
        p.embeddings = g.leaf(Tensor::full({2, 3, 6}, emb_fill), false);
        return p;
    };
    auto target_of = [&](const PredictionBundle& p) {
        TargetBundle t;
        t.frames = p.frames;
        t.embeddings = p.embeddings;
        return t;
    };

    LossWeights w;
    PredictionBundle pred = bundle(0.2, 1.0);
    TargetBundle target;
    target.frames = g.leaf(Tensor::full({2, 3, 4, 4, 3}, 0.5), false);
    target.embeddings = g.leaf(Tensor::zeros({2, 3, 6}), false);

    SUBCASE("perfect prediction scores zero") {
        TargetBundle same = target_of(pred);
        CHECK(g.val(rae_loss(g, pred, same, w))[0] == 0.0);
    }
    SUBCASE("hand-computed mixture") {
        // frames differ by 0.3 everywhere -> L2 0.09; embeddings by 1 -> L2 1.0
        const double got = g.val(rae_loss(g, pred, target, w))[0];
        CHECK(got == doctest::Approx(0.5 * 0.09 + 0.5 * 1.0).epsilon(1e-12));
    }
    SUBCASE("weights scale each term") {
        LossWeights heavy;
        heavy.alpha = 0.25;
        heavy.beta = 0.75;
        const double got = g.val(rae_loss(g, pred, target, heavy))[0];
        CHECK(got == doctest::Approx(0.25 * 0.09 + 0.75 * 1.0).epsilon(1e-12));
    }
    SUBCASE("zero beta isolates the frame term") {
        LossWeights frames_only;
        frames_only.beta = 0.0;  // valid here, rejected at config level
        const double got = g.val(rae_loss(g, pred, target, frames_only))[0];
        CHECK(got == doctest::Approx(0.5 * 0.09).epsilon(1e-12));
    }
    SUBCASE("missing embeddings throw") {
        PredictionBundle bare;
        bare.frames = pred.frames;
        CHECK_THROWS_AS(rae_loss(g, bare, target, w), DomainError);
        TargetBundle bare_target;
        bare_target.frames = target.frames;
        CHECK_THROWS_AS(rae_loss(g, pred, bare_target, w), DomainError);
    }
}

TEST_CASE("stopping target gradients detaches the target embedding") {
    for (bool stop : {false, true}) {
        CAPTURE(stop);
        nn::Graph g(true, 7);
        PredictionBundle pred;
        pred.frames = g.leaf(random_unit({1, 3, 2, 2, 3}, 21), true);
        pred.embeddings = g.leaf(random_unit({1, 3, 4}, 22), true);
        TargetBundle target;
        nn::Value target_emb = g.leaf(random_unit({1, 3, 4}, 23), true);
        target.frames = g.leaf(random_unit({1, 3, 2, 2, 3}, 24), false);
        target.embeddings = target_emb;

        LossWeights w;
        w.stop_target_gradients = stop;
        g.backward(rae_loss(g, pred, target, w));
        if (stop) {
            CHECK_THROWS_AS(g.grad_of(target_emb), DomainError);
        } else {
            double mag = 0.0;
            const Tensor& grad = g.grad_of(target_emb);
            for (std::int64_t i = 0; i < grad.numel(); ++i) mag += std::abs(grad[i]);
            CHECK(mag > 0.0);
        }
        // the prediction side always learns
        CHECK_NOTHROW(g.grad_of(*pred.embeddings));
    }
}

TEST_CASE("heading classes map the five levels and reject everything else") {
    CHECK(heading_class_of(0.0) == 0);
    CHECK(heading_class_of(1.0 / 255.0) == 1);
    CHECK(heading_class_of(85.0 / 255.0) == 2);
    CHECK(heading_class_of(170.0 / 255.0) == 3);
    CHECK(heading_class_of(1.0) == 4);
    CHECK_THROWS_AS(heading_class_of(0.3), DataError);
    CHECK_THROWS_AS(heading_class_of(-1.0 / 255.0), DataError);
}

TEST_CASE("heading cross-entropy against hand oracles") {
    const std::int64_t b = 2, h = 3, w = 2;
    Tensor target = random_frames(b, h, w, 31);

    SUBCASE("uniform logits cost ln 5") {
        nn::Graph g(false, 0);
        nn::Value logits = g.leaf(Tensor::zeros({b, 3, h, w, 5}), false);
        CHECK(g.val(heading_ce_loss(g, logits, target))[0] ==
              doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
    SUBCASE("a confident correct answer costs almost nothing") {
        Tensor logits({b, 3, h, w, 5});
        for (std::int64_t p = 0; p < target.numel() / 3; ++p)
            logits[p * 5 + heading_class_of(target[p * 3 + 2])] = 20.0;
        nn::Graph g(false, 0);
        CHECK(g.val(heading_ce_loss(g, g.leaf(logits, false), target))[0] < 1e-3);
    }
    SUBCASE("random logits match a per-pixel oracle") {
        Tensor logits = random_unit({b, 3, h, w, 5}, 32);
        double want = 0.0;
        const std::int64_t pixels = target.numel() / 3;
        for (std::int64_t p = 0; p < pixels; ++p) {
            double z = 0.0;
            for (int j = 0; j < 5; ++j) z += std::exp(logits[p * 5 + j]);
            want += std::log(z) - logits[p * 5 + heading_class_of(target[p * 3 + 2])];
        }
        want /= static_cast<double>(pixels);
        nn::Graph g(false, 0);
        CHECK(g.val(heading_ce_loss(g, g.leaf(logits, false), target))[0] ==
              doctest::Approx(want).epsilon(1e-9));
    }
    SUBCASE("an off-level heading in the target is a data error") {
        target[2] = 0.3;
        nn::Graph g(false, 0);
        nn::Value logits = g.leaf(Tensor::zeros({b, 3, h, w, 5}), false);
        CHECK_THROWS_AS(heading_ce_loss(g, logits, target), DataError);
    }
    SUBCASE("shape mismatches are rejected") {
        nn::Graph g(false, 0);
        CHECK_THROWS_AS(heading_ce_loss(g, g.leaf(Tensor::zeros({b, 3, h, w, 4}), false), target),
                        DomainError);
        CHECK_THROWS_AS(
            heading_ce_loss(g, g.leaf(Tensor::zeros({b, 3, h, w + 1, 5}), false), target),
            DomainError);
    }
}

TEST_CASE("the full training objective picks terms by bundle contents") {
    const std::int64_t b = 1, h = 2, w = 2;
    Tensor target_frames = random_frames(b, h, w, 41);
    LossWeights weights;
    weights.clf_weight = 0.7;

    nn::Graph g(false, 0);
    TargetBundle target;
    target.frames = g.leaf(target_frames, false);

    Tensor pred_frames = random_frames(b, h, w, 42);
    PredictionBundle pred;
    pred.frames = g.leaf(pred_frames, false);

    SUBCASE("baseline: plain frame error") {
        const double got = g.val(training_loss(g, pred, target, weights))[0];
        CHECK(got == doctest::Approx(l2_value(pred_frames, target_frames)).epsilon(1e-12));
    }
    SUBCASE("baseline with classifier head adds weighted cross-entropy") {
        pred.aux_heading_logits = g.leaf(Tensor::zeros({b, 3, h, w, 5}), false);
        const double got = g.val(training_loss(g, pred, target, weights))[0];
        const double want = l2_value(pred_frames, target_frames) + 0.7 * std::log(5.0);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("autoencoder with classifier head stacks all three terms") {
        pred.embeddings = g.leaf(Tensor::full({b, 3, 4}, 0.25), false);
        target.embeddings = g.leaf(Tensor::full({b, 3, 4}, 0.75), false);
        pred.aux_heading_logits = g.leaf(Tensor::zeros({b, 3, h, w, 5}), false);
        const double got = g.val(training_loss(g, pred, target, weights))[0];
        const double want = 0.5 * l2_value(pred_frames, target_frames) + 0.5 * 0.25 +
                            0.7 * std::log(5.0);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("mse metric recombines exactly from its breakdown") {
    Tensor pred = random_unit({2, 3, 4, 5, 3}, 51);
    Tensor target = random_unit({2, 3, 4, 5, 3}, 52);
    MetricReport report = mse_metric(pred, target);

    // brute force the nine cells
    const std::int64_t b = 2, h = 4, w = 5;
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < 3; ++t) {
            double sum = 0.0;
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t p = 0; p < h * w; ++p) {
                    const std::int64_t at = ((i * 3 + t) * h * w + p) * 3 + c;
                    sum += (pred[at] - target[at]) * (pred[at] - target[at]);
                }
            CHECK(report.mse_breakdown[c][t] ==
                  doctest::Approx(sum / static_cast<double>(b * h * w)).epsilon(1e-12));
        }

    // cross-footing holds bit-for-bit, not just approximately
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < 3; ++t) total += report.mse_breakdown[c][t] * (b * h * w);
    CHECK(report.mse_total == total / static_cast<double>(report.elements));

    CHECK(report.elements == 2 * 3 * 4 * 5 * 3);
    CHECK(report.pixels == 2 * 3 * 4 * 5);
    CHECK(mse_metric(pred, pred).mse_total == 0.0);
    CHECK_THROWS_AS(mse_metric(pred, random_unit({2, 3, 4, 4, 3}, 5)), DomainError);
    CHECK_THROWS_AS(mse_metric(random_unit({2, 2, 4, 5, 3}, 6), random_unit({2, 2, 4, 5, 3}, 7)),
                    DomainError);
}

TEST_CASE("heading accuracy snaps predictions and splits by data pixels") {
    Tensor target({1, 3, 1, 2, 3});
    Tensor pred({1, 3, 1, 2, 3});
    // six pixels; half carry volume
    const double lv[6] = {85.0 / 255.0, 0.0, 1.0, 170.0 / 255.0, 1.0 / 255.0, 0.0};
    for (std::int64_t p = 0; p < 6; ++p) {
        target[p * 3 + 1] = (p % 2 == 0) ? 0.5 : 0.0;
        target[p * 3 + 2] = lv[p];
    }

    SUBCASE("exact match everywhere") {
        for (std::int64_t p = 0; p < 6; ++p) pred[p * 3 + 2] = lv[p];
        HeadingAccuracy acc = heading_accuracy(pred, target);
        CHECK(acc.all_pixels == 1.0);
        CHECK(acc.data_pixels == 1.0);
        CHECK(acc.pixel_count == 6);
        CHECK(acc.data_pixel_count == 3);
    }
    SUBCASE("ties snap toward the first level") {
        // 0.5 sits exactly between the second and third compass levels
        pred[0 * 3 + 2] = 0.5;
        for (std::int64_t p = 1; p < 6; ++p) pred[p * 3 + 2] = lv[p];
        CHECK(snap_heading(pred[2]) == 85.0 / 255.0);
        HeadingAccuracy acc = heading_accuracy(pred, target);
        CHECK(acc.all_pixels == 1.0);
        CHECK(acc.data_pixels == 1.0);
    }
    SUBCASE("mistakes land in the right denominator") {
        for (std::int64_t p = 0; p < 6; ++p) pred[p * 3 + 2] = lv[p];
        pred[0 * 3 + 2] = 0.0;  // a data pixel goes wrong
        HeadingAccuracy acc = heading_accuracy(pred, target);
        CHECK(acc.all_pixels == doctest::Approx(5.0 / 6.0));
        CHECK(acc.data_pixels == doctest::Approx(2.0 / 3.0));

        pred[0 * 3 + 2] = lv[0];
        pred[1 * 3 + 2] = 1.0;  // a no-data pixel goes wrong
        acc = heading_accuracy(pred, target);
        CHECK(acc.all_pixels == doctest::Approx(5.0 / 6.0));
        CHECK(acc.data_pixels == 1.0);
    }
    SUBCASE("no data pixels yields a zero rate, not a division by zero") {
        Tensor empty_target({1, 3, 1, 2, 3});
        HeadingAccuracy acc = heading_accuracy(pred, empty_target);
        CHECK(acc.data_pixel_count == 0);
        CHECK(acc.data_pixels == 0.0);
    }
    CHECK_THROWS_AS(heading_accuracy(pred, Tensor::zeros({1, 3, 1, 3, 3})), DomainError);
}

TEST_CASE("persistence copies the last observed frame forward") {
    const std::int64_t b = 2, q = 4, h = 3, w = 2;
    Tensor inputs = random_unit({b, q, h, w, 3}, 61);
    Tensor pred = persistence_prediction(inputs);
    CHECK(pred.shape() == std::vector<std::int64_t>{b, 3, h, w, 3});
    const std::int64_t frame = h * w * 3;
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t t = 0; t < 3; ++t)
            for (std::int64_t j = 0; j < frame; ++j)
                CHECK(pred[(i * 3 + t) * frame + j] == inputs[(i * q + q - 1) * frame + j]);

    // against a drifting signal, error grows with horizon
    Tensor drift({1, 2, 1, 1, 3});
    for (std::int64_t i = 0; i < drift.numel(); ++i) drift[i] = 0.1;
    Tensor moving_target({1, 3, 1, 1, 3});
    for (std::int64_t t = 0; t < 3; ++t)
        for (int c = 0; c < 3; ++c) moving_target[t * 3 + c] = 0.1 + 0.2 * (t + 1);
    MetricReport report = mse_metric(persistence_prediction(drift), moving_target);
    CHECK(report.mse_breakdown[0][0] < report.mse_breakdown[0][1]);
    CHECK(report.mse_breakdown[0][1] < report.mse_breakdown[0][2]);

    CHECK_THROWS_AS(persistence_prediction(Tensor::zeros({b, q, h, w, 2})), DomainError);
}

TEST_CASE("metric reports survive a file round trip") {
    Tensor pred = random_unit({2, 3, 4, 5, 3}, 71);
    Tensor target = random_frames(2, 4, 5, 72);
    MetricReport written = mse_metric(pred, target);

    testutil::TempDir dir{"objectives"};
    const std::string path = dir.file("report.tsv");
    write_metric_report(written, path);
    MetricReport read = read_metric_report(path);

    CHECK(read.mse_total == written.mse_total);
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < 3; ++t) CHECK(read.mse_breakdown[c][t] == written.mse_breakdown[c][t]);
    CHECK(read.heading_accuracy_all == written.heading_accuracy_all);
    CHECK(read.heading_accuracy_data == written.heading_accuracy_data);
    CHECK(read.elements == written.elements);
    CHECK(read.pixels == written.pixels);
    CHECK(read.data_pixels == written.data_pixels);

    SUBCASE("missing files and damaged tables are reported") {
        CHECK_THROWS_AS(read_metric_report(dir.file("absent.tsv")), IoError);
        std::ofstream(path, std::ios::trunc) << "mse_total\t0.5\n";
        CHECK_THROWS_AS(read_metric_report(path), FormatError);
    }
}

TEST_CASE("training loss gradients flow through every term") {
    // a real classifier-variant forward pass, loss included, against central differences
    ModelConfig cfg;
    cfg.variant = "rae_clf";
    cfg.apply_variant();
    cfg.canvas_size = 16;
    cfg.grid_h = 6;
    cfg.grid_w = 5;
    cfg.num_blocks = 2;
    cfg.base_channels = 2;
    cfg.block_multipliers = {1, 2};
    cfg.gru_encoder_units = {16, 8};
    cfg.gru_decoder_units = {8, 16};
    cfg.dropout_rate = 0.0;
    cfg.q = 2;
    cfg.validate();
    Model model(cfg, 99);

    Batch batch;
    batch.inputs = random_unit({1, cfg.q, cfg.grid_h, cfg.grid_w, 3}, 81);
    batch.targets = random_frames(1, cfg.grid_h, cfg.grid_w, 82);
    batch.exo = random_unit({1, kExoDim}, 83);
    batch.window_refs = {{0, cfg.q, cfg.q}};

    LossWeights weights;

    // analytic gradients
    nn::Graph g(true, 4242);
    BoundParams bp = model.bind(g);
    TargetBundle target;
    PredictionBundle pred = model.forward(g, bp, batch, &target);
    nn::Value loss = training_loss(g, pred, target, weights);
    g.backward(loss);

    Rng pick(505);
    std::int64_t checked = 0;
    for (const auto& name : model.store().names()) {
        Tensor& param = model.store().at(name);
        const Tensor& grad = g.grad_of(bp.at(name));
        const std::int64_t at = static_cast<std::int64_t>(pick.next_below(
            static_cast<std::uint64_t>(param.numel())));
        const double keep = param[at];
        const double h = 1e-5;
        param[at] = keep + h;
        nn::Graph gp(true, 4242);
        BoundParams bpp = model.bind(gp);
        TargetBundle tp;
        PredictionBundle pp = model.forward(gp, bpp, batch, &tp);
        const double up = gp.val(training_loss(gp, pp, tp, weights))[0];
        param[at] = keep - h;
        nn::Graph gm(true, 4242);
        BoundParams bpm = model.bind(gm);
        TargetBundle tm;
        PredictionBundle pm = model.forward(gm, bpm, batch, &tm);
        const double dn = gm.val(training_loss(gm, pm, tm, weights))[0];
        param[at] = keep;

        const double numeric = (up - dn) / (2.0 * h);
        const double analytic = grad[at];
        const double tol = std::max(1e-8, 1e-3 * std::max(std::abs(numeric), std::abs(analytic)));
        INFO(name << "[" << at << "] numeric " << numeric << " analytic " << analytic);
        CHECK(std::abs(numeric - analytic) <= tol);
        ++checked;
    }
    CHECK(checked >= 20);
}
