#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pns/config.hpp"
#include "pns/dataset.hpp"
#include "pns/pipeline.hpp"
#include "test_util.hpp"

using namespace pns;
namespace fs = std::filesystem;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

PipelineConfig micro_config() {
    PipelineConfig cfg;
    cfg.input_height = 16;
    cfg.input_width = 28;
    cfg.window = 2;
    cfg.low_channels = 6;
    cfg.high_channels = 8;
    cfg.encoder_widths = {4, 6, 8};
    cfg.decoder_channels = {8, 6, 6, 4};
    cfg.global_ns.groups = 2;
    cfg.global_ns.kernel = 1;
    cfg.global_ns.dilations = {1, 2};
    cfg.local_ns.groups = 2;
    cfg.local_ns.kernel = 1;
    cfg.local_ns.dilations = {1, 1};
    cfg.steps = 10;
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("config validation and serialization round trip") {
    PipelineConfig cfg; // paper-shaped desk defaults
    cfg.validate();
    CHECK(cfg.low_height() == 16);
    CHECK(cfg.low_width() == 28);
    CHECK(cfg.high_height() == 8);
    CHECK(cfg.high_width() == 14);
    CHECK(cfg.global_ns.dilations == std::vector<int>{3, 4, 3, 4});
    CHECK(cfg.local_ns.dilations == std::vector<int>{1, 2, 1, 2});

    const std::string text = serialize_config(cfg);
    const PipelineConfig back = parse_config_text(text);
    CHECK(back.input_height == cfg.input_height);
    CHECK(back.lr == cfg.lr);
    CHECK(back.strategy == cfg.strategy);
    CHECK(serialize_config(back) == text);

    CHECK_THROWS_AS(parse_config_text("nonsense_key=3\n"), Error);
    CHECK_THROWS_AS(parse_config_text("input_height=30\n"), Error); // not /4
    CHECK_THROWS_AS(parse_config_text("strategy=upwards\n"), Error);

    // The 16x28 micro geometry forces a ceil at /8.
    PipelineConfig micro = micro_config();
    micro.validate();
    CHECK(micro.low_height() == 4);
    CHECK(micro.low_width() == 7);
    CHECK(micro.high_height() == 2);
    CHECK(micro.high_width() == 4);
}

TEST_CASE("encoder shapes and weight sharing") {
    PipelineConfig cfg;
    cfg.validate();
    PnsModel model(cfg, 3);

    Tensor anchor = Tensor::zeros({1, 64, 112, 3});
    Tensor ah = model.encode_global(anchor);
    CHECK(ah.shape() == Shape{1, 8, 14, 32});
    for (double v : ah.values()) CHECK(v == 0.0); // zero input, zero biases

    std::mt19937_64 rng(4);
    Tensor frames = random_tensor(rng, {5, 64, 112, 3}, false, 0.0, 1.0);
    auto [low, high] = model.encode_local(frames);
    CHECK(low.shape() == Shape{5, 16, 28, 24});
    CHECK(high.shape() == Shape{5, 8, 14, 32});

    // Single-frame window degenerates cleanly.
    Tensor one = random_tensor(rng, {1, 64, 112, 3}, false, 0.0, 1.0);
    auto [low1, high1] = model.encode_local(one);
    CHECK(low1.dim(0) == 1);

    // Anchor path and local high-level path share weights exactly.
    Tensor same_high = model.encode_global(one);
    for (size_t i = 0; i < same_high.values().size(); ++i)
        CHECK(same_high.values()[i] == high1.values()[i]);

    // Determinism across identically seeded models.
    PnsModel twin(cfg, 3);
    Tensor ah2 = twin.encode_global(one);
    CHECK(ah2.values() == model.encode_global(one).values());
}

TEST_CASE("global spatial-temporal modeling broadcasts the anchor response") {
    PipelineConfig cfg = micro_config();
    PnsModel model(cfg, 7);
    std::mt19937_64 rng(8);
    const int64_t hh = cfg.high_height(), wh = cfg.high_width();
    Tensor anchor_high = random_tensor(rng, {1, hh, wh, 8});
    Tensor frames_high = random_tensor(rng, {3, hh, wh, 8});

    Tensor zg = model.global_st_modeling(anchor_high, frames_high);
    CHECK(zg.shape() == Shape{3, hh, wh, 8});

    // The broadcast NS term is identical across the window slices.
    const auto& z = zg.values();
    const auto& f = frames_high.values();
    const int64_t block = hh * wh * 8;
    for (int64_t s = 1; s < 3; ++s)
        for (int64_t i = 0; i < block; ++i) {
            const double ns0 = z[static_cast<size_t>(i)] - f[static_cast<size_t>(i)];
            const double nss =
                z[static_cast<size_t>(s * block + i)] - f[static_cast<size_t>(s * block + i)];
            CHECK(ns0 == doctest::Approx(nss).epsilon(1e-12));
        }

    // Zero synthesis weight -> pure residual.
    Tensor wt = model.global_block().synth_w();
    auto saved = wt.values();
    std::fill(wt.leaf_values().begin(), wt.leaf_values().end(), 0.0);
    Tensor zg0 = model.global_st_modeling(anchor_high, frames_high);
    CHECK(zg0.values() == frames_high.values());
    wt.leaf_values() = saved;
}

TEST_CASE("global_to_local keeps both residual paths") {
    PipelineConfig cfg = micro_config();
    PnsModel model(cfg, 9);
    std::mt19937_64 rng(10);
    const int64_t hh = cfg.high_height(), wh = cfg.high_width();
    Tensor zg = random_tensor(rng, {2, hh, wh, 8}, true);
    Tensor xh = random_tensor(rng, {2, hh, wh, 8}, true);

    Tensor wt = model.local_block().synth_w();
    auto saved = wt.values();
    std::fill(wt.leaf_values().begin(), wt.leaf_values().end(), 0.0);
    Tensor zl0 = model.global_to_local(zg, xh);
    for (size_t i = 0; i < zl0.values().size(); ++i)
        CHECK(zl0.values()[i] == zg.values()[i] + xh.values()[i]);
    wt.leaf_values() = saved;

    Tensor zl = model.global_to_local(zg, xh);
    CHECK(zl.shape() == Shape{2, hh, wh, 8});
    sum_all(zl).backward();
    double gz = 0, gx = 0;
    for (double v : zg.grad()) gz += std::abs(v);
    for (double v : xh.grad()) gx += std::abs(v);
    CHECK(gz > 0.0);
    CHECK(gx > 0.0);
}

TEST_CASE("decoder emits full-resolution logits") {
    PipelineConfig cfg = micro_config();
    PnsModel model(cfg, 11);
    std::mt19937_64 rng(12);
    Tensor low = random_tensor(rng, {2, cfg.low_height(), cfg.low_width(), 6});
    Tensor zl = random_tensor(rng, {2, cfg.high_height(), cfg.high_width(), 8});
    Tensor logits = model.decode(low, zl);
    CHECK(logits.shape() == Shape{2, 16, 28, 1});

    Tensor zero_logits = model.decode(Tensor::zeros({2, cfg.low_height(), cfg.low_width(), 6}),
                                      Tensor::zeros({2, cfg.high_height(), cfg.high_width(), 8}));
    for (double v : zero_logits.values()) CHECK(v == 0.0);

    const auto probs = sigmoid(logits).values();
    for (double p : probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("every strategy variant produces the decoder input shape") {
    PipelineConfig cfg = micro_config();
    std::mt19937_64 rng(13);
    Tensor anchor = random_tensor(rng, {1, 16, 28, 3}, false, 0.0, 1.0);
    Tensor frames = random_tensor(rng, {2, 16, 28, 3}, false, 0.0, 1.0);
    std::vector<std::vector<double>> outputs;
    for (Strategy s :
         {Strategy::g2l, Strategy::l2l, Strategy::l2g, Strategy::g2g, Strategy::none}) {
        PipelineConfig c = cfg;
        c.strategy = s;
        PnsModel model(c, 21); // same seed -> same weights for all variants
        Tensor logits = model.forward_window(anchor, frames);
        CHECK(logits.shape() == Shape{2, 16, 28, 1});
        outputs.push_back(logits.values());
    }
    // The wiring genuinely differs between strategies.
    for (size_t i = 0; i < outputs.size(); ++i)
        for (size_t j = i + 1; j < outputs.size(); ++j) {
            double diff = 0;
            for (size_t k = 0; k < outputs[i].size(); ++k)
                diff = std::max(diff, std::abs(outputs[i][k] - outputs[j][k]));
            CHECK(diff > 1e-9);
        }

    // Strategy none bypasses both NS blocks entirely.
    PipelineConfig cnone = cfg;
    cnone.strategy = Strategy::none;
    PnsModel mnone(cnone, 21);
    Tensor wt_g = mnone.global_block().synth_w();
    Tensor wt_l = mnone.local_block().synth_w();
    std::fill(wt_g.leaf_values().begin(), wt_g.leaf_values().end(), 0.0);
    std::fill(wt_l.leaf_values().begin(), wt_l.leaf_values().end(), 0.0);
    Tensor again = mnone.forward_window(anchor, frames);
    CHECK(again.values() == outputs[4]); // NS weights are unused
}

TEST_CASE("bce_loss closed forms") {
    Tensor zeros = Tensor::zeros({2, 3, 4, 1});
    Tensor targets = Tensor::zeros({2, 3, 4, 1});
    CHECK(bce_loss(zeros, targets).scalar_value() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Saturated correct logits drive the loss to zero.
    std::vector<double> t(24, 0.0);
    for (size_t i = 0; i < t.size(); i += 2) t[i] = 1.0;
    std::vector<double> z(24);
    for (size_t i = 0; i < z.size(); ++i) z[i] = t[i] > 0.5 ? 50.0 : -50.0;
    CHECK(bce_loss(Tensor::from_data({2, 3, 4, 1}, z), Tensor::from_data({2, 3, 4, 1}, t))
              .scalar_value() <= 1e-12);
}

TEST_CASE("training runs deterministically and lr=0 freezes parameters") {
    TempDir tmp("pns_test_train");
    SynthOptions opt;
    opt.clips = 2;
    opt.frames_per_clip = 4;
    opt.height = 16;
    opt.width = 28;
    opt.seed = 3;
    const Manifest manifest = synth_dataset(opt, tmp.path.string());

    PipelineConfig cfg = micro_config();
    cfg.steps = 4;

    PnsModel a(cfg, 100);
    PnsModel b(cfg, 100);
    const TrainResult ra = train_model(a, manifest, 555);
    const TrainResult rb = train_model(b, manifest, 555);
    CHECK(ra.losses == rb.losses);
    for (size_t i = 0; i < a.params().all().size(); ++i)
        CHECK(a.params().all()[i].tensor.values() == b.params().all()[i].tensor.values());

    PipelineConfig frozen = cfg;
    frozen.lr = 0.0;
    frozen.weight_decay = 0.0;
    PnsModel c(frozen, 100);
    std::vector<std::vector<double>> before;
    for (const auto& p : c.params().all()) before.push_back(p.tensor.values());
    train_model(c, manifest, 9);
    for (size_t i = 0; i < before.size(); ++i)
        CHECK(c.params().all()[i].tensor.values() == before[i]);

    // Clips shorter than window+1 are rejected by name.
    PipelineConfig wide = cfg;
    wide.window = 4;
    PnsModel d(wide, 1);
    try {
        train_model(d, manifest, 1);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("clip_0000") != std::string::npos);
    }
}

TEST_CASE("training loss trends down over the first steps") {
    TempDir tmp("pns_test_train_trend");
    SynthOptions opt;
    opt.clips = 2;
    opt.frames_per_clip = 4;
    opt.height = 16;
    opt.width = 28;
    opt.seed = 8;
    const Manifest manifest = synth_dataset(opt, tmp.path.string());

    PipelineConfig cfg = micro_config();
    cfg.steps = 10;
    int improved = 0;
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        PnsModel model(cfg, seed);
        const TrainResult r = train_model(model, manifest, seed * 17);
        const double first = (r.losses[0] + r.losses[1] + r.losses[2]) / 3.0;
        const double last = (r.losses[7] + r.losses[8] + r.losses[9]) / 3.0;
        if (last < first) ++improved;
    }
    CHECK(improved >= 3); // median over 5 seeds improves
}

TEST_CASE("sliding-window inference covers each frame exactly once") {
    PipelineConfig cfg = micro_config();
    PnsModel model(cfg, 31);

    auto make_frames = [&](int64_t n) {
        std::vector<ImageU8> frames;
        std::mt19937_64 rng(500 + n);
        for (int64_t i = 0; i < n; ++i) {
            ImageU8 img;
            img.height = 16;
            img.width = 28;
            img.channels = 3;
            img.pixels.resize(16 * 28 * 3);
            for (auto& p : img.pixels) p = static_cast<uint8_t>(rng() % 256);
            frames.push_back(std::move(img));
        }
        return frames;
    };

    // 1 + window frames -> window maps.
    const auto maps1 = infer_clip(model, make_frames(1 + cfg.window));
    CHECK(maps1.size() == static_cast<size_t>(cfg.window));
    // 1 + 2*window frames -> 2*window maps.
    const auto maps2 = infer_clip(model, make_frames(1 + 2 * cfg.window));
    CHECK(maps2.size() == static_cast<size_t>(2 * cfg.window));
    // Ragged tail: padded slots are dropped.
    const auto maps3 = infer_clip(model, make_frames(2 + cfg.window));
    CHECK(maps3.size() == static_cast<size_t>(cfg.window + 1));

    for (const auto& m : maps3)
        for (double v : m.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }

    CHECK_THROWS_AS(infer_clip(model, make_frames(1)), Error);

    // Duplicated frames inside one window predict identically.
    auto frames = make_frames(1 + cfg.window);
    frames[2] = frames[1];
    const auto maps = infer_clip(model, frames);
    CHECK(maps[0].data == maps[1].data);
}

TEST_CASE("checkpoint round trip preserves inference bit-for-bit") {
    TempDir tmp("pns_test_ckpt_rt");
    PipelineConfig cfg = micro_config();
    cfg.strategy = Strategy::l2g; // non-default must survive the round trip
    PnsModel model(cfg, 77);

    std::vector<ImageU8> frames;
    std::mt19937_64 rng(81);
    for (int i = 0; i < 4; ++i) {
        ImageU8 img;
        img.height = 16;
        img.width = 28;
        img.channels = 3;
        img.pixels.resize(16 * 28 * 3);
        for (auto& p : img.pixels) p = static_cast<uint8_t>(rng() % 256);
        frames.push_back(std::move(img));
    }
    const auto before = infer_clip(model, frames);

    const std::string path = (tmp.path / "model.ckpt").string();
    save_model(model, path);
    const auto loaded = load_model(path);
    CHECK(loaded->config().strategy == Strategy::l2g);
    CHECK(loaded->config().input_width == 28);
    const auto after = infer_clip(*loaded, frames);
    REQUIRE(after.size() == before.size());
    for (size_t i = 0; i < after.size(); ++i) CHECK(after[i].data == before[i].data);
}

TEST_CASE("micro end-to-end gradients match finite differences") {
    PipelineConfig cfg = micro_config();
    PnsModel model(cfg, 91);
    // Zero-init biases put relu pre-activations exactly on the kink wherever
    // an upstream relu zeroed its input; the loss is not differentiable
    // there. Jitter to a generic parameter point first.
    std::mt19937_64 jitter(4242);
    std::normal_distribution<double> jdist(0.0, 0.03);
    for (const auto& p : model.params().all()) {
        Tensor t = p.tensor;
        for (auto& v : t.leaf_values()) v += jdist(jitter);
    }
    std::mt19937_64 rng(92);
    Tensor anchor = random_tensor(rng, {1, 16, 28, 3}, false, 0.0, 1.0);
    Tensor frames = random_tensor(rng, {2, 16, 28, 3}, false, 0.0, 1.0);
    std::vector<double> target(2 * 16 * 28, 0.0);
    for (size_t i = 0; i < target.size(); ++i) target[i] = (rng() & 1) ? 1.0 : 0.0;
    Tensor targets = Tensor::from_data({2, 16, 28, 1}, target);

    auto forward = [&]() {
        return bce_loss(model.forward_window(anchor, frames), targets);
    };
    model.params().zero_grad();
    forward().backward();

    // Spot-check a few elements of every parameter tensor.
    std::mt19937_64 pick(93);
    double worst = 0;
    for (const auto& p : model.params().all()) {
        Tensor t = p.tensor;
        const auto& analytic = t.grad();
        const int64_t n = t.size();
        for (int probe = 0; probe < 3; ++probe) {
            const int64_t i = static_cast<int64_t>(pick() % static_cast<uint64_t>(n));
            const double orig = t.values()[static_cast<size_t>(i)];
            const double h = 1e-5;
            NoGradGuard guard;
            t.leaf_values()[static_cast<size_t>(i)] = orig + h;
            const double fp = forward().scalar_value();
            t.leaf_values()[static_cast<size_t>(i)] = orig - h;
            const double fm = forward().scalar_value();
            t.leaf_values()[static_cast<size_t>(i)] = orig;
            const double fd = (fp - fm) / (2 * h);
            worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], fd));
        }
    }
    CHECK(worst <= 1e-3);
}
