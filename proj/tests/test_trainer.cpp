#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <unistd.h>

#include "raunet/adam.hpp"
#include "raunet/checkpoint.hpp"
#include "raunet/synthetic.hpp"
#include "raunet/trainer.hpp"
#include "test_util.hpp"

using namespace raunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("raunet_tr_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<NamedParameter<double>> scalar_param(double w) {
    Tensor<double> t(Shape{1}, w);
    t.set_requires_grad(true);
    return {{"w", t}};
}

Tensor<float> tiny_loader(const std::string& id) { return synthetic_face(hash_string(id), 32); }

DatasetManifest tiny_manifest(std::size_t n, std::size_t test = 0, double val = 0.25) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("face" + std::to_string(i));
    return split_dataset(ids, test, val, 9);
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.model.channels = {4, 8, 16};
    c.model.seed = 5;
    c.image_side = 16;
    c.batch_size = 4;
    c.epochs = 2;
    c.lr = 1e-3;
    c.data_seed = 3;
    return c;
}

std::uint64_t parameter_hash(const Model<float>& m) {
    std::uint64_t h = 0;
    for (const auto& p : m.parameters())
        for (float v : p.tensor.data()) h = mix_seed(h, std::bit_cast<std::uint32_t>(v));
    return h;
}

std::vector<float> flat(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

// ---------------------------------------------------------------- Adam

TEST(Adam, FirstStepMovesByLrTimesSign) {
    for (double g : {0.37, -2.5, 1e-3}) {
        auto p = scalar_param(1.0);
        p[0].tensor.mutable_grad()[0] = g;
        AdamState<double> s;
        s.lr = 0.01;
        adam_step(p, s);
        EXPECT_NEAR(p[0].tensor.item() - 1.0, -0.01 * (g > 0 ? 1 : -1), 0.01 * 1e-8 / std::abs(g) + 1e-15);
        EXPECT_EQ(s.t, 1u);
        EXPECT_EQ(p[0].tensor.grad()[0], 0.0);  // zeroed after the step
    }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
    auto p = scalar_param(2.0);
    AdamState<double> s;
    for (int i = 0; i < 5; ++i) {
        p[0].tensor.mutable_grad()[0] = 0.0;
        adam_step(p, s);
    }
    EXPECT_EQ(p[0].tensor.item(), 2.0);
    EXPECT_EQ(s.t, 5u);
}

TEST(Adam, ConvergesOnQuadratic) {
    auto p = scalar_param(0.0);
    AdamState<double> s;
    s.lr = 0.1;
    for (int i = 0; i < 100; ++i) {
        const double w = p[0].tensor.item();
        p[0].tensor.mutable_grad()[0] = 2.0 * (w - 3.0);
        adam_step(p, s);
        ASSERT_GE(s.v[0][0], 0.0);
    }
    EXPECT_NEAR(p[0].tensor.item(), 3.0, 0.1);
}

TEST(Adam, MatchesReferenceRecurrence) {
    auto p = scalar_param(0.5);
    AdamState<double> s;
    s.lr = 0.05;
    double w = 0.5, m = 0, v = 0;
    for (int t = 1; t <= 10; ++t) {
        const double g = std::sin(t) + 0.3;
        p[0].tensor.mutable_grad()[0] = g;
        adam_step(p, s);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p[0].tensor.item(), w, 1e-12);
    }
}

TEST(Adam, MissingGradientNamesParameter) {
    Tensor<double> a(Shape{2}), b(Shape{3});
    a.set_requires_grad(true).mutable_grad();
    b.set_requires_grad(true);
    std::vector<NamedParameter<double>> params{{"enc.0.conv1.weight", a}, {"head.bias", b}};
    AdamState<double> s;
    try {
        adam_step(params, s);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("head.bias"), std::string::npos);
    }
    EXPECT_EQ(s.t, 0u);
}

TEST(Adam, StateMismatchRejected) {
    auto p = scalar_param(1.0);
    p[0].tensor.mutable_grad()[0] = 1.0;
    AdamState<double> s;
    adam_step(p, s);
    auto q = scalar_param(1.0);
    q[0].name = "other";
    q[0].tensor.mutable_grad()[0] = 1.0;
    EXPECT_THROW(adam_step(q, s), std::invalid_argument);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitwise) {
    TempDir dir("ckpt");
    ModelConfig cfg;
    cfg.channels = {4, 8, 16, 32};
    cfg.seed = 12;
    auto model = build_model<float>(cfg);
    AdamState<float> adam;
    adam.lr = 3e-4;
    {
        Tape<float> tape;
        TapeScope<float> scope(tape);
        Rng rng(1);
        auto x = raunet::testing::random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
        tape.backward(reduce_mean(model_forward(model, x)));
        adam_step(model, adam);
    }
    save_checkpoint(model, adam, 7, dir.path / "m.ckpt");
    auto back = load_checkpoint(dir.path / "m.ckpt", &cfg);
    EXPECT_EQ(back.epoch, 7u);
    EXPECT_EQ(back.model.config(), cfg);
    EXPECT_EQ(back.adam, adam);

    Rng rng(2);
    auto x = raunet::testing::random_tensor<float>({2, 3, 16, 16}, rng, 0.0, 1.0);
    NoGradScope<float> ng;
    EXPECT_EQ(flat(model_forward(model, x)), flat(model_forward(back.model, x)));
}

TEST(Checkpoint, TruncationAlwaysFailsCleanly) {
    ModelConfig cfg;
    cfg.channels = {2, 4, 8};
    const auto bytes = encode_checkpoint(build_model<float>(cfg), AdamState<float>{}, 0);
    for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 7) {
        std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
        try {
            decode_checkpoint(cut);
            FAIL() << "accepted truncated checkpoint of " << len << " bytes";
        } catch (const CheckpointError& e) {
            EXPECT_NE(std::string(e.what()).find("invalid field"), std::string::npos);
        }
    }
    auto extra = bytes;
    extra.push_back(0);
    EXPECT_THROW(decode_checkpoint(extra), CheckpointError);
}

TEST(Checkpoint, MagicVersionAndFieldsNamed) {
    ModelConfig cfg;
    cfg.channels = {2, 4, 8};
    const auto bytes = encode_checkpoint(build_model<float>(cfg), AdamState<float>{}, 0);
    auto expect_field = [](std::vector<std::uint8_t> b, const std::string& field) {
        try {
            decode_checkpoint(b);
            ADD_FAILURE() << "accepted corrupt checkpoint";
        } catch (const CheckpointError& e) {
            EXPECT_NE(std::string(e.what()).find("'" + field), std::string::npos) << e.what();
        }
    };
    auto bad = bytes;
    bad[0] = 'X';
    expect_field(bad, "magic");
    bad = bytes;
    bad[4] = 2;
    expect_field(bad, "version");
    bad = bytes;
    bad[8] = 9;  // level count
    expect_field(bad, "config.levels");
    // First tensor name starts after header(8) + config(4 + 12 + 16 + 8) + count(4) + name length(4).
    bad = bytes;
    bad[8 + 40 + 8] = 'X';
    expect_field(bad, "tensor enc.0.conv1.weight name");
}

TEST(Checkpoint, LevelMismatchRejected) {
    TempDir dir("ckpt_lv");
    ModelConfig three;
    three.channels = {4, 8, 16};
    save_checkpoint(build_model<float>(three), AdamState<float>{}, 0, dir.path / "three.ckpt");
    ModelConfig five;
    five.channels = {4, 8, 16, 32, 64};
    try {
        load_checkpoint(dir.path / "three.ckpt", &five);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("3-level"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("5-level"), std::string::npos) << e.what();
    }
    ModelConfig reseeded = three;
    reseeded.seed = 99;
    EXPECT_NO_THROW(load_checkpoint(dir.path / "three.ckpt", &reseeded));
    EXPECT_THROW(load_checkpoint(dir.path / "absent.ckpt"), CheckpointError);
}

// ---------------------------------------------------------------- evaluate

TEST(Evaluate, IdentityAndOracleBaselines) {
    auto manifest = tiny_manifest(6, 0, 0.5);
    auto cfg = tiny_config();
    auto id = evaluate(identity_predictor(), manifest, Split::val, cfg, tiny_loader);
    auto oracle = evaluate(oracle_predictor(), manifest, Split::val, cfg, tiny_loader);
    EXPECT_EQ(id.samples, 3u);
    EXPECT_LT(id.mean_ssim, 1.0);
    EXPECT_NEAR(oracle.mean_ssim, 1.0, 1e-6);
    EXPECT_TRUE(std::isinf(oracle.mean_psnr) && oracle.mean_psnr > 0);

    // Identity SSIM equals the directly computed SSIM of masked vs truth.
    auto stream = make_batches(manifest, Split::val, eval_batch_options(cfg), tiny_loader);
    double direct = 0;
    std::size_t n = 0;
    while (auto b = stream->next())
        for (std::size_t i = 0; i < b->size(); ++i, ++n) {
            const std::size_t px = 3 * 16 * 16;
            auto one = [&](const Tensor<float>& t) {
                return Tensor<float>(Shape{1, 3, 16, 16}, std::vector<float>(t.data().begin() + i * px, t.data().begin() + (i + 1) * px));
            };
            direct += ssim_value(one(b->masked), one(b->truth));
        }
    EXPECT_NEAR(id.mean_ssim, direct / n, 1e-6);
}

TEST(Evaluate, EmptySplitRejectedAndParametersUntouched) {
    auto manifest = tiny_manifest(6, 0, 0.5);
    auto cfg = tiny_config();
    EXPECT_THROW(evaluate(identity_predictor(), manifest, Split::test, cfg, tiny_loader), std::invalid_argument);
    auto model = build_model<float>(cfg.model);
    const auto before = parameter_hash(model);
    auto r = evaluate(model_predictor(model), manifest, Split::val, cfg, tiny_loader);
    EXPECT_EQ(parameter_hash(model), before);
    EXPECT_GT(r.mean_seconds, 0.0);
    for (const auto& p : model.parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

// ---------------------------------------------------------------- train

TEST(Train, ZeroEpochsWritesInitialCheckpointOnly) {
    TempDir dir("zero");
    auto cfg = tiny_config();
    cfg.epochs = 0;
    cfg.checkpoint_dir = dir.path / "ckpt";
    cfg.report_path = dir.path / "report.txt";
    auto res = train(cfg, tiny_manifest(8), tiny_loader);
    EXPECT_TRUE(res.report.epochs.empty());
    EXPECT_TRUE(fs::exists(cfg.checkpoint_dir / "epoch_0000.ckpt"));
    EXPECT_FALSE(fs::exists(cfg.checkpoint_dir / "epoch_0001.ckpt"));
    std::ifstream latest(cfg.checkpoint_dir / "latest");
    std::string name;
    latest >> name;
    EXPECT_EQ(name, "epoch_0000.ckpt");
    EXPECT_EQ(parameter_hash(res.model), parameter_hash(build_model<float>(cfg.model)));
}

TEST(Train, DeterministicReportsAndReportFormat) {
    TempDir dir("det");
    auto cfg = tiny_config();
    cfg.report_path = dir.path / "a.txt";
    auto a = train(cfg, tiny_manifest(10), tiny_loader);
    cfg.report_path = dir.path / "b.txt";
    cfg.prefetch = false;
    auto b = train(cfg, tiny_manifest(10), tiny_loader);
    EXPECT_TRUE(a.report.same_except_timing(b.report)) << a.report.format() << b.report.format();
    EXPECT_EQ(parameter_hash(a.model), parameter_hash(b.model));
    ASSERT_EQ(a.report.epochs.size(), 2u);
    EXPECT_EQ(a.report.step_losses.size(), 4u);  // 8 train entries, batch 4, two epochs

    std::ifstream in(dir.path / "a.txt");
    std::string line;
    const std::regex epoch_line(
        R"(epoch=\d+ train_loss=[0-9.]+ val_loss=[0-9.]+ val_ssim=-?[0-9.]+ val_psnr=[0-9.]+ secs=[0-9.]+)");
    std::size_t epochs = 0, echoes = 0;
    while (std::getline(in, line)) {
        if (line.rfind("#", 0) == 0) {
            ++echoes;
        } else {
            EXPECT_TRUE(std::regex_match(line, epoch_line)) << line;
            ++epochs;
        }
    }
    EXPECT_EQ(epochs, 2u);
    EXPECT_GE(echoes, 10u);
}

TEST(Train, ResumeContinuesExactly) {
    TempDir dir("resume");
    auto cfg = tiny_config();
    auto full = train(cfg, tiny_manifest(10), tiny_loader);
    cfg.epochs = 1;
    cfg.checkpoint_dir = dir.path;
    train(cfg, tiny_manifest(10), tiny_loader);
    auto resumed = train(cfg, tiny_manifest(10), tiny_loader, load_checkpoint(dir.path / "epoch_0001.ckpt"));
    EXPECT_EQ(parameter_hash(resumed.model), parameter_hash(full.model));
    ASSERT_EQ(resumed.report.epochs.size(), 1u);
    EXPECT_EQ(resumed.report.epochs[0].epoch, 2u);
    EXPECT_TRUE(resumed.report.epochs[0].same_except_timing(full.report.epochs[1]));
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
    auto cfg = tiny_config();
    auto model = build_model<float>(cfg.model);
    Tensor<float> w = model.param("head.bias");
    w.data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(cfg, tiny_manifest(10), tiny_loader, Checkpoint{model, {}, 0});
        FAIL();
    } catch (const TrainingAborted& e) {
        EXPECT_EQ(e.cause, TrainingAborted::Cause::non_finite_loss);
        EXPECT_NE(std::string(e.what()).find("epoch 1 step 1"), std::string::npos) << e.what();
        EXPECT_TRUE(e.report.epochs.empty());
    }
}

TEST(Train, CheckpointFailureAbortsAfterEpochReport) {
    TempDir dir("diskfull");
    auto cfg = tiny_config();
    cfg.checkpoint_dir = dir.path;
    cfg.report_path = dir.path / "report.txt";
    fs::create_directories(dir.path / "epoch_0001.ckpt.tmp");  // makes the epoch-1 write fail
    try {
        train(cfg, tiny_manifest(10), tiny_loader);
        FAIL();
    } catch (const TrainingAborted& e) {
        EXPECT_EQ(e.cause, TrainingAborted::Cause::checkpoint_io);
        ASSERT_EQ(e.report.epochs.size(), 1u);
        EXPECT_EQ(e.report.epochs[0].epoch, 1u);
    }
    std::ifstream in(cfg.report_path);
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_NE(ss.str().find("epoch=1 "), std::string::npos);
}

TEST(Train, RejectsBadInputs) {
    auto cfg = tiny_config();
    EXPECT_THROW(train(cfg, tiny_manifest(10, 0, 0.0), tiny_loader), std::invalid_argument);  // no val entries
    cfg.image_side = 18;
    EXPECT_THROW(train(cfg, tiny_manifest(10), tiny_loader), std::invalid_argument);
}

TEST(Train, OverfitFixtureSmoothedLossDecreases) {
    auto cfg = tiny_config();
    cfg.model.channels = {8, 16, 32};
    cfg.batch_size = 4;
    cfg.epochs = 40;  // 2 steps per epoch, 80 steps
    cfg.lr = 2e-3;
    cfg.fixed_masks = true;
    cfg.shuffle = false;
    std::vector<std::string> ids;
    for (int i = 0; i < 8; ++i) ids.push_back("face" + std::to_string(i));
    DatasetManifest m;
    for (const auto& id : ids) m.entries.push_back({id, Split::train});
    for (const auto& id : ids) m.entries.push_back({id, Split::val});
    auto res = train(cfg, m, tiny_loader);
    const auto& l = res.report.step_losses;
    ASSERT_EQ(l.size(), 80u);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w + 20 <= l.size(); w += 20) {
        double mean = 0;
        for (std::size_t i = w; i < w + 20; ++i) mean += l[i] / 20;
        EXPECT_LE(mean, prev) << "window starting at step " << w;
        prev = mean;
    }
    EXPECT_LT(l.back(), 0.6 * l.front());
}
