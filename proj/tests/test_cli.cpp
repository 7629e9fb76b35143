#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Run {
    int rc;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + RAUNET_CLI_PATH + std::string(" ") + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, ""};
    std::string out;
    std::array<char, 4096> buf;
    while (std::size_t n = fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
    std::istringstream in(text);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
    return n;
}

double field(const std::string& text, const std::string& key) {
    const auto at = text.find(key + "=");
    if (at == std::string::npos) return -1.0;
    return std::stod(text.substr(at + key.size() + 1));
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("raunet_cli_" + std::to_string(::getpid()) + "_" +
                                           ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& rel) const { return (dir / rel).string(); }

    /// Small dataset plus a one-epoch checkpoint at 64x64 with a narrow model.
    std::string trained_checkpoint() {
        EXPECT_EQ(run("synth --output " + p("faces") + " --count 20 --side 64 --seed 1").rc, 0);
        const auto r = run("train --data " + p("faces") + " --out " + p("run") +
                           " --epochs 1 --batch 8 --side 64 --channels 4,8,16 --no-prefetch");
        EXPECT_EQ(r.rc, 0) << r.out;
        return p("run/checkpoints/epoch_0001.ckpt");
    }

    fs::path dir;
};

const std::vector<std::string> kSubcommands{"train", "eval", "infer", "maskgen", "gradcheck", "params", "synth"};

}  // namespace

TEST(CliDocs, HelpFlagsMatchReadmeAndShowDefaults) {
    const std::string readme = slurp(RAUNET_README_PATH);
    ASSERT_FALSE(readme.empty());
    const std::regex flag_re("--[a-z0-9][a-z0-9-]*");
    for (const auto& sub : kSubcommands) {
        const auto help = run(sub + " --help");
        ASSERT_EQ(help.rc, 0) << sub;
        const auto start = readme.find("### " + sub + "\n");
        ASSERT_NE(start, std::string::npos) << "README lacks a section for " << sub;
        const auto end = readme.find("\n### ", start + 1);
        const std::string section = readme.substr(start, end - start);

        std::set<std::string> help_flags, readme_flags;
        for (std::sregex_iterator it(help.out.begin(), help.out.end(), flag_re), e; it != e; ++it) help_flags.insert(it->str());
        for (std::sregex_iterator it(section.begin(), section.end(), flag_re), e; it != e; ++it) readme_flags.insert(it->str());
        help_flags.erase("--help");
        readme_flags.erase("--help");
        EXPECT_EQ(help_flags, readme_flags) << "flag mismatch for " << sub;

        // Every option line shows a default: "[value]" for options, "(default off)" for flags.
        std::istringstream lines(help.out);
        std::string pending;
        auto check = [&](const std::string& entry) {
            if (entry.empty() || entry.find("--help") != std::string::npos) return;
            EXPECT_TRUE(entry.find('[') != std::string::npos || entry.find("(default") != std::string::npos || entry.find("REQUIRED") != std::string::npos)
                << sub << ": no default shown in '" << entry << "'";
        };
        for (std::string line; std::getline(lines, line);) {
            if (line.rfind("  -", 0) == 0) {
                check(pending);
                pending = line;
            } else if (!pending.empty() && line.rfind("    ", 0) == 0) {
                pending += line;
            } else {
                check(pending);
                pending.clear();
            }
        }
        check(pending);
    }
}

TEST_F(Cli, TrainSmokeWritesOneEpochReport) {
    ASSERT_EQ(run("synth --output " + p("faces") + " --count 20 --side 64").rc, 0);
    const auto r = run("train --data " + p("faces") + " --out " + p("run") + " --epochs 1 --batch 8 --lr 0.0001 --side 64 --channels 4,8,16");
    ASSERT_EQ(r.rc, 0) << r.out;
    const std::string report = slurp(p("run/report.txt"));
    EXPECT_EQ(count_lines_starting(report, "epoch="), 1u) << report;
    EXPECT_NE(report.find("# cli.lr=0.0001"), std::string::npos);
    EXPECT_NE(report.find("# cli.channels=\"4,8,16\""), std::string::npos);
    EXPECT_TRUE(fs::exists(p("run/manifest.tsv")));
    EXPECT_TRUE(fs::exists(p("run/checkpoints/epoch_0001.ckpt")));
    EXPECT_EQ(slurp(p("run/checkpoints/latest")), "epoch_0001.ckpt\n");
}

TEST_F(Cli, MissingDataDirectoryIsAUsageError) {
    const auto r = run("train --data " + p("no_such_dir") + " --out " + p("run"));
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.out.find(p("no_such_dir")), std::string::npos) << r.out;
}

TEST_F(Cli, BadFlagValuesAreUsageErrors) {
    EXPECT_EQ(run("train --epochs banana").rc, 2);
    EXPECT_EQ(run("train --data . --variant unet9").rc, 2);
    EXPECT_EQ(run("params --channels 64,32,128").rc, 2);
    EXPECT_EQ(run("frobnicate").rc, 2);
    EXPECT_EQ(run("").rc, 2);
}

TEST_F(Cli, ConfigFileMergesUnderExplicitFlags) {
    ASSERT_EQ(run("synth --output " + p("faces") + " --count 20 --side 32").rc, 0);
    std::ofstream(p("run.cfg")) << "# desk run\nepochs = 2\nchannels = 4,8,16\nside = 32   # small\nl1_weight = 0.5\n";
    const auto r = run("train --config " + p("run.cfg") + " --data " + p("faces") + " --out " + p("run") + " --epochs 1");
    ASSERT_EQ(r.rc, 0) << r.out;
    const std::string report = slurp(p("run/report.txt"));
    EXPECT_EQ(count_lines_starting(report, "epoch="), 1u);  // flag beats file
    EXPECT_NE(report.find("# side=32"), std::string::npos);  // file beats default
    EXPECT_NE(report.find("# l1_weight=0.5"), std::string::npos);
}

TEST_F(Cli, ConfigFileRejectsUnknownKeys) {
    std::ofstream(p("bad.cfg")) << "epochs = 2\nepoch_count = 3\n";
    const auto r = run("train --config " + p("bad.cfg") + " --data " + p("faces"));
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.out.find("epoch-count"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find(":2"), std::string::npos) << r.out;
    std::ofstream(p("junk.cfg")) << "just words\n";
    EXPECT_EQ(run("params --config " + p("junk.cfg")).rc, 2);
    EXPECT_EQ(run("params --config " + p("missing.cfg")).rc, 2);
}

TEST_F(Cli, NonFiniteLossExitsThree) {
    ASSERT_EQ(run("synth --output " + p("faces") + " --count 20 --side 32").rc, 0);
    const auto r = run("train --data " + p("faces") + " --out " + p("run") + " --epochs 3 --side 32 --channels 4,8,16 --lr 1e300");
    EXPECT_EQ(r.rc, 3) << r.out;
    EXPECT_NE(r.out.find("non-finite"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalOracleIdentityAndModel) {
    const std::string ckpt = trained_checkpoint();
    const std::string m = " --manifest " + p("run/manifest.tsv") + " --side 64";
    const auto oracle = run("eval --oracle" + m + " --report " + p("oracle.txt"));
    ASSERT_EQ(oracle.rc, 0) << oracle.out;
    EXPECT_NE(oracle.out.find("ssim=1.000000"), std::string::npos) << oracle.out;
    const std::string report = slurp(p("oracle.txt"));
    EXPECT_NE(report.find("# cli.command=eval"), std::string::npos);
    EXPECT_NE(report.find("mode=oracle"), std::string::npos);

    const auto identity = run("eval --identity" + m);
    ASSERT_EQ(identity.rc, 0) << identity.out;
    const double base = field(identity.out, "ssim");
    EXPECT_GT(base, 0.3);
    EXPECT_LT(base, 1.0);

    const auto model = run("eval --checkpoint " + ckpt + m);
    ASSERT_EQ(model.rc, 0) << model.out;
    EXPECT_NE(model.out.find("mode=model"), std::string::npos);
    EXPECT_EQ(run("eval --identity --oracle" + m).rc, 2);
    EXPECT_EQ(run("eval --checkpoint " + ckpt + " --manifest " + p("run/manifest.tsv") + " --side 62").rc, 2);
}

TEST_F(Cli, InferKeepsSizeAndIsByteDeterministic) {
    const std::string ckpt = trained_checkpoint();
    const std::string base = "infer --checkpoint " + ckpt + " --input " + p("faces/face_00003.ppm") + " --apply-mask --seed 9";
    ASSERT_EQ(run(base + " --output " + p("a.ppm") + " --masked-output " + p("am.ppm")).rc, 0);
    ASSERT_EQ(run(base + " --output " + p("b.ppm")).rc, 0);
    const std::string a = slurp(p("a.ppm"));
    EXPECT_EQ(a, slurp(p("b.ppm")));
    EXPECT_EQ(a.rfind("P6\n64 64\n255\n", 0), 0u);
    EXPECT_EQ(a.size(), 13u + 64 * 64 * 3);
    EXPECT_TRUE(fs::exists(p("am.ppm")));
}

TEST_F(Cli, InferRejectsIndivisibleSide) {
    const std::string ckpt = trained_checkpoint();
    ASSERT_EQ(run("synth --output " + p("odd") + " --count 1 --side 30").rc, 0);
    const auto r = run("infer --checkpoint " + ckpt + " --input " + p("odd/face_00000.ppm") + " --output " + p("o.ppm"));
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.out.find("multiples of 2^(levels-1) = 4"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(p("o.ppm")));
}

TEST_F(Cli, MaskgenDeterministicDistinctAndAreaAccurate) {
    ASSERT_EQ(run("synth --output " + p("faces") + " --count 3 --side 64 --seed 4").rc, 0);
    ASSERT_EQ(run("maskgen --input " + p("faces") + " --output " + p("a") + " --shape trapezoid --seed 7").rc, 0);
    ASSERT_EQ(run("maskgen --input " + p("faces") + " --output " + p("b") + " --shape trapezoid --seed 7").rc, 0);
    for (const auto& e : fs::directory_iterator(p("a")))
        EXPECT_EQ(slurp(e.path()), slurp(fs::path(p("b")) / e.path().filename())) << e.path();

    std::set<std::string> regions;
    for (const std::string shape : {"trapezoid", "rounded_polygon", "rect_with_earloops"}) {
        const auto r = run("maskgen --input " + p("faces/face_00001.ppm") + " --output " + p(shape) + " --shape " + shape +
                           " --coverage 0.35 --seed 7");
        ASSERT_EQ(r.rc, 0) << r.out;
        EXPECT_NEAR(field(r.out, "region_fraction"), field(r.out, "analytic_fraction"), 0.05) << r.out;
        EXPECT_GT(field(r.out, "region_fraction"), 0.0);
        regions.insert(slurp(fs::path(p(shape)) / "face_00001_region.pgm"));
    }
    EXPECT_EQ(regions.size(), 3u);
    EXPECT_EQ(run("maskgen --input " + p("faces") + " --output " + p("c") + " --shape star").rc, 2);
    EXPECT_EQ(run("maskgen --input " + p("faces") + " --output " + p("c") + " --coverage 0.9").rc, 2);
}

TEST_F(Cli, GradcheckExitCodes) {
    const auto conv = run("gradcheck --op conv2d --f64");
    EXPECT_EQ(conv.rc, 0) << conv.out;
    EXPECT_LT(field(conv.out, "max_rel_error"), 1e-7);
    const auto model = run("gradcheck --model --levels 3 --side 16");
    EXPECT_EQ(model.rc, 0) << model.out;
    EXPECT_LT(field(model.out, "max_rel_error"), 1e-3);
    EXPECT_EQ(run("gradcheck --op conv2d --f64 --inject-fault").rc, 1);
    EXPECT_EQ(run("gradcheck --model --inject-fault").rc, 1);
    EXPECT_EQ(run("gradcheck --op conv9d").rc, 2);
    EXPECT_EQ(run("gradcheck").rc, 2);
}

TEST_F(Cli, ParamsCounts) {
    const auto big = run("params --variant residual_attention_unet --channels 64,128,256,512,1024");
    ASSERT_EQ(big.rc, 0);
    EXPECT_NEAR(field(big.out, "params"), 39e6, 0.2 * 39e6);
    const auto small = run("params --channels 32,64,128");
    EXPECT_NEAR(field(small.out, "params"), 0.58e6, 0.2 * 0.58e6);
    const auto all = run("params --all-variants");
    const auto plain = all.out.find("plain_unet"), att = all.out.find("variant=attention_unet"), ra = all.out.find("residual_attention_unet");
    ASSERT_TRUE(plain != std::string::npos && att != std::string::npos && ra != std::string::npos) << all.out;
    EXPECT_LT(field(all.out.substr(plain), "params"), field(all.out.substr(att), "params"));
    EXPECT_LT(field(all.out.substr(att), "params"), field(all.out.substr(ra), "params"));
}

TEST_F(Cli, SeedFallsBackToEnvironment) {
    ASSERT_EQ(run("synth --output " + p("env") + " --count 2 --side 16", "RAUNET_SEED=5").rc, 0);
    ASSERT_EQ(run("synth --output " + p("flag") + " --count 2 --side 16 --seed 5").rc, 0);
    ASSERT_EQ(run("synth --output " + p("zero") + " --count 2 --side 16").rc, 0);
    EXPECT_EQ(slurp(p("env/face_00001.ppm")), slurp(p("flag/face_00001.ppm")));
    EXPECT_NE(slurp(p("env/face_00001.ppm")), slurp(p("zero/face_00001.ppm")));
    // An explicit flag wins over the environment.
    ASSERT_EQ(run("synth --output " + p("both") + " --count 2 --side 16 --seed 0", "RAUNET_SEED=5").rc, 0);
    EXPECT_EQ(slurp(p("both/face_00001.ppm")), slurp(p("zero/face_00001.ppm")));
}
