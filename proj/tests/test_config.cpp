#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "qfbsde/config.hpp"

using namespace qfbsde;

namespace {

const char* kMinimal = R"([problem]
drift = "zero"
terminal = "tanh"
driver = "colehopf"
)";

bool mentions(const config::ParseResult& r, const std::string& key, const std::string& fragment = "") {
    for (const auto& d : r.diagnostics)
        if (d.key == key && d.reason.find(fragment) != std::string::npos) return true;
    return false;
}

} // namespace

TEST(Config, MinimalFillsDefaults) {
    const auto r = config::parse(kMinimal);
    ASSERT_TRUE(r.ok()) << (r.diagnostics.empty() ? "" : r.diagnostics[0].str());
    const auto& c = *r.config;
    EXPECT_EQ(c.string("problem.drift"), "zero");
    EXPECT_EQ(c.integer("numerics.steps"), 50);
    EXPECT_EQ(c.integer("numerics.paths"), 100000);
    EXPECT_EQ(c.string("experiment.kind"), "solve");
    EXPECT_EQ(c.numbers("problem.x0"), std::vector<double>{0.0});
}

TEST(Config, RangeDiagnosticNamesKey) {
    const auto r = config::parse(std::string(kMinimal) + "[numerics]\npaths = -5\n");
    EXPECT_FALSE(r.ok());
    ASSERT_EQ(r.diagnostics.size(), 1u);
    EXPECT_EQ(r.diagnostics[0].key, "numerics.paths");
    EXPECT_EQ(r.diagnostics[0].line, 6);
}

TEST(Config, DuplicateKeyReportsBothLines) {
    const auto r = config::parse(std::string(kMinimal) + "drift = \"sign\"\n");
    ASSERT_FALSE(r.ok());
    EXPECT_TRUE(mentions(r, "problem.drift", "line 2"));
    EXPECT_TRUE(mentions(r, "problem.drift", "line 5"));
}

TEST(Config, UnknownAndMissingKeysAreErrors) {
    auto r = config::parse(std::string(kMinimal) + "colour = \"blue\"\n");
    EXPECT_TRUE(mentions(r, "problem.colour", "unknown key"));
    r = config::parse("[problem]\ndrift = \"zero\"\nterminal = \"tanh\"\n");
    EXPECT_TRUE(mentions(r, "problem.driver", "missing"));
    r = config::parse("[physics]\n");
    EXPECT_TRUE(mentions(r, "physics", "unknown section"));
    r = config::parse("drift = \"zero\"\n");
    EXPECT_TRUE(mentions(r, ".drift", "outside"));
}

TEST(Config, TypeAndRegistryChecks) {
    auto r = config::parse(std::string(kMinimal) + "[numerics]\nsteps = 2.5\n");
    EXPECT_TRUE(mentions(r, "numerics.steps", "integer"));
    r = config::parse(std::string(kMinimal) + "[numerics]\nbasis = polynomial\n");
    EXPECT_TRUE(mentions(r, "numerics.basis", "quoted"));
    r = config::parse("[problem]\ndrift = \"wobbly\"\nterminal = \"tanh\"\ndriver = \"colehopf\"\n");
    EXPECT_TRUE(mentions(r, "problem.drift", "unknown name"));
    r = config::parse(std::string(kMinimal) + "dim = 2\n");
    EXPECT_TRUE(mentions(r, "problem.x0", "dim"));
    r = config::parse(std::string(kMinimal) + "[experiment]\nn_list = [1, 3, 2]\n");
    EXPECT_TRUE(mentions(r, "experiment.n_list", "increasing"));
    r = config::parse(std::string(kMinimal) + "[output]\nformats = [\"xml\"]\n");
    EXPECT_TRUE(mentions(r, "output.formats", "xml"));
}

TEST(Config, CommentsAndEscapes) {
    const auto r = config::parse(std::string("# header\n") + kMinimal +
                                 "[output]\ndirectory = \"out/\\\"q\\\"\"  # trailing\n");
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.config->string("output.directory"), "out/\"q\"");
}

TEST(Config, ShippedConfigsParseAndRoundTrip) {
    std::size_t count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(QFBSDE_CONFIG_DIR)) {
        if (entry.path().extension() != ".toml") continue;
        std::ifstream in(entry.path());
        std::stringstream ss;
        ss << in.rdbuf();
        const auto r = config::parse(ss.str());
        ASSERT_TRUE(r.ok()) << entry.path() << ": " << r.diagnostics[0].str();
        const auto again = config::parse(config::emit(*r.config));
        ASSERT_TRUE(again.ok());
        EXPECT_EQ(*again.config, *r.config) << entry.path();
        EXPECT_EQ(config::hash(*again.config), config::hash(*r.config));
        ++count;
    }
    EXPECT_GE(count, 8u);
}

TEST(Config, RandomizedRoundTrip) {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        auto c = *config::parse(kMinimal).config;
        c.set("problem.horizon", config::Value::num(0.1 + 5 * u(gen)));
        c.set("problem.x0", config::Value::nums({u(gen) * 4 - 2}));
        c.set("problem.terminal_params", config::Value::nums({u(gen), 1e-7 * u(gen), -3.25e5 * u(gen)}));
        c.set("numerics.paths", config::Value::num(std::floor(2 + 1e6 * u(gen))));
        c.set("numerics.picard_tol", config::Value::num(std::pow(10.0, -14 * u(gen))));
        c.set("output.directory", config::Value::str("dir \"" + std::to_string(trial) + "\" \\ x"));
        c.set("output.formats", config::Value::arr({config::Value::str("bin"), config::Value::str("json")}));
        const std::string text = config::emit(c);
        const auto r = config::parse(text);
        ASSERT_TRUE(r.ok()) << text;
        EXPECT_EQ(*r.config, c);
    }
}

TEST(Config, HashTracksContent) {
    auto a = *config::parse(kMinimal).config;
    auto b = a;
    EXPECT_EQ(config::hash(a), config::hash(b));
    b.set("numerics.seed", config::Value::num(1));
    EXPECT_NE(config::hash(a), config::hash(b));
}
