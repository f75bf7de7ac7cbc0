#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "ebd/config.hpp"

using namespace ebd;

TEST_CASE("config parses the flat key-value subset") {
    std::istringstream in(
        "# a comment line\n"
        "seed = 42\n"
        "out = \"results/run # 1.csv\"   # trailing comment\n"
        "\n"
        "lr = 1e-4\n"
        "heavy_only = true\n"
        "name=no-spaces\n");
    const RunConfig cfg = RunConfig::parse(in, "test.toml");
    REQUIRE(cfg.get_seed("seed", 0) == 42);
    REQUIRE(cfg.get_string("out") == "results/run # 1.csv");   // '#' inside quotes kept
    REQUIRE(cfg.get_double("lr", 0) == Catch::Approx(1e-4));
    REQUIRE(cfg.get_bool("heavy_only", false));
    REQUIRE(cfg.get_string("name") == "no-spaces");
    REQUIRE_FALSE(cfg.has("missing"));
    REQUIRE(cfg.get_int("missing", 7) == 7);
}

TEST_CASE("config rejects malformed lines with file and line context") {
    const auto expect_error = [](const std::string& text, const std::string& needle) {
        std::istringstream in(text);
        try {
            RunConfig::parse(in, "bad.toml");
            FAIL("expected a parse error for: " + text);
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            INFO(msg);
            REQUIRE(msg.find("bad.toml:1") != std::string::npos);
            REQUIRE(msg.find(needle) != std::string::npos);
        }
    };
    expect_error("just a bare line\n", "key = value");
    expect_error("bad key! = 3\n", "invalid key");
}

TEST_CASE("typed getters validate their values") {
    RunConfig cfg;
    cfg.set("n", "12x");
    cfg.set("x", "1.5.2");
    cfg.set("b", "yes");
    REQUIRE_THROWS_AS(cfg.get_int("n", 0), std::invalid_argument);
    REQUIRE_THROWS_AS(cfg.get_double("x", 0), std::invalid_argument);
    REQUIRE_THROWS_AS(cfg.get_bool("b", false), std::invalid_argument);
    REQUIRE_THROWS_AS(cfg.require_string("absent"), std::invalid_argument);
    cfg.set("ok", "3");
    REQUIRE(cfg.get_int("ok", 0) == 3);
}

TEST_CASE("config hash is independent of declaration order and sensitive to content") {
    std::istringstream in1("a = 1\nb = 2\n");
    std::istringstream in2("b = 2\na = 1\n");
    std::istringstream in3("a = 1\nb = 3\n");
    const RunConfig c1 = RunConfig::parse(in1);
    const RunConfig c2 = RunConfig::parse(in2);
    const RunConfig c3 = RunConfig::parse(in3);
    REQUIRE(c1.hash() == c2.hash());
    REQUIRE(c1.hash() != c3.hash());
    REQUIRE(c1.hash_hex().size() == 16);
}

TEST_CASE("later assignments override earlier ones (flag-over-file semantics)") {
    std::istringstream in("lr = 1e-4\n");
    RunConfig cfg = RunConfig::parse(in);
    cfg.set("lr", "0.001");   // as a CLI flag override would
    REQUIRE(cfg.get_double("lr", 0) == Catch::Approx(0.001));
    REQUIRE(cfg.entries().size() == 1);
}
