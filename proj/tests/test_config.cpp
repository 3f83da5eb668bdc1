#include "exo/config.hpp"

#include <gtest/gtest.h>

using namespace exo;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "cfg.json");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, MinimalDocumentGivesDefaults) {
    const auto cfg = parse_config(R"({"schema_version": 1})");
    EXPECT_EQ(cfg.seed, 1u);
    EXPECT_EQ(cfg.data.subjects, 10);
    EXPECT_EQ(cfg.hil.loop.iterations, 100);
    EXPECT_EQ(cfg.window.modality, Modality::multimodal);
}

TEST(Config, ValuesAreRead) {
    const auto cfg = parse_config(R"({
  "schema_version": 1,
  "seed": 77,
  "controller": {"K_v": [30, 40], "lambda1": 0.8},
  "window": {"modality": "torque_only"},
  "hil": {"lambda": 0.25, "iterations": 12}
})");
    EXPECT_EQ(cfg.seed, 77u);
    EXPECT_EQ(cfg.controller.K_v[1], 40.0);
    EXPECT_EQ(cfg.controller.lambda1, 0.8);
    EXPECT_EQ(cfg.window.modality, Modality::torque_only);
    EXPECT_EQ(cfg.hil.lambda, 0.25);
    EXPECT_EQ(cfg.hil.loop.iterations, 12);
}

TEST(Config, UnknownKeyErrorNamesTheLine) {
    const std::string e = error_of("{\n  \"schema_version\": 1,\n  \"hil\": {\n    \"iteratons\": 5\n  }\n}");
    EXPECT_NE(e.find("cfg.json:4:"), std::string::npos) << e;
    EXPECT_NE(e.find("iteratons"), std::string::npos) << e;
    EXPECT_NE(error_of("{\"schema_version\": 1,\n\"bogus\": 2}").find("cfg.json:2:"), std::string::npos);
}

TEST(Config, SchemaVersionIsRequired) {
    EXPECT_NE(error_of(R"({"seed": 3})").find("schema_version"), std::string::npos);
    EXPECT_NE(error_of(R"({"schema_version": 2})").find("unsupported"), std::string::npos);
    EXPECT_FALSE(error_of("[1, 2]").empty());
    EXPECT_FALSE(error_of("{not json").empty());
}

TEST(Config, TypeErrorsAreReported) {
    EXPECT_NE(error_of(R"({"schema_version": 1, "hil": {"iterations": 2.5}})").find("integer"), std::string::npos);
    EXPECT_NE(error_of(R"({"schema_version": 1, "seed": -1})").find("non-negative"), std::string::npos);
    EXPECT_NE(error_of(R"({"schema_version": 1, "controller": {"K_v": [1]}})").find("array of 2"), std::string::npos);
    EXPECT_NE(error_of(R"({"schema_version": 1, "window": {"modality": "smell"}})").find("window.modality"), std::string::npos);
    EXPECT_NE(error_of(R"({"schema_version": 1, "data": 3})").find("must be an object"), std::string::npos);
}

TEST(Config, RangeErrorsAreReported) {
    EXPECT_FALSE(error_of(R"({"schema_version": 1, "hil": {"lambda": 1.5}})").empty());
    EXPECT_FALSE(error_of(R"({"schema_version": 1, "data": {"subjects": 3}})").empty());
    EXPECT_FALSE(error_of(R"({"schema_version": 1, "hil": {"subjects": 5}})").empty());
    EXPECT_FALSE(error_of(R"({"schema_version": 1, "controller": {"C_d": [0, 1]}})").empty());
}

TEST(Config, HashIgnoresSeedOnly) {
    const auto a = parse_config(R"({"schema_version": 1, "seed": 1})");
    const auto b = parse_config(R"({"schema_version": 1, "seed": 2})");
    const auto c = parse_config(R"({"schema_version": 1, "hil": {"lambda": 0.4}})");
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.hash(), c.hash());
    EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, JsonRoundTrip) {
    const auto a = parse_config(R"({"schema_version": 1, "seed": 9, "vae": {"latent": 4}, "scenario": "x"})");
    const auto b = parse_config(a.to_json().dump(2));
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_EQ(b.vae.latent, 4);
}

TEST(Config, MissingFileIsConfigError) { EXPECT_THROW(load_config("/nonexistent/cfg.json"), ConfigError); }
