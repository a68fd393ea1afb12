#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace stip;

TEST(Config, DefaultsRoundTripThroughJson) {
    const RunConfig c = run_config_from_json(nlohmann::json::object());
    EXPECT_EQ(c.model.hidden, 64);
    EXPECT_EQ(c.model.layers, 16);
    EXPECT_DOUBLE_EQ(c.model.lambda, 0.1);
    EXPECT_DOUBLE_EQ(c.train.gamma1, 0.010);
    EXPECT_DOUBLE_EQ(c.train.gamma2, 0.0010);
    EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
}

TEST(Config, ReadsNestedFields) {
    const auto j = nlohmann::json::parse(R"({"model": {"patch": 4, "lambda": 0.0},
        "train": {"horizons": {"input": 4, "train": 1, "test": 6}, "steps": 0, "seed": 9}})");
    const RunConfig c = run_config_from_json(j);
    EXPECT_EQ(c.model.patch, 4);
    EXPECT_EQ(c.model.lambda, 0.0);
    EXPECT_EQ(c.train.predict_horizon_test, 6);
    EXPECT_EQ(c.train.steps, 0);
    EXPECT_EQ(c.train.seed, 9u);
}

TEST(Config, RejectsUnknownKeysNamingTheField) {
    for (const char* text : {R"({"modle": {}})", R"({"model": {"hiden": 3}})", R"({"train": {"horizons": {"tset": 6}}})",
                             R"({"eval": {"horizn": 2}})", R"({"data": {"stride": 2}})"}) {
        try {
            run_config_from_json(nlohmann::json::parse(text));
            ADD_FAILURE() << text;
        } catch (const ValidationError& e) {
            EXPECT_NE(std::string(e.what()).find("unknown config key"), std::string::npos) << e.what();
        }
    }
}

TEST(Config, RejectsInvalidValues) {
    for (const char* text : {R"({"model": {"hidden": "wide"}})", R"({"model": {"height": 60}})",
                             R"({"train": {"lr_p": 0}})", R"({"train": {"gamma1": -1}})",
                             R"({"train": {"horizons": {"input": 0}}})", R"({"train": {"loss_frames": "some"}})",
                             R"({"model": {"hidden": 6, "disc_groups": 4}})"})
        EXPECT_THROW(run_config_from_json(nlohmann::json::parse(text)), ValidationError) << text;
}
