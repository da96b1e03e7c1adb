#include <cmath>
#include <numbers>
#include <string>

#include <gtest/gtest.h>

#include <mfgdecode/config.hpp>

using namespace mfg;

namespace {

json minimal()
{
    return json::parse(R"({
        "grid": {"dim": 1, "n_cells": 17, "n_time": 8},
        "metric": {"kappa": 1.0},
        "stationary": {"type": "closed_form_1d"}
    })");
}

std::string config_error(const json& j)
{
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(ConfigParse, MinimalDocument)
{
    const ExperimentConfig c = parse_config(minimal());
    EXPECT_EQ(c.grid->node_count(), 17u);
    EXPECT_EQ(c.grid->n_time(), 8);
    EXPECT_TRUE(c.perturbations.empty());
    EXPECT_EQ(c.run.seed, 0u);
    const auto [ru, rm] = stationary_residual(c.state, c.metric);
    EXPECT_LT(std::max(ru.max_abs(), rm.max_abs()), 1e-9);
}

TEST(ConfigParse, MissingBlocksNameTheirPath)
{
    json j = minimal();
    j.erase("metric");
    EXPECT_NE(config_error(j).find("/metric"), std::string::npos);
    j = minimal();
    j["grid"].erase("n_cells");
    EXPECT_NE(config_error(j).find("/grid/n_cells"), std::string::npos);
    j = minimal();
    j["stationary"]["type"] = "unknown";
    EXPECT_NE(config_error(j).find("/stationary/type"), std::string::npos);
}

TEST(ConfigParse, RejectsInvalidValues)
{
    json j = minimal();
    j["metric"]["kappa"] = -1.0;
    EXPECT_NE(config_error(j).find("/metric"), std::string::npos);
    j = minimal();
    j["solver"] = {{"theta", 1.5}};
    EXPECT_NE(config_error(j).find("/solver/theta"), std::string::npos);
    j = minimal();
    j["run"] = {{"jobs", 0}};
    EXPECT_NE(config_error(j).find("/run/jobs"), std::string::npos);
    j = minimal();
    j["reconstruction"] = {{"mode", "guess"}};
    EXPECT_NE(config_error(j).find("/reconstruction/mode"), std::string::npos);
    j = minimal();
    j["grid"]["dim"] = 3;
    EXPECT_NE(config_error(j).find("/grid/dim"), std::string::npos);
}

TEST(ConfigParse, FieldSpecifications)
{
    json j = minimal();
    j["metric"]["kappa"] = {{"type", "sin"}, {"k", 2}, {"amplitude", 0.5}, {"offset", 1.0}};
    const ExperimentConfig c = parse_config(j);
    const Grid& g = *c.grid;
    for (std::size_t i = 0; i < g.node_count(); ++i)
        EXPECT_NEAR(c.metric.kappa()[i], 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * g.point(i)[0]), 1e-15);

    j["metric"]["kappa"] = {{"values", std::vector<double>(17, 1.25)}};
    EXPECT_DOUBLE_EQ(parse_config(j).metric.kappa()[5], 1.25);
    j["metric"]["kappa"] = {{"values", std::vector<double>(3, 1.25)}};
    EXPECT_NE(config_error(j).find("/metric/kappa/values"), std::string::npos);
}

TEST(ConfigParse, BatteryAndReconstructionBlocks)
{
    json j = minimal();
    j["perturbations"] = {{"u_freq", 2}, {"m_freq", 1}};
    j["reconstruction"] = {{"lambda_F", 1e-4}, {"max_order", 2}};
    j["cost"] = {{"coefficients", {1.0, 0.5}}};
    const ExperimentConfig c = parse_config(j);
    EXPECT_EQ(c.perturbations.size(), 6u);
    EXPECT_EQ(c.battery().u_labels.size(), 4u);
    EXPECT_EQ(c.battery().m_labels.size(), 2u);
    EXPECT_DOUBLE_EQ(c.reconstruction.lambda_F, 1e-4);
    EXPECT_EQ(c.reconstruction.n_freq_u, 2);
    EXPECT_EQ(c.cost.order(), 3);
}

TEST(ConfigParse, TwoDimensionalBoundaryState)
{
    const json j = json::parse(R"({
        "grid": {"dim": 2, "n_cells": [9, 9], "n_time": 4},
        "metric": {"base": "identity"},
        "stationary": {"type": "boundary", "u": {"type": "cos", "k": [1, 0], "amplitude": 0.2}, "m": 1.0}
    })");
    const ExperimentConfig c = parse_config(j);
    EXPECT_EQ(c.grid->dim(), 2);
    const auto [ru, rm] = stationary_residual(c.state, c.metric);
    EXPECT_LT(std::max(ru.max_abs(), rm.max_abs()), 1e-9);
    EXPECT_GT(c.state.m0.min(), 0.0);
}

TEST(ConfigParse, StampDependsOnContent)
{
    json a = minimal(), b = minimal();
    b["run"] = {{"seed", 3}};
    EXPECT_NE(parse_config(a).stamp().config_hash, parse_config(b).stamp().config_hash);
    EXPECT_EQ(parse_config(b).stamp().seed, 3u);
}

TEST(ConfigParse, ShippedConfigsLoad)
{
    for (const char* name : {"reference.json", "small.json", "probe2d.json"})
        EXPECT_NO_THROW(load_config(std::string(MFGDECODE_CONFIG_DIR) + "/" + name)) << name;
    EXPECT_THROW(load_config(std::string(MFGDECODE_CONFIG_DIR) + "/absent.json"), IoError);
}
