#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "hopflab/cli.hpp"
#include "hopflab/config.hpp"

using namespace hopflab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double pi = std::numbers::pi;
const fs::path config_dir = HOPFLAB_CONFIG_DIR;

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("hopflab_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json base(const char* command)
{
    return {{"schema_version", 1}, {"command", command}};
}

int run_quiet(const RunConfig& c, const fs::path& out, std::ostream& err)
{
    std::ostringstream sink;
    RunOptions ro;
    ro.output_dir = out;
    ro.quiet = true;
    ro.out = &sink;
    ro.err = &err;
    return run(c, ro);
}

int cli(const std::string& args)
{
    const std::string cmd = std::string(HOPFLAB_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, ShippedConfigsRoundTrip)
{
    int checked = 0;
    for (const auto& e : fs::directory_iterator(config_dir)) {
        if (e.path().extension() != ".json" || e.path().stem() == "invalid_hopf_radius")
            continue;
        const RunConfig a = load_config(e.path());
        const json ja = to_json(a);
        const RunConfig b = parse_config(ja, config_dir);
        EXPECT_EQ(ja.dump(), to_json(b).dump()) << e.path();
        ++checked;
    }
    EXPECT_GE(checked, 15);
}

TEST(Config, NonDefaultValuesSurviveRoundTrip)
{
    json j = base("converge");
    j["fields"] = {{"x", {{"tubes", {{{"center", {0.1, 0.2, 0.3}}, {"minor_radius", 0.25}, {"sign", -1}}}}}},
                   {"y", {{"tubes", json::array()}}}};
    j["horizon"] = {{"T", 3.5}, {"S_pi", 2}};
    j["samples"] = 17;
    j["seed"] = 99;
    j["mode"] = "geometric";
    j["sampling"] = "box";
    j["tolerances"] = {{"rel_tol", 1e-8}, {"gauss_tol", 1e-7}, {"eps_sep", 1e-5}};
    j["grid"] = {{"cell", 0.07}, {"rule", "gauss"}, {"gauss_order", 3}};
    j["schedule"] = {{{"T", 1}, {"S", 1}}, {{"T", 2}, {"S", 3}}};
    j["outputs"] = {{"convergence", "c.csv"}};
    const RunConfig c = parse_config(j);
    EXPECT_EQ(c.x.field.tubes()[0].sign, -1);
    EXPECT_DOUBLE_EQ(c.horizon.S, 2 * pi);
    EXPECT_EQ(c.grid.rule, GridRule::gauss);
    EXPECT_EQ(c.outputs.convergence, "c.csv");
    const json once = to_json(c);
    const json twice = to_json(parse_config(once));
    EXPECT_EQ(once, twice);
    EXPECT_EQ(once.dump(), twice.dump());
}

TEST(Config, ValidationErrors)
{
    const auto bad = [](json j) { EXPECT_THROW(parse_config(j), ValidationError) << j.dump(); };
    bad({{"command", "verify"}});
    bad({{"schema_version", 2}, {"command", "verify"}});
    json j = base("verify");
    j["typo"] = 1;
    bad(j);
    j = base("dance");
    bad(j);
    j = base("verify");
    j["hopf_pair"] = {{"a", 0.5}};
    bad(j);
    j = base("verify");
    j["hopf_pair"] = json::object();
    j["fields"] = json::object();
    bad(j);
    j = base("link");
    bad(j);
    j = base("link");
    j["curves"] = {{"a", "missing_a.csv"}, {"b", "missing_b.csv"}};
    bad(j);
    j = base("converge");
    j["schedule"] = {{{"T", 2}, {"S", 2}}, {{"T", 2}, {"S", 3}}};
    bad(j);
    j = base("lambda");
    j["samples"] = 1;
    bad(j);
    j = base("lambda");
    j["speed_fraction"] = 1.5;
    bad(j);
    j = base("lambda");
    j["samples"] = "many";
    bad(j);
    j = base("verify");
    j["fields"] = {{"x", {{"tubes", {{{"axis", {0, 0, 2}}}}}}}};
    bad(j);
    j = base("verify");
    j["fields"] = {{"x", {{"file", "no_such_field.json"}}}};
    bad(j);
    j = base("accept");
    j["criteria"] = {9};
    bad(j);
}

TEST(Config, FieldFileReference)
{
    const RunConfig c = load_config(config_dir / "superposition.json");
    EXPECT_EQ(c.y.file, "fields/superposition_y.json");
    EXPECT_EQ(c.field_y().tubes().size(), 2u);
    EXPECT_EQ(to_json(c)["fields"]["y"], json({{"file", "fields/superposition_y.json"}}));
}

TEST(Config, ShippedFieldsAreDistinct)
{
    const auto fields = shipped_fields(config_dir);
    // Hopf X and Y, the far tube, the superposition Y+Z; the zero field is skipped.
    EXPECT_EQ(fields.size(), 4u);
    for (const auto& [name, f] : fields)
        EXPECT_FALSE(f.empty()) << name;
}

TEST(Run, LinkOnSplitCurves)
{
    const fs::path out = scratch("link_split");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(load_config(config_dir / "link_split.json"), out, err), exit_ok) << err.str();
    const json r = json::parse(slurp(out / "link.json"));
    EXPECT_NEAR(r["gauss_value"].get<double>(), 0.0, 1e-6);
    EXPECT_EQ(r["oracle_value"].get<int>(), 0);
    EXPECT_FALSE(r["discarded"].get<bool>());
}

TEST(Run, LinkOnHopfCores)
{
    const fs::path out = scratch("link_cores");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(load_config(config_dir / "link_hopf_cores.json"), out, err), exit_ok) << err.str();
    const json r = json::parse(slurp(out / "link.json"));
    EXPECT_NEAR(r["gauss_value"].get<double>(), 1.0, 1e-6);
    EXPECT_EQ(r["oracle_value"].get<int>(), 1);
}

TEST(Run, EmitMatchesResampledOrbit)
{
    const fs::path out = scratch("emit_hopf");
    const RunConfig c = load_config(config_dir / "emit_hopf.json");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(c, out, err), exit_ok) << err.str();
    std::ifstream in(out / "trajectory_x.csv");
    const auto samples = read_trajectory_csv(in);
    const Trajectory expected = resample(integrate(c.field_x(), *c.seed_x, c.horizon.T, c.step), c.lambda.max_seglen);
    ASSERT_EQ(samples.size(), expected.samples().size());
    for (std::size_t i = 1; i < samples.size(); ++i)
        EXPECT_LE(distance(samples[i].p, samples[i - 1].p), c.lambda.max_seglen * (1 + 1e-12));
    EXPECT_DOUBLE_EQ(samples.back().t, c.horizon.T);
    EXPECT_TRUE(fs::exists(out / "curve_y.csv"));
}

TEST(Run, EmitZeroFieldGivesSingleRowCurve)
{
    const fs::path out = scratch("emit_zero");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(load_config(config_dir / "emit_zero.json"), out, err), exit_ok) << err.str();
    std::ifstream in(out / "curve_x.csv");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        rows += !line.empty() && line[0] != '#' && line.rfind("x,", 0) != 0;
    EXPECT_EQ(rows, 1);
    std::ifstream again(out / "curve_x.csv");
    const ClosedCurve c = read_curve_csv(again);
    EXPECT_TRUE(c.is_degenerate());
    EXPECT_EQ(c.vertices().front(), (Vec3{0.3, 0.7, -0.2}));
}

TEST(Run, EmittedCurveReimportsExactly)
{
    const fs::path out = scratch("emit_roundtrip");
    const RunConfig c = load_config(config_dir / "emit_hopf.json");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(c, out, err), exit_ok) << err.str();
    const ClosedCurve expected =
        closed_flow_arc(c.field_y(), *c.seed_y, c.horizon.S, c.lambda.max_seglen, c.step);
    std::ifstream in(out / "curve_y.csv");
    const ClosedCurve got = read_curve_csv(in);
    ASSERT_EQ(got.vertices().size(), expected.vertices().size());
    EXPECT_EQ(got.closure().first, expected.closure().first);
    EXPECT_EQ(got.closure().end, expected.closure().end);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.vertices().size(); ++i)
        worst = std::max(worst, distance(got.vertices()[i], expected.vertices()[i]));
    EXPECT_LE(worst, 1e-15);
}

TEST(Run, LambdaOutputsAreByteIdentical)
{
    json j = base("lambda");
    j["hopf_pair"] = {{"a", 0.2}, {"amplitude", 1.0}};
    j["horizon"] = {{"T_pi", 4}, {"S_pi", 4}};
    j["samples"] = 12;
    j["seed"] = 5;
    RunConfig c = parse_config(j);
    std::ostringstream err;
    c.workers = 1;
    ASSERT_EQ(run_quiet(c, scratch("det_a"), err), exit_ok) << err.str();
    c.workers = 3;
    ASSERT_EQ(run_quiet(c, scratch("det_b"), err), exit_ok) << err.str();
    const std::string a = slurp(fs::temp_directory_path() / "hopflab_test_det_a" / "lambda_samples.csv");
    const std::string b = slurp(fs::temp_directory_path() / "hopflab_test_det_b" / "lambda_samples.csv");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.substr(0, a.find('\n')), "x0_x,x0_y,x0_z,y0_x,y0_y,y0_z,T,S,mode,value,discarded,weight");
    c.seed = 6;
    ASSERT_EQ(run_quiet(c, scratch("det_c"), err), exit_ok);
    EXPECT_NE(a, slurp(fs::temp_directory_path() / "hopflab_test_det_c" / "lambda_samples.csv"));
}

TEST(Run, ConvergenceCsv)
{
    json j = base("converge");
    j["hopf_pair"] = {{"a", 0.2}, {"amplitude", 1.0}};
    j["pairs"] = 3;
    j["sampling"] = "tube";
    j["schedule"] = {{{"T_pi", 2}, {"S_pi", 2}}, {{"T_pi", 4}, {"S_pi", 4}}};
    const fs::path out = scratch("converge");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(parse_config(j), out, err), exit_ok) << err.str();
    std::ifstream in(out / "convergence.csv");
    std::string header, row1, row2, extra;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    EXPECT_EQ(header, "T,S,lambda_mean,l1_increment,term1,term2,term3");
    EXPECT_NE(row1.find("nan"), std::string::npos);
    EXPECT_EQ(row2.find("nan"), std::string::npos);
    EXPECT_FALSE(std::getline(in, extra) && !extra.empty());
}

TEST(Run, HelicityReport)
{
    json j = base("helicity");
    j["hopf_pair"] = {{"a", 0.2}, {"amplitude", 1.0}};
    j["compute_potential"] = false;
    j["grid"] = {{"cell", 0.1}};
    const fs::path out = scratch("helicity");
    std::ostringstream err;
    ASSERT_EQ(run_quiet(parse_config(j), out, err), exit_ok) << err.str();
    const json r = json::parse(slurp(out / "helicity.json"));
    const double phi = pi * 0.04 / 3.0;
    EXPECT_NEAR(r["hopf_kernel"].get<double>() / (phi * phi), 1.0, 0.01);
    EXPECT_TRUE(r["hopf_potential"].is_null());
}

TEST(Run, NumericalFailureExitsTwo)
{
    // Identical supports without exclusion hit the singular kernel.
    json j = base("helicity");
    const json t = {{"tubes", {{{"minor_radius", 0.2}}}}};
    j["fields"] = {{"x", t}, {"y", t}};
    j["grid"] = {{"cell", 0.1}, {"exclusion", false}};
    j["compute_potential"] = false;
    std::ostringstream err;
    EXPECT_EQ(run_quiet(parse_config(j), scratch("numerical"), err), exit_numerical);
    EXPECT_NE(err.str().find("numerical"), std::string::npos);
}

TEST(Run, FailedComparisonExitsThree)
{
    json j = base("verify");
    j["hopf_pair"] = {{"a", 0.2}, {"amplitude", 1.0}};
    j["horizon"] = {{"T_pi", 2}, {"S_pi", 2}};
    j["samples"] = 10;
    j["grid"] = {{"cell", 0.1}};
    j["compute_potential"] = false;
    j["decay_pairs"] = 0;
    j["relative_tolerance"] = 0.0;
    j["sigma_factor"] = 0.0;
    const fs::path out = scratch("verify_fail");
    std::ostringstream err;
    EXPECT_EQ(run_quiet(parse_config(j), out, err), exit_acceptance);
    EXPECT_FALSE(json::parse(slurp(out / "arnold_report.json"))["pass"].get<bool>());
}

TEST(Run, UnwritableOutputExitsTwo)
{
    const fs::path blocker = scratch("blocked") / "file";
    std::ofstream(blocker) << "x";
    std::ostringstream err;
    EXPECT_EQ(run_quiet(load_config(config_dir / "link_split.json"), blocker / "sub", err), exit_numerical);
    EXPECT_NE(err.str().find(blocker.string()), std::string::npos);
}

TEST(Cli, ExitCodes)
{
    const std::string out = " --quiet --output " + scratch("cli").string();
    EXPECT_EQ(cli("--config " + (config_dir / "link_split.json").string() + out), 0);
    EXPECT_EQ(cli("--config " + (config_dir / "invalid_hopf_radius.json").string() + out), 1);
    EXPECT_EQ(cli("--config /no/such/config.json" + out), 1);
    EXPECT_EQ(cli("--bogus-flag"), 1);
    EXPECT_EQ(cli(""), 1);
    EXPECT_EQ(cli("--help"), 0);
}

TEST(Cli, SeedOverride)
{
    const fs::path dir = scratch("cli_seed");
    json j = base("lambda");
    j["hopf_pair"] = {{"a", 0.2}, {"amplitude", 1.0}};
    j["horizon"] = {{"T_pi", 2}, {"S_pi", 2}};
    j["samples"] = 4;
    std::ofstream(dir / "lambda.json") << j.dump();
    const std::string cfg = "--quiet --workers 1 --config " + (dir / "lambda.json").string();
    ASSERT_EQ(cli(cfg + " --output " + (dir / "a").string() + " --seed 3"), 0);
    ASSERT_EQ(cli(cfg + " --output " + (dir / "b").string() + " --seed 3"), 0);
    ASSERT_EQ(cli(cfg + " --output " + (dir / "c").string() + " --seed 4"), 0);
    const std::string a = slurp(dir / "a" / "lambda_samples.csv");
    EXPECT_EQ(a, slurp(dir / "b" / "lambda_samples.csv"));
    EXPECT_NE(a, slurp(dir / "c" / "lambda_samples.csv"));
}

TEST(Cli, VerifyShippedHopfPair)
{
    const fs::path out = scratch("cli_verify");
    EXPECT_EQ(cli("--quiet --config " + (config_dir / "hopf_pair.json").string() + " --output " + out.string()), 0);
    const json r = json::parse(slurp(out / "arnold_report.json"));
    EXPECT_TRUE(r["pass"].get<bool>());
    EXPECT_TRUE(r["errors"].empty());
}
