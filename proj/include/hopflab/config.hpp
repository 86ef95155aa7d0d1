#pragma once

// Run configuration for the command-line front end: one JSON file per run,
// versioned with `schema_version`. Parsing rejects unknown keys; serializing
// writes every setting explicitly, so parse -> serialize -> parse is stable.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ergodic.hpp"
#include "errors.hpp"
#include "fields.hpp"
#include "flow.hpp"
#include "linking.hpp"
#include "parallel.hpp"

namespace hopflab {

inline constexpr int schema_version = 1;

enum class Command { link, helicity, lambda, converge, verify, emit, accept };

inline const char* to_string(Command c)
{
    switch (c) {
    case Command::link: return "link";
    case Command::helicity: return "helicity";
    case Command::lambda: return "lambda";
    case Command::converge: return "converge";
    case Command::verify: return "verify";
    case Command::emit: return "emit";
    case Command::accept: return "accept";
    }
    return "?";
}

/// A field given inline or read from a JSON file holding {"tubes": [...]}.
struct FieldSource {
    std::string file;          // empty: inline
    FieldSpec field{};
};

struct HopfPairParams {
    double a = 0.2;
    double amplitude = 1.0;
};

struct OutputNames {
    std::string link = "link.json";
    std::string helicity = "helicity.json";
    std::string lambda_samples = "lambda_samples.csv";
    std::string lambda_summary = "lambda_summary.json";
    std::string convergence = "convergence.csv";
    std::string report = "arnold_report.json";
    std::string trajectory_x = "trajectory_x.csv";
    std::string trajectory_y = "trajectory_y.csv";
    std::string curve_x = "curve_x.csv";
    std::string curve_y = "curve_y.csv";
    std::string acceptance = "acceptance.json";
};

struct RunConfig {
    int version = schema_version;
    Command command = Command::verify;

    std::optional<HopfPairParams> hopf_pair;
    FieldSource x, y;                // ignored when hopf_pair is set
    std::string curve_a, curve_b;    // `link` on curve CSV files
    std::optional<Vec3> seed_x, seed_y;

    Horizon horizon{};
    long samples = 200;
    std::uint64_t seed = 1;
    unsigned workers = 0;            // 0: available cores

    LambdaMode mode = LambdaMode::kernel;
    Sampling sampling = Sampling::speed;
    double speed_fraction = 0.9;
    StepControl step{};
    LambdaOptions lambda{};
    double link_tol = 1e-6;

    QuadratureGrid grid{};
    QuadratureGrid potential_grid = default_potential_grid();
    bool compute_potential = true;

    std::vector<Horizon> schedule{{4 * std::numbers::pi, 4 * std::numbers::pi},
                                  {8 * std::numbers::pi, 8 * std::numbers::pi},
                                  {16 * std::numbers::pi, 16 * std::numbers::pi},
                                  {32 * std::numbers::pi, 32 * std::numbers::pi}};
    long pairs = 50;
    bool short_path_terms = true;
    long decay_pairs = 4;
    double relative_tolerance = 0.05;
    double sigma_factor = 3.0;

    std::vector<int> criteria;       // `accept`: empty runs all

    std::string output_dir = ".";
    OutputNames outputs{};

    std::filesystem::path base_dir;  // directory of the config file, not serialized

    FieldSpec field_x() const { return hopf_pair ? make_hopf_pair(hopf_pair->a, hopf_pair->amplitude).first : x.field; }
    FieldSpec field_y() const { return hopf_pair ? make_hopf_pair(hopf_pair->a, hopf_pair->amplitude).second : y.field; }
    unsigned worker_count() const { return workers == 0 ? default_workers() : workers; }
    std::filesystem::path resolve(const std::string& p) const
    {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed)
{
    if (!j.is_object())
        throw ValidationError(std::string(where) + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k))
            throw ValidationError(std::string(where) + ": unknown key '" + k + "'");
}

template <class T>
T value_or(const json& j, const char* key, T fallback)
{
    if (!j.contains(key))
        return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("config: bad value for '") + key + "'");
    }
}

inline Vec3 vec_from(const json& j, const char* what)
{
    if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number())
        throw ValidationError(std::string(what) + ": expected [x, y, z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json vec_to(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

inline TubeSpec tube_from(const json& j)
{
    check_keys(j, "tube", {"center", "axis", "major_radius", "minor_radius", "amplitude", "sign"});
    TubeSpec t;
    if (j.contains("center"))
        t.center = vec_from(j["center"], "tube.center");
    if (j.contains("axis"))
        t.axis = vec_from(j["axis"], "tube.axis");
    t.major_radius = value_or(j, "major_radius", t.major_radius);
    t.minor_radius = value_or(j, "minor_radius", t.minor_radius);
    t.amplitude = value_or(j, "amplitude", t.amplitude);
    t.sign = value_or(j, "sign", t.sign);
    t.validate();
    return t;
}

inline json tube_to(const TubeSpec& t)
{
    return {{"center", vec_to(t.center)}, {"axis", vec_to(t.axis)}, {"major_radius", t.major_radius},
            {"minor_radius", t.minor_radius}, {"amplitude", t.amplitude}, {"sign", t.sign}};
}

inline FieldSpec field_from_tubes(const json& j, const std::string& name)
{
    check_keys(j, "field", {"tubes", "name"});
    std::vector<TubeSpec> tubes;
    if (j.contains("tubes")) {
        if (!j["tubes"].is_array())
            throw ValidationError("field: 'tubes' must be an array");
        for (const auto& t : j["tubes"])
            tubes.push_back(tube_from(t));
    }
    return FieldSpec(std::move(tubes), value_or<std::string>(j, "name", name));
}

inline json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("'" + path.string() + "': " + e.what());
    }
}

inline FieldSource field_source_from(const json& j, const std::string& name, const std::filesystem::path& base)
{
    FieldSource src;
    if (j.is_object() && j.contains("file")) {
        check_keys(j, "field", {"file"});
        src.file = j["file"].get<std::string>();
        const std::filesystem::path p(src.file);
        src.field = field_from_tubes(read_json_file(p.is_absolute() ? p : base / p), name);
    } else {
        src.field = field_from_tubes(j, name);
    }
    return src;
}

inline json field_source_to(const FieldSource& s)
{
    if (!s.file.empty())
        return {{"file", s.file}};
    json tubes = json::array();
    for (const auto& t : s.field.tubes())
        tubes.push_back(tube_to(t));
    return {{"name", s.field.name()}, {"tubes", tubes}};
}

inline Horizon horizon_from(const json& j)
{
    check_keys(j, "horizon", {"T", "S", "T_pi", "S_pi"});
    Horizon h;
    if (j.contains("T_pi"))
        h.T = j["T_pi"].get<double>() * std::numbers::pi;
    if (j.contains("S_pi"))
        h.S = j["S_pi"].get<double>() * std::numbers::pi;
    h.T = value_or(j, "T", h.T);
    h.S = value_or(j, "S", h.S);
    h.validate();
    return h;
}

inline json horizon_to(const Horizon& h) { return {{"T", h.T}, {"S", h.S}}; }

inline QuadratureGrid grid_from(const json& j, QuadratureGrid g)
{
    check_keys(j, "grid", {"cell", "rule", "gauss_order", "exclusion", "exclusion_diagonals"});
    g.cell = value_or(j, "cell", g.cell);
    const auto rule = value_or<std::string>(j, "rule", g.rule == GridRule::gauss ? "gauss" : "midpoint");
    if (rule != "gauss" && rule != "midpoint")
        throw ValidationError("grid: rule must be 'midpoint' or 'gauss'");
    g.rule = rule == "gauss" ? GridRule::gauss : GridRule::midpoint;
    g.gauss_order = value_or(j, "gauss_order", g.gauss_order);
    g.exclusion = value_or(j, "exclusion", g.exclusion);
    g.exclusion_diagonals = value_or(j, "exclusion_diagonals", g.exclusion_diagonals);
    g.validate();
    return g;
}

inline json grid_to(const QuadratureGrid& g)
{
    return {{"cell", g.cell}, {"rule", g.rule == GridRule::gauss ? "gauss" : "midpoint"},
            {"gauss_order", g.gauss_order}, {"exclusion", g.exclusion},
            {"exclusion_diagonals", g.exclusion_diagonals}};
}

template <class E>
E enum_from(const std::string& s, std::initializer_list<E> values, const char* what)
{
    for (E e : values)
        if (s == to_string(e))
            return e;
    throw ValidationError(std::string("config: unknown ") + what + " '" + s + "'");
}

inline void require(bool ok, const char* msg)
{
    if (!ok)
        throw ValidationError(std::string("config: ") + msg);
}

} // namespace detail

/// Reads and validates a configuration. Relative file references resolve
/// against `base_dir`.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {})
{
    using namespace detail;
    check_keys(j, "config",
               {"schema_version", "command", "hopf_pair", "fields", "curves", "seeds", "horizon", "samples", "seed",
                "workers", "mode", "sampling", "speed_fraction", "tolerances", "grid", "potential_grid",
                "compute_potential", "schedule", "pairs", "short_path_terms", "decay_pairs",
                "relative_tolerance", "sigma_factor", "criteria", "output_dir", "outputs"});
    RunConfig c;
    c.base_dir = base_dir;
    require(j.contains("schema_version"), "missing 'schema_version'");
    c.version = value_or(j, "schema_version", 0);
    if (c.version != schema_version)
        throw ValidationError("config: unsupported schema_version " + std::to_string(c.version));
    require(j.contains("command"), "missing 'command'");
    c.command = enum_from(value_or<std::string>(j, "command", ""),
                          {Command::link, Command::helicity, Command::lambda, Command::converge, Command::verify,
                           Command::emit, Command::accept},
                          "command");

    if (j.contains("hopf_pair")) {
        check_keys(j["hopf_pair"], "hopf_pair", {"a", "amplitude"});
        HopfPairParams p;
        p.a = value_or(j["hopf_pair"], "a", p.a);
        p.amplitude = value_or(j["hopf_pair"], "amplitude", p.amplitude);
        make_hopf_pair(p.a, p.amplitude);   // validates 0 < a < 1/2
        c.hopf_pair = p;
    }
    if (j.contains("fields")) {
        require(!c.hopf_pair, "'fields' and 'hopf_pair' are exclusive");
        check_keys(j["fields"], "fields", {"x", "y"});
        if (j["fields"].contains("x"))
            c.x = field_source_from(j["fields"]["x"], "X", base_dir);
        if (j["fields"].contains("y"))
            c.y = field_source_from(j["fields"]["y"], "Y", base_dir);
    }
    if (j.contains("curves")) {
        check_keys(j["curves"], "curves", {"a", "b"});
        require(j["curves"].contains("a") && j["curves"].contains("b"), "'curves' needs 'a' and 'b'");
        c.curve_a = j["curves"]["a"].get<std::string>();
        c.curve_b = j["curves"]["b"].get<std::string>();
        for (const auto& p : {c.curve_a, c.curve_b})
            if (!std::filesystem::exists(c.resolve(p)))
                throw ValidationError("config: curve file '" + c.resolve(p).string() + "' does not exist");
    }
    if (j.contains("seeds")) {
        check_keys(j["seeds"], "seeds", {"x", "y"});
        if (j["seeds"].contains("x"))
            c.seed_x = vec_from(j["seeds"]["x"], "seeds.x");
        if (j["seeds"].contains("y"))
            c.seed_y = vec_from(j["seeds"]["y"], "seeds.y");
    }
    if (j.contains("horizon"))
        c.horizon = horizon_from(j["horizon"]);
    c.samples = value_or(j, "samples", c.samples);
    c.seed = value_or(j, "seed", c.seed);
    c.workers = value_or(j, "workers", c.workers);
    c.mode = enum_from(value_or<std::string>(j, "mode", to_string(c.mode)),
                       {LambdaMode::geometric, LambdaMode::kernel}, "mode");
    c.sampling = enum_from(value_or<std::string>(j, "sampling", to_string(c.sampling)),
                           {Sampling::box, Sampling::tube, Sampling::speed}, "sampling");
    c.speed_fraction = value_or(j, "speed_fraction", c.speed_fraction);

    if (j.contains("tolerances")) {
        const auto& t = j["tolerances"];
        check_keys(t, "tolerances",
                   {"rel_tol", "abs_tol", "max_step", "max_steps", "max_seglen", "gauss_tol", "link_tol", "eps_sep",
                    "panel_length", "kernel_tol", "singular_floor"});
        c.step.rel_tol = value_or(t, "rel_tol", c.step.rel_tol);
        c.step.abs_tol = value_or(t, "abs_tol", c.step.abs_tol);
        c.step.max_step = value_or(t, "max_step", c.step.max_step);
        c.step.max_steps = value_or(t, "max_steps", c.step.max_steps);
        c.lambda.max_seglen = value_or(t, "max_seglen", c.lambda.max_seglen);
        c.lambda.gauss_tol = value_or(t, "gauss_tol", c.lambda.gauss_tol);
        c.link_tol = value_or(t, "link_tol", c.link_tol);
        c.lambda.eps_sep = value_or(t, "eps_sep", c.lambda.eps_sep);
        c.lambda.panel_length = value_or(t, "panel_length", c.lambda.panel_length);
        c.lambda.kernel_tol = value_or(t, "kernel_tol", c.lambda.kernel_tol);
        c.lambda.singular_floor = value_or(t, "singular_floor", c.lambda.singular_floor);
    }
    if (j.contains("grid"))
        c.grid = grid_from(j["grid"], c.grid);
    if (j.contains("potential_grid"))
        c.potential_grid = grid_from(j["potential_grid"], c.potential_grid);
    c.compute_potential = value_or(j, "compute_potential", c.compute_potential);
    if (j.contains("schedule")) {
        require(j["schedule"].is_array(), "'schedule' must be an array of horizons");
        c.schedule.clear();
        for (const auto& h : j["schedule"])
            c.schedule.push_back(horizon_from(h));
    }
    c.pairs = value_or(j, "pairs", c.pairs);
    c.short_path_terms = value_or(j, "short_path_terms", c.short_path_terms);
    c.decay_pairs = value_or(j, "decay_pairs", c.decay_pairs);
    c.relative_tolerance = value_or(j, "relative_tolerance", c.relative_tolerance);
    c.sigma_factor = value_or(j, "sigma_factor", c.sigma_factor);
    c.criteria = value_or(j, "criteria", c.criteria);
    c.output_dir = value_or(j, "output_dir", c.output_dir);
    if (j.contains("outputs")) {
        const auto& o = j["outputs"];
        check_keys(o, "outputs",
                   {"link", "helicity", "lambda_samples", "lambda_summary", "convergence", "report",
                    "trajectory_x", "trajectory_y", "curve_x", "curve_y", "acceptance"});
        auto& n = c.outputs;
        n.link = value_or(o, "link", n.link);
        n.helicity = value_or(o, "helicity", n.helicity);
        n.lambda_samples = value_or(o, "lambda_samples", n.lambda_samples);
        n.lambda_summary = value_or(o, "lambda_summary", n.lambda_summary);
        n.convergence = value_or(o, "convergence", n.convergence);
        n.report = value_or(o, "report", n.report);
        n.trajectory_x = value_or(o, "trajectory_x", n.trajectory_x);
        n.trajectory_y = value_or(o, "trajectory_y", n.trajectory_y);
        n.curve_x = value_or(o, "curve_x", n.curve_x);
        n.curve_y = value_or(o, "curve_y", n.curve_y);
        n.acceptance = value_or(o, "acceptance", n.acceptance);
    }

    // Ranges.
    c.step.validate();
    require(c.samples >= 2, "'samples' must be at least 2");
    require(c.pairs >= 1, "'pairs' must be at least 1");
    require(c.decay_pairs >= 0, "'decay_pairs' must be non-negative");
    require(c.speed_fraction >= 0.0 && c.speed_fraction <= 1.0, "'speed_fraction' must lie in [0, 1]");
    require(c.lambda.max_seglen > 0 && c.lambda.gauss_tol > 0 && c.link_tol > 0 && c.lambda.panel_length > 0 &&
                c.lambda.kernel_tol > 0 && c.lambda.singular_floor > 0,
            "tolerances must be positive");
    require(c.relative_tolerance >= 0 && c.sigma_factor >= 0, "acceptance tolerances must be non-negative");
    for (std::size_t k = 1; k < c.schedule.size(); ++k)
        require(c.schedule[k].T > c.schedule[k - 1].T && c.schedule[k].S > c.schedule[k - 1].S,
                "'schedule' must be strictly increasing");
    for (int k : c.criteria)
        require(k >= 1 && k <= 8, "'criteria' entries must lie in 1..8");
    if (c.command == Command::link && c.curve_a.empty())
        require(c.seed_x && c.seed_y, "'link' needs 'curves' or 'seeds' x and y");
    if (c.command == Command::emit)
        require(c.seed_x || c.seed_y, "'emit' needs at least one seed");
    if (c.command == Command::converge)
        require(!c.schedule.empty(), "'converge' needs a non-empty schedule");
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    return parse_config(detail::read_json_file(path), path.parent_path());
}

/// Distinct non-empty fields of every valid configuration in `dir`, in file
/// name order. Invalid configurations are skipped.
inline std::vector<std::pair<std::string, FieldSpec>> shipped_fields(const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::pair<std::string, FieldSpec>> out;
    std::set<std::string> seen;
    for (const auto& path : files) {
        RunConfig c;
        try {
            c = load_config(path);
        } catch (const std::exception&) {
            continue;
        }
        const std::string stem = path.stem().string();
        for (const auto& [tag, f] : {std::pair{"x", c.field_x()}, std::pair{"y", c.field_y()}}) {
            if (f.empty())
                continue;
            nlohmann::json key = nlohmann::json::array();
            for (const auto& t : f.tubes())
                key.push_back(detail::tube_to(t));
            if (seen.insert(key.dump()).second)
                out.emplace_back(stem + "." + tag, f);
        }
    }
    return out;
}

/// Canonical JSON form of a configuration.
inline nlohmann::json to_json(const RunConfig& c)
{
    using namespace detail;
    json j;
    j["schema_version"] = c.version;
    j["command"] = to_string(c.command);
    if (c.hopf_pair)
        j["hopf_pair"] = {{"a", c.hopf_pair->a}, {"amplitude", c.hopf_pair->amplitude}};
    else
        j["fields"] = {{"x", field_source_to(c.x)}, {"y", field_source_to(c.y)}};
    if (!c.curve_a.empty())
        j["curves"] = {{"a", c.curve_a}, {"b", c.curve_b}};
    if (c.seed_x || c.seed_y) {
        json s = json::object();
        if (c.seed_x)
            s["x"] = vec_to(*c.seed_x);
        if (c.seed_y)
            s["y"] = vec_to(*c.seed_y);
        j["seeds"] = s;
    }
    j["horizon"] = horizon_to(c.horizon);
    j["samples"] = c.samples;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["mode"] = to_string(c.mode);
    j["sampling"] = to_string(c.sampling);
    j["speed_fraction"] = c.speed_fraction;
    j["tolerances"] = {{"rel_tol", c.step.rel_tol},
                       {"abs_tol", c.step.abs_tol},
                       {"max_step", c.step.max_step},
                       {"max_steps", c.step.max_steps},
                       {"max_seglen", c.lambda.max_seglen},
                       {"gauss_tol", c.lambda.gauss_tol},
                       {"link_tol", c.link_tol},
                       {"eps_sep", c.lambda.eps_sep},
                       {"panel_length", c.lambda.panel_length},
                       {"kernel_tol", c.lambda.kernel_tol},
                       {"singular_floor", c.lambda.singular_floor}};
    j["grid"] = grid_to(c.grid);
    j["potential_grid"] = grid_to(c.potential_grid);
    j["compute_potential"] = c.compute_potential;
    json sched = json::array();
    for (const auto& h : c.schedule)
        sched.push_back(horizon_to(h));
    j["schedule"] = sched;
    j["pairs"] = c.pairs;
    j["short_path_terms"] = c.short_path_terms;
    j["decay_pairs"] = c.decay_pairs;
    j["relative_tolerance"] = c.relative_tolerance;
    j["sigma_factor"] = c.sigma_factor;
    j["criteria"] = c.criteria;
    j["output_dir"] = c.output_dir;
    const auto& n = c.outputs;
    j["outputs"] = {{"link", n.link},
                    {"helicity", n.helicity},
                    {"lambda_samples", n.lambda_samples},
                    {"lambda_summary", n.lambda_summary},
                    {"convergence", n.convergence},
                    {"report", n.report},
                    {"trajectory_x", n.trajectory_x},
                    {"trajectory_y", n.trajectory_y},
                    {"curve_x", n.curve_x},
                    {"curve_y", n.curve_y},
                    {"acceptance", n.acceptance}};
    return j;
}

} // namespace hopflab
