#pragma once

// Command dispatch for the batch front end. Exit status: 0 success,
// 1 validation error, 2 numerical or I/O failure, 3 acceptance failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "acceptance.hpp"
#include "config.hpp"
#include "ergodic.hpp"
#include "flow.hpp"
#include "linking.hpp"

namespace hopflab {

enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_numerical = 2, exit_acceptance = 3 };

struct RunOptions {
    std::optional<std::filesystem::path> output_dir;   // overrides the config
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    bool quiet = false;
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json number_or_null(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const LinkingResult& r)
{
    return {{"gauss_value", number_or_null(r.gauss_value)},
            {"oracle_value", r.oracle_value ? nlohmann::json(*r.oracle_value) : nlohmann::json(nullptr)},
            {"min_distance", number_or_null(r.min_distance)},
            {"generic", r.generic},
            {"discarded", r.discarded},
            {"error_estimate", number_or_null(r.error_estimate)}};
}

inline nlohmann::json to_json(const ArnoldReport& r)
{
    nlohmann::json decay = nlohmann::json::array();
    for (const auto& row : r.decay_table)
        decay.push_back({{"T", row.horizon.T}, {"S", row.horizon.S}, {"term1", number_or_null(row.term1)},
                         {"term2", number_or_null(row.term2)}, {"term3", number_or_null(row.term3)}});
    return {{"lambda_avg", number_or_null(r.lambda_avg)},
            {"lambda_stderr", number_or_null(r.lambda_stderr)},
            {"hopf_kernel", number_or_null(r.hopf_kernel)},
            {"hopf_kernel_coarse", number_or_null(r.hopf_kernel_coarse)},
            {"hopf_kernel_error", number_or_null(r.hopf_kernel_error)},
            {"hopf_potential", number_or_null(r.hopf_potential)},
            {"thin_tube_prediction",
             r.thin_tube_prediction ? number_or_null(*r.thin_tube_prediction) : nlohmann::json(nullptr)},
            {"n_samples", r.n_samples},
            {"n_discarded", r.n_discarded},
            {"discard_warning", r.discard_warning},
            {"horizon", {{"T", r.horizon.T}, {"S", r.horizon.S}}},
            {"decay_table", decay},
            {"errors", r.errors},
            {"difference", number_or_null(r.difference)},
            {"allowed", number_or_null(r.allowed)},
            {"pass", r.pass}};
}

inline std::ofstream open_output(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write '" + path.string() + "'");
    return os;
}

inline void finish(std::ofstream& os, const std::filesystem::path& path)
{
    os.flush();
    if (!os)
        throw IoError("write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j)
{
    auto os = open_output(path);
    os << j.dump(2) << '\n';
    finish(os, path);
}

inline void write_samples_csv(std::ostream& os, const AverageResult& r, LambdaMode mode)
{
    const auto old = os.precision(17);
    os << "x0_x,x0_y,x0_z,y0_x,y0_y,y0_z,T,S,mode,value,discarded,weight\n";
    for (const auto& s : r.samples)
        os << s.x.x << ',' << s.x.y << ',' << s.x.z << ',' << s.y.x << ',' << s.y.y << ',' << s.y.z << ','
           << r.horizon.T << ',' << r.horizon.S << ',' << to_string(mode) << ',' << s.lambda << ','
           << (s.discarded ? 1 : 0) << ',' << s.weight << '\n';
    os.precision(old);
}

inline void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows)
{
    const auto old = os.precision(17);
    os << "T,S,lambda_mean,l1_increment,term1,term2,term3\n";
    for (const auto& r : rows)
        os << r.horizon.T << ',' << r.horizon.S << ',' << r.lambda_mean << ',' << r.l1_increment << ',' << r.term1
           << ',' << r.term2 << ',' << r.term3 << '\n';
    os.precision(old);
}

inline ClosedCurve read_curve_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open curve '" + path.string() + "'");
    return read_curve_csv(in);
}

inline double curve_box_diagonal(const ClosedCurve& a, const ClosedCurve& b)
{
    Vec3 lo = a.vertices().front(), hi = lo;
    for (const ClosedCurve* c : {&a, &b})
        for (const auto& v : c->vertices())
            for (int i = 0; i < 3; ++i) {
                lo[i] = std::min(lo[i], v[i]);
                hi[i] = std::max(hi[i], v[i]);
            }
    return distance(lo, hi);
}

inline LambdaOptions lambda_options(const RunConfig& c, unsigned workers)
{
    LambdaOptions lo = c.lambda;
    lo.direction_seed = c.seed;
    lo.workers = workers;
    return lo;
}

} // namespace detail

/// Runs one configured command and writes its artifacts.
inline int run(RunConfig cfg, const RunOptions& ro = {})
{
    using namespace detail;
    std::ostream& out = *ro.out;
    std::ostream& err = *ro.err;
    try {
        if (ro.seed)
            cfg.seed = *ro.seed;
        if (ro.workers)
            cfg.workers = *ro.workers;
        const unsigned workers = cfg.worker_count();
        const std::filesystem::path dir = ro.output_dir ? *ro.output_dir : std::filesystem::path(cfg.output_dir);
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
            throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
        const auto say = [&](const std::string& s) {
            if (!ro.quiet)
                out << s << '\n';
        };
        const FieldSpec xf = cfg.field_x();
        const FieldSpec yf = cfg.field_y();
        const LambdaOptions lo = lambda_options(cfg, workers);

        switch (cfg.command) {
        case Command::link: {
            ClosedCurve a, b;
            LinkOptions opt;
            opt.quadrature.tol = cfg.link_tol;
            opt.quadrature.singular_floor = cfg.lambda.singular_floor;
            opt.quadrature.workers = workers;
            opt.seed = cfg.seed;
            if (!cfg.curve_a.empty()) {
                a = read_curve_file(cfg.resolve(cfg.curve_a));
                b = read_curve_file(cfg.resolve(cfg.curve_b));
                opt.separation_floor = cfg.lambda.eps_sep >= 0 ? cfg.lambda.eps_sep : 1e-6 * curve_box_diagonal(a, b);
            } else {
                a = closed_flow_arc(xf, *cfg.seed_x, cfg.horizon.T, cfg.lambda.max_seglen, cfg.step);
                b = closed_flow_arc(yf, *cfg.seed_y, cfg.horizon.S, cfg.lambda.max_seglen, cfg.step);
                opt.separation_floor = cfg.lambda.eps_sep >= 0 ? cfg.lambda.eps_sep : default_eps_sep(xf, yf);
            }
            const LinkingResult r = link(a, b, opt);
            write_json(dir / cfg.outputs.link, to_json(r));
            std::ostringstream s;
            s << "link: gauss " << r.gauss_value << ", oracle "
              << (r.oracle_value ? std::to_string(*r.oracle_value) : std::string("none"))
              << (r.discarded ? " (discarded)" : "");
            say(s.str());
            return exit_ok;
        }
        case Command::helicity: {
            const HopfEstimate hk = hopf_kernel(xf, yf, cfg.grid, workers);
            nlohmann::json j{{"hopf_kernel", number_or_null(hk.value)},
                             {"hopf_kernel_coarse", number_or_null(hk.coarse)},
                             {"hopf_kernel_error", number_or_null(hk.error_estimate)},
                             {"nodes_x", hk.nodes_x},
                             {"nodes_y", hk.nodes_y},
                             {"excluded_pairs", hk.excluded_pairs},
                             {"hopf_potential", nullptr},
                             {"thin_tube_prediction", nullptr}};
            if (cfg.compute_potential)
                j["hopf_potential"] = number_or_null(hopf_potential(xf, yf, cfg.potential_grid, workers));
            if (const auto t = thin_tube_prediction(xf, yf))
                j["thin_tube_prediction"] = number_or_null(*t);
            write_json(dir / cfg.outputs.helicity, j);
            std::ostringstream s;
            s << "helicity: kernel " << hk.value << " (+- " << hk.error_estimate << ")";
            if (cfg.compute_potential)
                s << ", potential " << j["hopf_potential"];
            say(s.str());
            return exit_ok;
        }
        case Command::lambda: {
            AverageOptions ao;
            ao.mode = cfg.mode;
            ao.sampling = cfg.sampling;
            ao.speed_fraction = cfg.speed_fraction;
            ao.lambda = lo;
            ao.workers = workers;
            const AverageResult r = average_linking(xf, yf, cfg.horizon, cfg.samples, cfg.seed, cfg.step, ao);
            const auto csv = dir / cfg.outputs.lambda_samples;
            auto os = open_output(csv);
            write_samples_csv(os, r, cfg.mode);
            finish(os, csv);
            write_json(dir / cfg.outputs.lambda_summary,
                       {{"value", number_or_null(r.value)},
                        {"standard_error", number_or_null(r.standard_error)},
                        {"n_samples", r.n_samples},
                        {"n_discarded", r.n_discarded},
                        {"discard_warning", r.discard_warning},
                        {"T", r.horizon.T},
                        {"S", r.horizon.S},
                        {"mode", to_string(cfg.mode)},
                        {"sampling", to_string(cfg.sampling)}});
            if (r.discard_warning)
                err << "warning: " << r.n_discarded << " of " << r.samples.size() << " samples discarded\n";
            std::ostringstream s;
            s << "lambda: " << r.value << " +- " << r.standard_error << " (" << r.n_samples << " samples)";
            say(s.str());
            return exit_ok;
        }
        case Command::converge: {
            std::vector<std::pair<Vec3, Vec3>> pairs;
            if (!xf.empty() && !yf.empty()) {
                const SeedSampler sx(xf, cfg.sampling, cfg.speed_fraction), sy(yf, cfg.sampling, cfg.speed_fraction);
                for (long i = 0; i < cfg.pairs; ++i) {
                    auto rng = sample_stream(cfg.seed, static_cast<std::uint64_t>(i));
                    const Vec3 p = sx.draw(rng).first;
                    pairs.emplace_back(p, sy.draw(rng).first);
                }
            }
            ConvergenceOptions co;
            co.mode = cfg.mode;
            co.lambda = lo;
            co.short_path_terms = cfg.short_path_terms;
            co.terms.max_seglen = cfg.lambda.max_seglen;
            co.terms.singular_floor = cfg.lambda.singular_floor;
            co.terms.workers = workers;
            co.workers = workers;
            const auto rows = convergence_series(xf, yf, pairs, cfg.schedule, cfg.step, co);
            const auto csv = dir / cfg.outputs.convergence;
            auto os = open_output(csv);
            write_convergence_csv(os, rows);
            finish(os, csv);
            say("converge: " + std::to_string(rows.size()) + " rows written to " + csv.string());
            return exit_ok;
        }
        case Command::verify: {
            VerifyConfig vc;
            vc.horizon = cfg.horizon;
            vc.n_samples = cfg.samples;
            vc.seed = cfg.seed;
            vc.average.mode = cfg.mode;
            vc.average.sampling = cfg.sampling;
            vc.average.speed_fraction = cfg.speed_fraction;
            vc.average.lambda = lo;
            vc.kernel_grid = cfg.grid;
            vc.potential_grid = cfg.potential_grid;
            vc.compute_potential = cfg.compute_potential;
            vc.decay_pairs = cfg.decay_pairs;
            vc.decay_schedule = cfg.schedule;
            vc.relative_tolerance = cfg.relative_tolerance;
            vc.sigma_factor = cfg.sigma_factor;
            vc.ctrl = cfg.step;
            vc.workers = workers;
            const ArnoldReport r = verify_arnold(xf, yf, vc);
            write_json(dir / cfg.outputs.report, to_json(r));
            for (const auto& [section, message] : r.errors)
                err << "error in " << section << ": " << message << '\n';
            std::ostringstream s;
            s << "verify: Lambda " << r.lambda_avg << " +- " << r.lambda_stderr << ", H " << r.hopf_kernel
              << ", |diff| " << r.difference << " vs allowed " << r.allowed << " -> " << (r.pass ? "pass" : "fail");
            say(s.str());
            if (!r.errors.empty())
                return exit_numerical;
            return r.pass ? exit_ok : exit_acceptance;
        }
        case Command::emit: {
            const auto emit_one = [&](const FieldSpec& f, const Vec3& seed, double T, const std::string& traj_name,
                                      const std::string& curve_name) {
                const Trajectory tr = resample(integrate(f, seed, T, cfg.step), cfg.lambda.max_seglen);
                const auto tp = dir / traj_name;
                auto ts = open_output(tp);
                write_csv(ts, tr);
                finish(ts, tp);
                const ClosedCurve c = close_curve(tr, cfg.lambda.max_seglen);
                const auto cp = dir / curve_name;
                auto cs = open_output(cp);
                write_csv(cs, c);
                finish(cs, cp);
                say("emit: " + tp.string() + " (" + std::to_string(tr.samples().size()) + " samples), " +
                    cp.string() + " (" + std::to_string(c.vertices().size()) + " vertices)");
            };
            if (cfg.seed_x)
                emit_one(xf, *cfg.seed_x, cfg.horizon.T, cfg.outputs.trajectory_x, cfg.outputs.curve_x);
            if (cfg.seed_y)
                emit_one(yf, *cfg.seed_y, cfg.horizon.S, cfg.outputs.trajectory_y, cfg.outputs.curve_y);
            return exit_ok;
        }
        case Command::accept: {
            acceptance::Settings st;
            st.fields = shipped_fields(cfg.base_dir.empty() ? std::filesystem::path(".") : cfg.base_dir);
            st.ctrl = cfg.step;
            st.workers = workers;
            std::vector<int> ids = cfg.criteria;
            if (ids.empty())
                ids = {1, 2, 3, 4, 5, 6, 7, 8};
            nlohmann::json results = nlohmann::json::array();
            bool all = true;
            for (int id : ids) {
                const auto r = acceptance::run(id, st);
                say(acceptance::line(r));
                results.push_back({{"criterion", r.id}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
                all = all && r.pass;
            }
            write_json(dir / cfg.outputs.acceptance, {{"results", results}, {"pass", all}});
            return all ? exit_ok : exit_acceptance;
        }
        }
        return exit_ok;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return exit_validation;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return exit_numerical;
    }
}

/// Loads `path` and runs it; configuration errors map to exit status 1.
inline int run_file(const std::filesystem::path& path, const RunOptions& ro = {})
{
    RunConfig cfg;
    try {
        if (!std::filesystem::exists(path))
            throw ValidationError("config '" + path.string() + "' does not exist");
        cfg = load_config(path);
    } catch (const ValidationError& e) {
        *ro.err << "validation error: " << e.what() << '\n';
        return exit_validation;
    } catch (const nlohmann::json::exception& e) {
        *ro.err << "validation error: " << path.string() << ": " << e.what() << '\n';
        return exit_validation;
    }
    return run(std::move(cfg), ro);
}

} // namespace hopflab
