#include "dcpo/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcpo/clipping.hpp"
#include "dcpo/trainer.hpp"

namespace dcpo {

namespace {

using nlohmann::json;

json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return json(text);  // bare strings stay strings
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::filesystem::path default_run_root() {
    if (const char* env = std::getenv("DCPO_RUN_ROOT")) return env;
    return "runs";
}

struct RunArgs {
    std::string config_path;
    std::string method;
    std::string out_root;
    std::vector<std::string> overrides;
    std::int64_t seed = -1;
    int steps = -1;
};

int cmd_run(const RunArgs& args) {
    json doc = json::object();
    if (!args.config_path.empty()) {
        try {
            doc = json::parse(read_file(args.config_path));
        } catch (const json::parse_error& e) {
            throw std::invalid_argument(std::string("config: ") + e.what());
        }
    }
    if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");
    for (const std::string& kv : args.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("--set expects key=value, got: " + kv);
        doc[kv.substr(0, eq)] = parse_override_value(kv.substr(eq + 1));
    }
    // Dedicated flags take precedence over generic --set overrides.
    if (!args.method.empty()) doc["method"] = args.method;
    if (args.seed >= 0) doc["seed"] = args.seed;
    if (args.steps >= 0) doc["steps"] = args.steps;

    TrainConfig cfg;
    try {
        cfg = config_from_json(doc.dump());
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    const std::filesystem::path root =
        args.out_root.empty() ? default_run_root() : std::filesystem::path(args.out_root);
    const std::filesystem::path run_dir = train(cfg, root);
    std::cout << run_dir.string() << "\n";
    return 0;
}

struct BoundsArgs {
    std::string mode = "dynamic";
    double eps = 0.2;
    double eps_low = 0.16;
    double eps_high = 0.2;
    double r_max = 10.0;
    std::string grid = "0.01:1:0.01";
};

std::vector<double> parse_grid(const std::string& text) {
    double start = 0.0, stop = 0.0, step = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0.0)
        throw std::invalid_argument("--grid expects start:stop:step with a positive step");
    std::vector<double> grid;
    for (double q = start; q <= stop + 1e-12; q += step) grid.push_back(std::min(q, stop));
    if (grid.empty()) throw std::invalid_argument("empty probability grid");
    return grid;
}

int cmd_bounds(const BoundsArgs& args, std::ostream& out) {
    ClipConfig cfg;
    if (args.mode == "dynamic") {
        cfg = ClipConfig::dynamic_adaptive(args.eps_low, args.eps_high, args.r_max);
    } else if (args.mode == "fixed") {
        cfg = ClipConfig::fixed_symmetric(args.eps);
    } else if (args.mode == "asymmetric") {
        cfg = ClipConfig::fixed_asymmetric(args.eps_low, args.eps_high);
    } else if (args.mode == "sequence") {
        cfg = ClipConfig::sequence_level(args.eps_low, args.eps_high);
    } else {
        throw std::invalid_argument("--mode must be dynamic, fixed, asymmetric or sequence");
    }
    const std::vector<double> grid = parse_grid(args.grid);
    for (double q : grid) {
        if (!(q > 0.0) || q > 1.0)
            throw std::invalid_argument("grid probabilities must lie in (0, 1]");
    }
    const std::vector<BoundRow> rows = bound_curve(cfg, grid);
    out << "q,lower,upper,mode\n";
    const std::string mode_name = to_string(cfg.mode);
    for (const BoundRow& row : rows) {
        out << format_double(row.q) << ',' << format_double(row.lower) << ','
            << format_double(row.upper) << ',' << mode_name << "\n";
    }
    return 0;
}

struct StepsTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end())
            throw std::runtime_error("steps.csv is missing column: " + name);
        return static_cast<std::size_t>(it - columns.begin());
    }
};

StepsTable load_steps(const std::filesystem::path& run_dir) {
    const std::filesystem::path path = run_dir / "steps.csv";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    StepsTable table;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty steps file: " + path.string());
    std::istringstream header(line);
    std::string field;
    while (std::getline(header, field, ',')) table.columns.push_back(field);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::vector<double> row;
        while (std::getline(fields, field, ',')) row.push_back(std::stod(field));
        if (row.size() != table.columns.size())
            throw std::runtime_error("ragged row in " + path.string());
        table.rows.push_back(std::move(row));
    }
    return table;
}

double column_mean(const StepsTable& t, std::size_t col, std::size_t first, std::size_t last) {
    double acc = 0.0;
    for (std::size_t i = first; i < last; ++i) acc += t.rows[i][col];
    return acc / static_cast<double>(last - first);
}

const std::vector<std::string> kCompareMetrics = {"tcr", "rur", "entropy", "avg1", "avgk"};

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out_path, int window) {
    std::vector<StepsTable> tables;
    std::vector<std::string> names;
    for (const std::string& dir : dirs) {
        tables.push_back(load_steps(dir));
        names.push_back(std::filesystem::path(dir).filename().string());
    }
    std::size_t common = tables.front().rows.size();
    for (const auto& t : tables) common = std::min(common, t.rows.size());
    for (std::size_t i = 0; i < tables.size(); ++i) {
        if (tables[i].rows.size() != common)
            std::cerr << "warning: " << names[i] << " has " << tables[i].rows.size()
                      << " steps; aligning on the common prefix of " << common << "\n";
    }
    if (common == 0) throw std::runtime_error("no overlapping steps to compare");

    std::ostringstream csv;
    csv << "step";
    for (std::size_t i = 0; i < tables.size(); ++i)
        for (const auto& metric : kCompareMetrics) csv << ',' << names[i] << '.' << metric;
    csv << "\n";
    for (std::size_t row = 0; row < common; ++row) {
        csv << static_cast<std::int64_t>(tables.front().rows[row][tables.front().column("step")]);
        for (const auto& t : tables)
            for (const auto& metric : kCompareMetrics)
                csv << ',' << format_double(t.rows[row][t.column(metric)]);
        csv << "\n";
    }
    if (out_path.empty() || out_path == "-") {
        std::cout << csv.str();
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open output file: " + out_path);
        out << csv.str();
    }

    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), common);
    std::cerr << "per-method means over " << common << " steps (window = last " << w << ")\n";
    for (const auto& metric : kCompareMetrics) {
        std::cerr << metric << ":";
        for (std::size_t i = 0; i < tables.size(); ++i) {
            const std::size_t col = tables[i].column(metric);
            std::cerr << "  " << names[i] << " mean=" << column_mean(tables[i], col, 0, common)
                      << " window=" << column_mean(tables[i], col, common - w, common)
                      << " final=" << tables[i].rows[common - 1][col];
        }
        std::cerr << "\n";
    }
    return 0;
}

int cmd_report(const std::string& dir) {
    const StepsTable t = load_steps(dir);
    std::ifstream cfg_in(std::filesystem::path(dir) / "config.json", std::ios::binary);
    if (cfg_in) {
        const json cfg = json::parse(cfg_in);
        std::cout << "method: " << cfg.value("method", std::string("?"))
                  << "  seed: " << cfg.value("seed", 0) << "\n";
    }
    std::cout << "steps: " << t.rows.size() << "\n";
    if (t.rows.empty()) return 0;
    for (const std::string metric :
         {"objective", "tcr", "rur", "entropy", "mean_reward", "avg1", "avgk"}) {
        const std::size_t col = t.column(metric);
        std::cout << metric << ": mean=" << format_double(column_mean(t, col, 0, t.rows.size()))
                  << " final=" << format_double(t.rows.back()[col]) << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"policy-optimization kernels and desk-scale training simulator"};
    app.require_subcommand(1);

    RunArgs run_args;
    CLI::App* run = app.add_subcommand("run", "train a policy and write a run directory");
    run->add_option("--config", run_args.config_path, "JSON config file");
    run->add_option("--method", run_args.method, "grpo | dapo | gspo | dcpo");
    run->add_option("--seed", run_args.seed, "run seed");
    run->add_option("--steps", run_args.steps, "number of training steps");
    run->add_option("--out", run_args.out_root, "run output root (default $DCPO_RUN_ROOT or ./runs)");
    run->add_option("--set", run_args.overrides, "config override key=value")->take_all();

    BoundsArgs bounds_args;
    CLI::App* bounds = app.add_subcommand("bounds", "emit a clipping-bound curve as CSV");
    bounds->add_option("--mode", bounds_args.mode, "dynamic | fixed | asymmetric | sequence");
    bounds->add_option("--eps", bounds_args.eps, "fixed symmetric threshold");
    bounds->add_option("--eps-low", bounds_args.eps_low, "lower threshold");
    bounds->add_option("--eps-high", bounds_args.eps_high, "upper threshold");
    bounds->add_option("--rmax", bounds_args.r_max, "ratio ceiling");
    bounds->add_option("--grid", bounds_args.grid, "probability grid start:stop:step");

    std::vector<std::string> compare_dirs;
    std::string compare_out;
    int compare_window = 50;
    CLI::App* compare = app.add_subcommand("compare", "align metrics across run directories");
    compare->add_option("dirs", compare_dirs, "run directories")->expected(2, -1);
    compare->add_option("--out", compare_out, "CSV output path (default stdout)");
    compare->add_option("--window", compare_window, "trailing window for summary means");

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "summarize one run directory");
    report->add_option("dir", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(run_args);
        if (bounds->parsed()) return cmd_bounds(bounds_args, std::cout);
        if (compare->parsed()) return cmd_compare(compare_dirs, compare_out, compare_window);
        if (report->parsed()) return cmd_report(report_dir);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dcpo
