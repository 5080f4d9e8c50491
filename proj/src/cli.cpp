#include "tdro/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tdro/data.hpp"
#include "tdro/error.hpp"
#include "tdro/eval.hpp"
#include "tdro/grouping.hpp"
#include "tdro/model.hpp"
#include "tdro/optimizer.hpp"
#include "tdro/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tdro::cli {

namespace {

constexpr const char* kOutRootEnv = "TDRO_OUTPUT_ROOT";

std::string to_text(const std::string& v) { return v; }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}
template <typename T>
    requires std::is_integral_v<T>
std::string to_text(T v) {
    return std::to_string(v);
}
std::string to_text(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
}

// Registers options and remembers how to echo their resolved values into the manifest.
class Options {
public:
    explicit Options(CLI::App* app) : app_(app) {}

    template <typename T>
    CLI::Option* add(const std::string& name, T& var, const std::string& desc) {
        auto* opt = app_->add_option("--" + name, var, desc)->capture_default_str();
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        echo_.emplace_back(name, [&var] { return to_text(var); });
        return opt;
    }

    CLI::Option* flag(const std::string& name, bool& var, const std::string& desc) {
        auto* opt = app_->add_flag("--" + name, var, desc);
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        echo_.emplace_back(name, [&var] { return to_text(var); });
        return opt;
    }

    json resolved() const {
        json j = json::object();
        for (const auto& [name, get] : echo_) j[name] = get();
        return j;
    }

    CLI::App* app() const { return app_; }

private:
    CLI::App* app_;
    std::vector<std::pair<std::string, std::function<std::string()>>> echo_;
};

fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_relative()) {
        if (const char* root = std::getenv(kOutRootEnv); root && *root) return fs::path(root) / p;
    }
    return p;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void write_manifest(const fs::path& dir, const std::string& command, const Options& opts, json extra = {}) {
    json j;
    j["command"] = command;
    j["version"] = 1;
    j["args"] = opts.resolved();
    j["args"].erase("config");
    if (extra.is_object())
        for (auto& [k, v] : extra.items()) j[k] = v;
    write_file(dir / "manifest.json", j.dump(2) + "\n");
}

// Config file contents as `--key=value` tokens. JSON (a manifest's "args", or a
// flat object) or `key = value` lines.
std::vector<std::string> config_tokens(const fs::path& path) {
    const std::string text = read_file(path);
    std::vector<std::string> tokens;
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError("bad config file " + path.string() + ": " + e.what());
        }
        const json& args = j.contains("args") ? j["args"] : j;
        for (auto& [k, v] : args.items()) {
            if (k == "config") continue;
            tokens.push_back("--" + k + "=" + (v.is_string() ? v.get<std::string>() : v.dump()));
        }
        return tokens;
    }
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto b = line.find_first_not_of(" \t");
        if (b == std::string::npos || line[b] == '#' || line[b] == ';' || line[b] == '[') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            auto l = s.find_first_not_of(" \t\"");
            auto r = s.find_last_not_of(" \t\"");
            return l == std::string::npos ? std::string{} : s.substr(l, r - l + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        if (key == "config") continue;
        tokens.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
    }
    return tokens;
}

ScoreMode parse_warm_mode(const std::string& s) {
    if (s == "hybrid") return ScoreMode::hybrid;
    if (s == "cf" || s == "cf_only") return ScoreMode::cf_only;
    if (s == "feature" || s == "feature_only") return ScoreMode::feature_only;
    throw ConfigError("unknown warm mode '" + s + "' (expected hybrid, cf or feature)");
}

Dataset load_dir(const fs::path& dir) { return load_dataset(dir / "interactions.tsv", dir / "features.tsv"); }

SplitDataset make_split(const Dataset& ds, const std::string& kind, std::uint64_t seed) {
    if (kind == "chrono") return chronological_split(ds);
    if (kind == "random") return random_split(ds, seed);
    throw ConfigError("unknown split '" + kind + "' (expected chrono or random)");
}

// ---------------------------------------------------------------- generate

struct GenerateCmd {
    synth::SynthConfig cfg;
    std::string out;
    std::string config;

    void add(Options& o) {
        o.add("out", out, "output directory")->required();
        o.add("config", config, "config file (key = value or JSON)");
        o.add("seed", cfg.seed, "random seed");
        o.add("users", cfg.num_users, "number of users");
        o.add("items", cfg.num_items, "number of items");
        o.add("concepts", cfg.num_concepts, "number of item concepts");
        o.add("feature-dim", cfg.feature_dim, "item feature dimension");
        o.add("periods", cfg.periods, "generation periods");
        o.add("interactions-per-period", cfg.interactions_per_period, "interactions per period");
        o.add("drift", cfg.drift, "drift strength in [0,1]");
        o.add("noise", cfg.feature_noise, "feature noise std-dev");
        o.add("temperature", cfg.temperature, "preference softmax temperature");
        o.add("dominant-share", cfg.dominant_share, "initial share of the dominant concept");
    }

    int run(const Options& o, std::ostream& out_stream) {
        cfg.validate();
        const auto dir = resolve_out(out);
        auto result = synth::generate(cfg);
        synth::write(dir, cfg, result);
        write_manifest(dir, "generate", o);
        out_stream << "wrote " << result.dataset.interactions.size() << " interactions, "
                   << result.dataset.num_items << " items to " << dir.string() << "\n";
        return kExitOk;
    }
};

// ---------------------------------------------------------------- cluster

struct ClusterCmd {
    std::string data, out, config, split = "chrono";
    int k = 3;
    std::uint64_t seed = 0;

    void add(Options& o) {
        o.add("data", data, "dataset directory")->required();
        o.add("out", out, "output file (item_id<TAB>group); stdout when omitted");
        o.add("config", config, "config file");
        o.add("K", k, "number of item groups");
        o.add("seed", seed, "random seed");
        o.add("split", split, "chrono or random");
    }

    int run(const Options&, std::ostream& out_stream) {
        auto ds = load_dir(data);
        auto sp = make_split(ds, split, seed);
        grouping::IndexOptions io;
        io.num_groups = k;
        io.num_periods = 1;
        io.seed = seed;
        auto index = grouping::build_index(ds, sp, io);
        std::ostringstream os;
        for (auto item : sp.warm_items) os << item << '\t' << index.item_group[static_cast<std::size_t>(item)] << '\n';
        if (out.empty()) {
            out_stream << os.str();
        } else {
            auto path = resolve_out(out);
            if (path.has_parent_path()) ensure_dir(path.parent_path());
            write_file(path, os.str());
        }
        return kExitOk;
    }
};

// ---------------------------------------------------------------- train

struct TrainCmd {
    std::string data, out, config, resume;
    std::string mode = "tdro", split = "chrono", warm_mode = "hybrid", preset = "full", cell_weighting = "share";
    opt::TdroConfig tc;
    std::size_t dim = 128, hidden = 256;
    double alpha = 0.5, gamma = 0.1, init_scale = 0.01;
    int epochs = 20, patience = 0, k_metric = 20, threads = 1;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    bool no_worst_case = false;
    bool normalize_beta = false;
    CLI::Option* dim_opt = nullptr;
    CLI::Option* hidden_opt = nullptr;

    void add(Options& o) {
        o.add("data", data, "dataset directory")->required();
        o.add("out", out, "run directory")->required();
        o.add("config", config, "config file (key = value or a manifest.json)");
        o.add("mode", mode, "erm | dro | sdro | tdro");
        o.add("K", tc.num_groups, "number of item groups");
        o.add("E", tc.num_periods, "number of time periods");
        o.add("lambda", tc.lambda, "shifting factor strength");
        o.add("p", tc.p, "period importance steepness");
        o.add("mu", tc.mu, "streaming step size");
        o.add("eta-w", tc.eta_w, "group weight step size");
        o.add("eta", tc.eta, "learning rate");
        o.add("ema-decay", tc.ema_decay, "carry-over decay of period gradients");
        o.flag("normalize-gradients", tc.normalize_gradients, "cosine inner products in the shifting factor");
        o.flag("no-worst-case", no_worst_case, "drop the worst-case factor from group scores");
        o.flag("extractor-only-trend", tc.extractor_only_trend, "inner products over extractor parameters only");
        o.flag("normalize-beta", normalize_beta, "divide period weights by their sum");
        o.add("cell-weighting", cell_weighting, "period-cell loss normalization: mean | share");
        o.add("preset", preset, "full (d=128, h=256) or desk (d=16, h=32)");
        dim_opt = o.add("dim", dim, "representation size d");
        hidden_opt = o.add("hidden", hidden, "extractor hidden width h");
        o.add("alpha", alpha, "hybrid mixing coefficient");
        o.add("gamma", gamma, "alignment loss weight");
        o.add("init-scale", init_scale, "uniform init half-width");
        o.add("epochs", epochs, "training epochs");
        o.add("batch-size", batch_size, "mini-batch size");
        o.add("patience", patience, "early stopping patience in epochs, 0 = off");
        o.add("seed", seed, "random seed");
        o.add("split", split, "chrono or random");
        o.add("k-metric", k_metric, "cutoff of the validation recall");
        o.add("warm-mode", warm_mode, "warm item scoring at inference: hybrid | cf | feature");
        o.add("threads", threads, "evaluation worker threads");
        o.add("resume", resume, "continue from a previous run directory");
    }

    int run(const Options& o, std::ostream& out_stream) {
        if (preset == "desk") {
            if (dim_opt->count() == 0) dim = 16;
            if (hidden_opt->count() == 0) hidden = 32;
        } else if (preset != "full") {
            throw ConfigError("unknown preset '" + preset + "' (expected full or desk)");
        }
        tc.mode = opt::parse_mode(mode);
        tc.worst_case_factor = !no_worst_case;
        tc.cell_weighting = opt::parse_cell_weighting(cell_weighting);
        tc.validate();
        if (epochs < 0) throw ConfigError("epochs must be non-negative");
        const auto wm = parse_warm_mode(warm_mode);

        auto ds = load_dir(data);
        auto sp = make_split(ds, split, seed);
        grouping::IndexOptions io;
        io.num_groups = tc.num_groups;
        io.num_periods = tc.num_periods;
        io.p = tc.p;
        io.normalize_beta = normalize_beta;
        io.seed = seed;
        auto index = grouping::build_index(ds, sp, io);

        ModelShape shape{dim, hidden, ds.features.dim(), ds.num_users, ds.num_items};
        Model model(shape, sp.warm_items, alpha, gamma);
        model.init_uniform(seed, init_scale);

        opt::TrainOptions to;
        to.epochs = epochs;
        to.batch_size = batch_size;
        to.seed = seed;
        to.patience = patience;
        to.k_metric = k_metric;
        to.warm_mode = wm;
        to.threads = threads;

        std::optional<opt::TdroState> state;
        std::vector<std::string> previous_log;
        if (!resume.empty()) {
            fs::path rdir = resolve_out(resume);
            model = load_model(rdir / "last_model.bin");
            if (!(model.shape() == shape) || model.warm_items() != sp.warm_items)
                throw ConfigError("resume checkpoint does not match the dataset");
            model.set_alpha(alpha);
            model.set_gamma(gamma);
            state = opt::load_state(rdir / "state.bin");
            auto manifest = json::parse(read_file(rdir / "manifest.json"));
            to.start_epoch = manifest.value("epochs_completed", 0);
        }

        auto result = opt::train(ds, sp, index, model, tc, to, state ? &*state : nullptr);

        const auto dir = resolve_out(out);
        ensure_dir(dir);
        save_model(dir / "model.bin", result.best);
        save_model(dir / "last_model.bin", result.last);
        opt::save_state(dir / "state.bin", result.state);
        std::ostringstream log;
        log << opt::log_csv_header(tc.num_groups, k_metric) << "\n";
        for (const auto& row : result.log) log << opt::log_csv_row(row) << "\n";
        write_file(dir / "train_log.csv", log.str());
        const int done = result.log.empty() ? to.start_epoch : result.log.back().epoch + 1;
        write_manifest(dir, "train", o,
                       {{"seed", seed},
                        {"mode", opt::to_string(tc.mode)},
                        {"best_epoch", result.best_epoch},
                        {"best_val_recall", result.best_recall},
                        {"epochs_completed", done}});
        out_stream << "trained " << result.log.size() << " epochs (" << opt::to_string(tc.mode)
                   << "), best epoch " << result.best_epoch << " val recall@" << k_metric << " "
                   << result.best_recall << "\n";
        return kExitOk;
    }
};

// ---------------------------------------------------------------- evaluate

struct EvaluateCmd {
    std::string checkpoint, data, out, config, split, warm_mode = "hybrid";
    std::vector<std::string> settings{"all", "warm", "cold"};
    int k = 20, user_shift_groups = 0, item_pop_groups = 0, threads = 1;
    std::uint64_t seed = 0;
    CLI::Option* split_opt = nullptr;
    CLI::Option* seed_opt = nullptr;

    void add(Options& o) {
        o.add("checkpoint", checkpoint, "model checkpoint")->required();
        o.add("data", data, "dataset directory")->required();
        o.add("out", out, "report directory (defaults to the checkpoint's directory)");
        o.add("config", config, "config file");
        o.add("setting", settings, "all | warm | cold (repeatable)")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->delimiter(',');
        o.add("k", k, "metric cutoff");
        o.add("user-shift-groups", user_shift_groups, "user shift-strength groups, 0 = off");
        o.add("item-pop-groups", item_pop_groups, "item popularity groups, 0 = off");
        o.add("warm-mode", warm_mode, "hybrid | cf | feature");
        o.add("threads", threads, "worker threads");
        split_opt = o.add("split", split, "chrono or random (defaults to the training run's)");
        seed_opt = o.add("seed", seed, "split seed for random splits (defaults to the training run's)");
    }

    int run(const Options&, std::ostream& out_stream) {
        const fs::path ckpt = resolve_out(checkpoint);
        const fs::path run_dir = ckpt.has_parent_path() ? ckpt.parent_path() : fs::path(".");
        // inherit the split of the training run when not given
        if (fs::exists(run_dir / "manifest.json")) {
            auto manifest = json::parse(read_file(run_dir / "manifest.json"), nullptr, false);
            if (manifest.is_object() && manifest.contains("args")) {
                const auto& a = manifest["args"];
                if (split_opt->count() == 0 && a.contains("split")) split = a["split"].get<std::string>();
                if (seed_opt->count() == 0 && a.contains("seed")) seed = std::stoull(a["seed"].get<std::string>());
            }
        }
        if (split.empty()) split = "chrono";

        auto model = load_model(ckpt);
        auto ds = load_dir(data);
        auto sp = make_split(ds, split, seed);
        const auto& sh = model.shape();
        auto mismatch = [](const std::string& what, std::size_t a, std::size_t b) {
            return ConfigError(what + " mismatch: checkpoint has " + std::to_string(a) + ", dataset has " +
                               std::to_string(b));
        };
        if (sh.num_users != ds.num_users) throw mismatch("num_users", sh.num_users, ds.num_users);
        if (sh.num_items != ds.num_items) throw mismatch("num_items", sh.num_items, ds.num_items);
        if (sh.feature_dim != ds.features.dim()) throw mismatch("feature_dim", sh.feature_dim, ds.features.dim());
        if (model.warm_items() != sp.warm_items)
            throw mismatch("num_warm_items", model.num_warm(), sp.warm_items.size());

        eval::ReportOptions ro;
        ro.eval = {k, parse_warm_mode(warm_mode), threads};
        ro.user_shift_groups = user_shift_groups;
        ro.item_pop_groups = item_pop_groups;
        const fs::path dir = out.empty() ? run_dir : resolve_out(out);
        ensure_dir(dir);
        std::vector<eval::Setting> parsed;
        for (const auto& s : settings) parsed.push_back(eval::parse_setting(s));
        for (auto s : parsed) {
            auto report = eval::evaluate(model, ds, sp, s, ro);
            const std::string name = std::string("report_") + eval::to_string(s);
            write_file(dir / (name + ".json"), eval::to_json(report));
            write_file(dir / (name + ".csv"), eval::to_csv(report));
            out_stream << eval::to_string(s) << ": recall@" << k << " " << report.overall.recall << " ndcg@" << k
                       << " " << report.overall.ndcg << " (" << report.overall.users << " users)\n";
        }
        return kExitOk;
    }
};

// ---------------------------------------------------------------- report

struct ReportCmd {
    std::vector<std::string> runs;
    std::vector<std::string> settings;
    std::string baseline, csv, config;

    void add(Options& o) {
        o.app()->add_option("runs", runs, "run directories with report_*.json")->required();
        o.add("config", config, "config file");
        o.add("setting", settings, "settings to include (default: all found in the first run)")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
            ->delimiter(',');
        o.add("baseline", baseline, "baseline run directory (default: the erm run, if any)");
        o.add("csv", csv, "also write the table as CSV");
    }

    struct Row {
        std::string run, mode, setting;
        eval::Metrics m;
        int k;
    };

    int run(const Options&, std::ostream& out_stream) {
        std::vector<std::pair<std::string, std::string>> ordered;  // (mode, dir)
        for (const auto& r : runs) {
            fs::path dir = resolve_out(r);
            std::string mode = "?";
            if (fs::exists(dir / "manifest.json")) {
                auto manifest = json::parse(read_file(dir / "manifest.json"), nullptr, false);
                if (manifest.is_object()) {
                    if (manifest.contains("mode")) mode = manifest["mode"].get<std::string>();
                    else if (manifest.contains("args") && manifest["args"].contains("mode"))
                        mode = manifest["args"]["mode"].get<std::string>();
                }
            }
            ordered.emplace_back(mode, dir.string());
        }
        std::sort(ordered.begin(), ordered.end());

        std::vector<std::string> use = settings;
        if (use.empty())
            for (const char* s : {"all", "warm", "cold"})
                if (fs::exists(fs::path(ordered.front().second) / (std::string("report_") + s + ".json")))
                    use.push_back(s);
        if (use.empty()) throw ConfigError("missing report: no report_*.json in " + ordered.front().second);

        std::vector<Row> rows;
        for (const auto& [mode, dir] : ordered) {
            for (const auto& s : use) {
                fs::path f = fs::path(dir) / ("report_" + s + ".json");
                if (!fs::exists(f)) throw ConfigError("missing report " + f.string());
                auto rep = eval::report_from_json(read_file(f));
                rows.push_back({dir, mode, s, rep.overall, rep.k});
            }
        }

        std::string base_dir;
        if (!baseline.empty()) {
            base_dir = resolve_out(baseline).string();
            if (std::none_of(ordered.begin(), ordered.end(), [&](const auto& p) { return p.second == base_dir; }))
                throw ConfigError("baseline " + baseline + " is not among the runs");
        } else if (ordered.size() > 1) {
            for (const auto& [mode, dir] : ordered)
                if (mode == "erm") {
                    base_dir = dir;
                    break;
                }
        }
        const bool improvement = ordered.size() > 1 && !base_dir.empty();
        auto base_of = [&](const std::string& setting) -> const Row* {
            for (const auto& r : rows)
                if (r.run == base_dir && r.setting == setting) return &r;
            return nullptr;
        };
        auto rel = [](double x, double b) -> std::string {
            if (b == 0.0) return "n/a";
            std::ostringstream os;
            os << std::showpos << std::fixed << std::setprecision(2) << 100.0 * (x - b) / b << "%";
            return os.str();
        };

        const int k = rows.front().k;
        std::ostringstream table, csv_text;
        std::size_t run_w = 3;
        for (const auto& r : rows) run_w = std::max(run_w, r.run.size());
        table << std::left << std::setw(static_cast<int>(run_w) + 2) << "run" << std::setw(8) << "mode"
              << std::setw(9) << "setting" << std::right << std::setw(12) << ("Recall@" + std::to_string(k))
              << std::setw(12) << ("NDCG@" + std::to_string(k));
        csv_text << "run,mode,setting,recall@" << k << ",ndcg@" << k;
        if (improvement) {
            table << std::setw(12) << "dRecall" << std::setw(12) << "dNDCG";
            csv_text << ",recall_improvement,ndcg_improvement";
        }
        table << "\n";
        csv_text << "\n";
        for (const auto& r : rows) {
            std::ostringstream rec, nd;
            rec << std::fixed << std::setprecision(4) << r.m.recall;
            nd << std::fixed << std::setprecision(4) << r.m.ndcg;
            table << std::left << std::setw(static_cast<int>(run_w) + 2) << r.run << std::setw(8) << r.mode
                  << std::setw(9) << r.setting << std::right << std::setw(12) << rec.str() << std::setw(12)
                  << nd.str();
            csv_text << r.run << "," << r.mode << "," << r.setting << "," << to_text(r.m.recall) << ","
                     << to_text(r.m.ndcg);
            if (improvement) {
                const Row* b = base_of(r.setting);
                std::string dr = b ? rel(r.m.recall, b->m.recall) : "n/a";
                std::string dn = b ? rel(r.m.ndcg, b->m.ndcg) : "n/a";
                table << std::setw(12) << dr << std::setw(12) << dn;
                csv_text << "," << dr << "," << dn;
            }
            table << "\n";
            csv_text << "\n";
        }
        out_stream << table.str();
        if (!csv.empty()) {
            auto path = resolve_out(csv);
            if (path.has_parent_path()) ensure_dir(path.parent_path());
            write_file(path, csv_text.str());
        }
        return kExitOk;
    }
};

// `--config` must be known before CLI11 parses, so its tokens can be placed in
// front of the user's and lose to them.
std::optional<std::string> find_config(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
    }
    return std::nullopt;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Temporal DRO for cold-start recommendation", "tdro"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    auto* gen_app = app.add_subcommand("generate", "write a synthetic shifted dataset");
    auto* clu_app = app.add_subcommand("cluster", "export k-means item groups");
    auto* tr_app = app.add_subcommand("train", "train a model (erm | dro | sdro | tdro)");
    auto* ev_app = app.add_subcommand("evaluate", "full-ranking evaluation of a checkpoint");
    auto* rep_app = app.add_subcommand("report", "compare evaluated runs");

    GenerateCmd gen;
    ClusterCmd clu;
    TrainCmd tr;
    EvaluateCmd ev;
    ReportCmd rep;
    Options gen_o(gen_app), clu_o(clu_app), tr_o(tr_app), ev_o(ev_app), rep_o(rep_app);
    gen.add(gen_o);
    clu.add(clu_o);
    tr.add(tr_o);
    ev.add(ev_o);
    rep.add(rep_o);

    try {
        std::vector<std::string> tokens;
        if (!args.empty()) {
            tokens.push_back(args.front());
            std::vector<std::string> rest(args.begin() + 1, args.end());
            if (auto cfg = find_config(rest)) {
                auto extra = config_tokens(resolve_out(*cfg).string() == *cfg ? fs::path(*cfg) : fs::path(*cfg));
                tokens.insert(tokens.end(), extra.begin(), extra.end());
            }
            tokens.insert(tokens.end(), rest.begin(), rest.end());
        }
        std::reverse(tokens.begin(), tokens.end());  // CLI11 consumes a reversed vector
        try {
            app.parse(tokens);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kExitOk : kExitUsage;
        }
        if (gen_app->parsed()) return gen.run(gen_o, out);
        if (clu_app->parsed()) return clu.run(clu_o, out);
        if (tr_app->parsed()) return tr.run(tr_o, out);
        if (ev_app->parsed()) return ev.run(ev_o, out);
        if (rep_app->parsed()) return rep.run(rep_o, out);
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IntegrityError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
}

}  // namespace tdro::cli
