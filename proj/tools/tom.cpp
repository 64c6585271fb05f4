// tom — command-line front end for the theory-of-machine pipeline.
//
// Subcommands: gen, train, eval, embed, pca, plot, gradcheck, repro.
// Exit codes: 0 success, 1 runtime/data error (stderr line prefixed
// "error:"), 2 usage error (with usage text).

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "tom/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// Flat key-value run configuration with dotted section prefixes:
//   fleet.<class> = <count>        (suv, hatch, sport, gt, track, lti, stateless)
//   fleet.stateless_linear = 0|1
//   data.ticks / data.alpha / data.sigma / data.train / data.test
//   train.epochs / train.seq_len / train.stride / train.embed_dim
//   train.lr / train.batch_size / train.zero_embeddings
//   analysis.samples_per_machine / analysis.tag
//   seed / out
// '#' starts a comment; unknown keys are rejected.
struct RunConfig {
    std::map<tom::MachineClass, int> counts;
    int ticks = 4000;
    double alpha = 0.1;
    double sigma = 0.05;
    int train_count = -1;
    int test_count = 0;
    bool stateless_linear = false;
    tom::TrainConfig train;
    int samples_per_machine = 8;
    std::string tag = "class";
    uint64_t seed = 0;
    std::string out;
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

RunConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw tom::DataError("cannot open config " + path.string());
    RunConfig cfg;
    const std::map<std::string, tom::MachineClass> classes = {
        {"suv", tom::MachineClass::SUV},     {"hatch", tom::MachineClass::HATCH},
        {"sport", tom::MachineClass::SPORT}, {"gt", tom::MachineClass::GT},
        {"track", tom::MachineClass::TRACK}, {"lti", tom::MachineClass::LTI},
        {"stateless", tom::MachineClass::STATELESS}};
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw tom::DataError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key.rfind("fleet.", 0) == 0) {
                const std::string sub = key.substr(6);
                if (sub == "stateless_linear") {
                    cfg.stateless_linear = std::stoi(value) != 0;
                } else if (auto it = classes.find(sub); it != classes.end()) {
                    cfg.counts[it->second] = std::stoi(value);
                } else {
                    throw tom::DataError("config: unknown key '" + key + "'");
                }
            } else if (key == "data.ticks") {
                cfg.ticks = std::stoi(value);
            } else if (key == "data.alpha") {
                cfg.alpha = std::stod(value);
            } else if (key == "data.sigma") {
                cfg.sigma = std::stod(value);
            } else if (key == "data.train") {
                cfg.train_count = std::stoi(value);
            } else if (key == "data.test") {
                cfg.test_count = std::stoi(value);
            } else if (key == "train.epochs") {
                cfg.train.epochs = std::stoi(value);
            } else if (key == "train.seq_len") {
                cfg.train.seq_len = std::stoi(value);
            } else if (key == "train.stride") {
                cfg.train.stride = std::stoi(value);
            } else if (key == "train.embed_dim") {
                cfg.train.embed_dim = std::stoi(value);
            } else if (key == "train.lr") {
                cfg.train.learning_rate = std::stod(value);
            } else if (key == "train.batch_size") {
                cfg.train.batch_size = std::stoi(value);
            } else if (key == "train.zero_embeddings") {
                cfg.train.zero_embeddings = std::stoi(value) != 0;
            } else if (key == "analysis.samples_per_machine") {
                cfg.samples_per_machine = std::stoi(value);
            } else if (key == "analysis.tag") {
                cfg.tag = value;
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "out") {
                cfg.out = value;
            } else {
                throw tom::DataError("config: unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw tom::DataError("config line " + std::to_string(lineno) + ": bad value for '" +
                                 key + "'");
        }
    }
    return cfg;
}

struct CommonOpts {
    std::string config, out, data, model, split = "test", tag;
    uint64_t seed = 0;
    int epochs = -1, seq_len = -1, stride = -1, embed_dim = -1, batch_size = -1;
    int samples_per_machine = -1, threads = 1;
    double lr = -1.0;
    bool zero_embeddings = false;
};

// flag > config file > built-in default
tom::TrainConfig resolve_train(const RunConfig& cfg, const CommonOpts& o, const CLI::App* cmd) {
    tom::TrainConfig tc = cfg.train;
    if (cmd->count("--epochs")) tc.epochs = o.epochs;
    if (cmd->count("--seq-len")) tc.seq_len = o.seq_len;
    if (cmd->count("--stride")) tc.stride = o.stride;
    if (cmd->count("--embed-dim")) tc.embed_dim = o.embed_dim;
    if (cmd->count("--lr")) tc.learning_rate = o.lr;
    if (cmd->count("--batch-size")) tc.batch_size = o.batch_size;
    if (o.zero_embeddings) tc.zero_embeddings = true;
    return tc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"theory-of-machine pipeline"};
    app.require_subcommand(1);
    CommonOpts o;

    auto add_common = [&](CLI::App* cmd, bool with_train_flags) {
        cmd->add_option("--config", o.config, "run configuration file");
        cmd->add_option("--out", o.out, "output path");
        cmd->add_option("--data", o.data, "input dataset/artifact path");
        cmd->add_option("--model", o.model, "model checkpoint path");
        cmd->add_option("--seed", o.seed, "master seed");
        cmd->add_option("--threads", o.threads, "parallelism cap (outputs unaffected)");
        if (with_train_flags) {
            cmd->add_option("--epochs", o.epochs, "training epochs");
            cmd->add_option("--seq-len", o.seq_len, "window length n");
            cmd->add_option("--stride", o.stride, "window stride");
            cmd->add_option("--embed-dim", o.embed_dim, "embedding dimension e");
            cmd->add_option("--lr", o.lr, "Adam learning rate");
            cmd->add_option("--batch-size", o.batch_size, "gradient accumulation size");
            cmd->add_flag("--zero-embeddings", o.zero_embeddings, "ablation baseline");
        }
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a fleet dataset");
    add_common(gen, false);
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_common(eval, true);
    eval->add_option("--split", o.split, "train|test");
    CLI::App* embed = app.add_subcommand("embed", "compute embedding records");
    add_common(embed, true);
    embed->add_option("--samples-per-machine", o.samples_per_machine, "windows per machine");
    CLI::App* pca = app.add_subcommand("pca", "project embedding records to 3 components");
    add_common(pca, false);
    CLI::App* plot = app.add_subcommand("plot", "render projections as SVG + table");
    add_common(plot, false);
    plot->add_option("--tag", o.tag, "coloring tag: class|mass|year");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    add_common(gradcheck, true);
    CLI::App* repro = app.add_subcommand("repro", "run the full acceptance pipeline");
    add_common(repro, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n' << app.help();
        return 2;
    }

    try {
        RunConfig cfg;
        if (!o.config.empty()) cfg = load_config(o.config);
        const CLI::App* cmd = app.get_subcommands().front();
        const uint64_t seed = cmd->count("--seed") ? o.seed : cfg.seed;
        const std::string out = !o.out.empty() ? o.out : cfg.out;

        if (gen->parsed()) {
            if (out.empty()) throw tom::DataError("gen: --out (or config 'out') is required");
            if (cfg.counts.empty()) throw tom::DataError("gen: config must define a fleet");
            tom::GenConfig gc;
            gc.counts = cfg.counts;
            gc.ticks = cfg.ticks;
            gc.alpha = cfg.alpha;
            gc.sigma = cfg.sigma;
            gc.train_count = cfg.train_count;
            gc.test_count = cfg.test_count;
            gc.fleet_seed = seed;
            gc.threads = o.threads;
            gc.stateless_linear = cfg.stateless_linear;
            const tom::Dataset ds = tom::build_dataset(gc);
            tom::write_dataset(ds, out);
            std::cout << "wrote dataset: " << ds.fleet.size() << " machines x " << cfg.ticks
                      << " ticks to " << out << '\n';
        } else if (train->parsed()) {
            if (o.data.empty()) throw tom::DataError("train: --data is required");
            if (out.empty()) throw tom::DataError("train: --out (or config 'out') is required");
            const tom::Dataset ds = tom::read_dataset(o.data);
            tom::TrainConfig tc = resolve_train(cfg, o, train);
            tc.seed = seed;
            auto res = tom::train(tc, ds);
            fs::create_directories(out);
            tom::save_model(res.model, fs::path(out) / "model.json");
            auto metrics = tom::evaluate(res.model, ds, ds.split.train_ids, tc.seq_len, tc.stride,
                                         tc.zero_embeddings);
            metrics.epoch_train_mse = res.metrics.epoch_train_mse;
            tom::write_metrics(metrics, fs::path(out) / "metrics.json");
            std::cout << "trained " << tc.epochs << " epochs, final train MSE "
                      << tom::fmt_double(metrics.aggregate) << " (" << out << ")\n";
        } else if (eval->parsed()) {
            if (o.data.empty() || o.model.empty() || out.empty())
                throw tom::DataError("eval: --data, --model and --out are required");
            if (o.split != "train" && o.split != "test")
                throw tom::DataError("eval: --split must be 'train' or 'test'");
            const tom::Dataset ds = tom::read_dataset(o.data);
            tom::Model model = tom::load_model(o.model);
            const tom::TrainConfig tc = resolve_train(cfg, o, eval);
            const auto& ids = o.split == "train" ? ds.split.train_ids : ds.split.test_ids;
            const auto metrics =
                tom::evaluate(model, ds, ids, tc.seq_len, tc.stride, tc.zero_embeddings);
            tom::write_metrics(metrics, out);
            std::cout << o.split << " aggregate MSE " << tom::fmt_double(metrics.aggregate)
                      << " (" << out << ")\n";
        } else if (embed->parsed()) {
            if (o.data.empty() || o.model.empty() || out.empty())
                throw tom::DataError("embed: --data, --model and --out are required");
            const tom::Dataset ds = tom::read_dataset(o.data);
            const tom::Model model = tom::load_model(o.model);
            const tom::TrainConfig tc = resolve_train(cfg, o, embed);
            const int samples = embed->count("--samples-per-machine") ? o.samples_per_machine
                                                                      : cfg.samples_per_machine;
            const auto recs = tom::embed_fleet(model, ds, tc.seq_len, samples, seed);
            tom::write_embeddings(recs, out);
            std::cout << "wrote " << recs.size() << " embedding records to " << out << '\n';
        } else if (pca->parsed()) {
            if (o.data.empty() || out.empty())
                throw tom::DataError("pca: --data (embeddings csv) and --out are required");
            const auto recs = tom::read_embeddings(o.data);
            const auto res = tom::pca3(recs);
            tom::write_pca(res, out);
            std::cout << "explained fractions " << tom::fmt_double(res.explained[0]) << ' '
                      << tom::fmt_double(res.explained[1]) << ' '
                      << tom::fmt_double(res.explained[2]) << " (" << out << ")\n";
        } else if (plot->parsed()) {
            if (o.data.empty() || out.empty())
                throw tom::DataError(
                    "plot: --data (dir with embeddings.csv + pca.json) and --out are required");
            const std::string tag = plot->count("--tag") ? o.tag : cfg.tag;
            const auto recs = tom::read_embeddings(fs::path(o.data) / "embeddings.csv");
            const auto res = tom::read_pca(fs::path(o.data) / "pca.json");
            fs::create_directories(out);
            tom::emit_scatter(res.projections, recs, tag,
                              fs::path(out) / ("scatter_" + tag + ".svg"),
                              fs::path(out) / ("table_" + tag + ".csv"));
            std::cout << "wrote scatter_" << tag << ".svg and table_" << tag << ".csv to " << out
                      << '\n';
        } else if (gradcheck->parsed()) {
            const uint64_t gseed = gradcheck->count("--seed") ? o.seed : 7;
            const int e = gradcheck->count("--embed-dim") ? o.embed_dim : 4;
            const int n = gradcheck->count("--seq-len") ? o.seq_len : 8;
            const auto res = tom::gradcheck_window_loss(gseed, e, n);
            std::cout << "max_rel_err " << tom::fmt_double(res.max_rel_err) << " (coordinate "
                      << res.worst_coord << ")\n";
            return res.max_rel_err < 1e-5 ? 0 : 1;
        } else if (repro->parsed()) {
            const std::string rout = out.empty() ? "repro_out" : out;
            const uint64_t rseed = cmd->count("--seed") || cfg.seed ? seed : 1;
            const auto results = tom::run_acceptance(rout, rseed, std::cout, o.threads);
            int failures = 0;
            for (const auto& r : results)
                if (!r.pass) ++failures;
            if (failures) {
                std::cerr << "error: " << failures << " acceptance criterion(s) failed\n";
                return 1;
            }
            std::cout << "all acceptance criteria passed\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
