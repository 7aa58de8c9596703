// roleattn: mask building, training, evaluation, grid search, ablation and
// mask inspection from the command line. Run `roleattn <command> --help`.

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "roleattn/checkpoint.hpp"
#include "roleattn/corpus.hpp"
#include "roleattn/errors.hpp"
#include "roleattn/harness.hpp"
#include "roleattn/masks.hpp"
#include "roleattn/model.hpp"

namespace fs = std::filesystem;
using namespace roleattn;

namespace {

struct Options {
    std::string config;
    std::vector<std::string> data;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string roles;
    std::string format = "text";
    std::vector<std::string> overrides;
    std::size_t jobs = 1;
    bool timing = false;
    // command specific
    std::string checkpoint;
    std::string split = "test";
    std::string id;
    std::string seeds;
    std::string ablate;
    std::string grid = "single";
    bool no_baseline = false;
    std::string idf;
};

std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
    if (!os) throw std::runtime_error("write to " + p.string() + " failed");
}

void report_issues(const std::vector<ParseIssue>& issues, const std::string& where) {
    for (const ParseIssue& e : issues) {
        warn(where + " line " + std::to_string(e.line) + " (sentence " + e.sentence_id +
             "): " + e.message + "; sentence skipped");
    }
}

std::vector<Role> cli_roles(const std::string& list, const std::vector<Role>& fallback) {
    if (list.empty()) return fallback;
    std::vector<Role> roles = parse_roles(list);
    for (Role r : roles) {
        if (r == Role::Padding) throw ConfigError("--roles accepts rarew, seprat, depsyn, majrel, relpos");
    }
    if (roles.empty()) throw ConfigError("--roles is empty");
    return roles;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc{} || p != item.data() + item.size()) {
            throw ConfigError("bad seed '" + item + "' in --seeds");
        }
        out.push_back(v);
    }
    return out;
}

// Config file first, then --set overrides, then the dedicated flags.
ModelConfig resolve_config(const Options& o) {
    ModelConfig cfg;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw std::runtime_error("cannot open config " + o.config);
        cfg = ModelConfig::parse(in);
    }
    for (const std::string& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) cfg.seed = *o.seed;
    cfg.guided_roles = cli_roles(o.roles, cfg.guided_roles);
    cfg.validate();
    return cfg;
}

bool needs_parse(const std::vector<Role>& roles) {
    for (Role r : roles)
        if (r == Role::DepSyn || r == Role::MajRel) return true;
    return false;
}

void warn_unparsed(std::span<const Sentence> sentences, const std::vector<Role>& roles, const std::string& where) {
    if (!needs_parse(roles)) return;
    std::size_t unparsed = 0;
    for (const Sentence& s : sentences) unparsed += !s.parsed;
    if (unparsed > 0) {
        warn(where + ": " + std::to_string(unparsed) +
             " sentence(s) carry no dependency parse; depsyn/majrel masks fall back to the diagonal");
    }
}

Dataset load(const std::string& dir) {
    std::vector<ParseIssue> issues;
    Dataset ds = load_dataset(dir, &issues);
    report_issues(issues, ds.name);
    return ds;
}

std::string require_out(const Options& o) {
    if (o.out.empty()) throw ConfigError("--out is required");
    return o.out;
}

const std::string& require_one_data(const Options& o) {
    if (o.data.size() != 1) throw ConfigError("expected exactly one --data path");
    return o.data.front();
}

// ---- commands ----

int cmd_masks(const Options& o) {
    const std::string& input = require_one_data(o);
    const fs::path out = require_out(o);
    const std::vector<Role> roles = cli_roles(o.roles, {kGuidedRoles.begin(), kGuidedRoles.end()});
    ParseResult r = read_corpus_file(input);
    report_issues(r.errors, input);
    if (r.sentences.empty()) throw std::runtime_error(input + " holds no usable sentences");
    warn_unparsed(r.sentences, roles, input);

    Vocabulary vocab;
    if (!o.idf.empty()) {
        ParseResult idf = read_corpus_file(o.idf);
        report_issues(idf.errors, o.idf);
        vocab = Vocabulary::build(idf.sentences);
    } else {
        vocab = Vocabulary::build(r.sentences);
    }

    std::ostringstream dump;
    dump << "# sentence_id\trole\tn\tzero entries (row,col; 1-based)\n";
    for (const Sentence& s : r.sentences)
        for (Role role : roles) write_mask_record(dump, s.id, build_role_mask(role, s, vocab));
    write_file(out / "masks.tsv", dump.str());
    std::cout << "wrote " << r.sentences.size() * roles.size() << " mask records to "
              << (out / "masks.tsv").string() << '\n';
    return 0;
}

int cmd_inspect(const Options& o) {
    const std::string& input = require_one_data(o);
    if (o.id.empty()) throw ConfigError("--id is required");
    const std::vector<Role> roles = cli_roles(o.roles, {kGuidedRoles.begin(), kGuidedRoles.end()});
    ParseResult r = read_corpus_file(input);
    report_issues(r.errors, input);
    const Sentence* found = nullptr;
    for (const Sentence& s : r.sentences)
        if (s.id == o.id) found = &s;
    if (!found) throw std::runtime_error("no sentence with id '" + o.id + "' in " + input);
    warn_unparsed(std::span(found, 1), roles, input);
    const Vocabulary vocab = Vocabulary::build(r.sentences);
    for (Role role : roles) {
        const RoleMask m = build_role_mask(role, *found, vocab);
        if (o.format == "csv") write_mask_record(std::cout, found->id, m);
        else std::cout << render_mask_grid(*found, m) << '\n';
    }
    return 0;
}

std::string history_csv(const std::vector<EpochMetrics>& h) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,dev_loss,dev_acc\n";
    for (const EpochMetrics& m : h) {
        os << m.epoch << ',' << num(m.train_loss) << ',' << num(m.train_acc) << ',' << num(m.dev_loss) << ','
           << num(m.dev_acc) << '\n';
    }
    return os.str();
}

int cmd_train(const Options& o) {
    const ModelConfig cfg = resolve_config(o);
    const fs::path out = require_out(o);
    Dataset ds = load(require_one_data(o));
    warn_unparsed(ds.train, cfg.guided_roles, ds.name);

    TrainOptions opts;
    opts.on_epoch = [&](const EpochMetrics& m) {
        if (o.format == "csv") return;
        std::cout << "epoch " << m.epoch << "  train_loss " << num(m.train_loss) << "  train_acc "
                  << num(m.train_acc) << "  dev_loss " << num(m.dev_loss) << "  dev_acc " << num(m.dev_acc)
                  << std::endl;
    };
    const Checkpoint ckpt = train(cfg, ds.train, ds.dev, opts);
    const Metrics test = evaluate(ckpt, ds.test);

    fs::create_directories(out);
    save_checkpoint(out / "model.ckpt", ckpt);
    write_file(out / "history.csv", history_csv(ckpt.history));
    write_file(out / "manifest.txt", run_manifest(ds, ckpt.config));
    std::ostringstream summary;
    summary << "best_epoch,dev_acc,test_acc\n"
            << ckpt.best_epoch << ',' << num(ckpt.history.at(ckpt.best_epoch - 1).dev_acc) << ','
            << num(test.accuracy) << '\n';
    write_file(out / "summary.csv", summary.str());
    if (o.format == "csv") std::cout << history_csv(ckpt.history);
    else std::cout << "best epoch " << ckpt.best_epoch << ", test accuracy " << num(test.accuracy) << "%\n";
    return 0;
}

int cmd_eval(const Options& o) {
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    const fs::path out = require_out(o);
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    Dataset ds = load(require_one_data(o));
    const Vocabulary vocab = Vocabulary::build(ds.train);
    if (vocab.hash() != ckpt.vocab.hash()) {
        throw std::runtime_error("vocabulary mismatch: checkpoint was trained on a different train split "
                                 "(hash " + std::to_string(ckpt.vocab.hash()) + " vs " +
                                 std::to_string(vocab.hash()) + ")");
    }
    const std::vector<Sentence>* data = nullptr;
    if (o.split == "train") data = &ds.train;
    else if (o.split == "dev") data = &ds.dev;
    else data = &ds.test;
    warn_unparsed(*data, ckpt.config.guided_roles, ds.name);
    const Metrics m = evaluate(ckpt, *data);

    std::ostringstream metrics;
    metrics << "split,total,correct,accuracy,loss\n"
            << o.split << ',' << m.total << ',' << m.correct << ',' << num(m.accuracy) << ',' << num(m.loss) << '\n';
    std::ostringstream confusion;
    confusion << "gold,predicted,count\n";
    for (std::size_t g = 0; g < m.confusion.size(); ++g)
        for (std::size_t p = 0; p < m.confusion[g].size(); ++p) {
            const std::string gold = g < ckpt.labels.size() ? ckpt.labels.name(g) : std::to_string(g);
            const std::string pred = p < ckpt.labels.size() ? ckpt.labels.name(p) : std::to_string(p);
            confusion << gold << ',' << pred << ',' << m.confusion[g][p] << '\n';
        }
    write_file(out / ("eval_" + o.split + ".csv"), metrics.str());
    write_file(out / ("confusion_" + o.split + ".csv"), confusion.str());
    if (o.format == "csv") std::cout << metrics.str();
    else std::cout << o.split << " accuracy " << num(m.accuracy) << "% (" << m.correct << "/" << m.total << ")\n";
    return 0;
}

ExperimentSpec experiment(const Options& o) {
    ExperimentSpec spec;
    spec.base = resolve_config(o);
    spec.roles = spec.base.guided_roles;
    spec.jobs = o.jobs;
    spec.seeds = o.seeds.empty() ? std::vector<std::uint64_t>{spec.base.seed} : parse_seeds(o.seeds);
    if (o.grid == "standard") spec.grid = standard_grid();
    if (!o.ablate.empty()) spec.ablate = cli_roles(o.ablate, {});
    spec.include_baseline = !o.no_baseline;
    if (o.data.empty()) throw ConfigError("at least one --data directory is required");
    for (const std::string& d : o.data) {
        spec.datasets.push_back(load(d));
        warn_unparsed(spec.datasets.back().train, spec.roles, spec.datasets.back().name);
    }
    spec.validate();
    // Every run's config must be valid before the first one starts.
    for (const GridPoint& p : spec.points()) {
        ModelConfig c = spec.base;
        c.layers = p.layers;
        c.extra_regular_heads = p.extra_regular_heads;
        c.validate();
    }
    return spec;
}

int finish(const std::vector<RunRecord>& runs) {
    std::size_t failed = 0;
    for (const RunRecord& r : runs) {
        if (!r.failed) continue;
        ++failed;
        std::cerr << "error: run " << r.run_id << " failed: " << r.error << '\n';
    }
    return failed == 0 ? 0 : 1;
}

int cmd_grid(const Options& o) {
    const fs::path out = require_out(o);
    const ExperimentSpec spec = experiment(o);
    const GridResult g = run_grid(spec);
    emit_metrics(out, g.runs, nullptr, o.timing);
    std::ostringstream sel;
    sel << "dataset,layers,extra_regular_heads,mean_dev_acc,mean_test_acc\n";
    for (const GridSelection& s : g.selected) {
        sel << s.dataset << ',' << s.point.layers << ',' << s.point.extra_regular_heads << ','
            << num(s.mean_dev_acc) << ',' << num(s.mean_test_acc) << '\n';
    }
    write_file(out / "selection.csv", sel.str());
    if (o.format == "csv") {
        std::cout << sel.str();
    } else {
        for (const GridSelection& s : g.selected) {
            std::cout << s.dataset << ": L=" << s.point.layers << " extra heads=" << s.point.extra_regular_heads
                      << "  dev " << num(s.mean_dev_acc) << "%  test " << num(s.mean_test_acc) << "%\n";
        }
    }
    return finish(g.runs);
}

int cmd_ablate(const Options& o) {
    const fs::path out = require_out(o);
    const ExperimentSpec spec = experiment(o);
    const AblationReport r = run_ablation(spec);
    emit_metrics(out, r.runs, &r, o.timing);
    if (o.format == "csv") {
        std::cout << role_drop_csv(r.summary);
    } else {
        std::cout << "full model mean test accuracy " << num(r.full_acc) << "%\n";
        if (spec.include_baseline) std::cout << "no guided masks: " << num(r.baseline_acc) << "%\n";
        for (const RoleDrop& d : r.summary) {
            std::cout << "without " << role_name(d.role) << ": mean drop " << num(d.mean_drop) << " (sd "
                      << num(d.std_drop) << ", n=" << d.count << ")\n";
        }
    }
    return finish(r.runs);
}

void shared_flags(CLI::App* c, Options& o, bool with_config) {
    c->add_option("--data", o.data, "Input file (masks, inspect) or dataset directory")->required();
    c->add_option("--roles", o.roles, "Comma-separated roles: rarew,seprat,depsyn,majrel,relpos");
    c->add_option("--format", o.format, "Stdout format")->check(CLI::IsMember({"text", "csv"}));
    if (with_config) {
        c->add_option("--config", o.config, "Config file (key = value lines)")->check(CLI::ExistingFile);
        c->add_option("--set", o.overrides, "Override one config key, KEY=VALUE (repeatable)");
        c->add_option("--seed", o.seed, "Random seed");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Role-guided attention: masks, training and ablation"};
    app.require_subcommand(1);
    app.allow_extras(false);
    Options o;

    auto* masks = app.add_subcommand("masks", "Write sparse role masks for every sentence");
    shared_flags(masks, o, false);
    masks->add_option("--out", o.out, "Output directory")->required();
    masks->add_option("--idf", o.idf, "Corpus file supplying IDF statistics (default: the input)");

    auto* inspect = app.add_subcommand("inspect", "Print the role masks of one sentence");
    shared_flags(inspect, o, false);
    inspect->add_option("--id", o.id, "Sentence id")->required();

    auto* train_cmd = app.add_subcommand("train", "Train on a dataset directory");
    shared_flags(train_cmd, o, true);
    train_cmd->add_option("--out", o.out, "Output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on one split");
    eval_cmd->add_option("--data", o.data, "Dataset directory")->required();
    eval_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--split", o.split, "Split to score")->check(CLI::IsMember({"train", "dev", "test"}));
    eval_cmd->add_option("--out", o.out, "Output directory")->required();
    eval_cmd->add_option("--format", o.format, "Stdout format")->check(CLI::IsMember({"text", "csv"}));

    auto* grid = app.add_subcommand("grid", "Train every grid point and pick the best by dev accuracy");
    auto* ablate = app.add_subcommand("ablate", "Drop one role at a time and measure the accuracy change");
    for (auto* c : {grid, ablate}) {
        shared_flags(c, o, true);
        c->add_option("--out", o.out, "Output directory")->required();
        c->add_option("--seeds", o.seeds, "Comma-separated seeds (default: --seed)");
        c->add_option("--jobs", o.jobs, "Concurrent runs")->check(CLI::PositiveNumber);
        c->add_flag("--timing", o.timing, "Record wall-clock seconds in results.csv");
        c->add_option("--grid", o.grid, "single: the configured point; standard: layers {2,4,6,8} x extra heads {1,3}")
            ->check(CLI::IsMember({"single", "standard"}));
    }
    ablate->add_option("--ablate", o.ablate, "Roles to drop (default: every enabled role)");
    ablate->add_flag("--no-baseline", o.no_baseline, "Skip the run with every guided mask removed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*masks) return cmd_masks(o);
        if (*inspect) return cmd_inspect(o);
        if (*train_cmd) return cmd_train(o);
        if (*eval_cmd) return cmd_eval(o);
        if (*grid) return cmd_grid(o);
        if (*ablate) return cmd_ablate(o);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
