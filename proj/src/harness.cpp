#include "roleattn/harness.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "roleattn/errors.hpp"

namespace roleattn {

namespace {

std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double parse_num(std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw std::invalid_argument("bad number '" + std::string(s) + "' in CSV");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw std::invalid_argument("bad integer '" + std::string(s) + "' in CSV");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string csv_quote(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string roles_field(const std::vector<Role>& roles) {
    std::string out;
    for (std::size_t i = 0; i < roles.size(); ++i) {
        if (i) out += '+';
        out += role_name(roles[i]);
    }
    return out.empty() ? "none" : out;
}

template <class Task>
void run_parallel(std::size_t count, std::size_t jobs, Task&& task) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < std::min(jobs, count); ++w) {
        workers.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) task(i);
        });
    }
}

std::uint32_t data_fingerprint(const Dataset& ds) {
    std::uint32_t c = 0;
    for (const auto* split : {&ds.train, &ds.dev, &ds.test}) {
        const std::string text = serialize_conllu(*split);
        c = static_cast<std::uint32_t>(
            crc32(c, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
    }
    return c;
}

ModelConfig point_config(const ExperimentSpec& spec, const GridPoint& p, std::uint64_t seed) {
    ModelConfig cfg = spec.base;
    cfg.layers = p.layers;
    cfg.extra_regular_heads = p.extra_regular_heads;
    cfg.guided_roles = spec.roles;
    cfg.seed = seed;
    return cfg;
}

std::string run_id(const std::string& dataset, const GridPoint& p, std::uint64_t seed,
                   const std::string& variant) {
    return dataset + "-L" + std::to_string(p.layers) + "-E" + std::to_string(p.extra_regular_heads) +
           "-s" + std::to_string(seed) + "-" + variant;
}

double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

}  // namespace

std::vector<GridPoint> standard_grid() {
    std::vector<GridPoint> out;
    for (std::size_t layers : {2, 4, 6, 8})
        for (std::size_t extra : {1, 3}) out.push_back(GridPoint{layers, extra});
    return out;
}

void ExperimentSpec::validate() const {
    if (datasets.empty()) throw ConfigError("experiment needs at least one dataset");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    for (Role r : ablate) {
        if (std::find(roles.begin(), roles.end(), r) == roles.end()) {
            throw ConfigError("cannot ablate role '" + std::string(role_name(r)) + "': not enabled");
        }
    }
}

std::vector<GridPoint> ExperimentSpec::points() const {
    if (!grid.empty()) return grid;
    return {GridPoint{base.layers, base.extra_regular_heads}};
}

std::vector<Role> ExperimentSpec::ablation_roles() const {
    if (!ablate.empty()) return ablate;
    std::vector<Role> out;
    for (Role r : roles)
        if (r != Role::Padding) out.push_back(r);
    return out;
}

std::string run_manifest(const Dataset& ds, const ModelConfig& cfg) {
    std::ostringstream os;
    os << "dataset = " << ds.name << '\n'
       << "data_fingerprint = " << data_fingerprint(ds) << '\n'
       << "train_size = " << ds.train.size() << '\n'
       << "dev_size = " << ds.dev.size() << '\n'
       << "test_size = " << ds.test.size() << '\n'
       << cfg.to_text();
    return os.str();
}

RunRecord run_single(const std::string& id, const Dataset& ds, const ModelConfig& cfg) {
    RunRecord rec;
    rec.run_id = id;
    rec.dataset = ds.name;
    rec.layers = cfg.layers;
    rec.heads = cfg.heads();
    rec.guided_heads = static_cast<std::size_t>(
        std::count_if(cfg.guided_roles.begin(), cfg.guided_roles.end(), [](Role r) { return r != Role::Padding; }));
    rec.roles = roles_field(cfg.guided_roles);
    rec.seed = cfg.seed;
    rec.epochs = cfg.epochs;
    rec.manifest = run_manifest(ds, cfg);
    const auto start = std::chrono::steady_clock::now();
    try {
        const Checkpoint ckpt = train(cfg, ds.train, ds.dev);
        rec.dev_acc = ckpt.history.at(ckpt.best_epoch - 1).dev_acc;
        rec.test_acc = evaluate(ckpt, ds.test).accuracy;
    } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

GridResult run_grid(const ExperimentSpec& spec) {
    spec.validate();
    struct Job {
        std::size_t dataset;
        GridPoint point;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    const auto points = spec.points();
    for (std::size_t d = 0; d < spec.datasets.size(); ++d)
        for (const GridPoint& p : points)
            for (std::uint64_t s : spec.seeds) jobs.push_back(Job{d, p, s});

    GridResult result;
    result.runs.resize(jobs.size());
    run_parallel(jobs.size(), spec.jobs, [&](std::size_t i) {
        const Job& j = jobs[i];
        const Dataset& ds = spec.datasets[j.dataset];
        result.runs[i] = run_single(run_id(ds.name, j.point, j.seed, "grid"), ds,
                                    point_config(spec, j.point, j.seed));
    });

    std::size_t k = 0;
    for (const Dataset& ds : spec.datasets) {
        std::optional<GridSelection> best;
        for (const GridPoint& p : points) {
            std::vector<double> dev, test;
            bool ok = true;
            for (std::size_t s = 0; s < spec.seeds.size(); ++s, ++k) {
                const RunRecord& r = result.runs[k];
                ok &= !r.failed;
                dev.push_back(r.dev_acc);
                test.push_back(r.test_acc);
            }
            if (!ok) continue;
            GridSelection sel{ds.name, p, mean(dev), mean(test)};
            if (!best || sel.mean_dev_acc > best->mean_dev_acc) best = sel;
        }
        if (best) result.selected.push_back(*best);
    }
    return result;
}

ModelConfig ablated_config(const ModelConfig& cfg, Role role) {
    ModelConfig out = cfg;
    auto it = std::find(out.guided_roles.begin(), out.guided_roles.end(), role);
    if (it == out.guided_roles.end()) {
        throw ConfigError("role '" + std::string(role_name(role)) + "' is not assigned to a head");
    }
    *it = Role::Padding;
    return out;
}

ModelConfig baseline_config(const ModelConfig& cfg) {
    ModelConfig out = cfg;
    std::fill(out.guided_roles.begin(), out.guided_roles.end(), Role::Padding);
    return out;
}

AblationReport run_ablation(const ExperimentSpec& spec) {
    spec.validate();
    const GridPoint point = spec.points().front();
    const auto roles = spec.ablation_roles();

    struct Job {
        std::size_t dataset;
        std::uint64_t seed;
        std::string variant;
        ModelConfig cfg;
    };
    std::vector<Job> jobs;
    for (std::size_t d = 0; d < spec.datasets.size(); ++d) {
        for (std::uint64_t seed : spec.seeds) {
            const ModelConfig full = point_config(spec, point, seed);
            full.validate();
            jobs.push_back(Job{d, seed, "full", full});
            for (Role r : roles)
                jobs.push_back(Job{d, seed, "no-" + std::string(role_name(r)), ablated_config(full, r)});
            if (spec.include_baseline) jobs.push_back(Job{d, seed, "baseline", baseline_config(full)});
        }
    }

    AblationReport report;
    report.runs.resize(jobs.size());
    run_parallel(jobs.size(), spec.jobs, [&](std::size_t i) {
        const Job& j = jobs[i];
        const Dataset& ds = spec.datasets[j.dataset];
        report.runs[i] = run_single(run_id(ds.name, point, j.seed, j.variant), ds, j.cfg);
    });

    std::vector<double> full_accs, baseline_accs;
    std::size_t k = 0;
    for (const Dataset& ds : spec.datasets) {
        for (std::uint64_t seed : spec.seeds) {
            const RunRecord& full = report.runs[k++];
            if (!full.failed) full_accs.push_back(full.test_acc);
            for (Role r : roles) {
                const RunRecord& ab = report.runs[k++];
                if (full.failed || ab.failed) continue;
                report.rows.push_back(
                    AblationRow{r, ds.name, seed, full.test_acc, ab.test_acc, full.test_acc - ab.test_acc});
            }
            if (spec.include_baseline) {
                const RunRecord& base = report.runs[k++];
                if (!base.failed) baseline_accs.push_back(base.test_acc);
            }
        }
    }
    report.full_acc = mean(full_accs);
    report.baseline_acc = mean(baseline_accs);
    report.summary = summarize_drops(report.rows);
    return report;
}

std::vector<RoleDrop> summarize_drops(std::span<const AblationRow> rows) {
    std::vector<RoleDrop> out;
    for (Role r : {Role::RareW, Role::Seprat, Role::DepSyn, Role::MajRel, Role::RelPos}) {
        std::vector<double> drops;
        for (const AblationRow& row : rows)
            if (row.role == r) drops.push_back(row.drop);
        if (drops.empty()) continue;
        RoleDrop d{r, mean(drops), 0.0, drops.size()};
        if (drops.size() > 1) {
            double ss = 0.0;
            for (double x : drops) ss += (x - d.mean_drop) * (x - d.mean_drop);
            d.std_drop = std::sqrt(ss / static_cast<double>(drops.size() - 1));
        }
        out.push_back(d);
    }
    return out;
}

std::string results_csv(std::span<const RunRecord> runs, bool include_timing) {
    std::ostringstream os;
    os << "run_id,dataset,layers,heads,guided_heads,roles,seed,dev_acc,test_acc,epochs,wall_seconds\n";
    for (const RunRecord& r : runs) {
        os << csv_quote(r.run_id) << ',' << csv_quote(r.dataset) << ',' << r.layers << ',' << r.heads
           << ',' << r.guided_heads << ',' << r.roles << ',' << r.seed << ',';
        if (r.failed) os << ",,";
        else os << num(r.dev_acc) << ',' << num(r.test_acc) << ',';
        os << r.epochs << ',' << num(include_timing ? r.wall_seconds : 0.0) << '\n';
    }
    return os.str();
}

std::string ablation_csv(std::span<const AblationRow> rows) {
    std::ostringstream os;
    os << "role,dataset,seed,full_acc,ablated_acc,drop\n";
    for (const AblationRow& r : rows) {
        os << role_name(r.role) << ',' << csv_quote(r.dataset) << ',' << r.seed << ',' << num(r.full_acc)
           << ',' << num(r.ablated_acc) << ',' << num(r.drop) << '\n';
    }
    return os.str();
}

std::string role_drop_csv(std::span<const RoleDrop> drops) {
    std::ostringstream os;
    os << "role,mean_drop,std_drop,count\n";
    for (const RoleDrop& d : drops)
        os << role_name(d.role) << ',' << num(d.mean_drop) << ',' << num(d.std_drop) << ',' << d.count << '\n';
    return os.str();
}

std::string references_csv(const AblationReport& report) {
    std::ostringstream os;
    os << "model,mean_test_acc\n"
       << "baseline," << num(report.baseline_acc) << '\n'
       << "full," << num(report.full_acc) << '\n';
    return os.str();
}

std::vector<RunRecord> parse_results_csv(const std::string& text) {
    std::vector<RunRecord> out;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 11) throw std::invalid_argument("results CSV row has " + std::to_string(f.size()) + " fields");
        RunRecord r;
        r.run_id = f[0];
        r.dataset = f[1];
        r.layers = parse_u64(f[2]);
        r.heads = parse_u64(f[3]);
        r.guided_heads = parse_u64(f[4]);
        r.roles = f[5];
        r.seed = parse_u64(f[6]);
        r.failed = f[7].empty();
        if (!r.failed) {
            r.dev_acc = parse_num(f[7]);
            r.test_acc = parse_num(f[8]);
        }
        r.epochs = parse_u64(f[9]);
        r.wall_seconds = parse_num(f[10]);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
    std::vector<AblationRow> out;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 6) throw std::invalid_argument("ablation CSV row has " + std::to_string(f.size()) + " fields");
        const auto role = parse_role(f[0]);
        if (!role) throw std::invalid_argument("unknown role '" + std::string(f[0]) + "' in ablation CSV");
        out.push_back(AblationRow{*role, std::string(f[1]), parse_u64(f[2]), parse_num(f[3]), parse_num(f[4]),
                                  parse_num(f[5])});
    }
    return out;
}

void emit_metrics(const std::filesystem::path& out_dir, std::span<const RunRecord> runs,
                  const AblationReport* report, bool include_timing) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "manifests");
    auto write = [&](const fs::path& p, const std::string& text) {
        std::ofstream os(p, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + p.string());
        os << text;
    };
    write(out_dir / "results.csv", results_csv(runs, include_timing));
    std::string failures;
    for (const RunRecord& r : runs)
        if (r.failed) failures += csv_quote(r.run_id) + ',' + csv_quote(r.error) + '\n';
    if (!failures.empty()) write(out_dir / "failures.csv", "run_id,error\n" + failures);
    for (const RunRecord& r : runs) write(out_dir / "manifests" / (r.run_id + ".txt"), r.manifest);
    if (report) {
        write(out_dir / "ablation.csv", ablation_csv(report->rows));
        write(out_dir / "ablation_summary.csv", role_drop_csv(report->summary));
        write(out_dir / "references.csv", references_csv(*report));
    }
}

}  // namespace roleattn
