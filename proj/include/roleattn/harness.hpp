#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "roleattn/corpus.hpp"
#include "roleattn/masks.hpp"
#include "roleattn/model.hpp"

namespace roleattn {

struct GridPoint {
    std::size_t layers = 2;
    std::size_t extra_regular_heads = 1;

    friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

// Layers {2,4,6,8} x extra regular heads {1,3}, on top of five guided heads.
std::vector<GridPoint> standard_grid();

struct ExperimentSpec {
    std::vector<Dataset> datasets;
    ModelConfig base;
    // Empty means the single point described by `base`.
    std::vector<GridPoint> grid;
    std::vector<Role> roles{kGuidedRoles.begin(), kGuidedRoles.end()};
    std::vector<std::uint64_t> seeds{1};
    // Roles to drop one at a time; empty means every enabled role.
    std::vector<Role> ablate;
    bool include_baseline = true;
    std::size_t jobs = 1;

    // Throws ConfigError on an empty grid/seed list or an ablation role
    // that is not enabled.
    void validate() const;
    std::vector<GridPoint> points() const;
    std::vector<Role> ablation_roles() const;
};

struct RunRecord {
    std::string run_id;
    std::string dataset;
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t guided_heads = 0;
    std::string roles;
    std::uint64_t seed = 0;
    double dev_acc = 0.0;
    double test_acc = 0.0;
    std::size_t epochs = 0;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;
    // Resolved dataset/config description; two runs are comparable iff their
    // manifests differ only where intended.
    std::string manifest;

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

// The manifest text for a run: dataset name, data fingerprint and the
// resolved config.
std::string run_manifest(const Dataset& ds, const ModelConfig& cfg);

// Trains on ds.train/dev, scores ds.test. Failures are captured in the
// record instead of thrown.
RunRecord run_single(const std::string& run_id, const Dataset& ds, const ModelConfig& cfg);

struct GridSelection {
    std::string dataset;
    GridPoint point;
    double mean_dev_acc = 0.0;
    double mean_test_acc = 0.0;
};

struct GridResult {
    std::vector<RunRecord> runs;
    std::vector<GridSelection> selected;
};

// Trains every (dataset, grid point, seed). Per dataset, selects the point
// with the highest seed-averaged dev accuracy (earliest on ties) among
// points whose runs all succeeded.
GridResult run_grid(const ExperimentSpec& spec);

struct AblationRow {
    Role role = Role::Padding;
    std::string dataset;
    std::uint64_t seed = 0;
    double full_acc = 0.0;
    double ablated_acc = 0.0;
    double drop = 0.0;

    friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct RoleDrop {
    Role role = Role::Padding;
    double mean_drop = 0.0;
    double std_drop = 0.0;  // sample standard deviation over datasets x seeds
    std::size_t count = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::vector<RoleDrop> summary;
    double full_acc = 0.0;      // mean test accuracy of the full model
    double baseline_acc = 0.0;  // mean test accuracy with no guided masks
    std::vector<RunRecord> runs;
};

// Config with `role`'s head switched to the padding mask.
ModelConfig ablated_config(const ModelConfig& cfg, Role role);
// Config with every guided head switched to the padding mask.
ModelConfig baseline_config(const ModelConfig& cfg);

// For every dataset and seed trains the full model, then retrains once per
// ablated role with that role's mask replaced by the padding mask (same
// seed, data order and remaining config). Uses the first grid point.
AblationReport run_ablation(const ExperimentSpec& spec);

std::vector<RoleDrop> summarize_drops(std::span<const AblationRow> rows);

std::string results_csv(std::span<const RunRecord> runs, bool include_timing = false);
std::string ablation_csv(std::span<const AblationRow> rows);
std::string role_drop_csv(std::span<const RoleDrop> drops);
std::string references_csv(const AblationReport& report);

std::vector<RunRecord> parse_results_csv(const std::string& text);
std::vector<AblationRow> parse_ablation_csv(const std::string& text);

// Writes results.csv (and ablation.csv, ablation_summary.csv,
// references.csv when a report is given) plus one manifest per run under
// out_dir/manifests. Wall-clock time is written only with include_timing,
// so that repeated runs produce identical files.
void emit_metrics(const std::filesystem::path& out_dir, std::span<const RunRecord> runs,
                  const AblationReport* report = nullptr, bool include_timing = false);

}  // namespace roleattn
