#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace labelclean::data {

// Labels are 0-based class indices into ExampleSet::class_names.

/// Ground-truth channel. Only the oracle annotator and the evaluation code read it.
struct Hidden {
    int true_label = 0;
};

struct Example {
    int id = 0;
    Eigen::VectorXd x;
    int label = 0;  // observed (possibly noisy) annotation
    Hidden hidden;

    bool corrupted() const noexcept { return label != hidden.true_label; }
};

struct ExampleSet {
    std::string name;
    int num_classes = 0;
    int feature_dim = 0;
    std::vector<std::string> class_names;
    std::vector<std::string> feature_names;
    std::optional<std::pair<int, int>> image_shape;  // rows, cols for image-like data
    std::vector<Example> examples;

    std::size_t size() const noexcept { return examples.size(); }
    bool empty() const noexcept { return examples.empty(); }
    std::span<const Example> view() const noexcept { return examples; }

    /// Copy with the same metadata and the given examples.
    ExampleSet with_examples(std::vector<Example> ex) const;

    /// Throws ConfigError when a feature vector has the wrong length, a
    /// label is out of range or ids repeat.
    void validate() const;

    std::size_t count_corrupted() const;
};

struct CsvSchema {
    std::string label_column = "label";
    std::vector<std::string> feature_columns;  // empty: every column except label/ignored
    std::vector<std::string> ignore_columns;
    std::vector<std::string> class_names;      // empty: sorted unique label strings
    bool standardize = true;
};

struct DatasetManifest {
    std::string name;
    std::filesystem::path path;
    std::string label_column = "label";
    std::vector<std::string> class_names;
    std::optional<std::pair<int, int>> image_shape;

    /// Relative `path` entries are resolved against the manifest's directory.
    static DatasetManifest load(const std::filesystem::path& manifest_path);
    CsvSchema schema() const;
};

ExampleSet load_csv(const std::filesystem::path& path, const CsvSchema& schema);
ExampleSet load_manifest(const DatasetManifest& manifest, bool standardize = false);

/// Writes features, observed label, true label and corruption flag.
void write_csv(const ExampleSet& set, const std::filesystem::path& path);

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;  // population stddev; 0 for constant columns
};

FeatureStats feature_stats(const ExampleSet& set);

/// Z-score `set` in place with `stats`; constant columns are only centred.
void apply_standardization(ExampleSet& set, const FeatureStats& stats);

/// Standardizes both sets with statistics of `train`.
void standardize(ExampleSet& train, ExampleSet& test);

struct SplitResult {
    ExampleSet train;
    ExampleSet test;
};

/// Seeded shuffle then partition; train gets floor(fraction * n) examples.
SplitResult split(const ExampleSet& set, double train_fraction, std::uint64_t seed);

struct CorruptionSpec {
    double rate = 0.2;
    std::uint64_t seed = 0;
};

/// Corrupts exactly floor(rate * n) distinct examples, each to a uniformly
/// drawn label different from its true label.
ExampleSet corrupt(const ExampleSet& set, const CorruptionSpec& spec);

enum class SyntheticKind { TwoGaussians, Moons };

SyntheticKind parse_synthetic_kind(const std::string& name);

/// Balanced 2-class, 2-feature data. For two-gaussians `noise` is the
/// per-axis stddev around centres (-3, 0) and (3, 0); for moons it is the
/// stddev of the additive gaussian jitter.
ExampleSet make_synthetic(SyntheticKind kind, int n, double noise, std::uint64_t seed);

}  // namespace labelclean::data
