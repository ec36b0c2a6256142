#include "labelclean/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "labelclean/errors.hpp"
#include "labelclean/random.hpp"

namespace labelclean::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cell.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

}  // namespace

ExampleSet ExampleSet::with_examples(std::vector<Example> ex) const {
    ExampleSet out;
    out.name = name;
    out.num_classes = num_classes;
    out.feature_dim = feature_dim;
    out.class_names = class_names;
    out.feature_names = feature_names;
    out.image_shape = image_shape;
    out.examples = std::move(ex);
    return out;
}

void ExampleSet::validate() const {
    if (num_classes < 2) throw ConfigError("dataset '" + name + "' needs at least 2 classes");
    std::unordered_set<int> ids;
    for (const auto& e : examples) {
        if (e.x.size() != feature_dim)
            throw ConfigError("example " + std::to_string(e.id) + " has " + std::to_string(e.x.size()) +
                              " features, expected " + std::to_string(feature_dim));
        if (e.label < 0 || e.label >= num_classes || e.hidden.true_label < 0 || e.hidden.true_label >= num_classes)
            throw ConfigError("example " + std::to_string(e.id) + " has a label outside [0, " +
                              std::to_string(num_classes) + ")");
        if (!ids.insert(e.id).second) throw ConfigError("duplicate example id " + std::to_string(e.id));
    }
}

std::size_t ExampleSet::count_corrupted() const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [](const Example& e) { return e.corrupted(); }));
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("cannot open dataset manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest " + manifest_path.string() + ": " + e.what(), 0, "");
    }
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.path = j.at("path").get<std::string>();
        m.label_column = j.value("label_column", std::string("label"));
        m.class_names = j.value("class_names", std::vector<std::string>{});
        if (j.contains("image_shape")) {
            auto shape = j.at("image_shape").get<std::vector<int>>();
            if (shape.size() != 2) throw ConfigError("image_shape must have 2 entries");
            m.image_shape = std::pair{shape[0], shape[1]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest " + manifest_path.string() + ": " + e.what());
    }
    if (m.path.is_relative()) m.path = manifest_path.parent_path() / m.path;
    return m;
}

CsvSchema DatasetManifest::schema() const {
    CsvSchema s;
    s.label_column = label_column;
    s.class_names = class_names;
    return s;
}

ExampleSet load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row", 1, "");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    auto header = split_csv_line(line);
    for (auto& h : header) h = trim(h);

    auto column_index = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ParseError(path.string() + ": missing column '" + name + "'", 1, name);
        return static_cast<std::size_t>(it - header.begin());
    };

    const std::size_t label_idx = column_index(schema.label_column);
    std::vector<std::size_t> feature_idx;
    std::vector<std::string> feature_names;
    if (!schema.feature_columns.empty()) {
        for (const auto& f : schema.feature_columns) {
            feature_idx.push_back(column_index(f));
            feature_names.push_back(f);
        }
    } else {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i == label_idx) continue;
            if (std::find(schema.ignore_columns.begin(), schema.ignore_columns.end(), header[i]) !=
                schema.ignore_columns.end())
                continue;
            feature_idx.push_back(i);
            feature_names.push_back(header[i]);
        }
    }
    if (feature_idx.empty()) throw ParseError(path.string() + ": no feature columns", 1, "");

    std::vector<std::vector<double>> rows;
    std::vector<std::string> raw_labels;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError(path.string() + ": row " + std::to_string(row_no) + " has " +
                                 std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()),
                             row_no, "");
        std::vector<double> values;
        values.reserve(feature_idx.size());
        for (std::size_t k = 0; k < feature_idx.size(); ++k) {
            std::string cell = trim(cells[feature_idx[k]]);
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
                throw ParseError(path.string() + ": row " + std::to_string(row_no) + ", column '" +
                                     feature_names[k] + "': non-numeric value '" + cell + "'",
                                 row_no, feature_names[k]);
            values.push_back(v);
        }
        rows.push_back(std::move(values));
        raw_labels.push_back(trim(cells[label_idx]));
    }

    std::vector<std::string> classes = schema.class_names;
    if (classes.empty()) {
        std::set<std::string> uniq(raw_labels.begin(), raw_labels.end());
        classes.assign(uniq.begin(), uniq.end());
    }
    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < classes.size(); ++i) class_index[classes[i]] = static_cast<int>(i);

    ExampleSet set;
    set.name = path.stem().string();
    set.num_classes = static_cast<int>(classes.size());
    set.feature_dim = static_cast<int>(feature_idx.size());
    set.class_names = classes;
    set.feature_names = feature_names;
    set.examples.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto it = class_index.find(raw_labels[r]);
        if (it == class_index.end())
            throw ParseError(path.string() + ": row " + std::to_string(r + 2) + ": unknown label '" + raw_labels[r] +
                                 "'",
                             r + 2, schema.label_column);
        Example e;
        e.id = static_cast<int>(r);
        e.x = Eigen::Map<const Eigen::VectorXd>(rows[r].data(), static_cast<Eigen::Index>(rows[r].size()));
        e.label = it->second;
        e.hidden.true_label = it->second;
        set.examples.push_back(std::move(e));
    }
    if (set.num_classes < 2) throw ParseError(path.string() + ": fewer than 2 classes", 0, schema.label_column);
    if (schema.standardize && !set.empty()) apply_standardization(set, feature_stats(set));
    return set;
}

ExampleSet load_manifest(const DatasetManifest& manifest, bool standardize_features) {
    auto schema = manifest.schema();
    schema.standardize = standardize_features;
    auto set = load_csv(manifest.path, schema);
    set.name = manifest.name;
    set.image_shape = manifest.image_shape;
    if (set.image_shape && set.image_shape->first * set.image_shape->second != set.feature_dim)
        throw ConfigError("manifest '" + manifest.name + "': image_shape does not match feature count");
    return set;
}

void write_csv(const ExampleSet& set, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (int j = 0; j < set.feature_dim; ++j) {
        std::string name = j < static_cast<int>(set.feature_names.size()) ? set.feature_names[j]
                                                                           : "x" + std::to_string(j);
        out << csv_escape(name) << ',';
    }
    out << "label,true_label,corrupted\n";
    char buf[64];
    for (const auto& e : set.examples) {
        for (int j = 0; j < set.feature_dim; ++j) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, e.x[j]);
            out.write(buf, ptr - buf);
            out << ',';
        }
        out << csv_escape(set.class_names[e.label]) << ',' << csv_escape(set.class_names[e.hidden.true_label]) << ','
            << (e.corrupted() ? 1 : 0) << '\n';
    }
}

FeatureStats feature_stats(const ExampleSet& set) {
    if (set.empty()) throw ConfigError("cannot compute feature statistics of an empty set");
    FeatureStats s;
    s.mean = Eigen::VectorXd::Zero(set.feature_dim);
    for (const auto& e : set.examples) s.mean += e.x;
    s.mean /= static_cast<double>(set.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(set.feature_dim);
    for (const auto& e : set.examples) var += (e.x - s.mean).array().square().matrix();
    var /= static_cast<double>(set.size());
    s.stddev = var.array().sqrt();
    return s;
}

void apply_standardization(ExampleSet& set, const FeatureStats& stats) {
    for (auto& e : set.examples) {
        for (int j = 0; j < set.feature_dim; ++j) {
            double sd = stats.stddev[j];
            e.x[j] = sd > 1e-12 ? (e.x[j] - stats.mean[j]) / sd : e.x[j] - stats.mean[j];
        }
    }
}

void standardize(ExampleSet& train, ExampleSet& test) {
    auto stats = feature_stats(train);
    apply_standardization(train, stats);
    apply_standardization(test, stats);
}

SplitResult split(const ExampleSet& set, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train fraction must lie in (0, 1)");
    const std::size_t n = set.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n)
        throw ConfigError("split of " + std::to_string(n) + " examples at fraction " + std::to_string(train_fraction) +
                          " leaves an empty side");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {0x5b1u}));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Example> train, test;
    train.reserve(n_train);
    test.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i) (i < n_train ? train : test).push_back(set.examples[order[i]]);
    return {set.with_examples(std::move(train)), set.with_examples(std::move(test))};
}

ExampleSet corrupt(const ExampleSet& set, const CorruptionSpec& spec) {
    if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw ConfigError("corruption rate must lie in [0, 1)");
    if (set.num_classes < 2) throw ConfigError("corruption needs at least 2 classes");
    ExampleSet out = set;
    const std::size_t n = set.size();
    const auto m = static_cast<std::size_t>(std::floor(spec.rate * static_cast<double>(n)));
    if (m == 0) return out;

    Rng rng(derive_seed(spec.seed, {0xc0771u}));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> other(0, set.num_classes - 2);
    for (std::size_t i = 0; i < m; ++i) {
        auto& e = out.examples[order[i]];
        int r = other(rng);
        e.label = r < e.hidden.true_label ? r : r + 1;
    }
    return out;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
    if (name == "two-gaussians") return SyntheticKind::TwoGaussians;
    if (name == "moons") return SyntheticKind::Moons;
    throw ConfigError("unknown synthetic dataset '" + name + "'");
}

ExampleSet make_synthetic(SyntheticKind kind, int n, double noise, std::uint64_t seed) {
    if (n < 4) throw ConfigError("synthetic datasets need n >= 4");
    if (noise < 0.0) throw ConfigError("synthetic noise must be nonnegative");
    Rng rng(derive_seed(seed, {0x5e7u, static_cast<std::uint64_t>(kind)}));
    std::normal_distribution<double> gauss(0.0, 1.0);

    ExampleSet set;
    set.num_classes = 2;
    set.feature_dim = 2;
    set.feature_names = {"x0", "x1"};
    const int n0 = (n + 1) / 2;
    if (kind == SyntheticKind::TwoGaussians) {
        set.name = "two-gaussians";
        set.class_names = {"left", "right"};
        for (int i = 0; i < n; ++i) {
            int y = i < n0 ? 0 : 1;
            Example e;
            e.id = i;
            e.x.resize(2);
            double cx = y == 0 ? -3.0 : 3.0;
            double a = gauss(rng), b = gauss(rng);
            e.x << cx + noise * a, noise * b;
            e.label = e.hidden.true_label = y;
            set.examples.push_back(std::move(e));
        }
    } else {
        set.name = "moons";
        set.class_names = {"outer", "inner"};
        const int n1 = n - n0;
        for (int i = 0; i < n; ++i) {
            int y = i < n0 ? 0 : 1;
            Example e;
            e.id = i;
            e.x.resize(2);
            if (y == 0) {
                double t = n0 > 1 ? std::numbers::pi * i / (n0 - 1) : 0.0;
                e.x << std::cos(t), std::sin(t);
            } else {
                int k = i - n0;
                double t = n1 > 1 ? std::numbers::pi * k / (n1 - 1) : 0.0;
                e.x << 1.0 - std::cos(t), 0.5 - std::sin(t);
            }
            double a = gauss(rng), b = gauss(rng);
            e.x[0] += noise * a;
            e.x[1] += noise * b;
            e.label = e.hidden.true_label = y;
            set.examples.push_back(std::move(e));
        }
    }
    // interleave the classes so prefixes of the set stay balanced
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Example> shuffled;
    shuffled.reserve(set.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        shuffled.push_back(std::move(set.examples[order[i]]));
        shuffled.back().id = static_cast<int>(i);
    }
    set.examples = std::move(shuffled);
    return set;
}

}  // namespace labelclean::data
