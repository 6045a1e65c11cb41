#pragma once
// CSV ingestion, unit-ball normalization, device partitioning and
// per-device train/validation/test splits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace dppasgd {

// Row-major block of labeled samples. Labels are +1 / -1.
struct SampleSet {
    std::size_t dim = 0;
    std::vector<double> x;
    std::vector<double> y;
    // Row index in the source table, kept for audits and multiset checks.
    std::vector<std::size_t> origin;

    std::size_t size() const { return y.size(); }
    bool empty() const { return y.empty(); }
    std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
    std::span<double> row(std::size_t i) { return {x.data() + i * dim, dim}; }
    void push_back(std::span<const double> features, double label, std::size_t source_row);
};

struct Table {
    std::vector<std::string> feature_names;
    SampleSet samples;
    // Raw string values of every categorical column, by column name. Used for
    // attribute-based partitioning even when the column is not a feature.
    std::map<std::string, std::vector<std::string>> attributes;
    // Label string mapped to +1.
    std::string positive_label;
    std::size_t dropped_rows = 0;

    std::size_t rows() const { return samples.size(); }
    std::size_t dim() const { return samples.dim; }
};

struct CsvOptions {
    std::string label_column;
    std::vector<std::string> categorical_columns;
    // Columns used as features. Empty selects every non-label column.
    // Categorical columns outside this list are still kept as attributes.
    std::vector<std::string> feature_columns;
    // Label value mapped to +1. Empty picks the lexicographically larger one.
    std::string positive_label;
};

// Parses an RFC-4180 document into header + records. Throws ParseError.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

Table load_csv(const std::filesystem::path& path, const CsvOptions& options);
Table load_csv_text(std::string_view text, const CsvOptions& options);

// Rows with L2 norm above one are scaled onto the unit sphere.
Table normalize_unit_ball(Table table);

// Scales features by 1/sqrt(2) and appends a constant 1/sqrt(2) bias
// coordinate, so unit-ball rows stay in the unit ball.
Table with_bias_feature(Table table);

enum class PartitionMode { IidEven, ByAttribute };

struct FederationSpec {
    std::size_t devices = 1;
    PartitionMode mode = PartitionMode::IidEven;
    std::string attribute;
    std::uint64_t seed = 0;
};

// Parses "iid" or "attr:<name>".
FederationSpec parse_partition(const std::string& text, std::size_t devices, std::uint64_t seed);

struct DeviceDataset {
    std::size_t device_id = 0;
    // Before split_train_val_test every sample sits in `train`.
    SampleSet train;
    SampleSet val;
    SampleSet test;
    std::size_t batch_size = 1;
    // Attribute value that defined this device (by-attribute mode only).
    std::string attribute_value;

    std::size_t total() const { return train.size() + val.size() + test.size(); }
};

std::vector<DeviceDataset> partition(const Table& table, const FederationSpec& spec);

// 80/10/10 with floor for val/test and the remainder to train. Devices with
// 3..9 samples get one validation and one test sample.
DeviceDataset split_train_val_test(DeviceDataset device, std::uint64_t seed);

// Sets X_m = min(batch, |train|) on every device.
void assign_batch_sizes(std::vector<DeviceDataset>& devices, std::size_t batch);

nlohmann::json partition_manifest(std::span<const DeviceDataset> devices);

}  // namespace dppasgd
