#include "dppasgd/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dppasgd/errors.hpp"
#include "dppasgd/rng.hpp"
#include "dppasgd/simd.hpp"

namespace dppasgd {

void SampleSet::push_back(std::span<const double> features, double label, std::size_t source_row) {
    DPPASGD_REQUIRE(features.size() == dim, "sample dimension mismatch");
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(label);
    origin.push_back(source_row);
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_quoted = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        // A blank line is not a record.
        if (!(record.size() == 1 && record[0].empty())) {
            if (!records.empty() && record.size() != records.front().size()) {
                throw ParseError("CSV row " + std::to_string(record_line) + ": expected " +
                                 std::to_string(records.front().size()) + " fields, found " +
                                 std::to_string(record.size()));
            }
            records.push_back(std::move(record));
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty() || field_quoted)
                    throw ParseError("CSV row " + std::to_string(line) + ": stray quote");
                in_quotes = true;
                field_quoted = true;
                break;
            case ',': end_field(); break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') break;
                [[fallthrough]];
            case '\n':
                end_record();
                ++line;
                record_line = line;
                break;
            default: field.push_back(c);
        }
    }
    if (in_quotes) throw ParseError("CSV row " + std::to_string(record_line) + ": unterminated quote");
    if (!field.empty() || !record.empty()) end_record();
    if (records.empty()) throw ParseError("CSV is empty: no header row");
    return records;
}

namespace {

std::string trim(std::string s) {
    auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

Table load_csv(const std::filesystem::path& path, const CsvOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_csv_text(buf.str(), options);
}

Table load_csv_text(std::string_view text, const CsvOptions& options) {
    auto records = parse_csv(text);
    std::vector<std::string> header;
    for (auto& h : records.front()) header.push_back(trim(h));

    auto column_index = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ConfigError("column '" + name + "' not found in CSV header");
        return static_cast<std::size_t>(it - header.begin());
    };

    const std::size_t label_idx = column_index(options.label_column);
    for (const auto& c : options.categorical_columns) column_index(c);

    std::vector<std::string> features = options.feature_columns;
    if (features.empty()) {
        for (const auto& h : header)
            if (h != options.label_column) features.push_back(h);
    }
    std::vector<std::size_t> used{label_idx};
    for (const auto& f : features) {
        if (f == options.label_column) throw ConfigError("label column cannot be a feature");
        used.push_back(column_index(f));
    }
    for (const auto& c : options.categorical_columns) used.push_back(column_index(c));

    // Drop rows with a missing value in any column we read.
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_numbers;
    Table table;
    for (std::size_t r = 1; r < records.size(); ++r) {
        auto& rec = records[r];
        for (auto& v : rec) v = trim(std::move(v));
        const bool missing = std::any_of(used.begin(), used.end(), [&](std::size_t i) { return rec[i].empty(); });
        if (missing) {
            ++table.dropped_rows;
            continue;
        }
        rows.push_back(std::move(rec));
        row_numbers.push_back(r + 1);
    }

    std::set<std::string> label_values;
    for (const auto& row : rows) label_values.insert(row[label_idx]);
    if (label_values.size() != 2) {
        throw ConfigError("label column '" + options.label_column + "' must have exactly 2 distinct values, found " +
                          std::to_string(label_values.size()));
    }
    table.positive_label = options.positive_label.empty() ? *label_values.rbegin() : options.positive_label;
    if (!label_values.contains(table.positive_label))
        throw ConfigError("positive label '" + table.positive_label + "' does not occur in the label column");

    // Column layout: numeric columns map to one feature, categorical ones to
    // one indicator per sorted level.
    struct Encoded {
        std::size_t source;
        bool categorical;
        std::vector<std::string> levels;
    };
    std::vector<Encoded> layout;
    for (const auto& f : features) {
        Encoded e{column_index(f), contains(options.categorical_columns, f), {}};
        if (e.categorical) {
            std::set<std::string> levels;
            for (const auto& row : rows) levels.insert(row[e.source]);
            e.levels.assign(levels.begin(), levels.end());
            for (const auto& l : e.levels) table.feature_names.push_back(f + "=" + l);
        } else {
            table.feature_names.push_back(f);
        }
        layout.push_back(std::move(e));
    }

    table.samples.dim = table.feature_names.size();
    std::vector<double> x(table.samples.dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        std::fill(x.begin(), x.end(), 0.0);
        std::size_t k = 0;
        for (const auto& e : layout) {
            const std::string& v = row[e.source];
            if (e.categorical) {
                auto it = std::lower_bound(e.levels.begin(), e.levels.end(), v);
                x[k + static_cast<std::size_t>(it - e.levels.begin())] = 1.0;
                k += e.levels.size();
            } else {
                double value = 0.0;
                auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
                if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(value)) {
                    throw ParseError("CSV row " + std::to_string(row_numbers[r]) + ": column '" + header[e.source] +
                                     "' value '" + v + "' is not numeric");
                }
                x[k++] = value;
            }
        }
        table.samples.push_back(x, row[label_idx] == table.positive_label ? 1.0 : -1.0, r);
    }
    for (const auto& c : options.categorical_columns) {
        auto& values = table.attributes[c];
        const std::size_t idx = column_index(c);
        values.reserve(rows.size());
        for (const auto& row : rows) values.push_back(row[idx]);
    }
    return table;
}

Table normalize_unit_ball(Table table) {
    auto& s = table.samples;
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto row = s.row(i);
        const double norm = std::sqrt(simd::norm_sq(row));
        if (norm > 1.0) {
            simd::scale(1.0 / norm, row);
            // Rounding can leave the norm a few ulps above one.
            const double again = std::sqrt(simd::norm_sq(row));
            if (again > 1.0) simd::scale(1.0 / again, row);
        }
    }
    return table;
}

Table with_bias_feature(Table table) {
    const double c = 1.0 / std::sqrt(2.0);
    const auto& src = table.samples;
    SampleSet out;
    out.dim = src.dim + 1;
    out.x.reserve(src.size() * out.dim);
    out.y = src.y;
    out.origin = src.origin;
    for (std::size_t i = 0; i < src.size(); ++i) {
        for (double v : src.row(i)) out.x.push_back(v * c);
        out.x.push_back(c);
    }
    table.samples = std::move(out);
    table.feature_names.push_back("(bias)");
    return table;
}

FederationSpec parse_partition(const std::string& text, std::size_t devices, std::uint64_t seed) {
    FederationSpec spec;
    spec.devices = devices;
    spec.seed = seed;
    if (text == "iid") {
        spec.mode = PartitionMode::IidEven;
    } else if (text.rfind("attr:", 0) == 0 && text.size() > 5) {
        spec.mode = PartitionMode::ByAttribute;
        spec.attribute = text.substr(5);
    } else {
        throw ConfigError("partition must be 'iid' or 'attr:<column>', got '" + text + "'");
    }
    return spec;
}

namespace {

void shuffle(std::vector<std::size_t>& v, Stream& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<DeviceDataset> partition(const Table& table, const FederationSpec& spec) {
    if (spec.devices < 1) throw ConfigError("device count must be at least 1");
    const auto& src = table.samples;
    std::vector<DeviceDataset> devices(spec.devices);
    for (std::size_t m = 0; m < spec.devices; ++m) {
        devices[m].device_id = m;
        devices[m].train.dim = src.dim;
    }
    auto place = [&](std::size_t m, std::size_t row) { devices[m].train.push_back(src.row(row), src.y[row], src.origin[row]); };

    if (spec.mode == PartitionMode::IidEven) {
        if (spec.devices > src.size()) {
            throw ConfigError("iid partition needs at least one row per device: " + std::to_string(src.size()) +
                              " rows for " + std::to_string(spec.devices) + " devices");
        }
        std::vector<std::size_t> order(src.size());
        std::iota(order.begin(), order.end(), 0);
        auto rng = Stream::derive(spec.seed, 0, 0, StreamPurpose::Shuffle);
        shuffle(order, rng);
        for (std::size_t j = 0; j < order.size(); ++j) place(j % spec.devices, order[j]);
        return devices;
    }

    auto it = table.attributes.find(spec.attribute);
    if (it == table.attributes.end())
        throw ConfigError("partition attribute '" + spec.attribute + "' is not a categorical column");
    const auto& values = it->second;
    std::set<std::string> levels(values.begin(), values.end());
    if (levels.size() != spec.devices) {
        throw ConfigError("attribute '" + spec.attribute + "' has " + std::to_string(levels.size()) +
                          " distinct values but " + std::to_string(spec.devices) + " devices were requested");
    }
    std::map<std::string, std::size_t> device_of;
    std::size_t m = 0;
    for (const auto& l : levels) {
        devices[m].attribute_value = l;
        device_of[l] = m++;
    }
    for (std::size_t r = 0; r < src.size(); ++r) place(device_of[values[r]], r);
    return devices;
}

DeviceDataset split_train_val_test(DeviceDataset device, std::uint64_t seed) {
    SampleSet all = std::move(device.train);
    for (auto* extra : {&device.val, &device.test}) {
        for (std::size_t i = 0; i < extra->size(); ++i) all.push_back(extra->row(i), extra->y[i], extra->origin[i]);
    }
    const std::size_t n = all.size();
    if (n == 0) throw ConfigError("device " + std::to_string(device.device_id) + " has no samples");
    if (n < 3)
        throw ConfigError("device " + std::to_string(device.device_id) + " has " + std::to_string(n) +
                          " samples; at least 3 are needed for train/val/test");
    const std::size_t n_eval = std::max<std::size_t>(1, n / 10);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = Stream::derive(seed, device.device_id, 0, StreamPurpose::Split);
    shuffle(order, rng);

    device.train = SampleSet{all.dim, {}, {}, {}};
    device.val = SampleSet{all.dim, {}, {}, {}};
    device.test = SampleSet{all.dim, {}, {}, {}};
    for (std::size_t j = 0; j < n; ++j) {
        SampleSet& dst = j < n_eval ? device.val : (j < 2 * n_eval ? device.test : device.train);
        const std::size_t r = order[j];
        dst.push_back(all.row(r), all.y[r], all.origin[r]);
    }
    device.batch_size = std::clamp<std::size_t>(device.batch_size, 1, device.train.size());
    return device;
}

void assign_batch_sizes(std::vector<DeviceDataset>& devices, std::size_t batch) {
    if (batch < 1) throw ConfigError("mini-batch size must be at least 1");
    for (auto& d : devices) d.batch_size = std::clamp<std::size_t>(batch, 1, std::max<std::size_t>(1, d.train.size()));
}

nlohmann::json partition_manifest(std::span<const DeviceDataset> devices) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& d : devices) {
        nlohmann::json j{{"device", d.device_id},
                         {"samples", d.total()},
                         {"train", d.train.size()},
                         {"val", d.val.size()},
                         {"test", d.test.size()},
                         {"batch_size", d.batch_size}};
        if (!d.attribute_value.empty()) j["attribute_value"] = d.attribute_value;
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace dppasgd
