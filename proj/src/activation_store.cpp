#include "registerscope/activation_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "registerscope/errors.hpp"

namespace regscope {

using nlohmann::json;

namespace {

constexpr std::array<char, 4> kMatrixMagic{'S', 'A', 'E', 'M'};
constexpr std::uint32_t kMatrixVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 0;
constexpr std::size_t kMatrixHeaderSize = 25;

bool is_language_code(std::string_view code) {
    return code.size() == 2 && std::all_of(code.begin(), code.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return std::move(buffer).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

template <class T>
void put_le(std::vector<std::byte>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffU));
    }
}

template <class T>
T get_le(std::span<const std::byte> bytes, std::size_t offset) {
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(bytes[offset + i])) << (8 * i);
    }
    return static_cast<T>(value);
}

void append_float(std::string& out, float value) {
    char buffer[32];
    auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    out.append(buffer, end);
}

void collect_violations(const SparseActivationRecord& record, const DatasetManifest& manifest, std::size_t index,
                        std::vector<Violation>& out) {
    auto add = [&](std::string kind, std::string detail) {
        out.push_back(Violation{index, std::move(kind), std::move(detail)});
    };
    if (record.sentence_id.empty()) add("empty sentence id", "sentence_id must be non-empty");
    if (!manifest.has_language(record.language)) add("unknown language", "language '" + record.language + "'");
    if (!manifest.has_layer(record.layer)) add("unknown layer", "layer " + std::to_string(record.layer));
    for (std::size_t i = 0; i < record.features.size(); ++i) {
        const auto& f = record.features[i];
        if (i > 0 && f.index <= record.features[i - 1].index) {
            add("indices not ascending", "index " + std::to_string(f.index) + " follows " +
                                             std::to_string(record.features[i - 1].index));
        }
        if (f.index >= manifest.num_features) {
            add("index out of range",
                "index " + std::to_string(f.index) + " >= num_features " + std::to_string(manifest.num_features));
        }
        if (!(f.value > 0.0f)) {
            add("non-positive activation", "feature " + std::to_string(f.index));
        } else if (!std::isfinite(f.value)) {
            add("non-finite activation", "feature " + std::to_string(f.index));
        }
    }
}

}  // namespace

std::string_view to_string(Label label) noexcept { return label == Label::slang ? "slang" : "literal"; }

Label parse_label(std::string_view text) {
    if (text == "slang") return Label::slang;
    if (text == "literal") return Label::literal;
    throw DataError("unknown label '" + std::string(text) + "'");
}

bool DatasetManifest::has_language(std::string_view language) const noexcept {
    return std::find(languages.begin(), languages.end(), language) != languages.end();
}

bool DatasetManifest::has_layer(std::uint32_t layer) const noexcept {
    return std::find(layers.begin(), layers.end(), layer) != layers.end();
}

std::uint64_t DatasetManifest::total_count() const noexcept {
    std::uint64_t total = 0;
    for (const auto& [key, n] : counts) total += n;
    return total;
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0f) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw DataError("matrix payload has " + std::to_string(values_.size()) + " values, expected " +
                        std::to_string(rows_ * cols_));
    }
    for (float v : values_) {
        if (!std::isfinite(v)) throw DataError("matrix contains a non-finite value");
    }
}

SparseActivationRecord parse_record(std::string_view line) {
    json doc;
    try {
        doc = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw DataError("record is not a JSON object");

    SparseActivationRecord record;
    try {
        record.sentence_id = doc.at("sentence_id").get<std::string>();
        record.language = doc.at("language").get<std::string>();
        const auto& layer = doc.at("layer");
        if (!layer.is_number_unsigned()) throw DataError("layer must be a non-negative integer");
        record.layer = layer.get<std::uint32_t>();
        record.label = parse_label(doc.at("label").get<std::string>());
        if (auto it = doc.find("term"); it != doc.end() && !it->is_null()) record.term = it->get<std::string>();
        const auto& features = doc.at("features");
        if (!features.is_array()) throw DataError("features must be an array");
        record.features.reserve(features.size());
        for (const auto& pair : features) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number()) {
                throw DataError("features entries must be [index, value] pairs");
            }
            const auto index = pair[0].get<std::int64_t>();
            if (index < 0 || index > std::numeric_limits<std::uint32_t>::max()) {
                throw DataError("feature index out of range");
            }
            record.features.push_back(
                FeatureActivation{static_cast<std::uint32_t>(index), static_cast<float>(pair[1].get<double>())});
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad record field: ") + e.what());
    }
    return record;
}

std::string format_record(const SparseActivationRecord& record) {
    std::string out;
    out.reserve(96 + record.features.size() * 16);
    out += "{\"sentence_id\":";
    out += json(record.sentence_id).dump();
    out += ",\"language\":";
    out += json(record.language).dump();
    out += ",\"layer\":";
    out += std::to_string(record.layer);
    out += ",\"label\":\"";
    out += to_string(record.label);
    out += "\",\"term\":";
    out += record.term ? json(*record.term).dump() : std::string("null");
    out += ",\"features\":[";
    for (std::size_t i = 0; i < record.features.size(); ++i) {
        if (i) out += ',';
        out += '[';
        out += std::to_string(record.features[i].index);
        out += ',';
        append_float(out, record.features[i].value);
        out += ']';
    }
    out += "]}";
    return out;
}

std::optional<Violation> check_record(const SparseActivationRecord& record, const DatasetManifest& manifest) {
    std::vector<Violation> found;
    collect_violations(record, manifest, Violation::kNoRecord, found);
    if (found.empty()) return std::nullopt;
    return found.front();
}

std::vector<SparseActivationRecord> load_records(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<SparseActivationRecord> records;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto record = parse_record(line);
            if (auto violation = check_record(record, manifest)) {
                throw DataError(violation->kind + " (" + violation->detail + ")");
            }
            records.push_back(std::move(record));
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_number) + ": " + e.what());
        }
    }
    return records;
}

void write_records(const std::filesystem::path& path, std::span<const SparseActivationRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    for (const auto& record : records) {
        out << format_record(record) << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

DatasetManifest parse_manifest(std::string_view text) {
    DatasetManifest manifest;
    try {
        const json doc = json::parse(text);
        manifest.schema_version = doc.at("schema_version").get<int>();
        manifest.num_features = doc.at("num_features").get<std::uint32_t>();
        manifest.hidden_dim = doc.at("hidden_dim").get<std::uint32_t>();
        manifest.languages = doc.at("languages").get<std::vector<std::string>>();
        manifest.layers = doc.at("layers").get<std::vector<std::uint32_t>>();
        for (const auto& [language, by_layer] : doc.at("counts").items()) {
            for (const auto& [layer, by_label] : by_layer.items()) {
                for (const auto& [label, n] : by_label.items()) {
                    CountKey key{language, static_cast<std::uint32_t>(std::stoul(layer)), parse_label(label)};
                    manifest.counts[key] = n.get<std::uint64_t>();
                }
            }
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad manifest: ") + e.what());
    } catch (const std::logic_error& e) {
        throw DataError(std::string("bad manifest: ") + e.what());
    }
    if (manifest.schema_version != 1) {
        throw DataError("unsupported manifest schema_version " + std::to_string(manifest.schema_version));
    }
    if (manifest.num_features == 0) throw DataError("bad manifest: num_features must be positive");
    if (manifest.hidden_dim == 0) throw DataError("bad manifest: hidden_dim must be positive");
    for (const auto& language : manifest.languages) {
        if (!is_language_code(language)) throw DataError("bad manifest: '" + language + "' is not a language code");
    }
    return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    try {
        return parse_manifest(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string format_manifest(const DatasetManifest& manifest) {
    json counts = json::object();
    for (const auto& [key, n] : manifest.counts) {
        counts[key.language][std::to_string(key.layer)][std::string(to_string(key.label))] = n;
    }
    json doc = {
        {"schema_version", manifest.schema_version},
        {"num_features", manifest.num_features},
        {"hidden_dim", manifest.hidden_dim},
        {"languages", manifest.languages},
        {"layers", manifest.layers},
        {"counts", counts},
    };
    return doc.dump(2) + "\n";
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    write_file(path, format_manifest(manifest));
}

std::vector<std::byte> encode_matrix(const DenseMatrix& matrix) {
    std::vector<std::byte> out;
    out.reserve(kMatrixHeaderSize + matrix.values().size() * 4);
    for (char c : kMatrixMagic) out.push_back(static_cast<std::byte>(c));
    put_le<std::uint32_t>(out, kMatrixVersion);
    put_le<std::uint64_t>(out, matrix.rows());
    put_le<std::uint64_t>(out, matrix.cols());
    out.push_back(static_cast<std::byte>(kDtypeFloat32));
    for (float v : matrix.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

DenseMatrix decode_matrix(std::span<const std::byte> bytes) {
    if (bytes.size() < kMatrixHeaderSize) throw DataError("truncated matrix header");
    for (std::size_t i = 0; i < kMatrixMagic.size(); ++i) {
        if (std::to_integer<char>(bytes[i]) != kMatrixMagic[i]) throw DataError("bad magic");
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kMatrixVersion) throw DataError("unsupported matrix version " + std::to_string(version));
    const auto rows = get_le<std::uint64_t>(bytes, 8);
    const auto cols = get_le<std::uint64_t>(bytes, 16);
    const auto dtype = std::to_integer<std::uint8_t>(bytes[24]);
    if (dtype != kDtypeFloat32) throw DataError("unsupported dtype code " + std::to_string(dtype));
    if (cols != 0 && rows > (std::numeric_limits<std::uint64_t>::max() / 4) / cols) {
        throw DataError("matrix dimensions overflow");
    }
    const std::uint64_t count = rows * cols;
    const std::uint64_t payload = bytes.size() - kMatrixHeaderSize;
    if (payload < count * 4) throw DataError("truncated payload");
    if (payload > count * 4) throw DataError("trailing bytes after payload");
    std::vector<float> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kMatrixHeaderSize + 4 * i));
    }
    return DenseMatrix(rows, cols, std::move(values));
}

DenseMatrix load_matrix(const std::filesystem::path& path) {
    const std::string raw = read_file(path);
    try {
        return decode_matrix(std::as_bytes(std::span(raw.data(), raw.size())));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_matrix(const std::filesystem::path& path, const DenseMatrix& matrix) {
    const auto bytes = encode_matrix(matrix);
    write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::vector<std::string> load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::string> vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab.push_back(std::move(line));
    }
    return vocab;
}

ValidationReport validate_dataset(std::span<const SparseActivationRecord> records, const DatasetManifest& manifest) {
    ValidationReport report;
    report.total_records = records.size();

    std::map<CountKey, std::pair<std::uint64_t, std::set<std::string>>> observed;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& record = records[i];
        collect_violations(record, manifest, i, report.violations);
        auto& slot = observed[CountKey{record.language, record.layer, record.label}];
        ++slot.first;
        slot.second.insert(record.sentence_id);
    }

    std::set<CountKey> keys;
    for (const auto& [key, slot] : observed) keys.insert(key);
    for (const auto& [key, n] : manifest.counts) keys.insert(key);

    for (const auto& key : keys) {
        GroupCount group{key, 0, 0, std::nullopt};
        if (auto it = observed.find(key); it != observed.end()) {
            group.tokens = it->second.first;
            group.sentences = it->second.second.size();
        }
        const auto label = std::string(to_string(key.label));
        const auto where = key.language + "/" + std::to_string(key.layer) + "/" + label;
        if (auto it = manifest.counts.find(key); it != manifest.counts.end()) {
            group.manifest = it->second;
            if (it->second != group.tokens) {
                report.violations.push_back(Violation{Violation::kNoRecord, "count mismatch",
                                                      where + ": manifest " + std::to_string(it->second) +
                                                          ", records " + std::to_string(group.tokens)});
            }
        } else {
            report.violations.push_back(
                Violation{Violation::kNoRecord, "count missing", where + " has records but no manifest count"});
        }
        report.counts.push_back(std::move(group));
    }
    return report;
}

ActivationStore ActivationStore::from_records(DatasetManifest manifest, std::vector<SparseActivationRecord> records) {
    const auto report = validate_dataset(records, manifest);
    if (!report.clean()) {
        const auto& v = report.violations.front();
        std::string where = v.record == Violation::kNoRecord ? "" : "record " + std::to_string(v.record) + ": ";
        throw DataError(where + v.kind + " (" + v.detail + ")" +
                        (report.violations.size() > 1
                             ? " and " + std::to_string(report.violations.size() - 1) + " more violation(s)"
                             : ""));
    }
    return ActivationStore(std::move(manifest), std::move(records));
}

ActivationStore ActivationStore::load(const std::filesystem::path& records_path, DatasetManifest manifest) {
    auto records = load_records(records_path, manifest);
    return from_records(std::move(manifest), std::move(records));
}

}  // namespace regscope
