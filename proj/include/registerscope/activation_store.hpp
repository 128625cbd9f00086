#pragma once

// Data model and file I/O for target-token activation records, dataset
// manifests and dense float32 matrices.
//
// Records are one observation per target-token occurrence. Only active SAE
// features are stored, as (index, value) pairs with strictly ascending index
// and value > 0.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace regscope {

enum class Label : std::uint8_t { slang = 0, literal = 1 };

std::string_view to_string(Label label) noexcept;
/// Throws DataError on anything other than "slang" / "literal".
Label parse_label(std::string_view text);

struct FeatureActivation {
    std::uint32_t index = 0;
    float value = 0.0f;

    friend bool operator==(const FeatureActivation&, const FeatureActivation&) = default;
};

struct SparseActivationRecord {
    std::string sentence_id;
    std::string language;
    std::uint32_t layer = 0;
    Label label = Label::slang;
    std::optional<std::string> term;
    std::vector<FeatureActivation> features;

    friend bool operator==(const SparseActivationRecord&, const SparseActivationRecord&) = default;
};

struct CountKey {
    std::string language;
    std::uint32_t layer = 0;
    Label label = Label::slang;

    friend auto operator<=>(const CountKey&, const CountKey&) = default;
};

struct DatasetManifest {
    int schema_version = 1;
    std::uint32_t num_features = 0;
    std::uint32_t hidden_dim = 0;
    std::vector<std::string> languages;
    std::vector<std::uint32_t> layers;
    std::map<CountKey, std::uint64_t> counts;

    bool has_language(std::string_view language) const noexcept;
    bool has_layer(std::uint32_t layer) const noexcept;
    std::uint64_t total_count() const noexcept;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Row-major float32 matrix. Decoder weights are F x d, the unembedding d x V.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<const float> row(std::size_t r) const noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }

    float operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
    float& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }

    const std::vector<float>& values() const noexcept { return values_; }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> values_;
};

struct Violation {
    static constexpr std::size_t kNoRecord = static_cast<std::size_t>(-1);

    std::size_t record = kNoRecord;  // index into the record list, or kNoRecord
    std::string kind;                // short machine-readable tag
    std::string detail;
};

struct GroupCount {
    CountKey key;
    std::uint64_t tokens = 0;     // records (target-token occurrences)
    std::uint64_t sentences = 0;  // distinct sentence ids
    std::optional<std::uint64_t> manifest;
};

struct ValidationReport {
    std::vector<GroupCount> counts;
    std::vector<Violation> violations;
    std::uint64_t total_records = 0;

    bool clean() const noexcept { return violations.empty(); }
};

/// Parses one NDJSON line. Structural errors throw DataError; manifest-relative
/// checks are separate (see check_record).
SparseActivationRecord parse_record(std::string_view line);
std::string format_record(const SparseActivationRecord& record);

/// First invariant violation of `record` relative to `manifest`, if any.
std::optional<Violation> check_record(const SparseActivationRecord& record, const DatasetManifest& manifest);

/// Loads an NDJSON record file; throws DataError naming the 1-based line of
/// the first bad record.
std::vector<SparseActivationRecord> load_records(const std::filesystem::path& path, const DatasetManifest& manifest);
void write_records(const std::filesystem::path& path, std::span<const SparseActivationRecord> records);

DatasetManifest parse_manifest(std::string_view text);
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// `SAEM` binary format: magic, u32 version (1), u64 rows, u64 cols,
/// u8 dtype (0 = float32), then row-major little-endian payload.
DenseMatrix load_matrix(const std::filesystem::path& path);
DenseMatrix decode_matrix(std::span<const std::byte> bytes);
std::vector<std::byte> encode_matrix(const DenseMatrix& matrix);
void write_matrix(const std::filesystem::path& path, const DenseMatrix& matrix);

/// One token per line; line number (0-based) is the token id.
std::vector<std::string> load_vocab(const std::filesystem::path& path);

/// Never throws on bad data: every violation is listed in the report.
ValidationReport validate_dataset(std::span<const SparseActivationRecord> records, const DatasetManifest& manifest);

/// Immutable, validated collection of records plus its manifest. Everything
/// downstream takes one of these, so record invariants hold by construction.
class ActivationStore {
public:
    /// Validates; throws DataError describing the first violation.
    static ActivationStore from_records(DatasetManifest manifest, std::vector<SparseActivationRecord> records);
    static ActivationStore load(const std::filesystem::path& records_path, DatasetManifest manifest);

    const DatasetManifest& manifest() const noexcept { return manifest_; }
    std::span<const SparseActivationRecord> records() const noexcept { return records_; }
    std::uint32_t num_features() const noexcept { return manifest_.num_features; }

private:
    ActivationStore(DatasetManifest manifest, std::vector<SparseActivationRecord> records)
        : manifest_(std::move(manifest)), records_(std::move(records)) {}

    DatasetManifest manifest_;
    std::vector<SparseActivationRecord> records_;
};

}  // namespace regscope
