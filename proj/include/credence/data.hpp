#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace credence {

struct LabelScheme {
  std::string name;    // "R/NR" or "T/F"
  std::string class0;  // non-rumour / true
  std::string class1;  // rumour / false

  static LabelScheme rumour();    // R/NR
  static LabelScheme veracity();  // T/F
  static LabelScheme by_name(const std::string& name);

  // 0, 1, or -1 when the string is neither class.
  int index_of(const std::string& label) const;
  const std::string& class_name(int index) const;
  bool operator==(const LabelScheme& other) const {
    return name == other.name && class0 == other.class0 &&
           class1 == other.class1;
  }
};

struct Record {
  std::string id;
  std::string text;
  std::string label;  // one of the scheme's two class names
  std::string source;
  std::string event;
  int label_index = 0;
};

struct DatasetManifest {
  std::string name;
  std::int64_t total = 0;
  std::map<std::string, std::int64_t> label_counts;
  std::string provenance;
};

struct Dataset {
  std::vector<Record> records;
  DatasetManifest manifest;
  LabelScheme scheme;
};

struct LoadOptions {
  LabelScheme scheme = LabelScheme::rumour();
  std::string dataset_name;        // defaults to the path stem
  std::string text_column = "text";    // covid-csv
  std::string label_column = "label";  // covid-csv
};

// Adapters: "pheme-dir", "twitter-label-file", "covid-csv",
// "canonical-jsonl".  Formats are documented alongside each loader in the
// implementation; errors name the offending file (and line where lines
// exist).  T/F-scheme loads drop unverified items.
Dataset load_dataset(const std::string& path, const std::string& adapter,
                     const LoadOptions& opts = {});

void save_canonical(const std::vector<Record>& records,
                    const std::string& path);

enum class SplitPart { train = 0, val = 1, test = 2 };
const char* split_part_name(SplitPart part);

struct SplitAssignment {
  std::unordered_map<std::string, SplitPart> by_id;
  std::uint64_t seed = 0;
  // label -> {train, val, test} counts
  std::map<std::string, std::array<std::int64_t, 3>> class_counts;

  std::int64_t size(SplitPart part) const;
  SplitPart part_of(const std::string& id) const;
};

// |test| = floor(N/10); |val| = floor(0.25*(N-|test|)); train = rest.
// Stratified per label via largest-remainder quotas over seeded per-class
// shuffles; deterministic given (records, seed).
SplitAssignment split(const std::vector<Record>& records, std::uint64_t seed);

// Concatenates datasets sharing a scheme; ids become "source/id".
Dataset combine(const std::vector<Dataset>& datasets,
                const LabelScheme& scheme);

// Reserves each dataset's stratified 10% test first, then splits the pooled
// remainder 75/25.  Ids follow combine()'s prefixing, so origin tags stay
// recoverable from the records.
SplitAssignment combined_split(const std::vector<Dataset>& datasets,
                               std::uint64_t seed);

// One header line {"seed":...,"counts":{...}} then one {"id":...,"split":...}
// line per record.
void save_split(const SplitAssignment& assignment, const std::string& path);
SplitAssignment load_split(const std::string& path);

}  // namespace credence
