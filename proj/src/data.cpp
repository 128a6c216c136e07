#include "credence/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "credence/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace credence {

LabelScheme LabelScheme::rumour() { return {"R/NR", "non-rumour", "rumour"}; }
LabelScheme LabelScheme::veracity() { return {"T/F", "true", "false"}; }

LabelScheme LabelScheme::by_name(const std::string& name) {
  if (name == "R/NR" || name == "rumour" || name == "rnr") return rumour();
  if (name == "T/F" || name == "veracity" || name == "tf") return veracity();
  throw std::invalid_argument("unknown label scheme '" + name + "'");
}

int LabelScheme::index_of(const std::string& label) const {
  if (label == class0) return 0;
  if (label == class1) return 1;
  return -1;
}

const std::string& LabelScheme::class_name(int index) const {
  if (index == 0) return class0;
  if (index == 1) return class1;
  throw std::invalid_argument("label scheme has classes 0 and 1 only");
}

namespace {

[[noreturn]] void fail_at(const std::string& file, std::int64_t line,
                          const std::string& what) {
  throw std::runtime_error(file + ":" + std::to_string(line) + ": " + what);
}

[[noreturn]] void fail_file(const std::string& file, const std::string& what) {
  throw std::runtime_error(file + ": " + what);
}

std::string path_stem(const std::string& path) {
  fs::path p(path);
  std::string stem = p.stem().string();
  return stem.empty() ? p.filename().string() : stem;
}

void check_new_id(std::set<std::string>& seen, const Record& r,
                  const std::string& file, std::int64_t line) {
  if (r.id.empty()) {
    if (line >= 0) fail_at(file, line, "empty record id");
    fail_file(file, "empty record id");
  }
  if (!seen.insert(r.id).second) {
    if (line >= 0) fail_at(file, line, "duplicate id '" + r.id + "'");
    fail_file(file, "duplicate id '" + r.id + "'");
  }
}

Dataset finalize(std::vector<Record> records, const LoadOptions& opts,
                 const std::string& path, const std::string& adapter,
                 std::int64_t dropped_unverified) {
  Dataset ds;
  ds.scheme = opts.scheme;
  ds.records = std::move(records);
  ds.manifest.name =
      opts.dataset_name.empty() ? path_stem(path) : opts.dataset_name;
  ds.manifest.total = static_cast<std::int64_t>(ds.records.size());
  ds.manifest.label_counts[opts.scheme.class0] = 0;
  ds.manifest.label_counts[opts.scheme.class1] = 0;
  for (const auto& r : ds.records) ds.manifest.label_counts[r.label] += 1;
  ds.manifest.provenance = adapter + " from " + path +
                           (dropped_unverified > 0
                                ? " (dropped " +
                                      std::to_string(dropped_unverified) +
                                      " unverified)"
                                : "");
  return ds;
}

// canonical-jsonl: one UTF-8 JSON object per line with string fields
// "id", "text", "label", "source" and optional "event".
std::vector<Record> load_canonical_jsonl(const std::string& path,
                                         const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_file(path, "cannot open file");
  std::vector<Record> records;
  std::set<std::string> seen;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      fail_at(path, line_no, "malformed JSON object");
    }
    for (const char* field : {"id", "text", "label", "source"}) {
      if (!obj.contains(field) || !obj[field].is_string()) {
        fail_at(path, line_no,
                std::string("missing or non-string field \"") + field + "\"");
      }
    }
    Record r;
    r.id = obj["id"].get<std::string>();
    r.text = obj["text"].get<std::string>();
    r.label = obj["label"].get<std::string>();
    r.source = obj["source"].get<std::string>();
    if (obj.contains("event")) r.event = obj["event"].get<std::string>();
    r.label_index = opts.scheme.index_of(r.label);
    if (r.label_index < 0) {
      fail_at(path, line_no,
              "unknown label '" + r.label + "' for scheme " + opts.scheme.name);
    }
    check_new_id(seen, r, path, line_no);
    records.push_back(std::move(r));
  }
  return records;
}

// pheme-dir: <root>/<event>/{rumours,non-rumours}/<thread-id>/source-tweets/
// <thread-id>.json holding {"id_str": "...", "text": "..."}.  Rumour threads
// additionally carry <thread-id>/annotation.json with {"veracity":
// "true"|"false"|"unverified"}.  R/NR reads both folders; T/F reads rumours
// only and drops unverified.
std::vector<Record> load_pheme_dir(const std::string& root,
                                   const LoadOptions& opts,
                                   std::int64_t& dropped) {
  if (!fs::is_directory(root)) fail_file(root, "not a directory");
  const bool veracity = opts.scheme.name == LabelScheme::veracity().name;

  auto sorted_subdirs = [](const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  std::vector<Record> records;
  std::set<std::string> seen;
  for (const auto& event_dir : sorted_subdirs(root)) {
    const std::string event = event_dir.filename().string();
    for (const char* folder : {"non-rumours", "rumours"}) {
      const bool is_rumour = std::string(folder) == "rumours";
      if (veracity && !is_rumour) continue;
      for (const auto& thread_dir : sorted_subdirs(event_dir / folder)) {
        const std::string thread_id = thread_dir.filename().string();
        const fs::path tweet_path =
            thread_dir / "source-tweets" / (thread_id + ".json");
        std::ifstream tweet_in(tweet_path, std::ios::binary);
        if (!tweet_in) fail_file(tweet_path.string(), "missing source tweet");
        json tweet = json::parse(tweet_in, nullptr, false);
        if (tweet.is_discarded() || !tweet.is_object() ||
            !tweet.contains("text")) {
          fail_file(tweet_path.string(), "malformed source tweet");
        }

        Record r;
        r.id = tweet.contains("id_str") && tweet["id_str"].is_string()
                   ? tweet["id_str"].get<std::string>()
                   : thread_id;
        r.text = tweet["text"].get<std::string>();
        r.event = event;

        if (veracity) {
          const fs::path ann_path = thread_dir / "annotation.json";
          std::ifstream ann_in(ann_path, std::ios::binary);
          if (!ann_in) fail_file(ann_path.string(), "missing annotation");
          json ann = json::parse(ann_in, nullptr, false);
          if (ann.is_discarded() || !ann.is_object() ||
              !ann.contains("veracity") || !ann["veracity"].is_string()) {
            fail_file(ann_path.string(), "malformed annotation");
          }
          const std::string v = ann["veracity"].get<std::string>();
          if (v == "unverified") {
            ++dropped;
            continue;
          }
          if (opts.scheme.index_of(v) < 0) {
            fail_file(ann_path.string(), "unknown veracity label '" + v + "'");
          }
          r.label = v;
        } else {
          r.label = is_rumour ? opts.scheme.class1 : opts.scheme.class0;
        }
        r.label_index = opts.scheme.index_of(r.label);
        check_new_id(seen, r, tweet_path.string(), -1);
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

// twitter-label-file: <root>/label.txt with "label<TAB>tweet_id" lines where
// label is non-rumor, true, false, or unverified, plus <root>/
// source_tweets.txt with "tweet_id<TAB>text" lines.  R/NR maps non-rumor to
// non-rumour and everything else to rumour; T/F keeps true/false and drops
// the rest.
std::vector<Record> load_twitter_label_file(const std::string& root,
                                            const LoadOptions& opts,
                                            std::int64_t& dropped) {
  const std::string label_path = (fs::path(root) / "label.txt").string();
  const std::string text_path = (fs::path(root) / "source_tweets.txt").string();
  const bool veracity = opts.scheme.name == LabelScheme::veracity().name;

  std::unordered_map<std::string, std::string> texts;
  {
    std::ifstream in(text_path, std::ios::binary);
    if (!in) fail_file(text_path, "cannot open file");
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        fail_at(text_path, line_no, "expected tweet_id<TAB>text");
      }
      const std::string id = line.substr(0, tab);
      if (!texts.emplace(id, line.substr(tab + 1)).second) {
        fail_at(text_path, line_no, "duplicate id '" + id + "'");
      }
    }
  }

  std::vector<Record> records;
  std::set<std::string> seen;
  std::ifstream in(label_path, std::ios::binary);
  if (!in) fail_file(label_path, "cannot open file");
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail_at(label_path, line_no, "expected label<TAB>tweet_id");
    }
    const std::string raw = line.substr(0, tab);
    const std::string id = line.substr(tab + 1);
    if (raw != "non-rumor" && raw != "true" && raw != "false" &&
        raw != "unverified") {
      fail_at(label_path, line_no, "unknown label '" + raw + "'");
    }

    Record r;
    r.id = id;
    if (veracity) {
      if (raw != "true" && raw != "false") {
        ++dropped;
        continue;
      }
      r.label = raw;
    } else {
      r.label =
          raw == "non-rumor" ? opts.scheme.class0 : opts.scheme.class1;
    }
    auto it = texts.find(id);
    if (it == texts.end()) {
      fail_at(label_path, line_no, "id '" + id + "' missing from " + text_path);
    }
    r.text = it->second;
    r.label_index = opts.scheme.index_of(r.label);
    check_new_id(seen, r, label_path, line_no);
    records.push_back(std::move(r));
  }
  return records;
}

// Minimal RFC-4180 row reader: quoted fields, doubled quotes, commas inside
// quotes. Newlines inside quoted fields are not supported.
std::vector<std::string> parse_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

// covid-csv: header row naming at least an id-free (text, label) pair; label
// values are the T/F scheme names.
std::vector<Record> load_covid_csv(const std::string& path,
                                   const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_file(path, "cannot open file");
  std::string line;
  if (!std::getline(in, line)) fail_file(path, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = parse_csv_row(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    }
    return static_cast<std::ptrdiff_t>(-1);
  };
  const std::ptrdiff_t text_col = column(opts.text_column);
  const std::ptrdiff_t label_col = column(opts.label_column);
  if (text_col < 0 || label_col < 0) {
    fail_at(path, 1,
            "header lacks column '" +
                (text_col < 0 ? opts.text_column : opts.label_column) + "'");
  }

  std::vector<Record> records;
  std::set<std::string> seen;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> row = parse_csv_row(line);
    if (static_cast<std::ptrdiff_t>(row.size()) <=
        std::max(text_col, label_col)) {
      fail_at(path, line_no, "row has too few columns");
    }
    Record r;
    r.id = "row-" + std::to_string(line_no);
    r.text = row[static_cast<std::size_t>(text_col)];
    r.label = row[static_cast<std::size_t>(label_col)];
    r.label_index = opts.scheme.index_of(r.label);
    if (r.label_index < 0) {
      fail_at(path, line_no,
              "unknown label '" + r.label + "' for scheme " + opts.scheme.name);
    }
    check_new_id(seen, r, path, line_no);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

Dataset load_dataset(const std::string& path, const std::string& adapter,
                     const LoadOptions& opts) {
  std::int64_t dropped = 0;
  std::vector<Record> records;
  if (adapter == "canonical-jsonl") {
    records = load_canonical_jsonl(path, opts);
  } else if (adapter == "pheme-dir") {
    records = load_pheme_dir(path, opts, dropped);
  } else if (adapter == "twitter-label-file") {
    records = load_twitter_label_file(path, opts, dropped);
  } else if (adapter == "covid-csv") {
    records = load_covid_csv(path, opts);
  } else {
    throw std::invalid_argument("unknown adapter '" + adapter + "'");
  }
  Dataset ds = finalize(std::move(records), opts, path, adapter, dropped);
  const std::string name = ds.manifest.name;
  for (auto& r : ds.records) {
    if (r.source.empty()) r.source = name;
  }
  return ds;
}

void save_canonical(const std::vector<Record>& records,
                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_file(path, "cannot open file for writing");
  for (const auto& r : records) {
    json obj{{"id", r.id},
             {"text", r.text},
             {"label", r.label},
             {"source", r.source}};
    if (!r.event.empty()) obj["event"] = r.event;
    out << obj.dump() << '\n';
  }
}

const char* split_part_name(SplitPart part) {
  switch (part) {
    case SplitPart::train: return "train";
    case SplitPart::val: return "val";
    case SplitPart::test: return "test";
  }
  return "?";
}

std::int64_t SplitAssignment::size(SplitPart part) const {
  std::int64_t n = 0;
  for (const auto& [label, counts] : class_counts) {
    n += counts[static_cast<std::size_t>(part)];
  }
  return n;
}

SplitPart SplitAssignment::part_of(const std::string& id) const {
  auto it = by_id.find(id);
  if (it == by_id.end()) {
    throw std::invalid_argument("split: unknown record id '" + id + "'");
  }
  return it->second;
}

namespace {

// Largest-remainder apportionment of `take` slots across class sizes.
std::vector<std::int64_t> quota_take(std::int64_t take,
                                     const std::vector<std::int64_t>& sizes) {
  const std::int64_t total =
      std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
  std::vector<std::int64_t> out(sizes.size(), 0);
  if (total == 0 || take == 0) return out;
  std::vector<double> remainders(sizes.size());
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double exact = static_cast<double>(take) *
                         static_cast<double>(sizes[i]) /
                         static_cast<double>(total);
    out[i] = static_cast<std::int64_t>(std::floor(exact));
    remainders[i] = exact - std::floor(exact);
    assigned += out[i];
  }
  std::vector<std::size_t> order(sizes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b];
  });
  for (std::size_t k = 0; assigned < take; k = (k + 1) % order.size()) {
    const std::size_t i = order[k];
    if (out[i] < sizes[i]) {
      ++out[i];
      ++assigned;
    }
  }
  return out;
}

void count_assignment(const std::vector<Record>& records,
                      SplitAssignment& assignment) {
  for (const auto& r : records) {
    auto& counts = assignment.class_counts[r.label];
    counts[static_cast<std::size_t>(assignment.by_id.at(r.id))] += 1;
  }
}

}  // namespace

SplitAssignment split(const std::vector<Record>& records, std::uint64_t seed) {
  const auto N = static_cast<std::int64_t>(records.size());
  if (N < 10) {
    throw std::invalid_argument("split: need at least 10 records, got " +
                                std::to_string(N));
  }
  const std::int64_t n_test = N / 10;
  const std::int64_t n_val = (N - n_test) / 4;

  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_label[records[i].label].push_back(i);
  }

  std::vector<std::string> labels;
  std::vector<std::int64_t> sizes;
  for (const auto& [label, idx] : by_label) {
    labels.push_back(label);
    sizes.push_back(static_cast<std::int64_t>(idx.size()));
  }
  const std::vector<std::int64_t> test_take = quota_take(n_test, sizes);
  std::vector<std::int64_t> remaining(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    remaining[i] = sizes[i] - test_take[i];
  }
  const std::vector<std::int64_t> val_take = quota_take(n_val, remaining);

  SplitAssignment assignment;
  assignment.seed = seed;
  Rng root(seed);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    auto& idx = by_label[labels[c]];
    Rng stream = root.child("split." + labels[c]);
    stream.shuffle(idx);
    std::int64_t k = 0;
    for (std::size_t j = 0; j < idx.size(); ++j, ++k) {
      SplitPart part = SplitPart::train;
      if (k < test_take[c]) {
        part = SplitPart::test;
      } else if (k < test_take[c] + val_take[c]) {
        part = SplitPart::val;
      }
      const Record& r = records[idx[j]];
      if (!assignment.by_id.emplace(r.id, part).second) {
        throw std::invalid_argument("split: duplicate record id '" + r.id +
                                    "'");
      }
    }
  }
  count_assignment(records, assignment);
  return assignment;
}

Dataset combine(const std::vector<Dataset>& datasets,
                const LabelScheme& scheme) {
  if (datasets.empty()) {
    throw std::invalid_argument("combine: no datasets");
  }
  Dataset out;
  out.scheme = scheme;
  std::string name;
  for (const auto& ds : datasets) {
    if (!(ds.scheme == scheme)) {
      throw std::invalid_argument("combine: dataset '" + ds.manifest.name +
                                  "' uses scheme " + ds.scheme.name +
                                  ", expected " + scheme.name);
    }
    if (!name.empty()) name += "+";
    name += ds.manifest.name;
    for (const auto& r : ds.records) {
      Record copy = r;
      copy.id = r.source + "/" + r.id;
      out.records.push_back(std::move(copy));
    }
  }
  out.manifest.name = name;
  out.manifest.total = static_cast<std::int64_t>(out.records.size());
  out.manifest.label_counts[scheme.class0] = 0;
  out.manifest.label_counts[scheme.class1] = 0;
  for (const auto& r : out.records) out.manifest.label_counts[r.label] += 1;
  out.manifest.provenance = "combined";
  return out;
}

SplitAssignment combined_split(const std::vector<Dataset>& datasets,
                               std::uint64_t seed) {
  if (datasets.size() < 2) {
    throw std::invalid_argument("combined_split: need at least 2 datasets");
  }

  SplitAssignment assignment;
  assignment.seed = seed;
  Rng root(seed);

  // Stage 1: per-dataset stratified 10% test.
  std::vector<Record> pool;
  std::vector<Record> all;
  for (const auto& ds : datasets) {
    const auto N = static_cast<std::int64_t>(ds.records.size());
    if (N < 10) {
      throw std::invalid_argument("combined_split: dataset '" +
                                  ds.manifest.name + "' has fewer than 10");
    }
    const std::int64_t n_test = N / 10;

    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      by_label[ds.records[i].label].push_back(i);
    }
    std::vector<std::string> labels;
    std::vector<std::int64_t> sizes;
    for (const auto& [label, idx] : by_label) {
      labels.push_back(label);
      sizes.push_back(static_cast<std::int64_t>(idx.size()));
    }
    const std::vector<std::int64_t> test_take = quota_take(n_test, sizes);

    for (std::size_t c = 0; c < labels.size(); ++c) {
      auto& idx = by_label[labels[c]];
      Rng stream =
          root.child("test." + ds.manifest.name + "." + labels[c]);
      stream.shuffle(idx);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        Record r = ds.records[idx[j]];
        r.id = r.source + "/" + r.id;
        all.push_back(r);
        if (static_cast<std::int64_t>(j) < test_take[c]) {
          if (!assignment.by_id.emplace(r.id, SplitPart::test).second) {
            throw std::invalid_argument("combined_split: duplicate id '" +
                                        r.id + "'");
          }
        } else {
          pool.push_back(std::move(r));
        }
      }
    }
  }

  // Stage 2: pooled remainder, stratified 75/25.
  const std::int64_t n_val = static_cast<std::int64_t>(pool.size()) / 4;
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_label[pool[i].label].push_back(i);
  }
  std::vector<std::string> labels;
  std::vector<std::int64_t> sizes;
  for (const auto& [label, idx] : by_label) {
    labels.push_back(label);
    sizes.push_back(static_cast<std::int64_t>(idx.size()));
  }
  const std::vector<std::int64_t> val_take = quota_take(n_val, sizes);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    auto& idx = by_label[labels[c]];
    Rng stream = root.child("pool." + labels[c]);
    stream.shuffle(idx);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const SplitPart part = static_cast<std::int64_t>(j) < val_take[c]
                                 ? SplitPart::val
                                 : SplitPart::train;
      if (!assignment.by_id.emplace(pool[idx[j]].id, part).second) {
        throw std::invalid_argument("combined_split: duplicate id '" +
                                    pool[idx[j]].id + "'");
      }
    }
  }
  count_assignment(all, assignment);
  return assignment;
}

void save_split(const SplitAssignment& assignment, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_file(path, "cannot open file for writing");
  json counts;
  for (const auto& [label, c] : assignment.class_counts) {
    counts[label] = {{"train", c[0]}, {"val", c[1]}, {"test", c[2]}};
  }
  json header{{"seed", assignment.seed}, {"counts", counts}};
  out << header.dump() << '\n';

  // Deterministic order for byte-identical files.
  std::vector<const std::string*> ids;
  ids.reserve(assignment.by_id.size());
  for (const auto& [id, part] : assignment.by_id) ids.push_back(&id);
  std::sort(ids.begin(), ids.end(),
            [](const std::string* a, const std::string* b) { return *a < *b; });
  for (const std::string* id : ids) {
    json row{{"id", *id},
             {"split", split_part_name(assignment.by_id.at(*id))}};
    out << row.dump() << '\n';
  }
}

SplitAssignment load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_file(path, "cannot open file");
  std::string line;
  if (!std::getline(in, line)) fail_file(path, "missing header line");
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.contains("seed")) {
    fail_at(path, 1, "malformed split header");
  }
  SplitAssignment assignment;
  assignment.seed = header["seed"].get<std::uint64_t>();
  if (header.contains("counts") && header["counts"].is_object()) {
    for (const auto& [label, c] : header["counts"].items()) {
      assignment.class_counts[label] = {c.value("train", std::int64_t{0}),
                                        c.value("val", std::int64_t{0}),
                                        c.value("test", std::int64_t{0})};
    }
  }
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.contains("id") || !row.contains("split")) {
      fail_at(path, line_no, "malformed split row");
    }
    const std::string part = row["split"].get<std::string>();
    SplitPart p;
    if (part == "train") {
      p = SplitPart::train;
    } else if (part == "val") {
      p = SplitPart::val;
    } else if (part == "test") {
      p = SplitPart::test;
    } else {
      fail_at(path, line_no, "unknown split '" + part + "'");
    }
    if (!assignment.by_id.emplace(row["id"].get<std::string>(), p).second) {
      fail_at(path, line_no, "duplicate id");
    }
  }
  return assignment;
}

}  // namespace credence
