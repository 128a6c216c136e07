#pragma once

// Deterministic synthetic datasets shaped like the five benchmark corpora,
// written in each loader's native on-disk format.  Text is generated from
// class-conditional word pools so the label is recoverable from content:
// every record mixes shared filler with a rumour-status pool and a veracity
// pool, making both the R/NR and T/F tasks learnable.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "credence/rng.hpp"

namespace credence::testing {

namespace fixture_detail {

inline const std::vector<std::string>& shared_pool() {
  static const std::vector<std::string> pool = {
      "the",    "a",      "to",     "of",      "and",    "in",     "on",
      "for",    "with",   "people", "today",   "city",   "report", "story",
      "video",  "photo",  "crowd",  "street",  "police", "media",  "update",
      "latest", "news",   "live",   "morning", "night",  "local",  "area",
      "during", "after",  "before", "scene",   "public", "moment", "details",
      "watch",  "share",  "thread", "source",  "account"};
  return pool;
}

inline const std::vector<std::string>& rumour_pool() {
  static const std::vector<std::string> pool = {
      "unconfirmed", "allegedly",  "rumor",     "claims",   "supposedly",
      "circulating", "viral",      "anonymous", "hearsay",  "speculation",
      "whispers",    "reportedly", "suspected", "breaking", "shocking",
      "exclusive",   "leaked",     "insider",   "chatter",  "buzz"};
  return pool;
}

inline const std::vector<std::string>& nonrumour_pool() {
  static const std::vector<std::string> pool = {
      "confirmed",  "official", "statement", "verified",  "spokesperson",
      "authorities", "announced", "press",   "briefing",  "documented",
      "record",     "agency",   "minister",  "department", "published",
      "transcript", "bulletin", "register",  "certified", "formal"};
  return pool;
}

inline const std::vector<std::string>& true_pool() {
  static const std::vector<std::string> pool = {
      "accurate", "correct",  "factual",  "genuine",  "evidence",
      "proven",   "witness",  "footage",  "corroborated", "validated",
      "matches",  "consistent", "checked", "exact",   "reliable",
      "truthful", "substantiated", "authentic", "real", "honest"};
  return pool;
}

inline const std::vector<std::string>& false_pool() {
  static const std::vector<std::string> pool = {
      "fabricated", "hoax",     "debunked",  "misleading", "fake",
      "doctored",   "invented", "baseless",  "distorted",  "bogus",
      "falsified",  "untrue",   "deceptive", "fictional",  "phony",
      "manipulated", "spurious", "groundless", "sham",      "counterfeit"};
  return pool;
}

inline const std::vector<std::string>& unverified_pool() {
  static const std::vector<std::string> pool = {
      "unclear", "pending", "unknown", "disputed", "contested",
      "unsettled", "murky", "ambiguous", "open", "undetermined"};
  return pool;
}

inline const std::vector<std::string>& neutral_pool() {
  static const std::vector<std::string> pool = {
      "weather", "traffic", "event", "game", "music",
      "festival", "market", "school", "park", "museum"};
  return pool;
}

inline std::string pick(const std::vector<std::string>& pool, Rng& rng) {
  return pool[static_cast<std::size_t>(rng.next_below(pool.size()))];
}

// rumour_kind: 0 non-rumour, 1 rumour.  veracity_kind: 0 true, 1 false,
// 2 unverified, 3 none (non-rumours).
inline std::string synth_text(int rumour_kind, int veracity_kind, Rng& rng,
                              int min_words = 8, int max_words = 20) {
  const auto& status =
      rumour_kind == 1 ? rumour_pool() : nonrumour_pool();
  const std::vector<std::string>* verity = &neutral_pool();
  if (veracity_kind == 0) verity = &true_pool();
  if (veracity_kind == 1) verity = &false_pool();
  if (veracity_kind == 2) verity = &unverified_pool();

  const int n = min_words + static_cast<int>(rng.next_below(
                                static_cast<std::uint64_t>(
                                    max_words - min_words + 1)));
  std::string text;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t roll = rng.next_below(4);
    const std::string word = roll < 2   ? pick(shared_pool(), rng)
                             : roll == 2 ? pick(status, rng)
                                         : pick(*verity, rng);
    if (!text.empty()) text += ' ';
    text += word;
  }
  return text;
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace fixture_detail

// covid-csv: header text,label; labels true/false.
inline void write_covid_fixture(const std::string& path, int n_true = 2061,
                                int n_false = 1058,
                                std::uint64_t seed = 1001) {
  using namespace fixture_detail;
  Rng rng(seed);
  std::string csv = "text,label\n";
  for (int i = 0; i < n_true + n_false; ++i) {
    const int veracity = i < n_true ? 0 : 1;
    std::string text = synth_text(0, veracity, rng, 20, 40);
    csv += "\"" + text + "\"," + (veracity == 0 ? "true" : "false") + "\n";
  }
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << csv;
}

// pheme-dir: events round-robin over threads.  When with_annotations is
// true, rumour threads carry annotation.json; veracity counts must then sum
// to n_rumour.
inline void write_pheme_fixture(const std::string& root, int n_events,
                                int n_nonrumour, int n_rumour,
                                bool with_annotations = false, int n_true = 0,
                                int n_false = 0, int n_unverified = 0,
                                std::uint64_t seed = 2002,
                                std::uint64_t id_base = 500000000) {
  using namespace fixture_detail;
  namespace fs = std::filesystem;
  Rng rng(seed);
  std::uint64_t next_id = id_base;

  auto write_thread = [&](const std::string& folder, int rumour_kind,
                          int veracity_kind) {
    const std::string event =
        "event-" + std::to_string(next_id % static_cast<std::uint64_t>(n_events));
    const std::string id = std::to_string(next_id++);
    const fs::path thread = fs::path(root) / event / folder / id;
    nlohmann::json tweet{{"id_str", id},
                         {"text", synth_text(rumour_kind, veracity_kind, rng)}};
    write_file(thread / "source-tweets" / (id + ".json"), tweet.dump());
    if (with_annotations && rumour_kind == 1) {
      const char* v = veracity_kind == 0   ? "true"
                      : veracity_kind == 1 ? "false"
                                           : "unverified";
      nlohmann::json ann{{"veracity", v}};
      write_file(thread / "annotation.json", ann.dump());
    }
  };

  for (int i = 0; i < n_nonrumour; ++i) write_thread("non-rumours", 0, 3);
  if (with_annotations) {
    for (int i = 0; i < n_true; ++i) write_thread("rumours", 1, 0);
    for (int i = 0; i < n_false; ++i) write_thread("rumours", 1, 1);
    for (int i = 0; i < n_unverified; ++i) write_thread("rumours", 1, 2);
    (void)n_rumour;
  } else {
    // Unannotated rumours still get varied veracity flavor in their text.
    for (int i = 0; i < n_rumour; ++i) write_thread("rumours", 1, i % 3);
  }
}

inline void write_pheme1_fixture(const std::string& root) {
  write_pheme_fixture(root, 5, 3822, 1969, false, 0, 0, 0, 2002, 500000000);
}

inline void write_pheme2_fixture(const std::string& root) {
  write_pheme_fixture(root, 9, 4023, 2402, true, 1067, 638, 697, 3003,
                      600000000);
}

// twitter-label-file: label.txt + source_tweets.txt.
inline void write_twitter_fixture(const std::string& root, int n_nonrumor,
                                  int n_true, int n_false, int n_unverified,
                                  std::uint64_t seed = 4004,
                                  std::uint64_t id_base = 700000000) {
  using namespace fixture_detail;
  namespace fs = std::filesystem;
  Rng rng(seed);
  std::uint64_t next_id = id_base;
  std::string labels, texts;

  auto emit = [&](const char* raw, int rumour_kind, int veracity_kind) {
    const std::string id = std::to_string(next_id++);
    labels += std::string(raw) + "\t" + id + "\n";
    texts += id + "\t" + synth_text(rumour_kind, veracity_kind, rng) + "\n";
  };
  for (int i = 0; i < n_nonrumor; ++i) emit("non-rumor", 0, 3);
  for (int i = 0; i < n_true; ++i) emit("true", 1, 0);
  for (int i = 0; i < n_false; ++i) emit("false", 1, 1);
  for (int i = 0; i < n_unverified; ++i) emit("unverified", 1, 2);

  fs::create_directories(root);
  write_file(fs::path(root) / "label.txt", labels);
  write_file(fs::path(root) / "source_tweets.txt", texts);
}

inline void write_twitter15_fixture(const std::string& root) {
  write_twitter_fixture(root, 372, 374, 370, 374, 4004, 700000000);
}

inline void write_twitter16_fixture(const std::string& root) {
  write_twitter_fixture(root, 205, 205, 205, 203, 5005, 800000000);
}

}  // namespace credence::testing
