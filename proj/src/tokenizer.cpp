#include "credence/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace credence {

namespace {

const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
constexpr std::int32_t kNumSpecials = 5;

std::string lowercased(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::vector<std::string> split_words(const std::string& text, bool lowercase) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(c)) : c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

void add_token(Vocabulary& vocab, const std::string& token) {
  if (vocab.token_to_id.count(token)) return;
  vocab.token_to_id.emplace(token, vocab.size());
  vocab.id_to_token.push_back(token);
}

std::string strip_continuation(const std::string& sym) {
  return sym.rfind("##", 0) == 0 ? sym.substr(2) : sym;
}

}  // namespace

std::int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  if (it == token_to_id.end()) {
    throw std::invalid_argument("vocabulary: unknown token '" + token + "'");
  }
  return it->second;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus,
                       std::int32_t target_size, std::int32_t min_freq,
                       bool lowercase) {
  if (target_size <= kNumSpecials + 256) {
    throw std::invalid_argument(
        "build_vocab: target_size must exceed specials + 256 = " +
        std::to_string(kNumSpecials + 256));
  }

  // Word frequencies, then each word as a symbol sequence to be merged.
  std::map<std::string, std::int64_t> word_freq;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text, lowercase)) word_freq[w] += 1;
  }
  if (word_freq.empty()) {
    throw std::invalid_argument("build_vocab: empty corpus");
  }

  Vocabulary vocab;
  vocab.lowercase = lowercase;
  for (const char* s : kSpecials) add_token(vocab, s);

  struct Entry {
    std::vector<std::string> symbols;
    std::int64_t freq;
  };
  std::vector<Entry> entries;
  std::set<std::string> alphabet;
  for (const auto& [word, freq] : word_freq) {
    Entry e;
    e.freq = freq;
    for (std::size_t i = 0; i < word.size(); ++i) {
      std::string sym = i == 0 ? word.substr(i, 1) : "##" + word.substr(i, 1);
      e.symbols.push_back(sym);
      alphabet.insert(word.substr(i, 1));
    }
    entries.push_back(std::move(e));
  }
  // Both bare and continuation forms of every seen character, sorted, so no
  // in-vocabulary word can dead-end mid-segmentation.
  for (const auto& ch : alphabet) add_token(vocab, ch);
  for (const auto& ch : alphabet) add_token(vocab, "##" + ch);

  while (vocab.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
    for (const auto& e : entries) {
      for (std::size_t i = 0; i + 1 < e.symbols.size(); ++i) {
        pair_freq[{e.symbols[i], e.symbols[i + 1]}] += e.freq;
      }
    }
    // Highest frequency wins; the map's lexicographic order breaks ties.
    std::pair<std::string, std::string> best;
    std::int64_t best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best = pair;
        best_freq = freq;
      }
    }
    if (best_freq < min_freq) break;

    const std::string merged = best.first + strip_continuation(best.second);
    for (auto& e : entries) {
      std::vector<std::string> next;
      next.reserve(e.symbols.size());
      for (std::size_t i = 0; i < e.symbols.size(); ++i) {
        if (i + 1 < e.symbols.size() && e.symbols[i] == best.first &&
            e.symbols[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(e.symbols[i]);
        }
      }
      e.symbols = std::move(next);
    }
    add_token(vocab, merged);
  }
  return vocab;
}

TokenizedSequence encode(const std::string& text, const Vocabulary& vocab,
                         std::int32_t max_len) {
  if (max_len < 2) {
    throw std::invalid_argument("encode: max_len must be at least 2");
  }
  std::vector<std::int32_t> pieces;
  for (const auto& word : split_words(text, vocab.lowercase)) {
    std::vector<std::int32_t> word_pieces;
    std::size_t start = 0;
    bool ok = true;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::int32_t match = -1;
      while (end > start) {
        std::string piece = word.substr(start, end - start);
        if (start > 0) piece = "##" + piece;
        auto it = vocab.token_to_id.find(piece);
        if (it != vocab.token_to_id.end()) {
          match = it->second;
          break;
        }
        --end;
      }
      if (match < 0) {
        ok = false;
        break;
      }
      word_pieces.push_back(match);
      start = end;
    }
    if (ok) {
      pieces.insert(pieces.end(), word_pieces.begin(), word_pieces.end());
    } else {
      pieces.push_back(vocab.unk_id);
    }
  }

  const std::size_t keep =
      std::min(pieces.size(), static_cast<std::size_t>(max_len - 2));
  TokenizedSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(vocab.cls_id);
  seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.begin() + keep);
  seq.ids.push_back(vocab.sep_id);
  seq.true_length = static_cast<std::int32_t>(seq.ids.size());
  seq.ids.resize(max_len, vocab.pad_id);
  seq.attention_mask.assign(max_len, 0);
  std::fill(seq.attention_mask.begin(),
            seq.attention_mask.begin() + seq.true_length, 1);
  return seq;
}

std::string decode(const std::vector<std::int32_t>& ids,
                   const Vocabulary& vocab) {
  std::string out;
  for (std::int32_t id : ids) {
    if (id == vocab.pad_id || id == vocab.cls_id || id == vocab.sep_id ||
        id == vocab.mask_id) {
      continue;
    }
    if (id < 0 || id >= vocab.size()) {
      throw std::invalid_argument("decode: id " + std::to_string(id) +
                                  " out of range");
    }
    const std::string& token = vocab.id_to_token[id];
    if (token.rfind("##", 0) == 0) {
      out += token.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += token;
    }
  }
  return out;
}

std::pair<Tensor, Tensor> pad_batch(const std::vector<TokenizedSequence>& seqs) {
  if (seqs.empty()) {
    throw std::invalid_argument("pad_batch: empty batch");
  }
  const std::size_t T = seqs[0].ids.size();
  for (const auto& s : seqs) {
    if (s.ids.size() != T || s.attention_mask.size() != T) {
      throw std::invalid_argument(
          "pad_batch: sequences disagree on padded length");
    }
  }
  const auto B = static_cast<std::int64_t>(seqs.size());
  std::vector<float> ids(B * T), mask(B * T);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      ids[b * T + t] = static_cast<float>(seqs[b].ids[t]);
      mask[b * T + t] = static_cast<float>(seqs[b].attention_mask[t]);
    }
  }
  const auto Ti = static_cast<std::int64_t>(T);
  return {Tensor::from_data({B, Ti}, std::move(ids), false),
          Tensor::from_data({B, Ti}, std::move(mask), false)};
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_vocab: cannot open '" + path + "'");
  }
  for (const auto& token : vocab.id_to_token) out << token << '\n';
}

Vocabulary load_vocab(const std::string& path, bool lowercase) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_vocab: cannot open '" + path + "'");
  }
  Vocabulary vocab;
  vocab.lowercase = lowercase;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    add_token(vocab, line);
  }
  const char* names[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  std::int32_t* slots[] = {&vocab.pad_id, &vocab.unk_id, &vocab.cls_id,
                           &vocab.sep_id, &vocab.mask_id};
  for (int i = 0; i < 5; ++i) {
    auto it = vocab.token_to_id.find(names[i]);
    if (it == vocab.token_to_id.end()) {
      throw std::runtime_error("load_vocab: missing special token " +
                               std::string(names[i]));
    }
    *slots[i] = it->second;
  }
  if (vocab.pad_id != 0) {
    throw std::runtime_error("load_vocab: [PAD] must have id 0");
  }
  return vocab;
}

}  // namespace credence
