#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "credence/tensor.hpp"

namespace credence {

struct Vocabulary {
  std::unordered_map<std::string, std::int32_t> token_to_id;
  std::vector<std::string> id_to_token;
  bool lowercase = true;

  std::int32_t pad_id = 0;
  std::int32_t unk_id = 1;
  std::int32_t cls_id = 2;
  std::int32_t sep_id = 3;
  std::int32_t mask_id = 4;

  std::int32_t size() const {
    return static_cast<std::int32_t>(id_to_token.size());
  }
  bool contains(const std::string& token) const {
    return token_to_id.count(token) != 0;
  }
  std::int32_t id_of(const std::string& token) const;
};

struct TokenizedSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> attention_mask;
  std::int32_t true_length = 0;
};

// Learns a subword vocabulary: specials, every observed character (bare and
// "##" continuation forms), then pair merges by descending corpus frequency
// until target_size is reached or no pair occurs at least min_freq times.
// Ties break lexicographically so identical corpora give identical files.
Vocabulary build_vocab(const std::vector<std::string>& corpus,
                       std::int32_t target_size, std::int32_t min_freq = 2,
                       bool lowercase = true);

// Whitespace split, greedy longest-match subword segmentation with "##"
// continuations, CLS/SEP wrapping, truncation to max_len (CLS and final SEP
// always survive), PAD fill.  A word with no covering pieces becomes one UNK.
TokenizedSequence encode(const std::string& text, const Vocabulary& vocab,
                         std::int32_t max_len);

// Inverse of encode for display: drops specials, fuses "##" continuations,
// joins words with single spaces.
std::string decode(const std::vector<std::int32_t>& ids,
                   const Vocabulary& vocab);

// Stacks same-length sequences into [B,T] id and mask tensors (float storage;
// ids are exact below 2^24).
std::pair<Tensor, Tensor> pad_batch(const std::vector<TokenizedSequence>& seqs);

void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path, bool lowercase = true);

}  // namespace credence
