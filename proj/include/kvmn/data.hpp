#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kvmn/layers.hpp"
#include "kvmn/memory.hpp"
#include "kvmn/tensor.hpp"

namespace kvmn {

/// Splits text into maximal runs of word characters (alphanumerics,
/// underscore, non-ASCII bytes) and maximal runs of other non-space
/// characters, lowercasing ASCII letters.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  /// Only the reserved <pad>, <bos>, <eos>, <unk> entries.
  Vocabulary();

  /// Tokens with count >= min_count, most frequent first, ties
  /// lexicographic.
  static Vocabulary build(std::span<const std::vector<std::string>> token_lists, std::size_t min_count = 1);
  /// Reserved ids plus "w4" ... "w<size-1>".
  static Vocabulary synthetic(std::size_t size);
  /// Rebuilds from an id-ordered token list whose first four entries are the
  /// reserved tokens.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// BOS + ids + EOS.
  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  /// Surface tokens with PAD/BOS/EOS removed; stops at the first EOS.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// One captioned input: T frame features, T values and one or more captions
/// (BOS ... EOS id sequences).
struct Episode {
  std::string id;
  Tensor frames;
  Tensor values;
  std::vector<std::vector<TokenId>> captions;
};

/// One line of a dataset file before tokenization.
struct DatasetRecord {
  std::string id;
  std::vector<std::vector<double>> frames;
  std::optional<std::vector<std::vector<Region>>> regions;
  std::vector<std::string> captions;

  friend bool operator==(const DatasetRecord& a, const DatasetRecord& b);
};

/// Parses and validates one JSON line; `line_no` is used in error messages.
DatasetRecord parse_record(std::string_view line, std::size_t line_no);
std::string format_record(const DatasetRecord& record);

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records);

/// Vocabulary over the tokenized captions of `records`.
Vocabulary build_vocab(std::span<const DatasetRecord> records, std::size_t min_count = 1);

/// Values come from region pooling when regions are present, otherwise the
/// frame features double as values.
Episode to_episode(const DatasetRecord& record, const Vocabulary& vocab, std::size_t region_top_b = 5);
std::vector<Episode> load_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                                  std::size_t region_top_b = 5);

/// Writes an episode back as a record: values become single regions with
/// score 1 so that pooling reproduces them exactly.
DatasetRecord to_record(const Episode& episode, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Synthetic episodes.

enum class SyntheticTask { Copy, Recall };

std::string_view to_string(SyntheticTask task);
SyntheticTask parse_task(std::string_view s);

struct SyntheticSpec {
  std::size_t slots = 8;        // T
  std::size_t vocab_size = 12;  // includes the reserved ids
  std::size_t key_dim = 16;     // frame feature width
  std::size_t value_dim = 16;
};

/// Fixed random codes shared by all episodes with the same spec.
///
/// A frame is [token code ; position code]: the first key_dim/2 entries are a
/// Gaussian projection of the slot token, the rest a sinusoidal code of the
/// caption position at which the slot's token is emitted.
class SyntheticCodebook {
 public:
  explicit SyntheticCodebook(const SyntheticSpec& spec);

  std::size_t token_width() const noexcept { return token_width_; }
  std::size_t position_width() const noexcept { return spec_.key_dim - token_width_; }
  std::vector<double> token_code(TokenId token) const;
  std::vector<double> position_code(std::size_t position) const;  // 1-based
  std::vector<double> value_code(TokenId token) const;
  std::vector<double> frame(TokenId token, std::size_t position) const;

 private:
  SyntheticSpec spec_;
  std::size_t token_width_;
  Tensor token_proj_;  // vocab x token_width
  Tensor value_proj_;  // vocab x value_dim
};

/// Caption BOS t_1 ... t_T EOS where t_i is slot i's token.
Episode gen_copy_episode(const SyntheticSpec& spec, std::uint64_t seed);
/// Caption emits slot tokens in a random order; slot i's position code holds
/// the caption position of its token.
Episode gen_recall_episode(const SyntheticSpec& spec, std::uint64_t seed);
Episode gen_episode(SyntheticTask task, const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace kvmn
