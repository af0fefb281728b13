#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace udmt {

/// Token string <-> id table. Ids are dense and assigned in insertion order.
class Vocab {
 public:
  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

enum class TokenizerMode { kBpe, kAtomic };

/// Word-boundary marker standing in for a space inside BPE symbols (U+2581).
inline constexpr const char* kSpaceMarker = "\xE2\x96\x81";

/// Shared source-target vocabulary: pad, bos, eos, mask, then one <2xx> tag
/// per language, then learned symbols.
///
/// kBpe splits text into chunks that begin at each space (the space written
/// as the U+2581 marker), starts from single characters and applies the merge
/// list in rank order, so decoding is plain concatenation. kAtomic maps each
/// whitespace-separated token to one id and decodes by joining with spaces.
class Tokenizer {
 public:
  /// Greedy pair merges until the vocabulary reaches target_vocab_size or no
  /// pair occurs twice. Pair counts include overlapping occurrences; ties go
  /// to the lexicographically smallest (left, right).
  static Tokenizer train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size,
                             std::vector<std::string> languages);
  /// One id per distinct whitespace token, in lexicographic order.
  static Tokenizer build_atomic(std::span<const std::string> corpus, std::vector<std::string> languages);

  /// [<2lang>] + subword ids + [eos]. Throws on characters (or atomic tokens)
  /// outside the vocabulary, naming them.
  std::vector<int> encode(const std::string& text, const std::optional<std::string>& target_lang = {}) const;
  /// Drops special tokens and joins the rest. Throws on ids outside the vocab.
  std::string decode(std::span<const int> ids) const;

  int language_tag(const std::string& language) const;
  const std::vector<std::string>& languages() const { return languages_; }
  /// pad, bos, eos, mask and the language tags.
  std::size_t num_special_tokens() const { return 4 + languages_.size(); }

  TokenizerMode mode() const { return mode_; }
  const Vocab& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  /// Writes vocab.txt (one token per line, line number = id) and merges.txt
  /// (a "#udmt-tokenizer 1 <mode> <languages...>" header, then "left right" per line).
  void save(const std::filesystem::path& dir) const;
  static Tokenizer load(const std::filesystem::path& dir);

 private:
  Tokenizer(TokenizerMode mode, std::vector<std::string> languages);
  std::vector<int> encode_chunk(const std::vector<std::string>& symbols) const;

  TokenizerMode mode_;
  std::vector<std::string> languages_;
  Vocab vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
  std::size_t alphabet_size_ = 0;
};

/// Splits UTF-8 text into code points; throws on malformed input.
std::vector<std::string> utf8_chars(const std::string& text);

}  // namespace udmt
