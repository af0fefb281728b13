#include "udmt/tokenizer.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "udmt/special_tokens.hpp"

namespace udmt {

int Vocab::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<int> Vocab::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(const std::string& token) const {
  auto found = find(token);
  if (!found) throw std::out_of_range(fmt::format("vocab: unknown token '{}'", token));
  return *found;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range(fmt::format("vocab: id {} outside vocabulary of size {}", id, tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t n = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (n == 0 || i + n > text.size()) throw std::invalid_argument(fmt::format("malformed UTF-8 at byte {}", i));
    for (std::size_t k = 1; k < n; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2) {
        throw std::invalid_argument(fmt::format("malformed UTF-8 at byte {}", i));
      }
    }
    out.push_back(text.substr(i, n));
    i += n;
  }
  return out;
}

namespace {

const char* const kSpecialNames[] = {"<pad>", "<s>", "</s>", "<mask>"};

std::string tag_token(const std::string& language) { return "<2" + language + ">"; }

// Characters of one text as BPE chunks; each space starts a new chunk and is written as the marker.
std::vector<std::vector<std::string>> chunk_text(const std::string& text) {
  std::vector<std::vector<std::string>> chunks;
  for (auto& ch : utf8_chars(text)) {
    if (ch == kSpaceMarker) throw std::invalid_argument("text contains the reserved word-boundary character U+2581");
    if (ch == " ") {
      chunks.push_back({kSpaceMarker});
    } else {
      if (chunks.empty()) chunks.emplace_back();
      chunks.back().push_back(ch);
    }
  }
  return chunks;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

// Left-to-right, non-overlapping replacement of (left, right) by left+right.
void apply_merge(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

void check_languages(const std::vector<std::string>& languages) {
  std::set<std::string> seen;
  for (const auto& l : languages) {
    if (l.empty() || l.find_first_of(" \t\n<>") != std::string::npos) {
      throw std::invalid_argument(fmt::format("invalid language name '{}'", l));
    }
    if (!seen.insert(l).second) throw std::invalid_argument(fmt::format("duplicate language '{}'", l));
  }
}

}  // namespace

Tokenizer::Tokenizer(TokenizerMode mode, std::vector<std::string> languages)
    : mode_(mode), languages_(std::move(languages)) {
  check_languages(languages_);
  for (const char* s : kSpecialNames) vocab_.add(s);
  for (const auto& l : languages_) vocab_.add(tag_token(l));
}

Tokenizer Tokenizer::train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size,
                               std::vector<std::string> languages) {
  if (corpus.empty()) throw std::invalid_argument("bpe_train: empty corpus");
  Tokenizer tok(TokenizerMode::kBpe, std::move(languages));

  std::map<std::vector<std::string>, std::size_t> word_counts;
  std::set<std::string> alphabet;
  for (const auto& line : corpus) {
    for (auto& chunk : chunk_text(line)) {
      alphabet.insert(chunk.begin(), chunk.end());
      ++word_counts[chunk];
    }
  }
  if (target_vocab_size <= alphabet.size() + tok.num_special_tokens()) {
    throw std::invalid_argument(fmt::format("bpe_train: target vocab size {} must exceed alphabet ({}) plus special "
                                            "tokens ({})",
                                            target_vocab_size, alphabet.size(), tok.num_special_tokens()));
  }
  for (const auto& ch : alphabet) tok.vocab_.add(ch);
  tok.alphabet_size_ = alphabet.size();

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words(word_counts.begin(), word_counts.end());
  while (tok.vocab_.size() < target_vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += count;
    }
    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    const std::pair<const std::pair<std::string, std::string>, std::size_t>* best = nullptr;
    for (const auto& entry : pairs) {
      if (!best || entry.second > best->second) best = &entry;
    }
    if (!best || best->second < 2) break;
    const auto [left, right] = best->first;
    const auto merged = left + right;
    tok.merge_rank_.emplace(best->first, tok.merges_.size());
    tok.merges_.emplace_back(left, right);
    tok.vocab_.add(merged);
    for (auto& [symbols, count] : words) apply_merge(symbols, left, right);
  }
  return tok;
}

Tokenizer Tokenizer::build_atomic(std::span<const std::string> corpus, std::vector<std::string> languages) {
  Tokenizer tok(TokenizerMode::kAtomic, std::move(languages));
  std::set<std::string> tokens;
  for (const auto& line : corpus) {
    for (auto& t : split_whitespace(line)) tokens.insert(t);
  }
  for (const auto& t : tokens) {
    if (tok.vocab_.find(t)) throw std::invalid_argument(fmt::format("corpus token '{}' collides with a special token", t));
    tok.vocab_.add(t);
  }
  tok.alphabet_size_ = tokens.size();
  return tok;
}

int Tokenizer::language_tag(const std::string& language) const {
  auto it = std::find(languages_.begin(), languages_.end(), language);
  if (it == languages_.end()) throw std::invalid_argument(fmt::format("unknown language '{}'", language));
  return kFirstLanguageTagId + static_cast<int>(it - languages_.begin());
}

std::vector<int> Tokenizer::encode_chunk(const std::vector<std::string>& chars) const {
  std::vector<std::string> symbols = chars;
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == merges_.size()) break;
    apply_merge(symbols, merges_[best_rank].first, merges_[best_rank].second);
  }
  std::vector<int> ids;
  for (const auto& s : symbols) ids.push_back(vocab_.id(s));
  return ids;
}

std::vector<int> Tokenizer::encode(const std::string& text, const std::optional<std::string>& target_lang) const {
  std::vector<int> ids;
  if (target_lang) ids.push_back(language_tag(*target_lang));
  const auto first_learned = static_cast<int>(num_special_tokens());
  if (mode_ == TokenizerMode::kAtomic) {
    for (const auto& t : split_whitespace(text)) {
      auto id = vocab_.find(t);
      if (!id || *id < first_learned) throw std::invalid_argument(fmt::format("encode: unknown token '{}'", t));
      ids.push_back(*id);
    }
  } else {
    auto chunks = chunk_text(text);
    std::set<std::string> unknown;
    for (const auto& chunk : chunks) {
      for (const auto& ch : chunk) {
        auto id = vocab_.find(ch);
        if (!id || *id < first_learned) unknown.insert(ch == kSpaceMarker ? " " : ch);
      }
    }
    if (!unknown.empty()) {
      std::string list;
      for (const auto& u : unknown) list += (list.empty() ? "'" : ", '") + u + "'";
      throw std::invalid_argument(fmt::format("encode: characters outside the alphabet: {}", list));
    }
    for (const auto& chunk : chunks) {
      auto part = encode_chunk(chunk);
      ids.insert(ids.end(), part.begin(), part.end());
    }
  }
  ids.push_back(kEosId);
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  const auto first_learned = static_cast<int>(num_special_tokens());
  std::string out;
  for (int id : ids) {
    const auto& tok = vocab_.token(id);
    if (id < first_learned) continue;
    if (mode_ == TokenizerMode::kAtomic) {
      if (!out.empty()) out += ' ';
      out += tok;
    } else {
      out += tok;
    }
  }
  if (mode_ == TokenizerMode::kBpe) {
    const std::string marker = kSpaceMarker;
    std::string spaced;
    for (std::size_t i = 0; i < out.size();) {
      if (out.compare(i, marker.size(), marker) == 0) {
        spaced += ' ';
        i += marker.size();
      } else {
        spaced += out[i++];
      }
    }
    return spaced;
  }
  return out;
}

void Tokenizer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream vocab(dir / "vocab.txt");
  std::ofstream merges(dir / "merges.txt");
  if (!vocab || !merges) throw std::runtime_error(fmt::format("cannot write tokenizer files in {}", dir.string()));
  for (const auto& t : vocab_.tokens()) vocab << t << '\n';
  merges << "#udmt-tokenizer 1 " << (mode_ == TokenizerMode::kBpe ? "bpe" : "atomic");
  for (const auto& l : languages_) merges << ' ' << l;
  merges << '\n';
  for (const auto& [l, r] : merges_) merges << l << ' ' << r << '\n';
  if (!vocab || !merges) throw std::runtime_error(fmt::format("failed writing tokenizer files in {}", dir.string()));
}

Tokenizer Tokenizer::load(const std::filesystem::path& dir) {
  std::ifstream merges_in(dir / "merges.txt");
  std::ifstream vocab_in(dir / "vocab.txt");
  if (!merges_in || !vocab_in) throw std::runtime_error(fmt::format("missing tokenizer files in {}", dir.string()));
  std::string header;
  std::getline(merges_in, header);
  auto fields = split_whitespace(header);
  if (fields.size() < 3 || fields[0] != "#udmt-tokenizer" || fields[1] != "1") {
    throw std::runtime_error(fmt::format("{}: unrecognized merges header", (dir / "merges.txt").string()));
  }
  TokenizerMode mode;
  if (fields[2] == "bpe") {
    mode = TokenizerMode::kBpe;
  } else if (fields[2] == "atomic") {
    mode = TokenizerMode::kAtomic;
  } else {
    throw std::runtime_error(fmt::format("unknown tokenizer mode '{}'", fields[2]));
  }
  Tokenizer tok(mode, std::vector<std::string>(fields.begin() + 3, fields.end()));

  std::vector<std::string> lines;
  for (std::string line; std::getline(vocab_in, line);) lines.push_back(line);
  if (lines.size() < tok.num_special_tokens()) throw std::runtime_error("vocab.txt: missing special tokens");
  for (std::size_t i = 0; i < tok.num_special_tokens(); ++i) {
    if (lines[i] != tok.vocab_.token(static_cast<int>(i))) {
      throw std::runtime_error(fmt::format("vocab.txt line {}: expected '{}', found '{}'", i + 1,
                                           tok.vocab_.token(static_cast<int>(i)), lines[i]));
    }
  }
  for (std::size_t i = tok.num_special_tokens(); i < lines.size(); ++i) {
    if (tok.vocab_.find(lines[i])) throw std::runtime_error(fmt::format("vocab.txt line {}: duplicate token", i + 1));
    tok.vocab_.add(lines[i]);
  }
  std::size_t line_no = 1;
  for (std::string line; std::getline(merges_in, line);) {
    ++line_no;
    // Symbols never contain a plain space, so the single space is the separator.
    const auto sep = line.find(' ');
    if (sep == std::string::npos || sep == 0 || sep + 1 == line.size() || line.find(' ', sep + 1) != std::string::npos) {
      throw std::runtime_error(fmt::format("merges.txt line {}: expected 'left right'", line_no));
    }
    const std::vector<std::string> parts = {line.substr(0, sep), line.substr(sep + 1)};
    if (!tok.vocab_.find(parts[0] + parts[1])) {
      throw std::runtime_error(fmt::format("merges.txt line {}: merged symbol missing from vocab", line_no));
    }
    tok.merge_rank_.emplace(std::make_pair(parts[0], parts[1]), tok.merges_.size());
    tok.merges_.emplace_back(parts[0], parts[1]);
  }
  tok.alphabet_size_ = tok.vocab_.size() - tok.num_special_tokens() - tok.merges_.size();
  return tok;
}

}  // namespace udmt
