#include "kvmn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "kvmn/error.hpp"
#include "kvmn/random.hpp"

namespace kvmn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenization and vocabulary

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }
bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

const std::vector<std::string> kReservedNames = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space_byte(c)) {
      ++i;
      continue;
    }
    const bool word = is_word_byte(c);
    std::size_t j = i;
    while (j < text.size()) {
      const auto d = static_cast<unsigned char>(text[j]);
      if (is_space_byte(d) || is_word_byte(d) != word) break;
      ++j;
    }
    std::string tok(text.substr(i, j - i));
    for (char& ch : tok) {
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const auto& name : kReservedNames) add(name);
}

void Vocabulary::add(std::string token) {
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_lists, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& list : token_lists) {
    for (const auto& t : list) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && std::find(kReservedNames.begin(), kReservedNames.end(), tok) == kReservedNames.end()) {
      entries.emplace_back(tok, n);
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, _] : entries) v.add(tok);
  return v;
}

Vocabulary Vocabulary::synthetic(std::size_t size) {
  if (size < kReservedTokens) throw UsageError("synthetic vocabulary needs at least 4 entries");
  Vocabulary v;
  for (std::size_t i = kReservedTokens; i < size; ++i) v.add("w" + std::to_string(i));
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReservedTokens || !std::equal(kReservedNames.begin(), kReservedNames.end(), tokens.begin())) {
    throw DataError("vocabulary must start with the reserved tokens");
  }
  Vocabulary v;
  for (std::size_t i = kReservedTokens; i < tokens.size(); ++i) {
    if (v.index_.count(tokens[i])) throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(std::move(tokens[i]));
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size() + 2);
  out.push_back(kBos);
  for (const auto& t : tokens) out.push_back(id(t));
  out.push_back(kEos);
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId t : ids) {
    if (t == kEos) break;
    if (t == kPad || t == kBos) continue;
    out.push_back(token(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

bool operator==(const DatasetRecord& a, const DatasetRecord& b) {
  if (a.id != b.id || a.frames != b.frames || a.captions != b.captions) return false;
  if (a.regions.has_value() != b.regions.has_value()) return false;
  if (!a.regions) return true;
  const auto& ra = *a.regions;
  const auto& rb = *b.regions;
  if (ra.size() != rb.size()) return false;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    if (ra[i].size() != rb[i].size()) return false;
    for (std::size_t j = 0; j < ra[i].size(); ++j) {
      if (ra[i][j].feature != rb[i][j].feature || ra[i][j].score != rb[i][j].score) return false;
    }
  }
  return true;
}

namespace {

[[noreturn]] void bad_line(std::size_t line_no, const std::string& msg) {
  throw DataError("line " + std::to_string(line_no) + ": " + msg);
}

std::vector<double> number_array(const json& j, std::size_t line_no, const std::string& what) {
  if (!j.is_array() || j.empty()) bad_line(line_no, what + " must be a non-empty array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) bad_line(line_no, what + " must contain only numbers");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad_line(line_no, what + " contains a non-finite number");
    out.push_back(d);
  }
  return out;
}

}  // namespace

DatasetRecord parse_record(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    bad_line(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_line(line_no, "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "frames" && key != "regions" && key != "captions") {
      bad_line(line_no, "unknown field '" + key + "'");
    }
  }

  DatasetRecord r;
  if (!j.contains("id") || !j["id"].is_string()) bad_line(line_no, "'id' must be a string");
  r.id = j["id"].get<std::string>();

  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
    bad_line(line_no, "'frames' must be a non-empty array of feature arrays");
  }
  for (const auto& f : j["frames"]) {
    r.frames.push_back(number_array(f, line_no, "frame"));
    if (r.frames.back().size() != r.frames.front().size()) bad_line(line_no, "frame matrix is not rectangular");
  }

  if (j.contains("regions") && !j["regions"].is_null()) {
    const auto& regs = j["regions"];
    if (!regs.is_array() || regs.size() != r.frames.size()) {
      bad_line(line_no, "'regions' must hold one region list per frame");
    }
    std::vector<std::vector<Region>> all;
    std::size_t dim = 0;
    for (const auto& frame_regions : regs) {
      if (!frame_regions.is_array() || frame_regions.empty()) bad_line(line_no, "each frame needs >= 1 region");
      std::vector<Region> list;
      for (const auto& reg : frame_regions) {
        if (!reg.is_object() || !reg.contains("f") || !reg.contains("s") || !reg["s"].is_number()) {
          bad_line(line_no, "region entries must be {\"f\": [...], \"s\": number}");
        }
        Region x;
        x.feature = number_array(reg["f"], line_no, "region feature");
        x.score = reg["s"].get<double>();
        if (!(x.score >= 0.0) || !std::isfinite(x.score)) bad_line(line_no, "region scores must be finite and >= 0");
        if (dim == 0) dim = x.feature.size();
        if (x.feature.size() != dim) bad_line(line_no, "region features differ in length");
        list.push_back(std::move(x));
      }
      all.push_back(std::move(list));
    }
    r.regions = std::move(all);
  }

  if (!j.contains("captions") || !j["captions"].is_array() || j["captions"].empty()) {
    bad_line(line_no, "'captions' must be a non-empty array of strings");
  }
  for (const auto& c : j["captions"]) {
    if (!c.is_string()) bad_line(line_no, "captions must be strings");
    r.captions.push_back(c.get<std::string>());
  }
  return r;
}

std::string format_record(const DatasetRecord& record) {
  json j;
  j["id"] = record.id;
  j["frames"] = record.frames;
  if (record.regions) {
    json regs = json::array();
    for (const auto& frame_regions : *record.regions) {
      json list = json::array();
      for (const auto& reg : frame_regions) list.push_back({{"f", reg.feature}, {"s", reg.score}});
      regs.push_back(std::move(list));
    }
    j["regions"] = std::move(regs);
  }
  j["captions"] = record.captions;
  return j.dump();
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    out.push_back(parse_record(line, line_no));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset '" + path.string() + "'");
  for (const auto& r : records) out << format_record(r) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Vocabulary build_vocab(std::span<const DatasetRecord> records, std::size_t min_count) {
  std::vector<std::vector<std::string>> lists;
  for (const auto& r : records) {
    for (const auto& c : r.captions) lists.push_back(tokenize(c));
  }
  return Vocabulary::build(lists, min_count);
}

Episode to_episode(const DatasetRecord& record, const Vocabulary& vocab, std::size_t region_top_b) {
  Episode e;
  e.id = record.id;
  const std::size_t t = record.frames.size();
  if (t == 0) throw DataError(record.id + ": no frames");
  const std::size_t d = record.frames.front().size();
  std::vector<double> flat;
  flat.reserve(t * d);
  for (const auto& f : record.frames) {
    if (f.size() != d) throw DataError(record.id + ": frame matrix is not rectangular");
    flat.insert(flat.end(), f.begin(), f.end());
  }
  e.frames = Tensor({t, d}, std::move(flat));
  if (record.regions) {
    try {
      e.values = pool_region_values(*record.regions, region_top_b);
    } catch (const ContractError& err) {
      throw DataError(record.id + ": " + err.what());
    }
  } else {
    e.values = e.frames;
  }
  for (const auto& c : record.captions) {
    auto tokens = tokenize(c);
    e.captions.push_back(vocab.encode(tokens));
  }
  return e;
}

std::vector<Episode> load_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                                  std::size_t region_top_b) {
  std::vector<Episode> out;
  for (const auto& r : read_dataset(path)) out.push_back(to_episode(r, vocab, region_top_b));
  return out;
}

DatasetRecord to_record(const Episode& episode, const Vocabulary& vocab) {
  DatasetRecord r;
  r.id = episode.id;
  const std::size_t t = episode.frames.rows();
  std::vector<std::vector<Region>> regions;
  for (std::size_t i = 0; i < t; ++i) {
    auto f = episode.frames.row(i);
    r.frames.emplace_back(f.begin(), f.end());
    auto v = episode.values.row(i);
    regions.push_back({Region{std::vector<double>(v.begin(), v.end()), 1.0}});
  }
  r.regions = std::move(regions);
  for (const auto& c : episode.captions) {
    std::string text;
    for (const auto& tok : vocab.decode(c)) {
      if (!text.empty()) text += ' ';
      text += tok;
    }
    r.captions.push_back(std::move(text));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

std::string_view to_string(SyntheticTask task) { return task == SyntheticTask::Copy ? "copy" : "recall"; }

SyntheticTask parse_task(std::string_view s) {
  if (s == "copy") return SyntheticTask::Copy;
  if (s == "recall") return SyntheticTask::Recall;
  throw UsageError("unknown task '" + std::string(s) + "' (expected copy or recall)");
}

namespace {

constexpr std::uint64_t kCodebookSeed = 0x6b766d6e636f6465ULL;

void validate(const SyntheticSpec& spec) {
  if (spec.slots == 0) throw UsageError("synthetic episodes need T >= 1");
  if (spec.vocab_size <= kReservedTokens) throw UsageError("synthetic vocab must exceed the 4 reserved ids");
  if (spec.key_dim < 2) throw UsageError("synthetic episodes need d_k >= 2");
  if (spec.value_dim == 0) throw UsageError("synthetic episodes need d_v >= 1");
}

Tensor gaussian_table(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

SyntheticCodebook::SyntheticCodebook(const SyntheticSpec& spec) : spec_(spec), token_width_(spec.key_dim / 2) {
  validate(spec);
  Rng rng(derive_seed(kCodebookSeed, spec.vocab_size, spec.key_dim * 1000 + spec.value_dim));
  token_proj_ = gaussian_table(spec.vocab_size, token_width_, rng);
  value_proj_ = gaussian_table(spec.vocab_size, spec.value_dim, rng);
}

std::vector<double> SyntheticCodebook::token_code(TokenId token) const {
  auto r = token_proj_.row(token);
  return {r.begin(), r.end()};
}

std::vector<double> SyntheticCodebook::value_code(TokenId token) const {
  auto r = value_proj_.row(token);
  return {r.begin(), r.end()};
}

std::vector<double> SyntheticCodebook::position_code(std::size_t position) const {
  const std::size_t width = position_width();
  std::vector<double> out(width);
  for (std::size_t j = 0; j < width; ++j) {
    const double freq = std::pow(10.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(width));
    const double angle = static_cast<double>(position) * freq;
    out[j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return out;
}

std::vector<double> SyntheticCodebook::frame(TokenId token, std::size_t position) const {
  auto out = token_code(token);
  auto pos = position_code(position);
  out.insert(out.end(), pos.begin(), pos.end());
  return out;
}

namespace {

Episode make_episode(const SyntheticSpec& spec, std::uint64_t seed, bool permute, const char* prefix) {
  validate(spec);
  SyntheticCodebook book(spec);
  Rng rng(seed);
  const std::size_t t = spec.slots;
  std::vector<TokenId> slot_tokens(t);
  for (auto& tok : slot_tokens) {
    tok = static_cast<TokenId>(kReservedTokens + rng.below(spec.vocab_size - kReservedTokens));
  }
  // rank[i] = caption position (1-based) of slot i's token
  std::vector<std::size_t> rank(t);
  std::iota(rank.begin(), rank.end(), 1);
  if (permute) {
    for (std::size_t i = t; i > 1; --i) std::swap(rank[i - 1], rank[rng.below(i)]);
  }

  Episode e;
  e.id = std::string(prefix) + "-" + std::to_string(seed);
  e.frames = Tensor({t, spec.key_dim});
  e.values = Tensor({t, spec.value_dim});
  std::vector<TokenId> caption(t + 2, kPad);
  caption.front() = kBos;
  caption.back() = kEos;
  for (std::size_t i = 0; i < t; ++i) {
    auto f = book.frame(slot_tokens[i], rank[i]);
    std::copy(f.begin(), f.end(), e.frames.data().begin() + i * spec.key_dim);
    auto v = book.value_code(slot_tokens[i]);
    std::copy(v.begin(), v.end(), e.values.data().begin() + i * spec.value_dim);
    caption[rank[i]] = slot_tokens[i];
  }
  e.captions.push_back(std::move(caption));
  return e;
}

}  // namespace

Episode gen_copy_episode(const SyntheticSpec& spec, std::uint64_t seed) {
  return make_episode(spec, seed, false, "copy");
}

Episode gen_recall_episode(const SyntheticSpec& spec, std::uint64_t seed) {
  return make_episode(spec, seed, true, "recall");
}

Episode gen_episode(SyntheticTask task, const SyntheticSpec& spec, std::uint64_t seed) {
  return task == SyntheticTask::Copy ? gen_copy_episode(spec, seed) : gen_recall_episode(spec, seed);
}

}  // namespace kvmn
