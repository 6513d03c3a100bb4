#include "apgl/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace apgl {
namespace {

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool parse_record(std::string_view line, char delim, Interaction& out) {
  auto fields = split(line, delim);
  if (fields.size() < 3 || fields[0].empty() || fields[1].empty()) return false;
  std::int64_t ts = 0;
  auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), ts);
  if (ec != std::errc() || ptr != fields[2].data() + fields[2].size()) return false;
  out = {std::string(fields[0]), std::string(fields[1]), ts};
  return true;
}

}  // namespace

ParseResult parse_log_text(const std::string& text, const ParseOptions& options) {
  ParseResult result;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Interaction rec;
    if (!parse_record(line, options.delimiter, rec)) {
      ++result.malformed_lines;
      if (options.strict) {
        throw Error("malformed line " + std::to_string(line_no) + ": '" + line + "'");
      }
      continue;
    }
    result.log.records.push_back(std::move(rec));
  }
  if (result.malformed_lines > 0) {
    result.warnings.push_back("skipped " + std::to_string(result.malformed_lines) +
                              " malformed line(s)");
  }
  if (result.log.records.empty()) result.warnings.push_back("log contains no records");
  return result;
}

ParseResult parse_log(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read interaction log " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_log_text(buf.str(), options);
}

void write_log(const std::filesystem::path& path, const InteractionLog& log, char delimiter) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& r : log.records) {
    out << r.user << delimiter << r.item << delimiter << r.timestamp << '\n';
  }
}

InteractionLog five_core_filter(const InteractionLog& log, int min_count) {
  if (min_count < 1) throw Error("min_count must be >= 1");
  std::vector<char> keep(log.records.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string_view, int> user_count, item_count;
    for (std::size_t i = 0; i < log.records.size(); ++i) {
      if (!keep[i]) continue;
      ++user_count[log.records[i].user];
      ++item_count[log.records[i].item];
    }
    for (std::size_t i = 0; i < log.records.size(); ++i) {
      if (!keep[i]) continue;
      const auto& r = log.records[i];
      if (user_count[r.user] < min_count || item_count[r.item] < min_count) {
        keep[i] = 0;
        changed = true;
      }
    }
  }
  InteractionLog out;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    if (keep[i]) out.records.push_back(log.records[i]);
  }
  if (out.records.empty()) {
    throw Error(std::to_string(min_count) + "-core filter removed all " +
                std::to_string(log.records.size()) + " records");
  }
  return out;
}

SequenceStore::SequenceStore(std::vector<std::vector<ItemId>> sequences, int max_len)
    : sequences_(std::move(sequences)), max_len_(max_len) {
  for (std::size_t u = 0; u < sequences_.size(); ++u) {
    if (sequences_[u].size() < 3) {
      throw Error("user " + std::to_string(u + 1) + " has fewer than 3 interactions");
    }
  }
}

const std::vector<ItemId>& SequenceStore::at(UserId user) const {
  if (user < 1 || user > num_users()) throw Error("unknown user id " + std::to_string(user));
  return sequences_[static_cast<std::size_t>(user - 1)];
}

std::span<const ItemId> SequenceStore::full(UserId user) const { return at(user); }

std::span<const ItemId> SequenceStore::train_view(UserId user) const {
  const auto& s = at(user);
  return std::span<const ItemId>(s).first(s.size() - 2);
}

ItemId SequenceStore::valid_target(UserId user) const {
  const auto& s = at(user);
  return s[s.size() - 2];
}

ItemId SequenceStore::test_target(UserId user) const { return at(user).back(); }

std::span<const ItemId> SequenceStore::test_input(UserId user) const {
  const auto& s = at(user);
  return std::span<const ItemId>(s).first(s.size() - 1);
}

std::vector<ItemId> left_pad(std::span<const ItemId> items, int length) {
  std::vector<ItemId> out(static_cast<std::size_t>(length), kPaddingItem);
  const std::size_t n = std::min(items.size(), out.size());
  std::copy(items.end() - static_cast<std::ptrdiff_t>(n), items.end(), out.end() - n);
  return out;
}

Dataset build_dataset(const InteractionLog& log, int max_len) {
  if (max_len < 1) throw Error("max sequence length must be >= 1");
  Dataset ds;
  std::unordered_map<std::string, UserId> user_index;
  std::unordered_map<std::string, ItemId> item_index;
  std::vector<std::vector<std::pair<std::int64_t, ItemId>>> events;
  for (const auto& r : log.records) {
    auto [uit, new_user] = user_index.try_emplace(r.user, ds.num_users + 1);
    if (new_user) {
      ++ds.num_users;
      ds.user_raw_ids.push_back(r.user);
      events.emplace_back();
    }
    auto [iit, new_item] = item_index.try_emplace(r.item, ds.num_items + 1);
    if (new_item) {
      ++ds.num_items;
      ds.item_raw_ids.push_back(r.item);
    }
    events[static_cast<std::size_t>(uit->second - 1)].emplace_back(r.timestamp, iit->second);
  }
  std::vector<std::vector<ItemId>> seqs;
  seqs.reserve(events.size());
  const std::size_t keep = static_cast<std::size_t>(max_len) + 2;
  for (auto& ev : events) {
    std::stable_sort(ev.begin(), ev.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t start = ev.size() > keep ? ev.size() - keep : 0;
    std::vector<ItemId> s;
    for (std::size_t i = start; i < ev.size(); ++i) s.push_back(ev[i].second);
    seqs.push_back(std::move(s));
  }
  ds.sequences = SequenceStore(std::move(seqs), max_len);
  return ds;
}

namespace {

void put_strings(Container& c, const std::string& prefix, const std::vector<std::string>& strs) {
  std::vector<std::uint64_t> offsets{0};
  std::vector<std::uint32_t> bytes;
  for (const auto& s : strs) {
    for (unsigned char ch : s) bytes.push_back(ch);
    offsets.push_back(bytes.size());
  }
  const std::uint64_t offsets_len = offsets.size();
  c.put_u64(prefix + ".offsets", {offsets_len}, std::move(offsets));
  const std::uint64_t bytes_len = bytes.size();
  c.put_u32(prefix + ".bytes", {bytes_len}, std::move(bytes));
}

std::vector<std::string> get_strings(const Container& c, const std::string& prefix) {
  const auto& offsets = c.u64(prefix + ".offsets");
  const auto& bytes = c.u32(prefix + ".bytes");
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    std::string s;
    for (auto k = offsets[i]; k < offsets[i + 1]; ++k) s.push_back(static_cast<char>(bytes[k]));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Container Dataset::to_container() const {
  Container c;
  c.put_count("dataset.num_users", static_cast<std::uint64_t>(num_users));
  c.put_count("dataset.num_items", static_cast<std::uint64_t>(num_items));
  c.put_count("dataset.max_len", static_cast<std::uint64_t>(sequences.max_len()));
  std::vector<std::uint64_t> offsets{0};
  std::vector<std::uint32_t> items;
  for (const auto& s : sequences.sequences()) {
    for (auto v : s) items.push_back(static_cast<std::uint32_t>(v));
    offsets.push_back(items.size());
  }
  const std::uint64_t offsets_len = offsets.size();
  c.put_u64("sequences.offsets", {offsets_len}, std::move(offsets));
  const std::uint64_t items_len = items.size();
  c.put_u32("sequences.items", {items_len}, std::move(items));
  put_strings(c, "users.raw", user_raw_ids);
  put_strings(c, "items.raw", item_raw_ids);
  return c;
}

Dataset Dataset::from_container(const Container& c) {
  Dataset ds;
  ds.num_users = static_cast<int>(c.count("dataset.num_users"));
  ds.num_items = static_cast<int>(c.count("dataset.num_items"));
  const auto max_len = static_cast<int>(c.count("dataset.max_len"));
  const auto& offsets = c.u64("sequences.offsets");
  const auto& items = c.u32("sequences.items");
  std::vector<std::vector<ItemId>> seqs;
  for (std::size_t u = 0; u + 1 < offsets.size(); ++u) {
    seqs.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(offsets[u]),
                      items.begin() + static_cast<std::ptrdiff_t>(offsets[u + 1]));
  }
  if (static_cast<int>(seqs.size()) != ds.num_users) throw Error("dataset user count mismatch");
  ds.sequences = SequenceStore(std::move(seqs), max_len);
  ds.user_raw_ids = get_strings(c, "users.raw");
  ds.item_raw_ids = get_strings(c, "items.raw");
  return ds;
}

ItemId sample_negative(Rng& rng, std::span<const ItemId> history, int num_items) {
  std::unordered_set<ItemId> seen;
  for (auto v : history) {
    if (v >= 1 && v <= num_items) seen.insert(v);
  }
  if (static_cast<std::size_t>(num_items) <= seen.size()) {
    throw Error("cannot sample a negative: history covers all " + std::to_string(num_items) +
                " items");
  }
  std::uniform_int_distribution<ItemId> dist(1, num_items);
  while (true) {
    const ItemId v = dist(rng);
    if (!seen.contains(v)) return v;
  }
}

}  // namespace apgl
