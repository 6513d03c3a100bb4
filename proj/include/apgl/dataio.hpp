#pragma once

// Interaction-log ingestion, k-core filtering, dense indexing and
// leave-one-out sequence splits.

#include "apgl/container.hpp"
#include "apgl/types.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace apgl {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct InteractionLog {
  std::vector<Interaction> records;
};

struct ParseOptions {
  char delimiter = '\t';
  bool strict = false;
};

struct ParseResult {
  InteractionLog log;
  std::size_t malformed_lines = 0;
  std::vector<std::string> warnings;
};

ParseResult parse_log(const std::filesystem::path& path, const ParseOptions& options = {});
ParseResult parse_log_text(const std::string& text, const ParseOptions& options = {});

void write_log(const std::filesystem::path& path, const InteractionLog& log, char delimiter = '\t');

/// Iteratively drops users and items with fewer than `min_count`
/// interactions until every remaining user and item has at least that many.
InteractionLog five_core_filter(const InteractionLog& log, int min_count = 5);

/// Per-user chronological item sequences with leave-one-out views.
/// Users are 1-based: sequences()[u - 1] belongs to user u.
class SequenceStore {
 public:
  SequenceStore() = default;
  SequenceStore(std::vector<std::vector<ItemId>> sequences, int max_len);

  int max_len() const { return max_len_; }
  int num_users() const { return static_cast<int>(sequences_.size()); }

  std::span<const ItemId> full(UserId user) const;
  std::span<const ItemId> train_view(UserId user) const;
  ItemId valid_target(UserId user) const;
  ItemId test_target(UserId user) const;
  /// Train view followed by the validation target.
  std::span<const ItemId> test_input(UserId user) const;

  const std::vector<std::vector<ItemId>>& sequences() const { return sequences_; }

 private:
  const std::vector<ItemId>& at(UserId user) const;

  std::vector<std::vector<ItemId>> sequences_;
  int max_len_ = 0;
};

/// Left-pads (or left-truncates) to exactly `length` entries.
std::vector<ItemId> left_pad(std::span<const ItemId> items, int length);

struct Dataset {
  int num_users = 0;
  int num_items = 0;
  std::vector<std::string> user_raw_ids;  // index u - 1
  std::vector<std::string> item_raw_ids;  // index i - 1
  SequenceStore sequences;

  /// Id used for masked positions in augmented views; never ranked.
  ItemId mask_item() const { return num_items + 1; }
  Container to_container() const;
  static Dataset from_container(const Container& c);
};

/// Assigns dense ids in first-appearance order and keeps the most recent
/// `max_len + 2` interactions per user.
Dataset build_dataset(const InteractionLog& log, int max_len);

using Rng = std::mt19937_64;

/// Uniform draw from {1..num_items} minus the items of `history`.
ItemId sample_negative(Rng& rng, std::span<const ItemId> history, int num_items);

}  // namespace apgl
