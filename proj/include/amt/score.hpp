#pragma once

#include "amt/eval.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace amt {

struct Score {
  std::vector<eval::NoteEvent> events;  // sorted by onset
  std::string title;

  void sort();  // stable by (onset, pitch)
  bool operator==(const Score&) const = default;
};

/// JSON Lines, one note per line:
/// {"pitch": int, "onset": float, "offset": float|null, "velocity": float}
void write_notes(const std::filesystem::path& path, const Score& score);
Score read_notes(const std::filesystem::path& path);
std::string notes_to_jsonl(const Score& score);
Score notes_from_jsonl(const std::string& text);

}  // namespace amt
