#include "amt/score.hpp"

#include "amt/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace amt {
namespace {

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

}  // namespace

void Score::sort() {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.onset < b.onset || (a.onset == b.onset && a.midi_pitch < b.midi_pitch);
  });
}

std::string notes_to_jsonl(const Score& score) {
  std::string out;
  for (const auto& e : score.events) {
    out += "{\"pitch\": " + std::to_string(e.midi_pitch) + ", \"onset\": " + format_real(e.onset) +
           ", \"offset\": " + (e.offset ? format_real(*e.offset) : std::string("null")) +
           ", \"velocity\": " + format_real(e.intensity) + "}\n";
  }
  return out;
}

Score notes_from_jsonl(const std::string& text) {
  Score score;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kParse, where + ex.what());
    }
    require(j.is_object(), ErrorCode::kParse, where + "expected a JSON object");
    require(j.contains("pitch") && j["pitch"].is_number_integer(), ErrorCode::kParse,
            where + "missing integer \"pitch\"");
    require(j.contains("onset") && j["onset"].is_number(), ErrorCode::kParse,
            where + "missing numeric \"onset\"");
    eval::NoteEvent e;
    e.midi_pitch = j["pitch"].get<int>();
    e.onset = j["onset"].get<double>();
    if (j.contains("offset") && !j["offset"].is_null()) {
      require(j["offset"].is_number(), ErrorCode::kParse, where + "\"offset\" must be a number or null");
      e.offset = j["offset"].get<double>();
    }
    if (j.contains("velocity")) {
      require(j["velocity"].is_number(), ErrorCode::kParse, where + "\"velocity\" must be a number");
      e.intensity = j["velocity"].get<double>();
    }
    try {
      eval::validate(e);
    } catch (const Error& ex) {
      fail(ErrorCode::kParse, where + ex.what());
    }
    score.events.push_back(e);
  }
  score.sort();
  return score;
}

void write_notes(const std::filesystem::path& path, const Score& score) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << notes_to_jsonl(score);
  require(out.good(), ErrorCode::kIo, "write failed: " + path.string());
}

Score read_notes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Score s = notes_from_jsonl(ss.str());
  s.title = path.stem().string();
  return s;
}

}  // namespace amt
