#pragma once

// Shared helpers for the test suites: attribute generators, the inverse
// description parser used for round-trip checks, fixture planting for the
// gateway, and transport doubles.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sera/bank.hpp"
#include "sera/jsonl.hpp"
#include "sera/llm.hpp"
#include "sera/scenario.hpp"

namespace sera::test {

inline std::filesystem::path unique_temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("sera_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) : path(unique_temp_dir(tag)) {}
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// ---------------------------------------------------------------------------
// Random attribute generation
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& tag_pool() {
  static const std::vector<std::string> pool = {
      "occluded_pedestrian", "aggressive_cut_in", "stopped_lead_vehicle", "red_light",
      "school_zone",         "jaywalker",         "heavy_traffic",        "wet_road",
      "glare",               "narrow_lane",
  };
  return pool;
}

inline ScenarioAttributes random_attributes(std::mt19937_64& gen, bool with_note = false) {
  ScenarioAttributes a;
  a.weather = static_cast<Weather>(gen() % 4);
  a.time = static_cast<TimeOfDay>(gen() % 4);
  a.location = static_cast<Location>(gen() % 5);
  const std::size_t n_tags = gen() % 4;
  for (std::size_t i = 0; i < n_tags; ++i) a.scene_tags.push_back(tag_pool()[gen() % tag_pool().size()]);
  if (with_note && gen() % 2 == 0) {
    static const char* notes[] = {"Dense traffic builds near the exit",
                                  "A delivery van partially blocks the shoulder",
                                  "Visibility drops sharply past the crest"};
    a.scene_note = notes[gen() % 3];
  }
  return normalize(std::move(a));
}

// ---------------------------------------------------------------------------
// Inverse parser for the fixed description template. Test-side oracle for the
// attribute -> text -> attribute round trip; intentionally independent of the
// renderer beyond the surface-form tables.
// ---------------------------------------------------------------------------

inline std::string reverse_tag_surface(const std::string& surface) {
  std::string s = surface;
  std::replace(s.begin(), s.end(), ' ', '_');
  return s;
}

inline ScenarioAttributes parse_description(const std::string& text) {
  ScenarioAttributes a;
  std::size_t pos = 0;
  auto expect = [&](const std::string& token) {
    if (text.compare(pos, token.size(), token) != 0)
      throw std::runtime_error("parse: expected '" + token + "' at " + std::to_string(pos));
    pos += token.size();
  };
  auto read_until = [&](const std::string& stop) {
    std::size_t end = text.find(stop, pos);
    if (end == std::string::npos) throw std::runtime_error("parse: missing '" + stop + "'");
    std::string out = text.substr(pos, end - pos);
    pos = end;
    return out;
  };

  expect("The weather is ");
  a.weather = weather_from_token(read_until("."));
  expect(". It is ");
  a.time = time_from_token(read_until("."));
  expect(". The route passes through ");
  const Location locations[] = {Location::kUrbanIntersection, Location::kHighway,
                                Location::kRoundabout, Location::kMergeRamp,
                                Location::kResidential};
  bool matched = false;
  for (Location l : locations) {
    std::string surface = std::string(location_surface(l)) + ".";
    if (text.compare(pos, surface.size(), surface) == 0) {
      a.location = l;
      pos += surface.size();
      matched = true;
      break;
    }
  }
  if (!matched) throw std::runtime_error("parse: unknown location surface");

  const std::string scene_prefix = " The scene involves ";
  if (text.compare(pos, scene_prefix.size(), scene_prefix) == 0) {
    pos += scene_prefix.size();
    std::string tags = read_until(".");
    pos += 1;
    std::size_t start = 0;
    while (start <= tags.size()) {
      std::size_t comma = tags.find(", ", start);
      std::string tag = tags.substr(start, comma == std::string::npos ? comma : comma - start);
      a.scene_tags.push_back(reverse_tag_surface(tag));
      if (comma == std::string::npos) break;
      start = comma + 2;
    }
  }
  if (pos < text.size()) {
    if (text[pos] == ' ') ++pos;
    a.scene_note = text.substr(pos);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Gateway doubles and fixture planting
// ---------------------------------------------------------------------------

// Counts every network operation; optionally fails or returns a canned body.
class CountingTransport : public HttpTransport {
 public:
  explicit CountingTransport(std::string body = "", bool fail = false)
      : body_(std::move(body)), fail_(fail) {}

  HttpResult post_json(const std::string&, const std::string&, const std::string&,
                       const std::string&, int) override {
    ++calls;
    if (fail_) return HttpResult{false, 0, "", "connection refused"};
    return HttpResult{true, 200, body_, ""};
  }

  int calls = 0;

 private:
  std::string body_;
  bool fail_;
};

inline std::string chat_body_with_content(const std::string& content) {
  Json j{{"choices", Json::array({Json{{"message", Json{{"content", content}}}}})}};
  return j.dump();
}

// Writes a replay fixture for the given task under dir.
inline void plant_chat_fixture(const std::filesystem::path& dir, const LlmTask& task,
                               const std::string& model, const std::string& content) {
  std::filesystem::create_directories(dir);
  const std::string key = LlmClient::request_hash(task, model);
  Json fx{{"kind", "chat"}, {"response", content}};
  write_file((dir / (key + ".json")).string(), fx.dump(2) + "\n");
}

inline LlmHandle replay_handle(const std::filesystem::path& fixture_dir) {
  LlmHandle h;
  h.mode = LlmMode::kReplay;
  h.fixture_dir = fixture_dir.string();
  return h;
}

// A record whose text is the plain template rendering of its attributes.
inline ScenarioRecord record_of(Weather w, TimeOfDay t, Location l,
                                std::vector<std::string> tags, std::string id = "") {
  ScenarioAttributes a;
  a.weather = w;
  a.time = t;
  a.location = l;
  a.scene_tags = std::move(tags);
  return make_record(std::move(a), std::move(id));
}

}  // namespace sera::test
