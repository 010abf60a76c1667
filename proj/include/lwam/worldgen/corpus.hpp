#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lwam/campipe/camera.hpp"
#include "lwam/numcore/tensor.hpp"
#include "lwam/worldgen/render.hpp"
#include "lwam/worldgen/world.hpp"

namespace lwam::world {

// Relative frame indices stored for every scenario; each stride pattern selects a subset.
inline const std::vector<int> kStoredFrames{-3, -2, -1, 0, 2, 4, 6, 8};
inline constexpr double kFrameDt = 0.5;

struct FrameRecord {
  int rel = 0;
  double time = 0;
  EgoState ego;
  std::array<cam::Intrinsics, kNumViews> K;
  std::array<cam::Extrinsics, kNumViews> cam_to_world;
};

struct Scenario {
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::E;
  RenderConfig render;
  double anchor_time = 0;
  WorldSpec world;
  std::vector<FrameRecord> frames;  // ordered as kStoredFrames
  Trajectory expert;                // expert plan at the anchor frame

  const FrameRecord& frame(int rel) const;
};

// Runs the expert from a seed-perturbed start and picks an anchor time on the rollout.
Scenario build_scenario(std::uint64_t seed, Difficulty difficulty, const RenderConfig& render);

std::string scenario_dirname(std::size_t index);
std::filesystem::path raster_path(const std::filesystem::path& dir, int rel, int view);
std::filesystem::path teacher_path(const std::filesystem::path& dir, std::uint64_t seed, int rel, int view);

// Writes spec.json, sample.json, rasters and teacher caches; `meta` is written last and marks completion.
void write_scenario(const std::filesystem::path& dir, const Scenario& s);
bool scenario_complete(const std::filesystem::path& dir);
Scenario read_scenario(const std::filesystem::path& dir);

struct GenDataOptions {
  std::uint64_t seed = 0;
  std::size_t count = 64;
  std::vector<Difficulty> mix{Difficulty::E, Difficulty::M, Difficulty::H, Difficulty::X};
  RenderConfig render;
};

// Parses "E,M,H,X" or weighted "E:2,M:1" into the repeating difficulty cycle.
std::vector<Difficulty> parse_difficulty_mix(const std::string& text);

struct GenDataResult {
  std::size_t generated = 0;
  std::size_t skipped = 0;
};

// Idempotent: complete scenarios are left untouched.
GenDataResult generate_corpus(const std::filesystem::path& root, const GenDataOptions& opts);

// Sorted scenario directories of a corpus.
std::vector<std::filesystem::path> list_scenarios(const std::filesystem::path& root);

}  // namespace lwam::world
