#pragma once

#include "aime/data/episode.hpp"

#include <string>

namespace aime::data {

/// Writes a store as one directory: store.txt (name + action-free flag),
/// index.txt (episode file stems in order), and per episode a named-array
/// container, a text metadata sidecar, and — for action-free stores that
/// recorded oracle actions — a separate oracle container.
void save_store(const EpisodeStore& store, const std::string& dir);

/// Inverse of save_store; reproduces every field exactly.
EpisodeStore load_store(const std::string& dir);

}  // namespace aime::data
