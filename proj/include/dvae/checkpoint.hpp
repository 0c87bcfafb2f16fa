#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dvae/dvae.hpp"

namespace dvae {

// Training provenance stored in the checkpoint header (values that do not
// affect the parameters are deliberately excluded so equal runs produce
// byte-identical files).
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
  // Frame geometry of the training data (0 = unknown), so synthesis can
  // shape its output without the original sequence.
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

// "DVMD" container: magic, u16 version, u32 JSON-header length, JSON header
// (dims, layer specs, sigma_y2, lambda(s), order, meta), then all parameters
// as little-endian f64 in a fixed order: dynamic-layer blocks (A,B or
// F1..F5), decoder layers (weight row-major, then bias, per layer), encoder
// layers likewise.
void save_checkpoint(const DvaeModel& model, const CheckpointMeta& meta,
                     const std::string& path);
void save_checkpoint2(const Dvae2Model& model, const CheckpointMeta& meta,
                      const std::string& path);

struct LoadedCheckpoint {
  int order = 1;
  DvaeModel model;    // populated when order == 1
  Dvae2Model model2;  // populated when order == 2
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dvae
