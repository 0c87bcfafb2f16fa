#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dvae/tensor.hpp"

namespace dvae {

// A frame sequence: N rows of H*W*C pixels in [0,1], channel-last, plus an
// optional observation mask of the same shape (1 = observed, 0 = hidden).
struct SequenceData {
  Tensor frames;  // N x (H*W*C)
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  Tensor mask;  // empty when fully observed

  std::size_t frame_dim() const { return height * width * channels; }
  std::size_t num_frames() const { return frames.ndim() == 2 ? frames.rows() : 0; }
  bool has_mask() const { return mask.numel() > 0; }
};

// Throws ShapeError/UsageError unless frames (and mask, if any) are
// N x (H*W*C) with values in [0,1] (mask entries exactly 0 or 1).
void validate_sequence(const SequenceData& seq);

// "DVSQ" container: magic, u16 version, u32 N,H,W,C, then N*H*W*C
// little-endian f32, frame-major, row-major, channel-last.
SequenceData load_seq(const std::string& path);
void save_seq(const SequenceData& seq, const std::string& path);

// "DVMK" container: magic, u16 version, u32 N,H,W,C, then one u8 in {0,1}
// per entry. Load returns the mask tensor and checks dims against `like`.
Tensor load_mask(const std::string& path, const SequenceData& like);
void save_mask(const Tensor& mask, std::size_t height, std::size_t width,
               std::size_t channels, const std::string& path);

// Directory of equally-sized binary (P5) PGM files, frames in lexicographic
// filename order, pixel values divided by maxval.
SequenceData load_pgm_dir(const std::string& dir);

// Consecutive-frame pairs (rows t and t+1), masks carried alongside when the
// sequence has them (m1/m2 empty otherwise).
struct PairBatch {
  Tensor y1, y2;  // (N-1) x d
  Tensor m1, m2;
};
PairBatch make_pairs(const SequenceData& seq);

struct TripleBatch {
  Tensor y1, y2, y3;  // (N-2) x d
  Tensor m1, m2, m3;
};
TripleBatch make_triples(const SequenceData& seq);

// Observation masks. salt_pepper hides each entry independently with
// probability p; rectangle hides one full-width horizontal band of
// round(fraction * height) rows (all channels), at a seeded vertical
// position held fixed across frames.
Tensor gen_mask_salt_pepper(std::size_t n_frames, std::size_t height, std::size_t width,
                            std::size_t channels, double p, std::uint64_t seed);
Tensor gen_mask_rectangle(std::size_t n_frames, std::size_t height, std::size_t width,
                          std::size_t channels, double fraction, std::uint64_t seed);

}  // namespace dvae
