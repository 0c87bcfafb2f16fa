#include "dvae/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/prng.hpp"

namespace dvae {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path);
  return buf;
}

// Little-endian scalar reader with byte-offset diagnostics.
class Reader {
 public:
  Reader(std::vector<unsigned char> buf, std::string path)
      : buf_(std::move(buf)), path_(std::move(path)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > buf_.size())
      throw FormatError(path_ + ": truncated while reading " + what + " at byte offset " +
                        std::to_string(pos_) + " (file has " + std::to_string(buf_.size()) +
                        " bytes)");
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v =
        static_cast<std::uint16_t>(buf_[pos_] | (static_cast<std::uint16_t>(buf_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  void expect_magic(const char* magic) {
    need(4, "magic");
    if (std::memcmp(buf_.data() + pos_, magic, 4) != 0)
      throw FormatError(path_ + ": bad magic at byte offset 0 (expected \"" +
                        std::string(magic) + "\")");
    pos_ += 4;
  }
  const std::string& path() const { return path_; }

 private:
  std::vector<unsigned char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u16(std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    bytes(b, 4);
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    u32(bits);
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failure on " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

constexpr std::uint16_t kSeqVersion = 1;
constexpr std::uint16_t kMaskVersion = 1;

}  // namespace

void validate_sequence(const SequenceData& seq) {
  if (seq.frames.ndim() != 2) throw ShapeError("sequence frames must be N x (H*W*C)");
  if (seq.height == 0 || seq.width == 0 || seq.channels == 0)
    throw UsageError("sequence dimensions must be positive");
  if (seq.frames.cols() != seq.frame_dim())
    throw ShapeError("sequence frame width " + std::to_string(seq.frames.cols()) +
                     " != H*W*C = " + std::to_string(seq.frame_dim()));
  for (std::size_t i = 0; i < seq.frames.numel(); ++i) {
    const double v = seq.frames[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw UsageError("frame value out of [0,1] at flat index " + std::to_string(i));
  }
  if (seq.has_mask()) {
    if (!seq.mask.same_shape(seq.frames)) throw ShapeError("mask shape != frames shape");
    for (std::size_t i = 0; i < seq.mask.numel(); ++i)
      if (seq.mask[i] != 0.0 && seq.mask[i] != 1.0)
        throw UsageError("mask entries must be exactly 0 or 1");
  }
}

SequenceData load_seq(const std::string& path) {
  Reader r(read_file(path), path);
  r.expect_magic("DVSQ");
  const std::uint16_t version = r.u16("version");
  if (version != kSeqVersion)
    throw FormatError(path + ": unsupported sequence version " + std::to_string(version));
  const std::uint32_t n = r.u32("frame count");
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  const std::uint32_t c = r.u32("channels");
  if (n == 0) throw FormatError(path + ": empty sequence (N=0 in header)");
  if (h == 0 || w == 0 || c == 0)
    throw FormatError(path + ": zero dimension in header (H=" + std::to_string(h) +
                      " W=" + std::to_string(w) + " C=" + std::to_string(c) + ")");
  const std::size_t d = static_cast<std::size_t>(h) * w * c;
  SequenceData seq;
  seq.height = h;
  seq.width = w;
  seq.channels = c;
  seq.frames = Tensor(n, d);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
    const std::size_t at = r.offset();
    const double v = r.f32("pixel data");
    if (!(v >= 0.0 && v <= 1.0))
      throw FormatError(path + ": pixel value " + std::to_string(v) +
                        " out of [0,1] at byte offset " + std::to_string(at));
    seq.frames[i] = v;
  }
  if (r.remaining() != 0)
    throw FormatError(path + ": " + std::to_string(r.remaining()) +
                      " trailing bytes after pixel data at byte offset " +
                      std::to_string(r.offset()));
  return seq;
}

void save_seq(const SequenceData& seq, const std::string& path) {
  if (seq.frames.ndim() != 2) throw ShapeError("save_seq: frames must be N x (H*W*C)");
  if (seq.height == 0 || seq.width == 0 || seq.channels == 0)
    throw UsageError("save_seq: dimensions must be positive");
  if (seq.frames.cols() != seq.frame_dim())
    throw ShapeError("save_seq: frame width != H*W*C");
  Writer w(path);
  w.bytes("DVSQ", 4);
  w.u16(kSeqVersion);
  w.u32(static_cast<std::uint32_t>(seq.num_frames()));
  w.u32(static_cast<std::uint32_t>(seq.height));
  w.u32(static_cast<std::uint32_t>(seq.width));
  w.u32(static_cast<std::uint32_t>(seq.channels));
  for (std::size_t i = 0; i < seq.frames.numel(); ++i) {
    const double v = seq.frames[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw UsageError("save_seq: frame value out of [0,1] at flat index " + std::to_string(i));
    w.f32(static_cast<float>(v));
  }
  w.close();
}

Tensor load_mask(const std::string& path, const SequenceData& like) {
  Reader r(read_file(path), path);
  r.expect_magic("DVMK");
  const std::uint16_t version = r.u16("version");
  if (version != kMaskVersion)
    throw FormatError(path + ": unsupported mask version " + std::to_string(version));
  const std::uint32_t n = r.u32("frame count");
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  const std::uint32_t c = r.u32("channels");
  if (n != like.num_frames() || h != like.height || w != like.width || c != like.channels)
    throw UsageError(path + ": mask dims " + std::to_string(n) + "x" + std::to_string(h) + "x" +
                     std::to_string(w) + "x" + std::to_string(c) +
                     " do not match the sequence");
  const std::size_t d = static_cast<std::size_t>(h) * w * c;
  Tensor mask(n, d);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
    const std::size_t at = r.offset();
    const std::uint8_t b = r.u8("mask data");
    if (b > 1)
      throw FormatError(path + ": mask byte " + std::to_string(int(b)) +
                        " not in {0,1} at byte offset " + std::to_string(at));
    mask[i] = b;
  }
  if (r.remaining() != 0)
    throw FormatError(path + ": trailing bytes after mask data at byte offset " +
                      std::to_string(r.offset()));
  return mask;
}

void save_mask(const Tensor& mask, std::size_t height, std::size_t width,
               std::size_t channels, const std::string& path) {
  if (mask.ndim() != 2 || mask.cols() != height * width * channels)
    throw ShapeError("save_mask: mask must be N x (H*W*C)");
  Writer w(path);
  w.bytes("DVMK", 4);
  w.u16(kMaskVersion);
  w.u32(static_cast<std::uint32_t>(mask.rows()));
  w.u32(static_cast<std::uint32_t>(height));
  w.u32(static_cast<std::uint32_t>(width));
  w.u32(static_cast<std::uint32_t>(channels));
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw UsageError("save_mask: entries must be exactly 0 or 1");
    const unsigned char b = mask[i] == 1.0 ? 1 : 0;
    w.bytes(&b, 1);
  }
  w.close();
}

namespace {

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<double> pixels;  // row-major, already divided by maxval
};

PgmImage load_pgm(const std::string& path) {
  const std::vector<unsigned char> buf = read_file(path);
  std::size_t pos = 0;
  const auto peek = [&]() -> int { return pos < buf.size() ? buf[pos] : -1; };
  const auto skip_space = [&]() {
    while (pos < buf.size()) {
      if (std::isspace(peek())) {
        ++pos;
      } else if (peek() == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_int = [&](const char* what) -> std::size_t {
    skip_space();
    if (pos >= buf.size() || !std::isdigit(peek()))
      throw FormatError(path + ": expected " + std::string(what) + " at byte offset " +
                        std::to_string(pos));
    std::size_t v = 0;
    while (pos < buf.size() && std::isdigit(peek())) {
      v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
      ++pos;
    }
    return v;
  };

  if (buf.size() < 2 || buf[0] != 'P')
    throw FormatError(path + ": not a PGM file (bad magic at byte offset 0)");
  if (buf[1] == '2')
    throw FormatError(path + ": ASCII PGM (P2) is not supported, use binary P5");
  if (buf[1] != '5')
    throw FormatError(path + ": unsupported PNM variant P" + std::string(1, char(buf[1])));
  pos = 2;
  PgmImage img;
  img.width = read_int("width");
  img.height = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (maxval == 0 || maxval > 255)
    throw FormatError(path + ": unsupported maxval " + std::to_string(maxval) +
                      " (only 8-bit P5 is supported)");
  if (pos >= buf.size() || !std::isspace(peek()))
    throw FormatError(path + ": missing whitespace after maxval at byte offset " +
                      std::to_string(pos));
  ++pos;  // exactly one whitespace byte before the raster
  const std::size_t count = img.width * img.height;
  if (pos + count > buf.size())
    throw FormatError(path + ": truncated raster at byte offset " + std::to_string(buf.size()) +
                      " (need " + std::to_string(pos + count) + " bytes)");
  img.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    img.pixels[i] = static_cast<double>(buf[pos + i]) / static_cast<double>(maxval);
  return img;
}

}  // namespace

SequenceData load_pgm_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pgm") names.push_back(entry.path().string());
  }
  if (names.empty()) throw UsageError("no .pgm files in " + dir);
  std::sort(names.begin(), names.end());

  SequenceData seq;
  seq.channels = 1;
  for (std::size_t t = 0; t < names.size(); ++t) {
    const PgmImage img = load_pgm(names[t]);
    if (t == 0) {
      seq.height = img.height;
      seq.width = img.width;
      seq.frames = Tensor(names.size(), img.width * img.height);
    } else if (img.height != seq.height || img.width != seq.width) {
      throw FormatError(names[t] + ": dimensions " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + " differ from first frame " +
                        std::to_string(seq.width) + "x" + std::to_string(seq.height));
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i) seq.frames.at(t, i) = img.pixels[i];
  }
  return seq;
}

PairBatch make_pairs(const SequenceData& seq) {
  const std::size_t n = seq.num_frames();
  if (n < 2) throw InsufficientDataError("make_pairs: need at least 2 frames");
  PairBatch b;
  b.y1 = seq.frames.rows_slice(0, n - 1);
  b.y2 = seq.frames.rows_slice(1, n);
  if (seq.has_mask()) {
    b.m1 = seq.mask.rows_slice(0, n - 1);
    b.m2 = seq.mask.rows_slice(1, n);
  }
  return b;
}

TripleBatch make_triples(const SequenceData& seq) {
  const std::size_t n = seq.num_frames();
  if (n < 3) throw InsufficientDataError("make_triples: need at least 3 frames");
  TripleBatch b;
  b.y1 = seq.frames.rows_slice(0, n - 2);
  b.y2 = seq.frames.rows_slice(1, n - 1);
  b.y3 = seq.frames.rows_slice(2, n);
  if (seq.has_mask()) {
    b.m1 = seq.mask.rows_slice(0, n - 2);
    b.m2 = seq.mask.rows_slice(1, n - 1);
    b.m3 = seq.mask.rows_slice(2, n);
  }
  return b;
}

Tensor gen_mask_salt_pepper(std::size_t n_frames, std::size_t height, std::size_t width,
                            std::size_t channels, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("salt+pepper probability must be in [0,1]");
  Prng rng(seed);
  Tensor mask(n_frames, height * width * channels);
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < p ? 0.0 : 1.0;
  return mask;
}

Tensor gen_mask_rectangle(std::size_t n_frames, std::size_t height, std::size_t width,
                          std::size_t channels, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw UsageError("rectangle fraction must be in [0,1]");
  Prng rng(seed);
  const std::size_t band = static_cast<std::size_t>(std::llround(fraction * double(height)));
  const std::size_t top = band >= height ? 0 : rng.uniform_index(height - band + 1);
  Tensor mask = Tensor::full({n_frames, height * width * channels}, 1.0);
  for (std::size_t t = 0; t < n_frames; ++t)
    for (std::size_t i = top; i < top + band && i < height; ++i)
      for (std::size_t j = 0; j < width * channels; ++j)
        mask.at(t, i * width * channels + j) = 0.0;
  return mask;
}

}  // namespace dvae
