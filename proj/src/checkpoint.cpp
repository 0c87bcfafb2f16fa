#include "dvae/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "dvae/errors.hpp"

namespace dvae {

namespace {

using nlohmann::json;

constexpr std::uint16_t kVersion = 1;

json mlp_spec(const Mlp& net) {
  json spec;
  spec["dims"] = json::array();
  spec["acts"] = json::array();
  spec["dims"].push_back(net.in_dim());
  for (const auto& layer : net.layers) {
    spec["dims"].push_back(layer.weight.rows());
    spec["acts"].push_back(activation_name(layer.act));
  }
  return spec;
}

Mlp mlp_from_spec(const json& spec, const std::string& path) {
  if (!spec.contains("dims") || !spec.contains("acts"))
    throw FormatError(path + ": network spec missing dims/acts");
  const auto dims = spec["dims"].get<std::vector<std::size_t>>();
  const auto acts = spec["acts"].get<std::vector<std::string>>();
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw FormatError(path + ": inconsistent network spec");
  Mlp net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer layer;
    layer.weight = Tensor(dims[i + 1], dims[i]);
    layer.bias = Tensor(std::vector<std::size_t>{dims[i + 1]});
    layer.act = activation_from_name(acts[i]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

class F64Writer {
 public:
  explicit F64Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
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
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    bytes(b, 8);
  }
  void tensor(const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) f64(t[i]);
  }
  void mlp(const Mlp& net) {
    for (const auto& layer : net.layers) {
      tensor(layer.weight);
      tensor(layer.bias);
    }
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failure on " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class F64Reader {
 public:
  F64Reader(std::vector<unsigned char> buf, std::string path)
      : buf_(std::move(buf)), path_(std::move(path)) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > buf_.size())
      throw FormatError(path_ + ": truncated while reading " + what + " at byte offset " +
                        std::to_string(pos_));
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
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 8;
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  void tensor(Tensor& t, const char* what) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = f64(what);
  }
  void mlp(Mlp& net, const char* what) {
    for (auto& layer : net.layers) {
      tensor(layer.weight, what);
      tensor(layer.bias, what);
    }
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(4, "magic");
    if (std::memcmp(buf_.data() + pos_, "DVMD", 4) != 0)
      throw FormatError(path_ + ": bad magic at byte offset 0 (expected \"DVMD\")");
    pos_ += 4;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t offset() const { return pos_; }
  const std::string& path() const { return path_; }

 private:
  std::vector<unsigned char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_header_and_body(F64Writer& w, const json& header) {
  const std::string text = header.dump();
  w.bytes("DVMD", 4);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
}

json meta_json(const CheckpointMeta& meta) {
  json j{{"seed", meta.seed}, {"epochs", meta.epochs}, {"final_loss", meta.final_loss}};
  if (meta.height > 0 && meta.width > 0 && meta.channels > 0) {
    j["height"] = meta.height;
    j["width"] = meta.width;
    j["channels"] = meta.channels;
  }
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  if (j.contains("seed")) m.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("epochs")) m.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("final_loss")) m.final_loss = j["final_loss"].get<double>();
  if (j.contains("height")) m.height = j["height"].get<std::size_t>();
  if (j.contains("width")) m.width = j["width"].get<std::size_t>();
  if (j.contains("channels")) m.channels = j["channels"].get<std::size_t>();
  return m;
}

}  // namespace

void save_checkpoint(const DvaeModel& model, const CheckpointMeta& meta,
                     const std::string& path) {
  json header;
  header["order"] = 1;
  header["n"] = model.n;
  header["d"] = model.d;
  header["sigma_y2"] = model.sigma_y2;
  header["lambda"] = model.lambda;
  header["decoder"] = mlp_spec(model.decoder);
  header["encoder"] = mlp_spec(model.encoder);
  header["meta"] = meta_json(meta);

  F64Writer w(path);
  write_header_and_body(w, header);
  w.tensor(model.dyn.A);
  w.tensor(model.dyn.B);
  w.mlp(model.decoder);
  w.mlp(model.encoder);
  w.close();
}

void save_checkpoint2(const Dvae2Model& model, const CheckpointMeta& meta,
                      const std::string& path) {
  json header;
  header["order"] = 2;
  header["n"] = model.n;
  header["d"] = model.d;
  header["sigma_y2"] = model.sigma_y2;
  header["lambda1"] = model.lambda1;
  header["lambda2"] = model.lambda2;
  header["lambda3"] = model.lambda3;
  header["decoder"] = mlp_spec(model.decoder);
  header["encoder"] = mlp_spec(model.encoder);
  header["meta"] = meta_json(meta);

  F64Writer w(path);
  write_header_and_body(w, header);
  w.tensor(model.layer.F1);
  w.tensor(model.layer.F2);
  w.tensor(model.layer.F3);
  w.tensor(model.layer.F4);
  w.tensor(model.layer.F5);
  w.mlp(model.decoder);
  w.mlp(model.encoder);
  w.close();
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  F64Reader r(slurp(path), path);
  r.expect_magic();
  const std::uint16_t version = r.u16("version");
  if (version != kVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t hlen = r.u32("header length");
  const std::string text = r.str(hlen, "JSON header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": bad JSON header: " + e.what());
  }

  LoadedCheckpoint out;
  try {
    out.order = header.at("order").get<int>();
    const std::size_t n = header.at("n").get<std::size_t>();
    const std::size_t d = header.at("d").get<std::size_t>();
    if (n == 0 || d == 0) throw FormatError(path + ": zero model dimension in header");
    if (header.contains("meta")) out.meta = meta_from_json(header["meta"]);

    if (out.order == 1) {
      DvaeModel m;
      m.n = n;
      m.d = d;
      m.sigma_y2 = header.at("sigma_y2").get<double>();
      m.lambda = header.at("lambda").get<double>();
      m.decoder = mlp_from_spec(header.at("decoder"), path);
      m.encoder = mlp_from_spec(header.at("encoder"), path);
      if (m.decoder.in_dim() != n || m.decoder.out_dim() != d)
        throw FormatError(path + ": decoder dims do not match n/d");
      if (m.encoder.in_dim() != 2 * d || m.encoder.out_dim() != 4 * n)
        throw FormatError(path + ": encoder dims do not match n/d");
      m.dyn.A = Tensor(n, n);
      m.dyn.B = Tensor(n, n);
      r.tensor(m.dyn.A, "A");
      r.tensor(m.dyn.B, "B");
      r.mlp(m.decoder, "decoder weights");
      r.mlp(m.encoder, "encoder weights");
      out.model = std::move(m);
    } else if (out.order == 2) {
      Dvae2Model m;
      m.n = n;
      m.d = d;
      m.sigma_y2 = header.at("sigma_y2").get<double>();
      m.lambda1 = header.at("lambda1").get<double>();
      m.lambda2 = header.at("lambda2").get<double>();
      m.lambda3 = header.at("lambda3").get<double>();
      m.decoder = mlp_from_spec(header.at("decoder"), path);
      m.encoder = mlp_from_spec(header.at("encoder"), path);
      if (m.decoder.in_dim() != n || m.decoder.out_dim() != d)
        throw FormatError(path + ": decoder dims do not match n/d");
      if (m.encoder.in_dim() != 3 * d || m.encoder.out_dim() != 6 * n)
        throw FormatError(path + ": encoder dims do not match n/d");
      Tensor f1(n, n), f2(n, n), f3(n, n), f4(n, n), f5(n, n);
      r.tensor(f1, "F1");
      r.tensor(f2, "F2");
      r.tensor(f3, "F3");
      r.tensor(f4, "F4");
      r.tensor(f5, "F5");
      m.layer = DynamicLayerF::order2(f1, f2, f3, f4, f5);
      r.mlp(m.decoder, "decoder weights");
      r.mlp(m.encoder, "encoder weights");
      out.model2 = std::move(m);
    } else {
      throw FormatError(path + ": unsupported dynamic-layer order " +
                        std::to_string(out.order));
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed header: " + e.what());
  }
  if (r.remaining() != 0)
    throw FormatError(path + ": " + std::to_string(r.remaining()) +
                      " trailing bytes after parameters at byte offset " +
                      std::to_string(r.offset()));
  return out;
}

}  // namespace dvae
