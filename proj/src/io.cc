#include "clustergnn/io.h"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace clustergnn {
namespace {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::size_t end,
             const std::string& path)
      : b_(b), end_(end), path_(path) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError(path_, at, msg);
  }
  [[noreturn]] void fail(const std::string& msg) const { fail(msg, pos_); }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      fail(std::string("truncated while reading ") + what);
    }
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  std::uint8_t u8(const char* w) { return uint<std::uint8_t>(w); }
  std::uint16_t u16(const char* w) { return uint<std::uint16_t>(w); }
  std::uint32_t u32(const char* w) { return uint<std::uint32_t>(w); }
  float f32(const char* w) { return std::bit_cast<float>(u32(w)); }
  double f64(const char* w) { return std::bit_cast<double>(uint<std::uint64_t>(w)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  constexpr std::size_t kChunk = 1u << 30;
  while (n > 0) {
    const std::size_t c = std::min(n, kChunk);
    crc = crc32(crc, p, static_cast<uInt>(c));
    p += c;
    n -= c;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

FormatError::FormatError(std::string path, std::uint64_t offset,
                         const std::string& msg)
    : std::runtime_error(path + ": byte offset " + std::to_string(offset) +
                         ": " + msg),
      path_(std::move(path)),
      offset_(offset) {}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> encode_keypoints_file(const KeypointSet& kp) {
  kp.validate();
  ByteWriter w;
  w.bytes(kKeypointMagic, 4);
  w.u16(kKeypointVersion);
  w.u32(static_cast<std::uint32_t>(kp.size()));
  w.u16(static_cast<std::uint16_t>(kp.dim()));
  w.u32(kp.image_size.width);
  w.u32(kp.image_size.height);
  for (std::size_t i = 0; i < kp.size(); ++i) {
    w.f32(kp.coords(i, 0));
    w.f32(kp.coords(i, 1));
    w.f32(kp.scores[i]);
    for (const float v : kp.descriptors.row(i)) w.f32(v);
  }
  return std::move(w.data());
}

KeypointSet decode_keypoints_file(const std::vector<std::uint8_t>& bytes,
                                  const std::string& path) {
  ByteReader r(bytes, bytes.size(), path);
  if (bytes.empty()) r.fail("empty file");
  if (r.str(4, "magic") != std::string(kKeypointMagic, 4)) {
    r.fail("bad magic, expected CGKP", 0);
  }
  const std::size_t version_at = r.pos();
  if (r.u16("version") != kKeypointVersion) {
    r.fail("unsupported version", version_at);
  }
  const std::size_t n_at = r.pos();
  const std::uint32_t n = r.u32("keypoint count");
  const std::size_t d_at = r.pos();
  const std::uint16_t d = r.u16("descriptor dim");
  KeypointSet kp;
  kp.image_size.width = r.u32("image width");
  kp.image_size.height = r.u32("image height");
  if (n == 0) r.fail("keypoint count is zero", n_at);
  if (d == 0) r.fail("descriptor dim is zero", d_at);
  if (kp.image_size.width == 0 || kp.image_size.height == 0) {
    r.fail("image size is zero", d_at + 2);
  }
  const std::size_t record = 4ull * (3 + d);
  if (r.remaining() != record * n) {
    r.fail("payload is " + std::to_string(r.remaining()) + " bytes, header "
           "implies " + std::to_string(record * n));
  }
  kp.coords = MatrixF(n, 2);
  kp.scores.resize(n);
  kp.descriptors = MatrixF(n, d);
  const double w = kp.image_size.width, h = kp.image_size.height;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.pos();
    const float x = r.f32("x"), y = r.f32("y"), s = r.f32("score");
    if (!(std::isfinite(x) && std::isfinite(y) && x >= 0.0f && y >= 0.0f &&
          x < w && y < h)) {
      r.fail("keypoint " + std::to_string(i) + " lies outside the image", at);
    }
    if (!(s >= 0.0f && s <= 1.0f)) {
      r.fail("keypoint " + std::to_string(i) + " score outside [0, 1]",
             at + 8);
    }
    kp.coords(i, 0) = x;
    kp.coords(i, 1) = y;
    kp.scores[i] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t vat = r.pos();
      const float v = r.f32("descriptor");
      if (!std::isfinite(v)) {
        r.fail("non-finite descriptor value in keypoint " + std::to_string(i),
               vat);
      }
      kp.descriptors(i, j) = v;
    }
  }
  return kp;
}

void write_keypoints(const std::string& path, const KeypointSet& kp) {
  write_file(path, encode_keypoints_file(kp));
}

KeypointSet read_keypoints(const std::string& path) {
  return decode_keypoints_file(read_file(path), path);
}

std::vector<std::uint8_t> encode_weights_file(const ModelWeights<float>& w) {
  ModelWeights<float> copy = w;
  const ModelConfig& c = copy.config;
  ByteWriter out;
  out.bytes(kWeightsMagic, 4);
  out.u16(ModelWeights<float>::kSchemaVersion);
  out.u32(static_cast<std::uint32_t>(c.descriptor_dim));
  out.u32(static_cast<std::uint32_t>(c.heads));
  out.u32(static_cast<std::uint32_t>(c.init_depth));
  out.u32(static_cast<std::uint32_t>(c.schedule.size()));
  for (const std::size_t k : c.schedule) out.u32(static_cast<std::uint32_t>(k));
  out.u32(static_cast<std::uint32_t>(c.layers_per_stage));
  out.u32(static_cast<std::uint32_t>(c.encoder_hidden_layers));
  out.f64(c.beta);
  out.u8(c.head == MatchHead::kSinkhorn ? 1 : 0);
  out.u32(static_cast<std::uint32_t>(c.sinkhorn_iters));
  out.f64(c.match_threshold);
  out.u32(static_cast<std::uint32_t>(c.query_chunks));
  out.u8(c.recluster_per_layer ? 1 : 0);
  out.u32(static_cast<std::uint32_t>(c.kmeans_iters));

  std::vector<std::pair<std::string, MatrixF>> blobs;
  copy.visit_trainable([&](const std::string& name, MatrixF& m) {
    blobs.emplace_back(name, m);
  });
  copy.visit_centers([&](const std::string& name, ClusterState<float>& s) {
    blobs.emplace_back(name, s.centers);
    blobs.emplace_back(name + ".initialized",
                       MatrixF(1, 1, s.initialized ? 1.0f : 0.0f));
  });
  out.u32(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, m] : blobs) {
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name.data(), name.size());
    out.u32(static_cast<std::uint32_t>(m.rows()));
    out.u32(static_cast<std::uint32_t>(m.cols()));
    for (const float v : m.storage()) out.f32(v);
  }
  auto& bytes = out.data();
  const std::uint32_t crc = crc_of(bytes.data(), bytes.size());
  out.u32(crc);
  return std::move(out.data());
}

ModelWeights<float> decode_weights_file(const std::vector<std::uint8_t>& bytes,
                                        const std::string& path) {
  if (bytes.size() < 4 + 2 + 4) {
    throw FormatError(path, 0, "file too short for a weights header");
  }
  const std::size_t body = bytes.size() - 4;
  {
    ByteReader tail(bytes, bytes.size(), path);
    tail.str(body, "body");
    const std::uint32_t stored = tail.u32("checksum");
    if (stored != crc_of(bytes.data(), body)) {
      throw FormatError(path, body, "checksum mismatch");
    }
  }
  ByteReader r(bytes, body, path);
  if (r.str(4, "magic") != std::string(kWeightsMagic, 4)) {
    r.fail("bad magic, expected CGWT", 0);
  }
  const std::size_t version_at = r.pos();
  if (r.u16("version") != ModelWeights<float>::kSchemaVersion) {
    r.fail("unsupported weights version", version_at);
  }
  ModelConfig c;
  const std::size_t config_at = r.pos();
  c.descriptor_dim = r.u32("d");
  c.heads = r.u32("heads");
  c.init_depth = r.u32("init_depth");
  const std::uint32_t n_stages = r.u32("stage count");
  if (n_stages > 4096) r.fail("implausible stage count", r.pos() - 4);
  c.schedule.clear();
  for (std::uint32_t s = 0; s < n_stages; ++s) c.schedule.push_back(r.u32("schedule"));
  c.layers_per_stage = r.u32("layers_per_stage");
  c.encoder_hidden_layers = r.u32("encoder_hidden_layers");
  c.beta = r.f64("beta");
  c.head = r.u8("head") == 1 ? MatchHead::kSinkhorn : MatchHead::kDualSoftmax;
  c.sinkhorn_iters = r.u32("sinkhorn_iters");
  c.match_threshold = r.f64("threshold");
  c.query_chunks = r.u32("query_chunks");
  c.recluster_per_layer = r.u8("recluster") != 0;
  c.kmeans_iters = r.u32("kmeans_iters");
  ModelWeights<float> w;
  try {
    w = ModelWeights<float>::init(c, 0);
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config block: ") + e.what(), config_at);
  }
  std::map<std::string, MatrixF*> targets;
  std::map<std::string, ClusterState<float>*> flags;
  w.visit_trainable(
      [&](const std::string& name, MatrixF& m) { targets[name] = &m; });
  w.visit_centers([&](const std::string& name, ClusterState<float>& s) {
    targets[name] = &s.centers;
    flags[name + ".initialized"] = &s;
  });
  const std::uint32_t count = r.u32("blob count");
  std::map<std::string, bool> seen;
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::size_t at = r.pos();
    const std::string name = r.str(r.u16("blob name length"), "blob name");
    const std::uint32_t rows = r.u32("blob rows"), cols = r.u32("blob cols");
    if (seen[name]) r.fail("duplicate blob " + name, at);
    seen[name] = true;
    MatrixF* target = nullptr;
    if (auto it = targets.find(name); it != targets.end()) {
      target = it->second;
    } else if (flags.contains(name)) {
      if (rows != 1 || cols != 1) r.fail("bad shape for " + name, at);
      flags[name]->initialized = r.f32(name.c_str()) != 0.0f;
      continue;
    } else {
      r.fail("unexpected blob " + name, at);
    }
    if (rows != target->rows() || cols != target->cols()) {
      r.fail("blob " + name + " is " + std::to_string(rows) + "x" +
                 std::to_string(cols) + ", config implies " +
                 std::to_string(target->rows()) + "x" +
                 std::to_string(target->cols()),
             at);
    }
    r.need(4ull * rows * cols, name.c_str());
    for (auto& v : target->storage()) {
      const std::size_t vat = r.pos();
      v = r.f32(name.c_str());
      if (!std::isfinite(v)) r.fail("non-finite value in " + name, vat);
    }
  }
  for (const auto& [name, m] : targets) {
    (void)m;
    if (!seen[name]) r.fail("missing blob " + name);
  }
  for (const auto& [name, s] : flags) {
    (void)s;
    if (!seen[name]) r.fail("missing blob " + name);
  }
  if (r.remaining() != 0) r.fail("trailing bytes before checksum");
  return w;
}

void write_weights(const std::string& path, const ModelWeights<float>& w) {
  write_file(path, encode_weights_file(w));
}

ModelWeights<float> read_weights(const std::string& path) {
  return decode_weights_file(read_file(path), path);
}

KeyValues parse_key_values(const std::string& text, const std::string& path) {
  KeyValues kv;
  std::size_t offset = 0;
  while (offset < text.size() || offset == 0) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(offset, end - offset);
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.resize(hash);
    }
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError(path, offset, "expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw FormatError(path, offset, "empty key");
      if (kv.entries.contains(key)) {
        throw FormatError(path, offset, "duplicate key " + key);
      }
      kv.entries[key] = {trim(line.substr(eq + 1)), offset};
    }
    if (end >= text.size()) break;
    offset = end + 1;
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  const auto bytes = read_file(path);
  return parse_key_values(std::string(bytes.begin(), bytes.end()), path);
}

namespace {

class ConfigReader {
 public:
  ConfigReader(const KeyValues& kv, const std::string& path)
      : kv_(kv), path_(path) {}

  const KeyValues::Entry* find(const std::string& key) {
    used_.push_back(key);
    const auto it = kv_.entries.find(key);
    return it == kv_.entries.end() ? nullptr : &it->second;
  }
  const KeyValues::Entry& require(const std::string& key) {
    const auto* e = find(key);
    if (e == nullptr) throw MissingKeyError(key);
    return *e;
  }

  std::size_t count(const KeyValues::Entry& e, const std::string& key) {
    std::size_t v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const auto res = std::from_chars(b, end, v);
    if (res.ec != std::errc() || res.ptr != end) bad(e, key, "an integer");
    return v;
  }
  double real(const KeyValues::Entry& e, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (e.value.empty() || *end != '\0' || !std::isfinite(v)) {
      bad(e, key, "a finite number");
    }
    return v;
  }
  bool flag(const KeyValues::Entry& e, const std::string& key) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    bad(e, key, "true or false");
  }
  std::vector<std::size_t> list(const KeyValues::Entry& e,
                                const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      KeyValues::Entry sub{trim(item), e.offset};
      out.push_back(count(sub, key));
    }
    if (out.empty()) bad(e, key, "a comma-separated list");
    return out;
  }

  std::size_t count(const std::string& key) { return count(require(key), key); }
  double real(const std::string& key) { return real(require(key), key); }

  template <typename V, typename F>
  void optional(const std::string& key, V& target, F parse) {
    if (const auto* e = find(key)) target = parse(*e, key);
  }

  void reject_unknown() const {
    for (const auto& [key, e] : kv_.entries) {
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
        throw FormatError(path_, e.offset, "unknown config key " + key);
      }
    }
  }

 private:
  [[noreturn]] void bad(const KeyValues::Entry& e, const std::string& key,
                        const char* expected) const {
    throw FormatError(path_, e.offset,
                      "value of " + key + " is not " + expected);
  }

  const KeyValues& kv_;
  const std::string& path_;
  std::vector<std::string> used_;
};

}  // namespace

TrainConfig train_config_from(const KeyValues& kv, const std::string& path) {
  ConfigReader r(kv, path);
  TrainConfig t;
  ModelConfig& m = t.model;
  m.descriptor_dim = r.count("d");
  m.heads = r.count("heads");
  m.init_depth = r.count("init_depth");
  m.schedule = r.list(r.require("schedule"), "schedule");
  m.layers_per_stage = r.count("layers_per_stage");
  t.lr = r.real("lr");
  t.epochs = r.count("epochs");
  t.steps_per_epoch = r.count("steps_per_epoch");
  t.batch_size = r.count("batch_size");
  t.n_keypoints = r.count("n_keypoints");
  t.outlier_frac = r.real("outlier_frac");
  t.noise_px = r.real("noise_px");

  auto as_count = [&](const KeyValues::Entry& e, const std::string& k) {
    return r.count(e, k);
  };
  auto as_real = [&](const KeyValues::Entry& e, const std::string& k) {
    return r.real(e, k);
  };
  auto as_flag = [&](const KeyValues::Entry& e, const std::string& k) {
    return r.flag(e, k);
  };
  r.optional("gamma", t.gamma, as_real);
  r.optional("descriptor_noise", t.descriptor_noise, as_real);
  r.optional("world_seed", t.world_seed, as_count);
  r.optional("beta", m.beta, as_real);
  r.optional("kmeans_iters", m.kmeans_iters, as_count);
  r.optional("sinkhorn_iters", m.sinkhorn_iters, as_count);
  r.optional("threshold", m.match_threshold, as_real);
  r.optional("query_chunks", m.query_chunks, as_count);
  r.optional("recluster_per_layer", m.recluster_per_layer, as_flag);
  r.optional("encoder_hidden_layers", m.encoder_hidden_layers, as_count);
  r.optional("image_width", t.image.width,
             [&](const KeyValues::Entry& e, const std::string& k) {
               return static_cast<std::uint32_t>(r.count(e, k));
             });
  r.optional("image_height", t.image.height,
             [&](const KeyValues::Entry& e, const std::string& k) {
               return static_cast<std::uint32_t>(r.count(e, k));
             });
  if (const auto* e = r.find("head")) {
    try {
      m.head = parse_match_head(e->value);
    } catch (const ConfigError&) {
      throw FormatError(path, e->offset,
                        "value of head is not dual-softmax or sinkhorn");
    }
  }
  r.reject_unknown();
  return t;
}

void write_match_tsv(std::ostream& out, const MatchResult& result) {
  double sum = 0.0;
  char buf[96];
  for (const Match& m : result.pairs) {
    std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%.6f\n", m.i, m.j, m.score);
    out << buf;
    sum += m.score;
  }
  const double mean =
      result.pairs.empty() ? 0.0 : sum / static_cast<double>(result.pairs.size());
  std::snprintf(buf, sizeof(buf), "# matches=%zu\n# mean_score=%.6f\n",
                result.pairs.size(), mean);
  out << buf;
  std::snprintf(buf, sizeof(buf), "# unmatched_a=%zu\n# unmatched_b=%zu\n",
                result.unmatched_a.size(), result.unmatched_b.size());
  out << buf;
}

}  // namespace clustergnn
