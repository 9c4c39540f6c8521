// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "flim/error.hpp"
#include "flim/hash.hpp"

namespace flim {

using ojson = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
    std::uint64_t bits;
    if constexpr (std::is_floating_point_v<T>) {
      static_assert(sizeof(T) == 8);
      bits = std::bit_cast<std::uint64_t>(v);
    } else {
      bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  void raw(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void header(std::string_view magic) {
    raw(magic);
    put(kVersion);
    put(std::uint32_t{0});
  }
  /// Appends the SHA-256 of the buffer so far as 32 raw bytes.
  void seal() {
    const std::string hex = sha256_hex(buf_);
    for (std::size_t i = 0; i < 32; ++i) {
      buf_.push_back(static_cast<char>(std::stoi(hex.substr(2 * i, 2), nullptr, 16)));
    }
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

std::string to_hex(std::string_view raw) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : raw) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_floating_point_v<T>) {
      return std::bit_cast<T>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }
  std::string_view raw(std::size_t n, const char* field) {
    need(n, field);
    std::string_view s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str(const char* field) {
    const auto n = get<std::uint32_t>(field);
    return std::string(raw(n, field));
  }
  /// Checks magic, version and the trailing hash; strips the trailer.
  void open(std::string_view magic) {
    if (b_.size() < 16 + 32) fail("file too short for header and checksum");
    if (b_.substr(0, magic.size()) != magic) fail("bad magic (not a " + what_ + " file)");
    const std::string_view body = b_.substr(0, b_.size() - 32);
    if (sha256_hex(body) != to_hex(b_.substr(b_.size() - 32))) {
      fail("checksum mismatch (file corrupt or truncated)");
    }
    b_ = body;
    pos_ = magic.size();
    const auto version = get<std::uint32_t>("version");
    if (version != kVersion) fail("unsupported version " + std::to_string(version));
    get<std::uint32_t>("reserved");
  }
  /// Element count that must fit in the remaining bytes.
  std::size_t count(const char* field, std::size_t elem_size) {
    const auto n = get<std::uint64_t>(field);
    if (elem_size > 0 && n > (b_.size() - pos_) / elem_size) {
      fail(std::string("field '") + field + "' claims more data than present");
    }
    return static_cast<std::size_t>(n);
  }
  void done() {
    if (pos_ != b_.size()) fail("trailing bytes after the last record");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg);
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (b_.size() - pos_ < n) fail(std::string("truncated at field '") + field + "'");
  }
  std::string_view b_;
  std::string what_;
  std::size_t pos_ = 0;
};

void put_doubles(Writer& w, const std::vector<double>& v) {
  w.put(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.put(x);
}

std::vector<double> get_doubles(Reader& r, const char* field) {
  const auto n = r.get<std::uint32_t>(field);
  std::vector<double> v;
  v.reserve(std::min<std::size_t>(n, 1u << 20));
  for (std::uint32_t i = 0; i < n; ++i) v.push_back(r.get<double>(field));
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

std::string serialize_dataset(const Dataset& data) {
  Writer w;
  w.header("FLIMDSET");
  const std::string cfg = data.config.to_text();
  w.put(static_cast<std::uint64_t>(cfg.size()));
  w.raw(cfg);
  w.put(static_cast<std::uint64_t>(data.samples.size()));
  for (const TimestampSequence& s : data.samples) {
    if (!s.truth) throw ContractViolation("serialize_dataset: sample without ground truth");
    const DecayModel& m = *s.truth;
    put_doubles(w, m.lifetimes);
    put_doubles(w, m.intensities);
    w.put(m.irf_peak);
    w.put(m.irf_fwhm);
    w.put(m.repetition_period);
    w.put(s.seed);
    if (s.timestamps.size() > 0xffffffffu) {
      throw ContractViolation("serialize_dataset: more than 2^32-1 photons in a sample");
    }
    w.put(static_cast<std::uint32_t>(s.timestamps.size()));
    for (double t : s.timestamps) w.put(t);
  }
  w.seal();
  return w.take();
}

Dataset deserialize_dataset(std::string_view bytes) {
  Reader r(bytes, "dataset");
  r.open("FLIMDSET");
  Dataset d;
  const std::size_t cfg_len = r.count("config_length", 1);
  try {
    d.config = DatasetConfig::from_text(std::string(r.raw(cfg_len, "config")));
  } catch (const std::exception& e) {
    r.fail(std::string("bad config block: ") + e.what());
  }
  const std::size_t n = r.count("sample_count", 4 + 4 + 24 + 8 + 4);
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TimestampSequence s;
    DecayModel m;
    m.lifetimes = get_doubles(r, "lifetimes");
    m.intensities = get_doubles(r, "intensities");
    m.irf_peak = r.get<double>("irf_peak");
    m.irf_fwhm = r.get<double>("irf_fwhm");
    m.repetition_period = r.get<double>("period");
    s.seed = r.get<std::uint64_t>("seed");
    const auto count = r.get<std::uint32_t>("photon_count");
    const std::string_view block = r.raw(std::size_t{count} * 8, "timestamps");
    s.timestamps.resize(count);
    for (std::uint32_t k = 0; k < count; ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(block[8 * k + b]))
                << (8 * b);
      }
      s.timestamps[k] = std::bit_cast<double>(bits);
    }
    try {
      m.validate();
    } catch (const std::exception& e) {
      r.fail("sample " + std::to_string(i) + " has an invalid model: " + e.what());
    }
    s.truth = std::move(m);
    d.samples.push_back(std::move(s));
  }
  r.done();
  if (d.samples.size() != d.config.samples) {
    r.fail("sample count does not match the config block");
  }
  return d;
}

void save_dataset(const fs::path& path, const Dataset& data) {
  write_file(path, serialize_dataset(data));
}

Dataset load_dataset(const fs::path& path) {
  try {
    return deserialize_dataset(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string dataset_hash(const Dataset& data) {
  const std::string bytes = serialize_dataset(data);
  return to_hex(std::string_view(bytes).substr(bytes.size() - 32));
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out = "sample_id,timestamp_ns\n";
  char line[64];
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    for (double t : data.samples[i].timestamps) {
      std::snprintf(line, sizeof line, "%zu,%.17g\n", i, t);
      out += line;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Float weights

namespace {

ojson weights_body(const RnnWeights& w) {
  ojson j;
  j["format"] = "flimrnn-weights";
  j["version"] = kVersion;
  j["variant"] = std::string(variant_name(w.config.variant));
  j["hidden"] = w.config.hidden;
  j["head_hidden"] = w.config.head_hidden;
  j["input_scale_ns"] = w.config.input_scale;
  j["output_scale_ns"] = w.config.output_scale;
  j["train_seed"] = w.train_seed;
  j["dataset_hash"] = w.dataset_hash;
  const std::size_t G = gate_count(w.config.variant);
  const std::size_t H = w.config.hidden;
  const std::size_t K = w.config.head_hidden;
  const std::array<std::pair<std::size_t, std::size_t>, RnnWeights::kTensorCount> dims = {
      {{G * H, 1}, {G * H, H}, {G * H, 1}, {K, H}, {K, 1}, {K, 1}, {1, 1}}};
  ojson tensors = ojson::object();
  const auto t = w.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) {
    ojson e;
    e["rows"] = dims[i].first;
    e["cols"] = dims[i].second;
    e["values"] = std::vector<double>(t[i].begin(), t[i].end());
    tensors[std::string(RnnWeights::kTensorNames[i])] = std::move(e);
  }
  j["tensors"] = std::move(tensors);
  return j;
}

}  // namespace

std::string weights_hash(const RnnWeights& w) { return sha256_hex(weights_body(w).dump()); }

std::string weights_to_text(const RnnWeights& w) {
  w.validate();
  ojson j = weights_body(w);
  j["content_hash"] = sha256_hex(j.dump());
  return j.dump(1) + "\n";
}

RnnWeights weights_from_text(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("weights: not valid JSON: ") + e.what());
  }
  auto field = [&](const char* name) -> const ojson& {
    if (!j.is_object() || !j.contains(name)) {
      throw FormatError(std::string("weights: missing field '") + name + "'");
    }
    return j.at(name);
  };
  try {
    if (field("format") != "flimrnn-weights") throw FormatError("weights: field 'format' is wrong");
    if (field("version") != kVersion) {
      throw FormatError("weights: unsupported version in field 'version'");
    }
    RnnWeights w;
    w.config.variant = parse_variant(field("variant").get<std::string>());
    w.config.hidden = field("hidden").get<std::size_t>();
    w.config.head_hidden = field("head_hidden").get<std::size_t>();
    w.config.input_scale = field("input_scale_ns").get<double>();
    w.config.output_scale = field("output_scale_ns").get<double>();
    w.config.validate();
    RnnWeights shaped = RnnWeights::zeros(w.config);
    shaped.train_seed = field("train_seed").get<std::uint64_t>();
    shaped.dataset_hash = field("dataset_hash").get<std::string>();
    const ojson& tensors = field("tensors");
    auto dst = shaped.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const std::string name(RnnWeights::kTensorNames[i]);
      if (!tensors.contains(name)) throw FormatError("weights: missing tensor '" + name + "'");
      const auto values = tensors.at(name).at("values").get<std::vector<double>>();
      if (values.size() != dst[i].size()) {
        throw FormatError("weights: tensor '" + name + "' has the wrong size");
      }
      std::copy(values.begin(), values.end(), dst[i].begin());
    }
    const std::string stored = field("content_hash").get<std::string>();
    ojson body = j;
    body.erase("content_hash");
    if (sha256_hex(body.dump()) != stored) {
      throw FormatError("weights: field 'content_hash' does not match the content");
    }
    shaped.validate();
    return shaped;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("weights: ") + e.what());
  }
}

void save_weights(const fs::path& path, const RnnWeights& w) {
  write_file(path, weights_to_text(w));
}

RnnWeights load_weights(const fs::path& path) {
  try {
    return weights_from_text(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Quantized weights

namespace {

void put_fmt(Writer& w, const FixedPointFormat& f) {
  w.put(static_cast<std::int32_t>(f.total_bits));
  w.put(static_cast<std::int32_t>(f.frac_bits));
  w.put(static_cast<std::int32_t>(f.rounding));
  w.put(static_cast<std::int32_t>(f.overflow));
}

FixedPointFormat get_fmt(Reader& r) {
  FixedPointFormat f;
  f.total_bits = r.get<std::int32_t>("total_bits");
  f.frac_bits = r.get<std::int32_t>("frac_bits");
  const auto rnd = r.get<std::int32_t>("rounding");
  const auto ovf = r.get<std::int32_t>("overflow");
  if (rnd < 0 || rnd > 2) r.fail("field 'rounding' out of range");
  if (ovf < 0 || ovf > 1) r.fail("field 'overflow' out of range");
  f.rounding = static_cast<Rounding>(rnd);
  f.overflow = static_cast<Overflow>(ovf);
  try {
    f.validate();
  } catch (const std::exception& e) {
    r.fail(std::string("bad format: ") + e.what());
  }
  return f;
}

}  // namespace

std::string serialize_quantized(const QuantizedWeights& q) {
  Writer w;
  w.header("FLIMQWTS");
  w.put(static_cast<std::int32_t>(q.config.variant));
  w.put(static_cast<std::int32_t>(q.config.hidden));
  w.put(static_cast<std::int32_t>(q.config.head_hidden));
  w.put(static_cast<std::int32_t>(q.accumulator_bits));
  w.put(q.config.input_scale);
  w.put(q.config.output_scale);
  put_fmt(w, q.act_fmt);
  put_fmt(w, q.input_fmt);
  w.str(q.float_hash);
  for (const QTensor* t : q.tensors()) {
    put_fmt(w, t->fmt);
    w.put(t->max_error);
    w.put(t->saturated);
    w.put(static_cast<std::uint64_t>(t->data.size()));
    for (std::int64_t v : t->data) w.put(static_cast<std::int32_t>(v));
  }
  w.put(q.saturation_fraction);
  w.seal();
  return w.take();
}

QuantizedWeights deserialize_quantized(std::string_view bytes) {
  Reader r(bytes, "quantized weights");
  r.open("FLIMQWTS");
  QuantizedWeights q;
  const auto variant = r.get<std::int32_t>("variant");
  if (variant != static_cast<std::int32_t>(Variant::kGru)) r.fail("field 'variant' is not gru");
  q.config.variant = Variant::kGru;
  q.config.hidden = static_cast<std::size_t>(r.get<std::int32_t>("hidden"));
  q.config.head_hidden = static_cast<std::size_t>(r.get<std::int32_t>("head_hidden"));
  q.accumulator_bits = r.get<std::int32_t>("accumulator_bits");
  q.config.input_scale = r.get<double>("input_scale");
  q.config.output_scale = r.get<double>("output_scale");
  try {
    q.config.validate();
  } catch (const std::exception& e) {
    r.fail(std::string("bad dims: ") + e.what());
  }
  if (q.accumulator_bits < 16 || q.accumulator_bits > 100) r.fail("field 'accumulator_bits' out of range");
  q.act_fmt = get_fmt(r);
  q.input_fmt = get_fmt(r);
  q.float_hash = r.str("float_hash");
  const RnnWeights shape = RnnWeights::zeros(q.config);
  const auto ref = shape.tensors();
  auto dst = q.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    QTensor& t = *dst[i];
    t.fmt = get_fmt(r);
    t.max_error = r.get<double>("max_error");
    t.saturated = r.get<std::uint64_t>("saturated");
    const std::size_t n = r.count("tensor_size", 4);
    if (n != ref[i].size()) {
      r.fail("tensor '" + std::string(RnnWeights::kTensorNames[i]) + "' has the wrong size");
    }
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      t.data[k] = r.get<std::int32_t>("tensor value");
      if (t.data[k] > t.fmt.max_raw() || t.data[k] < t.fmt.min_raw()) {
        r.fail("tensor '" + std::string(RnnWeights::kTensorNames[i]) +
               "' holds a value outside its format");
      }
    }
  }
  q.saturation_fraction = r.get<double>("saturation_fraction");
  r.done();
  return q;
}

std::string quantized_manifest(const QuantizedWeights& q, const QuantizeOptions& opts,
                               const std::string& file_hash) {
  ojson j;
  j["format"] = "flimrnn-quantized-manifest";
  j["version"] = kVersion;
  j["float_weights_hash"] = q.float_hash;
  j["quantized_sha256"] = file_hash;
  j["weight_bits"] = opts.weight_bits;
  j["activation_bits"] = opts.activation_bits;
  j["rounding"] = std::string(rounding_name(opts.rounding));
  j["overflow"] = opts.overflow == Overflow::kSaturate ? "saturate" : "wrap";
  j["input_range_ns"] = opts.input_range;
  j["activation_frac_bits"] = q.act_fmt.frac_bits;
  j["input_frac_bits"] = q.input_fmt.frac_bits;
  j["accumulator_bits"] = q.accumulator_bits;
  ojson tensors = ojson::object();
  const auto t = q.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) {
    tensors[std::string(RnnWeights::kTensorNames[i])] = {
        {"frac_bits", t[i]->fmt.frac_bits},
        {"max_error", t[i]->max_error},
        {"saturated", t[i]->saturated}};
  }
  j["tensors"] = std::move(tensors);
  j["saturation_fraction"] = q.saturation_fraction;
  j["warnings"] = q.warnings;
  return j.dump(2) + "\n";
}

void save_quantized(const fs::path& path, const QuantizedWeights& q,
                    const QuantizeOptions& opts) {
  const std::string bytes = serialize_quantized(q);
  write_file(path, bytes);
  fs::path manifest = path;
  manifest += ".manifest.json";
  write_file(manifest, quantized_manifest(q, opts, sha256_hex(bytes)));
}

QuantizedWeights load_quantized(const fs::path& path) {
  try {
    return deserialize_quantized(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Event stream

std::string serialize_events(std::span<const PhotonEvent> events) {
  Writer w;
  w.header("FLIMEVTS");
  w.put(static_cast<std::uint64_t>(events.size()));
  for (const PhotonEvent& e : events) {
    w.put(e.pixel);
    w.put(e.wall_time_ps);
    w.put(e.timestamp_ps);
  }
  w.seal();
  return w.take();
}

std::vector<PhotonEvent> deserialize_events(std::string_view bytes) {
  Reader r(bytes, "event stream");
  r.open("FLIMEVTS");
  const std::size_t n = r.count("event_count", 16);
  std::vector<PhotonEvent> ev(n);
  for (PhotonEvent& e : ev) {
    e.pixel = r.get<std::uint32_t>("pixel");
    e.wall_time_ps = r.get<std::uint64_t>("wall_time_ps");
    e.timestamp_ps = r.get<std::uint32_t>("timestamp_ps");
    if (e.pixel >= kPixelCount) r.fail("field 'pixel' out of range");
  }
  r.done();
  return ev;
}

void save_events(const fs::path& path, std::span<const PhotonEvent> events) {
  write_file(path, serialize_events(events));
}

std::vector<PhotonEvent> load_events(const fs::path& path) {
  try {
    return deserialize_events(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Golden vectors

std::vector<GoldenVector> make_golden(const QuantizedWeights& q,
                                      std::span<const std::vector<std::int64_t>> inputs) {
  const QuantizedGru gru(q);
  std::vector<GoldenVector> out;
  for (const auto& seq : inputs) {
    QuantState s = init_quant_state(q);
    for (std::int64_t x : seq) gru.step(s, x);
    out.push_back({seq, s.h, gru.head_raw(s)});
  }
  return out;
}

std::string golden_to_text(const std::vector<GoldenVector>& vectors,
                           const std::string& quantized_hash) {
  std::ostringstream os;
  os << "golden " << kVersion << '\n' << "weights " << quantized_hash << '\n'
     << "count " << vectors.size() << '\n';
  for (const GoldenVector& g : vectors) {
    os << "inputs " << g.inputs.size();
    for (auto v : g.inputs) os << ' ' << v;
    os << "\nstate " << g.state.size();
    for (auto v : g.state) os << ' ' << v;
    os << "\nhead " << g.head << '\n';
  }
  return os.str();
}

std::vector<GoldenVector> golden_from_text(const std::string& text,
                                           std::string* quantized_hash) {
  std::istringstream in(text);
  auto expect = [&](const char* key) {
    std::string k;
    if (!(in >> k) || k != key) {
      throw FormatError(std::string("golden vectors: expected field '") + key + "'");
    }
  };
  auto read_list = [&](const char* key) {
    expect(key);
    std::size_t n = 0;
    if (!(in >> n) || n > (1u << 24)) {
      throw FormatError(std::string("golden vectors: bad length for '") + key + "'");
    }
    std::vector<std::int64_t> v(n);
    for (auto& x : v) {
      if (!(in >> x)) throw FormatError(std::string("golden vectors: truncated '") + key + "'");
    }
    return v;
  };
  expect("golden");
  std::uint32_t version = 0;
  if (!(in >> version) || version != kVersion) {
    throw FormatError("golden vectors: unsupported version");
  }
  expect("weights");
  std::string hash;
  in >> hash;
  if (quantized_hash) *quantized_hash = hash;
  expect("count");
  std::size_t n = 0;
  if (!(in >> n)) throw FormatError("golden vectors: bad count");
  std::vector<GoldenVector> out(n);
  for (GoldenVector& g : out) {
    g.inputs = read_list("inputs");
    g.state = read_list("state");
    expect("head");
    if (!(in >> g.head)) throw FormatError("golden vectors: truncated 'head'");
  }
  return out;
}

}  // namespace flim
