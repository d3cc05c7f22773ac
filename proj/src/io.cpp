#include "autoreg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "autoreg/error.hpp"

namespace autoreg {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'R', 'V', 'F'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& b;
  std::size_t pos = 0;

  void need(std::size_t n, const char* field) {
    if (b.size() - pos < n || pos > b.size())
      throw FormatError(field, std::string("arvf: truncated at ") + field);
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return static_cast<std::uint8_t>(b[pos++]);
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
};

std::size_t dtype_size(Dtype d) { return d == Dtype::F64 ? 8 : 4; }

void check_grid(const ArvfHeader& h, int channels, const fs::path& path) {
  if (h.ndim != 2 && h.ndim != 3)
    throw FormatError("ndim", "arvf: " + path.string() + " has ndim " + std::to_string(h.ndim) + ", expected 2 or 3");
  if (channels > 0 && h.channels != channels)
    throw FormatError("channels", "arvf: " + path.string() + " has " + std::to_string(h.channels) +
                                      " channels, expected " + std::to_string(channels));
}

}  // namespace

std::vector<int> ArvfHeader::shape() const {
  std::vector<int> s{channels};
  s.insert(s.end(), extents.begin(), extents.end());
  return s;
}

std::string encode_arvf(const Tensor& t, Dtype dtype) {
  require(t.rank() >= 1, "arvf: tensor has no shape");
  require(t.rank() - 1 <= 255, "arvf: rank too large");
  require(t.dim(0) >= 1 && t.dim(0) <= 255, "arvf: channel count " + std::to_string(t.dim(0)) + " outside [1, 255]");
  std::string out(kMagic, 4);
  put_u32(out, kArvfVersion);
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(t.rank() - 1));
  out.push_back(static_cast<char>(t.dim(0)));
  out.push_back(0);
  for (std::size_t i = 1; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
  out.reserve(out.size() + t.size() * dtype_size(dtype));
  for (double v : t.values()) {
    switch (dtype) {
      case Dtype::F64: put_u64(out, std::bit_cast<std::uint64_t>(v)); break;
      case Dtype::F32: put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case Dtype::I32:
        require(v == std::nearbyint(v) && std::abs(v) < 2147483648.0, "arvf: non-integral value for i32");
        put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(v)));
        break;
    }
  }
  return out;
}

Tensor decode_arvf(const std::string& bytes, ArvfHeader* header) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("magic", "arvf: bad magic bytes");
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kArvfVersion)
    throw FormatError("version", "arvf: unsupported version " + std::to_string(version));
  ArvfHeader h;
  const std::uint8_t dt = r.u8("dtype");
  if (dt > 2) throw FormatError("dtype", "arvf: unknown dtype code " + std::to_string(dt));
  h.dtype = static_cast<Dtype>(dt);
  h.ndim = r.u8("ndim");
  h.channels = r.u8("channels");
  if (h.channels == 0) throw FormatError("channels", "arvf: zero channels");
  r.u8("reserved");
  std::size_t count = h.channels;
  for (int i = 0; i < h.ndim; ++i) {
    const std::uint32_t e = r.u32("shape");
    if (e == 0 || e > (1u << 30)) throw FormatError("shape", "arvf: extent " + std::to_string(e) + " out of range");
    h.extents.push_back(static_cast<int>(e));
    count *= e;
    if (count > (std::size_t{1} << 34)) throw FormatError("shape", "arvf: volume too large");
  }
  const std::size_t need = count * dtype_size(h.dtype);
  if (bytes.size() - r.pos != need)
    throw FormatError("data", "arvf: expected " + std::to_string(need) + " data bytes, found " +
                                  std::to_string(bytes.size() - r.pos));
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (h.dtype) {
      case Dtype::F64: v[i] = std::bit_cast<double>(r.u64("data")); break;
      case Dtype::F32: v[i] = std::bit_cast<float>(r.u32("data")); break;
      case Dtype::I32: v[i] = static_cast<std::int32_t>(r.u32("data")); break;
    }
  }
  Tensor t(h.shape(), std::move(v));
  if (header) *header = std::move(h);
  return t;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("file", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void save_tensor(const fs::path& path, const Tensor& t, Dtype dtype) { write_file(path, encode_arvf(t, dtype)); }

Tensor load_tensor(const fs::path& path, ArvfHeader* header) { return decode_arvf(read_file(path), header); }

ArvfHeader read_arvf_header(const fs::path& path) {
  ArvfHeader h;
  load_tensor(path, &h);
  return h;
}

void save_volume(const fs::path& path, const ScalarField& f) { save_tensor(path, f.tensor()); }

void save_volume(const fs::path& path, const VectorField& f) { save_vector_tensor(path, f.tensor()); }

void save_vector_tensor(const fs::path& path, const Tensor& t) {
  require(t.rank() == 3 || t.rank() == 4, "save: vector field must be 2D or 3D");
  require(t.dim(0) == static_cast<int>(t.rank()) - 1,
          "save: vector field has " + std::to_string(t.dim(0)) + " channels on a " +
              std::to_string(t.rank() - 1) + "D grid");
  save_tensor(path, t);
}

void save_volume(const fs::path& path, const LabelField& f) {
  std::vector<double> v(f.values().begin(), f.values().end());
  std::vector<int> shape{1};
  shape.insert(shape.end(), f.dims().begin(), f.dims().end());
  save_tensor(path, Tensor(shape, std::move(v)), Dtype::I32);
}

ScalarField load_scalar(const fs::path& path) {
  ArvfHeader h;
  Tensor t = load_tensor(path, &h);
  check_grid(h, 1, path);
  return ScalarField(std::move(t));
}

VectorField load_vector(const fs::path& path) {
  ArvfHeader h;
  Tensor t = load_tensor(path, &h);
  check_grid(h, 0, path);
  check_grid(h, h.ndim, path);
  return VectorField(std::move(t));
}

LabelField load_labels(const fs::path& path, int num_labels) {
  ArvfHeader h;
  Tensor t = load_tensor(path, &h);
  check_grid(h, 1, path);
  if (h.dtype != Dtype::I32) throw FormatError("dtype", "arvf: label file " + path.string() + " is not i32");
  std::vector<std::int32_t> v(t.size());
  std::int32_t top = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    v[i] = static_cast<std::int32_t>(t[i]);
    if (v[i] < 0) throw FormatError("data", "arvf: negative label in " + path.string());
    top = std::max(top, v[i]);
  }
  if (num_labels <= 0) num_labels = top + 1;
  if (top >= num_labels) throw FormatError("data", "arvf: label " + std::to_string(top) + " >= num_labels");
  return LabelField(h.extents, num_labels, std::move(v));
}

// ---------------------------------------------------------------------------

json synth_spec_to_json(const SynthSpec& s) {
  return json{{"ndim", s.ndim},
              {"shape", s.shape},
              {"num_train", s.num_train},
              {"num_val", s.num_val},
              {"num_test", s.num_test},
              {"num_labels", s.num_labels},
              {"amplitude", s.amplitude},
              {"sigma", s.sigma},
              {"noise", s.noise},
              {"blur", s.blur},
              {"multimodal", s.multimodal},
              {"remap_power", s.remap_power},
              {"seed", s.seed},
              {"max_retries", s.max_retries}};
}

SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "ndim") s.ndim = v.get<int>();
      else if (k == "shape") s.shape = v.get<std::vector<int>>();
      else if (k == "num_train") s.num_train = v.get<int>();
      else if (k == "num_val") s.num_val = v.get<int>();
      else if (k == "num_test") s.num_test = v.get<int>();
      else if (k == "num_labels") s.num_labels = v.get<int>();
      else if (k == "amplitude") s.amplitude = v.get<double>();
      else if (k == "sigma") s.sigma = v.get<double>();
      else if (k == "noise") s.noise = v.get<double>();
      else if (k == "blur") s.blur = v.get<double>();
      else if (k == "multimodal") s.multimodal = v.get<bool>();
      else if (k == "remap_power") s.remap_power = v.get<double>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "max_retries") s.max_retries = v.get<int>();
      else throw ConfigError("synth: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  // a shape given without ndim implies it
  if (!j.contains("ndim")) s.ndim = static_cast<int>(s.shape.size());
  s.validate();
  return s;
}

const ManifestSplit& DatasetManifest::split(const std::string& name) const {
  for (const auto& s : splits)
    if (s.name == name) return s;
  throw DataError("manifest has no split '" + name + "'");
}

void DatasetManifest::validate() const {
  for (const auto& s : splits)
    if (s.name == "val")
      for (const auto& p : s.pairs)
        if (p.source_labels.empty() || p.target_labels.empty())
          throw DataError("validation pair " + p.id + " has no labels");
}

json manifest_to_json(const DatasetManifest& m) {
  json splits = json::array();
  for (const auto& s : m.splits) {
    json pairs = json::array();
    for (const auto& p : s.pairs) {
      json jp{{"id", p.id}, {"source", p.source}, {"target", p.target}};
      if (!p.source_labels.empty()) jp["source_labels"] = p.source_labels;
      if (!p.target_labels.empty()) jp["target_labels"] = p.target_labels;
      if (!p.ground_truth.empty()) jp["ground_truth"] = p.ground_truth;
      pairs.push_back(std::move(jp));
    }
    splits.push_back(json{{"name", s.name}, {"pairs", std::move(pairs)}});
  }
  return json{{"seed", m.seed}, {"synth_spec", m.synth_spec}, {"num_labels", m.num_labels}, {"splits", splits}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.synth_spec = j.value("synth_spec", json::object());
    m.num_labels = j.value("num_labels", 0);
    for (const auto& js : j.at("splits")) {
      ManifestSplit s;
      s.name = js.at("name").get<std::string>();
      for (const auto& jp : js.at("pairs")) {
        ManifestPair p;
        p.id = jp.at("id").get<std::string>();
        p.source = jp.at("source").get<std::string>();
        p.target = jp.at("target").get<std::string>();
        p.source_labels = jp.value("source_labels", "");
        p.target_labels = jp.value("target_labels", "");
        p.ground_truth = jp.value("ground_truth", "");
        s.pairs.push_back(std::move(p));
      }
      m.splits.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest", std::string("manifest: ") + e.what());
  }
  return m;
}

DatasetManifest write_dataset(const fs::path& dir, const SynthDataset& data, const SynthSpec& spec) {
  DatasetManifest m;
  m.seed = spec.seed;
  m.synth_spec = synth_spec_to_json(spec);
  m.num_labels = spec.num_labels;
  for (const Dataset* d : {&data.train, &data.val, &data.test}) {
    ManifestSplit s;
    s.name = d->name;
    for (const auto& p : d->pairs) {
      ManifestPair mp;
      mp.id = p.id;
      const std::string base = d->name + "/" + p.id;
      mp.source = base + "_source.arvf";
      mp.target = base + "_target.arvf";
      save_volume(dir / mp.source, p.source);
      save_volume(dir / mp.target, p.target);
      if (p.has_labels()) {
        mp.source_labels = base + "_source_labels.arvf";
        mp.target_labels = base + "_target_labels.arvf";
        save_volume(dir / mp.source_labels, *p.source_labels);
        save_volume(dir / mp.target_labels, *p.target_labels);
      }
      if (p.ground_truth) {
        mp.ground_truth = base + "_phi_gt.arvf";
        save_volume(dir / mp.ground_truth, *p.ground_truth);
      }
      s.pairs.push_back(std::move(mp));
    }
    m.splits.push_back(std::move(s));
  }
  m.validate();
  write_file(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError("manifest", std::string("manifest: ") + e.what());
  }
  auto m = manifest_from_json(j);
  m.validate();
  return m;
}

Dataset load_split(const fs::path& manifest_path, const std::string& split) {
  const auto m = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  Dataset d;
  d.name = split;
  for (const auto& mp : m.split(split).pairs) {
    RegPair p;
    p.id = mp.id;
    p.source = load_scalar(root / mp.source);
    p.target = load_scalar(root / mp.target);
    if (p.source.dims() != p.target.dims()) throw DataError("pair " + mp.id + ": source and target shapes differ");
    if (!mp.source_labels.empty()) p.source_labels = load_labels(root / mp.source_labels, m.num_labels);
    if (!mp.target_labels.empty()) p.target_labels = load_labels(root / mp.target_labels, m.num_labels);
    if (!mp.ground_truth.empty()) p.ground_truth = load_vector(root / mp.ground_truth);
    d.pairs.push_back(std::move(p));
  }
  return d;
}

// ---------------------------------------------------------------------------

void Checkpoint::put(const std::string& name, const Tensor& t) {
  for (auto& [n, v] : tensors)
    if (n == name) {
      v = t;
      return;
    }
  tensors.emplace_back(name, t);
}

void Checkpoint::put(const std::string& prefix, const ParamSet& p) {
  for (std::size_t i = 0; i < p.size(); ++i) put(prefix + p.name(i), p[i]);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.first == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.first == name) return e.second;
  throw FormatError(name, "checkpoint: no tensor '" + name + "'");
}

void Checkpoint::restore(const std::string& prefix, ParamSet& into) const {
  std::size_t present = 0;
  for (const auto& e : tensors)
    if (e.first.compare(0, prefix.size(), prefix) == 0) ++present;
  if (present != into.size())
    throw ConfigError("checkpoint: '" + prefix + "' holds " + std::to_string(present) + " tensors, the model expects " +
                      std::to_string(into.size()) + " (different channel plan or catalog?)");
  for (std::size_t i = 0; i < into.size(); ++i) {
    const std::string name = prefix + into.name(i);
    if (!has(name)) throw ConfigError("checkpoint: missing '" + name + "' (different channel plan or catalog?)");
    const Tensor& t = get(name);
    if (t.shape() != into[i].shape())
      throw ConfigError("checkpoint: '" + name + "' has shape " + shape_string(t.shape()) + ", the model expects " +
                        shape_string(into[i].shape()));
    into[i] = t;
  }
}

void save_checkpoint(const fs::path& dir, const Checkpoint& c) {
  fs::create_directories(dir);
  json index = json::array();
  for (const auto& [name, t] : c.tensors) {
    if (name.empty() || name.find('/') != std::string::npos || name[0] == '.')
      throw ContractError("checkpoint: bad tensor name '" + name + "'");
    const std::string file = name + ".arvf";
    save_tensor(dir / file, t);
    index.push_back(json{{"name", name}, {"file", file}, {"shape", t.shape()}});
  }
  const json m{{"format", "autoreg-checkpoint"}, {"version", 1}, {"meta", c.meta}, {"tensors", index}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  json m;
  try {
    m = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw FormatError("manifest", std::string("checkpoint manifest: ") + e.what());
  }
  Checkpoint c;
  try {
    if (m.at("format") != "autoreg-checkpoint") throw FormatError("format", "not an autoreg checkpoint");
    if (m.at("version") != 1) throw FormatError("version", "unsupported checkpoint version");
    c.meta = m.at("meta");
    for (const auto& e : m.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const fs::path file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file)) throw FormatError(name, "checkpoint: tensor file " + file.string() + " is missing");
      Tensor t = load_tensor(file);
      if (t.shape() != e.at("shape").get<std::vector<int>>())
        throw FormatError(name, "checkpoint: tensor '" + name + "' shape differs from the manifest");
      c.tensors.emplace_back(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest", std::string("checkpoint manifest: ") + e.what());
  }
  return c;
}

}  // namespace autoreg
