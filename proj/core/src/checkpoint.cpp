#include "ccgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "ccgan/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace ccgan {

namespace {

constexpr std::size_t kMaxRank = 8;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(CheckpointError::Kind kind, const char* what) {
    need(sizeof(U), kind, what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, CheckpointError::Kind kind, const char* what) {
    need(n, kind, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, CheckpointError::Kind kind, const char* what) const {
    if (remaining() < n) {
      throw CheckpointError(kind, std::string("checkpoint truncated while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

template <typename U>
std::string fmt(U v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Values from a settings document; errors name the key and its line.
class Fields {
 public:
  explicit Fields(const IniDocument& doc) : doc_(doc) {}

  template <typename U>
  void read(const std::string& key, U& out) const {
    const auto* e = doc_.find(key);
    if (!e) return;
    const std::string where =
        e->line ? " (line " + std::to_string(e->line) + ")" : std::string();
    std::istringstream is(e->value);
    U v{};
    is >> v;
    char extra;
    if (!is || (is >> extra)) {
      throw ConfigError("invalid value '" + e->value + "' for " + key + where);
    }
    if constexpr (std::is_unsigned_v<U>) {
      if (e->value.find('-') != std::string::npos) {
        throw ConfigError("invalid value '" + e->value + "' for " + key + where + ": must be >= 0");
      }
    }
    out = v;
  }

  std::optional<std::string> text(const std::string& key) const { return doc_.get(key); }

 private:
  const IniDocument& doc_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, const TensorRecord*> index_records(const CheckpointFile& file) {
  std::map<std::string, const TensorRecord*> out;
  for (const auto& r : file.records) {
    if (!out.emplace(r.name, &r).second) {
      throw CheckpointError(CheckpointError::Kind::kPayload, "duplicate tensor '" + r.name + "'");
    }
  }
  return out;
}

void restore(const std::map<std::string, const TensorRecord*>& records, const std::string& name,
             Tensor<float> dst) {
  auto it = records.find(name);
  if (it == records.end()) {
    throw CheckpointError(CheckpointError::Kind::kPayload, "checkpoint lacks tensor '" + name + "'");
  }
  const Tensor<float> src = from_record<float>(*it->second);
  if (src.shape() != dst.shape()) {
    throw CheckpointError(CheckpointError::Kind::kPayload,
                          "tensor '" + name + "' has shape " + shape_str(src.shape()) +
                              ", model expects " + shape_str(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

std::string header_value(const IniDocument& doc, const std::string& key) {
  auto v = doc.get(key);
  if (!v) throw CheckpointError(CheckpointError::Kind::kHeader, "checkpoint header lacks " + key);
  return *v;
}

std::uint64_t header_u64(const IniDocument& doc, const std::string& key) {
  const auto v = header_value(doc, key);
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw CheckpointError(CheckpointError::Kind::kHeader, "checkpoint header: bad " + key + " '" + v + "'");
}

void expect_kind(const CheckpointFile& f, const std::string& kind, const std::filesystem::path& path) {
  const auto k = header_value(f.header, "checkpoint.kind");
  if (k != kind) {
    throw ConfigError(path.string() + " holds a '" + k + "' checkpoint, expected '" + kind + "'");
  }
}

}  // namespace

// --------------------------------------------------------------------------

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& tensor) {
  TensorRecord r;
  r.name = name;
  r.dtype = dtype_of<T>();
  r.shape = tensor.shape();
  r.raw.resize(tensor.numel() * sizeof(T));
  std::memcpy(r.raw.data(), tensor.data().data(), r.raw.size());
  return r;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& record) {
  const std::size_t n = shape_numel(record.shape);
  const std::size_t width = record.dtype == DType::kFloat32 ? sizeof(float) : sizeof(double);
  if (record.raw.size() != n * width) {
    throw CheckpointError(CheckpointError::Kind::kPayload,
                          "tensor '" + record.name + "' byte count does not match its shape");
  }
  Tensor<T> t(record.shape);
  auto d = t.data();
  if (record.dtype == DType::kFloat32) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, record.raw.data() + i * sizeof(float), sizeof(float));
      d[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, record.raw.data() + i * sizeof(double), sizeof(double));
      d[i] = static_cast<T>(v);
    }
  }
  return t;
}

template TensorRecord to_record<float>(const std::string&, const Tensor<float>&);
template TensorRecord to_record<double>(const std::string&, const Tensor<double>&);
template Tensor<float> from_record<float>(const TensorRecord&);
template Tensor<double> from_record<double>(const TensorRecord&);

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  IniDocument header = file.header;
  header.set("checkpoint.tensors", std::to_string(file.records.size()));
  const std::string text = header.to_text();

  std::string out;
  out.append(kCheckpointMagic, 4);
  put<std::uint32_t>(out, file.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& r : file.records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(r.raw.data()), r.raw.size());
  }

  if (!path.parent_path().empty()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  using K = CheckpointError::Kind;
  const std::string bytes = read_file(path);
  Reader rd(bytes);
  const std::string magic = rd.take(4, K::kHeader, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(K::kHeader, path.string() + " is not a checkpoint (bad magic)");
  }
  CheckpointFile f;
  f.version = rd.get<std::uint32_t>(K::kHeader, "version");
  if (f.version != kCheckpointVersion) {
    throw CheckpointError(K::kVersion, "checkpoint version " + std::to_string(f.version) +
                                           " is not supported (expected " +
                                           std::to_string(kCheckpointVersion) + ")");
  }
  const auto text_len = rd.get<std::uint32_t>(K::kHeader, "header length");
  const std::string text = rd.take(text_len, K::kHeader, "header text");
  try {
    f.header = IniDocument::parse(text, path.string() + "[header]");
  } catch (const ConfigError& e) {
    throw CheckpointError(K::kHeader, e.what());
  }
  const auto count = header_u64(f.header, "checkpoint.tensors");

  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord r;
    const auto name_len = rd.get<std::uint32_t>(K::kPayload, "tensor name length");
    r.name = rd.take(name_len, K::kPayload, "tensor name");
    const auto tag = rd.get<std::uint8_t>(K::kPayload, "dtype");
    if (tag > 1) {
      throw CheckpointError(K::kPayload, "tensor '" + r.name + "' has unknown dtype tag " +
                                             std::to_string(tag));
    }
    r.dtype = static_cast<DType>(tag);
    const auto rank = rd.get<std::uint32_t>(K::kPayload, "rank");
    if (rank > kMaxRank) throw CheckpointError(K::kPayload, "tensor '" + r.name + "' has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = rd.get<std::uint64_t>(K::kPayload, "extent");
      if (e != 0 && n > std::numeric_limits<std::size_t>::max() / e) {
        throw CheckpointError(K::kPayload, "tensor '" + r.name + "' extents overflow");
      }
      n *= e;
      r.shape.push_back(e);
    }
    const std::size_t width = r.dtype == DType::kFloat32 ? 4 : 8;
    if (n > rd.remaining() / width) {
      throw CheckpointError(K::kPayload, "checkpoint truncated inside tensor '" + r.name + "'");
    }
    const std::string raw = rd.take(n * width, K::kPayload, "tensor values");
    r.raw.assign(raw.begin(), raw.end());
    f.records.push_back(std::move(r));
  }
  if (rd.remaining() != 0) {
    throw CheckpointError(K::kPayload, std::to_string(rd.remaining()) +
                                           " unexpected trailing bytes after the last tensor");
  }
  return f;
}

// --------------------------------------------------------------------------

void write_arch(IniDocument& doc, const ArchConfig& a) {
  doc.set("arch.image_channels", fmt(a.image_channels));
  doc.set("arch.image_size", fmt(a.image_size));
  doc.set("arch.cond_dim", fmt(a.cond_dim));
  doc.set("arch.gen_base", fmt(a.gen_base));
  doc.set("arch.res_blocks", fmt(a.res_blocks));
  doc.set("arch.disc_base", fmt(a.disc_base));
  doc.set("arch.emb_conv1", fmt(a.emb_conv1));
  doc.set("arch.emb_conv2", fmt(a.emb_conv2));
  doc.set("arch.emb_dim", fmt(a.emb_dim));
  doc.set("arch.emb_classes", fmt(a.emb_classes));
}

ArchConfig read_arch(const IniDocument& doc) {
  ArchConfig a;
  if (auto preset = doc.get("arch.preset")) {
    if (*preset == "face") {
      a = ArchConfig::face();
    } else if (*preset != "mnist") {
      throw ConfigError("arch.preset must be mnist or face, got '" + *preset + "'");
    }
  }
  Fields f(doc);
  f.read("arch.image_channels", a.image_channels);
  f.read("arch.image_size", a.image_size);
  f.read("arch.cond_dim", a.cond_dim);
  f.read("arch.gen_base", a.gen_base);
  f.read("arch.res_blocks", a.res_blocks);
  f.read("arch.disc_base", a.disc_base);
  f.read("arch.emb_conv1", a.emb_conv1);
  f.read("arch.emb_conv2", a.emb_conv2);
  f.read("arch.emb_dim", a.emb_dim);
  f.read("arch.emb_classes", a.emb_classes);
  a.validate();
  return a;
}

void write_train(IniDocument& doc, const TrainConfig& c) {
  doc.set("train.mode", to_string(c.mode));
  doc.set("train.iterations", fmt(c.iterations));
  doc.set("train.batch_size", fmt(c.batch_size));
  doc.set("train.optimizer", to_string(c.optimizer.kind));
  doc.set("train.learning_rate", fmt(c.optimizer.learning_rate));
  doc.set("train.beta1", fmt(c.optimizer.beta1));
  doc.set("train.beta2", fmt(c.optimizer.beta2));
  doc.set("train.epsilon", fmt(c.optimizer.epsilon));
  doc.set("train.lambda1", fmt(c.lambda1));
  doc.set("train.lambda2", fmt(c.lambda2));
  doc.set("train.identity_weight", fmt(c.identity_weight));
  doc.set("train.seed", fmt(c.seed));
  doc.set("train.checkpoint_interval", fmt(c.checkpoint_interval));
  doc.set("train.log_interval", fmt(c.log_interval));
}

TrainConfig read_train(const IniDocument& doc) {
  TrainConfig c;
  Fields f(doc);
  if (auto m = f.text("train.mode")) c.mode = parse_mode(*m);
  if (auto o = f.text("train.optimizer")) c.optimizer.kind = parse_optimizer(*o);
  f.read("train.iterations", c.iterations);
  f.read("train.batch_size", c.batch_size);
  f.read("train.learning_rate", c.optimizer.learning_rate);
  f.read("train.beta1", c.optimizer.beta1);
  f.read("train.beta2", c.optimizer.beta2);
  f.read("train.epsilon", c.optimizer.epsilon);
  f.read("train.lambda1", c.lambda1);
  f.read("train.lambda2", c.lambda2);
  f.read("train.identity_weight", c.identity_weight);
  f.read("train.seed", c.seed);
  f.read("train.checkpoint_interval", c.checkpoint_interval);
  f.read("train.log_interval", c.log_interval);
  c.validate();
  return c;
}

// --------------------------------------------------------------------------

void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path) {
  CheckpointFile f;
  f.header.set("checkpoint.kind", "cyclegan");
  f.header.set("checkpoint.iteration", std::to_string(trainer.iteration()));
  f.header.set("checkpoint.tensors", "0");
  std::ostringstream rng;
  rng << trainer.rng();
  f.header.set("checkpoint.rng", rng.str());
  f.header.set("checkpoint.steps_g_xy", std::to_string(trainer.opt_g_xy().steps()));
  f.header.set("checkpoint.steps_g_yx", std::to_string(trainer.opt_g_yx().steps()));
  f.header.set("checkpoint.steps_d_x", std::to_string(trainer.opt_d_x().steps()));
  f.header.set("checkpoint.steps_d_y", std::to_string(trainer.opt_d_y().steps()));
  write_arch(f.header, trainer.arch());
  write_train(f.header, trainer.config());

  for (const auto& p : trainer.bundle().named_parameters()) f.records.push_back(to_record(p.name, p.tensor));
  auto moments = [&f](const std::string& prefix, const ParamSet<float>& ps, const Optimizer<float>& opt) {
    const auto& entries = ps.entries();
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
      const std::string base = "opt/" + prefix + "/" + entries[i].name;
      f.records.push_back(to_record(base + "/m", opt.first_moments()[i]));
      f.records.push_back(to_record(base + "/v", opt.second_moments()[i]));
    }
  };
  const auto& b = trainer.bundle();
  moments("g_xy", b.g_xy.params(), trainer.opt_g_xy());
  moments("g_yx", b.g_yx.params(), trainer.opt_g_yx());
  moments("d_x", b.d_x.params(), trainer.opt_d_x());
  moments("d_y", b.d_y.params(), trainer.opt_d_y());
  write_checkpoint_file(path, f);
}

namespace {

std::optional<Embedder<float>> embedder_from(const std::map<std::string, const TensorRecord*>& recs,
                                             const ArchConfig& arch) {
  Embedder<float> emb(arch);
  for (const auto& e : emb.params().entries()) restore(recs, "embedder/" + e.name, e.tensor);
  freeze(emb.params());
  return emb;
}

}  // namespace

Trainer load_trainer(const std::filesystem::path& path) {
  const CheckpointFile f = read_checkpoint_file(path);
  expect_kind(f, "cyclegan", path);
  const ArchConfig arch = read_arch(f.header);
  const TrainConfig cfg = read_train(f.header);
  const auto recs = index_records(f);

  std::optional<Embedder<float>> emb;
  if (cfg.mode == Mode::kIdentity) emb = embedder_from(recs, arch);
  Trainer t(arch, cfg, std::move(emb));
  const auto params = t.bundle().named_parameters();
  std::size_t expected = params.size();
  for (const auto& p : params) restore(recs, p.name, p.tensor);

  auto moments = [&](const std::string& prefix, const ParamSet<float>& ps, Optimizer<float>& opt,
                     const std::string& steps_key) {
    const auto& entries = ps.entries();
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
      const std::string base = "opt/" + prefix + "/" + entries[i].name;
      restore(recs, base + "/m", opt.first_moments()[i]);
      restore(recs, base + "/v", opt.second_moments()[i]);
      expected += 2;
    }
    opt.set_steps(header_u64(f.header, steps_key));
  };
  moments("g_xy", t.bundle().g_xy.params(), t.opt_g_xy(), "checkpoint.steps_g_xy");
  moments("g_yx", t.bundle().g_yx.params(), t.opt_g_yx(), "checkpoint.steps_g_yx");
  moments("d_x", t.bundle().d_x.params(), t.opt_d_x(), "checkpoint.steps_d_x");
  moments("d_y", t.bundle().d_y.params(), t.opt_d_y(), "checkpoint.steps_d_y");
  if (expected != f.records.size()) {
    throw CheckpointError(CheckpointError::Kind::kPayload,
                          "checkpoint holds " + std::to_string(f.records.size()) +
                              " tensors, model expects " + std::to_string(expected));
  }

  t.set_iteration(header_u64(f.header, "checkpoint.iteration"));
  std::istringstream rng(header_value(f.header, "checkpoint.rng"));
  rng >> t.rng();
  if (!rng) throw CheckpointError(CheckpointError::Kind::kHeader, "checkpoint header: bad rng state");
  return t;
}

ModelBundle<float> load_checkpoint(const std::filesystem::path& path,
                                   std::optional<Mode> expected_mode,
                                   std::optional<std::size_t> expected_cond_dim) {
  const CheckpointFile f = read_checkpoint_file(path);
  expect_kind(f, "cyclegan", path);
  const ArchConfig arch = read_arch(f.header);
  const Mode mode = parse_mode(header_value(f.header, "train.mode"));
  if (expected_mode && *expected_mode != mode) {
    throw ConfigError(path.string() + " was trained in " + to_string(mode) + " mode, but " +
                      to_string(*expected_mode) + " mode was requested");
  }
  if (expected_cond_dim && *expected_cond_dim != arch.cond_dim) {
    throw ConfigError(path.string() + " has condition width " + std::to_string(arch.cond_dim) +
                      ", expected " + std::to_string(*expected_cond_dim));
  }
  const auto recs = index_records(f);
  ModelBundle<float> b(arch, mode);
  if (mode == Mode::kIdentity) b.embedder = embedder_from(recs, arch);
  for (const auto& p : b.named_parameters()) restore(recs, p.name, p.tensor);
  return b;
}

void save_embedder(const Embedder<float>& embedder, const ArchConfig& arch, double accuracy,
                   const std::filesystem::path& path) {
  CheckpointFile f;
  f.header.set("checkpoint.kind", "embedder");
  f.header.set("checkpoint.accuracy", fmt(accuracy));
  f.header.set("checkpoint.tensors", "0");
  write_arch(f.header, arch);
  for (const auto& e : embedder.params().entries()) {
    f.records.push_back(to_record("embedder/" + e.name, e.tensor));
  }
  write_checkpoint_file(path, f);
}

Embedder<float> load_embedder(const std::filesystem::path& path, const ArchConfig* expect) {
  const CheckpointFile f = read_checkpoint_file(path);
  expect_kind(f, "embedder", path);
  const ArchConfig arch = read_arch(f.header);
  if (expect && (expect->emb_dim != arch.emb_dim || expect->image_channels != arch.image_channels ||
                 expect->image_size != arch.image_size || expect->emb_conv1 != arch.emb_conv1 ||
                 expect->emb_conv2 != arch.emb_conv2 || expect->emb_classes != arch.emb_classes)) {
    throw ConfigError(path.string() + ": embedder architecture does not match the configuration");
  }
  return *embedder_from(index_records(f), arch);
}

}  // namespace ccgan
