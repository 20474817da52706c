#include "ccgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ccgan/ops.hpp"
#include "ccgan/pnm.hpp"

namespace ccgan {

namespace {

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (buf.size() < offset + 4) {
    throw DataError("'" + path.string() + "': truncated IDX header", DataError::Kind::kTruncated);
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

std::uint8_t unit_to_byte(float v) {
  const float c = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround((c + 1.0f) * 127.5f));
}

}  // namespace

// --------------------------------------------------------------------------

ConditionVector ConditionVector::one_hot(int label, std::size_t dim) {
  if (label < 0 || static_cast<std::size_t>(label) >= dim) {
    throw DataError("label " + std::to_string(label) + " does not fit a " + std::to_string(dim) +
                    "-way one-hot condition");
  }
  ConditionVector z{std::vector<float>(dim, 0.0f), ConditionKind::kOneHot};
  z.values[static_cast<std::size_t>(label)] = 1.0f;
  return z;
}

void ConditionVector::validate() const {
  switch (kind) {
    case ConditionKind::kOneHot: {
      const auto ones = std::count(values.begin(), values.end(), 1.0f);
      const auto zeros = std::count(values.begin(), values.end(), 0.0f);
      if (ones != 1 || zeros + ones != static_cast<std::ptrdiff_t>(values.size()))
        throw DataError("one-hot condition must hold exactly one 1 and zeros elsewhere");
      break;
    }
    case ConditionKind::kBinary:
      if (!std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f || v == 1.0f; }))
        throw DataError("binary condition entries must be 0 or 1");
      break;
    case ConditionKind::kEmbedding:
      if (!std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); }))
        throw DataError("embedding condition must be finite");
      break;
  }
}

// --------------------------------------------------------------------------

Tensor<float> LabeledImageSet::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = channels() * height() * width();
  Tensor<float> out(Shape{indices.size(), channels(), height(), width()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ContractError("gather: index out of range");
    std::copy_n(images.data().data() + indices[i] * per, per, out.data().data() + i * per);
  }
  return out;
}

LabeledImageSet LabeledImageSet::subset(std::span<const std::size_t> indices) const {
  LabeledImageSet out;
  out.images = gather(indices);
  out.domain = domain;
  for (auto i : indices) {
    out.labels.push_back(labels[i]);
    if (!attributes.empty()) out.attributes.push_back(attributes[i]);
    out.source_index.push_back(source_index[i]);
  }
  return out;
}

LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (read_be32(img, 0, images_path) != kIdxImageMagic) {
    throw DataError("'" + images_path.string() + "': not an IDX image file (magic != 2051)",
                    DataError::Kind::kMagic);
  }
  if (read_be32(lab, 0, labels_path) != kIdxLabelMagic) {
    throw DataError("'" + labels_path.string() + "': not an IDX label file (magic != 2049)",
                    DataError::Kind::kMagic);
  }
  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count) {
    throw DataError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                        std::to_string(label_count) + " labels",
                    DataError::Kind::kCountMismatch);
  }
  if (img.size() < 16 + count * rows * cols) {
    throw DataError("'" + images_path.string() + "': truncated pixel data",
                    DataError::Kind::kTruncated);
  }
  if (lab.size() < 8 + count) {
    throw DataError("'" + labels_path.string() + "': truncated label data",
                    DataError::Kind::kTruncated);
  }

  LabeledImageSet set;
  set.images = Tensor<float>(Shape{count, 1, rows, cols});
  auto px = set.images.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = byte_to_unit(img[16 + i]);
  set.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (lab[8 + i] > 9) {
      throw DataError("'" + labels_path.string() + "': label " + std::to_string(lab[8 + i]) +
                      " outside 0..9");
    }
    set.labels[i] = lab[8 + i];
  }
  set.source_index.resize(count);
  std::iota(set.source_index.begin(), set.source_index.end(), std::size_t{0});
  return set;
}

void write_idx(const LabeledImageSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (set.channels() != 1) throw ContractError("write_idx: IDX images are single-channel");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IoError("cannot write IDX files next to '" + images_path.string() + "'");
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(set.size()));
  put_be32(img, static_cast<std::uint32_t>(set.height()));
  put_be32(img, static_cast<std::uint32_t>(set.width()));
  std::vector<char> bytes(set.images.numel());
  auto px = set.images.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(unit_to_byte(px[i]));
  img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(set.size()));
  for (int l : set.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) throw IoError("write failed for '" + images_path.string() + "'");
}

LabeledImageSet load_attribute_table(const std::filesystem::path& table,
                                     const std::filesystem::path& image_dir,
                                     std::size_t attribute_count) {
  std::ifstream in(table);
  if (!in) throw IoError("cannot open '" + table.string() + "'");
  LabeledImageSet set;
  std::vector<float> pixels;
  std::size_t c = 0, h = 0, w = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::string file;
    row >> file;
    std::vector<std::uint8_t> attrs;
    std::string tok;
    while (row >> tok) {
      if (tok != "0" && tok != "1") {
        throw DataError(table.string() + ":" + std::to_string(line_no) +
                        ": attribute flags must be 0 or 1, got '" + tok + "'");
      }
      attrs.push_back(tok == "1" ? 1 : 0);
    }
    if (attrs.size() != attribute_count) {
      throw DataError(table.string() + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(attribute_count) + " attribute flags, got " +
                          std::to_string(attrs.size()),
                      DataError::Kind::kCountMismatch);
    }
    const Raster r = read_pnm(image_dir / file);
    if (set.labels.empty()) {
      c = r.channels;
      h = r.height;
      w = r.width;
    } else if (r.channels != c || r.height != h || r.width != w) {
      throw DataError("'" + file + "': image size differs from the first image in the table");
    }
    // Interleaved raster -> planar CHW.
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) pixels.push_back(byte_to_unit(r.pixels[p * c + ch]));
    set.source_index.push_back(set.labels.size());
    set.labels.push_back(0);
    set.attributes.push_back(std::move(attrs));
  }
  if (set.labels.empty()) throw DataError("'" + table.string() + "': no rows");
  set.images = Tensor<float>(Shape{set.labels.size(), c, h, w}, std::move(pixels));
  return set;
}

LabeledImageSet make_low_res(const LabeledImageSet& set, std::size_t factor) {
  if (factor == 0 || set.height() % factor != 0 || set.width() % factor != 0) {
    throw ConfigError("low-res factor " + std::to_string(factor) + " must divide the " +
                      std::to_string(set.height()) + "x" + std::to_string(set.width()) +
                      " image size");
  }
  LabeledImageSet out = set;
  out.images = Tensor<float>(set.images.shape());
  out.domain = Domain::kLowRes;
  constexpr std::size_t kChunk = 1024;
  const std::size_t per = set.channels() * set.height() * set.width();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, set.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> chunk = set.gather(idx);
    Tensor<float> low = resize_bilinear(avg_pool2d(chunk, factor), set.height(), set.width());
    std::copy(low.data().begin(), low.data().end(), out.images.data().begin() + start * per);
  }
  return out;
}

UnpairedPools split_unpaired(const LabeledImageSet& train, std::size_t low_res_factor,
                             std::uint64_t seed) {
  if (train.size() < 2) throw DataError("need at least two images to form unpaired pools");
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t half = perm.size() / 2;
  std::vector<std::size_t> xi(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<std::size_t> yi(perm.begin() + static_cast<std::ptrdiff_t>(half), perm.end());
  std::sort(xi.begin(), xi.end());
  std::sort(yi.begin(), yi.end());
  UnpairedPools pools{train.subset(xi), make_low_res(train.subset(yi), low_res_factor)};
  pools.x.domain = Domain::kHighRes;
  return pools;
}

// --------------------------------------------------------------------------

ConditionVector condition_of(const LabeledImageSet& set, std::size_t index, Mode mode,
                             std::size_t cond_dim, const Embedder<float>* embedder) {
  const std::size_t one[] = {index};
  Tensor<float> z = conditions_of(set, one, mode, cond_dim, embedder);
  ConditionVector out;
  out.values.assign(z.data().begin(), z.data().end());
  out.kind = mode == Mode::kIdentity
                 ? ConditionKind::kEmbedding
                 : (set.attributes.empty() ? ConditionKind::kOneHot : ConditionKind::kBinary);
  return out;
}

Tensor<float> conditions_of(const LabeledImageSet& set, std::span<const std::size_t> indices,
                            Mode mode, std::size_t cond_dim, const Embedder<float>* embedder) {
  if (mode == Mode::kIdentity) {
    if (embedder == nullptr) throw ConfigError("identity mode requires a pretrained embedder");
    if (embedder->dim() != cond_dim) {
      throw ConfigError("embedder dimension " + std::to_string(embedder->dim()) +
                        " differs from condition dimension " + std::to_string(cond_dim));
    }
    return embedder->embed(set.gather(indices));
  }
  Tensor<float> z(Shape{indices.size(), cond_dim});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t k = indices[i];
    if (set.attributes.empty()) {
      auto v = ConditionVector::one_hot(set.labels.at(k), cond_dim);
      std::copy(v.values.begin(), v.values.end(), z.data().begin() + i * cond_dim);
    } else {
      const auto& a = set.attributes.at(k);
      if (a.size() != cond_dim) {
        throw ConfigError("attribute vector length " + std::to_string(a.size()) +
                          " differs from condition dimension " + std::to_string(cond_dim));
      }
      for (std::size_t j = 0; j < cond_dim; ++j) z[i * cond_dim + j] = a[j];
    }
  }
  return z;
}

ConditionTable::ConditionTable(const LabeledImageSet& set, Mode mode, std::size_t cond_dim,
                               const Embedder<float>* embedder)
    : mode_(mode), dim_(cond_dim), rows_(set.size()) {
  values_.reserve(rows_ * dim_);
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < rows_; start += kChunk) {
    const std::size_t end = std::min(start + kChunk, rows_);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> z = conditions_of(set, idx, mode, cond_dim, embedder);
    values_.insert(values_.end(), z.data().begin(), z.data().end());
  }
}

namespace {

bool rows_equal(std::span<const float> a, std::span<const float> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

Batch sample_batch(const LabeledImageSet& xset, const ConditionTable& xcond,
                   const LabeledImageSet& yset, std::size_t batch, std::mt19937_64& rng) {
  if (batch == 0) throw ConfigError("batch size must be >= 1");
  if (batch > xset.size() || batch > yset.size()) {
    throw ConfigError("batch size " + std::to_string(batch) + " exceeds pool size (" +
                      std::to_string(xset.size()) + " / " + std::to_string(yset.size()) + ")");
  }
  if (xcond.size() != xset.size()) throw ContractError("condition table does not match X pool");
  const std::size_t d = xcond.dim();
  std::uniform_int_distribution<std::size_t> pick_x(0, xset.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_y(0, yset.size() - 1);

  Batch b;
  b.x_index.resize(batch);
  b.y_index.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) b.x_index[i] = pick_x(rng);
  for (std::size_t i = 0; i < batch; ++i) b.y_index[i] = pick_y(rng);
  b.x = xset.gather(b.x_index);
  b.y = yset.gather(b.y_index);
  b.z = Tensor<float>(Shape{batch, d});
  b.z_hat = Tensor<float>(Shape{batch, d});
  for (std::size_t i = 0; i < batch; ++i) {
    auto row = xcond.row(b.x_index[i]);
    std::copy(row.begin(), row.end(), b.z.data().begin() + i * d);
  }

  for (std::size_t i = 0; i < batch; ++i) {
    auto zi = xcond.row(b.x_index[i]);
    std::span<float> out(b.z_hat.data().data() + i * d, d);
    if (xcond.mode() == Mode::kIdentity) {
      constexpr int kMaxDraws = 10000;
      int draws = 0;
      std::size_t k;
      do {
        if (++draws > kMaxDraws) throw DataError("no image with a different embedding in X pool");
        k = pick_x(rng);
      } while (k == b.x_index[i] || rows_equal(xcond.row(k), zi));
      auto zk = xcond.row(k);
      std::copy(zk.begin(), zk.end(), out.begin());
      continue;
    }
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < batch; ++j)
      if (j != i && !rows_equal(xcond.row(b.x_index[j]), zi)) others.push_back(j);
    if (!others.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
      auto zj = xcond.row(b.x_index[others[pick(rng)]]);
      std::copy(zj.begin(), zj.end(), out.begin());
      continue;
    }
    // Every sample in the batch carries the same condition.
    std::copy(zi.begin(), zi.end(), out.begin());
    if (xset.attributes.empty()) {
      const auto hot = static_cast<std::size_t>(std::find(zi.begin(), zi.end(), 1.0f) - zi.begin());
      std::uniform_int_distribution<std::size_t> pick(0, d - 2);
      std::size_t other = pick(rng);
      if (other >= hot) ++other;
      std::fill(out.begin(), out.end(), 0.0f);
      out[other] = 1.0f;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, d - 1);
      const std::size_t bit = pick(rng);
      out[bit] = 1.0f - out[bit];
    }
  }
  return b;
}

}  // namespace ccgan
