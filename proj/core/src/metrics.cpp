#include "ccgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace ccgan {

namespace {

std::vector<double> gaussian_1d(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-(d * d) / (2 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-mode separable filter of one h x w plane.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t k = g.size();
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t j = 0; j < k; ++j) s += g[j] * img[y * w + x + j];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor<double>& a, const Tensor<double>& b, const SsimParams& params) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto& s = a.shape();
  std::size_t c = 1, h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0], w = s[1];
  } else if (s.size() == 3) {
    c = s[0], h = s[1], w = s[2];
  } else if (s.size() == 4 && s[0] == 1) {
    c = s[1], h = s[2], w = s[3];
  } else {
    throw ShapeError("ssim: expected a single [C,H,W] image, got " + shape_str(s));
  }
  if (h < params.window || w < params.window) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than the " + std::to_string(params.window) + "x" +
                     std::to_string(params.window) + " window");
  }
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);
  const auto g = gaussian_1d(params.window, params.sigma);
  const std::size_t p = h * w;

  double total = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> x(a.data().begin() + ch * p, a.data().begin() + (ch + 1) * p);
    std::vector<double> y(b.data().begin() + ch * p, b.data().begin() + (ch + 1) * p);
    std::vector<double> xx(p), yy(p), xy(p);
    for (std::size_t i = 0; i < p; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g);
    const auto my = filter_valid(y, h, w, g);
    const auto exx = filter_valid(xx, h, w, g);
    const auto eyy = filter_valid(yy, h, w, g);
    const auto exy = filter_valid(xy, h, w, g);
    double sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = exx[i] - mx[i] * mx[i];
      const double vy = eyy[i] - my[i] * my[i];
      const double cxy = exy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(c);
}

Tensor<double> to_unit_range(const Tensor<float>& images) {
  Tensor<double> out(images.shape());
  auto s = images.data();
  auto d = out.data();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] = (static_cast<double>(s[i]) + 1.0) / 2.0;
  return out;
}

double label_fidelity(const Tensor<float>& images, std::span<const int> labels,
                      const Embedder<float>& oracle) {
  if (images.dim(0) != labels.size()) {
    throw ShapeError("label_fidelity: " + std::to_string(images.dim(0)) + " images vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  constexpr std::size_t kChunk = 256;
  const std::size_t per = images.numel() / images.dim(0);
  std::size_t hits = 0;
  for (std::size_t start = 0; start < labels.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, labels.size() - start);
    Shape shape = images.shape();
    shape[0] = n;
    std::vector<float> chunk(images.data().begin() + start * per,
                             images.data().begin() + (start + n) * per);
    const auto predicted = oracle.classify(Tensor<float>(shape, std::move(chunk)));
    for (std::size_t i = 0; i < n; ++i) hits += predicted[i] == labels[start + i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

Tensor<float> embed_each(const Embedder<float>& embedder, const Tensor<float>& images) {
  const std::size_t n = images.dim(0), per = images.numel() / n;
  Shape one = images.shape();
  one[0] = 1;
  Tensor<float> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = images.data().subspan(i * per, per);
    const Tensor<float> e = embedder.embed(Tensor<float>(one, std::vector<float>(src.begin(), src.end())));
    if (i == 0) out = Tensor<float>(Shape{n, e.numel()});
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + i * e.numel());
  }
  return out;
}

}  // namespace

double embedding_distance(const Tensor<float>& images, const Tensor<float>& exemplars,
                          const Embedder<float>& embedder) {
  const std::size_t n = images.dim(0);
  if (exemplars.dim(0) != n && exemplars.dim(0) != 1) {
    throw ShapeError("embedding_distance: need one exemplar per image or a single exemplar");
  }
  if (n == 0) return 0.0;
  // One image at a time: batched GEMM blocking may perturb the last bits,
  // and a repeated exemplar must score exactly zero.
  const Tensor<float> eg = embed_each(embedder, images);
  const Tensor<float> ee = embed_each(embedder, exemplars);
  const std::size_t e = eg.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = exemplars.dim(0) == 1 ? 0 : i;
    double s = 0;
    for (std::size_t k = 0; k < e; ++k)
      s += std::abs(static_cast<double>(eg[i * e + k]) - static_cast<double>(ee[j * e + k]));
    total += s / static_cast<double>(e);
  }
  return total / static_cast<double>(n);
}

// --------------------------------------------------------------------------

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "sample_count = " << sample_count << '\n';
  os << "mean_ssim = " << mean_ssim << '\n';
  os << "cycle_l1 = " << cycle_l1 << '\n';
  os << "label_fidelity = " << label_fidelity << '\n';
  if (mean_embedding_l1) os << "mean_embedding_l1 = " << *mean_embedding_l1 << '\n';
  os << "per_image_ssim =";
  for (double v : per_image_ssim) os << ' ' << v;
  os << '\n';
  return os.str();
}

EvalReport EvalReport::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("eval report: malformed line '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&kv](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("eval report: missing field ") + key);
    return it->second;
  };
  EvalReport r;
  r.sample_count = std::stoul(need("sample_count"));
  r.mean_ssim = std::stod(need("mean_ssim"));
  r.cycle_l1 = std::stod(need("cycle_l1"));
  r.label_fidelity = std::stod(need("label_fidelity"));
  if (kv.count("mean_embedding_l1")) r.mean_embedding_l1 = std::stod(kv["mean_embedding_l1"]);
  std::istringstream vals(need("per_image_ssim"));
  double v;
  while (vals >> v) r.per_image_ssim.push_back(v);
  return r;
}

// --------------------------------------------------------------------------

Raster render_grid(const Tensor<float>& images, std::size_t rows, std::size_t cols) {
  if (images.rank() != 4) throw ShapeError("grid: expected [N,C,H,W] images");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != 1 && c != 3) throw ShapeError("grid: images must have 1 or 3 channels");
  if (rows * cols < n) {
    throw ContractError("grid: " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " cells cannot hold " + std::to_string(n) + " images");
  }
  if (rows == 0 || cols == 0) throw ContractError("grid: rows and cols must be >= 1");
  Raster r;
  r.channels = c;
  r.width = (w + 1) * cols - 1;
  r.height = (h + 1) * rows - 1;
  r.pixels.assign(r.width * r.height * c, 0);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x)
      if ((y + 1) % (h + 1) == 0 || (x + 1) % (w + 1) == 0)
        for (std::size_t ch = 0; ch < c; ++ch) r.pixels[(y * r.width + x) * c + ch] = 255;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / cols) * (h + 1), ox = (i % cols) * (w + 1);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float v = std::clamp(images[((i * c + ch) * h + y) * w + x], -1.0f, 1.0f);
          r.pixels[((oy + y) * r.width + ox + x) * c + ch] =
              static_cast<std::uint8_t>(std::lround((v + 1.0f) * 127.5f));
        }
  }
  return r;
}

void emit_grid(const Tensor<float>& images, std::size_t rows, std::size_t cols,
               const std::filesystem::path& path) {
  write_pnm(path, render_grid(images, rows, cols));
}

}  // namespace ccgan
