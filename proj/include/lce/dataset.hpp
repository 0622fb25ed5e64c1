#pragma once

// Dataset synthesis and loading. Layout under a dataset root:
//   hr/NNNN.png  lr/NNNN.png  clr_gt/NNNN.png  kernels/NNNN.lcet  manifest.tsv
// Each item owns an RNG stream derived from (seed, index), so synthesis is
// order-independent and byte-reproducible.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lce/config.hpp"
#include "lce/degrade.hpp"
#include "lce/image.hpp"
#include "lce/rng.hpp"
#include "lce/serialize.hpp"

namespace lce {

struct KernelDistribution {
  KernelKind kind = KernelKind::kIsotropic;
  index_t scale = 2;
  index_t size = 0;  // 0 = convention: iso 21; aniso 11 (x2) / 31 (x4)
  double sigma_min = 0.2, sigma_max = 2.0;    // isotropic
  double lambda_min = 0.6, lambda_max = 5.0;  // anisotropic eigen-variances
  double noise_min = 0.0, noise_max = 0.0;    // AWGN std-dev range
  index_t crop = 0;  // random-crop HR to crop x crop when > 0

  index_t kernel_size() const {
    if (size > 0) return size;
    if (kind == KernelKind::kIsotropic) return 21;
    return scale >= 4 ? 31 : 11;
  }
};

inline KernelDistribution kernel_distribution_from(const Config& cfg) {
  KernelDistribution d;
  const std::string kind = cfg.get_str("degrade.kind", "isotropic");
  if (kind == "isotropic") d.kind = KernelKind::kIsotropic;
  else if (kind == "anisotropic") d.kind = KernelKind::kAnisotropic;
  else throw ConfigError("degrade.kind must be isotropic|anisotropic, got '" + kind + "'");
  d.scale = cfg.get_int("degrade.scale", 2);
  if (d.scale != 1 && d.scale != 2 && d.scale != 4)
    throw ConfigError("degrade.scale must be 1, 2 or 4");
  d.size = cfg.get_int("degrade.kernel_size", 0);
  d.sigma_min = cfg.get_double("degrade.sigma_min", 0.2);
  d.sigma_max = cfg.get_double("degrade.sigma_max", d.scale >= 4 ? 4.0 : 2.0);
  d.lambda_min = cfg.get_double("degrade.lambda_min", 0.6);
  d.lambda_max = cfg.get_double("degrade.lambda_max", 5.0);
  d.noise_min = cfg.get_double("degrade.noise_min", 0.0);
  d.noise_max = cfg.get_double("degrade.noise_max", 0.0);
  d.crop = cfg.get_int("degrade.crop", 0);
  if (d.sigma_min <= 0 || d.sigma_max < d.sigma_min)
    throw ConfigError("bad degrade.sigma range");
  if (d.lambda_min <= 0 || d.lambda_max < d.lambda_min)
    throw ConfigError("bad degrade.lambda range");
  if (d.noise_min < 0 || d.noise_max < d.noise_min)
    throw ConfigError("bad degrade.noise range");
  return d;
}

// one row of manifest.tsv
struct ManifestRow {
  index_t index = 0;
  KernelKind kind = KernelKind::kIsotropic;
  index_t size = 0;
  index_t scale = 0;
  double sigma = 0, lambda1 = 0, lambda2 = 0, theta = 0, noise_sigma = 0;
  std::uint64_t seed = 0;
};

inline GaussianKernelSpec spec_of(const ManifestRow& row) {
  GaussianKernelSpec s;
  s.kind = row.kind;
  s.size = row.size;
  s.sigma = row.sigma;
  s.lambda1 = row.lambda1;
  s.lambda2 = row.lambda2;
  s.theta = row.theta;
  return s;
}

namespace datasetdetail {

inline std::string item_name(index_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04lld", static_cast<long long>(i));
  return buf;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace datasetdetail

inline void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "index\tkind\tsize\tscale\tsigma\tlambda1\tlambda2\ttheta\tnoise_sigma\tseed\n";
  for (const auto& r : rows) {
    f << r.index << '\t'
      << (r.kind == KernelKind::kIsotropic ? "isotropic" : "anisotropic") << '\t'
      << r.size << '\t' << r.scale << '\t' << datasetdetail::fmt_double(r.sigma) << '\t'
      << datasetdetail::fmt_double(r.lambda1) << '\t'
      << datasetdetail::fmt_double(r.lambda2) << '\t'
      << datasetdetail::fmt_double(r.theta) << '\t'
      << datasetdetail::fmt_double(r.noise_sigma) << '\t' << r.seed << '\n';
  }
  if (!f) throw IoError("failed writing " + path);
}

inline std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty manifest");
  std::vector<ManifestRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t pos = 0;
    while (true) {
      const size_t tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (cols.size() != 10) throw IoError(path + ": malformed manifest row '" + line + "'");
    ManifestRow r;
    r.index = std::stoll(cols[0]);
    if (cols[1] == "isotropic") r.kind = KernelKind::kIsotropic;
    else if (cols[1] == "anisotropic") r.kind = KernelKind::kAnisotropic;
    else throw IoError(path + ": unknown kernel kind '" + cols[1] + "'");
    r.size = std::stoll(cols[2]);
    r.scale = std::stoll(cols[3]);
    r.sigma = std::stod(cols[4]);
    r.lambda1 = std::stod(cols[5]);
    r.lambda2 = std::stod(cols[6]);
    r.theta = std::stod(cols[7]);
    r.noise_sigma = std::stod(cols[8]);
    r.seed = std::stoull(cols[9]);
    rows.push_back(r);
  }
  return rows;
}

// Procedural HR content: low-frequency color washes, hard-edged shapes,
// sinusoid gratings, and thin lines — enough structure that blur kernels
// matter and super-resolution has edges to recover.
inline Tensor make_hr_image(index_t h, index_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor img(Shape{1, 3, h, w});
  const double H = double(h), W = double(w);

  for (index_t c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.25, 0.75);
    const double ax = rng.uniform(0.05, 0.18), ay = rng.uniform(0.05, 0.18);
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    const double px = rng.uniform(0.0, 6.283185307179586);
    const double py = rng.uniform(0.0, 6.283185307179586);
    float* ch = img.data() + c * h * w;
    for (index_t y = 0; y < h; ++y)
      for (index_t x = 0; x < w; ++x)
        ch[y * w + x] = float(base + ax * std::cos(6.283185307179586 * fx * x / W + px) +
                              ay * std::cos(6.283185307179586 * fy * y / H + py));
  }

  // hard-edged ellipses and rectangles
  const int nshapes = 6 + int(rng.uniform_int(5));
  for (int s = 0; s < nshapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.1, 0.9) * W, cy = rng.uniform(0.1, 0.9) * H;
    const double rx = rng.uniform(0.04, 0.22) * W, ry = rng.uniform(0.04, 0.22) * H;
    const double ang = rng.uniform(0.0, 3.141592653589793);
    const double ca = std::cos(ang), sa = std::sin(ang);
    double col[3];
    for (double& v : col) v = rng.uniform(0.05, 0.95);
    const double mixw = rng.uniform(0.65, 1.0);
    for (index_t y = 0; y < h; ++y)
      for (index_t x = 0; x < w; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (ca * dx + sa * dy) / rx, v = (-sa * dx + ca * dy) / ry;
        const bool inside = ellipse ? (u * u + v * v <= 1.0)
                                    : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
        if (!inside) continue;
        for (index_t c = 0; c < 3; ++c) {
          float& p = img[(c * h + y) * w + x];
          p = float((1.0 - mixw) * p + mixw * col[c]);
        }
      }
  }

  // two gratings give mid-frequency texture across the frame
  for (int g = 0; g < 2; ++g) {
    const double f = rng.uniform(4.0, 14.0);
    const double ang = rng.uniform(0.0, 3.141592653589793);
    const double kx = std::cos(ang) * f / W, ky = std::sin(ang) * f / H;
    const double amp = rng.uniform(0.03, 0.08);
    const double ph = rng.uniform(0.0, 6.283185307179586);
    for (index_t y = 0; y < h; ++y)
      for (index_t x = 0; x < w; ++x) {
        const float dv = float(amp * std::sin(6.283185307179586 * (kx * x + ky * y) + ph));
        for (index_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] += dv;
      }
  }

  // thin bright/dark lines
  const int nlines = 3 + int(rng.uniform_int(4));
  for (int l = 0; l < nlines; ++l) {
    const double x0 = rng.uniform(0.0, 1.0) * W, y0 = rng.uniform(0.0, 1.0) * H;
    const double ang = rng.uniform(0.0, 3.141592653589793);
    const double dx = std::cos(ang), dy = std::sin(ang);
    const double lum = rng.uniform() < 0.5 ? 0.05 : 0.95;
    const double len = rng.uniform(0.3, 1.0) * std::min(W, H);
    for (double t = -len / 2; t <= len / 2; t += 0.5) {
      const index_t x = index_t(std::lround(x0 + t * dx));
      const index_t y = index_t(std::lround(y0 + t * dy));
      if (x < 0 || x >= w || y < 0 || y >= h) continue;
      for (index_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] = float(lum);
    }
  }

  clip01(img);
  return img;
}

inline void synth_hr_images(const std::string& dir, index_t count, index_t size,
                            std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (index_t i = 0; i < count; ++i) {
    Tensor hr = make_hr_image(size, size, derive_seed(seed, std::uint64_t(i)));
    write_png(dir + "/" + datasetdetail::item_name(i) + ".png", hr);
  }
}

inline std::vector<std::string> list_pngs(const std::string& dir) {
  std::vector<std::string> files;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  if (ec) throw IoError("cannot list " + dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  return files;
}

// Draws a kernel (and noise level) per item and writes the triplet plus the
// rendered kernel; returns the manifest rows it wrote.
inline std::vector<ManifestRow> synth_dataset(const std::string& hr_dir,
                                              const KernelDistribution& dist,
                                              index_t count, std::uint64_t seed,
                                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> hr_files;
  if (count > 0) {
    hr_files = list_pngs(hr_dir);
    if (hr_files.empty()) throw IoError("no PNG images in " + hr_dir);
  }
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/hr");
  fs::create_directories(out_dir + "/lr");
  fs::create_directories(out_dir + "/clr_gt");
  fs::create_directories(out_dir + "/kernels");

  std::vector<ManifestRow> rows;
  for (index_t i = 0; i < count; ++i) {
    const std::uint64_t item_seed = derive_seed(seed, std::uint64_t(i));
    Rng rng(item_seed);

    ManifestRow row;
    row.index = i;
    row.kind = dist.kind;
    row.size = dist.kernel_size();
    row.scale = dist.scale;
    row.seed = item_seed;
    if (dist.kind == KernelKind::kIsotropic) {
      row.sigma = rng.uniform(dist.sigma_min, dist.sigma_max);
    } else {
      row.lambda1 = rng.uniform(dist.lambda_min, dist.lambda_max);
      row.lambda2 = rng.uniform(dist.lambda_min, dist.lambda_max);
      row.theta = rng.uniform(0.0, 3.141592653589793);
    }
    row.noise_sigma = dist.noise_max > 0 ? rng.uniform(dist.noise_min, dist.noise_max) : 0.0;

    Tensor hr = read_png(hr_files[size_t(i % index_t(hr_files.size()))]);
    index_t H = hr.dim(2), W = hr.dim(3);
    if (dist.crop > 0) {
      LCE_CHECK(H >= dist.crop && W >= dist.crop, "image ", i, " is ", H, "x", W,
                ", smaller than crop ", dist.crop);
      const index_t oy = index_t(rng.uniform_int(std::uint64_t(H - dist.crop + 1)));
      const index_t ox = index_t(rng.uniform_int(std::uint64_t(W - dist.crop + 1)));
      Tensor crop(Shape{1, 3, dist.crop, dist.crop});
      for (index_t c = 0; c < 3; ++c)
        for (index_t y = 0; y < dist.crop; ++y)
          for (index_t x = 0; x < dist.crop; ++x)
            crop[(c * dist.crop + y) * dist.crop + x] = hr[(c * H + oy + y) * W + ox + x];
      hr = crop;
      H = W = dist.crop;
    } else if (H % dist.scale != 0 || W % dist.scale != 0) {
      const index_t H2 = (H / dist.scale) * dist.scale, W2 = (W / dist.scale) * dist.scale;
      LCE_CHECK(H2 > 0 && W2 > 0, "image ", i, " too small for scale ", dist.scale);
      Tensor trim(Shape{1, 3, H2, W2});
      for (index_t c = 0; c < 3; ++c)
        for (index_t y = 0; y < H2; ++y)
          for (index_t x = 0; x < W2; ++x)
            trim[(c * H2 + y) * W2 + x] = hr[(c * H + y) * W + x];
      hr = trim;
      H = H2;
      W = W2;
    }

    const Tensor kernel = render_kernel<float>(spec_of(row));
    const auto pair = degrade(hr, kernel, dist.scale, row.noise_sigma,
                              derive_seed(item_seed, 1));

    const std::string name = datasetdetail::item_name(i);
    write_png(out_dir + "/hr/" + name + ".png", hr);
    write_png(out_dir + "/lr/" + name + ".png", pair.lr);
    write_png(out_dir + "/clr_gt/" + name + ".png", pair.clr_gt);
    write_lcet(out_dir + "/kernels/" + name + ".lcet", kernel);
    rows.push_back(row);
  }
  write_manifest(out_dir + "/manifest.tsv", rows);
  return rows;
}

struct DatasetItem {
  Tensor hr, lr, clr_gt, kernel;
  ManifestRow meta;
};

struct Dataset {
  std::vector<DatasetItem> items;
  index_t scale = 1;
};

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const auto rows = read_manifest(dir + "/manifest.tsv");
  for (const auto& row : rows) {
    DatasetItem item;
    const std::string name = datasetdetail::item_name(row.index);
    item.hr = read_png(dir + "/hr/" + name + ".png");
    item.lr = read_png(dir + "/lr/" + name + ".png");
    item.clr_gt = read_png(dir + "/clr_gt/" + name + ".png");
    item.kernel = read_lcet(dir + "/kernels/" + name + ".lcet");
    item.meta = row;
    ds.items.push_back(std::move(item));
    if (ds.scale == 1 && row.scale > 1) ds.scale = row.scale;
    LCE_CHECK(row.scale == ds.scale || row.scale == 1, "mixed scales in dataset ", dir);
  }
  return ds;
}

}  // namespace lce
