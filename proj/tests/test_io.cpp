#include <cstring>
#include <filesystem>
#include <fstream>

#include "catch2/catch_amalgamated.hpp"
#include "lce/config.hpp"
#include "lce/dataset.hpp"
#include "lce/image.hpp"
#include "lce/serialize.hpp"
#include "test_util.hpp"

using namespace lce;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const std::string dir = "io_tmp_" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TEST_CASE("config parsing, types, and the whitelist") {
  Config c = Config::parse(
      "# comment\n"
      "\n"
      "sr.channels = 144\n"
      "train.rate=2e-4\n"
      "train.augment=true\n"
      "run.seed=123456789012345\n"
      "path.out=/tmp/x y\n");
  CHECK(c.get_int("sr.channels", 0) == 144);
  CHECK(c.get_double("train.rate", 0) == Catch::Approx(2e-4));
  CHECK(c.get_bool("train.augment", false));
  CHECK(c.get_u64("run.seed", 0) == 123456789012345ull);
  CHECK(c.get_str("path.out", "") == "/tmp/x y");
  CHECK(c.get_int("absent", 7) == 7);
  CHECK_THROWS_AS(c.require_str("absent"), ConfigError);
  CHECK_THROWS_AS(c.get_int("path.out", 0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("sr.channels", false), ConfigError);
  CHECK_THROWS_AS(Config::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("=bare\n"), ConfigError);

  c.check_known({"sr.channels", "train.rate", "train.augment", "run.seed", "path.out"});
  CHECK_THROWS_AS(c.check_known({"sr.channels"}), ConfigError);
}

TEST_CASE("config digest tracks content, not insertion order") {
  Config a, b;
  a.set("x", "1");
  a.set("y", "2");
  b.set("y", "2");
  b.set("x", "1");
  CHECK(a.digest() == b.digest());
  b.set("y", "3");
  CHECK(a.digest() != b.digest());

  const std::string dir = fresh_dir("config");
  a.save(dir + "/run.cfg");
  Config back = Config::load(dir + "/run.cfg");
  CHECK(back.digest() == a.digest());
  CHECK(back.canonical() == a.canonical());
  CHECK_THROWS_AS(Config::load(dir + "/missing.cfg"), IoError);
}

TEST_CASE("tensor files round-trip bit-exactly") {
  const std::string dir = fresh_dir("lcet");
  Tensor t(Shape{2, 3, 4});
  fill_rand(t, 5);
  write_lcet(dir + "/t.lcet", t);
  Tensor back = read_lcet(dir + "/t.lcet");
  REQUIRE(back.shape() == t.shape());
  CHECK(std::memcmp(back.data(), t.data(), size_t(t.numel()) * sizeof(float)) == 0);

  // corrupt the magic
  std::string raw = slurp_file(dir + "/t.lcet");
  raw[0] = 'X';
  std::ofstream(dir + "/bad.lcet", std::ios::binary) << raw;
  CHECK_THROWS_AS(read_lcet(dir + "/bad.lcet"), IoError);

  // truncate the payload
  std::ofstream(dir + "/short.lcet", std::ios::binary) << raw.substr(0, raw.size() - 3);
  CHECK_THROWS_AS(read_lcet(dir + "/short.lcet"), IoError);
  CHECK_THROWS_AS(read_lcet(dir + "/absent.lcet"), IoError);
}

TEST_CASE("checkpoints preserve order, names, shapes, and bits") {
  const std::string dir = fresh_dir("lcec");
  Checkpoint ck;
  ck.config_digest = 0xdeadbeefcafef00dull;
  Tensor w(Shape{4, 3, 3, 3}), b(Shape{4}), alpha(Shape{1});
  fill_rand(w, 1);
  fill_rand(b, 2);
  alpha[0] = 0.01f;
  ck.params.emplace_back("head.weight", w);
  ck.params.emplace_back("head.bias", b);
  ck.params.emplace_back("fsab0.alpha", alpha);
  write_lcec(dir + "/m.lcec", ck);

  Checkpoint back = read_lcec(dir + "/m.lcec");
  CHECK(back.version == 1);
  CHECK(back.config_digest == ck.config_digest);
  REQUIRE(back.params.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.params[i].first == ck.params[i].first);
    REQUIRE(back.params[i].second.shape() == ck.params[i].second.shape());
    CHECK(std::memcmp(back.params[i].second.data(), ck.params[i].second.data(),
                      size_t(ck.params[i].second.numel()) * sizeof(float)) == 0);
  }
  CHECK(back.find("head.bias").numel() == 4);
  CHECK_THROWS_AS(back.find("nope"), Error);

  std::string raw = slurp_file(dir + "/m.lcec");
  raw[1] = 'X';
  std::ofstream(dir + "/bad.lcec", std::ios::binary) << raw;
  CHECK_THROWS_AS(read_lcec(dir + "/bad.lcec"), IoError);
}

TEST_CASE("png round-trip is exact on quantized values") {
  const std::string dir = fresh_dir("png");
  Tensor img(Shape{1, 3, 9, 7});
  Rng rng(99);
  for (index_t i = 0; i < img.numel(); ++i)
    img[i] = float(rng.uniform_int(256)) / 255.0f;
  write_png(dir + "/a.png", img);
  Tensor back = read_png(dir + "/a.png");
  REQUIRE(back.shape() == img.shape());
  for (index_t i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);

  // out-of-range values clip on write
  Tensor wild(Shape{1, 3, 2, 2});
  for (index_t i = 0; i < wild.numel(); ++i) wild[i] = (i % 2) ? 1.7f : -0.3f;
  write_png(dir + "/clip.png", wild);
  Tensor clipped = read_png(dir + "/clip.png");
  for (index_t i = 0; i < clipped.numel(); ++i)
    CHECK(clipped[i] == ((i % 2) ? 1.0f : 0.0f));

  // grayscale write, read back as gray RGB
  Tensor gray(Shape{1, 1, 5, 5});
  for (index_t i = 0; i < 25; ++i) gray[i] = float(i) / 25.0f;
  write_png(dir + "/g.png", gray);
  Tensor g3 = read_png(dir + "/g.png");
  REQUIRE(g3.shape() == Shape{1, 3, 5, 5});
  for (index_t i = 0; i < 25; ++i) {
    CHECK(g3[i] == g3[25 + i]);
    CHECK(g3[i] == g3[50 + i]);
  }

  CHECK_THROWS_AS(read_png(dir + "/absent.png"), IoError);
}

TEST_CASE("procedural images are deterministic and textured") {
  Tensor a = make_hr_image(32, 32, 42);
  Tensor b = make_hr_image(32, 32, 42);
  Tensor c = make_hr_image(32, 32, 43);
  CHECK(std::memcmp(a.data(), b.data(), size_t(a.numel()) * sizeof(float)) == 0);
  bool differs = false;
  double mean = 0, var = 0;
  for (index_t i = 0; i < a.numel(); ++i) {
    if (a[i] != c[i]) differs = true;
    CHECK(a[i] >= 0.0f);
    CHECK(a[i] <= 1.0f);
    mean += a[i];
  }
  mean /= double(a.numel());
  for (index_t i = 0; i < a.numel(); ++i)
    var += (a[i] - mean) * (a[i] - mean);
  var /= double(a.numel());
  CHECK(differs);
  CHECK(var > 1e-3);  // not a flat card
}

TEST_CASE("dataset synthesis: layout, ranges, determinism, loading") {
  const std::string hr = fresh_dir("hr_src");
  synth_hr_images(hr, 4, 32, 7);
  CHECK(list_pngs(hr).size() == 4);

  KernelDistribution dist;
  dist.kind = KernelKind::kIsotropic;
  dist.scale = 2;
  dist.sigma_min = 0.2;
  dist.sigma_max = 2.0;

  const std::string out1 = fresh_dir("ds1"), out2 = fresh_dir("ds2");
  auto rows = synth_dataset(hr, dist, 6, 31337, out1);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.sigma >= 0.2);
    CHECK(r.sigma <= 2.0);
    CHECK(r.size == 21);
    CHECK(r.scale == 2);
    const std::string name = datasetdetail::item_name(r.index);
    CHECK(fs::exists(out1 + "/hr/" + name + ".png"));
    CHECK(fs::exists(out1 + "/lr/" + name + ".png"));
    CHECK(fs::exists(out1 + "/clr_gt/" + name + ".png"));
    CHECK(fs::exists(out1 + "/kernels/" + name + ".lcet"));
  }

  synth_dataset(hr, dist, 6, 31337, out2);
  CHECK(slurp_file(out1 + "/manifest.tsv") == slurp_file(out2 + "/manifest.tsv"));
  CHECK(slurp_file(out1 + "/lr/0003.png") == slurp_file(out2 + "/lr/0003.png"));

  Dataset ds = load_dataset(out1);
  REQUIRE(ds.items.size() == 6);
  CHECK(ds.scale == 2);
  for (const auto& item : ds.items) {
    CHECK(item.hr.shape() == Shape{1, 3, 32, 32});
    CHECK(item.lr.shape() == Shape{1, 3, 16, 16});
    CHECK(item.clr_gt.shape() == Shape{1, 3, 16, 16});
    CHECK(item.kernel.shape() == Shape{21, 21});
    double sum = 0;
    for (index_t i = 0; i < item.kernel.numel(); ++i) sum += item.kernel[i];
    CHECK(sum == Catch::Approx(1.0).margin(1e-5));
  }

  // count = 0: manifest only, no items
  const std::string out0 = fresh_dir("ds0");
  auto none = synth_dataset(hr, dist, 0, 1, out0);
  CHECK(none.empty());
  CHECK(read_manifest(out0 + "/manifest.tsv").empty());
  CHECK(list_pngs(out0 + "/lr").empty());
}

TEST_CASE("manifest round-trips anisotropic rows") {
  const std::string dir = fresh_dir("manifest");
  std::vector<ManifestRow> rows(2);
  rows[0].index = 0;
  rows[0].kind = KernelKind::kAnisotropic;
  rows[0].size = 11;
  rows[0].scale = 2;
  rows[0].lambda1 = 3.14159;
  rows[0].lambda2 = 0.61803398874989485;
  rows[0].theta = 2.718281828459045;
  rows[0].seed = 1234567890123456789ull;
  rows[1].index = 1;
  rows[1].kind = KernelKind::kIsotropic;
  rows[1].size = 21;
  rows[1].scale = 4;
  rows[1].sigma = 1.75;
  rows[1].noise_sigma = 0.01;
  rows[1].seed = 42;
  write_manifest(dir + "/manifest.tsv", rows);
  auto back = read_manifest(dir + "/manifest.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].kind == KernelKind::kAnisotropic);
  CHECK(back[0].lambda1 == rows[0].lambda1);
  CHECK(back[0].lambda2 == rows[0].lambda2);
  CHECK(back[0].theta == rows[0].theta);
  CHECK(back[0].seed == rows[0].seed);
  CHECK(back[1].sigma == rows[1].sigma);
  CHECK(back[1].noise_sigma == rows[1].noise_sigma);
  CHECK(back[1].scale == 4);
}

TEST_CASE("kernel distribution parses from config with guards") {
  Config c;
  c.set("degrade.kind", "anisotropic");
  c.set("degrade.scale", "4");
  KernelDistribution d = kernel_distribution_from(c);
  CHECK(d.kind == KernelKind::kAnisotropic);
  CHECK(d.kernel_size() == 31);
  c.set("degrade.scale", "3");
  CHECK_THROWS_AS(kernel_distribution_from(c), ConfigError);
  c.set("degrade.scale", "2");
  c.set("degrade.kind", "mystery");
  CHECK_THROWS_AS(kernel_distribution_from(c), ConfigError);
}

}  // namespace
