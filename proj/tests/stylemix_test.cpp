#include <cmath>
#include <vector>

#include "doctest.h"
#include "nightlift/errors.hpp"
#include "nightlift/image_io.hpp"
#include "nightlift/rng.hpp"
#include "nightlift/stylemix.hpp"
#include "test_util.hpp"

using namespace nightlift;
using testutil::random_image;
using testutil::TempDir;

namespace {

// Opponent color transform restated from its definition (orthonormal basis).
void opponent_stats(const Image& img, double mean[3], double stddev[3]) {
  const double inv_s3 = 1.0 / std::sqrt(3.0);
  const double inv_s2 = 1.0 / std::sqrt(2.0);
  const double inv_s6 = 1.0 / std::sqrt(6.0);
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      const double o[3] = {(r + g + b) * inv_s3, (r - b) * inv_s2, (r - 2 * g + b) * inv_s6};
      for (int c = 0; c < 3; ++c) {
        sum[c] += o[c];
        sumsq[c] += o[c] * o[c];
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    mean[c] = sum[c] / static_cast<double>(n);
    const double var = sumsq[c] / static_cast<double>(n) - mean[c] * mean[c];
    stddev[c] = std::sqrt(std::max(0.0, var));
  }
}

}  // namespace

TEST_CASE("stats stylizer matches style statistics in the opponent basis") {
  Rng rng(11);
  const Image content = random_image(rng, 12, 10, 3);
  Image style = random_image(rng, 8, 9, 3, 0.1, 0.9);
  // Give the style a distinct cast so the transfer has work to do.
  for (int y = 0; y < style.height; ++y)
    for (int x = 0; x < style.width; ++x) style.at(y, x, 2) = 0.2 + 0.5 * style.at(y, x, 2);

  StatsStylizer s;
  const Image out = s.stylize(content, style);
  CHECK(out.id == content.id);
  CHECK(out.same_shape(content));

  double want_mean[3], want_std[3], got_mean[3], got_std[3];
  opponent_stats(style, want_mean, want_std);
  opponent_stats(out, got_mean, got_std);
  for (int c = 0; c < 3; ++c) {
    CHECK(got_mean[c] == doctest::Approx(want_mean[c]).epsilon(1e-9));
    CHECK(got_std[c] == doctest::Approx(want_std[c]).epsilon(1e-9));
  }
}

TEST_CASE("stats stylizer is idempotent against a fixed style") {
  Rng rng(12);
  const Image content = random_image(rng, 6, 7, 3);
  const Image style = random_image(rng, 6, 7, 3);
  StatsStylizer s;
  const Image once = s.stylize(content, style);
  const Image twice = s.stylize(once, style);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(std::abs(once.data[i] - twice.data[i]) < 1e-12);
  }
}

TEST_CASE("stats stylizer degenerate channels take the style mean") {
  Rng rng(13);
  Image content(5, 5, 3, 0.5);  // constant everywhere: zero variance
  const Image style = random_image(rng, 5, 5, 3);
  StatsStylizer s;
  const Image out = s.stylize(content, style);
  double style_mean[3], style_std[3], out_mean[3], out_std[3];
  opponent_stats(style, style_mean, style_std);
  opponent_stats(out, out_mean, out_std);
  for (int c = 0; c < 3; ++c) {
    CHECK(out_mean[c] == doctest::Approx(style_mean[c]).epsilon(1e-9));
    CHECK(out_std[c] == doctest::Approx(0.0).epsilon(1e-9));  // no variance to amplify
  }
}

TEST_CASE("grayscale stylization matches direct channel statistics") {
  Rng rng(14);
  const Image content = random_image(rng, 6, 6, 1);
  const Image style = random_image(rng, 7, 5, 1, 0.2, 0.4);
  const Image out = stylize(content, style);
  double cm = 0, sm = 0, om = 0;
  for (double v : content.data) cm += v;
  for (double v : style.data) sm += v;
  for (double v : out.data) om += v;
  sm /= static_cast<double>(style.size());
  om /= static_cast<double>(out.size());
  (void)cm;
  CHECK(om == doctest::Approx(sm).epsilon(1e-9));
}

TEST_CASE("mix plans have the pinned structure") {
  StylePool pool;
  Rng rng(15);
  for (int i = 0; i < 5; ++i) pool.refs.push_back(random_image(rng, 4, 4, 3));
  StyleMixConfig cfg;

  int len_one = 0, len_two = 0;
  double coeff_sum = 0.0;
  std::size_t coeff_n = 0;
  for (int t = 0; t < 1500; ++t) {
    const MixPlan plan = sample_mix_plan(cfg, pool, 3, 4, derive_seed(99, t));
    REQUIRE(plan.chains.size() == 3);
    for (const auto& chain : plan.chains) {
      REQUIRE(chain.size() >= 1);
      REQUIRE(chain.size() <= 2);
      len_one += chain.size() == 1;
      len_two += chain.size() == 2;
      for (int idx : chain) {
        CHECK(idx >= 0);
        CHECK(idx < pool.count());
      }
    }
    for (int y = 0; y < plan.height; ++y) {
      for (int x = 0; x < plan.width; ++x) {
        double s = 0.0;
        for (int m = 0; m < 3; ++m) {
          const double v = plan.coeff_at(m, y, x);
          CHECK(v >= 0.0);
          s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
    coeff_sum += plan.coeff_at(0, 0, 0);
    ++coeff_n;
    // broadcast: every pixel shares the draw
    CHECK(plan.coeff_at(1, 0, 0) == plan.coeff_at(1, plan.height - 1, plan.width - 1));
  }
  CHECK(len_one > 0);
  CHECK(len_two > 0);
  // alpha = 1 -> symmetric Dirichlet, E[w_0] = 1/3
  CHECK(coeff_sum / static_cast<double>(coeff_n) == doctest::Approx(1.0 / 3).epsilon(0.05));
}

TEST_CASE("mix plans are deterministic in the seed") {
  StylePool pool;
  Rng rng(16);
  for (int i = 0; i < 5; ++i) pool.refs.push_back(random_image(rng, 4, 4, 3));
  StyleMixConfig cfg;
  const MixPlan a = sample_mix_plan(cfg, pool, 6, 6, 1234);
  const MixPlan b = sample_mix_plan(cfg, pool, 6, 6, 1234);
  const MixPlan c = sample_mix_plan(cfg, pool, 6, 6, 1235);
  CHECK(a.chains == b.chains);
  CHECK(a.coeffs == b.coeffs);
  CHECK((a.chains != c.chains || a.coeffs != c.coeffs));
}

TEST_CASE("per-pixel plans vary across pixels") {
  StylePool pool;
  Rng rng(17);
  for (int i = 0; i < 5; ++i) pool.refs.push_back(random_image(rng, 4, 4, 3));
  StyleMixConfig cfg;
  cfg.per_pixel = true;
  const MixPlan plan = sample_mix_plan(cfg, pool, 8, 8, 77);
  bool varies = false;
  for (int y = 0; y < 8 && !varies; ++y)
    for (int x = 0; x < 8 && !varies; ++x)
      varies = plan.coeff_at(0, y, x) != plan.coeff_at(0, 0, 0);
  CHECK(varies);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int m = 0; m < 3; ++m) s += plan.coeff_at(m, y, x);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("stylemix config and pool validation") {
  StylePool pool;
  Rng rng(18);
  for (int i = 0; i < 3; ++i) pool.refs.push_back(random_image(rng, 4, 4, 3));
  StyleMixConfig cfg;

  cfg.pool_size = 5;  // pool has 3
  CHECK_THROWS_AS(sample_mix_plan(cfg, pool, 4, 4, 1), ConfigError);
  cfg.pool_size = 3;
  CHECK_NOTHROW(sample_mix_plan(cfg, pool, 4, 4, 1));

  StyleMixConfig bad = cfg;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.chains = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.max_chain_len = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  StylePool empty;
  CHECK_THROWS_AS(empty.validate(), DataError);
  CHECK_THROWS_AS(sample_mix_plan(cfg, empty, 4, 4, 1), DataError);
}

TEST_CASE("apply_chain composes stylizations in order") {
  Rng rng(19);
  StylePool pool;
  for (int i = 0; i < 3; ++i) pool.refs.push_back(random_image(rng, 5, 5, 3));
  const Image content = random_image(rng, 5, 5, 3);

  const Image same = apply_chain(content, {}, pool);
  CHECK(same.data == content.data);

  const Image one = apply_chain(content, {1}, pool);
  const Image direct = stylize(content, pool.ref(1));
  CHECK(one.data == direct.data);

  const Image two = apply_chain(content, {1, 2}, pool);
  const Image manual = stylize(stylize(content, pool.ref(1)), pool.ref(2));
  CHECK(two.data == manual.data);
}

TEST_CASE("fuse matches a direct convex-combination loop") {
  Rng rng(20);
  StylePool pool;
  for (int i = 0; i < 4; ++i) pool.refs.push_back(random_image(rng, 4, 4, 3));
  StyleMixConfig cfg;
  cfg.per_pixel = true;
  const MixPlan plan = sample_mix_plan(cfg, pool, 6, 5, 31);
  std::vector<Image> branches;
  for (int m = 0; m < 3; ++m) branches.push_back(random_image(rng, 6, 5, 3, -0.5, 1.5));

  const Image got = fuse(plan, branches);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 3; ++c) {
        double want = 0.0;
        for (int m = 0; m < 3; ++m) want += plan.coeff_at(m, y, x) * branches[m].at(y, x, c);
        CHECK(got.at(y, x, c) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }

  // identical branches pass through a convex combination unchanged
  std::vector<Image> same(3, branches[0]);
  const Image still = fuse(plan, same);
  for (std::size_t i = 0; i < still.size(); ++i) {
    CHECK(still.data[i] == doctest::Approx(branches[0].data[i]).epsilon(1e-12));
  }

  std::vector<Image> bad = branches;
  bad[1] = random_image(rng, 4, 5, 3);
  CHECK_THROWS_AS(fuse(plan, bad), ShapeError);
}

TEST_CASE("generate_pair is deterministic and labels its outputs") {
  Rng rng(21);
  StylePool pool;
  for (int i = 0; i < 5; ++i) pool.refs.push_back(random_image(rng, 6, 6, 3));
  Image day = random_image(rng, 6, 6, 3);
  day.id = "scene";
  StyleMixConfig cfg;

  const GeneratedPair a = generate_pair(day, cfg, pool, 500);
  const GeneratedPair b = generate_pair(day, cfg, pool, 500);
  CHECK(a.mn1.data == b.mn1.data);
  CHECK(a.mn2.data == b.mn2.data);
  CHECK(a.mn1.id == "scene__mn1");
  CHECK(a.mn2.id == "scene__mn2");
  CHECK(a.target.data == day.data);
  CHECK(a.mn1.data != a.mn2.data);  // independent branch draws

  const GeneratedPair c = generate_pair(day, cfg, pool, 501);
  CHECK(a.mn1.data != c.mn1.data);
}

TEST_CASE("directory stylizer resolves pre-rendered files by id and index") {
  TempDir dir("dirsty");
  Rng rng(22);

  // Style pool on disk: lexicographic order pins the indices.
  const auto styles_dir = dir.path() / "styles";
  std::filesystem::create_directories(styles_dir);
  for (int i = 0; i < 2; ++i) {
    Image s = random_image(rng, 4, 4, 3);
    save_image(s, (styles_dir / ("s" + std::to_string(i) + ".png")).string());
  }
  const StylePool pool = StylePool::from_directory((styles_dir).string());
  REQUIRE(pool.count() == 2);
  CHECK(pool.ref(0).id == "s0");
  CHECK(pool.ref(1).id == "s1");

  // Pre-rendered outputs for content id "img", including one chained result.
  const auto pre_dir = dir.path() / "pre";
  std::filesystem::create_directories(pre_dir);
  Image content = random_image(rng, 4, 4, 3);
  content.id = "img";
  const Image r0 = random_image(rng, 4, 4, 3);
  const Image r1 = random_image(rng, 4, 4, 3);
  const Image r01 = random_image(rng, 4, 4, 3);
  save_image(r0, (pre_dir / "img__0.png").string());
  save_image(r1, (pre_dir / "img__1.png").string());
  save_image(r01, (pre_dir / "img__0__1.png").string());

  const DirectoryStylizer sty(pre_dir.string(), pool);
  const Image got0 = sty.stylize(content, pool.ref(0));
  CHECK(got0.id == "img__0");
  const Image got01 = sty.stylize(got0, pool.ref(1));
  CHECK(got01.id == "img__0__1");

  // chains route through the adapter, so composed lookups resolve too
  const Image chained = apply_chain(content, {0, 1}, pool, &sty);
  CHECK(chained.id == "img__0__1");

  Image missing = content;
  missing.id = "absent";
  CHECK_THROWS_AS(sty.stylize(missing, pool.ref(0)), DataError);
}
