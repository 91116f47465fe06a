#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "blockunfold/config.hpp"
#include "blockunfold/io.hpp"
#include "test_util.hpp"

using namespace blockunfold;
namespace fs = std::filesystem;

TEST(Numbers, RoundTripExactly) {
  std::mt19937_64 eng(1);
  std::normal_distribution<double> N;
  for (int i = 0; i < 1000; ++i) {
    const double v = N(eng) * std::pow(10.0, i % 40 - 20);
    EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  }
  EXPECT_TRUE(std::isinf(io::parse_double(io::format_double(std::numeric_limits<double>::infinity()))));
  EXPECT_TRUE(std::isnan(io::parse_double("nan")));
  EXPECT_THROW(io::parse_double("1.5x"), Error);
}

TEST(MatrixText, RoundTrip) {
  std::mt19937_64 eng(2);
  const Matrix a = testutil::gaussian(3, 5, eng);
  std::stringstream ss;
  io::write_matrix(ss, a);
  EXPECT_EQ(io::read_matrix(ss), a);
}

TEST(MatrixText, TruncatedRejected) {
  std::stringstream ss("2 2\n1 2\n3\n");
  EXPECT_THROW(io::read_matrix(ss), Error);
}

TEST(MatrixText, MissingFileNamed) {
  try {
    io::load_matrix("/nonexistent/dir/K.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/K.txt"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripEveryVariant) {
  const BlockDictionary D = testutil::random_orthonormal_blocks(6, 4, 2, 3);
  for (Variant v : kAllVariants) {
    NetworkParams p = init_from_bista(v, D, 3, Matrix(0.9 * D.data()), 0.7);
    std::stringstream ss;
    io::write_checkpoint(ss, p);
    const NetworkParams q = io::read_checkpoint(ss);
    EXPECT_EQ(q.variant, v);
    EXPECT_EQ(q.alpha, p.alpha);
    EXPECT_EQ(q.gamma, p.gamma);
    EXPECT_EQ(q.D, p.D);
    ASSERT_EQ(q.S.size(), p.S.size());
    ASSERT_EQ(q.B.size(), p.B.size());
    for (size_t i = 0; i < p.S.size(); ++i) EXPECT_EQ(q.S[i], p.S[i]);
    for (size_t i = 0; i < p.B.size(); ++i) EXPECT_EQ(q.B[i], p.B[i]);
  }
}

TEST(Checkpoint, BadHeaderRejected) {
  std::stringstream ss("not-a-checkpoint 1\n");
  EXPECT_THROW(io::read_checkpoint(ss), Error);
}

TEST(Csv, SchemaLineAndRows) {
  const fs::path p = fs::temp_directory_path() / "blockunfold_test_io" / "t.csv";
  {
    io::CsvWriter w(p, "demo/1", {"a", "b", "c"});
    w.row("x", 3L, 0.5);
    EXPECT_THROW(w.row(1L, 2L), Error);
  }
  std::ifstream is(p);
  std::string l1, l2, l3;
  std::getline(is, l1);
  std::getline(is, l2);
  std::getline(is, l3);
  EXPECT_EQ(l1, "# schema: demo/1");
  EXPECT_EQ(l2, "a,b,c");
  EXPECT_EQ(l3, "x,3,0.5");
  fs::remove_all(p.parent_path());
}

TEST(Config, SectionsCommentsAndTypes) {
  std::stringstream ss("# top\nplain = 1\n[run]\nseed = 42 ; trailing\nflag = yes\n\n[scenario]\npnz=0.25\n");
  const ConfigFile f = ConfigFile::parse(ss);
  EXPECT_EQ(f.get_int("plain", 0), 1);
  EXPECT_EQ(f.get_int("run.seed", 0), 42);
  EXPECT_TRUE(f.get_bool("run.flag", false));
  EXPECT_DOUBLE_EQ(f.get_double("scenario.pnz", 0.0), 0.25);
  EXPECT_EQ(f.get_int("run.missing", 7), 7);
  EXPECT_TRUE(f.unused().empty());
}

TEST(Config, UnusedKeysReported) {
  std::stringstream ss("[run]\nseed = 1\ntypo = 2\n");
  const ConfigFile f = ConfigFile::parse(ss);
  f.get_int("run.seed", 0);
  EXPECT_EQ(f.unused(), std::set<std::string>{"run.typo"});
}

TEST(Config, MalformedLinesRejected) {
  std::stringstream a("[run\nseed=1\n"), b("[run]\nseed\n"), c("[run]\nseed = abc\n");
  EXPECT_THROW(ConfigFile::parse(a), Error);
  EXPECT_THROW(ConfigFile::parse(b), Error);
  const ConfigFile f = ConfigFile::parse(c);
  EXPECT_THROW(f.get_int("run.seed", 0), Error);
}
