#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "letac/checkpoint.hpp"
#include "letac/config.hpp"
#include "letac/training.hpp"

namespace {

using letac::Checkpoint;
using letac::Config;
using letac::ConfigError;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.layer = letac::init_layer_params(ck.dims, 17, 0.01, 1e-4);
  ck.encoder = letac::EncoderParams::init(8, 16, ck.dims.M, 18);
  // Non-unit normalization so the round trip covers those fields too.
  for (int i = 0; i < 8; ++i) {
    ck.encoder.obs_mean(i) = 0.1 * i - 0.3;
    ck.encoder.obs_scale(i) = 1.0 + 0.25 * i;
  }
  ck.train_seed = 99;
  ck.config_hash = "deadbeef01234567";
  return ck;
}

}  // namespace

TEST(ConfigParse, KeyValueLinesWithCommentsAndBlanks) {
  const Config cfg = Config::parse_string(
      "# leading comment\n"
      "a.b = 1.5\n"
      "\n"
      "  c.d=hello   # trailing comment\n"
      "e.f = -3\n",
      "<test>");
  EXPECT_TRUE(cfg.has("a.b"));
  EXPECT_DOUBLE_EQ(cfg.get_double("a.b", 0.0), 1.5);
  EXPECT_EQ(cfg.get_string("c.d", ""), "hello");
  EXPECT_EQ(cfg.get_int("e.f", 0), -3);
  EXPECT_EQ(cfg.get_int("missing.key", 42), 42);
}

TEST(ConfigParse, DiagnosticsCarryOriginAndLine) {
  try {
    Config::parse_string("ok = 1\nbroken line without equals\n", "myfile.conf");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("myfile.conf:2"), std::string::npos) << msg;
  }
  EXPECT_THROW(Config::parse_string("= value\n", "<t>"), ConfigError);
  EXPECT_THROW(Config::parse_file("no_such_file.conf"), ConfigError);
}

TEST(ConfigParse, TypedGettersRejectMalformedValues) {
  const Config cfg = Config::parse_string(
      "num = 1.5x\nint = 7.2\nflag = maybe\ngood = 2\n", "<t>");
  EXPECT_THROW(cfg.get_double("num", 0.0), ConfigError);
  EXPECT_THROW(cfg.get_int("int", 0), ConfigError);
  EXPECT_THROW(cfg.get_bool("flag", false), ConfigError);
  EXPECT_EQ(cfg.get_int("good", 0), 2);
  const Config bools = Config::parse_string(
      "a = true\nb = off\nc = 1\n", "<t>");
  EXPECT_TRUE(bools.get_bool("a", false));
  EXPECT_FALSE(bools.get_bool("b", true));
  EXPECT_TRUE(bools.get_bool("c", false));
}

TEST(ConfigMerge, OverlayOverridesAndExtends) {
  Config base = Config::parse_string("x = 1\ny = 2\n", "<base>");
  const Config over = Config::parse_string("y = 20\nz = 30\n", "<over>");
  base.merge(over);
  EXPECT_EQ(base.get_int("x", 0), 1);
  EXPECT_EQ(base.get_int("y", 0), 20);
  EXPECT_EQ(base.get_int("z", 0), 30);
}

TEST(ConfigHash, StableUnderReparseSensitiveToValues) {
  const Config a = Config::parse_string("x = 1\ny = 2\n", "<a>");
  const Config b = Config::parse_string(a.serialize(), "<b>");
  EXPECT_EQ(a.hash(), b.hash());
  const Config c = Config::parse_string("x = 1\ny = 3\n", "<c>");
  EXPECT_NE(a.hash(), c.hash());
}

TEST(ConfigDefaults, ParseAndExposeEveryMappedSection) {
  const Config cfg = letac::default_config();
  // A spot check across sections: collection, model shape, deployment.
  EXPECT_GT(cfg.get_int("collect.trials_per_material", 0), 0);
  EXPECT_EQ(cfg.get_int("model.N", 0), 15);
  EXPECT_EQ(cfg.get_int("model.M", 0), 20);
  EXPECT_DOUBLE_EQ(cfg.get_double("model.dt", 0.0), 1.0 / 25.0);
  const letac::MpcDims dims = letac::dims_from(cfg);
  dims.validate();
  const letac::CollectConfig cc = letac::collect_config_from(cfg);
  EXPECT_GT(cc.frame_rate, 0.0);
}

TEST(CheckpointIo, RoundTripIsExactAndRewriteByteIdentical) {
  const Checkpoint ck = sample_checkpoint();
  const std::string path_a = "test_ck_a.txt";
  const std::string path_b = "test_ck_b.txt";
  letac::save_checkpoint(path_a, ck);
  const Checkpoint loaded = letac::load_checkpoint(path_a);
  EXPECT_EQ(loaded.dims.N, ck.dims.N);
  EXPECT_EQ(loaded.dims.M, ck.dims.M);
  EXPECT_EQ(loaded.dims.dt, ck.dims.dt);
  EXPECT_EQ(loaded.layer.eps, ck.layer.eps);
  EXPECT_EQ((loaded.layer.A_f - ck.layer.A_f).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((loaded.layer.L_f - ck.layer.L_f).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((loaded.encoder.W1 - ck.encoder.W1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((loaded.encoder.W3 - ck.encoder.W3).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((loaded.encoder.obs_scale - ck.encoder.obs_scale).cwiseAbs().maxCoeff(),
            0.0);
  EXPECT_EQ(loaded.encoder.init_seed, ck.encoder.init_seed);
  EXPECT_EQ(loaded.train_seed, ck.train_seed);
  EXPECT_EQ(loaded.config_hash, ck.config_hash);
  letac::save_checkpoint(path_b, loaded);
  EXPECT_EQ(read_file(path_a), read_file(path_b));
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());
}

TEST(CheckpointIo, RejectsCorruptRecords) {
  const Checkpoint ck = sample_checkpoint();
  const std::string path = "test_ck_corrupt.txt";

  // Wrong magic line.
  {
    std::ofstream out(path);
    out << "some_other_format v9\nN 15\n";
  }
  EXPECT_THROW(letac::load_checkpoint(path), std::runtime_error);

  // Truncated record: drop the trailing lines.
  letac::save_checkpoint(path, ck);
  {
    const std::string full = read_file(path);
    std::ofstream out(path, std::ios::binary);
    out << full.substr(0, full.size() / 2);
  }
  EXPECT_THROW(letac::load_checkpoint(path), std::runtime_error);

  // A value above the diagonal of the Cholesky factor breaks the invariant:
  // accepted with validation off, rejected with validation on.
  Checkpoint bad = ck;
  bad.layer.L_f(0, 2) = 0.5;
  EXPECT_THROW(letac::save_checkpoint(path, bad), std::invalid_argument);
  {
    letac::save_checkpoint(path, ck);
    // Edit the stored L_f row in place: the first row's third entry.
    std::ifstream in(path);
    std::stringstream edited;
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("L_f ", 0) == 0) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;  // "L_f"
        std::vector<std::string> vals;
        while (ls >> tok) vals.push_back(tok);
        vals[2] = "0.5";  // (0, 2) of the row-major M x M block
        edited << "L_f";
        for (const std::string& v : vals) edited << ' ' << v;
        edited << '\n';
      } else {
        edited << line << '\n';
      }
    }
    in.close();
    std::ofstream out(path, std::ios::binary);
    out << edited.str();
  }
  EXPECT_THROW(letac::load_checkpoint(path), std::invalid_argument);
  const Checkpoint raw = letac::load_checkpoint(path, false);
  EXPECT_EQ(raw.layer.L_f(0, 2), 0.5);
  std::remove(path.c_str());
}
