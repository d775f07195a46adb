#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "bcm_lab/checkpoint.hpp"
#include "bcm_lab/csv.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bcm_lab_io_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

bcm::ModelParams some_params() {
  bcm::Arch a;
  a.width = 16;
  a.depth = 2;
  a.activation = "tanh";
  auto p = bcm::init_params(a, 0.7, 3);
  p.values.back() = -1.25e-300;
  return p;
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto p = some_params();
  const auto path = scratch("rt.bin");
  const std::string crc = bcm::save_checkpoint(path, p);
  EXPECT_EQ(crc, bcm::file_crc32(path));
  const auto loaded = bcm::load_checkpoint(path);
  EXPECT_EQ(loaded.crc32, crc);
  EXPECT_EQ(loaded.params.arch, p.arch);
  EXPECT_EQ(loaded.params.sigma_data, p.sigma_data);
  EXPECT_EQ(loaded.params.values, p.values);
}

TEST(Checkpoint, ManifestListsShapes) {
  const auto p = some_params();
  const auto path = scratch("m.bin");
  bcm::save_checkpoint(path, p);
  const auto kv = bcm::read_kv_file(bcm::manifest_path(path));
  EXPECT_EQ(kv.at("format"), "bcm_lab-checkpoint");
  EXPECT_EQ(kv.at("param_count"), std::to_string(p.values.size()));
  EXPECT_EQ(kv.at("activation"), "tanh");
  std::ifstream in(bcm::manifest_path(path));
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_NE(ss.str().find("tensor=layer0.weight 64x64"), std::string::npos);
  EXPECT_NE(ss.str().find("tensor=layer3.weight 2x16"), std::string::npos);
}

TEST(Checkpoint, TamperedFileIsRefused) {
  const auto path = scratch("bad.bin");
  bcm::save_checkpoint(path, some_params());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x5a');
  }
  EXPECT_THROW(bcm::load_checkpoint(path), bcm::ChecksumError);
}

TEST(Checkpoint, DecodeRejectsGarbage) {
  std::vector<char> junk{'n', 'o', 'p', 'e', 0, 0, 0, 0, 1, 0, 0, 0};
  EXPECT_THROW(bcm::decode_checkpoint(junk), std::runtime_error);
  auto good = bcm::encode_checkpoint(some_params());
  good.pop_back();
  EXPECT_THROW(bcm::decode_checkpoint(good), std::runtime_error);
}

TEST(Csv, SamplesRoundTripExactly) {
  bcm::Matrix x(3, 4);
  bcm::Rng(1).fill_normal(x);
  x(0, 0) = 1e-310;
  std::stringstream ss;
  bcm::write_samples_csv(ss, x);
  const auto y = bcm::read_samples_csv(ss);
  EXPECT_TRUE((x.array() == y.array()).all());
}

TEST(Csv, HeaderOptionalAndRaggedRejected) {
  std::istringstream plain("1,2\n3,4\n");
  const auto x = bcm::read_samples_csv(plain);
  EXPECT_EQ(x.cols(), 2);
  EXPECT_EQ(x(1, 1), 4.0);
  std::istringstream ragged("x0,x1\n1,2\n3\n");
  EXPECT_THROW(bcm::read_samples_csv(ragged), std::runtime_error);
  std::istringstream text("x0,x1\n1,2\nfoo,3\n");
  EXPECT_THROW(bcm::read_samples_csv(text), std::runtime_error);
}

TEST(Csv, Trajectory) {
  bcm::Trajectory t;
  t.push(80, bcm::Matrix::Ones(2, 3));
  t.push(0, bcm::Matrix::Zero(2, 3));
  std::ostringstream os;
  bcm::write_trajectory_csv(os, t);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "sample,time,x0,x1");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

}  // namespace
