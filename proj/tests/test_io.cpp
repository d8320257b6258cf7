#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mfield/io/checkpoint.hpp"
#include "mfield/io/dataset.hpp"
#include "mfield/io/report.hpp"
#include "mfield/perturb/perturb.hpp"

using namespace mfield;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("mfield_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::string& header, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << header;
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.density_resolution = 6;
  c.density_rank = 2;
  c.appearance_resolution = 5;
  c.appearance_rank = 2;
  c.appearance_channels = 3;
  c.material_hidden = 6;
  c.specular_hidden = 4;
  c.env_height = 4;
  c.env_width = 8;
  return c;
}

std::string file_bytes(const fs::path& p) { return read_text(p); }

nlohmann::json two_frame_transforms() {
  nlohmann::json j;
  j["camera_angle_x"] = 0.69;
  j["frames"] = {{{"file_path", "./train/r_0"},
                  {"transform_matrix", {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 4}, {0, 0, 0, 1}}}},
                 {{"file_path", "./train/r_1.png"},
                  {"transform_matrix", {{0, 0, 1, 4}, {0, 1, 0, 0}, {-1, 0, 0, 0}, {0, 0, 0, 1}}}}};
  return j;
}

void write_rgba(const fs::path& p, std::size_t w, std::size_t h, double v, double a) {
  fs::create_directories(p.parent_path());
  Image img{w, h, 4, std::vector<double>(w * h * 4)};
  for (std::size_t i = 0; i < w * h; ++i) {
    for (int c = 0; c < 3; ++c) img.data[i * 4 + c] = v;
    img.data[i * 4 + 3] = a;
  }
  write_png_raw(p, img);
}

}  // namespace

TEST(Srgb, TransferFixtures) {
  EXPECT_NEAR(srgb_to_linear(128.0 / 255.0), 0.2158, 1e-4);
  EXPECT_EQ(to_byte(linear_to_srgb(0.2158)), 128);
  EXPECT_EQ(srgb_to_linear(1.0), 1.0);
  EXPECT_EQ(srgb_to_linear(0.0), 0.0);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(to_byte(linear_to_srgb(srgb_to_linear(b / 255.0))), b);
}

TEST(Png, RoundTripAndWhiteDecodesToOne) {
  TempDir tmp;
  write_rgba(tmp.path() / "white.png", 4, 2, 1.0, 1.0);
  const auto env = load_envmap(tmp.path() / "white.png");
  ASSERT_EQ(env.radiance.size(), 4u * 2 * 3);
  for (double v : env.radiance) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(env.warning.empty());

  write_png_linear(tmp.path() / "lin.png", 2, 1, {0.2158, 0.0, 1.0, 0.5, 0.5, 0.5});
  const auto img = read_png(tmp.path() / "lin.png");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(to_byte(img.data[0]), 128);
  EXPECT_EQ(img.data[3], 1.0);  // opaque alpha added
}

TEST(Png, RejectsGarbage) {
  TempDir tmp;
  write_bytes(tmp.path() / "bad.png", "not a png at all", {});
  EXPECT_THROW(read_png(tmp.path() / "bad.png"), IoError);
  EXPECT_THROW(read_png(tmp.path() / "missing.png"), IoError);
}

TEST(Pfm, HandWrittenLittleEndianFixture) {
  TempDir tmp;
  // 1 x 2 PF, scale -1: bottom row (1.0, 2.0, 0.5) then top row (0.25, 4.0, 8.0)
  const std::vector<std::uint8_t> bytes{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00, 0x3F,
                                        0x00, 0x00, 0x80, 0x3E, 0x00, 0x00, 0x80, 0x40, 0x00, 0x00, 0x00, 0x41};
  write_bytes(tmp.path() / "le.pfm", "PF\n1 2\n-1.0\n", bytes);
  const auto img = read_pfm(tmp.path() / "le.pfm");
  ASSERT_EQ(img.width, 1u);
  ASSERT_EQ(img.height, 2u);
  EXPECT_EQ(img.data, (std::vector<double>{0.25, 4.0, 8.0, 1.0, 2.0, 0.5}));
}

TEST(Pfm, BigEndianWhenScalePositive) {
  TempDir tmp;
  const std::vector<std::uint8_t> bytes{0x3F, 0x80, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00};
  write_bytes(tmp.path() / "be.pfm", "Pf\n2 1\n1.0\n", bytes);
  const auto img = read_pfm(tmp.path() / "be.pfm");
  EXPECT_EQ(img.data, (std::vector<double>{1.0, 2.0}));
}

TEST(Pfm, RoundTripIsExact) {
  TempDir tmp;
  Image img{2, 1, 3, {0.1f, 1.5f, 3.25f, 100.0f, 0.0f, 7e-5f}};
  write_pfm(tmp.path() / "rt.pfm", img);
  const auto back = read_pfm(tmp.path() / "rt.pfm");
  EXPECT_EQ(back.data, img.data);
  const auto env = load_envmap(tmp.path() / "rt.pfm");
  EXPECT_EQ(env.radiance, img.data);
  EXPECT_TRUE(env.warning.empty());
}

TEST(Pfm, RejectsNonFiniteAndNegative) {
  TempDir tmp;
  write_bytes(tmp.path() / "nan.pfm", "Pf\n1 1\n-1.0\n", {0x00, 0x00, 0xC0, 0x7F});
  EXPECT_THROW(read_pfm(tmp.path() / "nan.pfm"), IoError);
  write_bytes(tmp.path() / "inf.pfm", "Pf\n1 1\n-1.0\n", {0x00, 0x00, 0x80, 0x7F});
  EXPECT_THROW(read_pfm(tmp.path() / "inf.pfm"), IoError);
  write_bytes(tmp.path() / "neg.pfm", "Pf\n1 1\n-1.0\n", {0x00, 0x00, 0x80, 0xBF});
  EXPECT_THROW(load_envmap(tmp.path() / "neg.pfm"), IoError);
  write_bytes(tmp.path() / "short.pfm", "PF\n2 2\n-1.0\n", {0x00, 0x00});
  EXPECT_THROW(read_pfm(tmp.path() / "short.pfm"), IoError);
}

TEST(Envmap, UnsupportedFormatAndAspectWarning) {
  TempDir tmp;
  write_bytes(tmp.path() / "env.exr", "x", {});
  EXPECT_THROW(load_envmap(tmp.path() / "env.exr"), IoError);
  write_pfm(tmp.path() / "sq.pfm", Image{2, 2, 3, std::vector<double>(12, 0.5)});
  EXPECT_FALSE(load_envmap(tmp.path() / "sq.pfm").warning.empty());
}

TEST(Transforms, TwoFrameFixture) {
  TempDir tmp;
  std::ofstream(tmp.path() / "transforms_train.json") << two_frame_transforms().dump();
  write_rgba(tmp.path() / "train" / "r_0.png", 3, 2, 128.0 / 255.0, 0.0);
  write_rgba(tmp.path() / "train" / "r_1.png", 3, 2, 1.0, 1.0);
  double fov = 0;
  const auto frames = load_transforms(tmp.path() / "transforms_train.json", &fov);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(fov, 0.69);
  EXPECT_EQ(frames[0].camera.camera_to_world[11], 4.0);
  EXPECT_EQ(frames[1].camera.camera_to_world[2], 1.0);
  EXPECT_EQ(frames[1].camera.camera_to_world[8], -1.0);
  EXPECT_EQ(frames[0].camera.width, 3u);
  EXPECT_LT(frames[1].camera.orthonormality_error(), 1e-12);
  // alpha is not composited into the color
  EXPECT_NEAR(frames[0].rgb[0], 0.2158, 1e-4);
  EXPECT_EQ(frames[0].alpha[0], 0.0);
  EXPECT_EQ(frames[1].rgb[0], 1.0);
  EXPECT_TRUE(frames[0].normal.empty());
}

TEST(Transforms, SchemaErrors) {
  TempDir tmp;
  write_rgba(tmp.path() / "train" / "r_0.png", 2, 2, 0.5, 1.0);
  write_rgba(tmp.path() / "train" / "r_1.png", 2, 2, 0.5, 1.0);
  auto j = two_frame_transforms();
  j.erase("camera_angle_x");
  std::ofstream(tmp.path() / "a.json") << j.dump();
  EXPECT_THROW(load_transforms(tmp.path() / "a.json"), SchemaError);

  j = two_frame_transforms();
  j["frames"][0]["transform_matrix"][0][0] = "x";
  std::ofstream(tmp.path() / "b.json") << j.dump();
  EXPECT_THROW(load_transforms(tmp.path() / "b.json"), SchemaError);

  j = two_frame_transforms();
  j["frames"][1]["transform_matrix"] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::ofstream(tmp.path() / "c.json") << j.dump();
  EXPECT_THROW(load_transforms(tmp.path() / "c.json"), SchemaError);

  // overflow to infinity after parsing
  std::ofstream(tmp.path() / "d.json")
      << R"({"camera_angle_x":0.5,"frames":[{"file_path":"./train/r_0","transform_matrix":)"
      << R"([[1e999,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]})";
  EXPECT_THROW(load_transforms(tmp.path() / "d.json"), IoError);

  j = two_frame_transforms();
  j["frames"][0]["file_path"] = "./train/missing";
  std::ofstream(tmp.path() / "e.json") << j.dump();
  EXPECT_THROW(load_transforms(tmp.path() / "e.json"), IoError);
}

TEST(Transforms, WriteThenLoadScene) {
  TempDir tmp;
  std::vector<Frame> frames(2);
  for (std::size_t i = 0; i < 2; ++i) {
    frames[i].camera = Camera::look_at({0, 0, 3.0 + i}, {0, 0, 0}, {0, 1, 0}, 0.7, 4, 3);
    frames[i].rgb.assign(12 * 3, 0.2158);
    frames[i].alpha.assign(12, 1.0);
    frames[i].normal.assign(12 * 3, 0.0);
    for (std::size_t p = 0; p < 12; ++p) frames[i].normal[p * 3 + 2] = 1.0;
  }
  write_transforms(tmp.path(), "train", frames, 0.7);
  write_transforms(tmp.path(), "test", {frames[1]}, 0.7);
  write_pfm(tmp.path() / "env.pfm", Image{4, 2, 3, std::vector<double>(24, 0.75)});
  const auto ds = load_scene(tmp.path());
  EXPECT_EQ(ds.train.size(), 2u);
  EXPECT_EQ(ds.test.size(), 1u);
  EXPECT_EQ(ds.width, 4u);
  EXPECT_EQ(ds.height, 3u);
  ASSERT_TRUE(ds.envmap.has_value());
  EXPECT_EQ(ds.envmap->radiance[0], 0.75);
  for (int k = 0; k < 16; ++k) EXPECT_NEAR(ds.train[1].camera.camera_to_world[k], frames[1].camera.camera_to_world[k], 1e-12);
  EXPECT_NEAR(ds.train[0].rgb[5], 0.2158, 2e-3);
  ASSERT_EQ(ds.test[0].normal.size(), 36u);
  EXPECT_NEAR(ds.test[0].normal[2], 1.0, 1e-2);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir tmp;
  SceneModel<float> m(tiny_config(), 5);
  CheckpointMeta meta;
  meta.iteration = 17;
  meta.train_config = {{"iterations", 17}, {"lr", 0.02}};
  save_checkpoint(tmp.path() / "a", m, meta);
  auto loaded = load_checkpoint(tmp.path() / "a");
  save_checkpoint(tmp.path() / "b", loaded.model, loaded.meta);
  EXPECT_EQ(file_bytes(tmp.path() / "a" / "manifest.json"), file_bytes(tmp.path() / "b" / "manifest.json"));
  EXPECT_EQ(file_bytes(tmp.path() / "a" / "tensors.bin"), file_bytes(tmp.path() / "b" / "tensors.bin"));
  EXPECT_EQ(loaded.meta.iteration, 17u);
  auto a = m.named_tensors();
  auto b = loaded.model.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(std::equal(a[i].second->data().begin(), a[i].second->data().end(), b[i].second->data().begin()));
  }
}

TEST(Checkpoint, BlobIsLittleEndianFloat32InManifestOrder) {
  TempDir tmp;
  SceneModel<float> m(tiny_config(), 6);
  save_checkpoint(tmp.path(), m);
  const auto bin = file_bytes(tmp.path() / "tensors.bin");
  std::size_t total = 0;
  for (auto& [name, t] : m.named_tensors()) total += t->numel();
  ASSERT_EQ(bin.size(), total * 4);
  const float first = m.named_tensors().front().second->data()[0];
  std::uint32_t bits = 0;
  for (int k = 0; k < 4; ++k) bits |= std::uint32_t(static_cast<std::uint8_t>(bin[k])) << (8 * k);
  EXPECT_EQ(std::bit_cast<float>(bits), first);
}

TEST(Checkpoint, PerturbationStatePersists) {
  TempDir tmp;
  SceneModel<float> m(tiny_config(), 7);
  auto p = attach(m, PerturbationSpec::scale(PerturbTarget::kRoughness, 0.1));
  save_checkpoint(tmp.path(), p);
  const auto back = load_checkpoint(tmp.path());
  ASSERT_TRUE(back.model.multipliers().roughness.has_value());
  EXPECT_EQ(*back.model.multipliers().roughness, 0.1);
  EXPECT_FALSE(back.model.multipliers().albedo.has_value());
  EXPECT_EQ(back.model.perturbations().at("roughness"), "roughness x0.1");
}

TEST(Checkpoint, ConfigMismatchIsOverridable) {
  TempDir tmp;
  SceneModel<float> m(tiny_config(), 8);
  save_checkpoint(tmp.path(), m);
  auto other = tiny_config();
  other.density_shift = -3.0;
  EXPECT_THROW(load_checkpoint(tmp.path(), other), CheckpointMismatch);
  EXPECT_NO_THROW(load_checkpoint(tmp.path(), other, /*allow_mismatch=*/true));
  EXPECT_NO_THROW(load_checkpoint(tmp.path(), tiny_config()));
}

TEST(Checkpoint, RejectsCorruption) {
  TempDir tmp;
  SceneModel<float> m(tiny_config(), 9);
  save_checkpoint(tmp.path(), m);
  {
    std::fstream f(tmp.path() / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
    const char nan[4] = {0x00, 0x00, char(0xC0), 0x7F};
    f.write(nan, 4);
  }
  EXPECT_THROW(load_checkpoint(tmp.path()), IoError);
  fs::resize_file(tmp.path() / "tensors.bin", 8);
  EXPECT_THROW(load_checkpoint(tmp.path()), IoError);
  EXPECT_THROW(load_checkpoint(tmp.path() / "nowhere"), IoError);
}

TEST(Report, CsvAndJsonRoundTrip) {
  ExperimentMatrix m;
  m.cells.push_back({"ball", "none", "n/a", "none", {38.44, 0.982, 2.484, 5.265, 0, 0}});
  m.cells.push_back({"ball", "roughness", "under", "albedo", {29.4 + 1e-13, 0.1 / 3, 2.0 / 3, 5.625, 0, 0}});
  const auto csv = matrix_csv(m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scene,manipulated,direction,finetuned,psnr,ssim,mae,epsnr");
  EXPECT_EQ(parse_matrix_csv(csv), m);
  m.cells[0].metrics.pixels = 100;
  EXPECT_EQ(parse_matrix_json(nlohmann::json::parse(matrix_json(m).dump())), m);
}

TEST(Report, RejectsNonFinite) {
  ExperimentMatrix m;
  m.cells.push_back({"ball", "none", "n/a", "none", {std::nan(""), 0, 0, 0, 0, 0}});
  EXPECT_THROW(matrix_csv(m), IoError);
  EXPECT_THROW(matrix_json(m), IoError);
  EXPECT_THROW(parse_matrix_csv(std::string(kCsvHeader) + "\nb,none,n/a,none,nan,1,0,0\n"), IoError);
  EXPECT_THROW(parse_matrix_csv(std::string(kCsvHeader) + "\nb,none,n/a,none,1,1,0\n"), IoError);
  EXPECT_THROW(parse_matrix_csv("scene,x\n"), IoError);
}
