#include "wmed/io.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace wmed;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("wmed_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

bool no_temporaries(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().string().find(".tmp.") != std::string::npos) return false;
  return true;
}

}  // namespace

TEST_CASE("matrix and flow csv round trip exactly") {
  TempDir dir;
  std::mt19937_64 rng(1);
  const ScalarField f = oracle::random_field(rng, 7) * 1e-3;
  io::write_matrix_csv(dir / "f.csv", f);
  CHECK((io::read_matrix_csv(dir / "f.csv") - f).abs().maxCoeff() == 0.0);

  const FlowField s = oracle::random_flow(rng, 5);
  io::write_flow_csv(dir / "flow", s);
  CHECK(fs::exists(dir / "flow_vx.csv"));
  CHECK(fs::exists(dir / "flow_vy.csv"));
  CHECK(squared_norm(io::read_flow_csv(dir / "flow") - s) == 0.0);

  const ScalarField m = oracle::random_grid_measure(rng, 6, 0.5);
  io::write_matrix_csv(dir / "m.csv", m);
  CHECK((io::read_grid_measure(dir / "m.csv") - m).abs().maxCoeff() < 1e-15);
  CHECK(no_temporaries(dir.path));
}

TEST_CASE("pgm quantization and orientation") {
  TempDir dir;
  std::mt19937_64 rng(2);
  const ScalarField m = oracle::random_grid_measure(rng, 9, 0.4);
  for (bool binary : {true, false}) {
    CAPTURE(binary);
    io::write_pgm(dir / "m.pgm", m, binary);
    const io::PgmImage img = io::read_pgm_image(dir / "m.pgm");
    CHECK(img.maxval == 65535);
    CHECK(img.gray.maxCoeff() == 65535);
    // Row r of the file is row r of the field.
    CHECK((img.gray / 65535.0 - m / m.maxCoeff()).abs().maxCoeff() <= 0.5 / 65535 + 1e-15);
    const ScalarField back = io::read_pgm(dir / "m.pgm");
    CHECK(back.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK((back - m).abs().maxCoeff() <= 2e-5 * m.maxCoeff());
  }
  // A non-square field keeps its shape: 2 rows, 3 columns.
  ScalarField r(2, 3);
  r << 0, 1, 2, 3, 4, 5;
  io::write_pgm(dir / "r.pgm", r, false);
  const io::PgmImage img = io::read_pgm_image(dir / "r.pgm");
  CHECK(img.width == 3);
  CHECK(img.height == 2);
  CHECK(img.gray(1, 2) == 65535);
  CHECK(img.gray(0, 1) == std::round(65535.0 / 5));
}

TEST_CASE("pgm parsing") {
  TempDir dir;
  io::write_text_atomic(dir / "a.pgm", "P2\n# comment\n3 2\n# another\n10\n0 1 2\n3 4 0\n");
  const io::PgmImage img = io::read_pgm_image(dir / "a.pgm");
  CHECK(img.width == 3);
  CHECK(img.height == 2);
  CHECK(img.maxval == 10);
  CHECK(img.gray(1, 1) == 4);
  const ScalarField m = io::read_pgm(dir / "a.pgm");
  CHECK(m(1, 0) == doctest::Approx(0.3));

  std::string p5 = "P5\n2 1\n255\n";
  p5.push_back(static_cast<char>(7));
  p5.push_back(static_cast<char>(200));
  io::write_text_atomic(dir / "b.pgm", p5);
  CHECK(io::read_pgm_image(dir / "b.pgm").gray(0, 1) == 200);

  io::write_text_atomic(dir / "zero.pgm", "P2 2 1 5 0 0");
  CHECK_THROWS_AS(io::read_pgm(dir / "zero.pgm"), io::FormatError);
  io::write_text_atomic(dir / "short.pgm", "P2 2 2 5 0 1 2");
  CHECK_THROWS_AS(io::read_pgm(dir / "short.pgm"), io::FormatError);
  io::write_text_atomic(dir / "big.pgm", "P2 1 1 5 9");
  CHECK_THROWS_AS(io::read_pgm(dir / "big.pgm"), io::FormatError);
  io::write_text_atomic(dir / "p6.pgm", "P6 1 1 5 1");
  CHECK_THROWS_AS(io::read_pgm(dir / "p6.pgm"), io::FormatError);
  CHECK_THROWS_AS(io::read_pgm(dir / "missing.pgm"), Error);
}

TEST_CASE("1D measure csv round trip") {
  TempDir dir;
  const std::vector<double> x{0.3, -1.25, 7.0}, m{0.2, 0.5, 0.3};
  const Measure1D a = Measure1D::atomic(x, m);
  io::write_measure1d_csv(dir / "a.csv", a);
  CHECK(io::read_text(dir / "a.csv").rfind("x,mass\n", 0) == 0);
  CHECK(w1_1d(io::read_measure1d_csv(dir / "a.csv"), a) < 1e-15);

  const std::vector<double> edges{0.0, 0.5, 2.0, 3.0}, hm{0.25, 0.25, 0.5};
  const Measure1D h = Measure1D::histogram(edges, hm);
  io::write_measure1d_csv(dir / "h.csv", h);
  CHECK(io::read_text(dir / "h.csv").rfind("edge_left,edge_right,mass\n", 0) == 0);
  const Measure1D back = io::read_measure1d_csv(dir / "h.csv");
  CHECK(w1_1d(back, h) < 1e-15);
  for (double t : {0.1, 0.6, 2.5}) CHECK(std::abs(back.cdf(t) - h.cdf(t)) < 1e-12);

  io::write_text_atomic(dir / "bad.csv", "position,mass\n0,1\n");
  CHECK_THROWS_AS(io::read_measure1d_csv(dir / "bad.csv"), io::FormatError);
  io::write_text_atomic(dir / "nan.csv", "x,mass\n0,abc\n");
  CHECK_THROWS_AS(io::read_measure1d_csv(dir / "nan.csv"), io::FormatError);
  io::write_text_atomic(dir / "width.csv", "x,mass\n0,1,2\n");
  CHECK_THROWS_AS(io::read_measure1d_csv(dir / "width.csv"), io::FormatError);
}

TEST_CASE("point cloud csv round trip") {
  TempDir dir;
  Eigen::Matrix2Xd pts(2, 3);
  pts << 0.1, -2.0, 3.5, 1.0, 0.25, -0.125;
  const PointCloud c = PointCloud::make(pts, Eigen::Vector3d(0.5, 0.25, 0.25));
  io::write_cloud_csv(dir / "c.csv", c);
  const PointCloud back = io::read_cloud_csv(dir / "c.csv");
  CHECK((back.points - c.points).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.masses - c.masses).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("json, tables and weights") {
  TempDir dir;
  const nlohmann::json j = {{"a", 1}, {"b", {1.5, 2.5}}};
  io::write_json(dir / "sub" / "r.json", j);
  CHECK(io::read_json(dir / "sub" / "r.json") == j);
  io::write_text_atomic(dir / "broken.json", "{");
  CHECK_THROWS_AS(io::read_json(dir / "broken.json"), io::FormatError);

  io::write_table_csv(dir / "t.csv", {"iter", "residual"}, {{1, 2}, {0.5, 0.25}});
  CHECK(io::read_text(dir / "t.csv") == "iter,residual\n1,0.5\n2,0.25\n");
  CHECK_THROWS_AS(io::write_table_csv(dir / "t.csv", {"a"}, {{1}, {2}}), std::invalid_argument);

  const Weights w = io::parse_weights("0.2,0.3,0.5");
  CHECK(w.size() == 3);
  CHECK(w[1] == 0.3);
  io::write_text_atomic(dir / "w.txt", "0.25 0.75\n");
  CHECK(io::parse_weights((dir / "w.txt").string())[1] == 0.75);
  CHECK_THROWS(io::parse_weights("0.5,0.6"));
  CHECK_THROWS(io::parse_weights(""));
  CHECK_THROWS(io::parse_weights("a,b"));
}

TEST_CASE("atomic writes replace whole files") {
  TempDir dir;
  io::write_text_atomic(dir / "x.txt", std::string(1000, 'a'));
  io::write_text_atomic(dir / "x.txt", "short");
  CHECK(io::read_text(dir / "x.txt") == "short");
  CHECK(no_temporaries(dir.path));
}
