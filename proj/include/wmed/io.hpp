#pragma once

// File formats. Grid fields are row-major in both PGM and CSV: file row r is
// field.row(r). Every writer goes through a temporary file and a rename.

#include "wmed/geom_oracle.hpp"
#include "wmed/grid2d.hpp"
#include "wmed/median1d.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace wmed::io {

namespace fs = std::filesystem;

class FormatError : public Error {
 public:
  using Error::Error;
};

void write_text_atomic(const fs::path& path, std::string_view text);
std::string read_text(const fs::path& path);

/// Raw gray levels of a P2 or P5 file (maxval <= 65535).
struct PgmImage {
  Eigen::Index width = 0;
  Eigen::Index height = 0;
  int maxval = 0;
  ScalarField gray;  ///< height x width
};

PgmImage read_pgm_image(const fs::path& path);
/// Gray levels normalized to unit mass. Throws FormatError on an all-zero image.
ScalarField read_pgm(const fs::path& path);
/// 16-bit P5 scaled so the largest entry maps to 65535; negative entries clip
/// to 0. After reloading, each cell is off by at most 0.5 / 65535 of the
/// largest cell before the mass renormalization.
void write_pgm(const fs::path& path, const ScalarField& field, bool binary = true);

ScalarField read_matrix_csv(const fs::path& path);
void write_matrix_csv(const fs::path& path, const ScalarField& field);

/// `<prefix>_vx.csv` and `<prefix>_vy.csv`.
FlowField read_flow_csv(const fs::path& prefix);
void write_flow_csv(const fs::path& prefix, const FlowField& flow);

/// Header `x,mass` (atoms) or `edge_left,edge_right,mass` (pieces; an atom is a
/// zero-width piece).
Measure1D read_measure1d_csv(const fs::path& path);
void write_measure1d_csv(const fs::path& path, const Measure1D& mu);

/// Header `x,y,mass`.
PointCloud read_cloud_csv(const fs::path& path);
void write_cloud_csv(const fs::path& path, const PointCloud& cloud);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);

/// CSV with a header line and numeric columns.
void write_table_csv(const fs::path& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& columns);

/// Comma-separated weights ("0.2,0.3,0.5") or, when `text` names a file, its
/// whitespace- or comma-separated contents.
Weights parse_weights(const std::string& text);

/// Loads a grid measure by extension: .pgm or .csv (renormalized to unit mass).
ScalarField read_grid_measure(const fs::path& path);

}  // namespace wmed::io
