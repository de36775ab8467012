#include "wmed/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace wmed::io {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double to_double(const std::string& s, const fs::path& where) {
  const std::string t = trim(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw FormatError(where.string() + ": not a number: '" + t + "'");
  }
  if (used != t.size()) throw FormatError(where.string() + ": not a number: '" + t + "'");
  return v;
}

// Header line plus numeric rows.
std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_table(const fs::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    if (header.empty()) {
      for (auto& h : split(line, ',')) header.push_back(trim(h));
      continue;
    }
    std::vector<double> row;
    for (const auto& c : split(line, ',')) row.push_back(to_double(c, path));
    if (row.size() != header.size()) throw FormatError(path.string() + ": row width differs from header");
    rows.push_back(std::move(row));
  }
  if (header.empty()) throw FormatError(path.string() + ": empty file");
  return {header, rows};
}

// Next whitespace-delimited PGM header token, skipping comments.
std::string pgm_token(const std::string& data, std::size_t& pos) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  return data.substr(start, pos - start);
}

ScalarField unit_mass(ScalarField f, const fs::path& path) {
  if (!f.allFinite() || f.minCoeff() < 0.0) throw FormatError(path.string() + ": entries must be finite and >= 0");
  const double total = f.sum();
  if (!(total > 0.0)) throw FormatError(path.string() + ": zero total mass");
  return f / total;
}

}  // namespace

void write_text_atomic(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.flush();
    if (!os) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

PgmImage read_pgm_image(const fs::path& path) {
  const std::string data = read_text(path);
  std::size_t pos = 0;
  const std::string magic = pgm_token(data, pos);
  if (magic != "P2" && magic != "P5") throw FormatError(path.string() + ": not a P2/P5 PGM");
  PgmImage img;
  try {
    img.width = std::stol(pgm_token(data, pos));
    img.height = std::stol(pgm_token(data, pos));
    img.maxval = std::stoi(pgm_token(data, pos));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad PGM header");
  }
  if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535)
    throw FormatError(path.string() + ": bad PGM dimensions or maxval");
  img.gray.resize(img.height, img.width);
  if (magic == "P2") {
    for (Index r = 0; r < img.height; ++r)
      for (Index c = 0; c < img.width; ++c) {
        const std::string t = pgm_token(data, pos);
        if (t.empty()) throw FormatError(path.string() + ": truncated P2 data");
        img.gray(r, c) = to_double(t, path);
      }
  } else {
    ++pos;  // single whitespace after maxval
    const std::size_t bytes = img.maxval > 255 ? 2 : 1;
    if (data.size() < pos + bytes * static_cast<std::size_t>(img.width * img.height))
      throw FormatError(path.string() + ": truncated P5 data");
    const auto* u = reinterpret_cast<const unsigned char*>(data.data() + pos);
    for (Index r = 0; r < img.height; ++r)
      for (Index c = 0; c < img.width; ++c) {
        const std::size_t k = static_cast<std::size_t>(r * img.width + c) * bytes;
        img.gray(r, c) = bytes == 2 ? u[k] * 256.0 + u[k + 1] : u[k];
      }
  }
  if (img.gray.maxCoeff() > img.maxval) throw FormatError(path.string() + ": gray level above maxval");
  return img;
}

ScalarField read_pgm(const fs::path& path) { return unit_mass(read_pgm_image(path).gray, path); }

void write_pgm(const fs::path& path, const ScalarField& field, bool binary) {
  const double top = field.maxCoeff();
  const ScalarField scaled = top > 0.0 ? ScalarField((field.max(0.0) / top * 65535.0).round()) : ScalarField(field * 0.0);
  std::string out = (binary ? "P5\n" : "P2\n") + std::to_string(field.cols()) + " " + std::to_string(field.rows()) +
                    "\n65535\n";
  if (binary) {
    out.reserve(out.size() + static_cast<std::size_t>(field.size()) * 2);
    for (Index r = 0; r < field.rows(); ++r)
      for (Index c = 0; c < field.cols(); ++c) {
        const auto v = static_cast<unsigned>(scaled(r, c));
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xff));
      }
  } else {
    for (Index r = 0; r < field.rows(); ++r) {
      for (Index c = 0; c < field.cols(); ++c) {
        if (c) out += ' ';
        out += std::to_string(static_cast<unsigned>(scaled(r, c)));
      }
      out += '\n';
    }
  }
  write_text_atomic(path, out);
}

ScalarField read_matrix_csv(const fs::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& c : split(line, ',')) row.push_back(to_double(c, path));
    if (!rows.empty() && row.size() != rows.front().size()) throw FormatError(path.string() + ": ragged matrix");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": empty matrix");
  ScalarField f(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < f.rows(); ++r)
    for (Index c = 0; c < f.cols(); ++c) f(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return f;
}

void write_matrix_csv(const fs::path& path, const ScalarField& field) {
  std::string out;
  for (Index r = 0; r < field.rows(); ++r) {
    for (Index c = 0; c < field.cols(); ++c) {
      if (c) out += ',';
      out += fmt(field(r, c));
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

FlowField read_flow_csv(const fs::path& prefix) {
  FlowField f;
  f.x = read_matrix_csv(fs::path(prefix.string() + "_vx.csv"));
  f.y = read_matrix_csv(fs::path(prefix.string() + "_vy.csv"));
  if (f.x.rows() != f.y.rows() || f.x.cols() != f.y.cols()) throw FormatError(prefix.string() + ": component shapes differ");
  return f;
}

void write_flow_csv(const fs::path& prefix, const FlowField& flow) {
  write_matrix_csv(fs::path(prefix.string() + "_vx.csv"), flow.x);
  write_matrix_csv(fs::path(prefix.string() + "_vy.csv"), flow.y);
}

Measure1D read_measure1d_csv(const fs::path& path) {
  const auto [header, rows] = read_table(path);
  if (header == std::vector<std::string>{"x", "mass"}) {
    std::vector<double> x, m;
    for (const auto& r : rows) {
      x.push_back(r[0]);
      m.push_back(r[1]);
    }
    return Measure1D::atomic(x, m);
  }
  if (header == std::vector<std::string>{"edge_left", "edge_right", "mass"}) {
    std::vector<Piece> pieces;
    for (const auto& r : rows) {
      if (!(r[1] >= r[0])) throw FormatError(path.string() + ": edge_right < edge_left");
      pieces.push_back({r[0], r[1], r[2]});
    }
    return Measure1D::from_pieces(pieces);
  }
  throw FormatError(path.string() + ": expected header x,mass or edge_left,edge_right,mass");
}

void write_measure1d_csv(const fs::path& path, const Measure1D& mu) {
  std::string out;
  if (mu.is_atomic()) {
    out = "x,mass\n";
    const Eigen::VectorXd x = mu.atoms(), m = mu.masses();
    for (Index k = 0; k < x.size(); ++k) out += fmt(x(k)) + "," + fmt(m(k)) + "\n";
  } else {
    out = "edge_left,edge_right,mass\n";
    for (const Piece& p : mu.pieces()) out += fmt(p.left) + "," + fmt(p.right) + "," + fmt(p.mass) + "\n";
  }
  write_text_atomic(path, out);
}

PointCloud read_cloud_csv(const fs::path& path) {
  const auto [header, rows] = read_table(path);
  if (header != std::vector<std::string>{"x", "y", "mass"}) throw FormatError(path.string() + ": expected header x,y,mass");
  Eigen::Matrix2Xd pts(2, static_cast<Index>(rows.size()));
  Eigen::VectorXd m(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    pts.col(static_cast<Index>(k)) << rows[k][0], rows[k][1];
    m(static_cast<Index>(k)) = rows[k][2];
  }
  return PointCloud::make(std::move(pts), std::move(m));
}

void write_cloud_csv(const fs::path& path, const PointCloud& cloud) {
  std::string out = "x,y,mass\n";
  for (Index k = 0; k < cloud.size(); ++k)
    out += fmt(cloud.points(0, k)) + "," + fmt(cloud.points(1, k)) + "," + fmt(cloud.masses(k)) + "\n";
  write_text_atomic(path, out);
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

void write_table_csv(const fs::path& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size()) throw std::invalid_argument("write_table_csv: header and columns differ");
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += '\n';
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns)
    if (col.size() != rows) throw std::invalid_argument("write_table_csv: ragged columns");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + fmt(columns[c][r]);
    out += '\n';
  }
  write_text_atomic(path, out);
}

Weights parse_weights(const std::string& text) {
  std::string body = text;
  std::error_code ec;
  if (fs::is_regular_file(text, ec)) body = read_text(text);
  for (char& ch : body)
    if (ch == '\n' || ch == '\r' || ch == '\t' || ch == ' ') ch = ',';
  std::vector<double> w;
  for (const auto& c : split(body, ','))
    if (!trim(c).empty()) w.push_back(to_double(c, "weights"));
  if (w.empty()) throw FormatError("weights: empty list");
  return Weights(Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Index>(w.size())));
}

ScalarField read_grid_measure(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".csv") return unit_mass(read_matrix_csv(path), path);
  throw FormatError(path.string() + ": expected .pgm or .csv");
}

}  // namespace wmed::io
