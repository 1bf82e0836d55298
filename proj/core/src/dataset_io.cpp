#include "phydisc/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_codec.hpp"
#include "phydisc/errors.hpp"

namespace phydisc {

namespace {

using codec::json;

constexpr char kMagic[8] = {'P', 'H', 'Y', 'D', 'S', 'E', 'T', '1'};
constexpr int kFormatVersion = 1;

enum class ControlKind { kNone, kRadius, kPotential };

ControlKind control_kind(SystemKind s) {
  switch (s) {
    case SystemKind::kCopernicus: return ControlKind::kNone;
    case SystemKind::kNewton: return ControlKind::kRadius;
    default: return ControlKind::kPotential;
  }
}

std::size_t control_width(ControlKind k) {
  switch (k) {
    case ControlKind::kNone: return 0;
    case ControlKind::kRadius: return 1;
    default: return 10;
  }
}

std::vector<std::string> control_columns(ControlKind k) {
  if (k == ControlKind::kRadius) return {"r0"};
  if (k == ControlKind::kNone) return {};
  std::vector<std::string> cols;
  for (int i = 1; i <= 9; ++i) cols.push_back("c" + std::to_string(i));
  cols.push_back("offset");
  return cols;
}

std::vector<double> control_values(const Sample& s, ControlKind k) {
  if (k == ControlKind::kNone) return {};
  if (k == ControlKind::kRadius) {
    const double* r0 = std::get_if<double>(&s.control);
    if (r0 == nullptr) throw IoError("sample control is not a radius");
    return {*r0};
  }
  const auto* v = std::get_if<PotentialCoeffs>(&s.control);
  if (v == nullptr) throw IoError("sample control is not a potential");
  std::vector<double> out(v->c.begin(), v->c.end());
  out.push_back(v->offset);
  return out;
}

Control make_control(const double* values, ControlKind k) {
  if (k == ControlKind::kNone) return std::monostate{};
  if (k == ControlKind::kRadius) return values[0];
  PotentialCoeffs v;
  std::copy(values, values + 9, v.c.begin());
  v.offset = values[9];
  return v;
}

std::vector<std::string> obs_columns(SystemKind s) {
  switch (s) {
    case SystemKind::kCopernicus: return {"theta_s", "theta_m"};
    case SystemKind::kNewton: return {"r"};
    default: return {"rho"};
  }
}

json header_json(const Dataset& d, const Provenance& prov) {
  const ControlKind ck = control_kind(d.spec.system);
  return json{{"format", "phydisc-dataset"},
              {"format_version", kFormatVersion},
              {"spec", codec::to_json(d.spec)},
              {"generator_version", d.generator_version},
              {"proposals", d.proposals},
              {"proposal", {{"scale", d.spec.proposal_scale},
                            {"offset", d.spec.potential_offset}}},
              {"sample_count", d.samples.size()},
              {"grid_size", d.grid_size()},
              {"obs_columns", obs_columns(d.spec.system)},
              {"control_columns", control_columns(ck)},
              {"truth_columns", concept_names(d.spec.system)},
              {"truth_analysis_only", true},
              {"config_hash", prov.config_hash},
              {"note", prov.note}};
}

struct Header {
  Dataset data;
  std::size_t samples = 0;
};

Header parse_header(const json& h, const std::string& where) {
  try {
    if (h.value("format", "") != "phydisc-dataset") {
      throw IoError(where + ": not a dataset file");
    }
    if (h.value("format_version", 0) != kFormatVersion) {
      throw IoError(where + ": unsupported format version");
    }
    Header out;
    const json& spec = h.at("spec");
    out.data.spec.system = system_from_string(spec.at("system").get<std::string>());
    codec::from_json(spec, out.data.spec, where + ".spec");
    out.data.generator_version = h.at("generator_version").get<std::string>();
    out.data.proposals = h.at("proposals").get<std::size_t>();
    out.samples = h.at("sample_count").get<std::size_t>();
    if (h.at("grid_size").get<std::size_t>() != out.data.spec.grid.size()) {
      throw IoError(where + ": grid_size disagrees with the grid");
    }
    return out;
  } catch (const json::exception& e) {
    throw IoError(where + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(where + ": malformed header: " + e.what());
  }
}

void check_sample_shapes(const Dataset& d) {
  const auto g = static_cast<Eigen::Index>(d.grid_size());
  for (std::size_t k = 0; k < d.samples.size(); ++k) {
    const Sample& s = d.samples[k];
    if (s.observations.rows() != g ||
        s.observations.cols() != static_cast<Eigen::Index>(d.obs_dim()) ||
        s.truth.rows() != g ||
        s.truth.cols() != static_cast<Eigen::Index>(d.concept_dim())) {
      throw ShapeError("sample " + std::to_string(k) + " does not match the dataset shape");
    }
  }
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  // from_chars does not accept a leading '+', and never should see one.
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw IoError(where + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string csv_header(const std::vector<std::string>& lead,
                       const std::vector<std::string>& cols) {
  std::string out;
  for (const auto& c : lead) out += c + ",";
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  if (cols.empty() && !out.empty()) out.pop_back();
  return out + "\n";
}

std::string matrix_csv(const Dataset& d, bool truth) {
  std::string out = csv_header({"sample", "index"}, truth ? concept_names(d.spec.system)
                                                          : obs_columns(d.spec.system));
  for (std::size_t k = 0; k < d.samples.size(); ++k) {
    const Mat& m = truth ? d.samples[k].truth : d.samples[k].observations;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out += std::to_string(k) + "," + std::to_string(i);
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        out += ',';
        append_double(out, m(i, j));
      }
      out += '\n';
    }
  }
  return out;
}

std::vector<std::vector<std::string_view>> csv_rows(const std::string& text,
                                                    std::size_t width,
                                                    const std::string& where) {
  std::vector<std::vector<std::string_view>> rows;
  std::string_view rest(text);
  bool header = true;
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != width) {
      throw IoError(where + ": expected " + std::to_string(width) + " columns, got " +
                    std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::size_t parse_index(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw IoError(where + ": bad index '" + std::string(s) + "'");
  }
  return v;
}

void fill_matrices(Dataset& d, const std::string& text, bool truth, const std::string& where) {
  const std::size_t cols = truth ? d.concept_dim() : d.obs_dim();
  const std::size_t g = d.grid_size();
  const auto rows = csv_rows(text, cols + 2, where);
  if (rows.size() != d.samples.size() * g) {
    throw IoError(where + ": expected " + std::to_string(d.samples.size() * g) + " rows");
  }
  for (const auto& r : rows) {
    const std::size_t k = parse_index(r[0], where);
    const std::size_t i = parse_index(r[1], where);
    if (k >= d.samples.size() || i >= g) throw IoError(where + ": index out of range");
    Mat& m = truth ? d.samples[k].truth : d.samples[k].observations;
    for (std::size_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_double(r[j + 2], where);
    }
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_matrix(std::string& out, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
  }
}

std::string binary_payload(const Dataset& d) {
  const ControlKind ck = control_kind(d.spec.system);
  std::string out;
  out.reserve(d.samples.size() * 8 *
              (control_width(ck) + d.grid_size() * (d.obs_dim() + d.concept_dim())));
  for (const Sample& s : d.samples) {
    for (double v : control_values(s, ck)) put_f64(out, v);
  }
  for (const Sample& s : d.samples) put_matrix(out, s.observations);
  for (const Sample& s : d.samples) put_matrix(out, s.truth);
  return out;
}

std::string binary_file(const Dataset& d, const Provenance& prov) {
  check_sample_shapes(d);
  const std::string header = header_json(d, prov).dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, header.size());
  out += header;
  out += binary_payload(d);
  return out;
}

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw IoError(where + ": bad hash '" + s + "'");
  }
  return v;
}

}  // namespace

void write_file_atomic(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_dataset_text(const Dataset& data, const fs::path& dir, const Provenance& prov) {
  check_sample_shapes(data);
  const ControlKind ck = control_kind(data.spec.system);
  json manifest = header_json(data, prov);
  manifest["files"] = {{"observations", "observations.csv"},
                       {"controls", "controls.csv"},
                       {"truth", "truth.csv"}};
  std::string controls = csv_header({"sample"}, control_columns(ck));
  for (std::size_t k = 0; k < data.samples.size(); ++k) {
    controls += std::to_string(k);
    for (double v : control_values(data.samples[k], ck)) {
      controls += ',';
      append_double(controls, v);
    }
    controls += '\n';
  }
  write_file_atomic(dir / "observations.csv", matrix_csv(data, false));
  write_file_atomic(dir / "controls.csv", controls);
  write_file_atomic(dir / "truth.csv", matrix_csv(data, true));
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset_text(const fs::path& dir) {
  const std::string where = (dir / "manifest.json").string();
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError(where + ": " + e.what());
  }
  Header h = parse_header(manifest, where);
  Dataset d = std::move(h.data);
  const ControlKind ck = control_kind(d.spec.system);
  const auto g = static_cast<Eigen::Index>(d.grid_size());
  d.samples.resize(h.samples);
  for (Sample& s : d.samples) {
    s.observations = Mat::Constant(g, static_cast<Eigen::Index>(d.obs_dim()),
                                   std::numeric_limits<double>::quiet_NaN());
    s.truth = Mat::Constant(g, static_cast<Eigen::Index>(d.concept_dim()),
                            std::numeric_limits<double>::quiet_NaN());
  }
  const std::string ctext = read_file(dir / "controls.csv");
  const std::string cwhere = (dir / "controls.csv").string();
  const auto crows = csv_rows(ctext, control_width(ck) + 1, cwhere);
  if (crows.size() != h.samples) throw IoError(cwhere + ": one row per sample expected");
  for (const auto& r : crows) {
    const std::size_t k = parse_index(r[0], cwhere);
    if (k >= h.samples) throw IoError(cwhere + ": sample out of range");
    std::vector<double> v;
    for (std::size_t j = 1; j < r.size(); ++j) v.push_back(parse_double(r[j], cwhere));
    d.samples[k].control = make_control(v.data(), ck);
  }
  fill_matrices(d, read_file(dir / "observations.csv"), false,
                (dir / "observations.csv").string());
  fill_matrices(d, read_file(dir / "truth.csv"), true, (dir / "truth.csv").string());
  return d;
}

void save_dataset_binary(const Dataset& data, const fs::path& file, const Provenance& prov) {
  write_file_atomic(file, binary_file(data, prov));
}

Dataset load_dataset_binary(const fs::path& file) {
  const std::string where = file.string();
  const std::string bytes = read_file(file);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError(where + ": not a binary dataset");
  }
  const std::uint64_t hlen = get_u64(p + 8);
  if (hlen > bytes.size() - 16) throw IoError(where + ": truncated header");
  json hj;
  try {
    hj = json::parse(bytes.substr(16, hlen));
  } catch (const json::exception& e) {
    throw IoError(where + ": " + e.what());
  }
  Header h = parse_header(hj, where);
  Dataset d = std::move(h.data);
  const ControlKind ck = control_kind(d.spec.system);
  const std::size_t g = d.grid_size(), no = d.obs_dim(), nc = d.concept_dim();
  const std::size_t doubles = h.samples * (control_width(ck) + g * (no + nc));
  std::size_t off = 16 + hlen;
  if (bytes.size() - off != doubles * 8) throw IoError(where + ": payload size mismatch");
  auto next = [&]() {
    const double v = std::bit_cast<double>(get_u64(p + off));
    off += 8;
    return v;
  };
  d.samples.resize(h.samples);
  std::vector<double> cv(control_width(ck));
  for (Sample& s : d.samples) {
    for (double& v : cv) v = next();
    s.control = make_control(cv.data(), ck);
  }
  auto read_matrix = [&](Mat& m, std::size_t cols) {
    m.resize(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = next();
    }
  };
  for (Sample& s : d.samples) read_matrix(s.observations, no);
  for (Sample& s : d.samples) read_matrix(s.truth, nc);
  return d;
}

void save_dataset(const Dataset& data, const fs::path& path, const Provenance& prov) {
  if (path.extension() == ".bin") {
    save_dataset_binary(data, path, prov);
  } else {
    save_dataset_text(data, path, prov);
  }
}

Dataset load_dataset(const fs::path& path) {
  if (fs::is_directory(path)) return load_dataset_text(path);
  if (fs::is_regular_file(path)) return load_dataset_binary(path);
  throw IoError("no dataset at " + path.string());
}

std::uint64_t dataset_hash(const Dataset& data) {
  check_sample_shapes(data);
  json h = codec::to_json(data.spec);
  h["generator_version"] = data.generator_version;
  h["sample_count"] = data.samples.size();
  return fnv1a(binary_payload(data), fnv1a(h.dump()));
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& file) {
  const ModelParams& p = ckpt.params;
  auto values = [](const MlpParams& m) {
    std::vector<double> v(m.values().data(), m.values().data() + m.values().size());
    for (double x : v) {
      if (!std::isfinite(x)) throw IoError("checkpoint: non-finite parameter");
    }
    return v;
  };
  json j{{"format", "phydisc-checkpoint"},
         {"format_version", kFormatVersion},
         {"system", to_string(p.spec.system)},
         {"mode", to_string(p.spec.mode)},
         {"latent_dim", p.spec.latent_dim},
         {"model", codec::to_json(p.spec)},
         {"train", codec::to_json(ckpt.train)},
         {"epochs_done", ckpt.epochs_done},
         {"dataset_hash", hex64(ckpt.dataset_hash)},
         {"config_hash", ckpt.provenance.config_hash},
         {"note", ckpt.provenance.note},
         {"encoder", values(p.encoder)},
         {"field", values(p.field)},
         {"decoder", values(p.decoder)}};
  write_file_atomic(file, j.dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& file) {
  const std::string where = file.string();
  try {
    const json j = json::parse(read_file(file));
    if (j.value("format", "") != "phydisc-checkpoint") {
      throw IoError(where + ": not a checkpoint file");
    }
    if (j.value("format_version", 0) != kFormatVersion) {
      throw IoError(where + ": unsupported format version");
    }
    ModelSpec spec;
    codec::from_json(j.at("model"), spec, where + ".model");
    if (to_string(spec.system) != j.at("system").get<std::string>() ||
        to_string(spec.mode) != j.at("mode").get<std::string>() ||
        spec.latent_dim != j.at("latent_dim").get<std::size_t>()) {
      throw IoError(where + ": model block disagrees with the header");
    }
    Checkpoint c{ModelParams(spec)};
    codec::from_json(j.at("train"), c.train, where + ".train");
    c.epochs_done = j.at("epochs_done").get<std::size_t>();
    c.dataset_hash = parse_hex64(j.at("dataset_hash").get<std::string>(), where);
    c.provenance.config_hash = j.at("config_hash").get<std::string>();
    c.provenance.note = j.at("note").get<std::string>();
    auto fill = [&](MlpParams& m, const char* key) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != m.size()) {
        throw IoError(where + ": " + key + " has " + std::to_string(v.size()) +
                      " values, expected " + std::to_string(m.size()));
      }
      m.values() = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    };
    fill(c.params.encoder, "encoder");
    fill(c.params.field, "field");
    fill(c.params.decoder, "decoder");
    return c;
  } catch (const json::exception& e) {
    throw IoError(where + ": malformed checkpoint: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(where + ": malformed checkpoint: " + e.what());
  }
}

std::string metrics_line(const EpochRecord& r) {
  json j{{"epoch", r.epoch},
         {"optimizer", to_string(r.optimizer)},
         {"lr", r.lr},
         {"reconstruction", r.loss.reconstruction},
         {"kl", r.loss.kl},
         {"mre", r.loss.mre},
         {"total", r.loss.total},
         {"grad_hash_computed", hex64(r.grad_hash_computed)},
         {"grad_hash_applied", hex64(r.grad_hash_applied)}};
  return j.dump();
}

EpochRecord parse_metrics_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    r.lr = j.at("lr").get<double>();
    r.loss.reconstruction = j.at("reconstruction").get<double>();
    r.loss.kl = j.at("kl").get<double>();
    r.loss.mre = j.at("mre").get<double>();
    r.loss.total = j.at("total").get<double>();
    r.grad_hash_computed = parse_hex64(j.at("grad_hash_computed").get<std::string>(), "metrics");
    r.grad_hash_applied = parse_hex64(j.at("grad_hash_applied").get<std::string>(), "metrics");
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed metrics line: ") + e.what());
  }
}

}  // namespace phydisc
