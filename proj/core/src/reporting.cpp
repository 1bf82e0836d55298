#include "phydisc/reporting.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "phydisc/errors.hpp"

namespace phydisc {

namespace {

using json = nlohmann::json;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json vec_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json fit_json(const LinearFit& f) {
  return json{{"regressors", f.regressors},
              {"dropped", f.dropped},
              {"coefficients", matrix_json(f.coefficients)},
              {"r_squared", vec_json(f.r_squared)},
              {"max_abs_residual", f.max_abs_residual},
              {"rms_residual", f.rms_residual}};
}

// Worst ratio per latent over the probed indices; indices where the fit is
// degenerate are skipped.
std::vector<double> worst_cross_concept(const ModelProbe& probe,
                                        const std::vector<std::size_t>& indices,
                                        std::size_t latent_dim) {
  std::vector<double> worst(latent_dim, 0.0);
  bool any = false;
  for (std::size_t i : indices) {
    try {
      const auto r = cross_concept_ratios(probe.latents[i], probe.concepts[i]);
      for (std::size_t j = 0; j < r.size(); ++j) worst[j] = std::max(worst[j], r[j]);
      any = true;
    } catch (const DegenerateFitError&) {
    }
  }
  if (!any) return {};
  return worst;
}

std::vector<double> worst_acceleration_r2(const ModelProbe& probe,
                                          const std::vector<std::size_t>& indices,
                                          std::size_t latent_dim) {
  std::vector<double> out;
  for (std::size_t p = 0; 2 * p + 1 < latent_dim; ++p) {
    const std::size_t col = 2 * p + 1;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i : indices) {
      if (idx(col) >= probe.derivatives[i].cols()) continue;
      try {
        const LinearFit f = fit_linear(probe.field[i].col(idx(col)),
                                       probe.derivatives[i].col(idx(col)));
        worst = std::min(worst, f.r_squared[0]);
      } catch (const DegenerateFitError&) {
      }
    }
    out.push_back(std::isfinite(worst) ? worst : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

FitReport build_fit_report(const ModelParams& params, const Dataset& data,
                           const std::vector<std::size_t>& rows,
                           const SolverConfig& solver,
                           const std::vector<std::size_t>& indices, std::size_t m,
                           std::size_t n, ModelProbe* probe_out) {
  const std::size_t latent = params.spec.latent_dim;
  if (m == 0) m = data.grid_size();
  if (n == 0) n = latent;
  if (m > data.grid_size()) {
    throw ConfigError("m = " + std::to_string(m) + " exceeds the grid size " +
                      std::to_string(data.grid_size()));
  }
  if (n > latent) {
    throw ConfigError("n = " + std::to_string(n) + " exceeds the latent size " +
                      std::to_string(latent));
  }
  for (std::size_t i : indices) {
    if (i >= data.grid_size()) {
      throw ConfigError("probe index " + std::to_string(i) + " outside the grid");
    }
  }
  ModelProbe probe = probe_model(params, data, rows, solver);
  FitReport r;
  r.system = data.spec.system;
  r.mode = params.spec.mode;
  r.latent_dim = latent;
  r.samples = rows.size();
  r.errors = relative_errors(probe, m, n);
  if (r.errors.skipped_h + r.errors.skipped_f > 0) {
    r.warnings.push_back("zero-norm entries skipped: R_h " + std::to_string(r.errors.skipped_h) +
                         ", R_f " + std::to_string(r.errors.skipped_f));
  }
  for (std::size_t i : indices) {
    try {
      auto f = probe_governing(probe, {i});
      r.fits.push_back(std::move(f.front()));
    } catch (const DegenerateFitError& e) {
      r.warnings.push_back("index " + std::to_string(i) + ": " + e.what());
    }
  }
  r.cross_concept = worst_cross_concept(probe, indices, latent);
  if (params.spec.mode == LatentMode::kSecondOrder) {
    r.acceleration_r2 = worst_acceleration_r2(probe, indices, latent);
  }
  if (probe_out != nullptr) *probe_out = std::move(probe);
  return r;
}

std::string fit_report_json(const FitReport& r) {
  json fits = json::array();
  for (const auto& f : r.fits) {
    fits.push_back({{"index", f.grid_index},
                    {"latent_fit", fit_json(f.latent_fit)},
                    {"field_fit", fit_json(f.field_fit)}});
  }
  json j{{"system", to_string(r.system)},
         {"mode", to_string(r.mode)},
         {"latent_dim", r.latent_dim},
         {"samples", r.samples},
         {"m", r.errors.m},
         {"n", r.errors.n},
         {"R_h", r.errors.r_h},
         {"R_f", r.errors.r_f},
         {"skipped_h", r.errors.skipped_h},
         {"skipped_f", r.errors.skipped_f},
         {"fits", fits},
         {"cross_concept_ratio", r.cross_concept},
         {"acceleration_r2", r.acceleration_r2},
         {"config_hash", r.config_hash},
         {"seed", r.seed},
         {"dataset_hash", hex64(r.dataset_hash)},
         {"warnings", r.warnings}};
  return j.dump(2) + "\n";
}

std::string ablation_json(const AblationCurve& c, SystemKind system,
                          const std::string& config_hash) {
  json cells = json::array();
  for (const auto& cell : c.cells) {
    cells.push_back({{"dim", cell.dim},
                     {"restart", cell.restart},
                     {"seed", cell.seed},
                     {"ok", cell.ok},
                     {"final_loss", cell.final_loss},
                     {"error", cell.error}});
  }
  json j{{"system", to_string(system)},
         {"dims", c.dims},
         {"mean_loss", c.mean_loss},
         {"std_loss", c.std_loss},
         {"knee_factor", c.knee_factor},
         {"chosen_dim", c.chosen_dim},
         {"cells", cells},
         {"config_hash", config_hash}};
  return j.dump(2) + "\n";
}

std::string relative_error_csv(const std::vector<FitReport>& reports) {
  std::string out = "system,mode,m,n,R_h,R_f,skipped_h,skipped_f\n";
  for (const auto& r : reports) {
    out += to_string(r.system) + "," + to_string(r.mode) + "," + std::to_string(r.errors.m) +
           "," + std::to_string(r.errors.n) + "," + format_double(r.errors.r_h) + "," +
           format_double(r.errors.r_f) + "," + std::to_string(r.errors.skipped_h) + "," +
           std::to_string(r.errors.skipped_f) + "\n";
  }
  return out;
}

std::string latent_vs_truth_csv(const ModelProbe& probe,
                                const std::vector<std::size_t>& indices) {
  if (probe.latents.empty()) return "";
  std::string out = "index,sample";
  for (Eigen::Index j = 0; j < probe.latents[0].cols(); ++j) out += ",h" + std::to_string(j);
  for (const auto& n : probe.concept_names) out += "," + n;
  out += "\n";
  for (std::size_t i : indices) {
    if (i >= probe.latents.size()) continue;
    const Mat& h = probe.latents[i];
    const Mat& c = probe.concepts[i];
    for (Eigen::Index k = 0; k < h.rows(); ++k) {
      out += std::to_string(i) + "," + std::to_string(k);
      for (Eigen::Index j = 0; j < h.cols(); ++j) out += "," + format_double(h(k, j));
      for (Eigen::Index j = 0; j < c.cols(); ++j) out += "," + format_double(c(k, j));
      out += "\n";
    }
  }
  return out;
}

std::string field_vs_expected_csv(const ModelProbe& probe, const FitReport& report) {
  std::string out = "index,sample,dim,f,predicted\n";
  for (const auto& fit : report.fits) {
    const Mat& f = probe.field[fit.grid_index];
    const Mat& pred = fit.field_fit.fitted;
    for (Eigen::Index k = 0; k < f.rows(); ++k) {
      for (Eigen::Index j = 0; j < f.cols(); ++j) {
        out += std::to_string(fit.grid_index) + "," + std::to_string(k) + "," +
               std::to_string(j) + "," + format_double(f(k, j)) + "," +
               format_double(pred(k, j)) + "\n";
      }
    }
  }
  return out;
}

std::string ablation_csv(const AblationCurve& c) {
  std::string out = "series,dim,restart,ok,loss,std\n";
  for (const auto& cell : c.cells) {
    out += "cell," + std::to_string(cell.dim) + "," + std::to_string(cell.restart) + "," +
           (cell.ok ? "1" : "0") + "," + format_double(cell.final_loss) + ",\n";
  }
  for (std::size_t i = 0; i < c.dims.size(); ++i) {
    out += "mean," + std::to_string(c.dims[i]) + ",,," + format_double(c.mean_loss[i]) + "," +
           format_double(c.std_loss[i]) + "\n";
  }
  return out;
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string render_svg(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<PlotSeries>& series,
                       bool log_y) {
  static const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                         "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  const double w = 640, h = 420, left = 70, right = 150, top = 40, bottom = 50;
  auto ty = [log_y](double y) { return log_y ? std::log10(y) : y; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      const double y = ty(s.y[i]);
      if (!std::isfinite(s.x[i]) || !std::isfinite(y)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (ty(y) - y0) / (y1 - y0) * ph; };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(w, 0) +
                    "\" height=\"" + fixed(h, 0) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fixed(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape_xml(title) + "</text>\n";
  out += "<rect x=\"" + fixed(left) + "\" y=\"" + fixed(top) + "\" width=\"" + fixed(pw) +
         "\" height=\"" + fixed(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  const auto yt = [&](double v) { return log_y ? std::pow(10.0, v) : v; };
  out += "<text x=\"" + fixed(left) + "\" y=\"" + fixed(top + ph + 16) +
         "\" text-anchor=\"middle\">" + tick(x0) + "</text>\n";
  out += "<text x=\"" + fixed(left + pw) + "\" y=\"" + fixed(top + ph + 16) +
         "\" text-anchor=\"middle\">" + tick(x1) + "</text>\n";
  out += "<text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(top + ph) +
         "\" text-anchor=\"end\">" + tick(yt(y0)) + "</text>\n";
  out += "<text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(top + 10) +
         "\" text-anchor=\"end\">" + tick(yt(y1)) + "</text>\n";
  out += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"" + fixed(h - 12) +
         "\" text-anchor=\"middle\">" + escape_xml(x_label) + "</text>\n";
  out += "<text transform=\"translate(18," + fixed(top + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + escape_xml(y_label) + "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const std::string colour = kColours[s % 8];
    const auto& ser = series[s];
    const std::size_t n = std::min(ser.x.size(), ser.y.size());
    if (ser.line) {
      std::string pts;
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(ser.x[i]) || !std::isfinite(ty(ser.y[i]))) continue;
        pts += fixed(px(ser.x[i])) + "," + fixed(py(ser.y[i])) + " ";
      }
      out += "<polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\" points=\"" +
             pts + "\"/>\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ty(ser.y[i]))) continue;
      out += "<circle cx=\"" + fixed(px(ser.x[i])) + "\" cy=\"" + fixed(py(ser.y[i])) +
             "\" r=\"" + (ser.line ? "3" : "2") + "\" fill=\"" + colour + "\"/>\n";
    }
    const double ly = top + 14 + 18 * static_cast<double>(s);
    out += "<rect x=\"" + fixed(w - right + 12) + "\" y=\"" + fixed(ly - 9) +
           "\" width=\"10\" height=\"10\" fill=\"" + colour + "\"/>\n";
    out += "<text x=\"" + fixed(w - right + 28) + "\" y=\"" + fixed(ly) + "\">" +
           escape_xml(ser.name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace phydisc
