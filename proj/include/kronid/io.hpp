#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "kronid/metrics.hpp"

namespace kronid {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ordered_json imatrix_to_json(const Eigen::MatrixXi& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ordered_json vector_to_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Eigen::MatrixXi imatrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
  Eigen::MatrixXi m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<int>();
  return m;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

}  // namespace detail

// --- dims sidecar ----------------------------------------------------------------

inline void save_dims_json(const Dims& d, const std::filesystem::path& path) {
  ordered_json j{{"p1", d.p1}, {"p2", d.p2}, {"m", d.m}};
  detail::write_text(path, j.dump(2) + "\n");
}

inline Dims load_dims_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dims sidecar " + path.string());
  nlohmann::json j;
  in >> j;
  return Dims(j.at("p1").get<int>(), j.at("p2").get<int>(), j.at("m").get<int>());
}

// --- impulse response dumps -------------------------------------------------------

/// Raw float64 dump, t-major: all G lag matrices (row-major within a lag),
/// then all F lag matrices. A JSON header alongside records the layout.
inline void save_impulse_binary(const ImpulseEstimate& est, const Dims& d,
                                const std::filesystem::path& bin_path,
                                const std::filesystem::path& header_path) {
  std::ofstream out(bin_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + bin_path.string());
  const auto dump = [&](const std::vector<Eigen::MatrixXd>& lags) {
    for (const auto& lag : lags) {
      for (Eigen::Index r = 0; r < lag.rows(); ++r)
        for (Eigen::Index c = 0; c < lag.cols(); ++c) {
          const double v = lag(r, c);
          out.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
    }
  };
  dump(est.g);
  dump(est.f);
  ordered_json header{{"T", est.truncation()},
                      {"p1", d.p1},
                      {"p2", d.p2},
                      {"m", d.m},
                      {"layout", "t-major"}};
  detail::write_text(header_path, header.dump(2) + "\n");
}

inline ImpulseEstimate load_impulse_binary(const std::filesystem::path& bin_path,
                                           const std::filesystem::path& header_path) {
  std::ifstream hin(header_path);
  if (!hin) throw std::runtime_error("cannot open " + header_path.string());
  nlohmann::json h;
  hin >> h;
  const int t = h.at("T").get<int>();
  const Dims d(h.at("p1").get<int>(), h.at("p2").get<int>(), h.at("m").get<int>());
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + bin_path.string());
  ImpulseEstimate est;
  est.g.assign(t, Eigen::MatrixXd(d.channels(), d.channels()));
  est.f.assign(t, Eigen::MatrixXd(d.channels(), d.m));
  const auto slurp = [&](std::vector<Eigen::MatrixXd>& lags) {
    for (auto& lag : lags)
      for (Eigen::Index r = 0; r < lag.rows(); ++r)
        for (Eigen::Index c = 0; c < lag.cols(); ++c) {
          double v = 0.0;
          if (!in.read(reinterpret_cast<char*>(&v), sizeof(double))) {
            throw std::runtime_error("impulse dump truncated: " + bin_path.string());
          }
          lag(r, c) = v;
        }
  };
  slurp(est.g);
  slurp(est.f);
  return est;
}

// --- network support / fit result --------------------------------------------------

inline ordered_json support_to_json(const NetworkSupport& s) {
  return ordered_json{{"E1", detail::imatrix_to_json(s.e1)},
                      {"E2", detail::imatrix_to_json(s.e2)},
                      {"A1", detail::imatrix_to_json(s.a1)},
                      {"A2", detail::imatrix_to_json(s.a2)}};
}

inline NetworkSupport support_from_json(const nlohmann::json& j) {
  NetworkSupport s;
  s.e1 = detail::imatrix_from_json(j.at("E1"));
  s.e2 = detail::imatrix_from_json(j.at("E2"));
  s.a1 = detail::imatrix_from_json(j.at("A1"));
  s.a2 = detail::imatrix_from_json(j.at("A2"));
  return s;
}

inline ordered_json fit_result_to_json(const FitResult& r) {
  ordered_json j;
  j["variant"] = variant_name(r.variant);
  j["dims"] = ordered_json{{"p1", r.dims.p1}, {"p2", r.dims.p2}, {"m", r.dims.m}};
  j["T"] = r.truncation;
  j["nll"] = r.nll_value;
  j["scales"] = detail::vector_to_json(r.scales);
  j["noise_sigma2"] = detail::vector_to_json(r.noise.sigma2);
  j["shapes"] = ordered_json{
      {"P", ordered_json{{"beta", r.shape_p.beta}, {"omega0", r.shape_p.omega0}}},
      {"R", ordered_json{{"beta", r.shape_r.beta}, {"omega0", r.shape_r.omega0}}},
      {"R_used", r.shape_r_used}};
  if (r.support) j["support"] = support_to_json(*r.support);
  j["g_support"] = detail::imatrix_to_json(r.g_support);
  j["f_support"] = detail::imatrix_to_json(r.f_support);
  j["g_evidence"] = detail::matrix_to_json(r.evidence.g);
  j["f_evidence"] = detail::matrix_to_json(r.evidence.f);
  j["diagnostics"] = ordered_json{{"iterations", r.diag.iterations},
                                  {"restarts", r.diag.restarts_used},
                                  {"best_restart", r.diag.best_restart},
                                  {"converged", r.diag.converged},
                                  {"y_scale", detail::vector_to_json(r.diag.y_scale)},
                                  {"u_scale", detail::vector_to_json(r.diag.u_scale)}};
  return j;
}

// --- ground truth archive ------------------------------------------------------------

inline void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& json_path,
                              const std::filesystem::path& bin_path) {
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + bin_path.string());
    const auto dump = [&](const std::vector<Eigen::MatrixXd>& lags) {
      for (const auto& lag : lags)
        for (Eigen::Index r = 0; r < lag.rows(); ++r)
          for (Eigen::Index c = 0; c < lag.cols(); ++c) {
            const double v = lag(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof(double));
          }
    };
    dump(gt.g);
    dump(gt.f);
  }
  ordered_json j;
  j["dims"] = ordered_json{{"p1", gt.dims.p1}, {"p2", gt.dims.p2}, {"m", gt.dims.m}};
  j["t_sim"] = gt.t_sim();
  j["seed"] = gt.seed;
  j["noise_sigma2"] = detail::vector_to_json(gt.noise.sigma2);
  j["support"] = support_to_json(gt.support);
  j["coefficients"] = ordered_json{{"file", bin_path.filename().string()},
                                   {"layout", "t-major"},
                                   {"order", "g-then-f"}};
  detail::write_text(json_path, j.dump(2) + "\n");
}

inline GroundTruth load_ground_truth(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open " + json_path.string());
  nlohmann::json j;
  in >> j;
  GroundTruth gt;
  gt.dims = Dims(j.at("dims").at("p1").get<int>(), j.at("dims").at("p2").get<int>(),
                 j.at("dims").at("m").get<int>());
  gt.seed = j.at("seed").get<std::uint64_t>();
  Eigen::VectorXd sigma2(j.at("noise_sigma2").size());
  for (Eigen::Index i = 0; i < sigma2.size(); ++i) {
    sigma2(i) = j.at("noise_sigma2").at(i).get<double>();
  }
  gt.noise = NoiseModel(std::move(sigma2));
  gt.support = support_from_json(j.at("support"));
  const int t_sim = j.at("t_sim").get<int>();
  const auto bin_path = json_path.parent_path() / j.at("coefficients").at("file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + bin_path.string());
  gt.g.assign(t_sim, Eigen::MatrixXd(gt.dims.channels(), gt.dims.channels()));
  gt.f.assign(t_sim, Eigen::MatrixXd(gt.dims.channels(), gt.dims.m));
  const auto slurp = [&](std::vector<Eigen::MatrixXd>& lags) {
    for (auto& lag : lags)
      for (Eigen::Index r = 0; r < lag.rows(); ++r)
        for (Eigen::Index c = 0; c < lag.cols(); ++c) {
          double v = 0.0;
          if (!bin.read(reinterpret_cast<char*>(&v), sizeof(double))) {
            throw std::runtime_error("ground truth dump truncated");
          }
          lag(r, c) = v;
        }
  };
  slurp(gt.g);
  slurp(gt.f);
  return gt;
}

// --- ARD report ------------------------------------------------------------------------

inline ordered_json ard_report_to_json(const ArdReport& r) {
  ordered_json j;
  j["threshold"] = r.threshold;
  j["sigma2_mean"] = r.sigma2;
  j["T"] = r.truncation;
  j["N"] = r.samples;
  j["all_lockable"] = r.all_lockable();
  j["lambda_lockable"] = detail::imatrix_to_json(r.lambda_lockable);
  j["gamma_lockable"] = detail::imatrix_to_json(r.gamma_lockable);
  ordered_json pi = ordered_json::array();
  for (Eigen::Index i = 0; i < r.pi_lockable.size(); ++i) pi.push_back(r.pi_lockable(i));
  j["pi_lockable"] = std::move(pi);
  j["omega_lockable"] = detail::imatrix_to_json(r.omega_lockable);
  j["g_stat"] = detail::matrix_to_json(r.g_stat);
  j["f_stat"] = detail::matrix_to_json(r.f_stat);
  return j;
}

// --- DOT export -------------------------------------------------------------------------

/// Graphviz rendering of the estimated topology: one cluster per module
/// (p1 clusters of p2 nodes), directed edges for every nonzero entry of the
/// elementwise supports, box-shaped input nodes.
inline std::string dot_export(const Eigen::MatrixXi& g_support, const Eigen::MatrixXi& f_support,
                              const Dims& d) {
  std::string out = "digraph kronecker_network {\n  rankdir=LR;\n  node [shape=circle];\n";
  for (int h = 0; h < d.p1; ++h) {
    out += "  subgraph cluster_" + std::to_string(h + 1) + " {\n";
    out += "    label=\"module " + std::to_string(h + 1) + "\";\n";
    for (int k = 0; k < d.p2; ++k) {
      out += "    y_" + std::to_string(h + 1) + "_" + std::to_string(k + 1) + ";\n";
    }
    out += "  }\n";
  }
  for (int i = 0; i < d.m; ++i) {
    out += "  u_" + std::to_string(i + 1) + " [shape=box];\n";
  }
  const auto node = [&](int ch) {
    return "y_" + std::to_string(ch / d.p2 + 1) + "_" + std::to_string(ch % d.p2 + 1);
  };
  for (int row = 0; row < d.channels(); ++row)
    for (int col = 0; col < d.channels(); ++col) {
      if (g_support(row, col) != 0) out += "  " + node(col) + " -> " + node(row) + ";\n";
    }
  for (int row = 0; row < d.channels(); ++row)
    for (int i = 0; i < d.m; ++i) {
      if (f_support(row, i) != 0) {
        out += "  u_" + std::to_string(i + 1) + " -> " + node(row) + ";\n";
      }
    }
  out += "}\n";
  return out;
}

// --- Monte Carlo outputs ------------------------------------------------------------------

/// One JSONL line per successful (run, estimator) pair. Wall times are kept
/// out of these records so repeated invocations are byte-identical; timing
/// lives in the CSV summary.
inline std::string monte_carlo_jsonl(const McResult& res, const std::vector<Variant>& estimators) {
  std::string out;
  for (const auto& rec : res.records) {
    for (Variant v : estimators) {
      const auto it = rec.outcomes.find(variant_name(v));
      if (it == rec.outcomes.end() || !it->second.ok) continue;
      ordered_json j{{"run", rec.run},
                     {"seed", rec.seed},
                     {"estimator", variant_name(v)},
                     {"airf", it->second.airf},
                     {"err", it->second.err},
                     {"nll", it->second.nll}};
      out += j.dump() + "\n";
    }
  }
  return out;
}

inline std::string monte_carlo_summary_csv(const McResult& res,
                                           const std::vector<Variant>& estimators) {
  std::string out =
      "estimator,runs_ok,runs_failed,airf_median,airf_q1,airf_q3,err_median,err_q1,err_q3,"
      "nll_median,wall_mean_s\n";
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (Variant v : estimators) {
    const auto& s = res.summary.at(variant_name(v));
    out += variant_name(v) + "," + std::to_string(s.ok) + "," + std::to_string(s.failed) + "," +
           num(s.airf_median) + "," + num(s.airf_q1) + "," + num(s.airf_q3) + "," +
           num(s.err_median) + "," + num(s.err_q1) + "," + num(s.err_q3) + "," +
           num(s.nll_median) + "," + num(s.wall_mean_seconds) + "\n";
  }
  return out;
}

/// gnuplot-friendly box plot data: one row per estimator and metric with
/// quartiles (whiskers at the quartiles themselves).
inline std::string monte_carlo_boxplot(const McResult& res,
                                       const std::vector<Variant>& estimators) {
  std::string out = "# metric estimator q1 median q3\n";
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (Variant v : estimators) {
    const auto& s = res.summary.at(variant_name(v));
    out += "airf " + variant_name(v) + " " + num(s.airf_q1) + " " + num(s.airf_median) + " " +
           num(s.airf_q3) + "\n";
    out += "err " + variant_name(v) + " " + num(s.err_q1) + " " + num(s.err_median) + " " +
           num(s.err_q3) + "\n";
  }
  return out;
}

}  // namespace kronid
