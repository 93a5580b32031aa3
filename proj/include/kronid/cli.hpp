#pragma once

#include <CLI11.hpp>

#include "kronid/io.hpp"

namespace kronid {

namespace detail {

inline std::vector<Variant> parse_estimators(const std::string& csv) {
  std::vector<Variant> out;
  std::string cur;
  std::stringstream ss(csv);
  while (std::getline(ss, cur, ',')) {
    if (!cur.empty()) out.push_back(variant_from_name(cur));
  }
  if (out.empty()) throw CLI::ValidationError("--estimators", "no estimators given");
  return out;
}

inline Dims sidecar_dims(const std::string& data_path, const std::string& dims_path) {
  namespace fs = std::filesystem;
  fs::path p = dims_path.empty() ? fs::path(data_path).parent_path() / "dims.json"
                                 : fs::path(dims_path);
  return load_dims_json(p);
}

}  // namespace detail

/// CLI front end. Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"kronid: sparse Kronecker dynamic network identification"};
  app.require_subcommand(1);
  namespace fs = std::filesystem;

  // ---- simulate -------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset and ground truth");
  struct {
    int p1 = 0, p2 = 0, m = 0, n = 500, order = 20;
    double density = 0.6, pole = 0.95, band = 0.4, sigma2 = 1.0;
    std::uint64_t seed = 1;
    std::string out;
  } sim_args;
  sim->add_option("--p1", sim_args.p1, "module count")->required();
  sim->add_option("--p2", sim_args.p2, "nodes per module")->required();
  sim->add_option("--m", sim_args.m, "input dimension");
  sim->add_option("--density", sim_args.density, "support fill fraction");
  sim->add_option("--n", sim_args.n, "sample count");
  sim->add_option("--seed", sim_args.seed, "master seed");
  sim->add_option("--order", sim_args.order, "true system order per entry");
  sim->add_option("--pole-radius", sim_args.pole, "pole magnitude bound");
  sim->add_option("--band", sim_args.band, "input lowpass cutoff (fraction of Nyquist)");
  sim->add_option("--sigma2", sim_args.sigma2, "innovation variance per channel");
  sim->add_option("--out", sim_args.out, "output directory")->required();

  // ---- identify -------------------------------------------------------------
  auto* ident = app.add_subcommand("identify", "fit an estimator to a dataset");
  struct {
    std::string data, dims, out, variant = "K", mode = "standard";
    int t = 50, restarts = 3, max_iters = 300, discard = 0, p1_period = 0;
    double kappa = 1e4, tau = 1.0, grad_tol = 1e-6;
    std::uint64_t seed = 1;
    bool demean = false;
  } id_args;
  ident->add_option("--data", id_args.data, "dataset CSV")->required();
  ident->add_option("--dims", id_args.dims, "dims sidecar JSON (default: data dir/dims.json)");
  ident->add_option("--variant", id_args.variant, "estimator: K, S, SS or H");
  ident->add_option("--t", id_args.t, "impulse response truncation");
  ident->add_option("--kappa", id_args.kappa, "scale box bound");
  ident->add_option("--tau", id_args.tau, "support threshold in evidence units");
  ident->add_option("--restarts", id_args.restarts, "optimizer restarts");
  ident->add_option("--max-iters", id_args.max_iters, "optimizer iteration cap");
  ident->add_option("--grad-tol", id_args.grad_tol, "optimizer gradient tolerance");
  ident->add_option("--seed", id_args.seed, "restart seed");
  ident->add_option("--discard", id_args.discard, "drop rows predicting the first k outputs");
  ident->add_flag("--demean", id_args.demean, "subtract per-channel sample means");
  ident->add_option("--mode", id_args.mode, "standard or st (spatio-temporal)");
  ident->add_option("--p1-period", id_args.p1_period, "folding period for --mode st");
  ident->add_option("--out", id_args.out, "output directory")->required();

  // ---- montecarlo -----------------------------------------------------------
  auto* mc = app.add_subcommand("montecarlo", "run the synthetic comparison protocol");
  struct {
    int p1 = 0, p2 = 0, m = 0, n = 500, runs = 100, t = 50, restarts = 3, order = 20;
    double density = 0.6, sigma2 = 1.0, band = 0.4, pole = 0.95, kappa = 1e4;
    std::uint64_t seed = 1;
    std::string estimators = "K,S,SS", out, boxplot;
  } mc_args;
  mc->add_option("--p1", mc_args.p1)->required();
  mc->add_option("--p2", mc_args.p2)->required();
  mc->add_option("--m", mc_args.m);
  mc->add_option("--n", mc_args.n);
  mc->add_option("--runs", mc_args.runs);
  mc->add_option("--density", mc_args.density);
  mc->add_option("--sigma2", mc_args.sigma2);
  mc->add_option("--band", mc_args.band);
  mc->add_option("--pole-radius", mc_args.pole);
  mc->add_option("--order", mc_args.order);
  mc->add_option("--t", mc_args.t);
  mc->add_option("--kappa", mc_args.kappa);
  mc->add_option("--restarts", mc_args.restarts);
  mc->add_option("--seed", mc_args.seed, "master seed");
  mc->add_option("--estimators", mc_args.estimators, "comma list of K,S,SS,H");
  mc->add_option("--boxplot", mc_args.boxplot, "optional gnuplot box-plot data file");
  mc->add_option("--out", mc_args.out, "output directory")->required();

  // ---- ard-check ------------------------------------------------------------
  auto* ard = app.add_subcommand("ard-check", "report the per-scale zero-lock certificates");
  struct {
    std::string data, dims, out;
    int t = 20;
    double kappa = 1e4;
  } ard_args;
  ard->add_option("--data", ard_args.data, "dataset CSV")->required();
  ard->add_option("--dims", ard_args.dims, "dims sidecar JSON");
  ard->add_option("--t", ard_args.t, "truncation for the certificate");
  ard->add_option("--kappa", ard_args.kappa, "scale box bound");
  ard->add_option("--out", ard_args.out, "optional JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      const Dims dims(sim_args.p1, sim_args.p2, sim_args.m);
      fs::create_directories(sim_args.out);
      const NetworkSupport support =
          random_support(dims, sim_args.density, splitmix64(sim_args.seed ^ 0xA));
      const Eigen::VectorXd sigma2 = Eigen::VectorXd::Constant(dims.channels(), sim_args.sigma2);
      const GroundTruth gt = random_system(support, dims, sim_args.order, sim_args.pole,
                                           splitmix64(sim_args.seed ^ 0xB), &sigma2);
      InputSpec input;
      input.band = sim_args.band;
      const Dataset data = simulate(gt, sim_args.n, input, splitmix64(sim_args.seed ^ 0xC));
      const fs::path out(sim_args.out);
      save_dataset_csv(data, (out / "data.csv").string());
      save_dims_json(dims, out / "dims.json");
      save_ground_truth(gt, out / "truth.json", out / "truth.bin");
      std::cout << "simulate: wrote " << (out / "data.csv").string() << " (N=" << data.samples()
                << ", p1=" << dims.p1 << ", p2=" << dims.p2 << ", m=" << dims.m << ")\n";
      return 0;
    }

    if (ident->parsed()) {
      Dims dims = detail::sidecar_dims(id_args.data, id_args.dims);
      Dataset data = load_dataset_csv(id_args.data, dims);
      EstimatorConfig cfg;
      cfg.variant = variant_from_name(id_args.variant);
      cfg.truncation = id_args.t;
      cfg.kappa = id_args.kappa;
      cfg.support_tau = id_args.tau;
      cfg.restarts = id_args.restarts;
      cfg.max_iters = id_args.max_iters;
      cfg.grad_tol = id_args.grad_tol;
      cfg.seed = id_args.seed;
      cfg.discard = id_args.discard;
      cfg.demean = id_args.demean;
      if (id_args.mode == "st") {
        if (id_args.p1_period < 1) {
          throw CLI::ValidationError("--p1-period", "required (>= 1) with --mode st");
        }
        if (dims.m > 0) {
          throw CLI::ValidationError("--mode",
                                     "spatio-temporal folding supports output-only datasets");
        }
        data = fold_series(data.y, id_args.p1_period);
        cfg.mode = RegressorMode::SpatioTemporal;
      } else if (id_args.mode != "standard") {
        throw CLI::ValidationError("--mode", "must be 'standard' or 'st'");
      }
      const FitResult res = fit(data, cfg);
      const fs::path out(id_args.out);
      fs::create_directories(out);
      detail::write_text(out / "result.json", fit_result_to_json(res).dump(2) + "\n");
      save_impulse_binary(res.estimate, res.dims, out / "impulse.bin", out / "impulse.json");
      detail::write_text(out / "network.dot", dot_export(res.g_support, res.f_support, res.dims));
      std::cout << "identify: variant " << variant_name(res.variant) << ", nll " << res.nll_value
                << ", results in " << out.string() << "\n";
      return 0;
    }

    if (mc->parsed()) {
      McProtocol proto;
      proto.dims = Dims(mc_args.p1, mc_args.p2, mc_args.m);
      proto.density = mc_args.density;
      proto.samples = mc_args.n;
      proto.runs = mc_args.runs;
      proto.master_seed = mc_args.seed;
      proto.estimators = detail::parse_estimators(mc_args.estimators);
      proto.system_order = mc_args.order;
      proto.pole_radius = mc_args.pole;
      proto.input_band = mc_args.band;
      proto.sigma2 = mc_args.sigma2;
      proto.config.truncation = mc_args.t;
      proto.config.kappa = mc_args.kappa;
      proto.config.restarts = mc_args.restarts;
      try {
        proto.validate();
      } catch (const std::invalid_argument& e) {
        std::cerr << "montecarlo: " << e.what() << "\n";
        return 2;
      }
      const McResult res = monte_carlo(proto);
      const fs::path out(mc_args.out);
      fs::create_directories(out);
      detail::write_text(out / "records.jsonl", monte_carlo_jsonl(res, proto.estimators));
      detail::write_text(out / "summary.csv", monte_carlo_summary_csv(res, proto.estimators));
      if (!mc_args.boxplot.empty()) {
        detail::write_text(mc_args.boxplot, monte_carlo_boxplot(res, proto.estimators));
      }
      std::cout << monte_carlo_summary_csv(res, proto.estimators);
      return 0;
    }

    if (ard->parsed()) {
      const Dims dims = detail::sidecar_dims(ard_args.data, ard_args.dims);
      const Dataset data = load_dataset_csv(ard_args.data, dims);
      EstimatorConfig cfg;
      cfg.truncation = ard_args.t;
      cfg.kappa = ard_args.kappa;
      const ArdReport rep = ard_certificate(data, cfg);
      std::cout << "ard-check: threshold " << rep.threshold << " (T=" << rep.truncation
                << ", N=" << rep.samples << ", sigma2=" << rep.sigma2 << ")\n";
      std::cout << (rep.all_lockable() ? "all scales lockable at zero\n"
                                       : "some scales are not lockable:\n");
      for (int h = 0; h < dims.p1; ++h)
        for (int j = 0; j < dims.p1; ++j) {
          if (rep.lambda_lockable(h, j) == 0) {
            std::cout << "  lambda(" << h + 1 << "," << j + 1 << ") not lockable\n";
          }
        }
      for (int k = 0; k < dims.p2; ++k)
        for (int l = 0; l < dims.p2; ++l) {
          if (rep.gamma_lockable(k, l) == 0) {
            std::cout << "  gamma(" << k + 1 << "," << l + 1 << ") not lockable\n";
          }
        }
      for (Eigen::Index h = 0; h < rep.pi_lockable.size(); ++h) {
        if (rep.pi_lockable(h) == 0) std::cout << "  pi(" << h + 1 << ") not lockable\n";
      }
      for (Eigen::Index k = 0; k < rep.omega_lockable.rows(); ++k)
        for (Eigen::Index i = 0; i < rep.omega_lockable.cols(); ++i) {
          if (rep.omega_lockable(k, i) == 0) {
            std::cout << "  omega(" << k + 1 << "," << i + 1 << ") not lockable\n";
          }
        }
      if (!ard_args.out.empty()) {
        detail::write_text(ard_args.out, ard_report_to_json(rep).dump(2) + "\n");
      }
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace kronid
