// Copyright 2026 The CAGE-QAT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// cage: command-line driver for the experiments.
//
//   cage calibrate-clip --out runs/clip
//   cage toy-pareto --lambda 1,3
//   cage quadratic --opt adamw,cage-adamw-dec --seed 0-9
//   cage convergence --config conv.cfg
//   cage fit-scaling --config fit.cfg      (input = path/to/points.csv)

#include "cage/cage.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::string> seed, out, quant, lambda, silence_ratio, steps, opt;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "key = value settings file");
  sub->add_option("--seed", f.seed, "seed list, e.g. 0-9 or 1,4,7");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--quant", f.quant, "quantizer scheme:bits, e.g. int-hadamard:4");
  sub->add_option("--lambda", f.lambda, "error-correction strength (list for toy-pareto)");
  sub->add_option("--silence-ratio", f.silence_ratio, "fraction of steps with the correction off");
  sub->add_option("--steps", f.steps, "number of optimizer steps");
  sub->add_option("--opt", f.opt, "sgd|adamw|cage-sgd|cage-adamw-dec|cage-adamw-cpl (list for quadratic)");
}

// Precedence: defaults, then the config file, then flags.
cage::ExperimentConfig resolve(const std::string& name, const CommonFlags& f) {
  cage::ExperimentConfig cfg(name, cage::default_settings(name));
  if (!f.config.empty()) cfg.load_file(f.config);
  const std::pair<const char*, const std::optional<std::string>*> flags[] = {
      {"seed", &f.seed},   {"out", &f.out},     {"quant", &f.quant}, {"lambda", &f.lambda},
      {"silence_ratio", &f.silence_ratio},      {"steps", &f.steps}, {"opt", &f.opt}};
  for (const auto& [key, value] : flags)
    if (value->has_value()) cfg.set(key, **value);
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

fs::path prepare_out(const cage::ExperimentConfig& cfg) {
  const fs::path out = cfg.get("out");
  fs::create_directories(out);
  auto os = open_out(out / "config.txt");
  cfg.write_snapshot(os);
  return out;
}

nlohmann::json with_config(nlohmann::json j, const cage::ExperimentConfig& cfg) {
  j["subcommand"] = cfg.subcommand();
  j["config"] = cfg.values();
  return j;
}

int cmd_calibrate_clip(const cage::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  std::vector<int> bits;
  for (std::size_t b : cfg.get_size_list("bits")) bits.push_back(static_cast<int>(std::min<std::size_t>(b, 1000)));
  if (bits.empty()) throw cage::ConfigError("calibrate-clip: need at least one bit-width");
  const auto rows = cage::run_calibrate_clip(bits, cfg.get_size("n_grid"), cfg.get_size("quadrature"),
                                             cage::config_threads(cfg));
  auto os = open_out(out / "clip_factors.tsv");
  cage::write_clip_table(os, rows);
  std::printf("bits\tk_b\tmse\n");
  for (const auto& r : rows)
    std::printf("%d\t%s\t%s\n", r.bits, cage::format_double(r.clip_factor).c_str(), cage::format_double(r.mse).c_str());
  return 0;
}

int cmd_toy_pareto(const cage::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const auto tc = cage::toy_pareto_config(cfg);
  const auto runs = cage::run_toy_pareto(tc);
  write_json(out / "summary.json", with_config(cage::to_json(runs, tc), cfg));
  if (tc.keep_trace) {
    for (const auto& r : runs) {
      auto os = open_out(out / ("trace_lambda_" + cage::format_double(r.lambda) + ".csv"));
      cage::write_trace_csv(os, r.trace);
    }
  }
  std::printf("lambda\tfinal_x\texpected_x\t|pareto_grad|\tste_grad\n");
  for (const auto& r : runs)
    std::printf("%g\t%.12f\t%.12f\t%.3e\t%.6f\n", r.lambda, r.final_x, r.expected_x, std::abs(r.pareto_grad),
                r.ste_grad);
  return 0;
}

int cmd_quadratic(const cage::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const auto qc = cage::quadratic_config(cfg);
  const auto res = cage::run_quadratic(qc);
  write_json(out / "summary.json", with_config(cage::to_json(res), cfg));
  {
    auto os = open_out(out / "final_gaps.csv");
    os << "kappa,optimizer,seed,final_gap,final_gap_unquantized\n";
    for (const auto& r : res.runs)
      os << cage::format_double(r.kappa) << ',' << cage::to_string(r.optimizer) << ',' << r.seed << ','
         << cage::format_double(r.final_gap) << ',' << cage::format_double(r.final_gap_float) << '\n';
  }
  for (const auto& tr : res.trajectories) {
    for (const auto& [opt, pts] : tr.projected) {
      auto os = open_out(out / ("trajectory_kappa_" + cage::format_double(tr.kappa) + "_" + cage::to_string(opt) +
                                ".csv"));
      os << "pc1,pc2\n";
      for (const auto& p : pts)
        os << cage::format_double(p[0]) << ',' << cage::format_double(p.size() > 1 ? p[1] : 0.0) << '\n';
    }
  }
  std::printf("kappa\toptimizer\tmean_gap\tstd_gap\n");
  for (const auto& c : res.cells)
    std::printf("%g\t%s\t%.6e\t%.6e\n", c.kappa, cage::to_string(c.optimizer).c_str(), c.mean, c.std);
  return 0;
}

int cmd_convergence(const cage::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const auto cc = cage::convergence_config(cfg);
  const auto res = cage::run_convergence(cc);
  write_json(out / "summary.json", with_config(cage::to_json(res), cfg));
  {
    auto os = open_out(out / "ergodic.csv");
    os << "horizon,mean_ergodic_pareto_sq_norm\n";
    for (std::size_t i = 0; i < res.horizons.size(); ++i)
      os << res.horizons[i] << ',' << cage::format_double(res.mean_ergodic[i]) << '\n';
  }
  if (cc.keep_traces) {
    for (const auto& r : res.runs) {
      auto os = open_out(out / ("trace_T" + std::to_string(r.horizon) + "_seed" + std::to_string(r.seed) + ".csv"));
      cage::write_trace_csv(os, r.trace);
    }
  }
  std::printf("horizon\tmean_ergodic\n");
  for (std::size_t i = 0; i < res.horizons.size(); ++i)
    std::printf("%zu\t%.6e\n", res.horizons[i], res.mean_ergodic[i]);
  std::printf("exponent %.4f  r_squared %.4f  lipschitz %g\n", res.fit.exponent, res.fit.r_squared, res.lipschitz);
  return 0;
}

int cmd_fit_scaling(const cage::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const std::string input = cfg.get("input");
  if (input.empty()) throw cage::ConfigError("fit-scaling: 'input' must name a CSV file");
  std::ifstream in(input);
  if (!in) throw cage::ConfigError("fit-scaling: cannot open '" + input + "'");
  const auto data = cage::read_scaling_csv(in);
  cage::ScalingFitOptions opts;
  opts.prior_weight = cfg.get_double("prior_weight");
  opts.starts = cfg.get_size("starts");
  opts.max_iterations = cfg.get_size("max_iterations");
  opts.seed = cfg.get_seed_list("seed").front();
  const auto fit = cage::fit_scaling(data, opts);
  write_json(out / "fit.json", with_config(cage::to_json(fit, data), cfg));
  std::printf("A %.6g  alpha %.6g  B %.6g  beta %.6g  E %.6g  rms %.3e\n", fit.A, fit.alpha, fit.B, fit.beta, fit.E,
              fit.residual_rms);
  std::printf("method\tP\teff\n");
  for (const auto& [key, eff] : fit.eff) std::printf("%s\t%s\t%.6f\n", key.first.c_str(), key.second.c_str(), eff);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization-aware training experiments with error-corrected updates"};
  app.require_subcommand(1);
  CommonFlags flags;
  using Handler = int (*)(const cage::ExperimentConfig&);
  const std::pair<const char*, Handler> commands[] = {{"calibrate-clip", cmd_calibrate_clip},
                                                      {"toy-pareto", cmd_toy_pareto},
                                                      {"quadratic", cmd_quadratic},
                                                      {"convergence", cmd_convergence},
                                                      {"fit-scaling", cmd_fit_scaling}};
  const char* descriptions[] = {"MSE-optimal Gaussian clip factors per bit-width",
                                "scalar toy problem with a floor quantizer",
                                "quantized quadratic landscapes across condition numbers",
                                "ergodic rate of the Pareto stationarity measure",
                                "fit the precision-aware scaling law to a CSV"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].first, descriptions[i]));
    add_common(subs.back(), flags);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      const auto cfg = resolve(commands[i].first, flags);
      return commands[i].second(cfg);
    } catch (const cage::NumericalFailure& e) {
      std::cerr << "numerical failure: " << e.what() << '\n';
      return kExitNumerical;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return kExitConfig;
}
