#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedmerge/dataio.hpp"
#include "fedmerge/datagen.hpp"
#include "fedmerge/gma.hpp"
#include "fedmerge/merge.hpp"
#include "fedmerge/metrics.hpp"
#include "fedmerge/nn.hpp"
#include "fedmerge/serialize.hpp"
#include "fedmerge/soma.hpp"
#include "fedmerge/valuation.hpp"

namespace fedmerge {
namespace cli {

namespace fs = std::filesystem;

/// Bad invocation (unknown flags, missing files, invalid config): exit 2.
/// Runtime failures: exit 1. Matching error type below.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw UsageError("file not found: " + p.string());
}

inline nlohmann::json load_config(const fs::path& p) {
  require_file(p);
  std::ifstream in(p);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw UsageError("invalid config file: " + p.string());
  }
  return j;
}

// Pulls config[section][key] into `value` unless the flag was given on the
// command line -- flags win.
template <class T>
void maybe_from_config(const nlohmann::json& cfg, const std::string& section,
                       const std::string& key, const CLI::Option* opt, T& value) {
  if (opt && opt->count() > 0) return;
  if (!cfg.contains(section)) return;
  const auto& s = cfg.at(section);
  if (!s.is_object() || !s.contains(key)) return;
  try {
    value = s.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("config field " + section + "." + key + " has the wrong type");
  }
}

inline FitnessFn fitness_by_name(const std::string& name) {
  if (name == "error") {
    return [](const ModelParams& m, const Dataset& d) {
      return error_rate_fitness(m, d);
    };
  }
  if (name == "loss") {
    return [](const ModelParams& m, const Dataset& d) {
      return mean_loss_fitness(m, d);
    };
  }
  throw UsageError("unknown fitness metric '" + name + "' (use error|loss)");
}

inline SourceBank load_bank(const std::vector<std::string>& paths) {
  if (paths.empty()) throw UsageError("at least one --model is required");
  std::vector<ModelParams> models;
  for (const auto& p : paths) {
    require_file(p);
    models.push_back(load_model(p));
  }
  try {
    return SourceBank(std::move(models));
  } catch (const IncompatibleArchitectureError& e) {
    throw UsageError(e.what());
  }
}

inline Dataset load_dataset_checked(const std::string& path, int classes = 0) {
  require_file(path);
  return load_delimited(path, classes);
}

inline std::string two_digits(std::size_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02zu", v);
  return buf;
}

}  // namespace detail

struct CommonSomaOptions {
  SomaConfig cfg;
  CLI::Option *eta_opt = nullptr, *rho_opt = nullptr, *batch_opt = nullptr,
              *iters_opt = nullptr, *seed_opt = nullptr;

  void attach(CLI::App* app) {
    eta_opt = app->add_option("--eta", cfg.eta, "SGD step size");
    rho_opt = app->add_option("--rho", cfg.rho, "residual norm budget");
    batch_opt = app->add_option("--soma-batch-size", cfg.batch_size, "SGD batch size");
    iters_opt = app->add_option("--iterations", cfg.max_iterations,
                                "passes over the validation data");
    seed_opt = app->add_option("--soma-seed", cfg.seed, "SGD shuffling seed");
  }

  void finish(const nlohmann::json& cfg_json) {
    detail::maybe_from_config(cfg_json, "soma", "eta", eta_opt, cfg.eta);
    detail::maybe_from_config(cfg_json, "soma", "rho", rho_opt, cfg.rho);
    detail::maybe_from_config(cfg_json, "soma", "batch_size", batch_opt, cfg.batch_size);
    detail::maybe_from_config(cfg_json, "soma", "max_iterations", iters_opt,
                              cfg.max_iterations);
    detail::maybe_from_config(cfg_json, "soma", "seed", seed_opt, cfg.seed);
  }
};

inline void write_soma_log(const std::vector<SomaLogRow>& log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log: " + path.string());
  out << "iteration,mean_batch_loss,full_val_fitness,best_val_fitness\n";
  for (const auto& row : log) {
    out << row.iteration << ',' << format_double(row.mean_batch_loss) << ','
        << format_double(row.full_val_fitness) << ','
        << format_double(row.best_val_fitness) << '\n';
  }
}

inline void write_gma_log(const std::vector<GenerationStats>& log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log: " + path.string());
  out << "generation,evaluations_so_far,best_fitness\n";
  for (const auto& row : log) {
    out << row.generation << ',' << row.evaluations << ','
        << format_double(row.best_fitness) << '\n';
  }
}

/// Entry point used by both the binary and the tests. argv excludes the
/// program name.
inline int run_command(const std::vector<std::string>& argv) {
  CLI::App app{"merging and valuation of independently trained models"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config supplying defaults");

  // ---- gen-data -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate heterogeneous shards");
  ShardSpec spec;
  std::string gen_out = "data";
  CLI::Option *o_shards, *o_samples, *o_dim, *o_classes, *o_skew, *o_noise, *o_dseed;
  o_shards = gen->add_option("--shards", spec.n_shards, "number of shards");
  o_samples = gen->add_option("--samples", spec.samples_per_shard, "samples per shard");
  o_dim = gen->add_option("--dim", spec.feature_dim, "feature dimension");
  o_classes = gen->add_option("--classes", spec.class_count, "number of classes");
  o_skew = gen->add_option("--skew", spec.skew, "label-distribution divergence in [0,1]");
  o_noise = gen->add_option("--noise", spec.noise, "per-class Gaussian noise scale");
  o_dseed = gen->add_option("--seed", spec.seed, "generation seed");
  gen->add_option("--out", gen_out, "output directory");

  // ---- train --------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train one source model on a shard");
  std::string train_shard, train_out = "model.json";
  std::vector<std::size_t> hidden{16};
  std::size_t train_classes = 0;
  TrainConfig tc;
  train->add_option("--shard", train_shard, "training shard CSV")->required();
  train->add_option("--out", train_out, "output model file");
  CLI::Option* o_hidden =
      train->add_option("--hidden", hidden, "hidden layer widths")->delimiter(',');
  CLI::Option* o_tclasses =
      train->add_option("--classes", train_classes, "class count (0 = infer)");
  CLI::Option* o_lr = train->add_option("--lr", tc.learning_rate, "learning rate");
  CLI::Option* o_epochs = train->add_option("--epochs", tc.epochs, "epochs");
  CLI::Option* o_tbatch = train->add_option("--batch-size", tc.batch_size, "batch size");
  CLI::Option* o_tseed = train->add_option("--seed", tc.seed, "shuffling seed");
  CLI::Option* o_iseed =
      train->add_option("--init-seed", tc.init_seed, "shared initialization seed");

  // ---- merge ----------------------------------------------------------------
  auto* merge = app.add_subcommand("merge", "merge source models into one");
  std::string method = "soma";
  std::vector<std::string> merge_models;
  std::string merge_val, merge_out = "merged.json", coeffs_out, merge_log;
  std::string merge_fitness = "error";
  double val_fraction = 1.0;
  std::uint64_t subsample_seed = 1;
  GmaConfig gc;
  CommonSomaOptions soma_opts;
  merge->add_option("--method", method, "average|gma|soma")
      ->check(CLI::IsMember({"average", "gma", "soma"}));
  merge->add_option("--model", merge_models, "source model files")->required();
  merge->add_option("--val", merge_val, "validation CSV (gma/soma)");
  merge->add_option("--out", merge_out, "output model file");
  merge->add_option("--coeffs-out", coeffs_out, "write merge coefficients (soma)");
  merge->add_option("--log", merge_log, "write convergence CSV");
  CLI::Option* o_fit = merge->add_option("--fitness", merge_fitness, "error|loss");
  CLI::Option* o_vf =
      merge->add_option("--val-fraction", val_fraction, "validation subsample in (0,1]");
  CLI::Option* o_ssd =
      merge->add_option("--subsample-seed", subsample_seed, "subsample seed");
  CLI::Option* o_k = merge->add_option("--top-k", gc.top_k, "GMA population cap");
  CLI::Option* o_p1 = merge->add_option("--p-mutation", gc.p_mutation, "GMA p1");
  CLI::Option* o_p2 = merge->add_option("--p-crossover", gc.p_crossover, "GMA p2");
  CLI::Option* o_p3 =
      merge->add_option("--p-interpolation", gc.p_interpolation, "GMA p3");
  CLI::Option* o_gens =
      merge->add_option("--generations", gc.max_generations, "GMA generation cap");
  CLI::Option* o_gseed = merge->add_option("--gma-seed", gc.seed, "GMA seed");
  soma_opts.attach(merge);

  // ---- eval ---------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
  std::string eval_model, eval_data, eval_metric = "error", eval_out;
  eval->add_option("--model", eval_model, "model file")->required();
  eval->add_option("--data", eval_data, "dataset CSV")->required();
  eval->add_option("--metric", eval_metric, "error|loss");
  eval->add_option("--out", eval_out, "optional CSV output");

  // ---- shapley --------------------------------------------------------------
  auto* shap = app.add_subcommand("shapley", "group-testing valuation of sources");
  std::vector<std::string> shap_models;
  std::string shap_val, shap_test, shap_out = "shapley.json", shap_csv;
  std::string shap_fitness = "error";
  std::size_t tests = 10;
  double epsilon = 0.1, delta = 0.05;
  std::uint64_t shap_seed = 1;
  std::size_t jobs = 1;
  bool with_exact = false;
  double shap_val_fraction = 1.0;
  std::uint64_t shap_subsample_seed = 1;
  CommonSomaOptions shap_soma;
  shap->add_option("--model", shap_models, "source model files")->required();
  shap->add_option("--val", shap_val, "validation CSV")->required();
  shap->add_option("--test", shap_test, "test CSV")->required();
  CLI::Option* o_T = shap->add_option("--tests", tests, "number of group tests T");
  CLI::Option* o_eps = shap->add_option("--epsilon", epsilon, "accuracy parameter");
  CLI::Option* o_delta = shap->add_option("--delta", delta, "confidence parameter");
  CLI::Option* o_vseed = shap->add_option("--seed", shap_seed, "group-test seed");
  shap->add_option("--jobs", jobs, "parallel utility evaluations");
  shap->add_flag("--exact", with_exact, "also compute exact values (n <= 12)");
  shap->add_option("--out", shap_out, "report JSON path");
  shap->add_option("--csv", shap_csv, "value/weight pairing CSV path");
  CLI::Option* o_sfit = shap->add_option("--fitness", shap_fitness, "error|loss");
  CLI::Option* o_svf = shap->add_option("--val-fraction", shap_val_fraction,
                                        "validation subsample in (0,1]");
  CLI::Option* o_sssd =
      shap->add_option("--subsample-seed", shap_subsample_seed, "subsample seed");
  shap_soma.attach(shap);

  // ---- bound ----------------------------------------------------------------
  auto* bound = app.add_subcommand("bound", "group-test count for an "
                                            "(epsilon,delta)-approximation");
  std::size_t bound_n = 2;
  double bound_eps = 0.1, bound_delta = 0.05;
  bound->add_option("--n", bound_n, "number of sources")->required();
  bound->add_option("--epsilon", bound_eps, "accuracy parameter");
  bound->add_option("--delta", bound_delta, "confidence parameter");

  // ---- compare ---------------------------------------------------------------
  auto* compare = app.add_subcommand("compare", "metric table for several models");
  std::vector<std::string> cmp_models, cmp_labels;
  std::string cmp_val, cmp_test, cmp_out = "compare.csv", cmp_fitness = "error";
  compare->add_option("--model", cmp_models, "model files")->required();
  compare->add_option("--label", cmp_labels, "labels (default: file stems)");
  compare->add_option("--val", cmp_val, "validation CSV")->required();
  compare->add_option("--test", cmp_test, "test CSV")->required();
  compare->add_option("--out", cmp_out, "report CSV path");
  compare->add_option("--fitness", cmp_fitness, "error|loss");

  // ---- parse ----------------------------------------------------------------
  std::vector<const char*> cargv;
  cargv.push_back("fedmerge");
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    nlohmann::json cfg = nlohmann::json::object();
    if (!config_path.empty()) cfg = detail::load_config(config_path);

    if (app.got_subcommand(gen)) {
      detail::maybe_from_config(cfg, "data", "n_shards", o_shards, spec.n_shards);
      detail::maybe_from_config(cfg, "data", "samples_per_shard", o_samples,
                                spec.samples_per_shard);
      detail::maybe_from_config(cfg, "data", "feature_dim", o_dim, spec.feature_dim);
      detail::maybe_from_config(cfg, "data", "class_count", o_classes, spec.class_count);
      detail::maybe_from_config(cfg, "data", "skew", o_skew, spec.skew);
      detail::maybe_from_config(cfg, "data", "noise", o_noise, spec.noise);
      detail::maybe_from_config(cfg, "data", "seed", o_dseed, spec.seed);
      try {
        validate(spec);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto data = generate_shards(spec);
      fs::create_directories(gen_out);
      nlohmann::json manifest;
      manifest["format_version"] = kFormatVersion;
      manifest["spec"] = {{"n_shards", spec.n_shards},
                          {"samples_per_shard", spec.samples_per_shard},
                          {"feature_dim", spec.feature_dim},
                          {"class_count", spec.class_count},
                          {"skew", spec.skew},
                          {"noise", spec.noise},
                          {"seed", spec.seed}};
      std::vector<std::string> shard_files;
      for (std::size_t s = 0; s < data.shards.size(); ++s) {
        const std::string name = "shard_" + detail::two_digits(s) + ".csv";
        save_delimited(data.shards[s], fs::path(gen_out) / name);
        shard_files.push_back(name);
      }
      save_delimited(data.validation, fs::path(gen_out) / "validation.csv");
      save_delimited(data.test, fs::path(gen_out) / "test.csv");
      manifest["shards"] = shard_files;
      manifest["validation"] = "validation.csv";
      manifest["test"] = "test.csv";
      std::ofstream mout(fs::path(gen_out) / "manifest.json");
      mout << manifest.dump(2) << '\n';
      std::cout << "wrote " << data.shards.size() << " shards to " << gen_out << '\n';
      return 0;
    }

    if (app.got_subcommand(train)) {
      detail::maybe_from_config(cfg, "architecture", "hidden", o_hidden, hidden);
      detail::maybe_from_config(cfg, "architecture", "class_count", o_tclasses,
                                train_classes);
      detail::maybe_from_config(cfg, "train", "learning_rate", o_lr, tc.learning_rate);
      detail::maybe_from_config(cfg, "train", "epochs", o_epochs, tc.epochs);
      detail::maybe_from_config(cfg, "train", "batch_size", o_tbatch, tc.batch_size);
      detail::maybe_from_config(cfg, "train", "seed", o_tseed, tc.seed);
      detail::maybe_from_config(cfg, "train", "init_seed", o_iseed, tc.init_seed);
      const Dataset shard = detail::load_dataset_checked(
          train_shard, static_cast<int>(train_classes));
      MlpArchitecture arch;
      arch.input_dim = shard.feature_dim();
      arch.hidden = hidden;
      arch.class_count = static_cast<std::size_t>(shard.class_count);
      const ModelParams model = train_source(shard, arch, tc);
      save_model(model, train_out);
      std::cout << "trained " << arch.id() << " -> " << train_out << '\n';
      return 0;
    }

    if (app.got_subcommand(merge)) {
      detail::maybe_from_config(cfg, "merge", "fitness", o_fit, merge_fitness);
      detail::maybe_from_config(cfg, "merge", "val_fraction", o_vf, val_fraction);
      detail::maybe_from_config(cfg, "merge", "subsample_seed", o_ssd, subsample_seed);
      detail::maybe_from_config(cfg, "gma", "top_k", o_k, gc.top_k);
      detail::maybe_from_config(cfg, "gma", "p_mutation", o_p1, gc.p_mutation);
      detail::maybe_from_config(cfg, "gma", "p_crossover", o_p2, gc.p_crossover);
      detail::maybe_from_config(cfg, "gma", "p_interpolation", o_p3, gc.p_interpolation);
      detail::maybe_from_config(cfg, "gma", "max_generations", o_gens,
                                gc.max_generations);
      detail::maybe_from_config(cfg, "gma", "seed", o_gseed, gc.seed);
      soma_opts.finish(cfg);
      if (!(val_fraction > 0.0) || val_fraction > 1.0) {
        throw UsageError("--val-fraction must lie in (0, 1]");
      }

      SourceBank bank = detail::load_bank(merge_models);
      if (method == "average") {
        save_model(direct_average(bank), merge_out);
        std::cout << "average of " << bank.size() << " models -> " << merge_out << '\n';
        return 0;
      }
      if (merge_val.empty()) {
        throw UsageError("--val is required for method '" + method + "'");
      }
      Dataset valset = detail::load_dataset_checked(merge_val);
      if (val_fraction != 1.0) valset = valset.subsample(val_fraction, subsample_seed);
      const FitnessFn fitness = detail::fitness_by_name(merge_fitness);
      if (method == "gma") {
        try {
          validate(gc);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        const auto result = gma_run(bank, valset, fitness, gc);
        save_model(result.best_model, merge_out);
        if (!merge_log.empty()) write_gma_log(result.log, merge_log);
        std::cout << "gma best fitness " << format_double(result.best_fitness)
                  << " -> " << merge_out << '\n';
        return 0;
      }
      const auto result = soma_run(bank, valset, soma_opts.cfg, fitness);
      save_model(result.model, merge_out);
      if (!coeffs_out.empty()) {
        save_coefficients(result.coeffs, bank[0].architecture_id, coeffs_out);
      }
      if (!merge_log.empty()) write_soma_log(result.log, merge_log);
      std::cout << "soma best fitness "
                << format_double(result.log.back().best_val_fitness) << " -> "
                << merge_out << '\n';
      return 0;
    }

    if (app.got_subcommand(eval)) {
      detail::require_file(eval_model);
      const ModelParams model = load_model(eval_model);
      const Dataset data = detail::load_dataset_checked(eval_data);
      const FitnessFn metric = detail::fitness_by_name(eval_metric);
      const double value = metric(model, data);
      const std::string name = eval_metric == "error" ? "error_rate" : "mean_loss";
      std::cout << name << '=' << format_double(value) << '\n';
      if (!eval_out.empty()) {
        std::ofstream out(eval_out);
        out << "metric,value\n" << name << ',' << format_double(value) << '\n';
      }
      return 0;
    }

    if (app.got_subcommand(shap)) {
      detail::maybe_from_config(cfg, "valuation", "tests", o_T, tests);
      detail::maybe_from_config(cfg, "valuation", "epsilon", o_eps, epsilon);
      detail::maybe_from_config(cfg, "valuation", "delta", o_delta, delta);
      detail::maybe_from_config(cfg, "valuation", "seed", o_vseed, shap_seed);
      detail::maybe_from_config(cfg, "valuation", "fitness", o_sfit, shap_fitness);
      detail::maybe_from_config(cfg, "valuation", "val_fraction", o_svf,
                                shap_val_fraction);
      detail::maybe_from_config(cfg, "valuation", "subsample_seed", o_sssd,
                                shap_subsample_seed);
      shap_soma.finish(cfg);
      if (tests == 0) throw UsageError("--tests must be at least 1");
      if (!(shap_val_fraction > 0.0) || shap_val_fraction > 1.0) {
        throw UsageError("--val-fraction must lie in (0, 1]");
      }

      SourceBank bank = detail::load_bank(shap_models);
      if (bank.size() < 2) throw UsageError("shapley needs at least two models");
      Dataset valset = detail::load_dataset_checked(shap_val);
      if (shap_val_fraction != 1.0) {
        valset = valset.subsample(shap_val_fraction, shap_subsample_seed);
      }
      const Dataset testset = detail::load_dataset_checked(shap_test);
      const FitnessFn metric = detail::fitness_by_name(shap_fitness);
      UtilityFunction utility =
          make_model_utility(bank, valset, testset, shap_soma.cfg, metric);

      // The full-coalition run supplies both U(I) and the average theta
      // weights; seed it exactly as the utility would so the two agree.
      SomaConfig full_cfg = shap_soma.cfg;
      full_cfg.seed =
          derive_seed(shap_soma.cfg.seed, tag_hash("subset"), utility.full_mask());
      const auto full_run = soma_run(bank, valset, full_cfg, metric);
      utility.prime(utility.full_mask(), 1.0 - metric(full_run.model, testset));

      Rng rng(derive_seed(shap_seed, tag_hash("group-tests")));
      const ShapleyReport report =
          estimate_shapley(utility, tests, epsilon, delta, rng, with_exact, jobs);
      save_shapley_report(report, shap_out);

      if (!shap_csv.empty()) {
        const std::size_t L = full_run.coeffs.theta.size();
        std::ofstream out(shap_csv);
        out << "source_id,shapley_estimate,average_theta_weight\n";
        for (std::size_t i = 0; i < bank.size(); ++i) {
          double avg = 0.0;
          for (std::size_t l = 0; l < L; ++l) avg += full_run.coeffs.theta[l][i];
          avg /= static_cast<double>(L);
          out << i << ',' << format_double(report.estimates[i]) << ','
              << format_double(avg) << '\n';
        }
      }
      std::cout << "shapley report (" << tests << " tests) -> " << shap_out << '\n';
      return 0;
    }

    if (app.got_subcommand(bound)) {
      const std::uint64_t t = sample_bound(bound_n, bound_eps, bound_delta);
      std::cout << t << '\n';
      return 0;
    }

    if (app.got_subcommand(compare)) {
      if (!cmp_labels.empty() && cmp_labels.size() != cmp_models.size()) {
        throw UsageError("--label count must match --model count");
      }
      const Dataset valset = detail::load_dataset_checked(cmp_val);
      const Dataset testset = detail::load_dataset_checked(cmp_test);
      const FitnessFn metric = detail::fitness_by_name(cmp_fitness);
      std::ofstream out(cmp_out);
      if (!out) throw std::runtime_error("cannot write report: " + cmp_out);
      out << "label,val_metric,test_metric\n";
      for (std::size_t i = 0; i < cmp_models.size(); ++i) {
        detail::require_file(cmp_models[i]);
        const ModelParams model = load_model(cmp_models[i]);
        const std::string label = i < cmp_labels.size()
                                      ? cmp_labels[i]
                                      : fs::path(cmp_models[i]).stem().string();
        out << label << ',' << format_double(metric(model, valset)) << ','
            << format_double(metric(model, testset)) << '\n';
      }
      std::cout << "compared " << cmp_models.size() << " models -> " << cmp_out << '\n';
      return 0;
    }

    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cli
}  // namespace fedmerge
