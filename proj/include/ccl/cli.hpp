#pragma once

// Command-line front end. Exit codes: 0 success, 1 invalid input or usage,
// 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ccl/config.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/gradcheck.hpp"
#include "ccl/metrics.hpp"
#include "ccl/model.hpp"
#include "ccl/sink.hpp"
#include "ccl/trainer.hpp"

namespace ccl {

enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitFailure = 2 };

// Builds the effective configuration: defaults, then the file, then
// CCL_LAB_OUT, then `--set` pairs and named flags, in that order.
inline ExperimentConfig resolve_config(const std::string& config_path,
                                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig cfg;
  if (!config_path.empty()) apply_config_values(cfg, read_config_file(config_path));
  if (const char* env = std::getenv("CCL_LAB_OUT"); env && *env) cfg.out_dir = env;
  apply_config_values(cfg, overrides);
  validate(cfg);
  return cfg;
}

namespace detail {

inline std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + s + "'");
  return {trim(s.substr(0, eq)), s.substr(eq + 1)};
}

template <typename U>
std::vector<U> parse_list(const std::string& field, const std::string& s) {
  std::vector<U> out;
  for (const auto& item : split_list(s)) {
    if constexpr (std::is_floating_point_v<U>)
      out.push_back(static_cast<U>(parse_double(field, item)));
    else
      out.push_back(static_cast<U>(parse_count(field, item)));
  }
  if (out.empty()) throw ConfigError(field + ": empty list");
  return out;
}

inline nlohmann::ordered_json accuracy_json(const ModelPair<float>& pair, const LabeledDataset& ds) {
  return {{"model0", test_accuracy(pair.models[0], ds)},
          {"model1", test_accuracy(pair.models[1], ds)},
          {"ensemble", test_accuracy(pair.models[0], pair.models[1], ds)}};
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Collaborative cross learning lab"};
  app.name("ccl_lab");
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate Gaussian blobs into a container file");
  std::string gen_out;
  std::size_t gen_classes = 4, gen_npc = 1250, gen_dim = 20;
  double gen_sep = 3.0, gen_spread = 1.0, gen_test = 0.2;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output container")->required();
  gen->add_option("--classes", gen_classes, "Number of classes");
  gen->add_option("--n-per-class", gen_npc, "Samples per class");
  gen->add_option("--dim", gen_dim, "Feature dimension");
  gen->add_option("--separation", gen_sep, "Distance between class means");
  gen->add_option("--spread", gen_spread, "Per-coordinate standard deviation");
  gen->add_option("--test-fraction", gen_test, "Share of every class tagged as test");
  gen->add_option("--seed", gen_seed, "Generator seed");

  // inject-noise
  auto* noise = app.add_subcommand("inject-noise", "Corrupt the train labels of a container");
  std::string noise_in, noise_out, noise_kind = "symmetric", noise_map;
  double noise_tau0 = 0.4, noise_rate_sd = 0.1;
  std::uint64_t noise_seed = 1;
  noise->add_option("--in", noise_in, "Input container")->required();
  noise->add_option("--out", noise_out, "Output container (default: rewrite the input)");
  noise->add_option("--kind", noise_kind, "symmetric | pair | instance")
      ->check(CLI::IsMember({"symmetric", "pair", "instance"}));
  noise->add_option("--tau0", noise_tau0, "Noise rate");
  noise->add_option("--pair-map", noise_map, "Comma-separated target class per class (pair noise)");
  noise->add_option("--rate-sd", noise_rate_sd, "Flip-rate spread (instance noise)");
  noise->add_option("--seed", noise_seed, "Noise seed");

  // train
  auto* train = app.add_subcommand("train", "Run an experiment");
  std::string train_config, train_tau0, train_method, train_seeds, train_epochs, train_warmup, train_out,
      train_precision;
  std::vector<std::string> train_set;
  bool train_omega_dump = false;
  train->add_option("--config", train_config, "INI config, or a summary.json to rerun");
  train->add_option("--set", train_set, "Override section.key=value (repeatable)");
  train->add_option("--tau0", train_tau0, "noise.tau0");
  train->add_option("--method", train_method, "train.method");
  train->add_option("--seed", train_seeds, "experiment.seeds");
  train->add_option("--epochs", train_epochs, "train.epochs");
  train->add_option("--warmup", train_warmup, "train.warmup");
  train->add_option("--out", train_out, "experiment.out_dir");
  train->add_option("--precision", train_precision, "experiment.precision");
  train->add_flag("--omega-dump", train_omega_dump, "Write per-sample confidence to omega.csv");

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a container's test split");
  std::string eval_ckpt, eval_data;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset container")->required();

  // metrics
  auto* met = app.add_subcommand("metrics", "Semantic-contamination diagnostics of a checkpoint");
  std::string met_ckpt, met_data, met_tax, met_names, met_var = "probs", met_dump;
  std::size_t met_pairs = 2000;
  std::uint64_t met_seed = 1;
  met->add_option("--checkpoint", met_ckpt, "Checkpoint file")->required();
  met->add_option("--data", met_data, "Dataset container")->required();
  met->add_option("--pairs", met_pairs, "Sample pairs for the embedding metric");
  met->add_option("--seed", met_seed, "Pair sampling seed");
  met->add_option("--taxonomy", met_tax, "Taxonomy JSON for the LCA distance");
  met->add_option("--class-names", met_names, "Comma-separated class names in index order");
  met->add_option("--variance-of", met_var, "probs | logits")->check(CLI::IsMember({"probs", "logits"}));
  met->add_option("--dump", met_dump, "Write test embeddings and logits to this container");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  int gc_points = 50;
  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-4;
  gc->add_option("--points", gc_points, "Random points per loss");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--tol", gc_tol, "Maximum accepted relative error");

  // mi-check
  auto* mi = app.add_subcommand("mi-check", "Mutual-information bound on the discrete toy");
  std::string mi_k = "4,8,16,64", mi_n = "2,4,8", mi_tau = "0.1,0.5,1";
  std::size_t mi_batches = 2000;
  std::uint64_t mi_seed = 1;
  mi->add_option("--K", mi_k, "Latent alphabet sizes");
  mi->add_option("--N", mi_n, "Batch sizes (values above K are capped at K)");
  mi->add_option("--tau", mi_tau, "Temperatures");
  mi->add_option("--batches", mi_batches, "Batches per grid cell");
  mi->add_option("--seed", mi_seed, "Seed");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  try {
    if (gen->parsed()) {
      const auto ds = gen_blobs(gen_classes, gen_npc, gen_dim, gen_sep, gen_spread, gen_seed, gen_test);
      save_container(ds, gen_out);
      out << nlohmann::ordered_json{{"written", gen_out}, {"n", ds.n}, {"d", ds.d}, {"C", ds.classes}}.dump() << '\n';
    } else if (noise->parsed()) {
      const auto ds = load_container(noise_in);
      LabeledDataset noisy;
      if (noise_kind == "instance") {
        noisy = inject_instance_noise(ds, noise_tau0, noise_seed, noise_rate_sd);
      } else {
        std::optional<std::vector<std::size_t>> map;
        if (!noise_map.empty()) map = detail::parse_list<std::size_t>("--pair-map", noise_map);
        const auto T = build_transition_matrix(noise_kind == "pair" ? NoiseKind::pair : NoiseKind::symmetric,
                                               noise_tau0, ds.classes, map);
        noisy = inject_label_noise(ds, T, noise_seed);
      }
      const auto dst = noise_out.empty() ? noise_in : noise_out;
      save_container(noisy, dst);
      std::size_t flipped = 0;
      for (std::size_t i = 0; i < noisy.n; ++i) flipped += noisy.noisy_labels[i] != noisy.clean_labels[i];
      out << nlohmann::ordered_json{{"written", dst}, {"noise", noisy.noise_description}, {"corrupted", flipped}}.dump()
          << '\n';
    } else if (train->parsed()) {
      std::vector<std::pair<std::string, std::string>> kv;
      for (const auto& s : train_set) kv.push_back(detail::split_assignment(s));
      auto flag = [&kv](const std::string& v, const char* key) {
        if (!v.empty()) kv.emplace_back(key, v);
      };
      flag(train_tau0, "noise.tau0");
      flag(train_method, "train.method");
      flag(train_seeds, "experiment.seeds");
      flag(train_epochs, "train.epochs");
      flag(train_warmup, "train.warmup");
      flag(train_out, "experiment.out_dir");
      flag(train_precision, "experiment.precision");
      if (train_omega_dump) kv.emplace_back("experiment.omega_dump", "true");
      const auto cfg = resolve_config(train_config, kv);
      for (auto seed : cfg.seeds) {
        const std::filesystem::path dir =
            cfg.seeds.size() == 1 ? std::filesystem::path(cfg.out_dir)
                                  : std::filesystem::path(cfg.out_dir) / ("seed-" + std::to_string(seed));
        const auto summary = cfg.precision == "double" ? run_and_record<double>(cfg, seed, dir).summary
                                                       : run_and_record<float>(cfg, seed, dir).summary;
        out << nlohmann::ordered_json{{"seed", seed},
                                      {"method", method_name(cfg.train.method)},
                                      {"final_accuracy", detail::opt(summary.final_accuracy)},
                                      {"out_dir", dir.string()}}
                   .dump()
            << '\n';
      }
    } else if (eval->parsed()) {
      const auto pair = load_checkpoint<float>(eval_ckpt);
      const auto ds = load_container(eval_data);
      out << detail::accuracy_json(pair, ds).dump() << '\n';
    } else if (met->parsed()) {
      const auto pair = load_checkpoint<float>(met_ckpt);
      const auto ds = load_container(met_data);
      const auto test = split_data(ds, Split::test);
      if (test.size() == 0) throw ConfigError("metrics: the test split is empty");
      const auto x = as_matrix<float>(test.features, test.d);
      const auto o0 = infer(pair.models[0], x), o1 = infer(pair.models[1], x);
      nlohmann::ordered_json j;
      j["accuracy"] = detail::accuracy_json(pair, ds);
      j["m_embed"] = m_embed(std::span<const float>(test.features), test.d, pair.models[0], pair.models[1],
                             met_pairs, met_seed)
                         .value;
      j["m_logit"] = m_logit(o0.logits, o1.logits);
      const bool lg = met_var == "logits";
      j["variance_entropy"] = 0.5 * (class_variance_entropy(lg ? o0.logits : o0.probs) +
                                     class_variance_entropy(lg ? o1.logits : o1.probs));
      if (!met_tax.empty()) {
        const auto tax = Taxonomy::load(met_tax);
        auto names = met_names.empty() ? tax.classes() : detail::split_list(met_names);
        if (names.empty())
          for (std::size_t c = 0; c < ds.classes; ++c) names.push_back(std::to_string(c));
        const auto [t1, t2] = top2_rows(scalar_mul(add(o0.probs, o1.probs), 0.5f));
        j["lca"] = lca_distance(tax, names, t1, t2);
      }
      if (!met_dump.empty()) {
        Container c;
        c.n = test.size();
        c.d = test.d;
        c.classes = ds.classes;
        c.extra["kind"] = "dump";
        auto put = [&c](const char* name, const Tensor<float>& t) {
          c.arrays.push_back(ContainerArray::of(name, DType::f32, t.shape(), t.values()));
        };
        put("embeddings0", o0.embeddings);
        put("embeddings1", o1.embeddings);
        put("logits0", o0.logits);
        put("logits1", o1.logits);
        std::vector<std::int32_t> labels(test.labels.begin(), test.labels.end());
        c.arrays.push_back(ContainerArray::of("labels", DType::i32, {labels.size()}, labels));
        write_container(met_dump, c);
        j["dump"] = met_dump;
      }
      out << j.dump() << '\n';
    } else if (gc->parsed()) {
      if (gc_points < 1) throw ConfigError("--points must be positive");
      GradSuiteOptions o;
      o.points = gc_points;
      o.seed = gc_seed;
      bool ok = true;
      out << std::left << std::setw(12) << "loss" << std::setw(8) << "points" << "max_rel_error\n";
      for (const auto& r : run_gradient_suite(o)) {
        const bool pass = r.max_error <= gc_tol;
        ok = ok && pass;
        out << std::left << std::setw(12) << r.name << std::setw(8) << r.points << std::scientific
            << std::setprecision(3) << r.max_error << std::defaultfloat << (pass ? "" : "  FAIL") << '\n';
      }
      return ok ? kExitOk : kExitFailure;
    } else if (mi->parsed()) {
      const auto Ks = detail::parse_list<std::size_t>("--K", mi_k);
      const auto Ns = detail::parse_list<std::size_t>("--N", mi_n);
      const auto taus = detail::parse_list<double>("--tau", mi_tau);
      bool ok = true;
      out << "K,N,tau,i_plugin,mean_loss,log_n_minus_loss,slack,holds\n";
      for (auto K : Ks) {
        std::set<std::size_t> ns;
        for (auto n : Ns) ns.insert(std::min(n, K));
        for (auto N : ns)
          for (auto tau : taus) {
            const auto r = mi_bound_check(K, N, tau, mi_batches, mi_seed);
            ok = ok && r.holds;
            out << K << ',' << N << ',' << tau << ',' << std::fixed << std::setprecision(6) << r.i_plugin << ','
                << r.mean_loss << ',' << r.log_n_minus_loss << ',' << r.slack << std::defaultfloat << ','
                << (r.holds ? "yes" : "no") << '\n';
          }
      }
      return ok ? kExitOk : kExitFailure;
    }
  } catch (const ConfigError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const FormatError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace ccl
