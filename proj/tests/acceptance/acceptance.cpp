// Acceptance run: one PASS/FAIL line per criterion, detail lines indented.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccl/ccl.hpp"

using namespace ccl;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr int kGradPoints = 50;
constexpr double kGradBudgetS = 120;
constexpr double kMiSlack = -0.02;
constexpr std::size_t kMiGridBatches = 2000;
constexpr std::size_t kMiHandBatches = 100000;
constexpr double kMiHandTol = 0.005;
constexpr double kMiBudgetS = 60;
constexpr std::size_t kNoiseSamples = 100000;
constexpr double kNoiseSigmas = 4.0;
constexpr double kNoiseBudgetS = 30;
constexpr int kGmmDatasets = 100;
constexpr double kGmmMeanTol = 0.2;
constexpr double kGmmBudgetS = 30;
constexpr double kEfficacyMargin = 0.05;
constexpr double kRecoveryFloor = 0.5;
constexpr double kEfficacyBudgetS = 15 * 60;
constexpr int kDirectionalMinSeeds = 4;
constexpr double kEndpointTol = 1e-6;
constexpr int kSeeds = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string headline;
  std::vector<std::string> details;
};

// Every line goes to stdout and to <out>/acceptance_report.txt.
std::ofstream report_file;

void say(const std::string& line) {
  std::cout << line << std::endl;
  if (report_file) report_file << line << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  GradSuiteOptions opt;
  opt.points = kGradPoints;
  const auto results = run_gradient_suite(opt);
  const double t = seconds_since(t0);
  const std::set<std::string> want{"ce_sharpen", "pg", "acl", "vm", "cclrl", "mm", "div", "total"};
  std::set<std::string> seen;
  double worst = 0;
  bool ok = true;
  for (const auto& r : results) {
    seen.insert(r.name);
    worst = std::max(worst, r.max_error);
    const bool good = r.max_error <= kGradTol && r.points == kGradPoints;
    ok = ok && good;
    o.details.push_back(r.name + " max_rel_err=" + fmt(r.max_error, 10) + " points=" + std::to_string(r.points));
  }
  for (const auto& w : want)
    if (!seen.count(w)) {
      ok = false;
      o.details.push_back("missing loss " + w);
    }
  o.pass = ok && t < kGradBudgetS;
  o.headline = "gradient suite worst=" + fmt(worst, 10) + " tol=" + fmt(kGradTol, 6) + " time=" + fmt(t, 1) + "s";
  return o;
}

Outcome mi_bound() {
  Outcome o;
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 1e9;
  std::uint64_t seed = 100;
  for (std::size_t K : {4, 8, 16, 64}) {
    std::set<std::size_t> Ns{2, 4, std::min<std::size_t>(8, K)};
    for (std::size_t N : Ns)
      for (double tau : {0.1, 0.5, 1.0}) {
        const auto r = mi_bound_check(K, N, tau, kMiGridBatches, seed++);
        worst = std::min(worst, r.slack);
        if (r.slack < kMiSlack) {
          ok = false;
          o.details.push_back("K=" + std::to_string(K) + " N=" + std::to_string(N) + " tau=" + fmt(tau, 1) +
                              " slack=" + fmt(r.slack));
        }
      }
  }
  const auto hand = mi_bound_check(4, 4, 1.0, kMiHandBatches, 7);
  const double want = std::log(1.0 + 3.0 * std::exp(-1.0));
  const bool hand_ok = std::abs(hand.mean_loss - want) <= kMiHandTol;
  const double t = seconds_since(t0);
  o.details.push_back("K=4 N=4 tau=1 mean_loss=" + fmt(hand.mean_loss, 6) + " expected=" + fmt(want, 6));
  o.pass = ok && hand_ok && t < kMiBudgetS;
  o.headline = "mi bound worst_slack=" + fmt(worst) + " hand_err=" + fmt(std::abs(hand.mean_loss - want), 6) +
               " time=" + fmt(t, 1) + "s";
  return o;
}

LabeledDataset balanced_labels(std::size_t C, std::size_t n) {
  LabeledDataset ds;
  ds.n = n;
  ds.d = 1;
  ds.classes = C;
  ds.features.assign(n, 0.0f);
  ds.split.assign(n, Split::train);
  for (std::size_t i = 0; i < n; ++i) ds.clean_labels.push_back(static_cast<std::int32_t>(i % C));
  ds.noisy_labels = ds.clean_labels;
  return ds;
}

Outcome noise_injectors() {
  Outcome o;
  const auto t0 = Clock::now();
  bool ok = true;
  double worst_ratio = 0;
  struct Case {
    NoiseKind kind;
    double tau0;
  };
  const std::vector<Case> cases{{NoiseKind::symmetric, 0.2}, {NoiseKind::symmetric, 0.5}, {NoiseKind::symmetric, 0.8},
                                {NoiseKind::pair, 0.4}};
  std::uint64_t seed = 500;
  for (std::size_t C : {4, 10})
    for (const auto& c : cases) {
      const auto T = build_transition_matrix(c.kind, c.tau0, C);
      const auto ds = inject_label_noise(balanced_labels(C, kNoiseSamples), T, seed++);
      std::vector<double> counts(C * C, 0.0), rows(C, 0.0);
      for (std::size_t i = 0; i < ds.n; ++i) {
        counts[static_cast<std::size_t>(ds.clean_labels[i]) * C + static_cast<std::size_t>(ds.noisy_labels[i])] += 1;
        rows[static_cast<std::size_t>(ds.clean_labels[i])] += 1;
      }
      bool case_ok = true;
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) {
          const double t = T.at(i, j), emp = counts[i * C + j] / rows[i];
          const double bound = kNoiseSigmas * std::sqrt(t * (1 - t) / rows[i]);
          const double dev = std::abs(emp - t);
          if (bound > 0) worst_ratio = std::max(worst_ratio, dev / bound * kNoiseSigmas);
          if (dev > bound) case_ok = false;
        }
      ok = ok && case_ok;
      o.details.push_back(std::string(c.kind == NoiseKind::pair ? "pair" : "symmetric") + " tau0=" + fmt(c.tau0, 1) +
                          " C=" + std::to_string(C) + (case_ok ? " ok" : " OUT OF BOUND"));
    }
  const double t = seconds_since(t0);
  o.pass = ok && t < kNoiseBudgetS;
  o.headline = "noise injectors worst_deviation=" + fmt(worst_ratio, 2) + "sigma time=" + fmt(t, 1) + "s";
  return o;
}

Outcome gmm() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::uniform_real_distribution<double> mu(-3, 3), sd(0.2, 2.0), frac(0.1, 0.9);
  int monotone = 0;
  for (int t = 0; t < kGmmDatasets; ++t) {
    std::normal_distribution<double> a(mu(rng), sd(rng)), b(mu(rng), sd(rng));
    std::bernoulli_distribution pick(frac(rng));
    std::vector<double> x(300);
    for (auto& v : x) v = pick(rng) ? b(rng) : a(rng);
    const auto g = gmm_fit_1d(x, 200, 1e-10);
    bool up = true;
    for (std::size_t k = 1; k < g.log_likelihood.size(); ++k)
      up = up && g.log_likelihood[k] >= g.log_likelihood[k - 1] - 1e-12;
    monotone += up;
  }
  std::normal_distribution<double> a(0.0, 0.5), b(5.0, 0.5);
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) x.push_back(a(rng));
  for (int i = 0; i < 1000; ++i) x.push_back(b(rng));
  const auto g = gmm_fit_1d(x);
  const double err = std::max(std::abs(g.means[0] - 0.0), std::abs(g.means[1] - 5.0));
  const double t = seconds_since(t0);
  o.details.push_back("recovered means " + fmt(g.means[0]) + ", " + fmt(g.means[1]));
  o.pass = monotone == kGmmDatasets && err <= kGmmMeanTol && t < kGmmBudgetS;
  o.headline = "gmm monotone=" + std::to_string(monotone) + "/" + std::to_string(kGmmDatasets) +
               " mean_err=" + fmt(err) + " time=" + fmt(t, 1) + "s";
  return o;
}

// ---------------------------------------------------------------------------
// Desk-scale runs shared by criteria 5 to 8.

struct RunStats {
  double final_accuracy = 0;
  double recovery = 0;
  double variance_entropy = 0;
  double m_embed = 0;
  double m_logit = 0;
  double seconds = 0;
  fs::path dir;
};

ExperimentConfig desk_config(Method method, double tau0) {
  ExperimentConfig cfg;
  cfg.data.classes = 4;
  cfg.data.dim = 20;
  cfg.data.n_per_class = 1250;
  cfg.data.test_fraction = 0.2;
  cfg.noise.kind = "symmetric";
  cfg.noise.tau0 = tau0;
  cfg.train.epochs = 60;
  cfg.train.warmup = 10;
  cfg.train.method = method;
  return cfg;
}

RunStats desk_run(Method method, double tau0, std::uint64_t seed, const fs::path& root) {
  const auto dir = root / (std::string(method_name(method)) + "-tau" + fmt(tau0, 1) + "-seed" + std::to_string(seed));
  const auto t0 = Clock::now();
  const auto res = run_and_record<float>(desk_config(method, tau0), seed, dir);
  RunStats s;
  s.seconds = seconds_since(t0);
  s.dir = dir;
  s.final_accuracy = res.summary.final_accuracy.value_or(0);
  const auto& last = res.records.back();
  double rec = 0;
  int nrec = 0;
  for (const auto& r : last.label_recovery)
    if (r) rec += *r, ++nrec;
  s.recovery = nrec ? rec / nrec : 0;
  s.variance_entropy = last.variance_entropy.value_or(0);
  s.m_embed = last.m_embed.value_or(0);
  s.m_logit = last.m_logit.value_or(0);
  say("  run " + dir.filename().string() + " acc=" + fmt(s.final_accuracy) + " rec=" + fmt(s.recovery) +
      " H=" + fmt(s.variance_entropy) + " M_embed=" + fmt(s.m_embed) + " M_logit=" + fmt(s.m_logit) + " " +
      fmt(s.seconds, 1) + "s");
  return s;
}

using RunTable = std::map<std::pair<Method, double>, std::vector<RunStats>>;

Outcome efficacy(const RunTable& runs) {
  Outcome o;
  const auto& ccl = runs.at({Method::ccl, 0.4});
  const auto& ce = runs.at({Method::ce, 0.4});
  double mean_ccl = 0, mean_ce = 0, secs = 0, min_rec = 1;
  int positive = 0;
  for (int s = 0; s < kSeeds; ++s) {
    mean_ccl += ccl[s].final_accuracy / kSeeds;
    mean_ce += ce[s].final_accuracy / kSeeds;
    const double diff = ccl[s].final_accuracy - ce[s].final_accuracy;
    positive += diff > 0;
    min_rec = std::min(min_rec, ccl[s].recovery);
    secs += ccl[s].seconds + ce[s].seconds;
    o.details.push_back("seed " + std::to_string(s + 1) + " ccl=" + fmt(ccl[s].final_accuracy) +
                        " ce=" + fmt(ce[s].final_accuracy) + " diff=" + fmt(diff) +
                        " recovery=" + fmt(ccl[s].recovery));
  }
  o.pass = mean_ccl - mean_ce >= kEfficacyMargin && positive == kSeeds && min_rec >= kRecoveryFloor &&
           secs < kEfficacyBudgetS;
  o.headline = "efficacy ccl=" + fmt(mean_ccl) + " ce=" + fmt(mean_ce) + " margin=" + fmt(mean_ccl - mean_ce) +
               " positive=" + std::to_string(positive) + "/" + std::to_string(kSeeds) +
               " min_recovery=" + fmt(min_rec) + " time=" + fmt(secs, 1) + "s";
  return o;
}

Outcome directional(const RunTable& runs, const std::string& what,
                    const std::function<bool(const RunStats&, const RunStats&)>& holds) {
  Outcome o;
  o.pass = true;
  std::string counts;
  for (double tau0 : {0.4, 0.6}) {
    const auto& ccl = runs.at({Method::ccl, tau0});
    const auto& rolr = runs.at({Method::rolr, tau0});
    int wins = 0;
    for (int s = 0; s < kSeeds; ++s) {
      const bool w = holds(ccl[s], rolr[s]);
      wins += w;
      o.details.push_back("tau0=" + fmt(tau0, 1) + " seed " + std::to_string(s + 1) + (w ? " holds" : " fails") +
                          " ccl(H=" + fmt(ccl[s].variance_entropy) + " M_embed=" + fmt(ccl[s].m_embed) +
                          " M_logit=" + fmt(ccl[s].m_logit) + ") rolr(H=" + fmt(rolr[s].variance_entropy) +
                          " M_embed=" + fmt(rolr[s].m_embed) + " M_logit=" + fmt(rolr[s].m_logit) + ")");
    }
    o.pass = o.pass && wins >= kDirectionalMinSeeds;
    counts += " tau0=" + fmt(tau0, 1) + ":" + std::to_string(wins) + "/" + std::to_string(kSeeds);
  }
  o.headline = what + counts + " need>=" + std::to_string(kDirectionalMinSeeds);
  return o;
}

std::string masked_jsonl(const fs::path& p) {
  static const std::regex wall("\"wall_time_s\":[-+0-9.eE]+");
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return std::regex_replace(buf.str(), wall, "\"wall_time_s\":0");
}

Outcome determinism(const RunStats& first, const fs::path& root) {
  Outcome o;
  const auto again = root / "determinism-rerun";
  run_and_record<float>(desk_config(Method::ccl, 0.4), 1, again);
  const auto a = masked_jsonl(first.dir / "epochs.jsonl");
  const auto b = masked_jsonl(again / "epochs.jsonl");
  o.pass = !a.empty() && a == b;
  o.headline = "determinism epochs.jsonl " + std::string(a == b ? "identical" : "differs") + " (" +
               std::to_string(a.size()) + " bytes)";
  return o;
}

Outcome endpoints() {
  Outcome o;
  o.pass = true;
  double worst = 0;
  for (double w : {1.0, 0.0}) {
    auto cfg = desk_config(Method::ccl, 0.4);
    cfg.train.omega_override = w;
    const auto seeds = SeedStreams::from_master(1);
    const auto ds = build_dataset(cfg, seeds);
    const TrainView view(ds);
    const Trainer<double> tr(view, cfg.train, seeds);
    auto pair = init_pair<double>(seeds.init0, seeds.init1, cfg.architecture(ds.d, ds.classes), cfg.train.adam);
    tr.warmup_epoch(pair, 0);
    const auto r = tr.train_epoch_ccl(pair, 1);
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& b = r.models[m].loss;
      double err = r.models[m].reconcile_err;
      if (w == 1.0) {
        err = std::max({err, std::abs(b.total - (b.ce + b.div)), std::abs(b.cvl), std::abs(b.cml)});
      } else {
        err = std::max({err, std::abs(b.total - (0.5 * (b.cvl + b.cml) + b.div)), std::abs(b.ce)});
      }
      worst = std::max(worst, err);
      o.pass = o.pass && err <= kEndpointTol;
      o.details.push_back("omega=" + fmt(w, 0) + " model" + std::to_string(m) + " total=" + fmt(b.total, 8) +
                          " ce=" + fmt(b.ce, 8) + " cvl=" + fmt(b.cvl, 8) + " cml=" + fmt(b.cml, 8) +
                          " div=" + fmt(b.div, 8));
    }
  }
  o.headline = "omega endpoints worst_err=" + fmt(worst, 12) + " tol=" + fmt(kEndpointTol, 6);
  return o;
}

void report(int id, const Outcome& o, int& passed) {
  passed += o.pass;
  say("criterion " + std::to_string(id) + ": " + (o.pass ? "PASS" : "FAIL") + " " + o.headline);
  for (const auto& d : o.details) say("  " + d);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for the desk-scale runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  try {
    const fs::path root(out);
    fs::create_directories(root);
    report_file.open(root / "acceptance_report.txt");
    int passed = 0, ran = 0;
    auto run = [&](int id, const std::function<Outcome()>& f) {
      if (!want(id)) return;
      ++ran;
      report(id, f(), passed);
    };
    run(1, gradients);
    run(2, mi_bound);
    run(3, noise_injectors);
    run(4, gmm);

    if (want(5) || want(6) || want(7) || want(8)) {
      RunTable runs;
      const bool need_ce = want(5);
      const bool need_rolr = want(6) || want(7);
      for (int s = 1; s <= kSeeds; ++s) {
        for (double tau0 : {0.4, 0.6}) {
          if (tau0 == 0.6 && !need_rolr) continue;
          runs[{Method::ccl, tau0}].push_back(desk_run(Method::ccl, tau0, s, root));
          if (need_rolr) runs[{Method::rolr, tau0}].push_back(desk_run(Method::rolr, tau0, s, root));
        }
        if (need_ce) runs[{Method::ce, 0.4}].push_back(desk_run(Method::ce, 0.4, s, root));
      }
      run(5, [&] { return efficacy(runs); });
      run(6, [&] {
        return directional(runs, "variance entropy ccl>=rolr",
                           [](const RunStats& c, const RunStats& r) { return c.variance_entropy >= r.variance_entropy; });
      });
      run(7, [&] {
        return directional(runs, "M_embed ccl>=rolr and M_logit ccl<=rolr", [](const RunStats& c, const RunStats& r) {
          return c.m_embed >= r.m_embed && c.m_logit <= r.m_logit;
        });
      });
      run(8, [&] { return determinism(runs.at({Method::ccl, 0.4}).front(), root); });
    }
    run(9, endpoints);

    say("acceptance: " + std::to_string(passed) + "/" + std::to_string(ran) + " criteria passed");
    return passed == ran ? 0 : 1;
  } catch (const std::exception& e) {
    say(std::string("acceptance: aborted: ") + e.what());
    return 2;
  }
}
