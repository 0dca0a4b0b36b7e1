#pragma once

// Experiment outputs: epochs.jsonl (one record per epoch, flushed as written),
// epochs.csv (same records, flattened), summary.json, optional omega.csv.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccl/config.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/trainer.hpp"

#ifndef CCL_BUILD_ID
#define CCL_BUILD_ID "unknown"
#endif

namespace ccl {

inline const char* build_id() { return CCL_BUILD_ID; }

namespace detail {

inline void flatten(const nlohmann::ordered_json& j, const std::string& prefix,
                    std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "." + std::to_string(i), out);
  } else if (j.is_null()) {
    out.emplace_back(prefix, "");
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace detail

// Flat CSV columns of a JSON record; nested keys are joined with '.'.
inline std::vector<std::pair<std::string, std::string>> flatten_record(const nlohmann::ordered_json& j) {
  std::vector<std::pair<std::string, std::string>> out;
  detail::flatten(j, "", out);
  return out;
}

class MetricsSink {
 public:
  explicit MetricsSink(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error("sink: cannot create '" + dir_.string() + "': " + ec.message());
    jsonl_.open(dir_ / "epochs.jsonl", std::ios::trunc);
    csv_.open(dir_ / "epochs.csv", std::ios::trunc);
    if (!jsonl_ || !csv_) throw Error("sink: cannot open record files in '" + dir_.string() + "'");
  }

  const std::filesystem::path& dir() const { return dir_; }

  void write(const EpochRecord& r) {
    const auto j = to_json(r);
    jsonl_ << j.dump() << '\n';
    const auto flat = flatten_record(j);
    if (columns_.empty()) {
      for (const auto& [k, v] : flat) columns_.push_back(k);
      for (std::size_t i = 0; i < columns_.size(); ++i) csv_ << (i ? "," : "") << columns_[i];
      csv_ << '\n';
    }
    if (flat.size() != columns_.size()) throw ContractError("sink: record layout changed between epochs");
    for (std::size_t i = 0; i < flat.size(); ++i) csv_ << (i ? "," : "") << detail::csv_cell(flat[i].second);
    csv_ << '\n';
    jsonl_.flush();
    csv_.flush();
    if (!jsonl_ || !csv_) throw Error("sink: write to '" + dir_.string() + "' failed");
  }

  // Per-sample loss, ω and refurbished label of one epoch.
  void write_omega(const EpochResult& er, const LabeledDataset& ds) {
    if (!omega_.is_open()) {
      omega_.open(dir_ / "omega.csv", std::ios::trunc);
      omega_ << "epoch,model,index,loss,omega,y_hard,noisy_label,clean_label\n";
    }
    const auto train = ds.indices_of(Split::train);
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& st = er.models[m];
      if (st.omega.empty()) continue;
      for (std::size_t k = 0; k < train.size(); ++k) {
        omega_ << er.epoch << ',' << m << ',' << train[k] << ',';
        if (!st.losses.empty()) omega_ << nlohmann::json(st.losses[k]).dump();
        omega_ << ',' << nlohmann::json(st.omega[k]).dump() << ',';
        if (!st.refurbished.y_hard.empty()) omega_ << st.refurbished.y_hard[k];
        omega_ << ',' << ds.noisy_labels[train[k]] << ',' << ds.clean_labels[train[k]] << '\n';
      }
    }
    omega_.flush();
    if (!omega_) throw Error("sink: write to omega.csv failed");
  }

  void write_summary(const ExperimentConfig& cfg, std::uint64_t seed, const Summary& s) {
    nlohmann::ordered_json j;
    j["build_id"] = build_id();
    j["seed"] = seed;
    j["method"] = method_name(cfg.train.method);
    j["config"] = config_to_json(cfg);
    j["summary"] = to_json(s);
    std::ofstream out(dir_ / "summary.json", std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw Error("sink: cannot write summary.json");
  }

 private:
  std::filesystem::path dir_;
  std::ofstream jsonl_;
  std::ofstream csv_;
  std::ofstream omega_;
  std::vector<std::string> columns_;
};

// Runs one seed of an experiment with all outputs under `dir`.
template <typename T>
ExperimentResult<T> run_and_record(ExperimentConfig cfg, std::uint64_t seed, const std::filesystem::path& dir) {
  cfg.seeds = {seed};
  cfg.out_dir = dir.string();
  MetricsSink sink(dir);
  ExperimentResult<T> res =
      run_experiment<T>(cfg, seed, [&](const EpochRecord& r, const EpochResult& er, const LabeledDataset& ds) {
        sink.write(r);
        if (cfg.omega_dump) sink.write_omega(er, ds);
      });
  sink.write_summary(cfg, seed, res.summary);
  save_container(res.dataset, (dir / "data.ccl").string());
  if (cfg.checkpoint) save_checkpoint(res.pair, (dir / "checkpoint.ccl").string());
  return res;
}

}  // namespace ccl
