// Copyright 2026 The InvSR-Desk Authors. All Rights Reserved.
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

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invsr/checkpoint.hpp"
#include "invsr/config.hpp"
#include "invsr/data.hpp"
#include "invsr/degradation.hpp"
#include "invsr/image_io.hpp"
#include "invsr/metrics.hpp"
#include "invsr/parallel.hpp"
#include "invsr/sampler.hpp"
#include "invsr/training.hpp"

// Stage drivers shared by the command-line tool and the end-to-end tests.
namespace invsr::pipeline {

namespace fs = std::filesystem;

inline fs::path manifest_path(const RunConfig& c) { return fs::path(c.io.data_dir) / "manifest.json"; }

/// Writes the effective configuration next to a stage's outputs.
inline void echo_config(const RunConfig& c, const fs::path& dir) {
  nlohmann::json j = to_json(c);
  j["digest"] = config_digest(c);
  write_json(j, dir / "config.json");
}

inline DatasetManifest gen_data(const RunConfig& c, bool write_images, int jobs = 1) {
  const auto m = make_dataset(c.data.count, c.data.size, c.data.split_fraction, c.seed);
  save_manifest(m, manifest_path(c));
  echo_config(c, c.io.data_dir);
  if (write_images) {
    parallel_for(m.items.size(), jobs, [&](std::size_t i) {
      save_image(load_item(m, m.items[i]), fs::path(c.io.data_dir) / "hr" / (m.items[i].id + ".ppm"));
    });
  }
  return m;
}

inline std::vector<Tensor<float>> load_split(const DatasetManifest& m, Split split, int jobs = 1) {
  const auto items = m.split_items(split);
  std::vector<Tensor<float>> out(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) { out[i] = load_item(m, *items[i]); });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json spec_json(const RunConfig& c, const std::string& section) { return to_json(c).at(section); }

inline void check_meta(const Checkpoint& ck, const RunConfig& c, const std::string& kind, const std::vector<std::string>& sections,
                       const std::string& path) {
  if (ck.meta.value("kind", "") != kind) throw CheckpointError("'" + path + "' is not a " + kind + " checkpoint");
  if (ck.meta.value("T", 0) != c.schedule.total_steps) {
    throw ConfigError("schedule.T: config has " + std::to_string(c.schedule.total_steps) + " but '" + path + "' was trained with " +
                      ck.meta.value("T", nlohmann::json(0)).dump());
  }
  for (const auto& s : sections) {
    if (ck.meta.at("specs").value(s, nlohmann::json()) != spec_json(c, s)) {
      throw ConfigError("config section '" + s + "' does not match the architecture stored in '" + path + "'");
    }
  }
}

inline nlohmann::json make_meta(const RunConfig& c, const std::string& kind, int iterations, const std::vector<std::string>& sections) {
  nlohmann::json specs;
  for (const auto& s : sections) specs[s] = spec_json(c, s);
  return {{"kind", kind}, {"iteration", iterations}, {"seed", c.seed}, {"config_digest", config_digest(c)},
          {"T", c.schedule.total_steps}, {"specs", specs}};
}

inline nn::ParamStore<float> load_denoiser(const RunConfig& c, const fs::path& path) {
  const auto ck = load_checkpoint(path);
  check_meta(ck, c, "denoiser", {"denoiser"}, path.string());
  return ck.extract<float>("denoiser/");
}

struct InverterWeights {
  nn::ParamStore<float> predictor;
  nn::ParamStore<float> discriminator;
};

inline InverterWeights load_inverter(const RunConfig& c, const fs::path& path) {
  const auto ck = load_checkpoint(path);
  check_meta(ck, c, "inverter", {"predictor", "discriminator"}, path.string());
  return {ck.extract<float>("predictor/"), ck.extract<float>("discriminator/")};
}

// ---------------------------------------------------------------------------
// Training stages

namespace detail {

inline TrainLoopConfig loop_config(const RunConfig& c, int iterations, int jobs) {
  TrainLoopConfig l;
  l.opt = c.training.opt;
  l.opt.iterations = iterations;
  l.seed = c.seed;
  l.crop = c.training.crop;
  l.gan_warmup = c.training.gan_warmup;
  l.jobs = jobs;
  return l;
}

class CsvLog {
 public:
  explicit CsvLog(const fs::path& path) : out_(path) {
    if (!out_) throw IoError("cannot write '" + path.string() + "'");
    out_ << train_log_header() << '\n';
  }
  void operator()(const TrainLogRow& r) { out_ << to_csv(r) << '\n'; }

 private:
  std::ofstream out_;
};

}  // namespace detail

using Progress = std::function<void(const TrainLogRow&)>;

inline std::vector<TrainLogRow> train_denoiser_stage(const RunConfig& c, int jobs = 1, const Progress& progress = {}) {
  const auto m = load_manifest(manifest_path(c));
  const auto images = load_split(m, Split::train, jobs);
  const auto s = make_schedule(c);
  auto den = nn::init_params<float>(c.denoiser, derive_seed(c.seed, "denoiser-init"));
  const fs::path dir = fs::path(c.io.denoiser_ckpt).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  echo_config(c, c.io.run_dir);
  detail::CsvLog csv(fs::path(c.io.run_dir) / "denoiser_log.csv");
  const auto log = train_denoiser(den, c.denoiser, s, images, detail::loop_config(c, c.training.denoiser_iterations, jobs),
                                  [&](const TrainLogRow& r) {
                                    csv(r);
                                    if (progress) progress(r);
                                  });
  Checkpoint ck;
  ck.add("denoiser/", den);
  ck.meta = make_meta(c, "denoiser", c.training.denoiser_iterations, {"denoiser"});
  save_checkpoint(c.io.denoiser_ckpt, ck);
  return log;
}

inline std::vector<TrainLogRow> train_inverter_stage(const RunConfig& c, int jobs = 1, const Progress& progress = {}) {
  const auto m = load_manifest(manifest_path(c));
  const auto images = load_split(m, Split::train, jobs);
  const auto s = make_schedule(c);
  const auto plan = make_plan(c, s);
  const auto den = load_denoiser(c, c.io.denoiser_ckpt);
  auto pred = nn::init_params<float>(c.predictor, derive_seed(c.seed, "predictor-init"));
  auto disc = nn::init_params<float>(c.discriminator, derive_seed(c.seed, "discriminator-init"));
  InverterModels models{pred, den, disc, c.predictor, c.denoiser, c.discriminator};
  echo_config(c, c.io.run_dir);
  detail::CsvLog csv(fs::path(c.io.run_dir) / "inverter_log.csv");
  const auto log = train_inverter(models, s, plan, images, c.degradation, c.training.weights,
                                  detail::loop_config(c, c.training.inverter_iterations, jobs), [&](const TrainLogRow& r) {
                                    csv(r);
                                    if (progress) progress(r);
                                  });
  Checkpoint ck;
  ck.add("predictor/", pred);
  ck.add("discriminator/", disc);
  ck.meta = make_meta(c, "inverter", c.training.inverter_iterations, {"predictor", "discriminator"});
  save_checkpoint(c.io.inverter_ckpt, ck);
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Degraded held-out pair; the degradation seed depends only on (seed, id).
inline ImagePair eval_pair(const RunConfig& c, const DatasetManifest& m, const ManifestItem& it) {
  return degrade(load_item(m, it), c.degradation, derive_seed(derive_seed(c.seed, "eval-degrade"), it.id));
}

struct EvalCell {
  int start = 0;
  int steps = 0;
  std::vector<int> timesteps;
  MetricReport report;
};

struct EvalResult {
  MetricReport bicubic;
  std::vector<EvalCell> cells;
};

struct EvalOptions {
  std::vector<int> starts;               // empty: plan minus its smallest step
  std::vector<int> steps{1, 3, 5};       // unreachable counts are skipped
  double eta = 1.0;
  std::size_t max_items = 0;             // 0: all held-out items
  std::string save_images_dir;           // when set, writes outputs of every cell
  int jobs = 1;
};

inline EvalResult evaluate(const RunConfig& c, const DatasetManifest& m, const EvalOptions& opt) {
  const auto s = make_schedule(c);
  const auto plan = make_plan(c, s);
  auto val = m.split_items(Split::val);
  if (opt.max_items > 0 && val.size() > opt.max_items) val.resize(opt.max_items);

  std::vector<ImagePair> pairs(val.size());
  parallel_for(val.size(), opt.jobs, [&](std::size_t i) { pairs[i] = eval_pair(c, m, *val[i]); });

  EvalResult r;
  r.bicubic.seed = c.seed;
  for (std::size_t i = 0; i < val.size(); ++i) {
    r.bicubic.items.push_back({val[i]->id, psnr_y(pairs[i].lr_up, pairs[i].hr), ssim_y(pairs[i].lr_up, pairs[i].hr)});
  }
  if (val.empty()) return r;

  const auto den = load_denoiser(c, c.io.denoiser_ckpt);
  const auto inv = load_inverter(c, c.io.inverter_ckpt);
  const auto predictor = network_predictor(inv.predictor, c.predictor);
  const auto denoiser = network_denoiser(den, c.denoiser);

  std::vector<int> starts = opt.starts;
  if (starts.empty())
    for (int k : plan.kappas)
      if (k != plan.smallest()) starts.push_back(k);
  std::vector<BatchItem> items;
  for (std::size_t i = 0; i < val.size(); ++i) items.push_back({val[i]->id, [&pairs, i] { return pairs[i].lr_up; }});

  for (int start : starts) {
    const auto reach = int(sub_plan(plan, start).size());
    for (int k : opt.steps) {
      if (k < 1 || k > reach) continue;
      InferenceRequest<float> req;
      req.start = start;
      req.steps = k;
      req.sampler = {opt.eta, c.infer.sampler.final_step_noise};
      req.seed = c.seed;
      EvalCell cell{start, k, select_steps(plan, start, k), {}};
      cell.report.start = start;
      cell.report.steps = k;
      cell.report.seed = c.seed;
      const auto outs = batch_infer(items, req, predictor, denoiser, s, plan, opt.jobs);
      for (std::size_t i = 0; i < outs.size(); ++i) {
        if (!outs[i].result) throw NumericError("evaluation of '" + outs[i].id + "' failed: " + outs[i].error);
        const auto& x = outs[i].result->x0;
        cell.report.items.push_back({outs[i].id, psnr_y(x, pairs[i].hr), ssim_y(x, pairs[i].hr)});
        if (!opt.save_images_dir.empty()) {
          save_image(x, fs::path(opt.save_images_dir) /
                            (outs[i].id + "_s" + std::to_string(start) + "_k" + std::to_string(k) + ".ppm"));
        }
      }
      r.cells.push_back(std::move(cell));
    }
  }
  return r;
}

inline std::string timesteps_label(const std::vector<int>& ts) {
  std::string s = "{";
  for (std::size_t i = 0; i < ts.size(); ++i) s += (i ? "," : "") + std::to_string(ts[i]);
  return s + "}";
}

inline void write_report_csv(const MetricReport& r, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(10) << "id,psnr_y,ssim_y\n";
  for (const auto& it : r.items) out << it.id << ',' << it.psnr_y << ',' << it.ssim_y << '\n';
  out << "mean," << r.psnr().mean << ',' << r.ssim().mean << '\n';
  out << "std," << r.psnr().std << ',' << r.ssim().std << '\n';
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : r.items) {
    items.push_back({{"id", it.id}, {"psnr_y", std::isfinite(it.psnr_y) ? nlohmann::json(it.psnr_y) : nlohmann::json("inf")},
                     {"ssim_y", it.ssim_y}});
  }
  return {{"start", r.start},
          {"steps", r.steps},
          {"seed", r.seed},
          {"count", r.items.size()},
          {"psnr_y", {{"mean", r.psnr().mean}, {"std", r.psnr().std}}},
          {"ssim_y", {{"mean", r.ssim().mean}, {"std", r.ssim().std}}},
          {"items", items}};
}

/// Table of mean metrics per (start, steps) cell, bicubic first.
inline void print_trend(const EvalResult& r, std::ostream& os) {
  os << std::left << std::setw(10) << "method" << std::setw(24) << "timesteps" << std::right << std::setw(10) << "PSNR-Y"
     << std::setw(10) << "SSIM-Y" << '\n';
  os << std::fixed;
  os << std::left << std::setw(10) << "bicubic" << std::setw(24) << "-" << std::right << std::setprecision(3) << std::setw(10)
     << r.bicubic.psnr().mean << std::setprecision(4) << std::setw(10) << r.bicubic.ssim().mean << '\n';
  for (const auto& c : r.cells) {
    os << std::left << std::setw(10) << ("S=" + std::to_string(c.steps)) << std::setw(24) << timesteps_label(c.timesteps) << std::right
       << std::setprecision(3) << std::setw(10) << c.report.psnr().mean << std::setprecision(4) << std::setw(10)
       << c.report.ssim().mean << '\n';
  }
  os.unsetf(std::ios::fixed);
}

inline void write_eval(const EvalResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_report_csv(r.bicubic, dir / "report_bicubic.csv");
  nlohmann::json summary{{"bicubic", to_json(r.bicubic)}, {"cells", nlohmann::json::array()}};
  std::ofstream trend(dir / "trend.csv");
  if (!trend) throw IoError("cannot write '" + (dir / "trend.csv").string() + "'");
  trend << std::setprecision(10) << "start,steps,timesteps,psnr_y,ssim_y\n";
  trend << "bicubic,0,-," << r.bicubic.psnr().mean << ',' << r.bicubic.ssim().mean << '\n';
  for (const auto& c : r.cells) {
    const std::string stem = "report_s" + std::to_string(c.start) + "_k" + std::to_string(c.steps);
    write_report_csv(c.report, dir / (stem + ".csv"));
    auto j = to_json(c.report);
    j["timesteps"] = c.timesteps;
    write_json(j, dir / (stem + ".json"));
    summary["cells"].push_back(j);
    trend << c.start << ',' << c.steps << ",\"" << timesteps_label(c.timesteps) << "\"," << c.report.psnr().mean << ','
          << c.report.ssim().mean << '\n';
  }
  write_json(summary, dir / "summary.json");
}

}  // namespace invsr::pipeline
