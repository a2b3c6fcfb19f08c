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

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "invsr/config.hpp"
#include "invsr/data.hpp"
#include "invsr/image_io.hpp"
#include "invsr/pipeline.hpp"
#include "invsr/sampler.hpp"
#include "invsr/schedule.hpp"

namespace fs = std::filesystem;
using namespace invsr;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kIo = 3, kNumeric = 4 };

/// Options every subcommand accepts.
struct Common {
  std::string config_path;
  std::string profile = "default";
  std::optional<std::uint64_t> seed;
  std::string data_dir, run_dir;
  int jobs = 1;
  bool deterministic = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON config file (overlays the profile)");
    app->add_option("--profile", profile, "base settings: default (T=1000) or fast (T=100, narrow nets)")
        ->check(CLI::IsMember({"default", "fast"}));
    app->add_option("--seed", seed, "global seed (beats config file and INVSR_SEED)");
    app->add_option("--data-dir", data_dir, "dataset directory");
    app->add_option("--run-dir", run_dir, "output directory for logs, checkpoints, reports");
    app->add_option("-j,--jobs", jobs, "worker threads for data synthesis and inference")->check(CLI::PositiveNumber);
    app->add_flag("--deterministic", deterministic, "single-threaded, bit-reproducible execution");
  }

  int workers() const { return deterministic ? 1 : jobs; }

  /// Profile, then config file, then flags. Paths under run_dir follow a --run-dir override.
  RunConfig resolve() const {
    RunConfig c = profile == "fast" ? RunConfig::fast() : RunConfig{};
    std::optional<std::uint64_t> file_seed;
    if (!config_path.empty()) {
      const auto j = read_json(config_path);
      c = config_from_json(j, c);
      if (j.contains("seed")) file_seed = c.seed;
    }
    c.seed = resolve_seed(seed, file_seed, std::getenv("INVSR_SEED"));
    if (!data_dir.empty()) c.io.data_dir = data_dir;
    if (!run_dir.empty()) {
      c.io.run_dir = run_dir;
      c.io.denoiser_ckpt = (fs::path(run_dir) / "denoiser.ivsr").string();
      c.io.inverter_ckpt = (fs::path(run_dir) / "inverter.ivsr").string();
    }
    return c;
  }
};

void print_row(const TrainLogRow& r, int every, int total) {
  if (r.iter % every == 0 || r.iter + 1 == total) {
    std::cout << "iter " << std::setw(5) << r.iter << "  loss " << std::setprecision(5) << r.loss_total << "  l2 " << r.loss_l2
              << "  perc " << r.loss_perc << "  gan " << r.loss_gan << "  d " << r.d_loss << "  " << std::setprecision(3)
              << r.seconds << "s\n";
  }
}

std::vector<fs::path> ppm_inputs(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p))
      if (e.path().extension() == ".ppm") out.push_back(e.path());
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(p);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-inversion super-resolution at desk scale"};
  app.require_subcommand(1);

  Common common;

  auto* gen = app.add_subcommand("gen-data", "write a procedural dataset manifest (and optionally the HR images)");
  common.attach(gen);
  std::optional<std::size_t> count, size;
  std::optional<double> split;
  bool write_images = false;
  gen->add_option("--count", count, "number of images");
  gen->add_option("--size", size, "image side length");
  gen->add_option("--split", split, "fraction of items in the training split");
  gen->add_flag("--write-images", write_images, "also save HR images as PPM under <data-dir>/hr");

  auto* sched = app.add_subcommand("schedule", "print the noise schedule and inversion plan");
  common.attach(sched);
  std::optional<int> snr_at;
  sched->add_option("--snr-at", snr_at, "print only the SNR at this timestep");

  auto* td = app.add_subcommand("train-denoiser", "pretrain the epsilon denoiser");
  common.attach(td);
  std::optional<int> td_iters, crop;
  int log_every = 50;
  td->add_option("--iterations", td_iters, "optimizer steps");
  td->add_option("--crop", crop, "random square crop side (0 = full image)");
  td->add_option("--log-every", log_every, "console progress interval")->check(CLI::PositiveNumber);

  auto* ti = app.add_subcommand("train-inverter", "train the start-noise predictor against the frozen denoiser");
  common.attach(ti);
  std::optional<int> ti_iters, gan_warmup;
  std::optional<double> lambda_l, lambda_g;
  ti->add_option("--iterations", ti_iters, "optimizer steps");
  ti->add_option("--crop", crop, "random square crop side (0 = full image)");
  ti->add_option("--lambda-l", lambda_l, "perceptual loss weight");
  ti->add_option("--lambda-g", lambda_g, "adversarial loss weight");
  ti->add_option("--gan-warmup", gan_warmup, "iterations before the adversarial term starts");
  ti->add_option("--log-every", log_every, "console progress interval")->check(CLI::PositiveNumber);

  auto* inf = app.add_subcommand("infer", "super-resolve low-resolution PPM images");
  common.attach(inf);
  std::string input, output = "out";
  std::optional<int> start, steps;
  std::optional<double> eta;
  bool dump_noise = false, pre_upsampled = false;
  inf->add_option("-i,--input", input, "LR image or directory of .ppm files")->required();
  inf->add_option("-o,--output", output, "output directory");
  inf->add_option("--start", start, "starting timestep (must be in the plan)");
  inf->add_option("--steps", steps, "number of reverse steps");
  inf->add_option("--eta", eta, "stochasticity of intermediate steps in [0,1]");
  inf->add_flag("--dump-noise", dump_noise, "save the predicted mean noise map and its range");
  inf->add_flag("--pre-upsampled", pre_upsampled, "inputs are already on the HR grid");

  auto* ev = app.add_subcommand("eval", "PSNR-Y / SSIM-Y sweep over start steps and step counts on held-out items");
  common.attach(ev);
  std::vector<int> ev_starts, ev_steps{1, 3, 5};
  std::size_t max_items = 0;
  std::string save_images;
  ev->add_option("--starts", ev_starts, "start timesteps (default: plan minus its smallest)")->delimiter(',');
  ev->add_option("--steps", ev_steps, "step counts")->delimiter(',');
  ev->add_option("--eta", eta, "stochasticity of intermediate steps in [0,1]");
  ev->add_option("--max-items", max_items, "limit on held-out items (0 = all)");
  ev->add_option("--save-images", save_images, "directory for per-cell output images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    RunConfig c = common.resolve();
    const int jobs = common.workers();

    if (gen->parsed()) {
      if (count) c.data.count = *count;
      if (size) c.data.size = *size;
      if (split) c.data.split_fraction = *split;
      c.validate();
      const auto m = pipeline::gen_data(c, write_images, jobs);
      std::cout << "wrote " << pipeline::manifest_path(c).string() << " (" << m.split_items(Split::train).size() << " train, "
                << m.split_items(Split::val).size() << " val)\n";
    } else if (sched->parsed()) {
      c.validate();
      const auto s = make_schedule(c);
      if (snr_at) {
        std::cout << std::setprecision(7) << s.snr(*snr_at) << '\n';
      } else {
        const auto plan = make_plan(c, s);
        std::cout << "# plan " << to_string(plan.strategy) << " N=" << plan.cap << ": " << pipeline::timesteps_label(plan.kappas)
                  << "  train starts " << pipeline::timesteps_label(plan.train_starts) << '\n';
        std::cout << "t,beta,alpha_bar,snr\n" << std::setprecision(10);
        for (int t = 1; t <= s.total_steps(); ++t) std::cout << t << ',' << s.beta(t) << ',' << s.alpha_bar(t) << ',' << s.snr(t) << '\n';
      }
    } else if (td->parsed()) {
      if (td_iters) c.training.denoiser_iterations = *td_iters;
      if (crop) c.training.crop = *crop;
      c.validate();
      const int total = c.training.denoiser_iterations;
      pipeline::train_denoiser_stage(c, jobs, [&](const TrainLogRow& r) { print_row(r, log_every, total); });
      std::cout << "saved " << c.io.denoiser_ckpt << '\n';
    } else if (ti->parsed()) {
      if (ti_iters) c.training.inverter_iterations = *ti_iters;
      if (crop) c.training.crop = *crop;
      if (lambda_l) c.training.weights.lambda_l = *lambda_l;
      if (lambda_g) c.training.weights.lambda_g = *lambda_g;
      if (gan_warmup) c.training.gan_warmup = *gan_warmup;
      c.validate();
      const int total = c.training.inverter_iterations;
      pipeline::train_inverter_stage(c, jobs, [&](const TrainLogRow& r) { print_row(r, log_every, total); });
      std::cout << "saved " << c.io.inverter_ckpt << '\n';
    } else if (inf->parsed()) {
      if (start) c.infer.start = *start;
      if (steps) c.infer.steps = *steps;
      if (eta) c.infer.sampler.eta = *eta;
      c.validate();
      const auto s = make_schedule(c);
      const auto plan = make_plan(c, s);
      const auto den = pipeline::load_denoiser(c, c.io.denoiser_ckpt);
      const auto inv = pipeline::load_inverter(c, c.io.inverter_ckpt);
      InferenceRequest<float> req;
      req.start = c.default_start(plan);
      req.steps = c.infer.steps;
      req.sampler = c.infer.sampler;
      req.seed = c.seed;
      req.dump_noise = dump_noise;
      (void)select_steps(plan, req.start, req.steps);
      std::vector<BatchItem> items;
      for (const auto& p : ppm_inputs(input)) {
        const int scale = pre_upsampled ? 1 : c.degradation.scale;
        items.push_back({p.stem().string(), [p, scale] { return bicubic_upsample(load_image(p), scale); }});
      }
      const auto outs = batch_infer(items, req, network_predictor(inv.predictor, c.predictor), network_denoiser(den, c.denoiser), s,
                                    plan, jobs);
      fs::create_directories(output);
      pipeline::echo_config(c, output);
      std::ofstream timing(fs::path(output) / "timing.csv");
      timing << "item,seconds,steps,start\n";
      int failed = 0;
      for (const auto& o : outs) {
        timing << o.id << ',' << o.seconds << ',' << req.steps << ',' << req.start << '\n';
        if (!o.result) {
          std::cerr << "error: " << o.id << ": " << o.error << '\n';
          ++failed;
          continue;
        }
        save_image(o.result->x0, fs::path(output) / (o.id + ".ppm"));
        if (o.result->noise) {
          save_image(*o.result->noise, fs::path(output) / (o.id + "_noise.ppm"));
          write_json({{"min", o.result->noise_min}, {"max", o.result->noise_max}, {"start", req.start}},
                     fs::path(output) / (o.id + "_noise.json"));
        }
      }
      std::cout << "inverted " << outs.size() - std::size_t(failed) << "/" << outs.size() << " images with timesteps "
                << pipeline::timesteps_label(select_steps(plan, req.start, req.steps)) << " into " << output << '\n';
      if (failed > 0) return kIo;
    } else if (ev->parsed()) {
      if (eta) c.infer.sampler.eta = *eta;
      c.validate();
      const auto m = load_manifest(pipeline::manifest_path(c));
      pipeline::EvalOptions opt;
      opt.starts = ev_starts;
      opt.steps = ev_steps;
      opt.eta = c.infer.sampler.eta;
      opt.max_items = max_items;
      opt.save_images_dir = save_images;
      opt.jobs = jobs;
      const auto r = pipeline::evaluate(c, m, opt);
      const fs::path dir = fs::path(c.io.run_dir) / "eval";
      pipeline::write_eval(r, dir);
      pipeline::echo_config(c, dir);
      std::cout << "held-out items: " << r.bicubic.items.size() << '\n';
      pipeline::print_trend(r, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  }
  return kOk;
}
