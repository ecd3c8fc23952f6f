// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "understory/io/binary.hpp"
#include "understory/io/dataset.hpp"
#include "understory/io/json_io.hpp"
#include "understory/io/ply.hpp"
#include "understory/io/png.hpp"
#include "understory/understory.hpp"

namespace understory::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;
using io::json;
namespace fs = std::filesystem;

/// Turns leftover `--key value` / `--key=value` arguments into overrides.
inline Overrides parse_overrides(const std::vector<std::string>& rest) {
  Overrides out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& a = rest[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw UsageError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= rest.size()) throw UsageError("missing value for '" + a + "'");
      out.emplace_back(a.substr(2), rest[++i]);
    }
  }
  return out;
}

/// Run record written next to every command's outputs. Wall times live
/// under "timings_s"; everything else is reproducible.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv) {
    j_["tool"] = "understory";
    j_["version"] = kVersion;
    j_["command"] = std::move(command);
    j_["argv"] = argv;
    j_["timings_s"] = json::object();
    j_["paths"] = json::object();
  }

  json& operator[](const std::string& key) { return j_[key]; }
  void path(const std::string& name, const fs::path& p) { j_["paths"][name] = p.generic_string(); }

  template <class Fn>
  auto phase(const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&] {
      j_["timings_s"][name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record();
    } else {
      auto r = fn();
      record();
      return r;
    }
  }

  void write(const fs::path& path) const { io::write_text_atomic(path, j_.dump(1) + "\n"); }

 private:
  json j_;
};

/// Config object = built-in defaults, then the file, then overrides.
inline json layered_config(const json& defaults, const std::string& file, const Overrides& overrides) {
  json j = defaults;
  if (!file.empty()) j.merge_patch(io::read_json(file));
  io::apply_overrides(j, overrides);
  return j;
}

inline fs::path sibling_manifest(const fs::path& file) {
  fs::path p = file;
  p += ".manifest.json";
  return p;
}

inline Image encoded(const Image& linear) {
  Image out = linear;
  for (double& v : out.data) v = srgb_encode(v);
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string scene_file, capture_file, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> gt_voxel;
  int threads = default_thread_count();
};

inline int cmd_synth(const SynthArgs& a, const Overrides& overrides, Manifest& m, std::ostream& log) {
  Overrides scene_ov, capture_ov;
  const json scene_defaults = io::forest_params_to_json(ForestParams{});
  const json capture_defaults = io::capture_to_json(CaptureConfig{});
  for (const auto& [k, v] : overrides) {
    const std::string head = k.substr(0, k.find('.'));
    if (head == "scene")
      scene_ov.emplace_back(k.substr(6), v);
    else if (head == "capture")
      capture_ov.emplace_back(k.substr(8), v);
    else if (scene_defaults.contains(head))
      scene_ov.emplace_back(k, v);
    else if (capture_defaults.contains(head))
      capture_ov.emplace_back(k, v);
    else
      throw InputError("unknown configuration key '" + k + "'");
  }
  ForestParams fp = io::forest_params_from_json(layered_config(scene_defaults, a.scene_file, scene_ov));
  CaptureConfig cc = io::capture_from_json(layered_config(capture_defaults, a.capture_file, capture_ov));
  if (a.seed) fp.seed = cc.seed = *a.seed;

  const AnalyticScene scene = m.phase("generate", [&] { return generate_forest(fp); });
  const Dataset ds = m.phase("capture", [&] { return generate_capture(scene, cc, a.threads); });
  const fs::path out = a.out;
  m.phase("write", [&] {
    io::save_dataset(out, ds, &scene);
    for (std::size_t v = 0; v < ds.size(); ++v) {
      const Image full = oracle_render(scene, ds.cameras[v], Layers::all(), a.threads);
      const Image ground = oracle_render(scene, ds.cameras[v], Layers::ground_only(), a.threads);
      io::write_png(out / "oracle_full" / (ds.names[v] + ".png"), full);
      io::write_float_image(out / "oracle_full" / (ds.names[v] + ".cnpf"), full);
      io::write_png(out / "oracle_ground" / (ds.names[v] + ".png"), ground);
      io::write_float_image(out / "oracle_ground" / (ds.names[v] + ".cnpf"), ground);
    }
  });
  if (a.gt_voxel) {
    m.phase("voxelize", [&] {
      const Aabb b = scene.bounds();
      std::array<int, 3> res{};
      for (int k = 0; k < 3; ++k) res[k] = std::max(2, static_cast<int>(std::ceil((b.hi[k] - b.lo[k]) / *a.gt_voxel)));
      io::write_checkpoint(out / "gt_field.cnpl", voxelize_scene(scene, b, res, {}, a.threads));
    });
    m.path("gt_field", out / "gt_field.cnpl");
  }
  const double gsd = capture_gsd(cc, scene);
  m["config"] = {{"scene", io::forest_params_to_json(fp)}, {"capture", io::capture_to_json(cc)}};
  m["seed"] = fp.seed;
  m["gsd_m"] = gsd;
  m["focal_px"] = capture_focal(cc, scene);
  m["n_views"] = ds.size();
  m.path("dataset", out);
  m.write(out / "manifest.json");
  log << "synth: " << ds.size() << " views, GSD " << gsd << " m/px -> " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, config_file, out, log_file, resume;
  long start_step = 0;
  std::optional<std::uint64_t> seed;
  int threads = default_thread_count();
};

inline int cmd_train(const TrainArgs& a, const Overrides& overrides, Manifest& m, std::ostream& log) {
  io::TrainSettings s =
      io::train_settings_from_json(layered_config(io::train_settings_to_json({}), a.config_file, overrides));
  if (a.seed) s.train.rng_seed = *a.seed;
  s.train.threads = a.threads;
  const Dataset ds = m.phase("load", [&] { return io::load_dataset(a.data); });
  std::optional<VoxelField> initial;
  if (!a.resume.empty()) initial = io::read_checkpoint(a.resume);

  const fs::path out = a.out;
  fs::path log_path = a.log_file;
  if (log_path.empty()) log_path = fs::path(out).replace_extension(".log.csv");
  FitCallbacks cb;
  cb.on_checkpoint = [&](long step, const VoxelField& f) {
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, ".step%06ld.cnpl", step);
    fs::path p = fs::path(out).replace_extension(suffix);
    io::write_checkpoint(p, f);
  };
  cb.on_log = [&](const LogEntry& e) { log << "step " << e.step << " loss " << e.loss << "\n"; };
  FitResult r = m.phase("train", [&] { return fit(ds, s.field, s.train, cb, std::move(initial), a.start_step); });
  m.phase("write", [&] {
    io::write_checkpoint(out, r.field);
    io::write_text(log_path, io::training_log_csv(r.log));
  });
  m["config"] = io::train_settings_to_json(s);
  m["seed"] = s.train.rng_seed;
  m["threads"] = a.threads;
  m.path("dataset", a.data);
  m.path("checkpoint", out);
  m.path("log", log_path);
  if (!a.resume.empty()) m.path("resumed_from", a.resume);
  m.write(sibling_manifest(out));
  return kOk;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint, cameras, out, dtm;
  bool full = false, crop = false, mask = false, write_float = false;
  double margin = 0.3;
  int samples = 128;
  int threads = default_thread_count();
};

inline int cmd_render(const RenderArgs& a, Manifest& m, std::ostream& log) {
  if (a.full && (a.crop || a.mask)) throw UsageError("--full cannot be combined with --crop or --mask");
  if (a.crop && a.dtm.empty()) throw UsageError("--crop requires --dtm");
  const VoxelField field = io::read_checkpoint(a.checkpoint);
  const auto cams = io::read_cameras(a.cameras);
  std::optional<Dtm> dtm;
  if (a.crop) dtm = io::read_dtm(a.dtm);
  RenderPolicy policy;
  policy.masked = a.mask;
  if (dtm) {
    policy.crop_dtm = &*dtm;
    policy.crop_margin = a.margin;
  }
  ImageRenderOptions opt;
  opt.n_samples = a.samples;
  opt.threads = a.threads;
  const fs::path out = a.out;
  io::ensure_dir(out);
  m.phase("render", [&] {
    for (std::size_t i = 0; i < cams.size(); ++i) {
      const std::string name = cams[i].image.empty() ? view_name(i) : fs::path(cams[i].image).stem().string();
      const Image img = render_image(field, cams[i].camera, policy, opt);
      io::write_png(out / (name + ".png"), img);
      if (a.write_float) io::write_float_image(out / (name + ".cnpf"), img);
    }
  });
  const std::string mode = a.crop && a.mask ? "crop+mask" : a.crop ? "crop" : a.mask ? "mask" : "full";
  m["config"] = {{"mode", mode}, {"margin", a.margin}, {"n_samples", a.samples}, {"float", a.write_float}};
  m.path("checkpoint", a.checkpoint);
  m.path("cameras", a.cameras);
  if (dtm) m.path("dtm", a.dtm);
  m.path("output", out);
  m.write(out / "manifest.json");
  log << "render: " << cams.size() << " views (" << mode << ") -> " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

/// Loads `<dir>/<name>.cnpf` when present, else the PNG.
inline Image load_view(const fs::path& dir, const std::string& name) {
  if (fs::exists(dir / (name + ".cnpf"))) return io::read_float_image(dir / (name + ".cnpf"));
  return io::read_png(dir / (name + ".png"));
}

inline std::vector<std::string> view_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".cnpf")) names.insert(e.path().stem().string());
  }
  return {names.begin(), names.end()};
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return {v.front(), 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

struct EvalArgs {
  std::string rendered, oracle, out;
};

inline int cmd_eval(const EvalArgs& a, Manifest& m, std::ostream& log) {
  const auto names = view_names(a.oracle);
  if (names.empty()) throw IoError(a.oracle + ": no oracle images");
  std::vector<std::string> missing;
  for (const auto& n : names)
    if (!fs::exists(fs::path(a.rendered) / (n + ".png")) && !fs::exists(fs::path(a.rendered) / (n + ".cnpf")))
      missing.push_back(n);
  if (!missing.empty()) {
    std::string list;
    for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
    throw IoError("no rendered counterpart for: " + list);
  }
  std::vector<std::pair<std::string, double>> rows;
  std::vector<double> ms, ps;
  m.phase("eval", [&] {
    for (const auto& n : names) {
      const Image r = load_view(a.rendered, n);
      const Image o = load_view(a.oracle, n);
      ms.push_back(msssim(r, o));
      ps.push_back(psnr(r, o));
      rows.emplace_back(n + ".msssim", ms.back());
      rows.emplace_back(n + ".psnr", ps.back());
    }
  });
  const auto [mm, msd] = mean_std(ms);
  const auto [pm, psd] = mean_std(ps);
  rows.emplace_back("msssim_mean", mm);
  rows.emplace_back("msssim_std", msd);
  rows.emplace_back("psnr_mean", pm);
  rows.emplace_back("psnr_std", psd);
  rows.emplace_back("n_views", static_cast<double>(names.size()));
  const std::string csv = io::metrics_csv(rows);
  if (a.out.empty()) {
    log << csv;
  } else {
    io::write_text(a.out, csv);
    m.path("rendered", a.rendered);
    m.path("oracle", a.oracle);
    m.path("metrics", a.out);
    m.write(sibling_manifest(a.out));
    log << "eval: M-SSIM " << mm << " +- " << msd << ", PSNR " << io::format_number(pm) << " dB\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct StemsArgs {
  std::string checkpoint, dtm, config_file, out, keep_stages;
};

inline PointCloud colored_clusters(const PointCloud& cloud, const StemReport& rep) {
  static const std::array<Rgb, 6> palette{Rgb(0.8, 0.1, 0.1), Rgb(0.1, 0.6, 0.1), Rgb(0.1, 0.2, 0.8),
                                          Rgb(0.8, 0.7, 0.1), Rgb(0.7, 0.1, 0.7), Rgb(0.1, 0.7, 0.7)};
  PointCloud out;
  for (std::size_t s = 0; s < rep.stems.size(); ++s)
    for (int i : rep.stems[s].indices) out.points.push_back({cloud.points[i].position, palette[s % palette.size()]});
  return out;
}

inline int cmd_stems(const StemsArgs& a, const Overrides& overrides, Manifest& m, std::ostream& log,
                     std::ostream& err) {
  const StemPipelineConfig cfg =
      io::stem_config_from_json(layered_config(io::stem_config_to_json({}), a.config_file, overrides));
  const VoxelField field = io::read_checkpoint(a.checkpoint);
  const Dtm dtm = io::read_dtm(a.dtm);
  const StemPipelineResult r = m.phase("stems", [&] { return run_stem_pipeline(field, dtm, cfg); });
  if (r.cropped.empty()) err << "warning: point cloud is empty after filtering; reporting 0 stems\n";
  io::write_text(a.out, io::stem_report_to_json(r.report).dump(1) + "\n");
  if (!a.keep_stages.empty()) {
    const fs::path d = a.keep_stages;
    io::write_ply(d / "1_full_scene.ply", r.exported);
    io::write_ply(d / "2_canopy_ground_removed.ply", r.cropped);
    io::write_ply(d / "3_clusters.ply", colored_clusters(r.cropped, r.report));
    m.path("stages", d);
  }
  m["config"] = io::stem_config_to_json(cfg);
  m.path("checkpoint", a.checkpoint);
  m.path("dtm", a.dtm);
  m.path("report", a.out);
  m.write(sibling_manifest(a.out));
  log << "stems: " << r.report.stem_count << " stems from " << r.cropped.size() << " points\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct LightingArgs {
  std::string input, out;
  int bins = 64;
};

inline int cmd_inspect_lighting(const LightingArgs& a, Manifest& m, std::ostream& log) {
  const fs::path in = a.input;
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    const fs::path dir = fs::is_directory(in / "images") ? in / "images" : in;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && (e.path().extension() == ".png" || e.path().extension() == ".cnpf"))
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError(in.string() + ": no images to inspect");
  } else if (fs::exists(in)) {
    files.push_back(in);
  } else {
    throw IoError(in.string() + ": not found");
  }
  json per_image = json::array();
  int flagged = 0;
  m.phase("inspect", [&] {
    for (const auto& f : files) {
      const Image img = f.extension() == ".cnpf" ? io::read_float_image(f) : io::read_png(f);
      const ExposureHistogram h = exposure_histogram(encoded(img), a.bins);
      flagged += h.bimodal ? 1 : 0;
      per_image.push_back({{"image", f.filename().string()},
                           {"bimodal", h.bimodal},
                           {"bimodality_coefficient", h.bimodality_coefficient},
                           {"mode_positions", h.mode_positions},
                           {"histogram", h.counts}});
      log << f.filename().string() << ": " << (h.bimodal ? "bimodal" : "unimodal") << " (BC "
          << h.bimodality_coefficient << ")\n";
    }
  });
  const double fraction = static_cast<double>(flagged) / static_cast<double>(files.size());
  log << "bimodal fraction: " << fraction << "\n";
  if (!a.out.empty()) {
    io::write_text(a.out, json{{"n_images", files.size()}, {"bimodal_fraction", fraction}, {"images", per_image}}.dump(1) +
                              "\n");
    m.path("report", a.out);
    m.write(sibling_manifest(a.out));
  }
  return kOk;
}

// ---------------------------------------------------------------------------

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Canopy-removing radiance field reconstruction from aerial imagery", "understory"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic forest dataset with oracle images");
  s->add_option("--scene", synth.scene_file, "scene config JSON");
  s->add_option("--capture", synth.capture_file, "capture config JSON");
  s->add_option("--out", synth.out, "output dataset directory")->required();
  s->add_option("--seed", synth.seed, "seed for scene and sensor noise");
  s->add_option("--gt-voxel", synth.gt_voxel, "also write a voxelized ground-truth field with this voxel size (m)");
  s->add_option("--threads", synth.threads, "worker threads");
  s->allow_extras();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Fit a voxel radiance field to a dataset");
  t->add_option("--data", train.data, "dataset directory")->required();
  t->add_option("--config", train.config_file, "train config JSON");
  t->add_option("--out", train.out, "output checkpoint")->required();
  t->add_option("--log", train.log_file, "training log CSV");
  t->add_option("--resume", train.resume, "initial checkpoint");
  t->add_option("--start-step", train.start_step, "step count already done by the resumed run");
  t->add_option("--seed", train.seed, "training seed");
  t->add_option("--threads", train.threads, "worker threads");
  t->allow_extras();

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a checkpoint from the given cameras");
  r->add_option("--checkpoint", render.checkpoint, "field checkpoint")->required();
  r->add_option("--cameras", render.cameras, "cameras.json")->required();
  r->add_option("--out", render.out, "output directory")->required();
  r->add_flag("--full", render.full, "integrate the whole ray (default)");
  r->add_flag("--crop", render.crop, "start integration just above the terrain");
  r->add_flag("--mask", render.mask, "weight samples by learned visibility");
  r->add_option("--dtm", render.dtm, "terrain model for --crop");
  r->add_option("--margin", render.margin, "crop height above the terrain (m)");
  r->add_option("--samples", render.samples, "samples per ray");
  r->add_flag("--float", render.write_float, "also write linear float rasters");
  r->add_option("--threads", render.threads, "worker threads");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score rendered views against oracle images");
  e->add_option("--rendered", eval.rendered, "directory of rendered views")->required();
  e->add_option("--oracle", eval.oracle, "directory of reference views")->required();
  e->add_option("--out", eval.out, "metrics CSV (stdout when omitted)");

  StemsArgs stems;
  auto* st = app.add_subcommand("stems", "Count tree stems in a trained field");
  st->add_option("--checkpoint", stems.checkpoint, "field checkpoint")->required();
  st->add_option("--dtm", stems.dtm, "terrain model")->required();
  st->add_option("--config", stems.config_file, "stems config JSON");
  st->add_option("--out", stems.out, "report JSON")->required();
  st->add_option("--keep-stages", stems.keep_stages, "directory for intermediate point clouds");
  st->allow_extras();

  LightingArgs light;
  auto* l = app.add_subcommand("inspect-lighting", "Exposure histogram and bimodality check");
  l->add_option("--input", light.input, "image or dataset directory")->required();
  l->add_option("--bins", light.bins, "histogram bins");
  l->add_option("--out", light.out, "report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? kOk : kUsage;
  }

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    auto* sub = app.get_subcommands().front();
    Manifest m(sub->get_name(), args);
    if (sub == s) return cmd_synth(synth, parse_overrides(s->remaining()), m, out);
    if (sub == t) return cmd_train(train, parse_overrides(t->remaining()), m, out);
    if (sub == r) return cmd_render(render, m, out);
    if (sub == e) return cmd_eval(eval, m, out);
    if (sub == st) return cmd_stems(stems, parse_overrides(st->remaining()), m, out, err);
    if (sub == l) return cmd_inspect_lighting(light, m, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kUsage;
  } catch (const InputError& ex) {
    err << "invalid input: " << ex.what() << "\n";
    return kUsage;
  } catch (const IoError& ex) {
    err << "I/O error: " << ex.what() << "\n";
    return kIo;
  } catch (const NumericalError& ex) {
    err << "numerical failure: " << ex.what() << "\n";
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "I/O error: " << ex.what() << "\n";
    return kIo;
  }
  return kUsage;
}

}  // namespace understory::cli
