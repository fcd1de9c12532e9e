#include "gsvr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "gsvr/io/config.hpp"
#include "gsvr/io/export.hpp"
#include "gsvr/io/field_file.hpp"
#include "gsvr/io/history.hpp"
#include "gsvr/io/nifti.hpp"
#include "gsvr/metrics.hpp"
#include "gsvr/simulate.hpp"
#include "gsvr/train.hpp"

namespace gsvr {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
}

io::RunConfig load(const Common& c) {
  io::RunConfig cfg = c.config.empty() ? io::RunConfig{} : io::load_config(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  return cfg;
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string format_motion(const SliceStates& s) {
  std::ostringstream out;
  out << "slice,qw,qx,qy,qz,tx,ty,tz,log_sigma,eta\n";
  char buf[512];
  for (std::size_t i = 0; i < s.count(); ++i) {
    const SliceState st = s.get(i);
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i,
                  st.rotation[0], st.rotation[1], st.rotation[2], st.rotation[3], st.translation.x(),
                  st.translation.y(), st.translation.z(), st.log_sigma, st.eta);
    out << buf;
  }
  return out.str();
}

SliceStates read_motion(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<SliceState> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    std::size_t idx;
    SliceState st;
    if (!(ss >> idx >> st.rotation[0] >> st.rotation[1] >> st.rotation[2] >> st.rotation[3] >>
          st.translation.x() >> st.translation.y() >> st.translation.z() >> st.log_sigma >> st.eta)) {
      throw IoError("motion file: malformed row in " + path.string());
    }
    rows.push_back(st);
  }
  SliceStates states(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) states.set(i, rows[i]);
  return states;
}

std::vector<std::uint8_t> read_mask_volume(const fs::path& path, const VolumeGrid& like) {
  const io::NiftiImage m = io::read_nifti(path, false);
  if (m.grid.nx != like.nx || m.grid.ny != like.ny || m.grid.nz != like.nz) {
    throw IoError("mask " + path.string() + " does not match the volume dimensions");
  }
  std::vector<std::uint8_t> mask(m.grid.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = m.grid.data[i] > 0.5f ? 1 : 0;
  return mask;
}

/// Axis-aligned grid covering every masked pixel of the stacks at the finest
/// in-plane spacing.
VolumeGrid bounding_grid(const std::vector<SliceStack>& stacks) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  double spacing = std::numeric_limits<double>::infinity();
  for (const auto& st : stacks) {
    spacing = std::min(spacing, st.inplane_spacing);
    for (int s = 0; s < st.n_slices; ++s) {
      for (int j = 0; j < st.ny; ++j) {
        for (int i = 0; i < st.nx; ++i) {
          if (!st.mask.empty() && !st.mask[st.index(i, j, s)]) continue;
          const Vec3 p = lift_pixel(st, s, Vec2(i, j));
          lo = lo.cwiseMin(p);
          hi = hi.cwiseMax(p);
        }
      }
    }
  }
  if (!std::isfinite(lo.x())) throw IoError("reconstruct: stacks contain no masked pixels");
  const Vec3 extent = hi - lo;
  Mat4 affine = Mat4::Identity();
  int n[3];
  for (int a = 0; a < 3; ++a) {
    n[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / spacing)) + 1);
    affine(a, a) = spacing;
    affine(a, 3) = 0.5 * (lo[a] + hi[a]) - 0.5 * (n[a] - 1) * spacing;
  }
  VolumeGrid grid(n[0], n[1], n[2], affine);
  return grid;
}

int cmd_simulate(const Common& common, const std::optional<int>& size, const std::optional<int>& n_stacks,
                 const std::optional<double>& thickness, const std::optional<double>& inplane,
                 const std::optional<double>& noise, const std::optional<double>& rot,
                 const std::optional<double>& trans, const fs::path& out) {
  io::RunConfig cfg = load(common);
  auto& sim = cfg.simulate;
  if (size) sim.size = *size;
  if (n_stacks) sim.stacks = *n_stacks;
  if (thickness) sim.acquisition.thickness = *thickness;
  if (inplane) sim.acquisition.inplane = *inplane;
  if (noise) sim.acquisition.noise_std = *noise;
  if (rot) sim.motion.rot_max_deg = *rot;
  if (trans) sim.motion.trans_max_mm = *trans;
  cfg.validate();

  fs::create_directories(out);
  const VolumeGrid gt = make_phantom(sim.size, cfg.seed, sim.spacing);
  io::write_nifti(gt, out / "gt.nii");
  io::write_mask(gt, out / "gt_mask.nii");

  std::vector<SliceState> truth;
  // Axial first, then coronal and sagittal.
  const SliceAxis axes[3] = {2, 1, 0};
  for (int k = 0; k < sim.stacks; ++k) {
    const SimulatedStack s = simulate_stack(gt, sim.acquisition, sim.motion, axes[k], k, cfg.fit.optim.threads);
    const std::string stem = "stack_" + std::to_string(k);
    io::write_stack(s.stack, out / (stem + ".nii"));
    io::write_stack(s.stack, out / (stem + "_mask.nii"), true);
    for (std::size_t i = 0; i < s.truth.count(); ++i) truth.push_back(s.truth.get(i));
  }
  SliceStates all(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) all.set(i, truth[i]);
  write_text(format_motion(all), out / "truth.csv");
  write_text(io::serialize_config(cfg), out / "config.json");
  std::cout << "wrote " << sim.stacks << " stacks, ground truth and truth.csv to " << out.string() << "\n";
  return kExitOk;
}

struct ReconstructArgs {
  std::vector<std::string> stacks, masks;
  std::string out, reference, reference_mask, reference_motion;
  std::optional<int> epochs, metric_every, threads;
  std::optional<std::size_t> n_gaussians, top_k;
  bool no_psf = false;
};

int cmd_reconstruct(const Common& common, const ReconstructArgs& a) {
  io::RunConfig cfg = load(common);
  if (a.epochs) cfg.fit.optim.epochs = *a.epochs;
  if (a.n_gaussians) cfg.fit.init.n_gaussians = *a.n_gaussians;
  if (a.top_k) cfg.fit.optim.top_k = *a.top_k;
  if (a.metric_every) cfg.fit.optim.metric_every = *a.metric_every;
  if (a.threads) cfg.fit.optim.threads = *a.threads;
  if (a.no_psf) cfg.fit.psf.enabled = false;
  cfg.validate();
  if (!a.masks.empty() && a.masks.size() != a.stacks.size()) {
    throw InvalidParameter("reconstruct: give one --mask per --stack or none");
  }

  std::vector<SliceStack> stacks;
  io::Normalization norm0;
  for (std::size_t k = 0; k < a.stacks.size(); ++k) {
    io::Normalization norm;
    stacks.push_back(io::read_stack(a.stacks[k], a.masks.empty() ? fs::path{} : fs::path(a.masks[k]), &norm));
    if (k == 0) norm0 = norm;
  }

  VolumeGrid reference;
  Reference ref;
  if (!a.reference.empty()) {
    reference = io::read_nifti(a.reference, false).grid;
    for (float& v : reference.data) v = static_cast<float>(norm0.apply(v));
    if (!a.reference_mask.empty()) {
      reference.mask = read_mask_volume(a.reference_mask, reference);
    } else {
      reference.mask.assign(reference.size(), 1);
    }
    ref.volume = &reference;
  }
  SliceStates truth;
  if (!a.reference_motion.empty()) {
    if (!ref.volume) throw InvalidParameter("reconstruct: --reference-motion needs --reference");
    truth = read_motion(a.reference_motion);
    ref.truth = &truth;
  }

  const fs::path out = a.out;
  fs::create_directories(out);
  const FitResult result = fit(stacks, cfg.fit, ref);

  io::write_field(result.field, out / "field.gsvr");
  VolumeGrid grid = ref.volume ? reference : bounding_grid(stacks);
  if (ref.truth) {
    // Sample the field in the ground-truth frame, then label it with the reference affine.
    RigidTransform gauge;
    motion_error(result.states, truth, &gauge, observed_slices(stacks));
    grid = align_reference(reference, gauge);
  }
  const std::size_t k = std::min(cfg.fit.optim.top_k, result.field.count());
  VolumeGrid volume = rasterize(result.field, grid, k);
  if (ref.volume) volume.affine = reference.affine;
  io::write_nifti(volume, out / "volume.nii", true, norm0);
  io::write_history(result.history, out / "history.csv");
  write_text(format_motion(result.states), out / "motion.csv");
  write_text(io::serialize_config(cfg), out / "config.json");
  const HistoryRecord& last = result.history.back();
  std::cout << "epochs " << result.history.size() << ", final loss " << last.loss_total;
  if (last.psnr) std::cout << ", PSNR " << *last.psnr << " dB, SSIM " << *last.ssim;
  std::cout << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string pred, gt, mask, est_motion, true_motion, out;
};

int cmd_evaluate(const Common& common, const EvaluateArgs& a) {
  load(common).validate();
  const VolumeGrid pred = io::read_nifti(a.pred, false).grid;
  const VolumeGrid gt = io::read_nifti(a.gt, false).grid;
  if (pred.nx != gt.nx || pred.ny != gt.ny || pred.nz != gt.nz) {
    throw IoError("evaluate: prediction and ground truth differ in size");
  }
  const std::vector<std::uint8_t> mask =
      a.mask.empty() ? std::vector<std::uint8_t>(gt.size(), 1) : read_mask_volume(a.mask, gt);

  std::ostringstream table;
  char buf[128];
  table << "metric,value\n";
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%s,%.10g\n", name, v);
    table << buf;
  };
  row("psnr", psnr(pred, gt, mask));
  row("ssim", ssim(pred, gt, mask));
  row("ncc", ncc(pred, gt, mask));
  if (!a.est_motion.empty() || !a.true_motion.empty()) {
    if (a.est_motion.empty() || a.true_motion.empty()) {
      throw InvalidParameter("evaluate: --est-motion and --true-motion go together");
    }
    const auto errors = motion_error(read_motion(a.est_motion), read_motion(a.true_motion));
    std::vector<double> deg, mm;
    for (const auto& e : errors) {
      deg.push_back(e.degrees);
      mm.push_back(e.mm);
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    row("motion_median_deg", median(deg));
    row("motion_median_mm", median(mm));
  }
  std::cout << table.str();
  if (!a.out.empty()) write_text(table.str(), a.out);
  return kExitOk;
}

struct ExportArgs {
  std::string field, ply, png, volume, grid, axis = "z";
  double gamma = 1.0;
  std::optional<std::size_t> top_k;
};

int cmd_export(const Common& common, const ExportArgs& a) {
  io::RunConfig cfg = load(common);
  if (a.top_k) cfg.fit.optim.top_k = *a.top_k;
  cfg.validate();
  if (a.ply.empty() && a.png.empty()) throw InvalidParameter("export: nothing to do (give --ply and/or --png)");
  const int axis = io::parse_axis(a.axis);
  if (!(a.gamma > 0.0 && a.gamma <= 1.0)) throw InvalidParameter("export: --gamma must be in (0, 1]");

  std::optional<GaussianField> field;
  if (!a.field.empty()) field = io::read_field(a.field);
  if (!a.ply.empty()) {
    if (!field) throw InvalidParameter("export: --ply needs --field");
    io::export_pointcloud(*field, a.gamma, a.ply);
  }
  if (!a.png.empty()) {
    if (!a.volume.empty()) {
      io::export_slices(io::read_nifti(a.volume, false).grid, axis, a.png);
    } else if (!a.grid.empty() && field) {
      const VolumeGrid grid = io::read_nifti(a.grid, false).grid;
      const std::size_t k = std::min(cfg.fit.optim.top_k, field->count());
      io::export_slices(rasterize(*field, grid, k), axis, a.png);
    } else {
      throw InvalidParameter("export: --png needs --volume, or --field with --grid");
    }
  }
  return kExitOk;
}

int cmd_convergence(const Common& common, const std::string& history, const std::string& out) {
  load(common).validate();
  const std::string csv = io::format_convergence(io::read_history(history));
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(csv, out);
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Gaussian-primitive slice-to-volume reconstruction"};
  app.require_subcommand(1);

  Common c_sim, c_rec, c_eval, c_exp, c_conv;

  auto* sim = app.add_subcommand("simulate", "phantom ground truth -> motion-corrupted stacks + truth");
  add_common(sim, c_sim);
  std::optional<int> size, n_stacks;
  std::optional<double> thickness, inplane, noise, rot, trans;
  std::string sim_out = "simulated";
  sim->add_option("--size", size, "ground-truth grid size (voxels per axis)");
  sim->add_option("--stacks", n_stacks, "number of orthogonal stacks (1-3)");
  sim->add_option("--thickness", thickness, "slice thickness, mm");
  sim->add_option("--inplane", inplane, "in-plane pixel size, mm");
  sim->add_option("--noise", noise, "Gaussian noise standard deviation");
  sim->add_option("--rot", rot, "max rotation per Euler angle, degrees");
  sim->add_option("--trans", trans, "max translation per axis, mm");
  sim->add_option("--out", sim_out, "output directory");

  auto* rec = app.add_subcommand("reconstruct", "stacks -> field + volume + history");
  add_common(rec, c_rec);
  ReconstructArgs ra;
  ra.out = "reconstruction";
  rec->add_option("--stack", ra.stacks, "input stack (NIfTI), repeatable")->required();
  rec->add_option("--mask", ra.masks, "mask per stack, repeatable");
  rec->add_option("--out", ra.out, "output directory");
  rec->add_option("--reference", ra.reference, "ground truth for metric tracking and output grid");
  rec->add_option("--reference-mask", ra.reference_mask, "mask of the reference");
  rec->add_option("--reference-motion", ra.reference_motion,
                  "true motion (truth.csv); metrics and volume.nii are taken after gauge removal");
  rec->add_option("--epochs", ra.epochs);
  rec->add_option("--n-gaussians", ra.n_gaussians);
  rec->add_option("--top-k", ra.top_k);
  rec->add_option("--metric-every", ra.metric_every, "epochs between PSNR/SSIM evaluations");
  rec->add_option("--threads", ra.threads);
  rec->add_flag("--no-psf", ra.no_psf, "zero PSF (ablation)");

  auto* ev = app.add_subcommand("evaluate", "prediction vs ground truth -> metrics table");
  add_common(ev, c_eval);
  EvaluateArgs ea;
  ev->add_option("--pred", ea.pred)->required();
  ev->add_option("--gt", ea.gt)->required();
  ev->add_option("--mask", ea.mask);
  ev->add_option("--est-motion", ea.est_motion, "motion.csv from reconstruct");
  ev->add_option("--true-motion", ea.true_motion, "truth.csv from simulate");
  ev->add_option("--out", ea.out, "also write the table to this CSV");

  auto* ex = app.add_subcommand("export", "field -> PLY point cloud and/or PNG montage");
  add_common(ex, c_exp);
  ExportArgs xa;
  ex->add_option("--field", xa.field);
  ex->add_option("--ply", xa.ply);
  ex->add_option("--gamma", xa.gamma, "shrink factor for the PLY axis lengths");
  ex->add_option("--png", xa.png);
  ex->add_option("--volume", xa.volume, "NIfTI volume to montage");
  ex->add_option("--grid", xa.grid, "NIfTI whose geometry/mask the field is rasterized on");
  ex->add_option("--axis", xa.axis, "x, y or z");
  ex->add_option("--top-k", xa.top_k);

  auto* conv = app.add_subcommand("convergence", "history -> convergence CSV");
  add_common(conv, c_conv);
  std::string history, conv_out;
  conv->add_option("--history", history)->required();
  conv->add_option("--out", conv_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(c_sim, size, n_stacks, thickness, inplane, noise, rot, trans, sim_out);
    if (*rec) return cmd_reconstruct(c_rec, ra);
    if (*ev) return cmd_evaluate(c_eval, ea);
    if (*ex) return cmd_export(c_exp, xa);
    if (*conv) return cmd_convergence(c_conv, history, conv_out);
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("gsvr");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace gsvr
