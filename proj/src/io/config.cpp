#include "gsvr/io/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gsvr::io {

using Json = nlohmann::ordered_json;

namespace {

// Binds struct members to JSON keys in one place so reading and writing share
// the key list.
class Section {
 public:
  Section(Json* node, std::string path, bool reading) : node_(node), path_(std::move(path)), reading_(reading) {
    if (reading_ && !node_->is_object()) throw InvalidParameter("config: \"" + path_ + "\" must be an object");
  }

  template <typename T>
  Section& field(const char* key, T& value) {
    known_.insert(key);
    if (!reading_) {
      (*node_)[key] = value;
      return *this;
    }
    auto it = node_->find(key);
    if (it == node_->end()) return *this;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw type_error(key, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw type_error(key, "an integer");
      if (std::is_unsigned_v<T> && it->template get<long long>() < 0) throw type_error(key, "non-negative");
    } else {
      if (!it->is_number()) throw type_error(key, "a number");
    }
    value = it->template get<T>();
    return *this;
  }

  Section child(const char* key) {
    known_.insert(key);
    if (!reading_) {
      (*node_)[key] = Json::object();
      return Section(&(*node_)[key], qualified(key), false);
    }
    auto it = node_->find(key);
    if (it == node_->end()) return Section(&empty_, qualified(key), true);
    return Section(&*it, qualified(key), true);
  }

  // Array of objects; each element is bound by `fn(Section&, T&)`.
  template <typename T, typename Fn>
  Section& list(const char* key, std::vector<T>& items, Fn fn) {
    known_.insert(key);
    if (!reading_) {
      Json arr = Json::array();
      for (T& item : items) {
        Json obj = Json::object();
        Section s(&obj, qualified(key), false);
        fn(s, item);
        arr.push_back(std::move(obj));
      }
      (*node_)[key] = std::move(arr);
      return *this;
    }
    auto it = node_->find(key);
    if (it == node_->end()) return *this;
    if (!it->is_array()) throw type_error(key, "an array");
    items.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      Section s(&(*it)[i], qualified(key) + "[" + std::to_string(i) + "]", true);
      T item{};
      fn(s, item);
      s.finish();
      items.push_back(item);
    }
    return *this;
  }

  void finish() const {
    if (!reading_) return;
    for (const auto& item : node_->items()) {
      if (!known_.count(item.key())) throw InvalidParameter("config: unknown key \"" + qualified(item.key().c_str()) + "\"");
    }
  }

 private:
  std::string qualified(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  InvalidParameter type_error(const char* key, const char* what) const {
    return InvalidParameter("config: \"" + qualified(key) + "\" must be " + what);
  }

  Json* node_;
  std::string path_;
  bool reading_;
  std::set<std::string> known_;
  Json empty_ = Json::object();
};

void bind(Section& root, RunConfig& c) {
  root.field("seed", c.seed).field("delta", c.delta);

  auto init = root.child("init");
  init.field("n_gaussians", c.fit.init.n_gaussians)
      .field("lambda_init", c.fit.init.lambda_init)
      .field("initial_scale", c.fit.init.initial_scale)
      .field("jitter", c.fit.init.jitter);
  init.finish();

  auto loss = root.child("loss");
  loss.field("lambda_reg", c.fit.loss.lambda_reg)
      .field("s_target", c.fit.loss.s_target)
      .field("outlier_weighting", c.fit.loss.outlier_weighting);
  loss.finish();

  OptimConfig& o = c.fit.optim;
  auto optim = root.child("optim");
  optim.field("epochs", o.epochs)
      .field("top_k", o.top_k)
      .field("knn_refresh", o.knn_refresh)
      .field("motion_warmup", o.motion_warmup)
      .field("optimize_motion", o.optimize_motion)
      .field("point_budget", o.point_budget)
      .field("nonnegative_intensity", o.nonnegative_intensity)
      .field("threads", o.threads)
      .field("metric_every", o.metric_every)
      .list("coarse_stages", o.coarse_stages, [](Section& s, CoarseStage& st) {
        s.field("n_gaussians", st.n_gaussians)
            .field("scale", st.scale)
            .field("lambda_reg", st.lambda_reg)
            .field("epochs", st.epochs)
            .field("rotation_lr", st.rotation_lr)
            .field("translation_lr", st.translation_lr);
      });
  auto lr = optim.child("lr");
  lr.field("means", o.lr.means)
      .field("log_scales", o.lr.log_scales)
      .field("quaternions", o.lr.quaternions)
      .field("intensities", o.lr.intensities)
      .field("motion_rotation", o.lr.motion_rotation)
      .field("motion_translation", o.lr.motion_translation)
      .field("log_sigma", o.lr.log_sigma)
      .field("eta", o.lr.eta);
  lr.finish();
  auto schedule = optim.child("schedule");
  schedule.field("factor", o.schedule.factor).field("every", o.schedule.every);
  schedule.finish();
  auto adam = optim.child("adam");
  adam.field("beta1", o.adam.beta1)
      .field("beta2", o.adam.beta2)
      .field("eps", o.adam.eps)
      .field("weight_decay", o.adam.weight_decay);
  adam.finish();
  optim.finish();

  auto psf = root.child("psf");
  psf.field("inplane_fwhm_factor", c.fit.psf.inplane_fwhm_factor)
      .field("through_fwhm_factor", c.fit.psf.through_fwhm_factor)
      .field("enabled", c.fit.psf.enabled)
      .field("mass_preserving", c.fit.psf.mass_preserving);
  psf.finish();

  SimulateConfig& s = c.simulate;
  auto sim = root.child("simulate");
  sim.field("size", s.size)
      .field("spacing", s.spacing)
      .field("stacks", s.stacks)
      .field("inplane", s.acquisition.inplane)
      .field("thickness", s.acquisition.thickness)
      .field("noise_std", s.acquisition.noise_std)
      .field("samples_per_sigma", s.acquisition.samples_per_sigma)
      .field("mask_threshold", s.acquisition.mask_threshold)
      .field("rot_max_deg", s.motion.rot_max_deg)
      .field("trans_max_mm", s.motion.trans_max_mm);
  sim.finish();

  root.finish();
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  fit.init.seed = s;
  simulate.motion.seed = s;
}

void RunConfig::validate() const {
  if (delta != kMixtureDelta) throw InvalidParameter("config: delta is fixed at 1e-8 in this build");
  fit.init.validate();
  fit.loss.validate();
  fit.optim.validate();
  if (!(fit.psf.inplane_fwhm_factor >= 0.0) || !(fit.psf.through_fwhm_factor >= 0.0)) {
    throw InvalidParameter("config: PSF FWHM factors must be non-negative");
  }
  const auto& s = simulate;
  if (s.size < 32) throw InvalidParameter("config: simulate.size must be >= 32");
  if (s.stacks < 1 || s.stacks > 3) throw InvalidParameter("config: simulate.stacks must be in [1, 3]");
  if (!(s.spacing > 0.0) || !(s.acquisition.inplane > 0.0) || !(s.acquisition.thickness > 0.0)) {
    throw InvalidParameter("config: simulate spacings must be positive");
  }
  if (!(s.acquisition.noise_std >= 0.0)) throw InvalidParameter("config: simulate.noise_std must be >= 0");
  if (!(s.acquisition.mask_threshold >= 0.0 && s.acquisition.mask_threshold < 1.0)) {
    throw InvalidParameter("config: simulate.mask_threshold must be in [0, 1)");
  }
  if (!(s.acquisition.samples_per_sigma > 0.0)) {
    throw InvalidParameter("config: simulate.samples_per_sigma must be positive");
  }
  if (!(s.motion.rot_max_deg >= 0.0) || !(s.motion.trans_max_mm >= 0.0)) {
    throw InvalidParameter("config: simulate motion ranges must be non-negative");
  }
}

RunConfig parse_config(const std::string& text) {
  Json json;
  try {
    json = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidParameter(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(&json, "", true);
  bind(root, cfg);
  cfg.apply_seed(cfg.seed);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  Json json = Json::object();
  Section root(&json, "", false);
  bind(root, copy);
  return json.dump(2) + "\n";
}

}  // namespace gsvr::io
