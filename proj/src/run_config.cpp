#include "advit/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace advit::config {

using nlohmann::json;

namespace {

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(path_ + ": expected an object");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::size_t size(const std::string& key, std::size_t fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = child(key);
    if (!is_count(v)) {
      throw ConfigError(sub(key) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = child(key);
    if (!is_count(v)) {
      throw ConfigError(sub(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = child(key);
    if (!v.is_number()) {
      throw ConfigError(sub(key) + ": expected a number");
    }
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = child(key);
    if (!v.is_boolean()) {
      throw ConfigError(sub(key) + ": expected true or false");
    }
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = child(key);
    if (!v.is_string()) {
      throw ConfigError(sub(key) + ": expected a string");
    }
    return v.get<std::string>();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError(sub(key) + ": unknown key");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Re-labels library validation failures with the config path.
template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

attacks::AttackConfig attack_from_json(ObjectReader& r, attacks::AttackConfig c) {
  c.epsilon = r.number("epsilon", c.epsilon);
  c.step_size = r.number("step_size", c.step_size);
  c.steps = r.size("steps", c.steps);
  if (r.has("loss")) {
    const auto name = r.string("loss", "");
    c.loss = with_path(r.sub("loss"), [&] { return attacks::parse_loss(name); });
  }
  c.random_init = r.boolean("random_init", c.random_init);
  return c;
}

DataSource source_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DataSource s;
  if (r.has("path")) {
    s.path = r.string("path", "");
  }
  if (r.has("synthetic")) {
    s.synthetic = synthetic_from_json(r.child("synthetic"), r.sub("synthetic"));
  }
  r.finish();
  if (s.path.has_value() == s.synthetic.has_value()) {
    throw ConfigError(path + ": give exactly one of \"path\" or \"synthetic\"");
  }
  return s;
}

json source_to_json(const DataSource& s) {
  if (s.path) {
    return {{"path", *s.path}};
  }
  return {{"synthetic", advit::config::to_json(*s.synthetic)}};
}

std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

json to_json(const vit::ViTConfig& c) {
  return {{"image_size", c.image_size}, {"channels", c.channels},   {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},   {"num_heads", c.num_heads}, {"depth", c.depth},
          {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes}};
}

vit::ViTConfig vit_config_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  vit::ViTConfig c;
  c.image_size = r.size("image_size", c.image_size);
  c.channels = r.size("channels", c.channels);
  c.patch_size = r.size("patch_size", c.patch_size);
  c.embed_dim = r.size("embed_dim", c.embed_dim);
  c.num_heads = r.size("num_heads", c.num_heads);
  c.depth = r.size("depth", c.depth);
  c.mlp_ratio = r.number("mlp_ratio", c.mlp_ratio);
  c.num_classes = r.size("num_classes", c.num_classes);
  r.finish();
  with_path(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

json to_json(const attacks::AttackConfig& c) {
  return {{"epsilon", c.epsilon},
          {"step_size", c.step_size},
          {"steps", c.steps},
          {"loss", attacks::to_string(c.loss)},
          {"random_init", c.random_init}};
}

json to_json(const data::SyntheticSpec& s) {
  return {{"classes", s.classes},       {"per_class", s.per_class}, {"count", s.count},
          {"image_size", s.image_size}, {"channels", s.channels},   {"seed", s.seed}};
}

data::SyntheticSpec synthetic_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  data::SyntheticSpec s;
  s.classes = r.size("classes", s.classes);
  s.per_class = r.size("per_class", s.per_class);
  s.count = r.size("count", s.count);
  s.image_size = r.size("image_size", s.image_size);
  s.channels = r.size("channels", s.channels);
  s.seed = r.u64("seed", s.seed);
  r.finish();
  if (s.classes < 2) {
    throw ConfigError(where + ".classes: need at least 2 classes");
  }
  if (s.classes > 256) {
    throw ConfigError(where + ".classes: at most 256 classes fit the dataset format");
  }
  if ((s.count == 0 && s.per_class == 0) || s.image_size == 0 || s.channels == 0) {
    throw ConfigError(where + ": count (or per_class), image_size and channels must be positive");
  }
  return s;
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  json attacks = json::array();
  for (const auto& a : c.eval.attacks) {
    json entry = to_json(a.config);
    entry["name"] = a.name;
    attacks.push_back(entry);
  }
  json data = json::object();
  if (c.train_data) {
    data["train"] = source_to_json(*c.train_data);
  }
  if (c.test_data) {
    data["test"] = source_to_json(*c.test_data);
  }
  return {
      {"model", to_json(c.model)},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"optimizer",
         {{"kind", train::to_string(t.optimizer.kind)},
          {"lr", t.optimizer.lr},
          {"weight_decay", t.optimizer.weight_decay},
          {"momentum", t.optimizer.momentum},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"eps", t.optimizer.eps}}},
        {"lr_schedule",
         {{"kind", train::to_string(t.lr_schedule.kind)},
          {"milestones", t.lr_schedule.milestones},
          {"factor", t.lr_schedule.factor},
          {"peak_fraction", t.lr_schedule.peak_fraction}}},
        {"clip_norm", t.clip_norm ? json(*t.clip_norm) : json(nullptr)},
        {"attack", to_json(t.attack)},
        {"warmup", {{"mode", warmup::to_string(t.warmup_mode)}, {"epochs", t.warmup_epochs}}},
        {"augment",
         {{"crop_pad", t.augment.crop_pad},
          {"pad", t.augment.pad},
          {"hflip", t.augment.hflip},
          {"mixup", t.augment.mixup},
          {"mixup_alpha", t.augment.mixup_alpha},
          {"cutmix", t.augment.cutmix},
          {"cutmix_alpha", t.augment.cutmix_alpha}}},
        {"seed", t.seed}}},
      {"eval", {{"attacks", attacks}, {"batch_size", c.eval.batch_size}}},
      {"data", data},
      {"output_dir", c.output_dir},
  };
}

RunConfig run_config_from_json(const json& j) {
  ObjectReader root(j, "");
  RunConfig c;
  if (root.has("model")) {
    c.model = vit_config_from_json(root.child("model"), "model");
  }
  if (root.has("train")) {
    ObjectReader r(root.child("train"), "train");
    auto& t = c.train;
    t.epochs = r.size("epochs", t.epochs);
    t.batch_size = r.size("batch_size", t.batch_size);
    if (r.has("optimizer")) {
      ObjectReader o(r.child("optimizer"), "train.optimizer");
      auto& oc = t.optimizer;
      if (o.has("kind")) {
        const auto kind = o.string("kind", "");
        oc.kind = with_path(o.sub("kind"), [&] { return train::parse_optimizer(kind); });
        if (oc.kind == train::OptimizerKind::adamw) {
          // AdamW defaults for the settings the user leaves out.
          oc.lr = 5e-4;
          oc.weight_decay = 0.3;
        }
      }
      oc.lr = o.number("lr", oc.lr);
      oc.weight_decay = o.number("weight_decay", oc.weight_decay);
      oc.momentum = o.number("momentum", oc.momentum);
      oc.beta1 = o.number("beta1", oc.beta1);
      oc.beta2 = o.number("beta2", oc.beta2);
      oc.eps = o.number("eps", oc.eps);
      o.finish();
    }
    if (r.has("lr_schedule")) {
      ObjectReader s(r.child("lr_schedule"), "train.lr_schedule");
      auto& sc = t.lr_schedule;
      if (s.has("kind")) {
        const auto kind = s.string("kind", "");
        sc.kind = with_path(s.sub("kind"), [&] { return train::parse_schedule(kind); });
      }
      if (s.has("milestones")) {
        const json& m = s.child("milestones");
        if (!m.is_array()) {
          throw ConfigError("train.lr_schedule.milestones: expected an array of epochs");
        }
        sc.milestones.clear();
        for (const auto& e : m) {
          if (!is_count(e)) {
            throw ConfigError("train.lr_schedule.milestones: expected non-negative integers");
          }
          sc.milestones.push_back(e.get<std::size_t>());
        }
      }
      sc.factor = s.number("factor", sc.factor);
      sc.peak_fraction = s.number("peak_fraction", sc.peak_fraction);
      s.finish();
    }
    if (r.has("clip_norm")) {
      const json& v = r.child("clip_norm");
      if (v.is_null()) {
        t.clip_norm.reset();
      } else if (v.is_number()) {
        t.clip_norm = v.get<double>();
      } else {
        throw ConfigError("train.clip_norm: expected a number or null");
      }
    }
    if (r.has("attack")) {
      ObjectReader a(r.child("attack"), "train.attack");
      t.attack = attack_from_json(a, t.attack);
      a.finish();
    }
    if (r.has("warmup")) {
      ObjectReader w(r.child("warmup"), "train.warmup");
      if (w.has("mode")) {
        const auto mode = w.string("mode", "");
        t.warmup_mode = with_path(w.sub("mode"), [&] { return warmup::parse_mode(mode); });
      }
      t.warmup_epochs = w.size("epochs", t.warmup_epochs);
      w.finish();
    }
    if (r.has("augment")) {
      ObjectReader a(r.child("augment"), "train.augment");
      auto& ac = t.augment;
      ac.crop_pad = a.boolean("crop_pad", ac.crop_pad);
      ac.pad = a.size("pad", ac.pad);
      ac.hflip = a.boolean("hflip", ac.hflip);
      ac.mixup = a.boolean("mixup", ac.mixup);
      ac.mixup_alpha = a.number("mixup_alpha", ac.mixup_alpha);
      ac.cutmix = a.boolean("cutmix", ac.cutmix);
      ac.cutmix_alpha = a.number("cutmix_alpha", ac.cutmix_alpha);
      a.finish();
    }
    t.seed = r.u64("seed", t.seed);
    r.finish();
    with_path("train", [&] {
      t.validate();
      return 0;
    });
  }
  if (root.has("eval")) {
    ObjectReader r(root.child("eval"), "eval");
    c.eval.batch_size = r.size("batch_size", c.eval.batch_size);
    if (c.eval.batch_size == 0) {
      throw ConfigError("eval.batch_size: must be positive");
    }
    if (r.has("attacks")) {
      const json& list = r.child("attacks");
      if (!list.is_array()) {
        throw ConfigError("eval.attacks: expected an array");
      }
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string where = "eval.attacks[" + std::to_string(i) + "]";
        if (list[i].is_string()) {
          const auto name = list[i].get<std::string>();
          c.eval.attacks.push_back(
              with_path(where, [&] { return attacks::parse_attack(name, c.train.attack.epsilon); }));
        } else {
          ObjectReader a(list[i], where);
          attacks::NamedAttack na;
          na.name = a.string("name", "attack" + std::to_string(i));
          na.config = attack_from_json(a, attacks::AttackConfig{});
          a.finish();
          with_path(where, [&] {
            na.config.validate();
            return 0;
          });
          c.eval.attacks.push_back(na);
        }
      }
    }
    r.finish();
  }
  if (root.has("data")) {
    ObjectReader r(root.child("data"), "data");
    if (r.has("train")) {
      c.train_data = source_from_json(r.child("train"), "data.train");
    }
    if (r.has("test")) {
      c.test_data = source_from_json(r.child("test"), "data.test");
    }
    r.finish();
  }
  c.output_dir = root.string("output_dir", c.output_dir);
  root.finish();
  return c;
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(text, e.byte);
    std::ostringstream msg;
    msg << source << ": JSON syntax error at line " << line << ", column " << col << ": " << e.what();
    throw ConfigError(msg.str());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("ADVIT_SEED");
  if (!raw) {
    return std::nullopt;
  }
  const std::string s(raw);
  if (s.empty() || s.size() > 20 || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("ADVIT_SEED must be an unsigned integer, got \"" + s + "\"");
  }
  try {
    return std::stoull(s);
  } catch (const std::out_of_range&) {
    throw ConfigError("ADVIT_SEED is out of range: " + s);
  }
}

data::Dataset materialize(const DataSource& source, data::Split split) {
  if (source.path) {
    return data::load_dataset(*source.path, split);
  }
  auto spec = *source.synthetic;
  spec.split = split;
  return data::generate_synthetic(spec);
}

}  // namespace advit::config
