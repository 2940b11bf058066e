// SPDX-License-Identifier: Apache-2.0
#include "scmd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "scmd/error.hpp"

namespace scmd {
namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

template <typename T>
struct is_pair : std::false_type {};
template <typename A, typename B>
struct is_pair<std::pair<A, B>> : std::true_type {};

template <typename T>
struct is_optional : std::false_type {};
template <typename T>
struct is_optional<std::optional<T>> : std::true_type {};

struct Problems {
  std::vector<std::string> unknown;
  std::vector<std::string> invalid;
};

/// Reads fields of one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const Json* node, std::string path, Problems& problems)
      : node_(node), path_(std::move(path)), problems_(problems) {
    if (node_ != nullptr && !node_->is_object()) {
      problems_.invalid.push_back(label() + ": expected an object");
      node_ = nullptr;
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  ~Section() {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      if (!known_.contains(key)) problems_.unknown.push_back(join(key));
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    known_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    convert(node_->at(key), join(key), out);
  }

  Section sub(const char* key) {
    known_.insert(key);
    const Json* child = node_ != nullptr && node_->contains(key) ? &node_->at(key) : nullptr;
    return Section(child, join(key), problems_);
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void convert(const Json& j, const std::string& where, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) return bad(where, "a boolean");
      out = j.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!j.is_number_unsigned()) return bad(where, "a non-negative integer");
      out = j.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) return bad(where, "an integer");
      out = j.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) return bad(where, "a number");
      out = j.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) return bad(where, "a string");
      out = j.get<std::string>();
    } else if constexpr (is_optional<T>::value) {
      if (j.is_null()) {
        out.reset();
        return;
      }
      typename T::value_type v{};
      convert(j, where, v);
      out = v;
    } else if constexpr (is_pair<T>::value) {
      if (!j.is_array() || j.size() != 2) return bad(where, "a two-element array");
      convert(j[0], where + "[0]", out.first);
      convert(j[1], where + "[1]", out.second);
    } else if constexpr (is_vector<T>::value) {
      if (!j.is_array()) return bad(where, "an array");
      out.assign(j.size(), typename T::value_type{});
      for (std::size_t i = 0; i < j.size(); ++i) {
        typename T::value_type v{};
        convert(j[i], where + "[" + std::to_string(i) + "]", v);
        out[i] = v;
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  void bad(const std::string& where, const char* expected) {
    problems_.invalid.push_back(where + ": expected " + expected);
  }

  const Json* node_;
  std::string path_;
  Problems& problems_;
  std::set<std::string> known_;
};

template <typename E, typename Parse>
void get_enum(Section& s, const char* key, E& out, Parse parse, Problems& problems, const char* path) {
  std::optional<std::string> name;
  s.get(key, name);
  if (!name) return;
  try {
    out = parse(*name);
  } catch (const Error& e) {
    problems.invalid.push_back(std::string(path) + "." + key + ": " + e.what());
  }
}

void parse_document(const Json& doc, RunConfig& c, Problems& p) {
  Section root(&doc, "", p);
  {
    Section s = root.sub("data");
    s.get("num_classes", c.data.synthetic.num_classes);
    s.get("num_domains", c.data.synthetic.num_domains);
    s.get("samples_per_domain", c.data.synthetic.samples_per_domain);
    s.get("feature_dim", c.data.synthetic.feature_dim);
    s.get("shift_strength", c.data.synthetic.shift_strength);
    s.get("noise", c.data.synthetic.noise);
    s.get("seed", c.data.synthetic.seed);
    s.get("path", c.data.path);
  }
  {
    Section s = root.sub("teacher");
    s.get("embed_dim", c.teacher.oracle.embed_dim);
    s.get("anchor_seed", c.teacher.oracle.anchor_seed);
    s.get("image_noise", c.teacher.oracle.image_noise);
    s.get("logit_scale", c.teacher.oracle.logit_scale);
    s.get("prompt_template", c.teacher.oracle.prompt_template);
    s.get("artifact", c.teacher.artifact);
  }
  {
    Section s = root.sub("student");
    s.get("hidden_dims", c.train.hidden_dims);
    s.get("projector_bias", c.train.projector_bias);
    s.get("embed_dim_without_teacher", c.train.embed_dim_without_teacher);
  }
  {
    Section s = root.sub("train");
    get_enum(s, "optimizer", c.train.optimizer, parse_optimizer, p, "train");
    s.get("lr", c.train.lr);
    s.get("weight_decay", c.train.weight_decay);
    s.get("momentum", c.train.momentum);
    s.get("batch_size", c.train.batch_size);
    s.get("total_steps", c.train.total_steps);
    s.get("ma_start_frac", c.train.ma_start_frac);
    s.get("eval_every", c.train.eval_every);
    s.get("seed", c.train.seed);
    Section l = s.sub("loss");
    l.get("ce_weight", c.train.loss.ce_weight);
    l.get("logits_weight", c.train.loss.logits_weight);
    l.get("cm_weight", c.train.loss.cm_weight);
    l.get("temperature", c.train.loss.temperature);
    l.get("gamma", c.train.loss.gamma);
    l.get("scale_by_t_squared", c.train.loss.scale_by_t_squared);
  }
  {
    Section s = root.sub("selection");
    get_enum(s, "strategy", c.train.selection.strategy, parse_strategy, p, "selection");
    s.get("fraction", c.train.selection.fraction);
    s.get("focal_gamma", c.train.selection.focal_gamma);
  }
  {
    Section s = root.sub("schedule");
    s.get("full_batch_fraction", c.train.full_batch_fraction);
  }
  {
    Section s = root.sub("experiment");
    s.get("algorithm", c.experiment.algorithm);
    s.get("algorithms", c.experiment.algorithms);
    s.get("held_out", c.experiment.held_out);
    s.get("held_out_domains", c.experiment.held_out_domains);
    s.get("seeds", c.experiment.seeds);
    s.get("train_fraction", c.experiment.train_fraction);
  }
  {
    Section s = root.sub("sweep");
    s.get("n_trials", c.sweep.n_trials);
    s.get("seeds_per_trial", c.sweep.seeds_per_trial);
    s.get("sweep_seed", c.sweep.sweep_seed);
    Section r = s.sub("space");
    r.get("logits_weight", c.sweep.space.logits_weight);
    r.get("cm_weight", c.sweep.space.cm_weight);
    r.get("full_batch_fraction", c.sweep.space.full_batch_fraction);
    r.get("selection_fraction", c.sweep.space.selection_fraction);
    r.get("temperature", c.sweep.space.temperature);
    r.get("lr", c.sweep.space.lr);
    r.get("weight_decay", c.sweep.space.weight_decay);
  }
  {
    Section s = root.sub("theory");
    s.get("seed", c.theory.seed);
    s.get("lemma1_trials", c.theory.lemma1_trials);
    s.get("lemma1_max_support", c.theory.lemma1_max_support);
    s.get("lemma2_support", c.theory.lemma2_support);
    s.get("lemma2_class_size", c.theory.lemma2_class_size);
    s.get("lemma2_n", c.theory.lemma2_n);
    s.get("lemma2_delta", c.theory.lemma2_delta);
    s.get("lemma2_resamples", c.theory.lemma2_resamples);
    s.get("lemma3_trials", c.theory.lemma3_trials);
    Section l = s.sub("lemma3");
    l.get("family_size", c.theory.lemma3.family_size);
    l.get("support_size", c.theory.lemma3.support_size);
    l.get("fixed_alphas", c.theory.lemma3.fixed_alphas);
    l.get("cluster_alpha", c.theory.lemma3.cluster_alpha);
    l.get("outlier_alpha", c.theory.lemma3.outlier_alpha);
    l.get("num_outliers", c.theory.lemma3.num_outliers);
  }
  root.get("output_dir", c.output_dir);
}

void check_values(const RunConfig& c) {
  const auto& d = c.data.synthetic;
  if (d.num_classes < 2 || d.num_domains < 1 || d.samples_per_domain < 1 || d.feature_dim < 2) {
    throw Error(ErrorKind::kConfiguration, "data: need num_classes >= 2, num_domains >= 1, "
                                           "samples_per_domain >= 1 and feature_dim >= 2");
  }
  if (c.teacher.oracle.embed_dim < 1) throw Error(ErrorKind::kConfiguration, "teacher.embed_dim must be >= 1");
  validate(c.train);
  for (const auto& a : c.experiment.algorithms) parse_algorithm(a);
  parse_algorithm(c.experiment.algorithm);
  if (!(c.experiment.train_fraction > 0.0 && c.experiment.train_fraction < 1.0)) {
    throw Error(ErrorKind::kConfiguration, "experiment.train_fraction must lie in (0, 1)");
  }
  if (c.experiment.seeds.empty()) throw Error(ErrorKind::kConfiguration, "experiment.seeds is empty");
}

Json pair_json(const std::pair<double, double>& p) { return Json::array({p.first, p.second}); }

}  // namespace

RunConfig parse_run_config(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::kConfiguration, "config must be a JSON object");
  RunConfig c;
  Problems p;
  parse_document(doc, c, p);
  if (!p.unknown.empty() || !p.invalid.empty()) {
    std::ostringstream os;
    if (!p.unknown.empty()) {
      os << "unknown keys:";
      for (const auto& k : p.unknown) os << ' ' << k;
    }
    if (!p.invalid.empty()) {
      if (!p.unknown.empty()) os << "; ";
      os << "invalid values:";
      for (std::size_t i = 0; i < p.invalid.size(); ++i) os << (i ? ", " : " ") << p.invalid[i];
    }
    throw Error(ErrorKind::kConfiguration, os.str());
  }
  try {
    check_values(c);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfiguration) throw;
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::kConfiguration, path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

Json to_json(const SyntheticConfig& c) {
  return Json{{"num_classes", c.num_classes},
              {"num_domains", c.num_domains},
              {"samples_per_domain", c.samples_per_domain},
              {"feature_dim", c.feature_dim},
              {"shift_strength", c.shift_strength},
              {"noise", c.noise},
              {"seed", c.seed}};
}

Json to_json(const OracleTeacherConfig& c) {
  return Json{{"embed_dim", c.embed_dim},
              {"anchor_seed", c.anchor_seed},
              {"image_noise", c.image_noise},
              {"logit_scale", c.logit_scale},
              {"prompt_template", c.prompt_template}};
}

Json to_json(const TrainConfig& c) {
  Json loss{{"ce_weight", c.loss.ce_weight},
            {"logits_weight", c.loss.logits_weight},
            {"cm_weight", c.loss.cm_weight},
            {"temperature", c.loss.temperature},
            {"gamma", c.loss.gamma ? Json(*c.loss.gamma) : Json(nullptr)},
            {"scale_by_t_squared", c.loss.scale_by_t_squared}};
  return Json{{"optimizer", std::string(to_string(c.optimizer))},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"total_steps", c.total_steps},
              {"ma_start_frac", c.ma_start_frac},
              {"eval_every", c.eval_every},
              {"seed", c.seed},
              {"loss", loss},
              {"selection",
               {{"strategy", std::string(to_string(c.selection.strategy))},
                {"fraction", c.selection.fraction},
                {"focal_gamma", c.selection.focal_gamma}}},
              {"full_batch_fraction", c.full_batch_fraction},
              {"hidden_dims", c.hidden_dims},
              {"projector_bias", c.projector_bias},
              {"embed_dim_without_teacher", c.embed_dim_without_teacher}};
}

Json to_json(const StudentConfig& c) {
  return Json{{"input_dim", c.input_dim},
              {"hidden_dims", c.hidden_dims},
              {"num_classes", c.num_classes},
              {"teacher_embed_dim", c.teacher_embed_dim},
              {"init_seed", c.init_seed},
              {"projector_bias", c.projector_bias}};
}

Json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  Json data = to_json(c.data.synthetic);
  data["path"] = c.data.path ? Json(*c.data.path) : Json(nullptr);
  Json teacher = to_json(c.teacher.oracle);
  teacher["artifact"] = c.teacher.artifact ? Json(*c.teacher.artifact) : Json(nullptr);
  Json train = to_json(t);
  for (const char* moved : {"selection", "full_batch_fraction", "hidden_dims", "projector_bias",
                            "embed_dim_without_teacher"}) {
    train.erase(moved);
  }
  const auto& l3 = c.theory.lemma3;
  return Json{
      {"data", data},
      {"teacher", teacher},
      {"student",
       {{"hidden_dims", t.hidden_dims},
        {"projector_bias", t.projector_bias},
        {"embed_dim_without_teacher", t.embed_dim_without_teacher}}},
      {"train", train},
      {"selection",
       {{"strategy", std::string(to_string(t.selection.strategy))},
        {"fraction", t.selection.fraction},
        {"focal_gamma", t.selection.focal_gamma}}},
      {"schedule", {{"full_batch_fraction", t.full_batch_fraction}}},
      {"experiment",
       {{"algorithm", c.experiment.algorithm},
        {"algorithms", c.experiment.algorithms},
        {"held_out", c.experiment.held_out},
        {"held_out_domains", c.experiment.held_out_domains},
        {"seeds", c.experiment.seeds},
        {"train_fraction", c.experiment.train_fraction}}},
      {"sweep",
       {{"n_trials", c.sweep.n_trials},
        {"seeds_per_trial", c.sweep.seeds_per_trial},
        {"sweep_seed", c.sweep.sweep_seed},
        {"space",
         {{"logits_weight", pair_json(c.sweep.space.logits_weight)},
          {"cm_weight", pair_json(c.sweep.space.cm_weight)},
          {"full_batch_fraction", pair_json(c.sweep.space.full_batch_fraction)},
          {"selection_fraction", c.sweep.space.selection_fraction},
          {"temperature", pair_json(c.sweep.space.temperature)},
          {"lr", c.sweep.space.lr},
          {"weight_decay", c.sweep.space.weight_decay}}}}},
      {"theory",
       {{"seed", c.theory.seed},
        {"lemma1_trials", c.theory.lemma1_trials},
        {"lemma1_max_support", c.theory.lemma1_max_support},
        {"lemma2_support", c.theory.lemma2_support},
        {"lemma2_class_size", c.theory.lemma2_class_size},
        {"lemma2_n", c.theory.lemma2_n},
        {"lemma2_delta", c.theory.lemma2_delta},
        {"lemma2_resamples", c.theory.lemma2_resamples},
        {"lemma3_trials", c.theory.lemma3_trials},
        {"lemma3",
         {{"family_size", l3.family_size},
          {"support_size", l3.support_size},
          {"fixed_alphas", l3.fixed_alphas ? Json(*l3.fixed_alphas) : Json(nullptr)},
          {"cluster_alpha", pair_json(l3.cluster_alpha)},
          {"outlier_alpha", pair_json(l3.outlier_alpha)},
          {"num_outliers", l3.num_outliers}}}}},
      {"output_dir", c.output_dir}};
}

Json to_json(const theory::Lemma1Report& r) {
  return Json{{"trials", r.trials},
              {"violations", r.violations},
              {"max_excess", r.max_excess},
              {"mean_slack", r.mean_slack}};
}

Json to_json(const theory::Lemma2Report& r) {
  return Json{{"resamples", r.resamples},
              {"violations", r.violations},
              {"violation_rate", r.violation_rate},
              {"delta", r.delta},
              {"allowed_rate", r.allowed_rate},
              {"tv", r.tv},
              {"mean_rademacher", r.mean_rademacher},
              {"mean_xi", r.mean_xi},
              {"mean_slack", r.mean_slack}};
}

Json to_json(const theory::Lemma3Report& r) {
  return Json{{"trials", r.trials},
              {"mean_residual", r.mean_residual},
              {"max_residual", r.max_residual},
              {"mean_residual_s1", r.mean_residual_s1},
              {"max_residual_s1", r.max_residual_s1},
              {"e_tv_s1", r.e_tv_s1},
              {"e_tv_s2", r.e_tv_s2},
              {"e_tv_s2_exact", r.e_tv_s2_exact},
              {"e_tv_inf", r.e_tv_inf},
              {"conclusion_holds", r.conclusion_holds},
              {"assumption_holds", r.assumption_holds}};
}

Json to_json(const TrainReport& r, const RunConfig* run) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json steps = Json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step},
                     {"total", s.total},
                     {"ce", s.ce},
                     {"logits", s.logits},
                     {"cm", s.cm},
                     {"batch_size", s.batch_size},
                     {"selected", s.selected},
                     {"full_batch", s.full_batch}});
  }
  Json evals = Json::array();
  for (const auto& e : r.evals) {
    evals.push_back({{"step", e.step},
                     {"val_raw", e.val_raw},
                     {"test_raw", e.test_raw},
                     {"val_ma", opt(e.val_ma)},
                     {"test_ma", opt(e.test_ma)}});
  }
  Json out{{"format", "scmd-train-report"},
           {"format_version", 1},
           {"fidelity_note", kFidelityNote},
           {"train_config", to_json(r.config)},
           {"student", to_json(r.student)},
           {"num_parameters", r.final_params.parameter_count()},
           {"steps", steps},
           {"evals", evals},
           {"final",
            {{"val_raw", r.final_val_raw},
             {"test_raw", r.final_test_raw},
             {"val_ma", opt(r.final_val_ma)},
             {"test_ma", opt(r.final_test_ma)}}},
           {"selected",
            {{"eval_index", r.selected_eval},
             {"step", r.selected_step},
             {"val", r.selected_val},
             {"test", r.selected_test}}}};
  if (run != nullptr) out["run_config"] = to_json(*run);
  out["wall_clock_seconds"] = r.wall_clock_seconds;
  return out;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace scmd
