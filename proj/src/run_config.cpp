#include "mmkd/run_config.hpp"

#include "json_io.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

using json_io::json;
using json_io::read_opt;
using json_io::reject_unknown;

NetworkConfig network_preset(const std::string& name) {
  if (name == "desk") return NetworkConfig::desk();
  if (name == "paper") return NetworkConfig::paper();
  throw Error(ErrorKind::Config, "unknown network preset '" + name + "'");
}

void RunConfig::finalize() {
  train.seed = seed;
  train.method = method;
  train.kd = distill;
  // Upsampled teacher maps pair with full-length student streams.
  if (method == KdMethod::EdamTUp) network.student_downsample = false;
}

void RunConfig::validate() const {
  if (role == Role::Student && (config < 1 || config > 5)) {
    throw Error(ErrorKind::Config, "student config must be 1..5, got " + std::to_string(config));
  }
  if (role == Role::Teacher && method != KdMethod::None) {
    throw Error(ErrorKind::Config, "teachers are trained without distillation");
  }
  if (method != KdMethod::None && !teacher) {
    throw Error(ErrorKind::Config, std::string("method ") + kd_method_name(method) + " needs a teacher checkpoint");
  }
  if (method == KdMethod::EdamTUp && network.student_downsample) {
    throw Error(ErrorKind::Config, "edam_t_up needs full-length student streams");
  }
  network.validate();
  distill.validate();
  train.validate();
}

std::string RunConfig::label() const {
  if (role == Role::Teacher) return std::string("teacher/") + branch_name(branch);
  return "student/" + std::to_string(config) + "/" + kd_method_name(method);
}

RunConfig run_config_from_json(const std::string& text, bool validate) {
  const json j = json_io::parse(text, ErrorKind::Config, "run config");
  reject_unknown(j,
                 {"role", "branch", "config", "method", "preset", "network", "distill", "train", "data", "split",
                  "split_seed", "seed", "teacher"},
                 "run config");
  RunConfig c;
  std::string role = "student", branch = branch_name(c.branch), method = "none";
  read_opt(j, "role", role, "run config");
  if (role == "teacher") {
    c.role = Role::Teacher;
  } else if (role != "student") {
    throw Error(ErrorKind::Config, "role must be 'teacher' or 'student', got '" + role + "'");
  }
  read_opt(j, "branch", branch, "run config");
  c.branch = branch_from_name(branch);
  read_opt(j, "config", c.config, "run config");
  read_opt(j, "method", method, "run config");
  c.method = kd_method_from_name(method);
  read_opt(j, "preset", c.preset, "run config");
  c.network = network_preset(c.preset);
  if (j.contains("network")) c.network = json_io::network_config_from_json(j.at("network"), c.network, "network");

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    reject_unknown(d, {"alpha", "beta", "temperature", "crd_temperature", "crd_dim", "epsilon"}, "distill");
    read_opt(d, "alpha", c.distill.alpha, "distill");
    read_opt(d, "beta", c.distill.beta, "distill");
    read_opt(d, "temperature", c.distill.temperature, "distill");
    read_opt(d, "crd_temperature", c.distill.crd_temperature, "distill");
    read_opt(d, "crd_dim", c.distill.crd_dim, "distill");
    read_opt(d, "epsilon", c.distill.epsilon, "distill");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"epochs", "batch", "lr", "patience", "factor", "clip_norm", "beta1", "beta2", "adam_epsilon"},
                   "train");
    read_opt(t, "epochs", c.train.epochs, "train");
    read_opt(t, "batch", c.train.batch, "train");
    read_opt(t, "lr", c.train.lr, "train");
    read_opt(t, "patience", c.train.patience, "train");
    read_opt(t, "factor", c.train.factor, "train");
    read_opt(t, "clip_norm", c.train.clip_norm, "train");
    read_opt(t, "beta1", c.train.adam.beta1, "train");
    read_opt(t, "beta2", c.train.adam.beta2, "train");
    read_opt(t, "adam_epsilon", c.train.adam.epsilon, "train");
  }
  read_opt(j, "data", c.data, "run config");
  read_opt(j, "split", c.split, "run config");
  read_opt(j, "split_seed", c.split_seed, "run config");
  read_opt(j, "seed", c.seed, "run config");
  if (j.contains("teacher")) {
    std::string t;
    read_opt(j, "teacher", t, "run config");
    c.teacher = t;
  }
  c.finalize();
  if (validate) c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json j{{"role", c.role == Role::Teacher ? "teacher" : "student"},
         {"method", kd_method_name(c.method)},
         {"preset", c.preset},
         {"network", json_io::network_config_to_json(c.network)},
         {"distill",
          {{"alpha", c.distill.alpha},
           {"beta", c.distill.beta},
           {"temperature", c.distill.temperature},
           {"crd_temperature", c.distill.crd_temperature},
           {"crd_dim", c.distill.crd_dim},
           {"epsilon", c.distill.epsilon}}},
         {"train",
          {{"epochs", c.train.epochs},
           {"batch", c.train.batch},
           {"lr", c.train.lr},
           {"patience", c.train.patience},
           {"factor", c.train.factor},
           {"clip_norm", c.train.clip_norm},
           {"beta1", c.train.adam.beta1},
           {"beta2", c.train.adam.beta2},
           {"adam_epsilon", c.train.adam.epsilon}}},
         {"data", c.data},
         {"split", c.split},
         {"split_seed", c.split_seed},
         {"seed", c.seed}};
  if (c.role == Role::Teacher) {
    j["branch"] = branch_name(c.branch);
  } else {
    j["config"] = c.config;
  }
  if (c.teacher) j["teacher"] = *c.teacher;
  return j.dump(2);
}

Network build_network(const RunConfig& cfg) {
  if (cfg.role == Role::Teacher) return build_teacher(cfg.branch, cfg.network, cfg.seed);
  return build_student(cfg.config, cfg.network, cfg.seed);
}

std::vector<TableRow> table_rows() {
  std::vector<TableRow> rows;
  const auto teacher_row = [&](const std::string& group, TeacherBranch b) {
    RunConfig r;
    r.role = Role::Teacher;
    r.branch = b;
    r.finalize();
    rows.push_back({group, std::string("teacher/") + branch_name(b), r});
  };
  const auto student_row = [&](const std::string& group, int config, KdMethod m) {
    RunConfig r;
    r.config = config;
    r.method = m;
    if (m != KdMethod::None) r.teacher = std::string("teacher_") + branch_name(teacher_for_config(config)) + ".ckpt";
    r.finalize();
    rows.push_back({group, std::string("student/") + kd_method_name(m), r});
  };

  student_row("baseline", 5, KdMethod::None);
  teacher_row("complete", TeacherBranch::Complete);
  student_row("complete", 1, KdMethod::EdamSDown);
  teacher_row("video", TeacherBranch::Video);
  for (auto m : {KdMethod::CrdFinal, KdMethod::CrdPenultimate, KdMethod::CrdAttentionMap}) student_row("video", 2, m);
  teacher_row("language", TeacherBranch::Language);
  for (auto m : {KdMethod::CrdFinal, KdMethod::CrdPenultimate}) student_row("language", 3, m);
  teacher_row("audio", TeacherBranch::Audio);
  for (auto m : {KdMethod::CrdFinal, KdMethod::CrdPenultimate}) student_row("audio", 4, m);
  teacher_row("language+audio", TeacherBranch::Complete);
  for (auto m : {KdMethod::CrdFinal, KdMethod::CrdPenultimate, KdMethod::CrdPostAttention, KdMethod::CrdAttentionMap,
                 KdMethod::EdamSDown, KdMethod::EdamTUp}) {
    student_row("language+audio", 5, m);
  }
  return rows;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
