// Copyright 2026 The otfleet Authors
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

#include "otfleet/sim_world.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "otfleet/error.h"

namespace otfleet {
namespace {

constexpr double kPi = std::numbers::pi;

double WrapAngle(double a) {
  return std::remainder(a, 2.0 * kPi);
}

std::array<double, 2> Clip(std::array<double, 2> d, double limit) {
  const double norm = std::hypot(d[0], d[1]);
  if (norm > limit && norm > 0.0) {
    d[0] *= limit / norm;
    d[1] *= limit / norm;
  }
  return d;
}

struct PursuitGains {
  double gain;
  double speed;
  bool proportional;
};

// Goal-directed action for a given target object and perceived goal offset.
Action Pursue(const WorldState& s, int target_object,
              std::array<double, 2> goal_offset, const PursuitGains& gains,
              const SimConfig& config) {
  Action a{0.0, 0.0, 0.0, 0.0};
  auto move_toward = [&](double tx, double ty) {
    std::array<double, 2> d{tx - s.effector[0], ty - s.effector[1]};
    if (gains.proportional) {
      d = {gains.gain * d[0], gains.gain * d[1]};
    }
    d = Clip(d, gains.speed);
    a[0] = d[0];
    a[1] = d[1];
  };
  if (s.held >= 0 && s.held != target_object) {
    a[3] = -1.0;
    return a;
  }
  if (s.held < 0) {
    const ObjectPose& obj = s.objects[target_object];
    const double dist = std::hypot(obj.x - s.effector[0], obj.y - s.effector[1]);
    if (dist <= config.grasp_radius) {
      a[3] = 1.0;
    } else {
      move_toward(obj.x, obj.y);
    }
    return a;
  }
  const GoalSpec& g = s.goal;
  const ObjectPose& obj = s.objects[s.held];
  const double gx = g.x + goal_offset[0];
  const double gy = g.y + goal_offset[1];
  const double pos_err = std::hypot(gx - obj.x, gy - obj.y);
  const double ang_err = WrapAngle(g.theta - obj.theta);
  const bool angle_ok =
      !g.check_theta ||
      std::abs(ang_err) <= config.release_fraction * g.angle_tolerance;
  if (g.check_theta) {
    const double rate = gains.proportional ? config.rotation_gain * ang_err : ang_err;
    a[2] = std::clamp(rate, -config.rotation_speed, config.rotation_speed);
  }
  if (pos_err <= config.release_fraction * g.position_tolerance && angle_ok) {
    a[2] = 0.0;
    a[3] = -1.0;
    return a;
  }
  move_toward(gx, gy);
  return a;
}

const std::vector<TaskSpec> kTasks = [] {
  std::vector<TaskSpec> tasks;
  TaskSpec pour;
  pour.id = "pour";
  pour.effector_start = {0.40, 0.05, 0.60, 0.20};
  pour.object_start = {0.10, 0.15, 0.35, 0.40};
  pour.anchor_start = {0.60, 0.55, 0.85, 0.80};
  pour.goal_offset = {-0.10, 0.0};
  pour.goal_theta = 1.7;
  pour.check_theta = true;
  tasks.push_back(pour);

  TaskSpec hang;
  hang.id = "hang";
  hang.effector_start = {0.40, 0.80, 0.60, 0.95};
  hang.object_start = {0.10, 0.55, 0.35, 0.80};
  hang.anchor_start = {0.60, 0.15, 0.85, 0.40};
  hang.goal_offset = {0.0, 0.10};
  hang.goal_theta = 0.8;
  hang.check_theta = true;
  tasks.push_back(hang);

  TaskSpec pick;
  pick.id = "pick_place";
  pick.effector_start = {0.05, 0.05, 0.20, 0.20};
  pick.object_start = {0.10, 0.40, 0.40, 0.70};
  pick.anchor_start = {0.60, 0.30, 0.90, 0.70};
  pick.position_tolerance = 0.06;
  tasks.push_back(pick);

  TaskSpec fold;
  fold.id = "fold";
  fold.effector_start = {0.05, 0.45, 0.20, 0.60};
  fold.object_start = {0.20, 0.20, 0.45, 0.45};
  fold.anchor_start = {0.55, 0.55, 0.80, 0.80};
  fold.goal_theta = kPi / 2.0;
  fold.check_theta = true;
  fold.angle_tolerance = 0.25;
  tasks.push_back(fold);
  return tasks;
}();

}  // namespace

const std::vector<TaskSpec>& ShippedTasks() { return kTasks; }

const TaskSpec& FindTask(std::string_view task_id) {
  for (const TaskSpec& t : kTasks) {
    if (t.id == task_id) return t;
  }
  throw Error(ErrorCode::kConfig, "unknown task id '" + std::string(task_id) + "'");
}

std::string_view FailureModeName(FailureMode mode) {
  switch (mode) {
    case FailureMode::kDrift:
      return "drift";
    case FailureMode::kFreeze:
      return "freeze";
    case FailureMode::kWrongObject:
      return "wrong_object";
    case FailureMode::kOvershoot:
      return "overshoot";
  }
  return "drift";
}

FailureMode ParseFailureMode(std::string_view name) {
  for (FailureMode m : kAllFailureModes) {
    if (FailureModeName(m) == name) return m;
  }
  throw Error(ErrorCode::kParse, "unknown failure mode '" + std::string(name) + "'");
}

InjectionRecord FailureInjection::ToRecord() const {
  return {std::string(FailureModeName(mode)), onset, magnitude};
}

FeatureEncoder::FeatureEncoder(std::uint64_t projection_seed, std::size_t dim,
                               double clock_scale)
    : dim_(dim), clock_scale_(clock_scale) {
  if (dim < 2) throw Error(ErrorCode::kConfig, "encoder dimension must be >= 2");
  Rng rng(DeriveSeed(projection_seed, "encoder-projection"));
  projection_ = Matrix(dim - 1, kNumFeatures);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kNumFeatures));
  for (double& w : projection_.data()) w = rng.Normal() * scale;
  id_ = "sim-proj-d" + std::to_string(dim) + "-s" + std::to_string(projection_seed) +
        "-c" + std::to_string(static_cast<int>(clock_scale));
}

Embedding FeatureEncoder::Encode(const WorldState& s) const {
  const GoalSpec& g = s.goal;
  const ObjectPose& target = s.objects[g.object];
  const double ang = WrapAngle(target.theta - g.theta);
  const std::array<double, kNumFeatures> f = {
      s.effector[0] - g.x,
      s.effector[1] - g.y,
      s.effector[0] - s.objects[0].x,
      s.effector[1] - s.objects[0].y,
      s.effector[0] - s.objects[1].x,
      s.effector[1] - s.objects[1].y,
      target.x - g.x,
      target.y - g.y,
      std::cos(ang) - 1.0,
      std::sin(ang),
      s.held == 0 ? 1.0 : 0.0,
      s.held == 1 ? 1.0 : 0.0,
      static_cast<double>(s.clock) / clock_scale_,
  };
  Embedding e(dim_, 0.0);
  for (std::size_t r = 0; r + 1 < dim_; ++r) {
    double sum = 0.0;
    const auto w = projection_.row(r);
    for (std::size_t k = 0; k < kNumFeatures; ++k) sum += w[k] * f[k];
    e[r] = sum;
  }
  e[dim_ - 1] = 1.0;
  return e;
}

double ScriptedPolicy::FailureProbability(const SimConfig& config) const {
  return std::clamp(config.fail_prob_at_zero_skill * (1.0 - skill), 0.0, 1.0);
}

WorldState InitialState(const TaskSpec& task, Rng& rng) {
  auto sample = [&](const Box& b) {
    const double x = rng.Uniform(b.x0, b.x1);
    const double y = rng.Uniform(b.y0, b.y1);
    return std::array<double, 2>{x, y};
  };
  WorldState s;
  s.effector = sample(task.effector_start);
  const auto obj = sample(task.object_start);
  const auto anchor = sample(task.anchor_start);
  s.objects[0] = {obj[0], obj[1], task.object_theta};
  s.objects[1] = {anchor[0], anchor[1], 0.0};
  s.goal.object = 0;
  s.goal.x = anchor[0] + task.goal_offset[0];
  s.goal.y = anchor[1] + task.goal_offset[1];
  s.goal.theta = task.goal_theta;
  s.goal.check_theta = task.check_theta;
  s.goal.position_tolerance = task.position_tolerance;
  s.goal.angle_tolerance = task.angle_tolerance;
  s.clock = 1;
  return s;
}

WorldState ApplyAction(const WorldState& state, const Action& action,
                       const SimConfig& config) {
  WorldState next = state;
  next.clock = state.clock + 1;
  if (action[3] > 0.5 && next.held < 0) {
    int best = -1;
    double best_dist = config.grasp_radius;
    for (std::size_t k = 0; k < kNumObjects; ++k) {
      const double d = std::hypot(next.objects[k].x - next.effector[0],
                                  next.objects[k].y - next.effector[1]);
      if (d <= best_dist) {
        best = static_cast<int>(k);
        best_dist = d;
      }
    }
    next.held = best;
  } else if (action[3] < -0.5) {
    next.held = -1;
  }
  const double nx = state.effector[0] + action[0];
  const double ny = state.effector[1] + action[1];
  next.effector = {std::clamp(nx, 0.0, 1.0), std::clamp(ny, 0.0, 1.0)};
  next.clamped = next.effector[0] != nx || next.effector[1] != ny;
  if (next.held >= 0) {
    ObjectPose& obj = next.objects[next.held];
    obj.x = next.effector[0];
    obj.y = next.effector[1];
    obj.theta = obj.theta + action[2];
  }
  return next;
}

StepResult Step(const WorldState& state, const ScriptedPolicy& policy,
                const std::optional<FailureInjection>& injection,
                std::uint64_t noise_seed, const SimConfig& config) {
  const bool active = injection.has_value() && injection->ActiveAt(state.clock);
  PursuitGains gains{config.pursuit_gain, config.max_speed, true};
  int target = state.goal.object;
  std::array<double, 2> offset{0.0, 0.0};
  Action a{};
  if (active) {
    switch (injection->mode) {
      case FailureMode::kDrift: {
        const double amount =
            injection->magnitude * (state.clock - injection->onset + 1);
        offset = {amount * std::cos(injection->direction),
                  amount * std::sin(injection->direction)};
        break;
      }
      case FailureMode::kWrongObject:
        target = 1 - state.goal.object;
        break;
      case FailureMode::kOvershoot:
        gains.gain *= 1.0 + injection->magnitude;
        gains.speed *= 1.0 + injection->magnitude;
        break;
      case FailureMode::kFreeze:
        break;
    }
  }
  if (!(active && injection->mode == FailureMode::kFreeze)) {
    if (active && injection->mode == FailureMode::kDrift && state.held < 0) {
      // The perceived grasp point drifts too.
      WorldState shifted = state;
      for (auto& o : shifted.objects) {
        o.x += offset[0];
        o.y += offset[1];
      }
      a = Pursue(shifted, target, offset, gains, config);
    } else {
      a = Pursue(state, target, offset, gains, config);
    }
    Rng noise(DeriveSeed(noise_seed, "action-noise",
                         static_cast<std::uint64_t>(state.clock)));
    a[0] += policy.noise_scale * noise.Normal();
    a[1] += policy.noise_scale * noise.Normal();
    if (state.goal.check_theta && state.held >= 0) {
      a[2] += 2.0 * policy.noise_scale * noise.Normal();
    }
  }
  return {ApplyAction(state, a, config), a};
}

bool EvaluateSuccess(const WorldState& s) {
  const GoalSpec& g = s.goal;
  if (s.held == g.object) return false;
  const ObjectPose& obj = s.objects[g.object];
  if (std::hypot(obj.x - g.x, obj.y - g.y) > g.position_tolerance) return false;
  if (g.check_theta && std::abs(WrapAngle(obj.theta - g.theta)) > g.angle_tolerance) {
    return false;
  }
  return true;
}

WorldState Restore(std::span<const WorldState> refs, std::size_t t) {
  if (t < 1 || t > refs.size()) {
    throw Error(ErrorCode::kIndex, "timestep " + std::to_string(t) +
                                       " not recorded (have " +
                                       std::to_string(refs.size()) + ")");
  }
  return refs[t - 1];
}

Action OracleOperator(const WorldState& state, const SimConfig& config) {
  if (EvaluateSuccess(state)) return {0.0, 0.0, 0.0, 0.0};
  return Pursue(state, state.goal.object, {0.0, 0.0},
                {1.0, config.max_speed, false}, config);
}

std::size_t CountInterventionSteps(std::span<const Episode> buffer) {
  std::size_t k = 0;
  for (const Episode& e : buffer) {
    for (bool f : e.trajectory.intervention_flags) k += f ? 1 : 0;
  }
  return k;
}

ScriptedPolicy PostTrain(const ScriptedPolicy& policy,
                         std::span<const Episode> buffer,
                         const PostTrainConfig& config) {
  ScriptedPolicy next = policy;
  const double k = static_cast<double>(CountInterventionSteps(buffer));
  next.skill = std::min(1.0, policy.skill + config.gain * (k / config.normalizer));
  return next;
}

FailureInjection MakeInjection(FailureMode mode, int onset, Rng& rng,
                               const SimConfig& config) {
  FailureInjection inj;
  inj.mode = mode;
  inj.onset = onset;
  switch (mode) {
    case FailureMode::kDrift:
      inj.magnitude = config.drift_magnitude;
      break;
    case FailureMode::kOvershoot:
      inj.magnitude = config.overshoot_magnitude;
      break;
    case FailureMode::kFreeze:
    case FailureMode::kWrongObject:
      inj.magnitude = 1.0;
      break;
  }
  inj.direction = rng.Uniform(0.0, 2.0 * kPi);
  return inj;
}

std::optional<FailureInjection> SampleInjection(const ScriptedPolicy& policy,
                                                Rng& rng,
                                                const SimConfig& config) {
  // Draw every variate unconditionally so the stream position does not
  // depend on the outcome.
  const bool inject = rng.Bernoulli(policy.FailureProbability(config));
  const auto mode = kAllFailureModes[rng.UniformInt(0, kAllFailureModes.size() - 1)];
  const int onset = static_cast<int>(rng.UniformInt(config.onset_min, config.onset_max));
  FailureInjection inj = MakeInjection(mode, onset, rng, config);
  if (!inject) return std::nullopt;
  return inj;
}

void RecordObservation(Trajectory& trajectory, const WorldState& state,
                       const FeatureEncoder& encoder) {
  trajectory.embeddings.push_back(encoder.Encode(state));
  trajectory.actions.emplace_back(kActionDim, 0.0);
  trajectory.states.push_back(state);
  trajectory.intervention_flags.push_back(false);
}

std::vector<Episode> GenerateExpertDemos(std::string_view task_id,
                                         std::size_t count, std::uint64_t seed,
                                         const FeatureEncoder& encoder,
                                         const SimConfig& config) {
  const TaskSpec& task = FindTask(task_id);
  SimConfig demo_config = config;
  demo_config.max_speed *= config.demo_speed_factor;
  demo_config.rotation_speed *= config.demo_speed_factor;
  ScriptedPolicy expert{1.0, config.demo_noise, seed};
  std::vector<Episode> demos;
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint64_t episode_seed = DeriveSeed(seed, task.id + "/demo", n);
    Episode e = RunScriptedEpisode(task, expert, std::nullopt, episode_seed,
                                   static_cast<std::size_t>(config.demo_step_cap),
                                   encoder, demo_config);
    if (!e.success.value_or(false)) {
      throw Error(ErrorCode::kSolver, "expert demo " + std::to_string(n) +
                                          " for task " + task.id +
                                          " did not reach the goal");
    }
    e.id = n;
    demos.push_back(std::move(e));
  }
  return demos;
}

Episode RunScriptedEpisode(const TaskSpec& task, const ScriptedPolicy& policy,
                           const std::optional<FailureInjection>& injection,
                           std::uint64_t episode_seed, std::size_t l_max,
                           const FeatureEncoder& encoder,
                           const SimConfig& config) {
  Rng init(DeriveSeed(episode_seed, "initial-state"));
  WorldState state = InitialState(task, init);
  Episode episode;
  episode.task_id = task.id;
  episode.encoder_id = encoder.id();
  Trajectory& traj = episode.trajectory;
  while (true) {
    RecordObservation(traj, state, encoder);
    if (EvaluateSuccess(state) || traj.length() >= l_max) break;
    const StepResult step = Step(state, policy, injection, episode_seed, config);
    traj.actions.back().assign(step.action.begin(), step.action.end());
    state = step.state;
  }
  episode.success = EvaluateSuccess(state);
  if (injection.has_value()) episode.injection = injection->ToRecord();
  return episode;
}

}  // namespace otfleet
