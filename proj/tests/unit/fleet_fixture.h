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

// In-memory banks and fleet construction for tests that need a small world.

#ifndef OTFLEET_TESTS_UNIT_FLEET_FIXTURE_H_
#define OTFLEET_TESTS_UNIT_FLEET_FIXTURE_H_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "otfleet/experiment.h"
#include "otfleet/fleet.h"

namespace otfleet::testing {

class SmallWorld {
 public:
  explicit SmallWorld(ExperimentConfig config)
      : config_(std::move(config)), encoder_(MakeEncoder(config_)) {
    const SeedPlan seeds{config_.seed};
    for (const std::string& task : config_.tasks) {
      banks_[task] = std::make_shared<const DemoBank>(DemoBank::Build(
          GenerateExpertDemos(task, config_.num_demos, seeds.Demos(task),
                              encoder_, config_.sim),
          encoder_.id()));
    }
  }

  // Small defaults: few demos and calibration rollouts so fleets build fast.
  static ExperimentConfig SmallConfig() {
    ExperimentConfig c;
    c.tasks = {"pour", "pick_place"};
    c.num_demos = 8;
    c.calibration_rollouts = 8;
    c.rollouts_per_task = 6;
    c.num_robots = 2;
    c.num_oracle_operators = 1;
    c.episodes_per_round = 6;
    c.rounds = 2;
    return c;
  }

  const ExperimentConfig& config() const { return config_; }
  const FeatureEncoder& encoder() const { return encoder_; }
  const std::map<std::string, std::shared_ptr<const DemoBank>>& banks() const {
    return banks_;
  }

  FleetConfig MakeFleetConfigFor() const { return MakeFleetConfig(config_); }

  // Fresh detectors every call, so fleets never share calibration.
  std::unique_ptr<Fleet> MakeFleet(const FleetConfig& fleet_config,
                                   double skill) const {
    return std::make_unique<Fleet>(
        fleet_config, BuildFleetResources(config_, banks_), encoder_,
        ScriptedPolicy{skill, config_.policy_noise,
                       SeedPlan{config_.seed}.PolicyNoise()});
  }

 private:
  ExperimentConfig config_;
  FeatureEncoder encoder_;
  std::map<std::string, std::shared_ptr<const DemoBank>> banks_;
};

}  // namespace otfleet::testing

#endif  // OTFLEET_TESTS_UNIT_FLEET_FIXTURE_H_
