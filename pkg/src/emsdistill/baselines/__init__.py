from .dataset import (ActorFactory, NoisyPolicy, SchedulePolicy, generate_offline_dataset,
                      generate_trajectories)
from .ddpg import DDPGActor, DDPGConfig, DDPGResult, ReplayBuffer, build_ddpg, ddpg_train, ddpg_update, soft_update
from .rules import RuleBasedPolicy, no_battery_cost, rule_based_action

__all__ = ["ActorFactory", "NoisyPolicy", "SchedulePolicy", "generate_offline_dataset", "generate_trajectories",
           "DDPGActor", "DDPGConfig", "DDPGResult", "ReplayBuffer", "build_ddpg", "ddpg_train", "ddpg_update",
           "soft_update", "RuleBasedPolicy",
           "no_battery_cost", "rule_based_action"]
