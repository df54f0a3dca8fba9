"""
Training the dispatcher and comparing it with a uniform-random policy
"""

import logging

from ppgl_dispatch.env import RewardConfig, generate_corpus
from ppgl_dispatch.orchestrator import evaluate, uniform_selector
from ppgl_dispatch.trainer import TrainConfig, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

held_out = generate_corpus(300, 99)

## Baseline first: a policy that picks any of the 31 actions uniformly
base = evaluate(uniform_selector(0), held_out)
print("uniform: return %.3f, malformed %.2f" % (base["mean_reward"], base["malformed_rate"]))

## 300 iterations of 16 episodes each, a few seconds on one core
policy, curve = train(train_config=TrainConfig(seed=0))
for rec in curve[::50]:
    print(rec["iteration"], round(rec["mean_return"], 3), round(rec["mean_length"], 2))

m = evaluate(policy, held_out, mode="sample")
print("trained: return %.3f, tool calls %.2f, malformed %.4f, GAPP MAE %.3f"
      % (m["mean_reward"], m["mean_tool_calls"], m["malformed_rate"], m["gapp_total_mae"]))

## Without the redundancy penalty the policy repeats itself more
ablation, _ = train(reward_config=RewardConfig(lambda2=0.0), train_config=TrainConfig(seed=0))
a = evaluate(ablation, held_out, mode="sample")
print("no redundancy penalty: tool calls %.2f, repeated-call rate %.3f" % (a["mean_tool_calls"], a["redundant_rate"]))
