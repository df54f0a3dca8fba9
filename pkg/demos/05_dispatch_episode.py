"""
One diagnostic episode by hand, then the scripted oracle, then the audit trail
"""

import tempfile
from pathlib import Path

from ppgl_dispatch.audit import AuditLog, log_episode, replay_episode
from ppgl_dispatch.env import Call, EmitReport, SubTask, Swarm, generate_case, reset, step
from ppgl_dispatch.orchestrator import run_episode, scripted_selector

case = generate_case(2026)
print(case.case_id, case.genotype)

## Step the environment manually; a mismatched swarm and a repeated task both cost reward
s = reset(case)
for action in (Call(Swarm.WSI, SubTask.KI67), Call(Swarm.GENE, SubTask.KI67), Call(Swarm.WSI, SubTask.KI67),
               EmitReport()):
    r = step(s, action)
    print(f"{str(action):32s} reward {r.reward:+.2f}", r.observation.payload if r.observation else "")
    s = r.state

## The scripted oracle asks each scoreable question once, then reports
report, trace = run_episode(case, scripted_selector())
print(report.narrative)
print("r_diag", trace.r_diag, "tool calls", trace.tool_calls)

## Every step goes to an append-only log that replays exactly
log = AuditLog(Path(tempfile.mkdtemp()) / "audit.jsonl")
log_episode(log, "demo", trace)
print("replay mismatches:", replay_episode(log.replay("demo", case.case_id), case))
