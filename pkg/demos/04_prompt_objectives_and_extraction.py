"""All six fine-tuning objectives on one example, plus answer extraction.

The three mask-bearing generative objectives share one input; their targets
differ. The extraction rule inverts every generative target exactly.
"""

from qalign.decoding import answer_extract, default_max_steps
from qalign.prompts import GENERATIVE_OBJECTIVES, ObjectiveKind, build_input, build_target

q, a, c = "who owns the cat", "alice", "alice owns the cat . bob owns a dog ."

for objective in ObjectiveKind:
    print(f"\n== {objective.value} ==")
    print("input :", build_input(q, c, objective))
    if objective is ObjectiveKind.SPAN_SELECTION:
        print("target: (start, end) positions of the answer span in the input")
        continue
    target = build_target(q, a, c, objective)
    print("target:", target)
    print("budget:", default_max_steps(objective), "decode steps")
    extracted = answer_extract(target, objective)
    print("extracted:", repr(extracted))
    assert extracted == a

print("\nextraction inverted construction for every generative objective")
