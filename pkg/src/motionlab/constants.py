"""Pipeline-wide fixed constants.

The control rate, prompt length, and episode cap are coupled: a motion prompt
is 32 control steps = 1 s, and an episode is capped at 480 steps = 15 s, so a
generated continuation is at most 448 steps = 14 s.
"""

CONTROL_HZ = 32
CONTROL_DT = 1.0 / CONTROL_HZ

PROMPT_STEPS = 32
EPISODE_CAP_STEPS = 480
GENERATION_CAP_STEPS = EPISODE_CAP_STEPS - PROMPT_STEPS

FALL_FRACTION = 0.6

# Significance threshold for the durability comparison (seconds).
DURABILITY_THRESHOLD_S = 6.0
