"""
Adapting batch-norm running statistics to a shifted test domain, one slide at a time
"""

import numpy as np

from ppgl_dispatch.adabn import BnLayerState, adabn_update, adapt_sequence, current_stats

rng = np.random.default_rng(1)

## Statistics learned on the training domain: 4 channels, zero mean, unit variance
state = BnLayerState(running_mean=np.zeros(4), running_var=np.ones(4), momentum_alpha=0.1)

## Test slides arrive one by one with shifted activations (batch size 1, 256 spatial positions)
slides = [rng.normal(loc=[[2.0], [-1.0], [0.5], [3.0]], scale=1.5, size=(4, 256)) for _ in range(30)]
print("slide statistics", [v.round(2) for v in current_stats(slides[0])])

## A single update moves a tenth of the way
print(adabn_update(state, slides[0]).running_mean.round(3))

## Progressive accumulation drifts toward the test domain
for k in (1, 5, 10, 30):
    print(k, adapt_sequence(state, slides[:k]).running_mean.round(3))

## For identical samples the fold has a closed form
m, _ = current_stats(slides[0])
k = 10
closed = (1 - 0.9**k) * m
print(np.abs(adapt_sequence(state, [slides[0]] * k).running_mean - closed).max())
