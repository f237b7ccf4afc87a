"""Central-difference gradient checking against autograd.

Small tensors get every entry perturbed; big ones get a seeded sample so the
whole sweep stays cheap on one core.
"""
import numpy as np
import torch

from crossfuse.model import classification_loss, loss_and_gradients

FULL_COVERAGE_NUMEL = 64
SAMPLES_PER_TENSOR = 32


def entry_indices(shape, rng, max_full=FULL_COVERAGE_NUMEL, n_samples=SAMPLES_PER_TENSOR):
    numel = int(np.prod(shape))
    if numel <= max_full:
        flat = np.arange(numel)
    else:
        flat = rng.choice(numel, size=n_samples, replace=False)
    return [tuple(int(v) for v in np.unravel_index(int(i), shape)) for i in flat]


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_difference_report(model, visual, skeleton, labels, h=1e-5, sample_seed=0):
    """Returns (worst_rel_err, [(param_name, idx, analytic, fd, rel_err), ...])."""
    _, grads = loss_and_gradients(model, visual, skeleton, labels)
    rng = np.random.default_rng(sample_seed)
    rows = []
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            an = grads[name]
            for idx in entry_indices(tuple(p.shape), rng):
                keep = p[idx].item()
                p[idx] = keep + h
                up = float(classification_loss(model(visual, skeleton), labels))
                p[idx] = keep - h
                down = float(classification_loss(model(visual, skeleton), labels))
                p[idx] = keep
                fd = (up - down) / (2.0 * h)
                a = float(an[idx])
                if abs(a) < 1e-10 and abs(fd) < 1e-10:
                    err = 0.0
                else:
                    err = relative_error(a, fd)
                worst = max(worst, err)
                rows.append((name, idx, a, fd, err))
    return worst, rows
