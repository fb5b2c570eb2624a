"""Directional checks on the shared default runs (beyond the numbered acceptance criteria)."""
import numpy as np
import pytest

from conftest import ABLATION_SEEDS
from gdpl.harness.episode import EpisodeConfig, cross_dataset_eval, target_splits, zero_shot_cross_eval

pytestmark = pytest.mark.slow


def test_training_loss_falls_after_first_epoch(ablation_runs):
    losses = ablation_runs[("full", 0)].report.losses
    assert losses[-1] < losses[1]


def test_every_run_records_epochs_plus_one_rows(ablation_runs):
    for res in ablation_runs.values():
        assert len(res.report.metrics) == EpisodeConfig().epochs + 1


def test_frozen_base_untouched_by_all_runs(ablation_runs, base):
    assert all(res.report.frozen_digests == base.digests() for res in ablation_runs.values())
    assert base.digests() == next(iter(ablation_runs.values())).base.digests()


def test_prompting_beats_frozen_base_across_domains(ablation_runs, base):
    gdpl, zero = [], []
    for s in ABLATION_SEEDS:
        targets = target_splits(EpisodeConfig(seed=s))
        gdpl.append(np.mean(list(cross_dataset_eval(ablation_runs[("full", s)].model, targets).values())))
        zero.append(np.mean(list(zero_shot_cross_eval(base, targets).values())))
    print(f"cross-domain mean accuracy: prompted {np.mean(gdpl):.2f}, frozen {np.mean(zero):.2f}")
    assert np.mean(gdpl) >= np.mean(zero)
