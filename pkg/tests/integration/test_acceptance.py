"""
Fleet-scale property checks of the fusion pipeline.

Marked slow; deselect with ``-m 'not slow'``.
"""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from vsf_planner.core.config import Settings
from vsf_planner.domain.harness import AblationSpec, FusionRunSpec, NoisyScorerSpec
from vsf_planner.domain.models import Scenario, ScenarioStage, Trajectory
from vsf_planner.domain.scoring import DirectiveEmbedding, FusionConfig, MetricWeights
from vsf_planner.infrastructure.storage import save_scenarios
from vsf_planner.services.ablation import run_ablation, summarize
from vsf_planner.services.directive import init_embedding, rule_based_directive
from vsf_planner.services.fusion import fuse_models, select_best
from vsf_planner.services.metrics import StageEvaluator, compose_epdms_batch
from vsf_planner.services.scenario_gen import gen_mixed_fleet
from vsf_planner.services.scorers import (
    fit_linear_scorer,
    noisy_scorer,
    oracle_scorer,
    predict_linear,
    rank_correlation,
    training_rows,
)
from vsf_planner.services.vocabulary import candidate_set

pytestmark = pytest.mark.slow

# Selections below this EPDMS are all inside the log floor.
EPDMS_GUARD = 1e-3


@pytest.fixture
def fleet_stages(test_settings: Settings) -> list[tuple[ScenarioStage, list[Trajectory], StageEvaluator]]:
    """Every stage of four scenarios per kind, with candidates and evaluator."""
    stages = []
    for scenario in gen_mixed_fleet(4, 21, test_settings):
        for stage in scenario.stages():
            cands = candidate_set(stage.ego, test_settings, 0)
            stages.append((stage, cands, StageEvaluator(stage, cands, cfg=test_settings)))
    return stages


class TestFusionProperties:
    """Selection properties over a generated fleet."""

    def test_oracle_selects_epdms_argmax(
        self,
        fleet_stages: list[tuple[ScenarioStage, list[Trajectory], StageEvaluator]],
    ) -> None:
        """Test that the exact scorer under log_epdms picks a best-EPDMS candidate."""
        fusion = FusionConfig(aggregation="log_epdms")
        checked = 0
        for stage, cands, evaluator in fleet_stages:
            epdms = compose_epdms_batch(evaluator.candidate_scores, MetricWeights())
            if epdms.max() < EPDMS_GUARD:
                continue
            picked = select_best(fuse_models([oracle_scorer(cands, stage, evaluator)], fusion))
            assert epdms[picked] == pytest.approx(epdms.max(), abs=1e-12), stage.scenario_id
            checked += 1
        assert checked > 0

    def test_weight_scaling_keeps_selection(
        self,
        fleet_stages: list[tuple[ScenarioStage, list[Trajectory], StageEvaluator]],
    ) -> None:
        """Test that scaling every model weight leaves the argmax unchanged."""
        rng = np.random.default_rng(5)
        for stage, cands, evaluator in fleet_stages:
            oracle = oracle_scorer(cands, stage, evaluator)
            outputs = [noisy_scorer(cands, stage, 0.1, 3, f"n{k}", oracle=oracle) for k in range(3)]
            base = {f"n{k}": float(w) for k, w in enumerate(rng.uniform(0.1, 1.0, size=3))}
            picks = {
                select_best(fuse_models(outputs, FusionConfig(model_weights={k: c * w for k, w in base.items()})))
                for c in (0.01, 1.0, 100.0)
            }
            assert len(picks) == 1, stage.scenario_id


class TestEnsembleGain:
    """Weight fusion of noisy scorers against their solo runs."""

    def test_fused_against_solo_runs(
        self,
        temp_dir: Path,
        test_settings: Settings,
        regression_value: Callable[[str, float, float], float],
    ) -> None:
        """Test the fleet EPDMS of four fused noisy scorers on 200 scenarios."""
        path = temp_dir / "fleet.json"
        save_scenarios(gen_mixed_fleet(40, 7, test_settings), path)
        names = [f"noisy{k}" for k in range(4)]
        spec = AblationSpec(
            scenario_file=path,
            output_dir=temp_dir / "out",
            scorers={name: NoisyScorerSpec(noise_sd=0.1, seed=100 + k) for k, name in enumerate(names)},
            configs=[FusionRunSpec(name=name, scorers=[name]) for name in names]
            + [FusionRunSpec(name="fused", scorers=names)],
        )
        records, _ = run_ablation(spec, test_settings)
        rows = {row.config: row.epdms for row in summarize(records)}

        solo = [rows[name] for name in names]
        assert all(value is not None for value in solo)
        assert rows["fused"] is not None
        fused = rows["fused"]
        assert fused >= max(solo) - 0.005
        assert fused >= float(np.mean(solo))
        regression_value("ensemble_gain.fused_epdms", fused, 1e-9)
        for name, value in zip(names, solo, strict=True):
            regression_value(f"ensemble_gain.{name}_epdms", value, 1e-9)


class TestDirectiveScorer:
    """Directive-conditioned linear scorer on scenarios it was not fitted on."""

    @staticmethod
    def _rows(
        scenarios: list[Scenario],
        embedding: DirectiveEmbedding,
        cfg: Settings,
    ) -> tuple[np.ndarray, np.ndarray]:
        designs, targets = [], []
        for scenario in scenarios:
            for stage in scenario.stages():
                trajs = candidate_set(stage.ego, cfg, 0, include_anchors=False)
                x, y = training_rows(trajs, stage, rule_based_directive(stage, cfg), embedding, cfg)
                designs.append(x)
                targets.append(y)
        return np.vstack(designs), np.vstack(targets)

    def test_held_out_rank_correlation(
        self,
        test_settings: Settings,
        regression_value: Callable[[str, float, float], float],
    ) -> None:
        """Test Spearman ρ > 0.6 between predicted and oracle EPDMS on a held-out fleet."""
        embedding = init_embedding(test_settings.directive.embedding_dim, test_settings.directive.embedding_seed)
        X, Y = self._rows(gen_mixed_fleet(8, 31, test_settings), embedding, test_settings)
        params = fit_linear_scorer(X, Y, 1.0, embedding)

        X_held, Y_held = self._rows(gen_mixed_fleet(4, 97, test_settings), embedding, test_settings)
        predicted = compose_epdms_batch(predict_linear(X_held, params), MetricWeights())
        oracle = compose_epdms_batch(Y_held, MetricWeights())
        rho = rank_correlation(predicted, oracle)

        assert rho > 0.6
        regression_value("directive_scorer.held_out_spearman", rho, 1e-9)
