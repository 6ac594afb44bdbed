"""Model evaluation and the encoder/decoder ablation grid."""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from ..model import ModelConfig, TrainConfig, predict, train
from .metrics import MetricsReport, metrics_report

# Row order of the published comparison: LSTM encoders first, then sLSTM,
# each with sLSTM / mLSTM / LSTM decoders.
TABLE_GRID = (
    ("lstm", "slstm"),
    ("lstm", "mlstm"),
    ("lstm", "lstm"),
    ("slstm", "slstm"),
    ("slstm", "mlstm"),
    ("slstm", "lstm"),
)
# Published highD result for the best combination; documentation only.
REFERENCE_BEST = {"encoder": "slstm", "decoder": "lstm", "ade": 0.56, "fde": 1.76}
CELL_LABEL = {"lstm": "LSTM", "slstm": "sLSTM", "mlstm": "mLSTM"}


def ground_truth(scenarios) -> np.ndarray:
    return np.stack([s.future_xy() for s in scenarios])


def report_for(preds, scenarios, config: ModelConfig) -> MetricsReport:
    by_id = {p.scenario_id: p for p in preds}
    P = np.stack([by_id[s.scenario_id].positions for s in scenarios])
    return metrics_report(P, ground_truth(scenarios), dt=config.dt, variant=config.variant,
                          fingerprint=config.fingerprint())


def evaluate_model(model, scenarios) -> MetricsReport:
    scenarios = list(scenarios)
    return report_for(predict(model, scenarios), scenarios, model.config)


@dataclass
class AblationRow:
    encoder: str
    decoder: str
    report: MetricsReport
    seconds: float
    final_train_loss: float


@dataclass
class AblationTable:
    rows: list

    def best(self) -> AblationRow:
        return min(self.rows, key=lambda r: (r.report.ade, r.report.fde))

    def to_text(self) -> str:
        lines = [f"{'Encoder':<8} {'Decoder':<8} {'ADE (m)':>8} {'FDE (m)':>8}", "-" * 35]
        for r in self.rows:
            lines.append(f"{CELL_LABEL[r.encoder]:<8} {CELL_LABEL[r.decoder]:<8} {r.report.ade:8.3f} {r.report.fde:8.3f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "rows": [
                {"encoder": r.encoder, "decoder": r.decoder, "ade": r.report.ade, "fde": r.report.fde,
                 "rmse_at": {f"{k:g}": v for k, v in sorted(r.report.rmse_at.items())},
                 "n_scenarios": r.report.n_scenarios, "final_train_loss": r.final_train_loss}
                for r in self.rows
            ],
            "reference_best": REFERENCE_BEST,
        }
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def ablate(train_set, eval_set, base_config: ModelConfig, train_config: TrainConfig, grid=TABLE_GRID,
           log=None) -> AblationTable:
    """Train and evaluate every (encoder, decoder) pair with the same seed and budget."""
    train_set = list(train_set)
    eval_set = list(eval_set) if eval_set is not None else train_set
    rows = []
    for enc, dec in grid:
        cfg = dataclasses.replace(base_config, encoder_cell=enc, decoder_cell=dec)
        t0 = time.perf_counter()
        result = train(train_set, cfg, dataclasses.replace(train_config, checkpoint=None))
        rep = evaluate_model(result.model, eval_set)
        last = result.history[-1]["train_loss"] if result.history else float("nan")
        rows.append(AblationRow(enc, dec, rep, time.perf_counter() - t0, last))
        if log:
            log(f"{CELL_LABEL[enc]:>5} -> {CELL_LABEL[dec]:<5} ADE {rep.ade:.3f} FDE {rep.fde:.3f} ({rows[-1].seconds:.1f}s)")
    return AblationTable(rows)
