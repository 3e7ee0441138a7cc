"""Command-line entry point: ``triangulate {simulate,estimate,diagnose}``.

Each command reads a JSON config file. ``--seed`` and ``--output`` override
the file. Exit codes: 0 success, 2 config or data error, 3 experiment
instability, 4 inference branch mismatch, 1 anything else.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .data import Dataset, InferenceBranch, ModelSpec, load_csv
from .exceptions import (
    BranchMismatchError,
    DomainError,
    ExperimentUnstableError,
    ParseError,
    UnknownColumnError,
    UnstableBootstrapError,
    ValidationError,
)
from .inference import InferenceConfig, triangulate_data
from .kernel import KernelConfig, discrimination_factor, gaussian_kernel, is_degenerate, weights
from .pipeline import estimate_models
from .simulation import Scenario, ScenarioConfig, default_inference, run_trials

log = logging.getLogger("triangulation")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_BRANCH = 0, 1, 2, 3, 4


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class KernelSection(_Strict):
    a: float = Field(0.1, gt=0)
    lam: Union[float, Literal["1/n"]] = Field("1/n", alias="lambda")

    @field_validator("lam")
    @classmethod
    def _nonnegative(cls, v):
        if v != "1/n" and not (v >= 0 and math.isfinite(v)):
            raise ValueError("lambda must be '1/n' or a nonnegative number")
        return v

    def build(self) -> KernelConfig:
        return KernelConfig(a=self.a, lam=None if self.lam == "1/n" else float(self.lam))


class InferenceSection(_Strict):
    branch: Optional[InferenceBranch] = None
    alpha: float = Field(0.05, gt=0, le=0.5)
    B: int = Field(500, ge=100)
    b: int = Field(500, ge=100)
    exponent: float = Field(0.8, gt=0, lt=1)

    def build(self, branch: InferenceBranch, seed: int) -> InferenceConfig:
        return InferenceConfig(
            branch=self.branch or branch,
            alpha=self.alpha,
            bootstrap_B=self.B,
            subsample_b=self.b,
            subsample_exponent=self.exponent,
            seed=seed,
        )


class DataSection(_Strict):
    path: str
    binary: list[str] = []


class RolesSection(_Strict):
    treatment: str
    outcome: str
    anchor: str


class ModelSection(_Strict):
    kind: Literal["backdoor", "frontdoor", "iv"]
    adjustment: list[str] = []
    mediators: list[str] = []
    label: Optional[str] = None
    estimator: Literal["influence", "plugin"] = "plugin"


class RunConfig(_Strict):
    command: Optional[Literal["simulate", "estimate", "diagnose"]] = None
    seed: int = Field(0, ge=0, lt=2**64)
    output: Optional[str] = None
    kernel: KernelSection = KernelSection()
    inference: InferenceSection = InferenceSection()
    # simulate
    scenario: Optional[str] = None
    n: Union[int, list[int], None] = None
    trials: int = Field(200, ge=1)
    workers: int = Field(1, ge=1)
    # estimate / diagnose
    data: Optional[DataSection] = None
    roles: Optional[RolesSection] = None
    models: list[ModelSection] = []
    epsilons: list[float] = []
    n_incorrect: Optional[int] = Field(None, ge=1)

    @field_validator("scenario")
    @classmethod
    def _known_scenario(cls, v):
        if v is not None:
            Scenario.parse(v)
        return v

    @model_validator(mode="after")
    def _command_fields(self):
        if self.command == "simulate":
            if self.scenario is None or self.n is None:
                raise ValueError("simulate needs 'scenario' and 'n'")
            sizes = self.n if isinstance(self.n, list) else [self.n]
            if not sizes or min(sizes) < 200:
                raise ValueError("every sample size must be at least 200")
        elif self.command in ("estimate", "diagnose"):
            if self.data is None or self.roles is None or not self.models:
                raise ValueError(f"{self.command} needs 'data', 'roles' and a nonempty 'models' list")
        return self

    def sizes(self) -> list[int]:
        return self.n if isinstance(self.n, list) else [self.n]

    def model_specs(self) -> list[ModelSpec]:
        return [
            ModelSpec(
                kind=m.kind,
                treatment=self.roles.treatment,
                outcome=self.roles.outcome,
                anchor=self.roles.anchor,
                adjustment=tuple(m.adjustment),
                mediators=tuple(m.mediators),
                label=m.label or f"{m.kind}_{k + 1}",
                estimator=m.estimator,
            )
            for k, m in enumerate(self.models)
        ]


def load_config(path: str | Path, command: str, seed: int | None = None, output: str | None = None) -> RunConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValidationError("config file must hold a JSON object")
    if raw.get("command", command) != command:
        raise ValidationError(f"config is for {raw['command']!r}, not {command!r}")
    raw["command"] = command
    if seed is not None:
        raw["seed"] = seed
    if output is not None:
        raw["output"] = output
    return RunConfig.model_validate(raw)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")


def _load_data(cfg: RunConfig) -> Dataset:
    return load_csv(cfg.data.path, cfg.data.binary)


PLOT_COLUMNS = ("n", "mean_estimate", "band_lo", "band_hi", "coverage_theta", "coverage_psi")


def cmd_simulate(cfg: RunConfig) -> int:
    results = []
    for n in cfg.sizes():
        sc = ScenarioConfig(
            scenario=cfg.scenario,
            n=n,
            trials=cfg.trials,
            seed=cfg.seed,
            kernel=cfg.kernel.build(),
            inference=cfg.inference.build(default_inference(cfg.scenario), cfg.seed),
            workers=cfg.workers,
        )
        log.info("simulating %s at n=%d, %d trials", cfg.scenario, n, cfg.trials)
        results.append(run_trials(sc).to_dict())
    doc = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": cfg.seed, "results": results}
    _emit(_dump(doc), cfg.output)
    if cfg.output is not None:
        plot_path = Path(cfg.output).with_suffix(".csv")
        with open(plot_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(PLOT_COLUMNS)
            for r in results:
                w.writerow([
                    r["n"], repr(r["mean_estimate"]), repr(r["band"][0]), repr(r["band"][1]),
                    repr(r["coverage_theta"]), repr(r["coverage_psi"]),
                ])
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    specs = cfg.model_specs()
    icfg = cfg.inference.build(InferenceBranch.WALD, cfg.seed)
    res = triangulate_data(data, specs, cfg.kernel.build(), icfg)
    doc = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": cfg.seed, "n": data.n, **res.to_dict()}
    _emit(_dump(doc), cfg.output)
    return EXIT_OK


def diagnose_report(data: Dataset, specs, kcfg: KernelConfig, epsilons=(), n_incorrect=None) -> dict:
    est = estimate_models(data, specs)
    betas = np.array([e.beta.value for e in est])
    psis = np.array([e.psi.value for e in est])
    kcfg = kcfg.resolved(data.n)
    mass = np.atleast_1d(gaussian_kernel(betas, kcfg.a))
    w = weights(betas, kcfg)
    n_inc = n_incorrect if n_incorrect is not None else max(len(specs) - 1, 1)
    return {
        "n": data.n,
        "kernel_a": kcfg.a,
        "lambda": kcfg.lam,
        "models": [
            {"label": s.label, "beta": float(b), "psi": float(p), "kernel_mass": float(m), "weight": float(wk)}
            for s, b, p, m, wk in zip(specs, betas, psis, mass, w)
        ],
        "kernel_mass_total": float(mass.sum()),
        "degenerate_flag": is_degenerate(betas, kcfg),
        "discrimination": [
            {"eps": e, "n_incorrect": n_inc, "factor": discrimination_factor(e, kcfg.a, n_inc)}
            for e in epsilons
        ],
    }


def format_diagnose(rep: dict) -> str:
    lines = [f"n = {rep['n']}, a = {rep['kernel_a']:g}, lambda = {rep['lambda']:.6g}"]
    lines.append(f"{'model':<28}{'beta':>12}{'delta_a(beta)':>16}{'weight':>12}{'psi':>12}")
    for m in rep["models"]:
        lines.append(
            f"{m['label']:<28}{m['beta']:>12.5f}{m['kernel_mass']:>16.5g}{m['weight']:>12.5f}{m['psi']:>12.5f}"
        )
    total, lam = rep["kernel_mass_total"], rep["lambda"]
    rel = "<" if rep["degenerate_flag"] else ">="
    lines.append(f"sum delta = {total:.5g} {rel} 10 * lambda = {10 * lam:.5g}")
    lines.append(f"degenerate_flag = {str(rep['degenerate_flag']).lower()}")
    for d in rep["discrimination"]:
        lines.append(
            f"eps = {d['eps']:g}, |I| = {d['n_incorrect']}: bias reduction factor 1 + D_a >= {d['factor']:.4g}"
        )
    return "\n".join(lines) + "\n"


def cmd_diagnose(cfg: RunConfig) -> int:
    rep = diagnose_report(_load_data(cfg), cfg.model_specs(), cfg.kernel.build(), cfg.epsilons, cfg.n_incorrect)
    sys.stdout.write(format_diagnose(rep))
    if cfg.output is not None:
        doc = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": cfg.seed, **rep}
        _emit(_dump(doc), cfg.output)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triangulate", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run a simulation scenario and write results JSON plus a plot CSV",
        "estimate": "triangulate candidate models on a CSV dataset",
        "diagnose": "print validity parameters, kernel masses and weights",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--output", default=None, help="output path (stdout when omitted)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.command, args.seed, args.output)
        return COMMANDS[args.command](cfg)
    except pydantic.ValidationError as exc:
        print(f"error: invalid config:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, ParseError, UnknownColumnError, DomainError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentUnstableError, UnstableBootstrapError) as exc:
        print(f"error: unstable run: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except BranchMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BRANCH
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
