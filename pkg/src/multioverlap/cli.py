"""Command-line front end: run identity checks and size sweeps, evaluate
moments, print coefficient tables and expansion term lists, emit JSON/CSV.

Configuration comes from an INI-style file (sections [model],
[perturbations], [ensemble], [task], [output]) with flag overrides; the
effective configuration is echoed into every report. Exit codes: 0 success,
2 validation error, 3 capacity error. MULTIOVERLAP_PARALLELISM sets the
default worker count.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys

from . import expansion, identities, moments, quench
from .errors import CapacityError, ValidationError
from .exact import quenched_pressure
from .model import ModelSpec, PerturbationSpec
from .sampler import ChainConfig

PARALLELISM_ENV = "MULTIOVERLAP_PARALLELISM"

_MODEL_KEYS = {"n", "alpha", "beta", "arities"}
_ENSEMBLE_KEYS = {"realizations", "seed", "parallelism", "backend",
                  "n_sweeps", "burn_in", "thinning"}
_TASK_KEYS = {"identity", "s", "a", "r", "pow_r", "pow_s", "phi",
              "alpha_prime", "beta_prime", "beta_prime2", "monomial",
              "order", "sizes", "draws"}
_OUTPUT_KEYS = {"format", "path"}
_SECTIONS = {"model": _MODEL_KEYS, "perturbations": None,
             "ensemble": _ENSEMBLE_KEYS, "task": _TASK_KEYS,
             "output": _OUTPUT_KEYS}


def _parse_arities(text: str):
    out = []
    for part in text.split(","):
        if ":" in part:
            p, a = part.split(":")
            out.append((int(p), float(a)))
        else:
            out.append((int(part), 1.0))
    return tuple(out)


def _parse_perturbation(text: str) -> PerturbationSpec:
    fields = {}
    for item in text.split(","):
        key, _, value = item.strip().partition(":")
        if key not in ("arity", "rate", "strength", "weight"):
            raise ValidationError(f"unknown perturbation key {key!r}")
        fields[key] = value
    return PerturbationSpec(
        arity=int(fields.get("arity", 2)),
        rate=float(fields.get("rate", 0.0)),
        strength=float(fields.get("strength", 0.0)),
        weight=float(fields.get("weight", 1.0)),
    )


def load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"config file {path!r} not found")
    config = {"model": {}, "perturbations": [], "ensemble": {}, "task": {}, "output": {}}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValidationError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        for key, value in parser.items(section):
            if section == "perturbations":
                config["perturbations"].append(_parse_perturbation(value))
                continue
            if key not in allowed:
                raise ValidationError(f"unknown key {key!r} in section [{section}]")
            config[section][key] = value
    return config


def _merged_config(args) -> dict:
    config = (load_config_file(args.config) if getattr(args, "config", None)
              else {"model": {}, "perturbations": [], "ensemble": {}, "task": {}, "output": {}})

    def override(section, key, value):
        if value is not None:
            config[section][key] = value

    override("model", "n", getattr(args, "n", None))
    override("model", "alpha", getattr(args, "alpha", None))
    override("model", "beta", getattr(args, "beta", None))
    override("model", "arities", getattr(args, "arities", None))
    for pert in getattr(args, "pert", None) or []:
        config["perturbations"].append(_parse_perturbation(pert))
    override("ensemble", "realizations", getattr(args, "realizations", None))
    override("ensemble", "seed", getattr(args, "seed", None))
    override("ensemble", "parallelism", getattr(args, "parallelism", None))
    override("ensemble", "backend", getattr(args, "backend", None))
    override("ensemble", "n_sweeps", getattr(args, "sweeps", None))
    override("ensemble", "burn_in", getattr(args, "burn_in", None))
    override("ensemble", "thinning", getattr(args, "thinning", None))
    for key in ("identity", "s", "a", "r", "pow_r", "pow_s", "phi", "alpha_prime",
                "beta_prime", "beta_prime2", "monomial", "order", "sizes", "draws"):
        override("task", key, getattr(args, key, None))
    override("output", "format", getattr(args, "format", None))
    override("output", "path", getattr(args, "output", None))
    return config


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ValidationError(f"missing required key {key!r} ({where})")
    return section[key]


def _build_spec(config) -> ModelSpec:
    model = config["model"]
    return ModelSpec(
        n_sites=int(_require(model, "n", "model.n / --n")),
        beta=float(_require(model, "beta", "model.beta / --beta")),
        alpha=float(_require(model, "alpha", "model.alpha / --alpha")),
        interactions=_parse_arities(str(model.get("arities", "2"))),
        perturbations=tuple(config["perturbations"]),
    )


def _build_ensemble(config) -> quench.EnsembleSpec:
    ens = config["ensemble"]
    parallelism = ens.get("parallelism")
    if parallelism is None:
        parallelism = os.environ.get(PARALLELISM_ENV, 1)
    backend = str(ens.get("backend", "exact"))
    chain_config = None
    if backend == "mc":
        chain_config = ChainConfig(
            n_sweeps=int(ens.get("n_sweeps", ChainConfig.n_sweeps)),
            burn_in_sweeps=int(ens.get("burn_in", ChainConfig.burn_in_sweeps)),
            thinning=int(ens.get("thinning", ChainConfig.thinning)),
        )
    return quench.EnsembleSpec(
        n_realizations=int(_require(ens, "realizations", "ensemble.realizations / --realizations")),
        master_seed=int(_require(ens, "seed", "ensemble.seed / --seed")),
        parallelism=int(parallelism),
        backend=backend,
        chain_config=chain_config,
    )


def _parse_phi(text, s: int) -> identities.PhiSpec:
    if text is None or text == "one" or text == "1":
        return identities.PhiSpec(s)
    mono = moments.parse_monomial(str(text), canonical=False)
    return identities.PhiSpec(s, mono)


def _config_echo(config) -> dict:
    import dataclasses
    return {
        "model": dict(config["model"]),
        "perturbations": [dataclasses.asdict(p) for p in config["perturbations"]],
        "ensemble": dict(config["ensemble"]),
        "task": dict(config["task"]),
        "output": dict(config["output"]),
    }


def _run_identity(config, spec: ModelSpec, ens: quench.EnsembleSpec):
    task = config["task"]
    identity = str(_require(task, "identity", "task.identity / --identity"))
    if identity not in identities.IDENTITY_IDS:
        raise ValidationError(f"unknown identity {identity!r}; choose from "
                              f"{', '.join(identities.IDENTITY_IDS)}")
    if identity == "gg":
        s = int(_require(task, "s", "task.s / --s"))
        a = int(task.get("a", 1))
        return identities.gg_residual(s, a, _parse_phi(task.get("phi"), s), spec, ens)
    if identity == "gg_pair":
        s = int(_require(task, "s", "task.s / --s"))
        return identities.gg_pair_residual(s, _parse_phi(task.get("phi"), s), spec, ens)
    if identity == "first_family":
        r = int(_require(task, "r", "task.r / --r"))
        s = int(_require(task, "s", "task.s / --s"))
        return identities.first_family_residual(
            r, s, int(task.get("pow_r", 2)), int(task.get("pow_s", 2)), spec, ens)
    if identity == "four_overlap":
        s = int(_require(task, "s", "task.s / --s"))
        return identities.four_overlap_residual(s, _parse_phi(task.get("phi"), s), spec, ens)
    if identity == "magnetization_sa":
        return identities.magnetization_sa_residual(spec, ens)
    if identity == "stochastic_stability":
        return identities.stochastic_stability_residual(
            spec, float(_require(task, "alpha_prime", "task.alpha_prime / --alpha-prime")),
            float(_require(task, "beta_prime", "task.beta_prime / --beta-prime")), ens,
            perturbation_draws=int(task.get("draws", 64)))
    if identity == "factorization":
        b1 = float(_require(task, "beta_prime", "task.beta_prime / --beta-prime"))
        b2 = float(task.get("beta_prime2", b1))
        pert1 = PerturbationSpec(arity=2, rate=float(task.get("alpha_prime", 0.0)), strength=b1)
        pert2 = PerturbationSpec(arity=2, rate=float(task.get("alpha_prime", 0.0)), strength=b2)
        return identities.factorization_residual(spec, pert1, pert2, ens)
    # pressure_derivative
    return identities.pressure_derivative_check(
        spec, float(_require(task, "beta_prime", "task.beta_prime / --beta-prime")), ens,
        perturbation_draws=int(task.get("draws", 32)))


def _emit(text: str, config) -> None:
    path = config["output"].get("path")
    if path:
        with open(path, "w") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _json_dump(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _cmd_check(args) -> int:
    config = _merged_config(args)
    spec = _build_spec(config)
    ens = _build_ensemble(config)
    report = _run_identity(config, spec, ens)
    payload = report.to_dict()
    payload["config"] = _config_echo(config)
    _emit(_json_dump(payload), config)
    return 0


def _cmd_sweep(args) -> int:
    config = _merged_config(args)
    ens = _build_ensemble(config)
    sizes = [int(x) for x in str(_require(config["task"], "sizes", "task.sizes / --sizes")).split(",")]
    if sizes != sorted(sizes):
        raise ValidationError("sizes must be ascending")
    rows = []
    import dataclasses as _dc
    config["model"].setdefault("n", sizes[0])
    base_spec = _build_spec(config)
    for n_sites in sizes:
        sized_spec = _dc.replace(base_spec, n_sites=n_sites)
        sized_ens = _dc.replace(ens, master_seed=quench.size_master_seed(ens.master_seed, n_sites))
        report = _run_identity(config, sized_spec, sized_ens)
        rows.append({"N": n_sites, "lhs": report.lhs, "rhs": report.rhs,
                     "residual": report.residual,
                     "normalized_residual": report.normalized_residual,
                     "stderr": report.stderr})
    fmt = str(config["output"].get("format", "csv"))
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("N,lhs,rhs,residual,normalized_residual,stderr\n")
        for row in rows:
            buf.write(",".join([str(row["N"])] + [
                repr(float(row[key])) for key in
                ("lhs", "rhs", "residual", "normalized_residual", "stderr")]) + "\n")
        _emit(buf.getvalue(), config)
    elif fmt == "json":
        spec = _build_spec(config)
        manifest = quench.run_manifest(spec, ens, rows)
        manifest["config"] = _config_echo(config)
        _emit(_json_dump(manifest), config)
    else:
        raise ValidationError(f"unknown output format {fmt!r} (json|csv)")
    return 0


def _cmd_moment(args) -> int:
    config = _merged_config(args)
    spec = _build_spec(config)
    ens = _build_ensemble(config)
    text = str(_require(config["task"], "monomial", "task.monomial / --monomial"))
    mono = moments.parse_monomial(text)
    est = moments.estimate(mono, spec, ens)
    payload = {"monomial": moments.format_monomial(mono), "value": est.value,
               "stderr": est.stderr, "n_realizations": est.n_realizations,
               "backend": est.backend, "seed": ens.master_seed,
               "config": _config_echo(config)}
    _emit(_json_dump(payload), config)
    return 0


def _cmd_coeffs(args) -> int:
    config = _merged_config(args)
    r = int(_require(config["task"], "r", "task.r / --r"))
    s = int(_require(config["task"], "s", "task.s / --s"))
    lines = [f"a={a} coeff={coeff}" for a, coeff in expansion.first_family_terms(r, s)]
    _emit("\n".join(lines) + "\n", config)
    return 0


def _cmd_expand(args) -> int:
    config = _merged_config(args)
    order = int(_require(config["task"], "order", "task.order / --order"))
    s = int(_require(config["task"], "s", "task.s / --s"))
    terms = expansion.energy_expansion_terms(order, s)
    payload = [expansion.term_to_json(t) for t in terms]
    _emit(_json_dump(payload), config)
    return 0


def _cmd_pressure(args) -> int:
    config = _merged_config(args)
    spec = _build_spec(config)
    ens_section = config["ensemble"]
    n_real = int(_require(ens_section, "realizations", "ensemble.realizations / --realizations"))
    seed = int(_require(ens_section, "seed", "ensemble.seed / --seed"))
    value, stderr = quenched_pressure(spec, n_real, seed)
    payload = {"pressure": value, "stderr": stderr, "n_realizations": n_real,
               "seed": seed, "config": _config_echo(config)}
    _emit(_json_dump(payload), config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multioverlap",
        description="Multi-overlap identity checks for diluted spin glasses")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, ensemble=True):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--n", type=int, help="number of sites")
        p.add_argument("--alpha", type=float, help="connectivity")
        p.add_argument("--beta", type=float, help="inverse temperature")
        p.add_argument("--arities", help="e.g. '2' or '2:0.8,3:0.6'")
        p.add_argument("--pert", action="append",
                       help="perturbation 'arity:2,rate:0.5,strength:0.7,weight:1'")
        p.add_argument("--output", help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), help="output format")
        if ensemble:
            p.add_argument("--realizations", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--parallelism", type=int)
            p.add_argument("--backend", choices=("exact", "mc"))
            p.add_argument("--sweeps", type=int, help="MC sweeps per chain")
            p.add_argument("--burn-in", dest="burn_in", type=int)
            p.add_argument("--thinning", type=int)

    def add_task_flags(p):
        p.add_argument("--identity", choices=identities.IDENTITY_IDS)
        p.add_argument("--s", type=int)
        p.add_argument("--a", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--pow-r", dest="pow_r", type=int)
        p.add_argument("--pow-s", dest="pow_s", type=int)
        p.add_argument("--phi", help="'one' or a monomial like q{1,2}^2")
        p.add_argument("--alpha-prime", dest="alpha_prime", type=float)
        p.add_argument("--beta-prime", dest="beta_prime", type=float)
        p.add_argument("--beta-prime2", dest="beta_prime2", type=float)
        p.add_argument("--draws", type=int, help="site draws per Poisson level")

    p_check = sub.add_parser("check", help="run one identity, emit a JSON report")
    add_common(p_check)
    add_task_flags(p_check)
    p_check.set_defaults(func=_cmd_check)

    p_sweep = sub.add_parser("sweep", help="run one identity across sizes, emit CSV")
    add_common(p_sweep)
    add_task_flags(p_sweep)
    p_sweep.add_argument("--sizes", help="comma-separated ascending sizes")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_moment = sub.add_parser("moment", help="quenched average of one monomial")
    add_common(p_moment)
    p_moment.add_argument("--monomial", help="e.g. q{1,2}^2*q{1,3}^2")
    p_moment.set_defaults(func=_cmd_moment)

    p_coeffs = sub.add_parser("coeffs", help="first-family coefficients as exact rationals")
    add_common(p_coeffs, ensemble=False)
    p_coeffs.add_argument("--r", type=int)
    p_coeffs.add_argument("--s", type=int)
    p_coeffs.set_defaults(func=_cmd_coeffs)

    p_expand = sub.add_parser("expand", help="order-2n energy-expansion term list as JSON")
    add_common(p_expand, ensemble=False)
    p_expand.add_argument("--order", type=int)
    p_expand.add_argument("--s", type=int)
    p_expand.set_defaults(func=_cmd_expand)

    p_pressure = sub.add_parser("pressure", help="quenched pressure with error bar")
    add_common(p_pressure)
    p_pressure.set_defaults(func=_cmd_pressure)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
