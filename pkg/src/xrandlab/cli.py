"""Command-line front end.

Every command reads an optional INI file (``--config``), lets any key be
overridden by a ``--<section>-<key>`` flag, and writes its artifacts to
``--out``. Each artifact carries the resolved configuration hash and the seed.
Exit codes: 0 success, 2 bad input or configuration, 1 internal error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, attack, certify, model
from .data import SynthSpec, make_rng
from .errors import ConfigurationError, ContractError, UserInputError
from .explainer import explain_batch, save_explanations_csv
from .pipeline import QUERY_REF_OFFSET, PipelineConfig, Scenario, prepare, run_xba
from .xrand import Deployment, MechanismConfig, correct_sample, plan_from_json, save_plan, sse_utility

UNDEFENDED = "undefended"
SCORER_FILE = "scorer.txt"
PLAN_FILE = "flipplan.json"


def _floats(text):
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else int(text)


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


def _opt_str(text):
    return None if str(text).strip().lower() in ("", "none") else str(text)


# section -> key -> (parser, default). Every key is also a --section-key flag.
SCHEMA = {
    "data": {
        "n_samples": (int, 2000), "n_features": (int, 100), "n_goodware_informative": (int, 20),
        "n_malware_informative": (int, 20), "signal_strength": (float, 2.0), "quantization_levels": (int, 16),
        "decay": (float, 0.85), "value_range": (float, 4.0), "csv": (_opt_str, None),
        "label_column": (str, "label"), "split_fraction": (float, 0.7),
    },
    "model": {
        "kind": (str, "logistic"), "learning_rate": (float, 1.0), "n_iter": (int, 500), "l2": (float, 1e-3),
        "n_stumps": (int, 100), "depth": (int, 1),
    },
    "explainer": {
        "n_neighbors": (_opt_int, None), "kernel_width": (_opt_float, None), "scheme": (str, "mask"),
        "n_explain": (int, 500),
    },
    "mechanism": {
        "k": (_opt_int, None), "tau": (int, 50), "epsilon": (float, 1.0), "epsilon_mode": (str, "total"),
        "lam": (float, 0.1), "tol": (float, 1e-8), "orientation": (str, "goodware_first"),
    },
    "attack": {
        "epsilons": (_floats, (0.5, 1.0, 10.0)), "poison_rates": (_floats, (0.01,)), "trigger_sizes": (_ints, (10,)),
        "seeds": (_ints, (1,)), "trigger_size": (int, 10), "poison_rate": (float, 0.01),
    },
    "certify": {
        "n_samples": (int, 50), "n_models": (int, 100), "subsample_size": (int, 50), "confidence": (float, 0.99),
        "poison_rate": (float, 0.01), "pixeldp_epsilon": (float, 1.0), "noise": (str, "laplace"),
        "delta": (float, 0.0), "n_mc": (int, 1000), "mc_confidence": (float, 0.95), "boost_models": (int, 5),
        "boost_sigma": (float, 0.5), "boost_draws": (int, 1000), "thresholds": (_floats, ()),
    },
    "logodds": {"n_samples": (int, 200), "epsilon": (float, 1.0)},
}


def _canonical(value) -> str:
    if isinstance(value, tuple):
        return " ".join(_canonical(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "none" if value is None else str(value)


class Settings:
    """Resolved configuration: defaults, then the INI file, then flags."""

    def __init__(self, values: dict, seed: int, out: Path, threads: int):
        self.values = values
        self.seed = seed
        self.out = out
        self.threads = threads

    def __getitem__(self, key):
        section, name = key.split(".")
        return self.values[section][name]

    def config_hash(self) -> str:
        text = "\n".join(f"{s}.{k}={_canonical(v)}" for s in sorted(self.values)
                         for k, v in sorted(self.values[s].items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, "version": __version__}

    def pipeline(self) -> PipelineConfig:
        d = self.values["data"]
        synth = SynthSpec(d["n_samples"], d["n_features"], d["n_goodware_informative"], d["n_malware_informative"],
                          d["signal_strength"], d["quantization_levels"], d["decay"], d["value_range"])
        synth.validate()
        m = self.values["model"]
        train = model.TrainConfig(kind=m["kind"], learning_rate=m["learning_rate"], n_iter=m["n_iter"], l2=m["l2"],
                                  n_stumps=m["n_stumps"], depth=m["depth"], seed=self.seed)
        e = self.values["explainer"]
        mech = self.values["mechanism"]
        cfg = PipelineConfig(synth=synth, csv_path=d["csv"], label_column=d["label_column"], train=train,
                             split_fraction=d["split_fraction"], n_explain=e["n_explain"],
                             n_neighbors=e["n_neighbors"], kernel_width=e["kernel_width"], scheme=e["scheme"],
                             k=mech["k"], tau=mech["tau"], lam=mech["lam"], solver_tol=mech["tol"],
                             epsilon_mode=mech["epsilon_mode"], orientation=mech["orientation"],
                             threads=self.threads)
        cfg.validate()
        return cfg

    def mechanism(self, cfg: PipelineConfig, epsilon: float, trigger_size: int) -> MechanismConfig:
        return cfg.mechanism(epsilon, trigger_size, self.seed)


def resolve(args) -> Settings:
    values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
    seed, out, threads = 0, Path("out"), 1
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"{path}: config file not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigurationError(f"{path}: unreadable config: {exc}") from None
        for section in parser.sections():
            if section == "run":
                run = parser["run"]
                seed = _parse(int, run.get("seed", seed), "run.seed")
                out = Path(run.get("out", str(out)))
                threads = _parse(int, run.get("threads", threads), "run.threads")
                continue
            if section not in SCHEMA:
                raise ConfigurationError(f"{path}: unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{section}]")
                values[section][key] = _parse(SCHEMA[section][key][0], raw, f"{section}.{key}")
    for section, keys in SCHEMA.items():
        for key, (conv, _) in keys.items():
            raw = getattr(args, f"{section}__{key}", None)
            if raw is not None:
                values[section][key] = _parse(conv, raw, f"--{section}-{key}")
    for item in args.set or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"--set expects section.key=value, got {item!r}")
        name, raw = item.split("=", 1)
        section, key = name.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(f"--set: unknown key {name!r}")
        values[section][key] = _parse(SCHEMA[section][key][0], raw, name)
    if args.seed is not None:
        seed = args.seed
    if args.out is not None:
        out = Path(args.out)
    if args.threads is not None:
        threads = args.threads
    if not 0 <= seed < 2**64:
        raise ConfigurationError("--seed must be a 64-bit unsigned integer")
    if threads < 1:
        raise ConfigurationError("--threads must be >= 1")
    for name in ("epsilons", "poison_rates", "trigger_sizes", "seeds"):
        if not values["attack"][name]:
            raise ConfigurationError(f"attack.{name} must not be empty")
    if len(set(values["attack"]["seeds"])) != len(values["attack"]["seeds"]):
        raise ConfigurationError("attack.seeds must be distinct")
    return Settings(values, seed, out, threads)


def _parse(conv, raw, name):
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name}: cannot parse {raw!r}") from None


# output helpers ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows, settings: Settings, hash_column: str = "config_hash"):
    """Rows sorted by their leading columns; provenance appended as the last two columns."""
    prov = [settings.config_hash(), settings.seed]
    body = sorted(rows, key=lambda r: tuple(_sort_key(v) for v in r))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header) + [hash_column, "run_seed"])
        for row in body:
            writer.writerow([_fmt(v) for v in row] + prov)


def _prov_columns(settings: Settings) -> dict:
    return {"config_hash": settings.config_hash(), "run_seed": settings.seed}


def _sort_key(v):
    if isinstance(v, str):
        return (1, 0.0, v)
    return (0, float(v), "")


def write_json(path: Path, doc: dict, settings: Settings):
    doc = dict(doc)
    doc["provenance"] = settings.provenance()
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def _out_dir(settings: Settings) -> Path:
    settings.out.mkdir(parents=True, exist_ok=True)
    return settings.out


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigurationError(f"{path}: {what} not found; run the producing command first")
    return path


def _scenario(settings: Settings, cfg: PipelineConfig) -> Scenario:
    scorer = model.load(_require(settings.out / SCORER_FILE, "trained scorer (xrandlab train)"))
    scn = prepare(cfg, settings.seed, scorer=scorer)
    return scn


# commands ------------------------------------------------------------------

def cmd_train(settings: Settings) -> int:
    cfg = settings.pipeline()
    scn = prepare(cfg, settings.seed, explain=False)
    out = _out_dir(settings)
    model.save(scn.clean, out / SCORER_FILE, settings.provenance())
    doc = {"kind": scn.clean.kind, "accuracy_train": scn.clean.accuracy(scn.train),
           "accuracy_test": scn.clean.accuracy(scn.test), "n_train": scn.train.n_samples,
           "n_test": scn.test.n_samples, "n_features": scn.train.n_features}
    write_json(out / "train_metrics.json", doc, settings)
    print(f"trained {scn.clean.kind}: test accuracy {doc['accuracy_test']:.4f}")
    return 0


def cmd_explain(settings: Settings) -> int:
    cfg = settings.pipeline()
    scn = _scenario(settings, cfg)
    out = _out_dir(settings)
    expl = explain_batch(scn.clean, scn.defender_X, scn.spec, scn.defender_rows, cfg.threads)
    save_explanations_csv(expl, out / "explanations.csv", _prov_columns(settings))
    rows = [(rank + 1, int(j), float(scn.agg.values[j])) for rank, j in enumerate(scn.agg.sort_map)]
    write_csv(out / "aggregate.csv", ["rank", "feature", "value"], rows, settings)
    print(f"explained {len(expl)} samples")
    return 0


def cmd_defend(settings: Settings) -> int:
    cfg = settings.pipeline()
    scn = _scenario(settings, cfg)
    mech = settings.mechanism(cfg, settings["mechanism.epsilon"], settings["attack.trigger_size"])
    dep = scn.deployment(mech)
    out = _out_dir(settings)
    X = scn.defender_X
    originals = explain_batch(scn.clean, X, scn.spec, scn.defender_rows, cfg.threads)
    corrected = [correct_sample(scn.clean, x, e, dep.constraints, mech, scn.spec) for x, e in zip(X, originals)]
    sse = sse_utility(originals, corrected, mech, scn.agg.sort_map)
    extra = {"provenance": settings.provenance(), "retries": list(dep.retries)}
    save_plan(out / PLAN_FILE, dep.plan, dep.constraints, extra)
    save_explanations_csv(corrected, out / "corrected.csv", _prov_columns(settings))
    doc = {"sse_full": sse.full, "sse_top_k_tau": sse.top, "identity_holds": sse.identity_holds,
           "total_epsilon": dep.plan.total_epsilon, "realized_epsilon": float(sum(dep.plan.realized_epsilons())),
           "sensitivity": certify.explanation_sensitivity(originals, corrected),
           "n_flips": len(dep.plan.flip_set), "k": mech.k, "tau": mech.tau}
    write_json(out / "sse.json", doc, settings)
    print(f"flip set {list(dep.plan.flip_set)}; SSE {sse.full:.6g}")
    return 0


def _sweep_seed(settings: Settings, cfg: PipelineConfig, seed: int):
    scn = prepare(cfg, seed)
    rows = []
    for size in settings["attack.trigger_sizes"]:
        for rate in settings["attack.poison_rates"]:
            for eps in (None,) + tuple(settings["attack.epsilons"]):
                rep = run_xba(scn, eps, rate, size)
                rows.append((UNDEFENDED if eps is None else eps, rate, size, seed, rep.attack_success_rate,
                             rep.clean_accuracy_after))
    return rows


def cmd_attack(settings: Settings) -> int:
    cfg = settings.pipeline()
    seeds = settings["attack.seeds"]
    out = _out_dir(settings)
    if settings.threads > 1 and len(seeds) > 1:
        inner = replace(cfg, threads=1)
        with ThreadPoolExecutor(settings.threads) as pool:
            parts = list(pool.map(lambda s: _sweep_seed(settings, inner, s), seeds))
    else:
        parts = [_sweep_seed(settings, cfg, s) for s in seeds]
    rows = [r for part in parts for r in part]
    write_csv(out / "attack_sweep.csv", ["epsilon", "poison_rate", "trigger_size", "seed", "asr", "clean_acc"],
              rows, settings)
    print(f"wrote {len(rows)} sweep rows")
    return 0


def _load_deployment(settings: Settings, scn: Scenario) -> Deployment:
    text = _require(settings.out / PLAN_FILE, "flip plan (xrandlab defend)").read_text(encoding="utf-8")
    plan, Q = plan_from_json(text)
    if Q is None:
        raise ContractError("flip plan file carries no constraint set")
    if tuple(plan.sort_map) != tuple(int(t) for t in scn.agg.sort_map):
        raise ContractError("flip plan was produced for a different aggregate; rerun defend")
    mech = MechanismConfig(k=plan.k, tau=plan.tau, epsilon=tuple(plan.epsilons), lam=scn.cfg.lam,
                           tol=scn.cfg.solver_tol, orientation=plan.orientation, seed=settings.seed)
    return Deployment(scn.clean, scn.spec, mech, scn.agg, plan, Q)


def cmd_certify(settings: Settings) -> int:
    cfg = settings.pipeline()
    scn = _scenario(settings, cfg)
    dep = _load_deployment(settings, scn)
    sens_doc = json.loads(_require(settings.out / "sse.json", "SSE report (xrandlab defend)").read_text("utf-8"))
    out = _out_dir(settings)
    c = settings.values["certify"]
    n_test = min(c["n_samples"], scn.test.n_samples)
    X = scn.test.features[:n_test]
    y = scn.test.labels[:n_test]

    # training-time bagging certificate against the XBA poison crafted from defended explanations
    if c["poison_rate"] > 0:
        w_A = scn.attacker_aggregate(dep)
        trig = attack.craft_trigger(None, scn.attacker, settings["attack.trigger_size"],
                                    make_rng(settings.seed, "trigger"), aggregate_values=w_A)
        poisoned = attack.poison(scn.train, trig, c["poison_rate"], make_rng(settings.seed, "poison"))
    else:
        poisoned = scn.train
    clean_models = model.subsample_train(scn.train, c["subsample_size"], c["n_models"], cfg.train,
                                         make_rng(settings.seed, "bagging"), cfg.threads)
    poison_models = model.subsample_train(poisoned, c["subsample_size"], c["n_models"], cfg.train,
                                          make_rng(settings.seed, "bagging"), cfg.threads)
    rows, results = [], {"bagging": [], "pixeldp": [], "boost_rs": []}
    for t in range(n_test):
        bD = certify.label_prob_bounds(clean_models, X[t], c["confidence"])
        bP = certify.label_prob_bounds(poison_models, X[t], c["confidence"])
        rD = 0 if bD.abstain else certify.certified_size_search(
            certify.BaggingCertInput.from_bounds(bD, scn.train.n_samples, c["subsample_size"], c["confidence"])).r
        rP = 0 if bP.abstain else certify.certified_size_search(
            certify.BaggingCertInput.from_bounds(bP, poisoned.n_samples, c["subsample_size"], c["confidence"])).r
        r = certify.certified_poisoning_size(rD, rP).r
        label = -1 if bP.label is None else bP.label
        correct = label == int(y[t])
        rows.append((t, label, correct, r, "bagging", dep.plan.total_epsilon))
        results["bagging"].append((correct, r))

    pix = certify.PixelDpCertInput(sens_doc["sensitivity"], c["pixeldp_epsilon"], c["delta"], c["noise"],
                                   c["n_mc"], c["mc_confidence"])
    for t in range(n_test):
        res = certify.pixeldp_certify(scn.clean, X[t], pix, make_rng(settings.seed, "pixeldp", t))
        correct = res.label == int(y[t])
        rows.append((t, res.label, correct, res.mu_max, "pixeldp", c["pixeldp_epsilon"]))
        results["pixeldp"].append((correct, res.mu_max))

    ens = model.subsample_train(scn.train, scn.train.n_samples, c["boost_models"], cfg.train,
                                make_rng(settings.seed, "boost"), cfg.threads)
    boost = certify.BoostRsCertInput(c["boost_sigma"], n_draws=c["boost_draws"], confidence=c["confidence"])
    for t in range(n_test):
        res = certify.boost_rs_certify(ens, X[t], boost, make_rng(settings.seed, "boost_rs", t))
        correct = res.label == int(y[t])
        rows.append((t, res.label, correct, res.radius, "boost_rs", dep.plan.total_epsilon))
        results["boost_rs"].append((correct, res.radius))

    write_csv(out / "certification.csv", ["sample_id", "label", "correct", "certificate", "method", "epsilon"],
              rows, settings, hash_column="settings_hash")
    curve = []
    for method, res in results.items():
        thresholds = settings["certify.thresholds"] or sorted({0.0} | {float(v) for _, v in res})
        for L, acc in certify.certified_accuracy_curve(res, thresholds):
            curve.append((method, L, acc))
    write_csv(out / "certified_accuracy.csv", ["method", "threshold", "certified_accuracy"], curve, settings)
    print(f"certified {n_test} samples with 3 methods")
    return 0


def cmd_logodds(settings: Settings) -> int:
    from .explainer import explain, log_odds_score

    cfg = settings.pipeline()
    scn = _scenario(settings, cfg)
    mech = settings.mechanism(cfg, settings["logodds.epsilon"], settings["attack.trigger_size"])
    dep = scn.deployment(mech)
    out = _out_dir(settings)
    n = min(settings["logodds.n_samples"], scn.test.n_samples)
    ref = np.asarray(scn.spec.reference)
    rows = []
    for t in range(n):
        x = scn.test.features[t]
        e = explain(scn.clean, x, scn.spec, QUERY_REF_OFFSET + t)
        c = correct_sample(scn.clean, x, e, dep.constraints, mech, scn.spec)
        a = log_odds_score(scn.clean, x, e, ref)
        b = log_odds_score(scn.clean, x, c, ref)
        rows.append((t, a.value, b.value, a.clipped or b.clipped))
    write_csv(out / "logodds.csv", ["sample_id", "original_score", "xrand_score", "clipped"], rows, settings)
    med = np.median([r[1] for r in rows]), np.median([r[2] for r in rows])
    print(f"median log-odds: original {med[0]:.4f}, xrand {med[1]:.4f}")
    return 0


def _read_csv(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(settings: Settings) -> int:
    out = settings.out
    doc, found = {}, False
    if (out / "train_metrics.json").is_file():
        doc["train"] = json.loads((out / "train_metrics.json").read_text("utf-8"))
        found = True
    if (out / "sse.json").is_file():
        doc["defend"] = json.loads((out / "sse.json").read_text("utf-8"))
        found = True
    if (out / "attack_sweep.csv").is_file():
        groups = {}
        for r in _read_csv(out / "attack_sweep.csv"):
            key = f"epsilon={r['epsilon']} rate={r['poison_rate']} size={r['trigger_size']}"
            groups.setdefault(key, []).append(float(r["asr"]))
        doc["attack_mean_asr"] = {k: float(np.mean(v)) for k, v in sorted(groups.items())}
        found = True
    if (out / "logodds.csv").is_file():
        rows = _read_csv(out / "logodds.csv")
        doc["logodds_median"] = {"original": float(np.median([float(r["original_score"]) for r in rows])),
                                 "xrand": float(np.median([float(r["xrand_score"]) for r in rows]))}
        found = True
    if (out / "certified_accuracy.csv").is_file():
        curve = {}
        for r in _read_csv(out / "certified_accuracy.csv"):
            curve.setdefault(r["method"], []).append([float(r["threshold"]), float(r["certified_accuracy"])])
        doc["certified_accuracy"] = curve
        found = True
    if not found:
        raise ConfigurationError(f"{out}: no artifacts to report on")
    for section in doc.values():
        if isinstance(section, dict):
            section.pop("provenance", None)
    write_json(out / "report.json", doc, settings)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "train": (cmd_train, "train the clean scorer"),
    "explain": (cmd_explain, "explain the defender's samples and aggregate"),
    "defend": (cmd_defend, "run the mechanism once and emit the flip plan and corrected explanations"),
    "attack": (cmd_attack, "sweep the explanation-guided backdoor attack"),
    "certify": (cmd_certify, "bagging, PixelDP and boosting-RS certificates"),
    "logodds": (cmd_logodds, "log-odds faithfulness of original vs randomized explanations"),
    "report": (cmd_report, "summarize the artifacts in --out"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI file with [section] key = value")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="64-bit unsigned seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="SECTION.KEY=VALUE",
                        help="override any configuration key")
    for section, keys in SCHEMA.items():
        group = common.add_argument_group(f"[{section}] overrides")
        for key in keys:
            group.add_argument(f"--{section}-{key.replace('_', '-')}", dest=f"{section}__{key}",
                               default=argparse.SUPPRESS, metavar="VALUE")
    parser = argparse.ArgumentParser(prog="xrandlab", parents=[common], usage="%(prog)s [options] COMMAND [options]",
                                     description="Explanation-guided randomized response laboratory.")
    parser.add_argument("--version", action="version", version=f"xrandlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, usage="%(prog)s [options]", description=help_text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out", "threads", "set"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        settings = resolve(args)
        return COMMANDS[args.command][0](settings)
    except UserInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the exit-code contract needs a catch-all
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
