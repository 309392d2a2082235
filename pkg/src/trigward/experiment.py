"""Config-driven orchestration: train model zoos, generate and persist
perturbation archives, fill robustness matrices, run the first-order
checks, and emit tables/plots — with content-addressed caching so the
expensive training stage never silently reruns.

Every artifact file name embeds a fingerprint of the configuration that
produced it; rerunning an unchanged config is a pure cache hit, and an
output directory created under a different config is refused.
"""

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import report as report_mod
from .attacks import AdversarialSet, AttackConfig
from .checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from .data import load_dataset
from .defenses import DefendedModel, PreprocessorConfig
from .errors import FingerprintConflictError, SchemaError
from .evaluation import RobustnessMatrix, clean_accuracy, generate_adversarial_set, robust_accuracy
from .fingerprint import file_sha256, fingerprint
from .models import build_model
from .theory import (flip_experiment, gradient_alignment, linearization_error,
                     theorem2_check, trigger_magnitude)
from .training import (TrainSchedule, TriggeredModel, train_adversarial_pgd,
                       train_fixed_trigger, train_learnable_trigger, train_standard)
from .trigger import init_fixed_trigger, init_learnable_trigger

log = logging.getLogger(__name__)

MODEL_KINDS = ("standard", "fixed_trigger", "learnable_trigger", "adversarial_pgd")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["dataset", "schedule", "models", "attacks"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "seed": {"type": "integer"},
                "data_dir": {"type": ["string", "null"]},
            },
        },
        "schedule": {
            "type": "object",
            "required": ["epochs"],
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "lr_initial": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number"},
                "weight_decay": {"type": "number"},
                "batch_size": {"type": "integer", "minimum": 1},
            },
        },
        "models": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "arch", "kind", "role", "seed"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "arch": {"type": "string"},
                    "kind": {"enum": list(MODEL_KINDS)},
                    "role": {"enum": ["surrogate", "victim", "both"]},
                    "seed": {"type": "integer"},
                    "epochs": {"type": "integer", "minimum": 0},
                    "lr_initial": {"type": "number", "exclusiveMinimum": 0},
                    "eps_t": {"type": "number", "exclusiveMinimum": 0},
                    "step_alpha": {"type": "number", "exclusiveMinimum": 0},
                    "trigger_seed": {"type": "integer"},
                    "at_eps": {"type": "number", "minimum": 0},
                    "at_steps": {"type": "integer", "minimum": 1},
                    "defense": {
                        "type": "object",
                        "required": ["kind"],
                        "properties": {"kind": {"enum": ["bdr", "gaussian", "rp"]},
                                       "bit_depth": {"type": "integer"},
                                       "sigma": {"type": "number"},
                                       "scale_max": {"type": "number"},
                                       "seed": {"type": "integer"}},
                        "additionalProperties": False,
                    },
                    "column": {"type": "string"},
                },
            },
        },
        "attacks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["method", "eps"],
                "additionalProperties": False,
                "properties": {
                    "method": {"enum": ["fgsm", "ifgsm", "pgd", "mifgsm", "difgsm"]},
                    "eps": {"type": "number", "minimum": 0},
                    "attack_step": {"type": "number", "exclusiveMinimum": 0},
                    "iterations": {"type": "integer", "minimum": 1},
                    "momentum_mu": {"type": "number"},
                    "di_probability": {"type": "number", "minimum": 0, "maximum": 1},
                    "di_resize_max": {"type": ["integer", "null"]},
                    "random_start": {"type": ["boolean", "null"]},
                    "seed": {"type": "integer"},
                },
            },
        },
        "theory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "victims": {"type": "array", "items": {"type": "string"}},
                "flip_proportions": {"type": "array", "items": {"type": "number"}},
                "theorem2_eps": {"type": "array", "items": {"type": "number"}},
                "n_random": {"type": "integer", "minimum": 1},
                "sample_count": {"type": "integer", "minimum": 1},
                "eval_subset": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "advanced": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "surrogates": {"type": "array", "items": {"type": "object"}},
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"batch_size": {"type": "integer", "minimum": 1}},
        },
    },
}


def validate_config(raw):
    import jsonschema

    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw),
                    key=lambda e: list(e.absolute_path))
    if errors:
        keys = ["/".join(str(p) for p in e.absolute_path) or "<root>" for e in errors]
        msgs = "; ".join(f"{k}: {e.message}" for k, e in zip(keys, errors))
        raise SchemaError(f"invalid experiment config: {msgs}", keys=keys)
    ids = [m["id"] for m in raw["models"]]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate model ids", keys=["models"])
    for m in raw["models"]:
        if m["kind"] == "fixed_trigger" and "eps_t" not in m:
            raise SchemaError(f"model {m['id']}: fixed_trigger requires eps_t",
                              keys=[f"models/{m['id']}/eps_t"])
        if m["kind"] == "learnable_trigger" and "step_alpha" not in m:
            raise SchemaError(f"model {m['id']}: learnable_trigger requires step_alpha",
                              keys=[f"models/{m['id']}/step_alpha"])
        if m["kind"] == "adversarial_pgd" and "at_eps" not in m:
            raise SchemaError(f"model {m['id']}: adversarial_pgd requires at_eps",
                              keys=[f"models/{m['id']}/at_eps"])
    return raw


class ExperimentConfig:
    """Validated experiment description; the fingerprint of the raw document
    keys the whole artifact directory."""

    def __init__(self, raw):
        self.raw = validate_config(raw)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            raw = yaml.safe_load(f)
        if not isinstance(raw, dict):
            raise SchemaError("config file must hold a mapping", keys=["<root>"])
        return cls(raw)

    def fingerprint(self):
        # where results land does not affect what they are
        return fingerprint({k: v for k, v in self.raw.items()
                            if k not in ("output_dir", "name")})

    @property
    def seed(self):
        return int(self.raw.get("seed", 0))

    @property
    def output_dir(self):
        return self.raw.get("output_dir", "runs/experiment")

    def dataset(self, split):
        d = self.raw["dataset"]
        frac = d.get("train_fraction" if split == "train" else "test_fraction", 1.0)
        return load_dataset(d["name"], split, subset_fraction=frac,
                            seed=d.get("seed", self.seed), data_dir=d.get("data_dir"))

    def schedule(self, entry=None):
        s = dict(self.raw["schedule"])
        entry = entry or {}
        return TrainSchedule(
            epochs=int(entry.get("epochs", s["epochs"])),
            lr_initial=float(entry.get("lr_initial", s.get("lr_initial", 0.1))),
            momentum=float(s.get("momentum", 0.9)),
            weight_decay=float(s.get("weight_decay", 5e-4)),
            batch_size=int(s.get("batch_size", 128)),
            seed=int(entry.get("seed", self.seed)),
        )

    def model_entries(self, role=None):
        for m in self.raw["models"]:
            if role is None or m["role"] == role or m["role"] == "both":
                yield m

    def attack_configs(self):
        for a in self.raw["attacks"]:
            yield AttackConfig(**{**a, "seed": int(a.get("seed", self.seed))})

    def column_label(self, entry):
        if "column" in entry:
            return entry["column"]
        kind = entry["kind"]
        if kind == "standard":
            if "defense" in entry:
                return PreprocessorConfig(**entry["defense"]).label()
            return "w/o"
        if kind == "adversarial_pgd":
            return "AT-PGD"
        if kind == "fixed_trigger":
            return f"fixed(eps_t={entry['eps_t']:.4g})"
        return f"learnable(alpha={entry['step_alpha']:.4g})"


# ---------------------------------------------------------------------------
# training stage
# ---------------------------------------------------------------------------


def _model_fingerprint(config, entry):
    basis = {"entry": {k: v for k, v in entry.items() if k not in ("role", "column", "defense")},
             "dataset": config.raw["dataset"],
             "schedule": config.raw["schedule"],
             "seed": config.seed}
    return fingerprint(basis)


def _train_entry(config, entry, train_set):
    sched = config.schedule(entry)
    model = build_model(entry["arch"], train_set.class_count, init_seed=entry["seed"],
                        input_shape=train_set.image_shape)
    kind = entry["kind"]
    if kind == "standard":
        train_standard(model, train_set, sched)
        return model, None
    if kind == "adversarial_pgd":
        train_adversarial_pgd(model, train_set, sched, eps=float(entry["at_eps"]),
                              attack_steps=int(entry.get("at_steps", 7)))
        return model, None
    tseed = int(entry.get("trigger_seed", entry["seed"] + 1))
    if kind == "fixed_trigger":
        trig = init_fixed_trigger(train_set.image_shape, float(entry["eps_t"]), tseed)
        tm = train_fixed_trigger(model, trig, train_set, sched)
    else:
        trig = init_learnable_trigger(train_set.image_shape, float(entry["step_alpha"]), tseed)
        tm = train_learnable_trigger(model, trig, train_set, sched)
    return tm.model, tm.trig


def _checkpoint_path(out_dir, entry_id, fp):
    return Path(out_dir) / "checkpoints" / f"{entry_id}.{fp}.npz"


def _train_worker(raw_config, entry, out_dir):
    config = ExperimentConfig(raw_config)
    path = _checkpoint_path(out_dir, entry["id"], _model_fingerprint(config, entry))
    if path.exists():
        return str(path)
    train_set = config.dataset("train")
    model, trig = _train_entry(config, entry, train_set)
    tmp = path.with_suffix(".tmp.npz")
    save_checkpoint(model, tmp, trigger=trig)
    tmp.replace(path)
    return str(path)


def stage_train(config, out_dir, parallel=1):
    """Train every model entry (advanced-scenario surrogates included),
    skipping fingerprint-matched checkpoints."""
    entries = list(config.model_entries()) + _advanced_entries(config)
    todo = [e for e in entries
            if not _checkpoint_path(out_dir, e["id"], _model_fingerprint(config, e)).exists()]
    if todo:
        log.info("training %d/%d models (%d cached)", len(todo), len(entries),
                 len(entries) - len(todo))
    if parallel > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_train_worker, config.raw, e, str(out_dir)) for e in todo]
            for f in futures:
                f.result()
    else:
        for e in todo:
            _train_worker(config.raw, e, str(out_dir))
    return {e["id"]: _checkpoint_path(out_dir, e["id"], _model_fingerprint(config, e))
            for e in entries}


def _load_models(config, out_dir):
    entries = list(config.model_entries()) + _advanced_entries(config)
    paths = {e["id"]: _checkpoint_path(out_dir, e["id"], _model_fingerprint(config, e))
             for e in entries}
    loaded = {}
    for mid, path in paths.items():
        model, trig = load_checkpoint(path)
        loaded[mid] = {"model": model, "trigger": trig, "path": path,
                       "hash": checkpoint_hash(path)}
    return loaded


def _victim_predictor(entry, bundle):
    if bundle["trigger"] is not None:
        return TriggeredModel(bundle["model"], bundle["trigger"])
    model = bundle["model"]
    if "defense" in entry:
        return DefendedModel(model, PreprocessorConfig(**entry["defense"]))
    return model


def _surrogate_target(bundle):
    if bundle["trigger"] is not None:
        return TriggeredModel(bundle["model"], bundle["trigger"])
    return bundle["model"]


# ---------------------------------------------------------------------------
# attack stage
# ---------------------------------------------------------------------------


def _delta_path(out_dir, surrogate_id, attack_fp, ckpt_hash):
    return Path(out_dir) / "attacks" / f"{surrogate_id}.{attack_fp}.{ckpt_hash}.npz"


def stage_attack(config, out_dir):
    """Generate one perturbation archive per (surrogate, attack)."""
    loaded = _load_models(config, out_dir)
    test_set = config.dataset("test")
    surrogate_entries = list(config.model_entries("surrogate"))
    adv = _advanced_entries(config)
    archives = {}
    for entry in surrogate_entries + adv:
        bundle = loaded[entry["id"]] if entry["id"] in loaded else None
        if bundle is None:
            continue
        target = _surrogate_target(bundle)
        for cfg in config.attack_configs():
            path = _delta_path(out_dir, entry["id"], cfg.fingerprint(), bundle["hash"])
            if not path.exists():
                path.parent.mkdir(parents=True, exist_ok=True)
                ds = generate_adversarial_set(target, test_set, cfg,
                                              surrogate_id=entry["id"],
                                              batch_size=_eval_bs(config))
                tmp = path.with_suffix(".tmp.npz")
                ds.save(tmp)
                tmp.replace(path)
            archives[(entry["id"], cfg.fingerprint())] = path
    return archives


def _eval_bs(config):
    return int(config.raw.get("evaluation", {}).get("batch_size", 256))


def _advanced_entries(config):
    adv = config.raw.get("advanced", {})
    if not adv.get("enabled"):
        return []
    entries = []
    for e in adv.get("surrogates", []):
        e = dict(e)
        e.setdefault("role", "surrogate")
        entries.append(e)
    return entries


def _advanced_leak_check(config):
    """Warn when an advanced surrogate shares a trigger seed with a victim."""
    victim_seeds = {e.get("trigger_seed") for e in config.model_entries("victim")
                    if e["kind"].endswith("trigger")}
    flagged = []
    for e in _advanced_entries(config):
        if e.get("trigger_seed") in victim_seeds:
            warnings.warn(f"advanced surrogate {e['id']} shares the victim trigger seed: "
                          "unrealistically strong attacker", stacklevel=2)
            flagged.append(e["id"])
    return flagged


# ---------------------------------------------------------------------------
# evaluation stage
# ---------------------------------------------------------------------------


def stage_eval(config, out_dir, advanced=False):
    """Replay persisted perturbations against every victim; write tables."""
    loaded = _load_models(config, out_dir)
    test_set = config.dataset("test")
    victims = {e["id"]: (_victim_predictor(e, loaded[e["id"]]), e)
               for e in config.model_entries("victim")}
    surrogate_entries = _advanced_entries(config) if advanced else list(
        config.model_entries("surrogate"))
    if advanced and not surrogate_entries:
        return None
    flags = _advanced_leak_check(config) if advanced else []

    # advanced surrogates are trained by the training stage too
    if advanced:
        for e in surrogate_entries:
            if e["id"] not in loaded:
                raise FingerprintConflictError(
                    f"advanced surrogate {e['id']} has no checkpoint; run the train stage")

    clean = {vid: clean_accuracy(v, test_set, _eval_bs(config))
             for vid, (v, _) in victims.items()}

    matrices = {}
    long_rows = []
    for cfg in config.attack_configs():
        values = np.full((len(victims), len(surrogate_entries)), np.nan)
        for si, sentry in enumerate(surrogate_entries):
            sbundle = loaded[sentry["id"]]
            path = _delta_path(out_dir, sentry["id"], cfg.fingerprint(), sbundle["hash"])
            delta_set = AdversarialSet.load(path)
            for vi, (vid, (victim, ventry)) in enumerate(victims.items()):
                r = robust_accuracy(victim, None, cfg, test_set, delta_set=delta_set,
                                    surrogate_id=sentry["id"], batch_size=_eval_bs(config))
                values[vi, si] = r
                long_rows.append({
                    "dataset": test_set.name, "victim_id": vid,
                    "defense": config.column_label(ventry),
                    "surrogate_id": sentry["id"], "attack": cfg.method,
                    "eps": cfg.eps, "robust_accuracy": r, "clean_accuracy": clean[vid],
                    "seed": config.seed,
                    "victim_checkpoint": loaded[vid]["hash"],
                    "surrogate_checkpoint": sbundle["hash"],
                })
        key = cfg.method if not advanced else f"{cfg.method}(advanced)"
        matrices[key] = RobustnessMatrix(
            [e["id"] for e in surrogate_entries], list(victims), key, values,
            fingerprints={"attack": cfg.fingerprint(), "dataset": test_set.name},
            flags=(["advanced"] + flags) if advanced else [])

    suffix = "advanced" if advanced else "main"
    results_dir = Path(out_dir) / "results"
    results_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_long_csv(long_rows, results_dir / f"long_{suffix}.csv")
    payload = {"clean_accuracy": clean,
               "matrices": {k: m.to_dict() for k, m in matrices.items()}}
    with open(results_dir / f"matrices_{suffix}.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return {"matrices": matrices, "clean": clean, "long_rows": long_rows}


def advanced_scenario(config, out_dir=None):
    """Attacker trains surrogates with the defender's paradigm, then transfers.

    Returns the robustness matrix for the first configured attack (all are
    persisted to the artifact directory).
    """
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.load(config)
    out_dir = Path(out_dir or config.output_dir)
    if not _advanced_entries(config):
        raise SchemaError("advanced scenario requires advanced.surrogates", keys=["advanced"])
    _prepare_out_dir(config, out_dir)
    stage_train(config, out_dir)
    stage_attack(config, out_dir)
    result = stage_eval(config, out_dir, advanced=True)
    first = next(iter(result["matrices"].values()))
    return first


# ---------------------------------------------------------------------------
# theory stage
# ---------------------------------------------------------------------------


def stage_theory(config, out_dir):
    loaded = _load_models(config, out_dir)
    tcfg = config.raw.get("theory", {})
    victim_ids = tcfg.get("victims") or [
        e["id"] for e in config.model_entries("victim") if e["kind"].endswith("trigger")]
    train_set = config.dataset("train")
    test_set = config.dataset("test")
    seed = int(tcfg.get("seed", config.seed))
    eval_subset = int(tcfg.get("eval_subset", min(512, test_set.n)))
    sub = test_set if eval_subset >= test_set.n else _head_subset(test_set, eval_subset)

    theory_dir = Path(out_dir) / "theory"
    theory_dir.mkdir(parents=True, exist_ok=True)
    out = {}
    for vid in victim_ids:
        bundle = loaded[vid]
        if bundle["trigger"] is None:
            continue
        tm = TriggeredModel(bundle["model"], bundle["trigger"])
        entry = {"trigger_mse": trigger_magnitude(tm.trig),
                 "trigger_mode": tm.trig.mode}
        align_train = gradient_alignment(tm.model, tm.trig, train_set)
        align_test = gradient_alignment(tm.model, tm.trig, test_set)
        for name, al in (("train", align_train), ("test", align_test)):
            entry[f"alignment_{name}"] = {
                "sign_agreement": al.sign_agreement, "dot_product": al.dot_product,
                "log_C": al.log_C, "residuals": al.linearization_residuals}
        props = tcfg.get("flip_proportions", [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0])
        curve = flip_experiment(tm, props, sub, seed=seed)
        entry["flip"] = {"proportions": curve.proportions, "loss": curve.loss_values,
                         "accuracy": curve.accuracies}
        report_mod.plot_flip_curve(curve, theory_dir / f"flip_{vid}.png",
                                   title=f"sign-flip probe: {vid}")
        eps_t_ref = tm.trig.eps_t if tm.trig.mode == "fixed" else tm.trig.linf()
        t2_entries = []
        for eps in tcfg.get("theorem2_eps", [eps_t_ref / 2.0]):
            rep = theorem2_check(tm, float(eps), sub,
                                 n_random=int(tcfg.get("n_random", 200)), seed=seed)
            t2_entries.append({
                "eps": rep.eps, "eps_t": rep.eps_t, "bound": rep.bound,
                "loss_star": rep.loss_star, "loss_zero": rep.loss_zero,
                "excess_star": rep.excess_star,
                "random_mean": float(rep.loss_random.mean()),
                "random_max": float(rep.loss_random.max()),
                "fraction_random_below_star": rep.fraction_random_below_star(),
                "eps_t_substituted": rep.eps_t_substituted})
            report_mod.plot_bound_check(rep, theory_dir / f"bound_{vid}_{eps:.4f}.png",
                                        title=f"bound check: {vid}")
        entry["theorem2"] = t2_entries
        entry["linearization"] = linearization_error(
            tm.model, tm.trig, sub, sample_count=int(tcfg.get("sample_count", 256)),
            seed=seed)
        out[vid] = entry
    with open(theory_dir / "theory.json", "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
    return out


def _head_subset(dataset, n):
    from .data import LabeledImageSet
    return LabeledImageSet(dataset.images[:n], dataset.labels[:n],
                           dataset.class_count, f"{dataset.name}[:{n}]")


# ---------------------------------------------------------------------------
# report stage and the run driver
# ---------------------------------------------------------------------------


def stage_report(config, out_dir):
    results_dir = Path(out_dir) / "results"
    payloads = {}
    for suffix in ("main", "advanced"):
        p = results_dir / f"matrices_{suffix}.json"
        if p.exists():
            with open(p) as f:
                payloads[suffix] = json.load(f)
    if "main" not in payloads:
        raise FingerprintConflictError("eval stage has not produced results; run eval first")

    victim_columns = {e["id"]: config.column_label(e) for e in config.model_entries("victim")}
    report_files = []
    mirror = {}
    for suffix, payload in payloads.items():
        matrices = {k: RobustnessMatrix.from_dict(d) for k, d in payload["matrices"].items()}
        incomplete = [k for k, m in matrices.items() if not m.is_complete()]
        table = report_mod.pivot_table(matrices, victim_columns, payload["clean_accuracy"])
        if incomplete:
            table["flags"] = ["INCOMPLETE"] + incomplete
        path = results_dir / f"defense_table_{suffix}.csv"
        report_mod.write_pivot_csv(table, path)
        report_files.append(path)
        mirror[f"defense_table_{suffix}"] = table

    # trigger-bound sweep table when several fixed-trigger victims exist
    sweep_entries = sorted((e for e in config.model_entries("victim")
                            if e["kind"] == "fixed_trigger"),
                           key=lambda e: e["eps_t"])
    if len(sweep_entries) >= 2 and "main" in payloads:
        payload = payloads["main"]
        matrices = {k: RobustnessMatrix.from_dict(d) for k, d in payload["matrices"].items()}
        rows = []
        header_attacks = list(matrices)
        for e in sweep_entries:
            row = {"eps_t": e["eps_t"], "clean": payload["clean_accuracy"][e["id"]]}
            for k, m in matrices.items():
                row[k] = m.per_victim_mean()[e["id"]]
            rows.append(row)
        path = results_dir / "sweep_table.csv"
        with open(path, "w", newline="") as f:
            import csv as _csv
            w = _csv.writer(f)
            w.writerow(["eps_t", "clean"] + header_attacks)
            for row in rows:
                w.writerow([f"{row['eps_t']:.6f}", f"{row['clean']:.6f}"]
                           + [f"{row[k]:.6f}" for k in header_attacks])
        report_files.append(path)
        mirror["sweep_table"] = rows
        first_attack = header_attacks[0]
        report_mod.plot_sweep([{"eps_t": r["eps_t"], "robust": r[first_attack],
                                "clean": r["clean"]} for r in rows],
                              results_dir / "sweep.png")

    mirror_path = report_mod.json_mirror(mirror, results_dir / "report.json")
    report_files.append(mirror_path)
    return _write_manifest(config, out_dir)


def _write_manifest(config, out_dir):
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".timing.json"):
            files[str(p.relative_to(out_dir))] = file_sha256(p)
    manifest = {"config_fingerprint": config.fingerprint(), "version": __version__,
                "config": config.raw, "files": files}
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def _prepare_out_dir(config, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / "config_fingerprint.txt"
    fp = config.fingerprint()
    if marker.exists():
        existing = marker.read_text().strip()
        if existing != fp:
            raise FingerprintConflictError(
                f"output dir {out_dir} belongs to config {existing}, not {fp}; "
                "refusing to overwrite")
    else:
        marker.write_text(fp)
    with open(out_dir / "config.yaml", "w") as f:
        yaml.safe_dump(config.raw, f, sort_keys=True)


@dataclass
class RunArtifact:
    out_dir: Path
    manifest: dict


STAGES = ("train", "attack", "eval", "theory", "report")


def run_experiment(config, out=None, stages=STAGES, parallel=1, resume=True):
    """Execute stages in dependency order; cached artifacts are reused.

    ``resume`` is accepted for CLI symmetry; fingerprint-matched reuse is
    always on, which is what makes reruns of an unchanged config free.
    """
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.load(config)
    out_dir = Path(out or config.output_dir)
    _prepare_out_dir(config, out_dir)

    wanted = set(stages)
    manifest = None
    if "train" in wanted:
        stage_train(config, out_dir, parallel=parallel)
    if "attack" in wanted:
        stage_attack(config, out_dir)
    if "eval" in wanted:
        stage_eval(config, out_dir, advanced=False)
        if _advanced_entries(config):
            stage_eval(config, out_dir, advanced=True)
    if "theory" in wanted:
        stage_theory(config, out_dir)
    if "report" in wanted:
        manifest = stage_report(config, out_dir)
    if manifest is None:
        manifest = _write_manifest(config, out_dir)
    return RunArtifact(out_dir=out_dir, manifest=manifest)
