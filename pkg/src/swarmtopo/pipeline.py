"""generate -> precompute -> vectorize-fit -> train -> evaluate over a dataset store.

Each ``cmd_*`` function is what the matching CLI subcommand runs. They
return plain values and raise :class:`~swarmtopo.store.StoreError` (or a
subclass) for unmet preconditions.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import crocker as cr
from . import metrics as mt
from . import simulate as sim
from . import store as st
from . import vectorize as vz
from .model import LatentDynamicsModel, ModelConfig, SequenceBatch, Standardizer, TrainConfig, train
from .ph import rips_persistence, wasserstein1, pointset_wasserstein1
from .store import Dataset, StoreError

DATA_ENV = "SWARMTOPO_DATA"
VARIANTS = ("v1", "baseline")


class FingerprintMismatch(StoreError):
    pass


class LeakageRefused(StoreError):
    pass


def _quiet(*_a, **_k):
    pass


def data_root(path=None) -> Path:
    path = path or os.environ.get(DATA_ENV)
    if not path:
        raise StoreError(f"no dataset root given (use --data or set {DATA_ENV})")
    return Path(path)


def protocol_of(ds: Dataset) -> mt.EvalProtocol:
    p = ds.manifest["protocol"]
    return mt.EvalProtocol(p["n_splits"], p["train_fraction"], tuple(p["rates"]), p["seed"])


def _ids_hash(ids) -> str:
    return st.sha256_bytes(np.asarray(ids, dtype="<i8").tobytes())


def _run_seed(seed: int, split: int, rate: float) -> int:
    return int(np.random.SeedSequence([seed, split, int(round(rate * 1e6))]).generate_state(1)[0])


# ---------------------------------------------------------------- generate

def _simulate_record(model, n_points, seed_key, steps, dt, stride, window, random_length, beta):
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    if random_length:
        window = sim.random_window(steps, random_length, rng)
    obs = sim.generate_sequence(model, n_points, rng, steps=steps, dt=dt, stride=stride,
                                window=tuple(window) if window else None, beta=beta)
    return obs, (list(window) if window else None)


def regenerate_blob(ds: Dataset, i: int) -> bytes:
    """Re-simulate sequence ``i`` from its recorded seed and return the blob bytes."""
    c = ds.manifest["config"]
    rec = ds.sequences[i]
    obs, _ = _simulate_record(ds.model, c["n_points"], rec["seed"], c["steps"], c["dt"], c["stride"],
                              c["window"], c["random_window"], c["beta"])
    return st.encode_clouds(obs.clouds)


def cmd_generate(out_dir, model: str, n_sequences: int, *, n_points: int = 200, steps: int = 1000,
                 dt: float = 0.01, stride: int = 10, window=None, random_window: int | None = None,
                 seed: int = 0, beta: float = 0.5, n_splits: int = 5, train_fraction: float = 0.8,
                 rates=(0.2, 0.5, 0.8), log=_quiet) -> dict:
    """Simulate ``n_sequences`` runs and write blobs, then the manifest (last, atomically)."""
    if model not in sim.MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {', '.join(sim.MODELS)}")
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    root = Path(out_dir)
    (root / "clouds").mkdir(parents=True, exist_ok=True)
    config = {"model": model, "n_sequences": n_sequences, "n_points": n_points, "steps": steps, "dt": dt,
              "stride": stride, "window": list(window) if window else None, "random_window": random_window,
              "seed": seed, "beta": beta}
    records = []
    for i in range(n_sequences):
        seed_key = [seed, i]
        obs, win = _simulate_record(model, n_points, seed_key, steps, dt, stride, window, random_window, beta)
        blob = st.encode_clouds(obs.clouds)
        rel = f"clouds/seq_{i:05d}.f32"
        st.write_atomic(root / rel, blob)
        records.append({"id": i, "seed": seed_key, "params": obs.params.to_dict(),
                        "targets": obs.targets.tolist(), "n_obs": len(obs),
                        "frame_sizes": [int(c.shape[0]) for c in obs.clouds], "times": obs.times.tolist(),
                        "window": win, "file": rel, "offset": 0, "length": len(blob),
                        "sha256": st.sha256_bytes(blob)})
        log(f"generated sequence {i + 1}/{n_sequences}")
    manifest = {"schema_version": st.SCHEMA_VERSION, "model": model, "n_sequences": n_sequences,
                "target_names": list(sim.TARGET_NAMES[model]), "config": config,
                "config_hash": st.config_hash(config),
                "protocol": {"n_splits": n_splits, "train_fraction": train_fraction,
                             "rates": list(rates), "seed": seed},
                "sequences": records, "diagrams": None, "vectorizers": {}}
    st.write_json_atomic(root / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- precompute

def _diagram_job(args):
    root, i, max_dim, threshold = args
    ds = Dataset(root)
    try:
        clouds = ds.load_clouds(i)
        frames = [rips_persistence(c, max_dim, threshold) for c in clouds]
        blob = st.encode_diagrams(frames)
        st.write_atomic(ds.diagram_path(i), blob)
        return i, {"length": len(blob), "sha256": st.sha256_bytes(blob)}, None
    except Exception as exc:  # recorded per sequence, the run continues
        return i, None, f"{type(exc).__name__}: {exc}"


def cmd_precompute(root, max_dim: int = 1, *, workers: int = 1, threshold: float | None = None,
                   log=_quiet) -> dict:
    """Persistence diagrams for every sequence; skips entries already on disk.

    Returns {"computed", "skipped", "failed": {id: message}}.
    """
    if max_dim not in (0, 1, 2):
        raise ValueError(f"max_dim must be 0, 1 or 2, got {max_dim}")
    ds = Dataset(root)
    info = ds.manifest.get("diagrams") or {}
    if info.get("max_dim") != max_dim or info.get("threshold") != threshold:
        info = {"max_dim": max_dim, "threshold": threshold, "files": {}, "failed": {}}
    ds.manifest["diagrams"] = info
    todo = [i for i in range(len(ds)) if not ds.has_diagrams(i)]
    skipped = len(ds) - len(todo)
    jobs = [(str(ds.root), i, max_dim, threshold) for i in todo]
    failed = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_diagram_job, jobs))
    else:
        results = map(_diagram_job, jobs)
    for n, (i, rec, err) in enumerate(results):
        if rec is not None:
            info["files"][str(i)] = rec
            info["failed"].pop(str(i), None)
        else:
            failed[i] = err
            info["failed"][str(i)] = err
        if n % 50 == 49:
            ds.save_manifest()
        log(f"diagrams {n + 1}/{len(jobs)}")
    ds.save_manifest()
    return {"computed": len(todo) - len(failed), "skipped": skipped, "failed": failed}


# ---------------------------------------------------------------- vectorize

def load_all_diagrams(ds: Dataset) -> list:
    ds.require_diagrams()
    return [ds.load_diagrams(i) for i in range(len(ds))]


def cmd_vectorize_fit(root, splits=None, *, seed: int = 0, n_elements: int = vz.N_ELEMENTS,
                      sample_size: int = vz.SAMPLE_SIZE, diagrams=None, log=_quiet) -> dict:
    """Fit one vectorizer per split on its training sequences and vectorize every sequence."""
    ds = Dataset(root)
    proto = protocol_of(ds)
    split_ids = proto.splits(len(ds))
    splits = list(range(proto.n_splits)) if splits is None else list(splits)
    diagrams = diagrams if diagrams is not None else load_all_diagrams(ds)
    out = {}
    for s in splits:
        train_ids = split_ids[s][0]
        model = vz.fit(vz.group_by_dim(diagrams[i] for i in train_ids),
                       np.random.default_rng(np.random.SeedSequence([seed, s])),
                       n_elements=n_elements, sample_size=sample_size)
        fp = model.fingerprint()
        vectors = np.stack([[model.vectorize(frame) for frame in seq] for seq in diagrams]).astype("<f8")
        ds.vectors_path(s).parent.mkdir(parents=True, exist_ok=True)
        tmp = ds.vectors_path(s).with_suffix(".tmp.npy")
        np.save(tmp, vectors)
        os.replace(tmp, ds.vectors_path(s))
        st.write_json_atomic(ds.vectorizer_path(s), {"split": s, "fingerprint": fp, "dims": list(model.dims),
                                                     "train_ids_sha256": _ids_hash(train_ids),
                                                     "model": model.to_dict()})
        ds.manifest.setdefault("vectorizers", {})[str(s)] = fp
        out[s] = fp
        log(f"split {s}: vectorizer {fp[:12]}, vectors {vectors.shape}")
    ds.save_manifest()
    return out


def load_vectorizer(ds: Dataset, split: int):
    path = ds.vectorizer_path(split)
    if not path.exists():
        raise StoreError(f"no vectorizer for split {split}; run `swarmtopo vectorize-fit --data {ds.root} "
                         f"--splits {split}`")
    doc = json.loads(path.read_text())
    model = vz.VectorizerModel.from_dict(doc["model"])
    if model.fingerprint() != doc["fingerprint"]:
        raise StoreError(f"vectorizer file of split {split} is corrupt (fingerprint mismatch)")
    return model, np.load(ds.vectors_path(split))


# ---------------------------------------------------------------- train / evaluate

def rescaled_times(ds: Dataset) -> np.ndarray:
    rows = []
    for i in range(len(ds)):
        t = ds.times(i)
        span = t[-1] - t[0]
        rows.append((t - t[0]) / span if span > 0 else np.zeros_like(t))
    return np.stack(rows)


def _batch(times, X, mask, ids, Y=None) -> SequenceBatch:
    return SequenceBatch(times[ids], X[ids], mask[ids], None if Y is None else Y[ids])


def train_run(ds: Dataset, variant: str, split: int, rate: float, *, model_overrides=None,
              train_config: TrainConfig | None = None, log=_quiet):
    """Train one (variant, split, rate) cell, write its artifacts and score the test split."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    tc = train_config or TrainConfig()
    proto = protocol_of(ds)
    train_ids, test_ids = proto.splits(len(ds))[split]
    vec, X = load_vectorizer(ds, split)
    N, T, d = X.shape
    keep = proto.keep_mask(N, T, split, rate)
    feat = Standardizer.fit(X[train_ids], keep[train_ids])
    Y = ds.targets()
    tgt = Standardizer.fit(Y[train_ids])
    Xs, Ys = feat.apply(X), tgt.apply(Y)
    times = rescaled_times(ds)
    run_seed = _run_seed(tc.seed, split, rate)
    cfg = ModelConfig(**{**(model_overrides or {}), "input_dim": d, "n_targets": Y.shape[1],
                         "dynamics": variant == "v1", "seed": run_seed})
    tc_run = TrainConfig(**{**asdict(tc), "seed": run_seed})
    model = LatentDynamicsModel(cfg)
    history = train(model, _batch(times, Xs, keep, train_ids, Ys), tc_run,
                    log=lambda r: log(f"{variant} split {split} rate {rate}: epoch {r['epoch']} "
                                      f"total {r['total']:.4f} reg {r['reg_mse']:.4f}"))
    header = {"variant": variant, "split": split, "rate": rate, "model_config": asdict(cfg),
              "train_config": asdict(tc_run), "feature_std": feat.to_dict(), "target_std": tgt.to_dict(),
              "vectorizer_fingerprint": vec.fingerprint(), "train_ids_sha256": _ids_hash(train_ids),
              "dataset_config_hash": ds.manifest["config_hash"], "target_names": ds.manifest["target_names"]}
    opt = model.optimizer
    blob = st.encode_checkpoint(header, model.state_arrays(), opt.m, opt.v, opt.t)
    run = ds.run_dir(variant, split, rate)
    st.write_atomic(run / "checkpoint.bin", blob)
    st.write_rows_csv(run / "history.csv", history, ["epoch", "lr", "elbo", "reg_mse", "recon", "kl", "total"])
    pred = tgt.invert(model.predict(_batch(times, Xs, keep, test_ids)))
    return mt.score(variant, split, rate, Y[test_ids], pred)


def cmd_train(root, variant: str = "v1", splits=None, rates=None, *, model_overrides=None,
              train_config: TrainConfig | None = None, log=_quiet) -> list:
    ds = Dataset(root)
    ds.require_diagrams()
    proto = protocol_of(ds)
    splits = list(range(proto.n_splits)) if splits is None else list(splits)
    rates = list(proto.rates) if rates is None else list(rates)
    scores = [train_run(ds, variant, s, r, model_overrides=model_overrides, train_config=train_config, log=log)
              for s in splits for r in rates]
    (ds.root / "reports").mkdir(exist_ok=True)
    mt.write_scores_csv(ds.root / "reports" / f"train_{variant}.csv", scores, ds.manifest["target_names"])
    return scores


def load_run(path):
    header, params, m, v = st.decode_checkpoint(Path(path).read_bytes())
    model = LatentDynamicsModel(ModelConfig.from_dict(header["model_config"]))
    model.load_arrays(params)
    return header, model


def evaluate_checkpoint(ds: Dataset, path, *, on: str = "test", allow_train_eval: bool = False):
    header, model = load_run(path)
    split, rate = header["split"], header["rate"]
    vec, X = load_vectorizer(ds, split)
    if vec.fingerprint() != header["vectorizer_fingerprint"]:
        raise FingerprintMismatch(f"{path}: trained with vectorizer {header['vectorizer_fingerprint'][:12]}, "
                                  f"store has {vec.fingerprint()[:12]} for split {split}; refusing to evaluate")
    proto = protocol_of(ds)
    train_ids, test_ids = proto.splits(len(ds))[split]
    if header["train_ids_sha256"] != _ids_hash(train_ids):
        raise StoreError(f"{path}: split {split} of this dataset differs from the one used in training")
    if on == "train" and not allow_train_eval:
        raise LeakageRefused(f"{path}: refusing to evaluate on the checkpoint's own training split "
                             f"(pass --allow-train-eval to override)")
    ids = train_ids if on == "train" else test_ids
    N, T, _ = X.shape
    keep = proto.keep_mask(N, T, split, rate)
    feat = Standardizer.from_dict(header["feature_std"])
    tgt = Standardizer.from_dict(header["target_std"])
    pred = tgt.invert(model.predict(_batch(rescaled_times(ds), feat.apply(X), keep, ids)))
    return mt.score(header["variant"], split, rate, ds.targets()[ids], pred)


def crocker_features(ds: Dataset, dims=None, diagrams=None) -> np.ndarray:
    """Flattened crocker stacks of all sequences, cached under ``crocker/``."""
    ds.require_diagrams()
    max_dim = ds.diagram_info["max_dim"]
    dims = list(range(max_dim + 1)) if dims is None else list(dims)
    folder = ds.root / "crocker"
    folder.mkdir(exist_ok=True)
    rows = []
    for i in range(len(ds)):
        path = folder / f"seq_{i:05d}_dims{''.join(map(str, dims))}.npy"
        if path.exists():
            rows.append(np.load(path).astype(np.float64))
            continue
        frames = diagrams[i] if diagrams is not None else ds.load_diagrams(i)
        f = cr.sequence_features(frames, dims)
        np.save(path, f.astype("<u2"))
        rows.append(f)
    return np.stack(rows)


def crocker_scores(ds: Dataset, splits, dims=None, diagrams=None) -> list:
    X = crocker_features(ds, dims, diagrams)
    Y = ds.targets()
    proto = protocol_of(ds)
    out = []
    for s in splits:
        tr, te = proto.splits(len(ds))[s]
        pred, _ = cr.fit_predict(X[tr], Y[tr], X[te])
        out.append(mt.score("crocker", s, 1.0, Y[te], pred))
    return out


def table(ds: Dataset, scores) -> str:
    """Method x dataset summary with mean ± std of VE and SMAPE."""
    agg = mt.aggregate(scores)
    name = ds.model
    lines = [f"{'method':<12}| {name + ' VE':>20} | {name + ' SMAPE':>20}"]
    for method, a in agg.items():
        lines.append(f"{method:<12}| {max(a['ve_mean'], 0.0):>12.3f} ± {a['ve_std']:.3f} "
                     f"| {a['smape_mean']:>12.3f} ± {a['smape_std']:.3f}")
    return "\n".join(lines)


def cmd_evaluate(root, variants=VARIANTS, *, crocker: bool = False, splits=None, on: str = "test",
                 allow_train_eval: bool = False, log=_quiet) -> list:
    """Score every stored checkpoint of ``variants`` (and optionally the crocker baseline)."""
    ds = Dataset(root)
    proto = protocol_of(ds)
    scores = []
    for v in variants:
        for path in sorted((ds.root / "runs" / v).glob("split*_rate*/checkpoint.bin")):
            s = evaluate_checkpoint(ds, path, on=on, allow_train_eval=allow_train_eval)
            if splits is None or s.split in splits:
                scores.append(s)
                log(f"{v} split {s.split} rate {s.rate}: VE {s.ve:.3f} SMAPE {s.smape:.3f}")
    if crocker:
        for s in crocker_scores(ds, list(range(proto.n_splits)) if splits is None else splits):
            scores.append(s)
            log(f"crocker split {s.split}: VE {s.ve:.3f} SMAPE {s.smape:.3f}")
    if not scores:
        raise StoreError(f"nothing to evaluate under {ds.root / 'runs'}; run `train` first or pass --crocker")
    reports = ds.root / "reports"
    reports.mkdir(exist_ok=True)
    mt.write_scores_csv(reports / "scores.csv", scores, ds.manifest["target_names"])
    summary = table(ds, scores)
    st.write_atomic(reports / "summary.txt", (summary + "\n").encode())
    return scores


# ---------------------------------------------------------------- stability

def _chain_pairs(ds: Dataset, ids, n_pairs: int, size: int, rng):
    """Equal-size cloud pairs: the same points of one particle system at consecutive times."""
    out = []
    while len(out) < n_pairs:
        i = int(rng.choice(ids))
        clouds = ds.load_clouds(i)
        t = int(rng.integers(len(clouds) - 1)) if len(clouds) > 1 else 0
        a, b = clouds[t], clouds[min(t + 1, len(clouds) - 1)]
        if a.shape != b.shape:
            continue
        idx = rng.choice(a.shape[0], min(size, a.shape[0]), replace=False)
        out.append((a[idx], b[idx]))
    return out


def cmd_stability_suite(root, split: int = 0, *, trials: int = 10_000, pairs: int = 1000,
                        chain_pairs: int = 200, chain_size: int = 20, seed: int = 0, log=_quiet) -> dict:
    """Empirical Lipschitz constant on train diagrams, checked on held-out pairs.

    Also checks the diagram-vs-point-cloud stability bound on sub-sampled
    clouds of held-out sequences.
    """
    ds = Dataset(root)
    proto = protocol_of(ds)
    train_ids, test_ids = proto.splits(len(ds))[split]
    vec, _ = load_vectorizer(ds, split)
    rng = np.random.default_rng(np.random.SeedSequence([seed, split]))
    train_d = vz.group_by_dim(ds.load_diagrams(i) for i in train_ids)
    test_d = vz.group_by_dim(ds.load_diagrams(i) for i in test_ids)
    report = {"split": split, "dims": {}, "chain": {}}
    violations = 0
    for k in vec.dims:
        K = vz.estimate_lipschitz(vec, train_d[k], rng, trials=trials)
        pool = [d for d in test_d.get(k, []) if len(d)]
        worst, bad, used = 0.0, 0, 0
        for _ in range(pairs):
            a, b = rng.choice(len(pool), 2, replace=False)
            w = wasserstein1(pool[a], pool[b])
            if not (0 < w < math.inf):
                continue
            gap = float(np.linalg.norm(vec.transform(pool[a]) - vec.transform(pool[b])))
            used += 1
            worst = max(worst, gap / w)
            bad += gap > K * w + 1e-12
        violations += bad
        report["dims"][str(k)] = {"K": K, "heldout_max_ratio": worst, "pairs": used, "violations": bad}
        log(f"dim {k}: K={K:.4g}, held-out max ratio {worst:.4g}, violations {bad}/{used}")
    max_dim = min(1, ds.diagram_info.get("max_dim", 1))
    chain = _chain_pairs(ds, test_ids, chain_pairs, chain_size, rng)
    for k in range(max_dim + 1):
        worst, bad = 0.0, 0
        for P, Q in chain:
            m = P.shape[0]
            lhs = wasserstein1(rips_persistence(P, k)[k], rips_persistence(Q, k)[k])
            bound = 2 * math.comb(m - 1, k) * pointset_wasserstein1(P, Q) * m
            bad += lhs > bound + 1e-9
            worst = max(worst, lhs / bound if bound > 0 else 0.0)
        violations += bad
        report["chain"][str(k)] = {"pairs": len(chain), "max_ratio": worst, "violations": bad}
        log(f"chain dim {k}: max ratio {worst:.4g}, violations {bad}/{len(chain)}")
    report["violations"] = violations
    st.write_json_atomic(ds.root / "reports" / f"stability_split{split}.json", report)
    return report
