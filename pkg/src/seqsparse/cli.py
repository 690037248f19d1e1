"""Command-line entry point: ``seqsparse <command> <config-file>``.

Commands: datagen, recover, train, gradcheck, equiv, eval. All numerics come
from the config file; run ``seqsparse keys <command>`` to list the keys a
command accepts. Output files are written atomically and contain no
timestamps, so reruns give identical bytes.

Exit codes: 0 success, 1 validation failure, 2 bad config, 3 I/O error,
4 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    Field,
    check_input_path,
    check_output_path,
    optional,
    parse_config,
    to_bool,
    to_list,
)
from .datagen import SequentialModelSpec, load_image_columns, measure, mse, psnr, synthetic_split
from .formats import FormatError, atomic_write_text, format_scalar, read_container, read_ssr1, write_container, write_ssr1
from .gradcheck import KINDS, gradcheck_suite
from .linops import DICTIONARY_KINDS, DictionarySpec, build_dictionary, make_rng, sample_measurement_matrix, spectral_norm_sq
from .recovery import LassoProblem, SistaParams, ista, ista_converged, sista, sista_converged
from .training import INITS, MODES, OPTIMIZERS, SplitData, TrainConfig, predict, random_search_lambdas, train
from .unfolded import TiedSistaNet, equivalence_check

log = logging.getLogger("seqsparse")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4
SPLITS = ("train", "val", "test")


class Diverged(RuntimeError):
    pass


# ---------------------------------------------------------------- schemas

_SOLVER = {
    "alpha": Field(float, 1.0, help="SISTA step parameter"),
    "lambda1": Field(float, 0.02, help="sparsity weight"),
    "lambda2": Field(float, 0.002, help="prediction-error weight"),
}

SCHEMAS = {
    "datagen": {
        "out_dir": Field(str, required=True),
        "n": Field(int, 32), "m": Field(int, 8), "T": Field(int, 16),
        "train_count": Field(int, 512), "val_count": Field(int, 64), "test_count": Field(int, 64),
        "seed": Field(int, 0, help="sample seed; split s uses 10*seed + (1, 2, 3)"),
        "measurement_seed": Field(int, 0),
        "dictionary": Field(str, "haar", choices=DICTIONARY_KINDS),
        "levels": Field(optional(int), None, help="wavelet levels, default log2(n)"),
        "sigma2": Field(float, 0.0), "nu1": Field(float, 50.0), "nu2": Field(float, 1e4),
        "init_nonzeros": Field(int, 2), "init_scale": Field(float, 0.5), "init_level": Field(float, 0.3),
        "train_images": Field(to_list, (), help="PGM files; replaces synthetic sequences when given"),
        "val_images": Field(to_list, ()), "test_images": Field(to_list, ()),
    },
    "recover": {
        "data_dir": Field(str, required=True), "out": Field(str, required=True),
        "split": Field(str, "test", choices=SPLITS),
        "method": Field(str, "sista", choices=("ista", "ista_converged", "sista", "sista_converged")),
        "k": Field(int, 3), "rel_tol": Field(float, 1e-4), "max_iter": Field(int, 10_000),
        "peak": Field(float, 1.0),
        **_SOLVER,
    },
    "train": {
        "data_dir": Field(str, required=True), "out_dir": Field(str, required=True),
        "mode": Field(str, "tied_sista", choices=MODES), "init": Field(str, "sista", choices=INITS),
        "k_layers": Field(int, 3), "lr": Field(float, 1e-4), "batch_size": Field(int, 50),
        "epochs": Field(int, 10), "seed": Field(int, 0),
        "optimizer": Field(str, "rmsprop", choices=OPTIMIZERS),
        "rmsprop_momentum": Field(float, 0.9), "rmsprop_avg": Field(float, 0.1),
        "clamp_lambda2_nonneg": Field(to_bool, False), "freeze": Field(to_list, ()),
        "connectivity": Field(optional(str), None, choices=(None, "generic", "sista")),
        "log_alpha": Field(to_bool, False), "max_grad_norm": Field(optional(float), None),
        "search_trials": Field(int, 0, help="random-search (lambda1, lambda2) before training"),
        "search_sequences": Field(int, 128), "search_seed": Field(int, 0),
        **_SOLVER,
    },
    "gradcheck": {
        "kinds": Field(to_list, KINDS, choices=KINDS), "instances": Field(int, 20), "seed": Field(int, 0),
        "n": Field(int, 6), "m": Field(int, 3), "T": Field(int, 3), "k": Field(int, 2),
        "step": Field(float, 1e-6), "kink_tol": Field(float, 1e-3), "tol": Field(float, 1e-6),
        "inject_sign_flip": Field(optional(str), None, help="test hook: negate one analytic gradient"),
    },
    "equiv": {
        "instances": Field(int, 100), "seed": Field(int, 0), "n": Field(int, 16), "m": Field(int, 8),
        "T": Field(int, 5), "k": Field(int, 3), "tol": Field(float, 1e-9),
    },
    "eval": {
        "checkpoint": Field(str, required=True), "data_dir": Field(str, required=True),
        "out": Field(str, required=True), "split": Field(str, "test", choices=SPLITS),
        "peak": Field(float, 1.0),
    },
}


# ---------------------------------------------------------------- datasets

def _split_seed(seed: int, split: str) -> int:
    return 10 * seed + SPLITS.index(split) + 1


def _write_manifest(path, manifest: dict):
    atomic_write_text(path, "".join(f"{k} = {format_scalar(v)}\n" for k, v in manifest.items()))


def _read_manifest(path) -> dict:
    from .formats import parse_scalar

    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key.strip()] = parse_scalar(value)
    return out


def load_dataset(data_dir, split: str):
    """``(SplitData, A, D, F)`` for one split of a ``datagen`` directory."""
    d = Path(data_dir)
    man = _read_manifest(d / "manifest.txt")
    A, D, F = (read_ssr1(d / f"{name}.ssr1") for name in ("A", "D", "F"))
    count, T = int(man[f"{split}_count"]), int(man["T"])
    n, m = D.shape[0], A.shape[0]
    x, y = np.zeros((count, T, m)), np.zeros((count, T, n))
    for i in range(count):
        _, mats = read_container(d / split / f"{i:05d}.seq")
        if mats["x"].shape != (T, m) or mats["y"].shape != (T, n):
            raise FormatError(f"{split}/{i:05d}.seq: shape mismatch with manifest")
        x[i], y[i] = mats["x"], mats["y"]
    return SplitData(x, y), A, D, F


def cmd_datagen(cfg: dict) -> int:
    out = check_output_path(cfg["out_dir"])
    images = {s: [check_input_path(p) for p in cfg[f"{s}_images"]] for s in SPLITS}
    n, m, T = cfg["n"], cfg["m"], cfg["T"]
    if not (1 <= m <= n) or T < 0:
        raise ConfigError("need 1 <= m <= n and T >= 0")
    if any(images.values()) and T != n:
        raise ConfigError("image columns give sequences of length n; set T = n")
    levels = cfg["levels"]
    if levels is None:
        levels = int(np.log2(n)) if cfg["dictionary"] != "identity" else 0
    spec = DictionarySpec(cfg["dictionary"], n, levels)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    A = sample_measurement_matrix(m, n, cfg["measurement_seed"])
    D = build_dictionary(spec)
    F = np.eye(n)
    try:
        model = SequentialModelSpec(A, D, F, cfg["sigma2"], cfg["nu1"], cfg["nu2"], T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    manifest = {
        "format": "seqsparse-dataset-1", "n": n, "m": m, "T": T,
        "dictionary": cfg["dictionary"], "levels": levels, "measurement_seed": cfg["measurement_seed"],
        "sigma2": float(cfg["sigma2"]), "nu1": float(cfg["nu1"]), "nu2": float(cfg["nu2"]),
        "init_nonzeros": cfg["init_nonzeros"], "init_scale": float(cfg["init_scale"]),
        "init_level": float(cfg["init_level"]), "seed": cfg["seed"],
    }
    out.mkdir(parents=True, exist_ok=True)
    write_ssr1(out / "A.ssr1", A)
    write_ssr1(out / "D.ssr1", D)
    write_ssr1(out / "F.ssr1", F)
    for split in SPLITS:
        seed = _split_seed(cfg["seed"], split)
        manifest[f"{split}_seed"] = seed
        if images[split]:
            seqs = []
            for i, path in enumerate(images[split]):
                y = load_image_columns(path, n).y_seq
                seqs.append((measure(y, A, cfg["sigma2"], seed, i), y, None))
            manifest[f"{split}_source"] = "images:" + ",".join(p.name for p in images[split])
        else:
            x, y, h = synthetic_split(model, cfg[f"{split}_count"], seed, cfg["init_nonzeros"],
                                      cfg["init_scale"], cfg["init_level"])
            seqs = list(zip(x, y, h))
            manifest[f"{split}_source"] = "synthetic"
        manifest[f"{split}_count"] = len(seqs)
        for i, (x, y, h) in enumerate(seqs):
            mats = {"x": x, "y": y} if h is None else {"x": x, "y": y, "h": h}
            write_container(out / split / f"{i:05d}.seq", {"split": split, "index": i, "seed": seed}, mats)
    _write_manifest(out / "manifest.txt", manifest)
    print(f"wrote {sum(manifest[f'{s}_count'] for s in SPLITS)} sequences to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- recovery

def _solver_params(cfg, A, D, F) -> SistaParams:
    try:
        p = SistaParams(A, D, F, np.zeros(D.shape[0]), cfg["alpha"], cfg["lambda1"], cfg["lambda2"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lip = spectral_norm_sq(A @ D) + max(p.lambda2, 0.0)
    if p.alpha < lip:
        log.warning("alpha=%g is below the step bound %g; descent is not guaranteed", p.alpha, lip)
    return p


def _recover_one(cfg, p: SistaParams, x):
    method = cfg["method"]
    if method == "sista":
        return sista(x, p, cfg["k"]).y_seq, cfg["k"]
    if method == "sista_converged":
        r = sista_converged(x, p, cfg["rel_tol"], cfg["max_iter"])
        return r.y_seq, int(np.max(r.iterations, initial=0))
    ys, iters = np.zeros((len(x), p.n)), 0
    for t, xt in enumerate(x):
        prob = LassoProblem(p.A, p.D, xt, p.lambda1)
        if method == "ista":
            h, _ = ista(prob, np.zeros(p.n), p.alpha, cfg["k"], trace=False)
            iters = cfg["k"]
        else:
            run = ista_converged(prob, np.zeros(p.n), p.alpha, cfg["rel_tol"], cfg["max_iter"])
            h, iters = run.h, max(iters, run.iters)
        ys[t] = p.D @ h
    return ys, iters


def _metrics_csv(rows, y_hat, y, peak) -> str:
    lines = ["sequence,mse,psnr,iterations"]
    for i, it in enumerate(rows):
        lines.append(f"{i},{mse(y_hat[i], y[i])!r},{psnr(y_hat[i], y[i], peak)!r},{it}")
    if len(rows):
        lines.append(f"mean,{mse(y_hat, y)!r},{psnr(y_hat, y, peak)!r},{max(rows)}")
    return "\n".join(lines) + "\n"


def cmd_recover(cfg: dict) -> int:
    check_input_path(cfg["data_dir"], "dir")
    out = check_output_path(cfg["out"])
    data, A, D, F = load_dataset(cfg["data_dir"], cfg["split"])
    p = _solver_params(cfg, A, D, F)
    y_hat, iters = np.zeros_like(data.y), []
    for i, x in enumerate(data.x):
        y_hat[i], it = _recover_one(cfg, p, x)
        iters.append(it)
    atomic_write_text(out, _metrics_csv(iters, y_hat, data.y, cfg["peak"]))
    if len(iters):
        print(f"{cfg['method']} {cfg['split']} mse {mse(y_hat, data.y):.6g} psnr {psnr(y_hat, data.y, cfg['peak']):.4g} dB")
    else:
        print("empty split; wrote header only")
    return EXIT_OK


# ---------------------------------------------------------------- training

def _scalars(obj) -> str:
    if isinstance(obj, TiedSistaNet):
        p = obj.params
        return f"alpha={p.alpha:.6g} lambda1={p.lambda1:.6g} lambda2={p.lambda2:.6g}"
    arrs = obj.arrays()
    if "alpha" in arrs:
        return " ".join(f"{k}={np.array2string(arrs[k], precision=4)}" for k in ("alpha", "lambda1", "lambda2"))
    return ""


def cmd_train(cfg: dict) -> int:
    check_input_path(cfg["data_dir"], "dir")
    out = check_output_path(cfg["out_dir"])
    try:
        tcfg = TrainConfig(
            mode=cfg["mode"], init=cfg["init"], k_layers=cfg["k_layers"], lr=cfg["lr"],
            batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"], optimizer=cfg["optimizer"],
            rmsprop_momentum=cfg["rmsprop_momentum"], rmsprop_avg=cfg["rmsprop_avg"],
            clamp_lambda2_nonneg=cfg["clamp_lambda2_nonneg"], freeze_mask=frozenset(cfg["freeze"]),
            connectivity=cfg["connectivity"], log_alpha=cfg["log_alpha"], max_grad_norm=cfg["max_grad_norm"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    tr, A, D, F = load_dataset(cfg["data_dir"], "train")
    va = load_dataset(cfg["data_dir"], "val")[0]
    base = _solver_params(cfg, A, D, F)
    if cfg["search_trials"] > 0:
        sub = SplitData(tr.x[: cfg["search_sequences"]], tr.y[: cfg["search_sequences"]])
        l1, l2, err = random_search_lambdas(sub, base, tcfg.k_layers, cfg["search_trials"], cfg["search_seed"])
        base.lambda1, base.lambda2 = l1, l2
        print(f"lambda search: lambda1={l1:.6g} lambda2={l2:.6g} (train mse {err:.6g})")
    try:
        report = train(tr, va, tcfg, base)
    except ValueError as exc:  # e.g. freeze mask naming unknown parameters
        raise ConfigError(str(exc)) from None

    print(f"epoch 0 val mse {report.val_mse[0]!r}")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "losses.csv", report.to_csv())
    final, best = report.params, report.best_params
    extra = {"epochs_completed": report.epochs[-1], "best_epoch": report.best_epoch, "diverged": report.diverged}
    save_checkpoint(out / "final.ckpt", final, extra)
    save_checkpoint(out / "best.ckpt", best, extra)
    print(f"final val mse {report.val_mse[-1]!r} (best {min(report.val_mse)!r} at epoch {report.best_epoch})")
    if isinstance(final, TiedSistaNet):
        before = _scalars(TiedSistaNet(base, tcfg.k_layers)) if tcfg.init == "sista" else "random init"
        print(f"scalars before: {before}")
        print(f"scalars after:  {_scalars(final)}")
        if tcfg.init == "sista":
            print(f"max |change| D {np.max(np.abs(final.params.D - D)):.6g} F {np.max(np.abs(final.params.F - F)):.6g}")
    elif _scalars(final):
        print(f"scalars after: {_scalars(final)}")
    if report.diverged:
        log.error("training diverged after epoch %d; partial report kept", report.epochs[-1])
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    check_input_path(cfg["checkpoint"])
    check_input_path(cfg["data_dir"], "dir")
    out = check_output_path(cfg["out"])
    obj, _ = load_checkpoint(cfg["checkpoint"])
    data = load_dataset(cfg["data_dir"], cfg["split"])[0]
    y_hat = predict(obj, data.x) if len(data.x) else data.y.copy()
    if not np.all(np.isfinite(y_hat)):
        raise Diverged("network output is not finite")
    k = getattr(obj, "k", 0)
    atomic_write_text(out, _metrics_csv([k] * len(data.x), y_hat, data.y, cfg["peak"]))
    if len(data.x):
        print(f"eval {cfg['split']} mse {mse(y_hat, data.y):.6g} psnr {psnr(y_hat, data.y, cfg['peak']):.4g} dB")
    return EXIT_OK


# ---------------------------------------------------------------- checks

def cmd_gradcheck(cfg: dict) -> int:
    dims = dict(n=cfg["n"], m=cfg["m"], t=cfg["T"], k=cfg["k"])
    results = gradcheck_suite(cfg["kinds"], cfg["instances"], cfg["seed"], cfg["kink_tol"], cfg["step"],
                              inject_sign_flip=cfg["inject_sign_flip"], **dims)
    ok = True
    for kind, res in results.items():
        worst = max((r.max_error for r in res), default=0.0)
        passed = worst < cfg["tol"]
        ok &= passed
        print(f"{kind}: {len(res)} instances, max relative error {worst:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVALID


def equiv_instance(seed: int, n: int = 16, m: int = 8, t: int = 5):
    """Random ``(SistaParams, x_seq)`` with lambdas in [0.01, 1] and alpha in [1, 4]."""
    rng = make_rng(seed, 9)
    # entries of variance 1/n keep ||A||^2 near 1 so the recursion stays bounded
    A = rng.standard_normal((m, n)) / np.sqrt(n)
    D = np.linalg.qr(rng.standard_normal((n, n)))[0]
    F = np.eye(n) + 0.1 * rng.standard_normal((n, n)) / np.sqrt(n)
    p = SistaParams(A, D, F, rng.standard_normal(n), rng.uniform(1, 4), rng.uniform(0.01, 1), rng.uniform(0.01, 1))
    return p, rng.standard_normal((t, m))


def cmd_equiv(cfg: dict) -> int:
    worst = 0.0
    for i in range(cfg["instances"]):
        p, x = equiv_instance(cfg["seed"] * 1_000_003 + i, cfg["n"], cfg["m"], cfg["T"])
        worst = max(worst, equivalence_check(p, cfg["k"], x, cfg["tol"]).max_dev)
    passed = worst < cfg["tol"]
    print(f"{cfg['instances']} instances, max deviation {worst:.3e} (tol {cfg['tol']:g}) {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_INVALID


COMMANDS = {
    "datagen": cmd_datagen, "recover": cmd_recover, "train": cmd_train,
    "gradcheck": cmd_gradcheck, "equiv": cmd_equiv, "eval": cmd_eval,
}


def run(command: str, config_text: str) -> int:
    """Parse ``config_text`` for ``command`` and execute it; returns the exit code."""
    try:
        cfg = parse_config(config_text, SCHEMAS[command])
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        log.error("bad config: %s", exc)
        return EXIT_CONFIG
    except (OSError, FormatError, KeyError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (Diverged, FloatingPointError) as exc:
        log.error("diverged: %s", exc)
        return EXIT_DIVERGED


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="seqsparse", description="Sequential sparse recovery and unfolded RNNs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    ap.add_argument("command", choices=sorted(COMMANDS) + ["keys"])
    ap.add_argument("config", help="config file, or a command name after 'keys'")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "keys":
        if args.config not in SCHEMAS:
            log.error("unknown command %r", args.config)
            return EXIT_CONFIG
        for key, fld in SCHEMAS[args.config].items():
            flag = " (required)" if fld.required else f" = {fld.default!r}"
            print(f"{key}{flag}" + (f"  # {fld.help}" if fld.help else ""))
        return EXIT_OK
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    return run(args.command, text)


if __name__ == "__main__":
    sys.exit(main())
