"""Experiment harness: generate / vca / unmix-classic / train / infer /
evaluate / sweep as subcommands over a JSON config.

Every command writes its artifacts plus a ``manifest.json`` echoing the
effective config, the seed, a config hash, wall time, and the package
version; CSV artifacts carry the seed and hash in a leading comment line.
Figures render as PNG next to the delimited output.

Exit codes: 0 success; 2 bad usage or config; 3 missing input file;
4 invalid data or failed validation; 5 numeric failure (diverged
training, degenerate data).  ``--threads N`` (or the MLMUNMIX_THREADS
environment variable) pins the BLAS thread pools before numpy loads;
``--threads 1`` makes runs bitwise reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_INVALID_DATA = 4
EXIT_NUMERIC = 5

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _pin_threads(n: int | None) -> int | None:
    if n is None:
        env = os.environ.get("MLMUNMIX_THREADS")
        n = int(env) if env else None
    if n is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)
    return n


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} does not exist")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"config file {p} is not valid JSON: {e}") from e


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _stamp(cfg: dict, seed: int) -> str:
    return f"seed={seed} config={_config_hash(cfg)}"


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                    threads, t_start: float) -> None:
    from . import __version__

    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": _config_hash(cfg),
        "seed": seed,
        "threads": threads,
        "wall_time_s": round(time.time() - t_start, 3),
        "version": __version__,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True),
                                           encoding="utf-8")


def _require(path, what: str) -> Path:
    p = Path(path)
    probe = p if p.exists() else Path(str(p) + ".hdr.json")
    if not probe.exists():
        raise FileNotFoundError(f"missing {what}: {p}")
    return p


def _scene_config(cfg: dict, seed: int):
    from .scene import SceneConfig

    section = dict(cfg.get("scene", {}))
    snr = section.pop("snr_db", 30.0)
    section.setdefault("seed", seed)
    return SceneConfig(snr_db=None, **section), snr


def _read_truth(truth_dir: Path, endmembers: int | None = None):
    import numpy as np

    from .hsi import read_endmembers, read_map_csv

    E = read_endmembers(_require(truth_dir / "endmembers.csv", "truth endmembers"))
    r = E.shape[1]
    planes = [read_map_csv(_require(truth_dir / f"abundance_{k + 1}.csv",
                                    "truth abundance plane")) for k in range(r)]
    A = np.stack(planes, axis=2)
    P = read_map_csv(_require(truth_dir / "pmap.csv", "truth probability map"))
    return E, A, P


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, cfg: dict) -> int:
    import numpy as np

    from . import figures
    from .hsi import read_endmembers, write_cube, write_endmembers, write_maps
    from .scene import generate_scene

    t0 = time.time()
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("out", "out/scene"))
    scene_cfg, snr = _scene_config(cfg, seed)
    snr_list = snr if isinstance(snr, list) else [snr]

    E_file = cfg.get("scene", {}).get("endmember_file") or getattr(args, "endmembers", None)
    E_given = read_endmembers(_require(E_file, "endmember library")) if E_file else None

    for snr_db in snr_list:
        scene_cfg.snr_db = snr_db
        sub = out if len(snr_list) == 1 else out / f"snr{snr_db:g}"
        cube, A, P, E = generate_scene(scene_cfg, E=E_given)
        sub.mkdir(parents=True, exist_ok=True)
        stamp = _stamp(cfg, seed)
        write_cube(cube, sub / "scene",
                   provenance={"seed": seed, "config_sha256": _config_hash(cfg)})
        truth = sub / "truth"
        write_maps(A, P, truth, comment=stamp)
        write_endmembers(E, truth / "endmembers.csv")
        figs = sub / "figures"
        figs.mkdir(exist_ok=True)
        figures.plot_endmembers(figs / "endmembers.png", {"truth": E})
        figures.plot_abundance_grid(figs / "abundance.png", A, "ground truth")
        figures.plot_pmap(figs / "pmap.png", P)
        figures.plot_phist(figs / "phist.png", P)
        _write_manifest(sub, "generate", cfg, seed, args.threads, t0)
        print(f"generate: wrote scene {cube.height}x{cube.width}x{cube.bands} "
              f"(snr={snr_db}) to {sub}")
    return EXIT_OK


def cmd_vca(args, cfg: dict) -> int:
    from . import figures
    from .hsi import read_cube, write_endmembers
    from .vca import VcaConfig, vca_extract

    t0 = time.time()
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("out", "out/vca"))
    section = cfg.get("vca", {})
    cube_path = args.cube or section.get("cube")
    if not cube_path:
        raise FileNotFoundError("missing cube: pass --cube or set vca.cube in the config")
    cube = read_cube(_require(cube_path, "input cube"))
    vcfg = VcaConfig(endmembers=int(section.get("endmembers", args.endmember_count or 4)),
                     seed=seed, snr_db=section.get("snr_db"))
    E = vca_extract(cube.as_pixel_matrix().T, vcfg)
    out.mkdir(parents=True, exist_ok=True)
    write_endmembers(E, out / "endmembers.csv")
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    figures.plot_endmembers(figs / "endmembers.png", {"vca": E})
    _write_manifest(out, "vca", cfg, seed, args.threads, t0)
    print(f"vca: extracted {E.shape[1]} endmembers from {cube_path} to {out}")
    return EXIT_OK


def _write_estimates(out: Path, cube, E, A, P, recon, stamp: str,
                     extra_csv: dict | None = None) -> None:
    import numpy as np

    from . import figures
    from .hsi import write_cube, write_endmembers, write_maps

    write_maps(A, P, out, comment=stamp)
    write_endmembers(np.clip(E, 0.0, 1.0), out / "endmembers.csv")
    write_cube(recon, out / "recon")
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    figures.plot_endmembers(figs / "endmembers.png", {"estimate": E})
    figures.plot_abundance_grid(figs / "abundance.png", A, "estimated abundance")
    figures.plot_pmap(figs / "pmap.png", P)
    figures.plot_phist(figs / "phist.png", P)
    for name, rows in (extra_csv or {}).items():
        (out / name).write_text("\n".join(rows) + "\n", encoding="utf-8")


def cmd_unmix_classic(args, cfg: dict) -> int:
    import numpy as np

    from .classic import SolverConfig, fcls_all, mlmp_unmix, supervised_unmix_all
    from .hsi import HsiCube, read_cube, read_endmembers
    from .vca import VcaConfig, vca_extract

    t0 = time.time()
    base_seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("out", "out/classic"))
    section = dict(cfg.get("solver", {}))
    method = args.method or section.pop("method", "supervised")
    if method not in ("fcls", "supervised", "mlmp"):
        raise ValueError(f"unknown classic method {method!r}")
    cube_path = args.cube or section.pop("cube", None)
    if not cube_path:
        raise FileNotFoundError("missing cube: pass --cube or set solver.cube in the config")
    cube = read_cube(_require(cube_path, "input cube"))
    X = cube.as_pixel_matrix()
    em_path = args.endmembers or section.pop("endmembers", None)
    r = int(section.pop("endmember_count", 4))
    vca_snr = section.pop("vca_snr_db", None)

    for rep in range(args.repeats):
        seed = base_seed + rep
        run_dir = out if args.repeats == 1 else out / f"rep{rep:02d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        scfg = SolverConfig(seed=seed, **section)
        if em_path:
            E = read_endmembers(_require(em_path, "endmember file"))
        elif method != "mlmp":
            E = vca_extract(X.T, VcaConfig(endmembers=r, seed=seed, snr_db=vca_snr))
        else:
            E = None
        extra = None
        if method == "fcls":
            A, _, converged = fcls_all(X, E, scfg)
            P = np.zeros(X.shape[0])
            recon = A @ E.T
        elif method == "supervised":
            A, P, _ = supervised_unmix_all(X, E, scfg)
            den = np.maximum(1.0 - P[:, None] * (A @ E.T), 1e-12)
            recon = (1.0 - P)[:, None] * (A @ E.T) / den
        else:
            res = mlmp_unmix(X, r, E_init=E, cfg=scfg)
            E, A, P = res.endmembers, res.abundance, res.p
            recon = (1.0 - P)[:, None] * (A @ E.T) + P[:, None] * (A @ E.T) * X
            extra = {"objective_trace.csv": ["objective"] + [repr(v) for v in res.trace]}
        shape2 = (cube.height, cube.width)
        _write_estimates(run_dir, cube, E,
                         A.reshape(shape2 + (E.shape[1],)), P.reshape(shape2),
                         HsiCube(recon.reshape(cube.values.shape), cube.wavelengths),
                         _stamp(cfg, seed), extra)
        _write_manifest(run_dir, f"unmix-classic:{method}", cfg, seed, args.threads, t0)
        print(f"unmix-classic[{method}]: seed {seed} -> {run_dir}")
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    from . import figures
    from .hsi import read_cube, read_endmembers, write_endmembers
    from .network import NetworkSpec, TrainConfig, init_network, save_checkpoint, train
    from .vca import VcaConfig, vca_extract

    t0 = time.time()
    base_seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("out", "out/train"))
    net_cfg = dict(cfg.get("network", {}))
    train_cfg = dict(cfg.get("train", {}))
    cube_path = args.cube or train_cfg.pop("cube", None)
    if not cube_path:
        raise FileNotFoundError("missing cube: pass --cube or set train.cube in the config")
    cube = read_cube(_require(cube_path, "input cube"))
    mode = args.mode or net_cfg.pop("mode", "1d")
    patch = args.patch or net_cfg.pop("patch", 5 if mode == "3d" else None)
    r = int(net_cfg.pop("endmembers", 4))
    em_path = args.endmembers or train_cfg.pop("endmembers", None)
    vca_snr = train_cfg.pop("vca_snr_db", None)

    for rep in range(args.repeats):
        seed = base_seed + rep
        run_dir = out if args.repeats == 1 else out / f"rep{rep:02d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        if em_path:
            E_init = read_endmembers(_require(em_path, "endmember file"))
        else:
            E_init = vca_extract(cube.as_pixel_matrix().T,
                                 VcaConfig(endmembers=r, seed=seed, snr_db=vca_snr))
        spec = NetworkSpec(mode=mode, bands=cube.bands, endmembers=r,
                           patch=patch if mode == "3d" else None,
                           seed=seed, **net_cfg)
        net = init_network(spec, E_init)
        tcfg = TrainConfig(shuffle_seed=seed, **train_cfg)
        history = train(net, cube, tcfg)
        save_checkpoint(net, run_dir / "checkpoint.mlmnet")
        write_endmembers(E_init, run_dir / "endmembers_init.csv")
        lines = [f"# {_stamp(cfg, seed)}", "epoch,mean_sad"]
        lines += [f"{i + 1},{v!r}" for i, v in enumerate(history)]
        (run_dir / "loss_history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        figs = run_dir / "figures"
        figs.mkdir(exist_ok=True)
        figures.plot_loss(figs / "loss.png", history)
        _write_manifest(run_dir, f"train:{mode}", cfg, seed, args.threads, t0)
        print(f"train[{mode}]: seed {seed}, {tcfg.epochs} epochs, "
              f"final loss {history[-1]:.5f} -> {run_dir}")
    return EXIT_OK


def _checkpoint_runs(path: Path) -> list:
    """A checkpoint file, a run dir holding one, or a dir of rep*/ runs."""
    if path.is_file():
        return [path]
    if (path / "checkpoint.mlmnet").exists():
        return [path / "checkpoint.mlmnet"]
    reps = sorted(path.glob("rep*/checkpoint.mlmnet"))
    if reps:
        return reps
    raise FileNotFoundError(f"no checkpoint.mlmnet under {path}")


def cmd_infer(args, cfg: dict) -> int:
    from .hsi import read_cube
    from .network import extract_endmembers, infer_maps, load_checkpoint

    t0 = time.time()
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    section = cfg.get("infer", {})
    cube_path = args.cube or section.get("cube")
    ckpt_path = args.checkpoint or section.get("checkpoint")
    if not cube_path:
        raise FileNotFoundError("missing cube: pass --cube or set infer.cube in the config")
    if not ckpt_path:
        raise FileNotFoundError("missing checkpoint: pass --checkpoint or set infer.checkpoint")
    cube = read_cube(_require(cube_path, "input cube"))
    runs = _checkpoint_runs(_require(ckpt_path, "checkpoint"))
    out_base = Path(args.out) if args.out else None

    for ckpt in runs:
        net = load_checkpoint(ckpt)
        A, P, recon = infer_maps(net, cube)
        run_dir = ckpt.parent if out_base is None or len(runs) > 1 else out_base
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_estimates(run_dir, cube, extract_endmembers(net), A, P, recon,
                         _stamp(cfg, net.spec.seed))
        _write_manifest(run_dir, "infer", cfg, net.spec.seed, args.threads, t0)
        print(f"infer: {ckpt} -> {run_dir}")
    return EXIT_OK


def _method_runs(path: Path) -> list:
    """Run dirs for one method: itself, or its rep*/ children."""
    reps = sorted(d for d in path.glob("rep*") if d.is_dir())
    return reps if reps else [path]


def _load_estimates(run_dir: Path, r: int):
    import numpy as np

    from .hsi import read_cube, read_endmembers, read_map_csv

    E = read_endmembers(_require(run_dir / "endmembers.csv", "estimated endmembers"))
    planes = [read_map_csv(_require(run_dir / f"abundance_{k + 1}.csv",
                                    "estimated abundance plane")) for k in range(r)]
    A = np.stack(planes, axis=2)
    P = read_map_csv(_require(run_dir / "pmap.csv", "estimated probability map"))
    recon = read_cube(_require(run_dir / "recon", "reconstruction cube"))
    return E, A, P, recon


def cmd_evaluate(args, cfg: dict) -> int:
    import numpy as np

    from . import figures
    from .hsi import read_cube
    from .metrics import evaluate_estimates

    t0 = time.time()
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    section = cfg.get("evaluate", {})
    out = Path(args.out or cfg.get("out", "out/evaluate"))
    cube_path = args.cube or section.get("cube")
    truth_path = args.truth or section.get("truth")
    if not cube_path:
        raise FileNotFoundError("missing cube: pass --cube or set evaluate.cube")
    if not truth_path:
        raise FileNotFoundError("missing truth dir: pass --truth or set evaluate.truth")
    methods = list(section.get("methods", []))
    for spec in args.est or []:
        name, _, path = spec.partition("=")
        if not path:
            raise ValueError(f"--est expects name=path, got {spec!r}")
        methods.append({"name": name, "path": path})
    if not methods:
        raise FileNotFoundError("no method estimates given (evaluate.methods or --est)")

    cube = read_cube(_require(cube_path, "observed cube"))
    truth_dir = Path(truth_path)
    E_gt, A_gt, P_gt = _read_truth(truth_dir)
    scene_manifest = truth_dir.parent / "manifest.json"
    snr_db = ""
    if scene_manifest.exists():
        scene_cfg = json.loads(scene_manifest.read_text()).get("config", {})
        snr_db = scene_cfg.get("scene", {}).get("snr_db", "")

    rows = []
    curves = {"truth": E_gt}
    for method in methods:
        name, path = method["name"], Path(method["path"])
        for run_dir in _method_runs(_require(path, f"estimates for {name}")):
            E_hat, A_hat, P_hat, recon = _load_estimates(run_dir, E_gt.shape[1])
            report = evaluate_estimates(E_gt=E_gt, A_gt=A_gt, P_gt=P_gt, cube=cube.values,
                                        E_hat=E_hat, A_hat=A_hat, P_hat=P_hat,
                                        recon=recon.values)
            run_seed = seed
            mpath = run_dir / "manifest.json"
            if mpath.exists():
                run_seed = json.loads(mpath.read_text()).get("seed", seed)
            rows.append((name, run_seed, snr_db, report.sad_end, report.rmse_abun,
                         report.rmse_p, report.sad_pix))
            curves.setdefault(name, E_hat[:, list(report.permutation)])

    out.mkdir(parents=True, exist_ok=True)
    header = "method,seed,snr_db,sad_endmembers,rmse_abundance,rmse_p,sad_pixels"
    lines = [f"# {_stamp(cfg, seed)}", header]
    for row in rows:
        lines.append(",".join(str(c) if not isinstance(c, float) else repr(c) for c in row))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    by_method: dict[str, list] = {}
    for row in rows:
        by_method.setdefault(row[0], []).append(row[3:])
    sums = [f"# {_stamp(cfg, seed)}",
            "method,runs,metric,mean,std"]
    for name, vals in by_method.items():
        arr = np.asarray(vals, dtype=np.float64)
        for j, metric in enumerate(("sad_endmembers", "rmse_abundance", "rmse_p", "sad_pixels")):
            sums.append(f"{name},{len(vals)},{metric},{arr[:, j].mean()!r},{arr[:, j].std()!r}")
    (out / "summary.csv").write_text("\n".join(sums) + "\n", encoding="utf-8")

    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    figures.plot_endmembers(figs / "endmembers.png", curves)
    _write_manifest(out, "evaluate", cfg, seed, args.threads, t0)
    print(f"evaluate: {len(rows)} run(s) over {len(by_method)} method(s) -> {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_sweep(args, cfg: dict) -> int:
    import numpy as np

    from . import figures
    from .hsi import read_cube
    from .metrics import evaluate_estimates
    from .network import NetworkSpec, TrainConfig, infer_maps, init_network, train, extract_endmembers
    from .vca import VcaConfig, vca_extract

    t0 = time.time()
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("out", "out/sweep"))
    section = cfg.get("sweep", {})
    axis = args.axis or section.get("axis")
    if axis not in ("batch_size", "patch_size"):
        raise ValueError(f"sweep axis must be batch_size or patch_size, got {axis!r}")
    candidates = section.get("candidates") or ([64, 128, 256, 512, 1024, 2048]
                                               if axis == "batch_size" else [1, 3, 5, 7, 9])
    cube_path = args.cube or section.get("cube")
    truth_path = args.truth or section.get("truth")
    if not cube_path:
        raise FileNotFoundError("missing cube: pass --cube or set sweep.cube")
    if not truth_path:
        raise FileNotFoundError("missing truth dir: pass --truth or set sweep.truth")
    cube = read_cube(_require(cube_path, "input cube"))
    E_gt, A_gt, P_gt = _read_truth(Path(truth_path))
    r = E_gt.shape[1]
    net_cfg = dict(cfg.get("network", {}))
    net_cfg.pop("endmembers", None)
    train_cfg = dict(cfg.get("train", {}))
    vca_snr = section.get("vca_snr_db", train_cfg.pop("vca_snr_db", None))
    E_init = vca_extract(cube.as_pixel_matrix().T,
                         VcaConfig(endmembers=r, seed=seed, snr_db=vca_snr))

    results = []
    for cand in candidates:
        if axis == "batch_size":
            mode, patch = net_cfg.pop("mode", "1d"), net_cfg.pop("patch", None)
            tkw = dict(train_cfg, batch_size=int(cand))
        else:
            mode = "1d" if int(cand) == 1 else "3d"
            patch = None if int(cand) == 1 else int(cand)
            net_cfg.pop("mode", None)
            net_cfg.pop("patch", None)
            tkw = dict(train_cfg)
        spec = NetworkSpec(mode=mode, bands=cube.bands, endmembers=r, patch=patch,
                           seed=seed, **net_cfg)
        net = init_network(spec, E_init)
        train(net, cube, TrainConfig(shuffle_seed=seed, **tkw))
        A_hat, P_hat, recon = infer_maps(net, cube)
        report = evaluate_estimates(E_gt=E_gt, A_gt=A_gt, P_gt=P_gt, cube=cube.values,
                                    E_hat=extract_endmembers(net), A_hat=A_hat,
                                    P_hat=P_hat, recon=recon.values)
        results.append((cand, report.sad_end, report.rmse_abun, report.sad_pix))
        print(f"sweep[{axis}={cand}]: sad_end={report.sad_end:.4f} "
              f"rmse_ab={report.rmse_abun:.4f} sad_pix={report.sad_pix:.4f}")

    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# {_stamp(cfg, seed)}", f"{axis},sad_endmembers,rmse_abundance,sad_pixels"]
    lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row)
              for row in results]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    arr = np.asarray([r[1:] for r in results], dtype=np.float64)
    figures.plot_sweep(figs / "sweep.png", axis, [r[0] for r in results],
                       {"endmember SAD": arr[:, 0], "abundance RMSE": arr[:, 1],
                        "pixel SAD": arr[:, 2]})
    _write_manifest(out, f"sweep:{axis}", cfg, seed, args.threads, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmunmix",
        description="Multilinear-mixing-model unmixing: scenes, classic solvers, "
                    "autoencoder networks, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int,
                       help="pin BLAS thread pools (MLMUNMIX_THREADS is the fallback)")
        p.add_argument("--repeats", type=int, default=1,
                       help="repeat with seeds seed..seed+N-1 into rep*/ subdirs")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("generate", help="synthesize a scene with ground truth")
    common(p)
    p.add_argument("--endmembers", help="optional endmember CSV to mix with")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("vca", help="extract endmembers from a cube")
    common(p)
    p.add_argument("--cube")
    p.add_argument("--endmember-count", type=int, dest="endmember_count")
    p.set_defaults(handler=cmd_vca)

    p = sub.add_parser("unmix-classic", help="FCLS / supervised / block-descent solvers")
    common(p)
    p.add_argument("--cube")
    p.add_argument("--endmembers", help="endmember CSV (supervised and fcls)")
    p.add_argument("--method", choices=("fcls", "supervised", "mlmp"))
    p.set_defaults(handler=cmd_unmix_classic)

    p = sub.add_parser("train", help="train an unmixing network")
    common(p)
    p.add_argument("--cube")
    p.add_argument("--endmembers", help="endmember CSV for the decoder init (default: run vca)")
    p.add_argument("--mode", choices=("1d", "3d"))
    p.add_argument("--patch", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="unmix a cube with a trained checkpoint")
    common(p)
    p.add_argument("--cube")
    p.add_argument("--checkpoint", help="checkpoint file, run dir, or dir of rep*/ runs")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("evaluate", help="score estimates against ground truth")
    common(p)
    p.add_argument("--cube")
    p.add_argument("--truth", help="truth directory from generate")
    p.add_argument("--est", action="append", metavar="NAME=PATH",
                   help="method estimates; repeatable")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate candidates along one axis")
    common(p)
    p.add_argument("--cube")
    p.add_argument("--truth")
    p.add_argument("--axis", choices=("batch_size", "patch_size"))
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = _pin_threads(args.threads)
    args.threads = threads
    try:
        cfg = _load_config(args.config)
        return args.handler(args, cfg)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_DATA
    except ArithmeticError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
