"""``adgs`` command line: gen / train / eval / render / mask / report.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("adgs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _set_threads() -> None:
    n = os.environ.get("ADGS_THREADS")
    if n:
        import numba
        try:
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            raise UsageError(f"ADGS_THREADS must be an integer, got {n!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adgs", description="Distractor-robust Gaussian splatting on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--spec", help="config file; only its [scene] section is used")
    g.add_argument("--seed", type=int, help="override the scene seed")
    g.add_argument("--ratio", type=float, help="override the distractor ratio")
    g.add_argument("--out", required=True, help="output dataset directory")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="config file ([train] [loss] [mask] [ema] sections)")
    t.add_argument("--mode", choices=("single", "gs-gs", "ema-gs"))
    t.add_argument("--seed", type=int)
    t.add_argument("--seed2", type=int, help="seed of the second gs-gs model")
    t.add_argument("--iterations", type=int)
    t.add_argument("--data", help="dataset directory (overrides [train] data)")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-at", type=int, help="stop after this many iterations and checkpoint")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test views")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="directory for results.json/csv and figures (default: checkpoint dir)")
    e.add_argument("--ema", action="store_true", help="evaluate the moving-average proxy instead of model 1")

    r = sub.add_parser("render", help="render one camera to an 8-bit PNG")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--camera", type=int, required=True)
    r.add_argument("--split", choices=("train", "test"), default="test")
    r.add_argument("--mode", choices=("intrinsic", "appearance"), default="intrinsic")
    r.add_argument("--out", required=True)

    m = sub.add_parser("mask", help="dump hard and soft masks of a training view")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--view", type=int, required=True)
    m.add_argument("--out", required=True)

    rp = sub.add_parser("report", help="rebuild figures and CSV tables of a run directory")
    rp.add_argument("--run", required=True)
    return p


def _write_resolved(out: Path, cfg) -> None:
    from .config import serialize_config
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(serialize_config(cfg))


def cmd_gen(a) -> int:
    from .config import RunConfig, load_config
    from .synthdata import generate_dataset
    from dataclasses import replace
    cfg = load_config(a.spec) if a.spec else RunConfig()
    scene = cfg.scene
    if a.seed is not None:
        scene = replace(scene, seed=a.seed)
    if a.ratio is not None:
        scene = replace(scene, distractor_ratio=a.ratio)
    cfg = RunConfig(cfg.train, scene)
    out = Path(a.out)
    generate_dataset(scene, out)
    _write_resolved(out, cfg)
    print(f"dataset written to {out}")
    return 0


def _results(trainer, metrics: dict, extra: dict | None = None) -> dict:
    from dataclasses import asdict
    res = {"config": asdict(trainer.cfg), "iteration": trainer.iteration,
           "count": trainer.models[0].cloud.count, "metrics": metrics,
           "counters": dict(sorted(trainer.counters.items()))}
    if trainer.ema is not None:
        res["ema_metrics"] = trainer.evaluate(trainer.ema.shadow)
    if extra:
        res.update(extra)
    return res


def _dump_results(out: Path, res: dict) -> None:
    from .report import write_run_report
    (out / "results.json").write_text(json.dumps(res, indent=1, sort_keys=True))
    write_run_report(out)


def cmd_train(a) -> int:
    from .config import RunConfig, load_config, override
    from .synthdata import load_dataset
    from .trainer import Trainer
    cfg = load_config(a.config) if a.config else RunConfig()
    cfg = override(cfg, mode=a.mode, seed=a.seed, seed2=a.seed2, iterations=a.iterations, data=a.data)
    if cfg.train.mode == "gs-gs" and cfg.train.seed == cfg.train.seed2:
        cfg = override(cfg, seed2=cfg.train.seed + 1)
    if not cfg.train.data:
        raise UsageError("no dataset: pass --data or set data in [train]")
    out = Path(a.out)
    _write_resolved(out, cfg)
    data = load_dataset(cfg.train.data)
    if a.resume:
        trainer = Trainer.load(a.resume, data)
        mode = "a"
    else:
        trainer = Trainer(cfg.train, data)
        mode = "w"
    trainer.dump_path = out / "nan_dump.adgs"
    tc = trainer.cfg
    t0 = time.time()
    with open(out / "runlog.jsonl", mode, encoding="utf-8") as runlog:
        def on_step(rec):
            runlog.write(json.dumps({"kind": "step", **rec}, sort_keys=True) + "\n")
            it = trainer.iteration
            if tc.eval_interval and it % tc.eval_interval == 0 and it < tc.iterations:
                m = trainer.evaluate()
                runlog.write(json.dumps({"kind": "eval", "iteration": it, "mean_psnr": m["mean_psnr"],
                                         "mean_ssim": m["mean_ssim"]}) + "\n")
            if tc.checkpoint_interval and it % tc.checkpoint_interval == 0:
                trainer.save(out / f"ckpt_{it:06d}.adgs")
            if it % 100 == 0:
                log.info("iteration %d loss %.5f gaussians %d", it, rec["total"], rec["count"])
        trainer.train(until=a.stop_at, callback=on_step)
        if trainer.iteration < tc.iterations:
            trainer.save(out / "checkpoint.adgs")
            print(f"stopped at iteration {trainer.iteration}; checkpoint {out / 'checkpoint.adgs'}")
            return 0
        metrics = trainer.evaluate()
        for row in metrics["views"]:
            runlog.write(json.dumps({"kind": "eval_view", "iteration": trainer.iteration, **row}) + "\n")
        runlog.write(json.dumps({"kind": "timing", "seconds": time.time() - t0}) + "\n")
    trainer.save(out / "final.adgs")
    _dump_results(out, _results(trainer, metrics))
    print(f"mean PSNR {metrics['mean_psnr']:.3f} dB, SSIM {metrics['mean_ssim']:.4f}; results in {out}")
    return 0


def _load_trainer(path, data_dir):
    from .synthdata import load_dataset
    from .trainer import Trainer
    return Trainer.load(path, load_dataset(data_dir))


def cmd_eval(a) -> int:
    from .config import RunConfig
    tr = _load_trainer(a.checkpoint, a.data)
    out = Path(a.out) if a.out else Path(a.checkpoint).parent
    _write_resolved(out, RunConfig(tr.cfg, tr.data.spec()))
    metrics = tr.evaluate(tr.ema.shadow if (a.ema and tr.ema is not None) else None)
    _dump_results(out, _results(tr, metrics, {"checkpoint": str(a.checkpoint)}))
    for row in metrics["views"]:
        print(f"{row['view']}\t{row['psnr']:.3f}\t{row['ssim']:.4f}")
    print(f"mean\t{metrics['mean_psnr']:.3f}\t{metrics['mean_ssim']:.4f}")
    return 0


def cmd_render(a) -> int:
    from PIL import Image
    from .rasterizer import FrameDependent, rasterize
    from .synthdata import quantize
    tr = _load_trainer(a.checkpoint, a.data)
    cams = tr.data.test_cameras if a.split == "test" else tr.data.train_cameras
    if not 0 <= a.camera < len(cams):
        raise UsageError(f"--camera {a.camera} out of range for {len(cams)} {a.split} views")
    mode = None
    if a.mode == "appearance":
        if tr.appearance is None or a.split != "train":
            raise UsageError("--mode appearance needs a run trained with use_appearance on a train camera")
        mode = FrameDependent(tr.appearance, a.camera)
    img = rasterize(tr.models[0].cloud, cams[a.camera], mode, sh_degree=tr.sh_degree, filters=tr.filters).clamped
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(img)).save(a.out, format="PNG")
    print(f"wrote {a.out}")
    return 0


def cmd_mask(a) -> int:
    from PIL import Image
    from .report import plot_masks
    from .tensorio import write_tensor
    tr = _load_trainer(a.checkpoint, a.data)
    v = a.view
    if not 0 <= v < len(tr.data.train_cameras):
        raise UsageError(f"--view {v} out of range for {len(tr.data.train_cameras)} training views")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    hard, soft = tr.hard[v], tr.soft[v]
    name = tr.data.train_names[v]
    write_tensor(out / f"{name}.hard.ten", hard)
    write_tensor(out / f"{name}.soft.ten", soft)
    Image.fromarray((np.clip(hard, 0, 1) * 255).astype(np.uint8)).save(out / f"{name}.hard.png")
    Image.fromarray((np.clip(soft, 0, 1) * 255).round().astype(np.uint8)).save(out / f"{name}.soft.png")
    plot_masks(tr.data.train_images[v], hard, soft, tr.data.gt_masks[v], out / f"{name}.masks.png")
    print(f"masks for {name} written to {out}")
    return 0


def cmd_report(a) -> int:
    from .report import write_run_report
    paths = write_run_report(a.run)
    if not paths:
        raise UsageError(f"{a.run} has no runlog.jsonl or results.json")
    for p in paths:
        print(p)
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "render": cmd_render,
            "mask": cmd_mask, "report": cmd_report}


def main(argv=None) -> int:
    from .config import ConfigError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _set_threads()
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
