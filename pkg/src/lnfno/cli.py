"""Command-line harness: gen, train, eval, ablate, plot, verify.

Exit codes: 0 success, 1 domain error (bad data, solver or training
failure), 2 usage error (unknown flag or config key).
"""

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .datagen import BENCHMARKS, BenchmarkSpec, generate, verify_dataset, worker_count
from .errors import ConfigurationError, LnfnoError
from .models import ABLATIONS, DeepOnetModel, ModelSpec, build_deeponet, build_model
from .nodf import Component, by_name, read_nodf, write_nodf
from .solvers.fem import parse_mesh
from .train import (Dataset, Normalizer, TrainConfig, evaluate, predict, split_dataset,
                    train_loop, write_final, write_history)

DEFAULT_PRESET = {"laplace": "A", "burgers": "A", "darcy_smooth": "A", "pb_square": "A",
                  "pb_source": "B", "pb_fem": "C", "pb_3d": "E", "ns": "A", "pnp": "D"}
DEFAULT_DEEPONET = {"pb_source": "miso", "pnp": "mimo"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- run config

CONFIG_KEYS = {
    "benchmark": str, "data": str, "out_dir": str, "kind": str, "preset": str, "ablation": str,
    "epochs": int, "lr": float, "batch": int, "wd": float, "seed": int, "hidden": int,
    "enc_channels": int, "src_channels": int, "dec_channels": int, "pool": int, "basis": int,
}


class RunConfig:
    """Ordered key=value settings that remember their source lines.

    Comment (``#``) and blank lines are kept, so an unmodified config dumps
    back byte for byte.
    """

    def __init__(self):
        self.lines = []
        self.values = {}

    @classmethod
    def parse(cls, text):
        cfg = cls()
        for raw in text.splitlines(keepends=True):
            body = raw.strip()
            if not body or body.startswith("#"):
                cfg.lines.append((None, raw))
                continue
            key, sep, value = body.partition("=")
            key = key.strip()
            if not sep:
                raise UsageError(f"config line is not key=value: {body!r}")
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            if key in cfg.values:
                raise UsageError(f"duplicate config key {key!r}")
            cfg._check(key, value.strip())
            cfg.values[key] = value.strip()
            cfg.lines.append((key, raw))
        return cfg

    @staticmethod
    def _check(key, value):
        try:
            CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"config key {key!r}: bad value {value!r}") from None

    def set(self, key, value):
        value = str(value)
        self._check(key, value)
        if key in self.values:
            self.lines = [(k, f"{key}={value}\n" if k == key else raw) for k, raw in self.lines]
        else:
            if self.lines and not self.lines[-1][1].endswith("\n"):
                k, raw = self.lines[-1]
                self.lines[-1] = (k, raw + "\n")
            self.lines.append((key, f"{key}={value}\n"))
        self.values[key] = value

    def get(self, key, default=None):
        if key not in self.values:
            return default
        return CONFIG_KEYS[key](self.values[key])

    def dump(self):
        return "".join(raw for _, raw in self.lines)


def _config_from_args(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = RunConfig.parse(fh.read())
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            cfg.set(key, v)
    return cfg


def _add_run_flags(p):
    p.add_argument("--config")
    p.add_argument("--dump-config", action="store_true")
    p.add_argument("--data")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--benchmark")
    p.add_argument("--kind", choices=("lnfno", "deeponet"))
    p.add_argument("--preset")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--wd", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--enc-channels", dest="enc_channels", type=int)
    p.add_argument("--src-channels", dest="src_channels", type=int)
    p.add_argument("--dec-channels", dest="dec_channels", type=int)
    p.add_argument("--pool", type=int)
    p.add_argument("--basis", type=int)


# ---------------------------------------------------------------- shared helpers

def output_shape(meta, components):
    spec = BenchmarkSpec.from_metadata(meta)
    b, n = spec.benchmark, spec.res
    if b in ("laplace", "pb_square", "pb_source", "darcy_smooth"):
        return (n, n)
    if b == "pb_3d":
        return (n, n, n)
    if b == "pnp":
        return (3, n, n)
    if b == "burgers":
        return (n, spec.n_t)
    if b == "ns":
        return (n, n, spec.n_t)
    out = [c for c in components if c.role == "output"]
    return (int(np.prod(out[0].data.shape[1:])),)


def model_spec_for(cfg, meta, components):
    benchmark = meta.get("benchmark", "")
    if cfg.get("benchmark") and cfg.get("benchmark") != benchmark:
        raise ConfigurationError(f"config expects benchmark {cfg.get('benchmark')!r}, "
                                 f"dataset holds {benchmark!r}")
    kind = cfg.get("kind", "lnfno")
    if kind == "deeponet":
        preset = cfg.get("preset", DEFAULT_DEEPONET.get(benchmark, "siso"))
    else:
        preset = cfg.get("preset", DEFAULT_PRESET.get(benchmark, "A"))
    shapes = [c.data.shape[1:] for c in components if c.role == "input"]
    kw = {k: cfg.get(k) for k in ("hidden", "enc_channels", "src_channels", "dec_channels",
                                  "pool", "basis") if cfg.get(k) is not None}
    if preset == "D" and "dec_channels" not in kw:
        kw["dec_channels"] = 64
    return ModelSpec(kind, preset, shapes, output_shape(meta, components),
                     ablation=cfg.get("ablation", "full"), **kw)


def _coords_for(meta, components):
    if meta.get("benchmark") == "pb_fem":
        mesh = parse_mesh(bytes(by_name(components)["mesh"].data).decode("utf-8"), "dataset blob")
        return mesh.nodes
    return None


def make_model(spec, seed, meta, components):
    if spec.kind == "deeponet":
        return build_deeponet(spec, seed, _coords_for(meta, components))
    return build_model(spec, seed)


def train_config(cfg):
    return TrainConfig(epochs=cfg.get("epochs", 500), lr=cfg.get("lr", 1e-3),
                       batch_size=cfg.get("batch", 20), weight_decay=cfg.get("wd", 1e-4),
                       seed=cfg.get("seed", 0))


def save_checkpoint(path, model, normalizer, meta, tcfg):
    comps = [Component(f"param/{name}", "aux", np.asarray(t.data, dtype=np.float64).reshape(t.shape or (1,)))
             for name, t in model.params.items()]
    if isinstance(model, DeepOnetModel):
        comps.append(Component("coords", "aux", model.coords))
    md = {"checkpoint": "1", "benchmark": meta.get("benchmark", ""), "train.seed": str(tcfg.seed),
          "train.epochs": str(tcfg.epochs), "train.lr": repr(tcfg.lr),
          "train.batch": str(tcfg.batch_size), "train.wd": repr(tcfg.weight_decay)}
    md.update({f"model.{k}": v for k, v in model.spec.to_dict().items()})
    md.update(normalizer.to_dict())
    write_nodf(comps, md, path)


def load_checkpoint(path):
    comps, md = read_nodf(path)
    if md.get("checkpoint") != "1":
        raise ConfigurationError(f"{path} is not a checkpoint")
    spec = ModelSpec.from_dict({k[6:]: v for k, v in md.items() if k.startswith("model.")})
    named = by_name(comps)
    if spec.kind == "deeponet":
        model = build_deeponet(spec, 0, named["coords"].data)
    else:
        model = build_model(spec, 0)
    arrays = {}
    for name, t in model.params.items():
        arr = named[f"param/{name}"].data
        arrays[name] = arr.reshape(t.shape)
    model.params.load_arrays(arrays)
    return model, Normalizer.from_dict(md), md


def _load_dataset(path):
    comps, meta = read_nodf(path)
    return comps, meta, Dataset.from_components(comps)


def _split(ds, seed):
    tr, te = split_dataset(ds.n_samples, seed)
    return ds.subset(tr), ds.subset(te)


def _require(cfg, key):
    v = cfg.get(key)
    if v is None:
        raise UsageError(f"missing required setting {key!r}")
    return v


# ---------------------------------------------------------------- subcommands

def cmd_gen(args):
    kw = {"benchmark": args.benchmark, "n_samples": args.n, "seed": args.seed, "k": args.k}
    for key in ("res", "fine_res", "n_t", "nu", "T", "dt", "mesh"):
        v = getattr(args, key)
        if v is not None:
            kw[key] = v
    spec = BenchmarkSpec(**kw)
    comps, meta = generate(spec, timestamp=args.timestamp)
    write_nodf(comps, meta, args.out)
    shapes = ", ".join(f"{c.name}{list(c.data.shape)}" for c in comps if c.role != "aux")
    print(f"wrote {args.out}: {shapes}; discards={meta['discards']}")
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return 0
    data = _require(cfg, "data")
    out_dir = cfg.get("out_dir", ".")
    comps, meta, ds = _load_dataset(data)
    tcfg = train_config(cfg)
    train_ds, test_ds = _split(ds, tcfg.seed)
    norm = Normalizer().fit(train_ds)
    spec = model_spec_for(cfg, meta, comps)
    model = make_model(spec, tcfg.seed, meta, comps)
    model, metrics = train_loop(model, train_ds, norm, tcfg)
    ev = evaluate(model, test_ds, norm)
    metrics.test_rel_l2, metrics.per_field = ev.test_rel_l2, ev.per_field
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "checkpoint.nodf"), model, norm, meta, tcfg)
    write_history(os.path.join(out_dir, "history.csv"), metrics)
    write_final(os.path.join(out_dir, "final.csv"), metrics)
    print(f"params={model.count()} test_rel_l2={metrics.test_rel_l2:.6e} "
          f"seconds={metrics.wall_seconds:.1f}")
    return 0


def cmd_eval(args):
    model, norm, md = load_checkpoint(args.checkpoint)
    comps, meta, ds = _load_dataset(args.data)
    seed = int(md.get("train.seed", "0"))
    _, test_ds = _split(ds, seed) if not args.all else (None, ds)
    m = evaluate(model, test_ds, norm)
    names = list(m.per_field)
    lines = [",".join(["test_rel_l2"] + names),
             ",".join([repr(m.test_rel_l2)] + [repr(m.per_field[k]) for k in names])]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def _ablation_job(job):
    variant, data, cfg_text = job
    cfg = RunConfig.parse(cfg_text)
    comps, meta, ds = _load_dataset(data)
    tcfg = train_config(cfg)
    train_ds, test_ds = _split(ds, tcfg.seed)
    norm = Normalizer().fit(train_ds)
    cfg.set("ablation", variant)
    cfg.set("kind", "lnfno")
    spec = model_spec_for(cfg, meta, comps)
    model = make_model(spec, tcfg.seed, meta, comps)
    start = time.perf_counter()
    model, _ = train_loop(model, train_ds, norm, tcfg)
    seconds = time.perf_counter() - start
    ev = evaluate(model, test_ds, norm)
    return variant, model.count(), tcfg.epochs, seconds, ev.test_rel_l2


def cmd_ablate(args):
    cfg = _config_from_args(args)
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return 0
    data = _require(cfg, "data")
    jobs = [(v, data, cfg.dump()) for v in ABLATIONS]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_ablation_job, jobs))
    else:
        rows = [_ablation_job(j) for j in jobs]
    out = args.out or os.path.join(cfg.get("out_dir", "."), "ablation.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("variant,params,epochs,seconds,test_rel_l2\n")
        for variant, count, epochs, seconds, err in rows:
            fh.write(f"{variant},{count},{epochs},{seconds:.3f},{err!r}\n")
    for variant, count, _, _, err in rows:
        print(f"{variant:20s} {count:10d} {err:.4e}")
    return 0


def write_pgm(path, field):
    """8-bit binary graymap, min-max scaled (a constant panel is black)."""
    f = np.asarray(field, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    lo, hi = float(f.min()), float(f.max())
    scaled = np.zeros(f.shape) if hi == lo else (f - lo) / (hi - lo)
    pix = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.shape[1]} {f.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def _panel(flat, shape):
    arr = np.asarray(flat).reshape(shape)
    while arr.ndim > 2:
        arr = arr[..., -1]
    return arr


def cmd_plot(args):
    model, norm, md = load_checkpoint(args.checkpoint)
    comps, meta, ds = _load_dataset(args.data)
    if not 0 <= args.sample < ds.n_samples:
        raise ConfigurationError(f"sample {args.sample} out of range 0..{ds.n_samples - 1}")
    one = ds.subset([args.sample])
    pred = predict(model, one, norm)[0]
    names = list(ds.outputs)
    field = args.field or names[0]
    if field not in names:
        raise ConfigurationError(f"unknown output field {field!r}; have {names}")
    offset = 0
    for name in names:
        size = int(np.prod(ds.outputs[name].shape[1:]))
        if name == field:
            break
        offset += size
    target = one.outputs[field][0].ravel()
    p = pred[offset:offset + size]
    shape = output_shape(meta, comps)
    if meta.get("benchmark") == "pnp":
        shape = shape[1:]
    panels = {"target": target, "prediction": p, "abs_error": np.abs(p - target)}
    os.makedirs(args.out_dir, exist_ok=True)
    for key, vals in panels.items():
        write_pgm(os.path.join(args.out_dir, f"{field}_{key}.pgm"), _panel(vals, shape))
    with open(os.path.join(args.out_dir, f"{field}_values.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("index,target,prediction,abs_error\n")
        for i, (t, q, e) in enumerate(zip(target, p, panels["abs_error"])):
            fh.write(f"{i},{t!r},{q!r},{e!r}\n")
    print(f"wrote {field} panels for sample {args.sample} to {args.out_dir}")
    return 0


def cmd_verify(args):
    comps, meta = read_nodf(args.data)
    rep = verify_dataset(comps, meta, args.n_check, args.seed)
    print(f"{rep['benchmark']}: checked {len(rep['checked'])} samples, max residual "
          f"{rep['max_residual']:.3e} <= {rep['threshold']:g}")
    return 0


def build_parser():
    p = _Parser(prog="lnfno", description="Operator-learning benchmark harness.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a benchmark dataset")
    g.add_argument("--benchmark", required=True, choices=BENCHMARKS)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--res", type=int)
    g.add_argument("--fine-res", dest="fine_res", type=int)
    g.add_argument("--nt", dest="n_t", type=int)
    g.add_argument("--nu", type=float)
    g.add_argument("--T", type=float)
    g.add_argument("--dt", type=float)
    g.add_argument("--k", type=float, default=1.0)
    g.add_argument("--mesh")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--timestamp", help="fixed creation stamp (default: now, UTC)")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train and evaluate one model")
    _add_run_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--all", action="store_true", help="evaluate every sample, not just the test split")
    e.add_argument("--out")

    a = sub.add_parser("ablate", help="train the eight ablation variants")
    _add_run_flags(a)
    a.add_argument("--out")

    pl = sub.add_parser("plot", help="write target/prediction/error panels")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--sample", type=int, default=0)
    pl.add_argument("--field")
    pl.add_argument("--out-dir", dest="out_dir", default="plots")

    v = sub.add_parser("verify", help="audit dataset residuals")
    v.add_argument("--data", required=True)
    v.add_argument("--n-check", dest="n_check", type=int, default=5)
    v.add_argument("--seed", type=int, default=0)
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "plot": cmd_plot, "verify": cmd_verify}


def run_command(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("lnfno: a subcommand is required (gen, train, eval, ablate, plot, verify)")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (LnfnoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
