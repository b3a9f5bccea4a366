"""Command-line entry point. Results go to stdout (or ``--out``) as CSV; logs go to stderr."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import calibration as cal
from ..analytic import DiracConfig, flat_distance_dirac
from ..estimator import neural_distance
from ..lp_oracle import flat_distance_exact, wasserstein_exact
from ..measures import image_to_measure, read_image, read_point_cloud, write_point_cloud
from ..training import Mode, TrainConfig
from . import experiments as ex

log = logging.getLogger("flatmetric")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _train_cfg(args, **kw) -> TrainConfig:
    base = TrainConfig() if args.paper_scale else TrainConfig(epochs=2000)
    cfg = base.with_overrides(epochs=args.epochs, seed=args.seed, **kw)
    if args.config:
        cfg = TrainConfig.load(args.config).with_overrides(epochs=args.epochs, seed=args.seed, **kw)
    return cfg


def _spec(args, kind, **kw):
    make = ex.full_spec if args.paper_scale else ex.desk_spec
    spec = make(kind, seed=args.seed, workers=args.workers, **kw)
    if args.epochs is not None:
        spec = replace(spec, train=spec.train.with_overrides(epochs=args.epochs))
    return spec


def _model(args):
    if getattr(args, "no_correction", False):
        return None
    return cal.DimensionModel.load(args.model) if args.model else cal.DEFAULT_MODEL


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)


def _measure(path):
    return read_point_cloud(path)


# --- subcommands ------------------------------------------------------------


def cmd_dist(args):
    mu, nu = _measure(args.a), _measure(args.b)
    mode = Mode(args.mode)
    if args.engine == "analytic":
        if mode is not Mode.FLAT:
            raise SystemExit("the analytic engine computes flat distances only")
        if mu.size == 1:
            value = flat_distance_dirac(DiracConfig.from_measures(mu, nu))
        elif nu.size == 1:
            value = flat_distance_dirac(DiracConfig.from_measures(nu, mu))
        else:
            raise SystemExit("the analytic engine needs one single-point measure")
        rows = [["engine", "mode", "distance"], ["analytic", mode.value, repr(value)]]
    elif args.engine == "lp":
        value = flat_distance_exact(mu, nu) if mode is Mode.FLAT else wasserstein_exact(mu, nu)
        rows = [["engine", "mode", "distance"], ["lp", mode.value, repr(value)]]
    else:
        est = neural_distance(mu, nu, _train_cfg(args, mode=mode), _model(args))
        rows = [
            ["engine", "mode", "distance", "raw", "sem", "mass_ratio", "x_hat"],
            ["neural", mode.value, repr(est.corrected), repr(est.raw), repr(est.sem), repr(est.mass_ratio), repr(est.x_hat)],
        ]
    _emit(args, "".join(",".join(r) + "\n" for r in rows))


def cmd_oracle(args):
    args.engine = "lp"
    cmd_dist(args)


def cmd_analytic(args):
    d = _floats(args.distances)
    b = _floats(args.weights) if args.weights else None
    value = flat_distance_dirac(DiracConfig(args.c, d, b))
    _emit(args, "c,n,distance\n" + f"{args.c!r},{len(d)},{value!r}\n")


def cmd_matrix(args):
    files = sorted(p for p in Path(args.directory).iterdir() if p.suffix.lower() == ".csv")
    if len(files) < 2:
        raise SystemExit(f"{args.directory}: need at least two .csv point clouds")
    measures = [_measure(p) for p in files]
    mat = ex.pairwise_matrix(
        measures, args.mode, args.engine, _train_cfg(args), _model(args),
        seed=args.seed, workers=args.workers, normalized=args.normalized,
    )
    _emit(args, ex.matrix_to_csv(mat, [p.stem for p in files]))


def cmd_domain(args):
    names, mat, matches = ex.domain_adaptation(args.seed, args.engine, _train_cfg(args), args.workers)
    for target, source, tied in matches:
        log.info("%s -> %s%s", target, source, " (tie, lowest index)" if tied else "")
    _emit(args, ex.matrix_to_csv(mat, names))


def cmd_exp1(args):
    kw = {}
    if args.dims:
        kw["dims"] = _ints(args.dims)
    if args.radii:
        kw["radii"] = _floats(args.radii)
    if args.ratios:
        kw["ratios"] = _floats(args.ratios)
    if args.reps:
        kw["repetitions"] = args.reps
    report = ex.run_experiment1(_spec(args, "exp1", **kw), _model(args))
    _emit(args, report.to_csv())


def cmd_exp2(args):
    kw = {}
    if args.lf:
        kw["lf_fractions"] = _floats(args.lf)
    if args.ratios:
        kw["ratios"] = _floats(args.ratios)
    if args.reps:
        kw["repetitions"] = args.reps
    if args.n_points:
        kw["n_points"] = args.n_points
    if args.outer_radius:
        kw["outer_radius"] = args.outer_radius
    report = ex.run_experiment2(_spec(args, "exp2", **kw), _model(args))
    log.info(
        "mean |rel err|: raw %.4f, corrected %.4f",
        report.mean_abs_rel_err(corrected=False), report.mean_abs_rel_err(corrected=True),
    )
    _emit(args, report.to_csv())


def cmd_sweep(args):
    kw = {"repetitions": args.reps} if args.reps else {}
    report = ex.hyperparameter_sweep(_spec(args, "sweep", **kw))
    _emit(args, report.to_csv())


def cmd_calibrate(args):
    if args.paper_scale:
        dims, ratios, radii = cal.CAL_DIMS, cal.CAL_RATIOS, cal.CAL_RADII
    else:
        dims, ratios, radii = (2,), (0.25, 0.5, 1.0, 2.0, 10.0), (1.0, 5.0)
    dims = _ints(args.dims) if args.dims else dims
    ratios = _floats(args.ratios) if args.ratios else ratios
    radii = _floats(args.radii) if args.radii else radii
    rows = cal.run_calibration(dims, ratios, radii, _train_cfg(args), args.reps or 1, args.seed, args.workers)
    _emit(args, cal.rows_to_csv(rows))
    if args.fit:
        model = cal.model_from_rows(rows, note=f"calibration run, seed {args.seed}")
        model.save(args.fit)
        log.info("wrote model %s", args.fit)


def cmd_imgbench(args):
    if args.images:
        images = {}
        for p in args.images:
            images.setdefault(Path(p).parent.name or "images", []).append(read_image(p))
    else:
        size = 64 if args.paper_scale else 16
        images = ex.desk_images(size=size, per_class=args.per_class, seed=args.seed)
    report, medians = ex.image_benchmark(images, _floats(args.pixel_mass), _train_cfg(args), _model(args),
                                         args.seed, args.workers)
    for cls, med in medians.items():
        log.info("%s: median residual %.4f", cls, med)
    _emit(args, report.to_csv())


def cmd_img2measure(args):
    m = image_to_measure(read_image(args.image))
    if args.out:
        write_point_cloud(args.out, m)
        log.info("wrote %s (%d points, mass %g)", args.out, m.size, m.total_mass)
    else:
        lines = ["x0,x1,weight"]
        lines += [f"{p[0]!r},{p[1]!r},{w!r}" for p, w in zip(m.points.tolist(), m.weights.tolist())]
        sys.stdout.write("\n".join(lines) + "\n")


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--epochs", type=int, default=None, help="training epochs (default 2000, 10000 with --paper-scale)")
    common.add_argument("--out", default=None, help="write CSV here instead of stdout")
    common.add_argument("--paper-scale", action="store_true", help="full-size grids and training length")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("--config", default=None, help="key = value training config file")
    common.add_argument("--model", default=None, help="calibration model file")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    parser = argparse.ArgumentParser(prog="flatmetric", description="Flat metric between discrete measures.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", parents=[common], help="distance between two point-cloud CSV files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="flat")
    p.add_argument("--engine", choices=["neural", "lp", "analytic"], default="neural")
    p.add_argument("--no-correction", action="store_true")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("oracle", parents=[common], help="exact LP distance between two point clouds")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="flat")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("analytic", parents=[common], help="closed-form distance of c*delta_0 vs Diracs")
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--distances", required=True, help="comma-separated distances to the origin")
    p.add_argument("--weights", default=None, help="comma-separated weights (default 1)")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("matrix", parents=[common], help="pairwise matrix over every .csv in a directory")
    p.add_argument("directory")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="flat")
    p.add_argument("--engine", choices=[e.value for e in ex.Engine], default="neural")
    p.add_argument("--normalized", action="store_true", help="divide each distance by the smaller mass")
    p.add_argument("--no-correction", action="store_true")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("domain", parents=[common], help="Gaussian-cluster domain-adaptation preset")
    p.add_argument("--engine", choices=[e.value for e in ex.Engine], default="neural")
    p.set_defaults(func=cmd_domain)

    p = sub.add_parser("exp1", parents=[common], help="Dirac vs sphere saturation experiment")
    p.add_argument("--dims")
    p.add_argument("--radii")
    p.add_argument("--ratios")
    p.add_argument("--reps", type=int)
    p.add_argument("--no-correction", action="store_true")
    p.set_defaults(func=cmd_exp1)

    p = sub.add_parser("exp2", parents=[common], help="Dirac vs ball experiment with inner share l_f")
    p.add_argument("--lf")
    p.add_argument("--ratios")
    p.add_argument("--reps", type=int)
    p.add_argument("--n-points", type=int)
    p.add_argument("--outer-radius", type=float)
    p.add_argument("--no-correction", action="store_true")
    p.set_defaults(func=cmd_exp2)

    p = sub.add_parser("sweep", parents=[common], help="optimizer hyperparameter sweep")
    p.add_argument("--reps", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", parents=[common], help="run the calibration grid")
    p.add_argument("--dims")
    p.add_argument("--ratios")
    p.add_argument("--radii")
    p.add_argument("--reps", type=int)
    p.add_argument("--fit", default=None, help="fit a dimension model and write it here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("imgbench", parents=[common], help="images vs a single hot pixel")
    p.add_argument("images", nargs="*", help="PGM or text-matrix images; synthetic classes if omitted")
    p.add_argument("--pixel-mass", default="100,1000")
    p.add_argument("--per-class", type=int, default=2)
    p.add_argument("--no-correction", action="store_true")
    p.set_defaults(func=cmd_imgbench)

    p = sub.add_parser("img2measure", parents=[common], help="convert an image to a weighted point cloud")
    p.add_argument("image")
    p.set_defaults(func=cmd_img2measure)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
