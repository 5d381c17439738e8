"""Command-line interface.

Subcommands: evaluate (full pipeline), perturb (one image, one spec),
segment (one image, 16-bit label PNG), metrics (ad-hoc rank/score math on
JSON inputs), report (re-aggregate a records.json).  Exit codes for
evaluate: 0 full success, 2 when some images failed but a report was
still produced, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import CamRobustError
from .metrics import RboParams, RboVariant, ScoredLabel, auc_from_scores, kendall_tau, kendalls_w, rbo, spearman_rho, stability_ratio
from .model import load_image, load_manifest, read_saliency, save_image
from .perturb import PerturbationSpec, apply_perturbation
from .pipeline import DegeneratePolicy, EvalConfig, EvalRecord, aggregate_report, run_evaluation, write_report, RunResult, segment_image, _SEGMENTERS
from . import segment as segmentation


def _fatal(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _parse_seg_opts(name: str, pairs) -> object:
    params_cls = _SEGMENTERS[name][1]
    fields = params_cls.__dataclass_fields__
    kwargs = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--seg-opt needs key=value, got {pair!r}")
        if key not in fields:
            raise ValueError(f"unknown {name} option {key!r}; valid: {sorted(fields)}")
        kwargs[key] = _coerce(fields[key], value)
    return params_cls(**kwargs)


def _coerce(field, value: str):
    default = field.default
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _rbo_params(args) -> RboParams:
    variant = RboVariant.TRUNCATED if args.rbo_variant == "truncated" else RboVariant.EXTRAPOLATED
    return RboParams(persistence=args.rbo_p, variant=variant)


# ---------------------------------------------------------------------------
# evaluate


def _cmd_evaluate(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        if len(manifest) == 0:
            return _fatal("manifest has no entries")
        specs = tuple(PerturbationSpec.parse(s) for s in args.spec)
        seg_params = _parse_seg_opts(args.segmenter, args.seg_opt)
        config = EvalConfig(
            cam_methods=tuple(args.cam),
            specs=specs,
            segmenter=args.segmenter,
            segmenter_params=seg_params,
            rbo_params=_rbo_params(args),
            seed=args.seed,
            degenerate_policy=DegeneratePolicy(args.degenerate_policy),
            rank_agreement=args.rank_agreement,
            workers=args.workers,
            timeout=args.timeout,
        )
    except (CamRobustError, ValueError) as exc:
        return _fatal(str(exc))

    out = Path(args.out)
    if (out / "report.csv").exists() and not args.force:
        return _fatal(f"{out / 'report.csv'} exists; pass --force to overwrite")

    scratch = os.environ.get("CAMROBUST_SCRATCH")
    try:
        result = run_evaluation(manifest, args.adapter, config, scratch_dir=scratch)
    except CamRobustError as exc:
        return _fatal(str(exc))

    write_report(result, out)
    for failure in result.failures:
        print(f"warning: skipped {failure['image_id']}: {failure['error']}", file=sys.stderr)
    for warning in result.report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    n_images = result.metadata["n_images"] - result.metadata["n_failed"]
    print(f"evaluated {n_images} image(s), {len(result.report.cells)} cell(s) -> {out}")
    return 2 if result.failures else 0


# ---------------------------------------------------------------------------
# perturb / segment


def _cmd_perturb(args) -> int:
    try:
        spec = PerturbationSpec.parse(args.spec, seed=args.seed)
        image = load_image(args.image)
        out = apply_perturbation(image, spec)
        save_image(out, args.output)
    except (CamRobustError, OSError, ValueError) as exc:
        return _fatal(str(exc))
    print(f"wrote {args.output}")
    return 0


def _cmd_segment(args) -> int:
    try:
        image = load_image(args.image)
        params = _parse_seg_opts(args.segmenter, args.seg_opt)
        seg = segment_image(image, args.segmenter, params)
        segmentation.export_labels_png(seg, args.output)
    except (CamRobustError, OSError, ValueError) as exc:
        return _fatal(str(exc))
    print(f"{seg.segment_count} segments -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# metrics


def _parse_ranking(text: str):
    value = json.loads(text)
    if not isinstance(value, list):
        raise ValueError(f"expected a JSON array of ids, got {text!r}")
    return [int(v) for v in value]


def _cmd_metrics(args) -> int:
    try:
        if args.metric == "rbo":
            params = RboParams(
                persistence=args.p,
                variant=RboVariant.TRUNCATED if args.variant == "truncated" else RboVariant.EXTRAPOLATED,
            )
            value = rbo(_parse_ranking(args.a), _parse_ranking(args.b), params)
            print(f"{value:.6f}")
        elif args.metric == "tau":
            print(f"{kendall_tau(_parse_ranking(args.a), _parse_ranking(args.b)):.6f}")
        elif args.metric == "rho":
            print(f"{spearman_rho(_parse_ranking(args.a), _parse_ranking(args.b)):.6f}")
        elif args.metric == "kendalls-w":
            matrix = json.loads(args.matrix)
            result = kendalls_w(matrix, p_method=args.p_method)
            if result.p_value < 0.01:
                print(f"W={result.w:.6f} p<0.01")
            else:
                print(f"W={result.w:.6f} p={result.p_value:.6f}")
        elif args.metric == "auc":
            pairs = json.loads(args.samples)
            samples = [ScoredLabel(score=float(s), class_changed=bool(c)) for s, c in pairs]
            print(f"{auc_from_scores(samples):.6f}")
        elif args.metric == "stability":
            value = stability_ratio(
                read_saliency(args.saliency_a),
                read_saliency(args.saliency_b),
                load_image(args.image_a),
                load_image(args.image_b),
            )
            print(f"{value:.6f}")
        else:  # pragma: no cover - argparse restricts choices
            return _fatal(f"unknown metric {args.metric!r}")
    except (CamRobustError, OSError, ValueError, json.JSONDecodeError) as exc:
        return _fatal(str(exc))
    return 0


# ---------------------------------------------------------------------------
# report (re-aggregation)


def _cmd_report(args) -> int:
    try:
        raw = json.loads(Path(args.records).read_text(encoding="utf-8"))
        records = [EvalRecord.from_json_dict(item) for item in raw]
        out = Path(args.out)
        if (out / "report.csv").exists() and not args.force:
            return _fatal(f"{out / 'report.csv'} exists; pass --force to overwrite")
        report = aggregate_report(
            records,
            policy=DegeneratePolicy(args.degenerate_policy),
            rank_agreement=args.rank_agreement,
        )
        result = RunResult(
            report=report,
            records=sorted(records, key=lambda r: (r.image_id, r.cam_method, r.spec)),
            failures=[],
            metadata={"source": str(args.records), "reaggregated": True},
        )
        write_report(result, out)
    except (CamRobustError, OSError, ValueError, json.JSONDecodeError) as exc:
        return _fatal(str(exc))
    print(f"re-aggregated {len(records)} record(s) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camrobust",
        description="Noise-robustness evaluation for CAM explanations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="run the full evaluation pipeline")
    p_eval.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p_eval.add_argument("--adapter", required=True, help="adapter command line")
    p_eval.add_argument("--cam", action="append", required=True, help="CAM method (repeatable)")
    p_eval.add_argument("--spec", action="append", required=True, help='perturbation spec, e.g. "gaussian:medium" (repeatable)')
    p_eval.add_argument("--segmenter", choices=sorted(_SEGMENTERS), default="quickshift")
    p_eval.add_argument("--seg-opt", action="append", metavar="KEY=VALUE", help="segmenter parameter override (repeatable)")
    p_eval.add_argument("--rbo-p", type=float, default=0.9, help="RBO persistence (default 0.9)")
    p_eval.add_argument("--rbo-variant", choices=["extrapolated", "truncated"], default="extrapolated")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--seed", type=int, default=0, help="global 64-bit seed")
    p_eval.add_argument("--out", required=True, help="output directory for report files")
    p_eval.add_argument("--degenerate-policy", choices=["missing", "half"], default="missing")
    p_eval.add_argument("--rank-agreement", action="store_true", help="add the CAM-ranking agreement block")
    p_eval.add_argument("--force", action="store_true", help="overwrite existing report files")
    p_eval.add_argument("--timeout", type=float, default=60.0, help="adapter request timeout in seconds")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_pert = sub.add_parser("perturb", help="apply one perturbation spec to one image")
    p_pert.add_argument("image")
    p_pert.add_argument("spec", help='e.g. "gaussian:high" or "poisson"')
    p_pert.add_argument("--seed", type=int, default=0)
    p_pert.add_argument("-o", "--output", required=True, help="output PNG path")
    p_pert.set_defaults(func=_cmd_perturb)

    p_seg = sub.add_parser("segment", help="segment one image, write 16-bit label PNG")
    p_seg.add_argument("image")
    p_seg.add_argument("--segmenter", choices=sorted(_SEGMENTERS), default="quickshift")
    p_seg.add_argument("--seg-opt", action="append", metavar="KEY=VALUE")
    p_seg.add_argument("-o", "--output", required=True, help="output PNG path")
    p_seg.set_defaults(func=_cmd_segment)

    p_met = sub.add_parser("metrics", help="ad-hoc metric computation on JSON inputs")
    met_sub = p_met.add_subparsers(dest="metric", required=True)

    m_rbo = met_sub.add_parser("rbo", help="rank-biased overlap of two rankings")
    m_rbo.add_argument("a", help="JSON array, most salient first")
    m_rbo.add_argument("b", help="JSON array over the same ids")
    m_rbo.add_argument("--p", type=float, default=0.9, help="persistence (default 0.9)")
    m_rbo.add_argument("--variant", choices=["extrapolated", "truncated"], default="extrapolated")
    m_rbo.set_defaults(func=_cmd_metrics)

    for name, help_text in (("tau", "Kendall rank correlation"), ("rho", "Spearman rank correlation")):
        m = met_sub.add_parser(name, help=help_text)
        m.add_argument("a")
        m.add_argument("b")
        m.set_defaults(func=_cmd_metrics)

    m_w = met_sub.add_parser("kendalls-w", help="Kendall's W over a rank matrix")
    m_w.add_argument("matrix", help="JSON matrix, one row of ranks per rater")
    m_w.add_argument("--p-method", choices=["auto", "exact", "chi2"], default="auto")
    m_w.set_defaults(func=_cmd_metrics)

    m_auc = met_sub.add_parser("auc", help="AUC of the rule: lower score implies class change")
    m_auc.add_argument("samples", help='JSON array of [score, changed] pairs')
    m_auc.set_defaults(func=_cmd_metrics)

    m_st = met_sub.add_parser("stability", help="explanation-change to input-change ratio")
    m_st.add_argument("saliency_a", help="SALM file for the original input")
    m_st.add_argument("saliency_b", help="SALM file for the perturbed input")
    m_st.add_argument("image_a", help="original image")
    m_st.add_argument("image_b", help="perturbed image")
    m_st.set_defaults(func=_cmd_metrics)

    p_rep = sub.add_parser("report", help="re-aggregate report files from a records.json")
    p_rep.add_argument("records", help="records.json from a previous run")
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--degenerate-policy", choices=["missing", "half"], default="missing")
    p_rep.add_argument("--rank-agreement", action="store_true")
    p_rep.add_argument("--force", action="store_true")
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
