"""Command-line pipeline: build a synthetic zoo, estimate
transferability, select models, adapt the selected heads, evaluate.

Every subcommand exits 0 on success and nonzero with a one-line
``error: <context>: <message>`` on stderr otherwise. All randomness is
seeded, so reruns with identical inputs produce byte-identical outputs.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .diversity import KernelConfig
from .ensemble_adapt import (AdaptConfig, ADAPTED_SUFFIX, adapt,
                             build_ensemble, ensemble_forward,
                             mix_outputs, write_adapted_heads)
from .errors import ZooAdaptError
from .inference import forward
from .selection import SelectionResult, select
from .sute import SuteConfig, score_zoo
from .synthzoo import (ArchSpec, ScenarioSpec, TrainConfig, accuracy,
                       build_zoo, generate_scenario, read_labels, spearman)
from .tensorio import load_zoo, read_tensor


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ZooAdaptError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zooadapt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="generate a scenario and train a zoo")
    p.add_argument("scenario", help="scenario spec JSON")
    p.add_argument("out_dir", help="output directory for tensors + manifest")
    p.add_argument("--archs", default="identity,proj-3,proj-16,rff-64-2.0,rff-64-8.0,poly2",
                   help="comma-separated arch tokens")
    p.add_argument("--grid", default="lr=0.5,epochs=300;lr=0.05,epochs=15",
                   help="semicolon-separated train configs")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("estimate", help="score every model in a zoo")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="report CSV path")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--tau-h", type=float, default=None)
    p.add_argument("--tau-l", type=float, default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select", help="split a zoo into inliers and outliers")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="selection JSON path")
    p.add_argument("--q", type=int, default=2, help="diversity-set size")
    p.add_argument("--kernel", default="rbf",
                   help="rbf, rbf:<bandwidth>, or linear")
    p.add_argument("--flip-diversity", action="store_true",
                   help="pick the most dependent candidates instead")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--tau-h", type=float, default=None)
    p.add_argument("--tau-l", type=float, default=None)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("adapt", help="adapt the selected classifier heads")
    p.add_argument("manifest")
    p.add_argument("selection", help="selection JSON from `select`")
    p.add_argument("-o", "--out", required=True, help="history CSV path")
    p.add_argument("--gamma1", type=float, default=0.3)
    p.add_argument("--gamma2", type=float, default=0.3)
    p.add_argument("--tau-recycle", type=float, default=0.95)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learnable-weights", action="store_true",
                   help="train the member weights too (ablation mode)")
    # Adaptation is label-free by contract; passing a labels file is an error.
    p.add_argument("--labels", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="accuracy/rank-correlation report")
    p.add_argument("manifest")
    p.add_argument("labels", nargs="?", default=None,
                   help="evaluation label file (optional)")
    p.add_argument("selection", nargs="?", default=None,
                   help="selection JSON (optional)")
    p.add_argument("-o", "--out", required=True, help="report CSV path")
    p.add_argument("--plot", default=None,
                   help="rank-vs-accuracy pairs CSV (needs labels)")
    p.add_argument("--summary", default=None,
                   help="summary CSV with correlations and ensemble accuracy")
    p.add_argument("--adapted", action="store_true",
                   help="evaluate the .adapted heads written by `adapt`")
    p.set_defaults(func=cmd_eval)

    return parser


def _parse_scenario(path) -> ScenarioSpec:
    return ScenarioSpec.from_json(Path(path).read_text())


def cmd_build(args) -> int:
    spec = _parse_scenario(args.scenario)
    if args.seed is not None:
        spec.seed = args.seed
    archs = [ArchSpec.parse(tok, seed=spec.seed * 1000 + i)
             for i, tok in enumerate(args.archs.split(","))]
    configs = [TrainConfig.parse(tok) for tok in args.grid.split(";")]
    scenario = generate_scenario(spec)
    manifest = build_zoo(scenario, archs, configs, args.out_dir)
    print(manifest)
    return 0


def _sute_config(args, num_classes: int) -> SuteConfig:
    base = SuteConfig.default(num_classes, lambda1=args.lambda1,
                              lambda2=args.lambda2)
    tau_h = args.tau_h if args.tau_h is not None else base.tau_h
    tau_l = args.tau_l if args.tau_l is not None else base.tau_l
    return SuteConfig(lambda1=args.lambda1, lambda2=args.lambda2,
                      tau_h=tau_h, tau_l=tau_l)


def cmd_estimate(args) -> int:
    records, target = load_zoo(args.manifest)
    cfg = _sute_config(args, target.num_classes)
    report = score_zoo(records, cfg)
    report.write_csv(args.out)
    print(f"estimated {len(records)} models -> {args.out}")
    return 0


def _kernel_config(token: str) -> KernelConfig:
    token = token.strip()
    if token == "linear":
        return KernelConfig(kind="linear")
    if token == "rbf":
        return KernelConfig(kind="rbf")
    if token.startswith("rbf:"):
        return KernelConfig(kind="rbf", bandwidth=float(token[4:]))
    raise ZooAdaptError(f"cannot parse kernel {token!r}")


def cmd_select(args) -> int:
    records, target = load_zoo(args.manifest)
    cfg = _sute_config(args, target.num_classes)
    result = select(records, cfg, q=args.q, kc=_kernel_config(args.kernel),
                    flip_diversity=args.flip_diversity)
    result.write_json(args.out)
    print(f"inliers={len(result.inliers)} outliers={len(result.outliers)} "
          f"-> {args.out}")
    return 0


def cmd_adapt(args) -> int:
    if args.labels is not None:
        raise ZooAdaptError(
            "adapt is label-free; refusing to accept a labels file")
    records, _ = load_zoo(args.manifest)
    sel = SelectionResult.from_json(Path(args.selection).read_text())
    by_id = {m.model_id: m for m in records}
    members = [by_id[i] for i in sel.inliers]
    outliers = [by_id[i] for i in sel.outliers]
    cfg = AdaptConfig(gamma1=args.gamma1, gamma2=args.gamma2,
                      tau_recycle=args.tau_recycle, epochs=args.epochs,
                      lr=args.lr, seed=args.seed)
    ensemble = build_ensemble(members, [sel.sutes[i] for i in sel.inliers],
                              cfg.softmax_temperature_for_weights)
    adapted, history = adapt(ensemble, outliers, cfg,
                             learnable_weights=args.learnable_weights)
    history.write_csv(args.out)

    base = Path(args.manifest).parent
    manifest_doc = _manifest_entries(args.manifest)
    wpaths = {e["id"]: base / e["weights"] for e in manifest_doc}
    bpaths = {e["id"]: base / e["bias"] for e in manifest_doc}
    write_adapted_heads(adapted, wpaths, bpaths)
    print(f"adapted {len(members)} heads, history -> {args.out}")
    return 0


def _manifest_entries(manifest_path) -> list[dict]:
    return json.loads(Path(manifest_path).read_text())["models"]


def cmd_eval(args) -> int:
    records, target = load_zoo(args.manifest)
    labels = read_labels(args.labels) if args.labels else None

    sel = None
    if args.selection:
        sel = SelectionResult.from_json(Path(args.selection).read_text())

    cfg = SuteConfig.default(target.num_classes)
    report = score_zoo(records, cfg)
    ranks = report.rank_of()

    accs = {}
    if labels is not None:
        for m in records:
            accs[m.model_id] = accuracy(forward(m), labels)

    header = ["model_id", "domain", "arch", "sute", "ane", "nmi", "rank"]
    if labels is not None:
        header.append("accuracy")
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for r in report.ranked():
            row = [r.model_id, r.domain_id, r.arch_tag,
                   "-inf" if r.components.sute is None else repr(r.components.sute),
                   repr(r.ane), repr(r.nmi), ranks[r.model_id]]
            if labels is not None:
                row.append(repr(accs[r.model_id]))
            out.writerow(row)

    if labels is not None and args.plot:
        with open(args.plot, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["rank", "accuracy"])
            for r in report.ranked():
                out.writerow([ranks[r.model_id], repr(accs[r.model_id])])

    if labels is not None and args.summary:
        _write_summary(args, records, report, accs, labels, sel)

    print(f"evaluated {len(records)} models -> {args.out}")
    return 0


def _write_summary(args, records, report, accs, labels, sel) -> None:
    ids = [r.model_id for r in report.rows]
    acc = np.array([accs[i] for i in ids])
    sute_vals = np.array([
        -np.inf if r.components.sute is None else r.components.sute
        for r in report.rows])
    ane_vals = np.array([r.ane for r in report.rows])
    nmi_vals = np.array([r.nmi for r in report.rows])

    rows = []
    for name, vals in (("sute", sute_vals), ("ane", ane_vals), ("nmi", nmi_vals)):
        res = spearman(vals, acc)
        rows.append((f"spearman_{name}_rho", res.rho))
        rows.append((f"spearman_{name}_p", res.p_value))
    rows.append(("best_single_accuracy", float(acc.max())))

    by_id = {m.model_id: m for m in records}
    uniform = mix_outputs([forward(m) for m in records],
                          np.full(len(records), 1.0 / len(records)))
    rows.append(("uniform_ensemble_accuracy", accuracy(uniform, labels)))

    if sel is not None:
        members = [by_id[i] for i in sel.inliers]
        ens = build_ensemble(members, [sel.sutes[i] for i in sel.inliers])
        rows.append(("selected_ensemble_accuracy",
                     accuracy(ensemble_forward(ens), labels)))
        if args.adapted:
            base = Path(args.manifest).parent
            entries = {e["id"]: e for e in _manifest_entries(args.manifest)}
            adapted_members = []
            for m in members:
                e = entries[m.model_id]
                w = read_tensor(str(base / e["weights"]) + ADAPTED_SUFFIX)
                b = read_tensor(str(base / e["bias"]) + ADAPTED_SUFFIX)
                adapted_members.append(m.with_head(w.astype(np.float64),
                                                   b.astype(np.float64)))
            ens_a = build_ensemble(adapted_members,
                                   [sel.sutes[i] for i in sel.inliers])
            rows.append(("adapted_ensemble_accuracy",
                         accuracy(ensemble_forward(ens_a), labels)))

    with open(args.summary, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["metric", "value"])
        for name, value in rows:
            out.writerow([name, repr(float(value))])


if __name__ == "__main__":
    sys.exit(main())
