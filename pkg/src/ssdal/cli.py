"""Command-line entry point.

Exit codes: 0 success, 2 config, 3 I/O, 4 missing prerequisite,
5 data/shape, 6 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import gradcheck as gc
from .attributes import MIN_REAL, binarize_top_p_rows
from .data import IdSet, LabeledSet
from .errors import ConfigError, DataError, MissingPrerequisiteError, SSDALError
from .experiment import ExperimentConfig, build_data
from .io import (align, experiment_config, load_config, read_attributes_csv, read_features_csv,
                 write_attributes_csv, write_features_csv)
from .net import NetworkConfig, forward, load_checkpoint, save_checkpoint
from .pipeline import (PipelineReport, checkpoint_digest, embedding_features, embedding_triplet_baseline,
                       predict_deep_attributes, predict_initial_labels, stage1_train, stage2_finetune,
                       stage3_combine)
from .reid import (ProbeGallery, SplitProtocol, averaged_cmc, evaluate_map, score_accuracy, write_cmc_csv,
                   write_json, write_map_csv)

log = logging.getLogger("ssdal")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISSING, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4, 5, 6

DATA_FILES = {
    "t_features": "t_features.csv",
    "t_attributes": "t_attributes.csv",
    "u_features": "u_features.csv",
    "probe_features": "probe_features.csv",
    "probe_attributes": "probe_attributes.csv",
    "gallery_features": "gallery_features.csv",
    "gallery_attributes": "gallery_attributes.csv",
}
MODEL_FILES = {"1": "stage1.model", "2": "stage2.model", "3": "final.model", "baseline-fc": "baseline_fc.model"}


# -- synth ------------------------------------------------------------------

def write_dataset(exp: ExperimentConfig, data_dir: Path) -> Dict[str, int]:
    data = build_data(exp)
    data_dir.mkdir(parents=True, exist_ok=True)
    f = {k: data_dir / v for k, v in DATA_FILES.items()}
    t, u, pg = data.t_set, data.u_set, data.probe_gallery
    write_features_csv(f["t_features"], t.features, t.person_ids, t.camera_ids)
    write_attributes_csv(f["t_attributes"], t.labels)
    write_features_csv(f["u_features"], u.features, u.person_ids, u.camera_ids)
    write_features_csv(f["probe_features"], pg.probe_features, pg.probe_ids, pg.probe_cameras)
    write_attributes_csv(f["probe_attributes"], pg.probe_labels)
    write_features_csv(f["gallery_features"], pg.gallery_features, pg.gallery_ids, pg.gallery_cameras)
    write_attributes_csv(f["gallery_attributes"], pg.gallery_labels)
    return {"t": len(t), "u": len(u), "probe": len(pg.probe_ids), "gallery": len(pg.gallery_ids)}


def cmd_synth(args) -> int:
    cfg = load_config(args.config, "synth")
    exp = experiment_config(cfg)
    counts = write_dataset(exp, Path(cfg["data_dir"]))
    log.info("wrote dataset %s", counts)
    return EXIT_OK


# -- train ------------------------------------------------------------------

def load_labeled(features_path, attributes_path) -> LabeledSet:
    ft = read_features_csv(features_path)
    sid, bits = read_attributes_csv(attributes_path)
    return LabeledSet(ft.features, align(ft.sample_ids, sid, bits).astype(np.int8), ft.person_ids, ft.camera_ids)


def load_id_set(features_path) -> IdSet:
    ft = read_features_csv(features_path)
    return IdSet(ft.features, ft.person_ids, ft.camera_ids)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingPrerequisiteError(f"{what} not found: {path}")
    return path


def train_stages(exp: ExperimentConfig, data_dir: Path, model_dir: Path, stage: str) -> PipelineReport:
    """Run one stage (or all, or the embedding baseline), reading prerequisites from disk."""
    for key in ("t_features", "t_attributes", "u_features"):
        _require(data_dir / DATA_FILES[key], "dataset file")
    t_set = load_labeled(data_dir / DATA_FILES["t_features"], data_dir / DATA_FILES["t_attributes"])
    u_set = load_id_set(data_dir / DATA_FILES["u_features"])
    model_dir.mkdir(parents=True, exist_ok=True)
    stages = ["1", "2", "3"] if stage == "all" else [stage]
    losses, digests, times = {}, {}, {}
    net_cfg = NetworkConfig((t_set.features.shape[1], *exp.hidden_sizes, t_set.num_attributes),
                            exp.hidden_activation, exp.net_config.init_seed)
    for s in stages:
        t0 = time.perf_counter()
        if s == "1":
            result = stage1_train(t_set, exp.stage1, net_cfg)
        elif s == "2":
            model = load_checkpoint(_require(model_dir / MODEL_FILES["1"], "stage-1 checkpoint"))
            tilde = predict_initial_labels(model, u_set, exp.stage2.p)
            result = stage2_finetune(model, u_set, tilde, exp.stage2)
        elif s == "3":
            model = load_checkpoint(_require(model_dir / MODEL_FILES["2"], "stage-2 checkpoint"))
            result = stage3_combine(model, t_set, u_set, exp.stage3)
        elif s == "baseline-fc":
            model = load_checkpoint(_require(model_dir / MODEL_FILES["1"], "stage-1 checkpoint"))
            result = embedding_triplet_baseline(model, u_set, exp.baseline)
        else:
            raise ConfigError(f"unknown stage {s!r}")
        save_checkpoint(result.params, model_dir / MODEL_FILES[s])
        name = {"1": "stage1", "2": "stage2", "3": "stage3", "baseline-fc": "baseline_fc"}[s]
        losses[name] = [float(v) for v in result.losses]
        digests[name] = checkpoint_digest(load_checkpoint(model_dir / MODEL_FILES[s]))
        times[name] = time.perf_counter() - t0
    return PipelineReport(losses, digests, times)


def _write_report(report: PipelineReport, path: Path) -> None:
    path.write_text(report.to_json(), encoding="utf-8")
    path.with_name(path.stem + ".timings.json").write_text(
        json.dumps(report.wall_times, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    cfg = load_config(args.config, "train")
    exp = experiment_config(cfg)
    model_dir = Path(cfg["model_dir"])
    report = train_stages(exp, Path(cfg["data_dir"]), model_dir, args.stage)
    _write_report(report, model_dir / f"report_{args.stage}.json")
    return EXIT_OK


# -- predict ----------------------------------------------------------------

def predict_rows(model_path, features_path, policy: str, p: int = 10, tau: float = 0.0):
    model = load_checkpoint(_require(Path(model_path), "model"))
    ft = read_features_csv(features_path)
    if policy == "top-p":
        bits = binarize_top_p_rows(forward(model, ft.features).scores, p)
    elif policy == "threshold":
        bits = predict_deep_attributes(model, ft.features, tau)
    else:
        raise ConfigError(f"unknown policy {policy!r}")
    return ft.sample_ids, bits


def cmd_predict(args) -> int:
    tau = MIN_REAL if args.tau == "min" else float(args.tau)
    sid, bits = predict_rows(args.model, args.features, args.policy, args.p, tau)
    write_attributes_csv(args.out, bits, sid)
    return EXIT_OK


# -- eval -------------------------------------------------------------------

def _matching_features(args, table, attr_path):
    if getattr(args, "model", None):
        model = load_checkpoint(_require(Path(args.model), "model"))
        if args.embedding:
            return embedding_features(model, table.features)
        return predict_deep_attributes(model, table.features, args.tau)
    if attr_path:
        sid, vals = read_attributes_csv(attr_path)
        return align(table.sample_ids, sid, vals)
    return table.features


def cmd_eval(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "cmc":
        probe, gallery = read_features_csv(args.probe), read_features_csv(args.gallery)
        pf = _matching_features(args, probe, args.probe_attributes)
        gf = _matching_features(args, gallery, args.gallery_attributes)
        pg = ProbeGallery(pf, probe.person_ids, gf, gallery.person_ids, probe.camera_ids, gallery.camera_ids)
        protocol = SplitProtocol(args.num_tests, args.probe_set_size, args.seed, args.max_rank)
        curve = averaged_cmc(pg, protocol, distance=args.distance)
        write_cmc_csv(curve, out / "cmc.csv")
        write_json({"rank1": curve.rank1, "cmc": curve.scores.tolist(), "num_tests": args.num_tests,
                    "distance": args.distance}, out / "cmc.json")
    elif args.mode == "map":
        query, gallery = read_features_csv(args.query), read_features_csv(args.gallery)
        qf = _matching_features(args, query, args.query_attributes)
        gf = _matching_features(args, gallery, args.gallery_attributes)
        result = evaluate_map(qf, query.person_ids, query.camera_ids, gf, gallery.person_ids, gallery.camera_ids,
                              args.query_mode, args.distance, not args.include_same_camera)
        write_map_csv(result, out / "map.csv")
        write_json({"map_percent": result.map_percent, "rank1_percent": result.rank1_percent,
                    "mode": result.mode}, out / "map.json")
    elif args.mode == "attr":
        sid, labels = read_attributes_csv(args.attributes)
        if args.predictions:
            psid, scores = read_attributes_csv(args.predictions)
            scores = align(sid, psid, scores)
        else:
            if not (args.model and args.features):
                raise ConfigError("attr mode needs --predictions or --model with --features")
            model = load_checkpoint(_require(Path(args.model), "model"))
            ft = read_features_csv(args.features)
            scores = align(sid, ft.sample_ids, forward(model, ft.features).logits)
        acc = score_accuracy(scores, labels.astype(np.int8))
        with open(out / "attr.csv", "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            fh.write(f"attribute_accuracy_percent,{format(acc, '.17g')}\n")
        write_json({"attribute_accuracy_percent": acc, "samples": int(labels.shape[0])}, out / "attr.json")
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config, "gradcheck") if args.config else {}
    seeds = int(cfg.get("gradcheck.seeds", 20))
    eps = float(cfg.get("gradcheck.epsilon", 1e-5))
    tol = float(cfg.get("gradcheck.tolerance", 1e-4))
    if seeds < 1:
        raise ConfigError("gradcheck.seeds must be at least 1")
    results = gc.run_gradcheck(seeds, eps)
    ok = True
    print(f"{'loss':<26}{'max_rel_error':>16}  status")
    for name, errs in results.items():
        worst = max(errs)
        passed = worst <= tol
        ok &= passed
        print(f"{name:<26}{worst:>16.3e}  {'PASS' if passed else 'FAIL'}")
    if args.report:
        write_json({"epsilon": eps, "seeds": seeds, "tolerance": tol,
                    "max_relative_error": {k: max(v) for k, v in results.items()}}, args.report)
    return EXIT_OK if ok else EXIT_VERIFY


# -- run-all ----------------------------------------------------------------

def run_all(cfg: Dict[str, object]) -> Dict:
    exp = experiment_config(cfg)
    data_dir, model_dir, report_dir = (Path(cfg[k]) for k in ("data_dir", "model_dir", "report_dir"))
    write_dataset(exp, data_dir)
    report = train_stages(exp, data_dir, model_dir, "all")
    baseline = train_stages(exp, data_dir, model_dir, "baseline-fc")
    report.losses.update(baseline.losses)
    report.checkpoints.update(baseline.checkpoints)
    report.wall_times.update(baseline.wall_times)

    report_dir.mkdir(parents=True, exist_ok=True)
    probe = read_features_csv(data_dir / DATA_FILES["probe_features"])
    gallery = read_features_csv(data_dir / DATA_FILES["gallery_features"])
    models = {k: load_checkpoint(model_dir / MODEL_FILES[s])
              for k, s in (("stage1", "1"), ("stage2", "2"), ("ssdal", "3"), ("baseline_fc", "baseline-fc"))}
    protocol = exp.protocol
    metrics = {}
    for name, model in models.items():
        if name == "baseline_fc":
            pf, gf = embedding_features(model, probe.features), embedding_features(model, gallery.features)
        else:
            pf = predict_deep_attributes(model, probe.features, exp.tau)
            gf = predict_deep_attributes(model, gallery.features, exp.tau)
        pg = ProbeGallery(pf, probe.person_ids, gf, gallery.person_ids, probe.camera_ids, gallery.camera_ids)
        curve = averaged_cmc(pg, protocol, distance=exp.distance)
        write_cmc_csv(curve, report_dir / f"cmc_{name}.csv")
        mres = evaluate_map(pf, probe.person_ids, probe.camera_ids, gf, gallery.person_ids, gallery.camera_ids,
                            distance=exp.distance)
        metrics[name] = {"rank1": curve.rank1, "rank5": curve.at(min(5, len(curve.scores))),
                         "map_percent": mres.map_percent, "map_rank1_percent": mres.rank1_percent}
    sid_p, labels_p = read_attributes_csv(data_dir / DATA_FILES["probe_attributes"])
    sid_g, labels_g = read_attributes_csv(data_dir / DATA_FILES["gallery_attributes"])
    labels = np.concatenate([align(probe.sample_ids, sid_p, labels_p), align(gallery.sample_ids, sid_g, labels_g)])
    feats = np.concatenate([probe.features, gallery.features])
    usable = labels.sum(axis=1) > 0
    for name in ("stage1", "stage2", "ssdal"):
        logits = forward(models[name], feats[usable]).logits
        metrics[name]["attribute_accuracy_percent"] = score_accuracy(logits, labels[usable].astype(np.int8))
        metrics[name]["mean_positive_attributes"] = float(
            predict_deep_attributes(models[name], feats, exp.tau).sum(axis=1).mean())
    summary = {"metrics": metrics, "pipeline": report.to_dict(), "seed": exp.seed}
    write_json(summary, report_dir / "run_all.json")
    (report_dir / "run_all.timings.json").write_text(
        json.dumps(report.wall_times, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return summary


def cmd_run_all(args) -> int:
    summary = run_all(load_config(args.config, "run-all"))
    m = summary["metrics"]
    for name in ("stage1", "stage2", "ssdal", "baseline_fc"):
        print(f"{name:<12} rank1={m[name]['rank1']:6.2f}  mAP={m[name]['map_percent']:6.2f}")
    return EXIT_OK


# -- entry ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssdal", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic T/U/probe/gallery CSVs")
    p.add_argument("config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stage, all stages, or the embedding baseline")
    p.add_argument("config")
    p.add_argument("--stage", choices=["1", "2", "3", "all", "baseline-fc"], default="all")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="binarize model predictions for a features CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--policy", choices=["top-p", "threshold"], default="threshold")
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--tau", default="0", help="threshold on logits; 'min' sets every bit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="CMC, mAP or attribute accuracy reports")
    p.add_argument("mode", choices=["cmc", "map", "attr"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model")
    p.add_argument("--embedding", action="store_true", help="match penultimate activations instead of attributes")
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--distance", choices=["cosine", "squared_euclidean"], default="cosine")
    p.add_argument("--probe")
    p.add_argument("--gallery")
    p.add_argument("--query")
    p.add_argument("--probe-attributes")
    p.add_argument("--gallery-attributes")
    p.add_argument("--query-attributes")
    p.add_argument("--num-tests", type=int, default=10)
    p.add_argument("--probe-set-size", type=int)
    p.add_argument("--max-rank", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query-mode", choices=["single", "multi_avg", "multi_max"], default="single")
    p.add_argument("--include-same-camera", action="store_true",
                   help="count same-camera same-id gallery items as relevant")
    p.add_argument("--features")
    p.add_argument("--attributes")
    p.add_argument("--predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("config", nargs="?")
    p.add_argument("--report")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run-all", help="synth, train all stages and the baseline, evaluate")
    p.add_argument("config")
    p.set_defaults(func=cmd_run_all)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SSDALError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
