"""End-to-end workflow: train on the leading frames, segment the rest, evaluate.

The first ``training_frames`` frames of a sequence provide the channel
statistics and the cluster model ("prior knowledge"); every later frame
is featurized, normalized with the training statistics, segmented with
the chosen method, mapped to semantic classes, and written out. The
random-field methods reuse the Gaussian mixture fitted at training time.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import evaluation, synthetic
from .clustering import GmmModel, KMeansModel, gmm_fit, gmm_map_labels, kmeans_assign, kmeans_fit
from .errors import (
    ChannelMismatchError,
    ConfigError,
    EmptyClusterError,
    MissingTruthError,
    TooFewFramesError,
)
from .features import ChannelStats, FeatureConfig, build_feature_stack, divergence, fit_channel_stats, normalize
from .image import CLASS_NAMES, FIRE, ClassSemantics, FeatureStack, Frame, LabelMap, ScalarField
from .io import atomic_write_bytes, load_labelmap, load_sequence, natural_key, save_labelmap
from .optical_flow import HsParams, horn_schunck, save_flow_csv
from .random_fields import GmrfParams, MrfParams, gmrf_segment, icm_segment, write_energy_csv, write_residual_csv
from .sift_flow import SiftFlowParams, dense_sift, displacement_magnitude, match_siftflow

logger = logging.getLogger("irseg")

CONFIG_VERSION = 1
MODEL_FILE_VERSION = 1
METHODS = ("kmeans", "gmm", "mrf", "gmrf")

# Potts coupling pinned for the benchmark suite after a one-off sweep over
# {0.5, 1, 2}; see the bench command for the comparison it was chosen on.
DEFAULT_MRF_BETA = 2.0

# The optical-flow module's own default alpha (1.0) suits raw-unit imagery;
# for [0,1]-normalized frames it overweights the smoothness term and bleeds
# motion far past region boundaries, so the pipeline defaults to a weaker
# coupling matched to the normalized intensity scale.
DEFAULT_FLOW_ALPHA = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the train/segment/eval verbs need, overridable per-flag."""

    input_dir: str = ""
    pattern: str = "*.pgm"
    output_dir: str = ""
    method: str = "mrf"
    k: int = 3
    seed: int = 0
    features: FeatureConfig = FeatureConfig()
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    gmm_max_iters: int = 100
    gmm_tol: float = 1e-5
    gmm_reg: float = 1e-6
    mrf_beta: float = DEFAULT_MRF_BETA
    mrf_max_sweeps: int = 20
    gmrf_lambda: float = 4.0
    gmrf_kappa: float = 1.0
    gmrf_max_sweeps: int = 200
    gmrf_tol: float = 1e-6
    flow_alpha: float = DEFAULT_FLOW_ALPHA
    flow_max_iters: int = 100
    flow_tol: float = 1e-4
    sift_cell_size: int = 2
    sift_eta: float = 0.005
    sift_alpha: float = None
    sift_t: float = None
    sift_d: float = None
    sift_radius: int = 5
    sift_bp_iters: int = 40
    truth_dir: str = None
    jobs: int = 1
    dump_flow: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k != 3:
            raise ConfigError("semantic assignment requires k=3")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def hs_params(self):
        return HsParams(alpha=self.flow_alpha, max_iters=self.flow_max_iters, tol=self.flow_tol)

    def sift_params(self):
        return SiftFlowParams(
            eta=self.sift_eta,
            alpha=self.sift_alpha,
            t=self.sift_t,
            d=self.sift_d,
            search_radius=self.sift_radius,
            bp_iters=self.sift_bp_iters,
        )


_FEATURE_KEYS = ("use_intensity", "use_flow_mag", "use_divergence", "use_sift_flow", "training_frames")


def config_from_dict(doc, base=None):
    """Build a PipelineConfig from a flat JSON-style dict of config keys."""
    base = base or PipelineConfig()
    doc = dict(doc)
    version = doc.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    feature_kwargs = {}
    for key in _FEATURE_KEYS:
        if key in doc:
            feature_kwargs[key] = doc.pop(key)
    known = set(PipelineConfig.__dataclass_fields__) - {"features"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        features = replace(base.features, **feature_kwargs) if feature_kwargs else base.features
        return replace(base, features=features, **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None):
    """Read a JSON config file, then apply flag overrides on top."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if "version" not in doc:
            raise ConfigError(f"{path}: config file must carry a version field")
    cfg = config_from_dict(doc)
    if overrides:
        cfg = config_from_dict(overrides, base=cfg)
    return cfg


def _flow_needed(cfg):
    return cfg.features.use_flow_mag or cfg.features.use_divergence or cfg.dump_flow


def frame_features(frames, index, cfg):
    """Feature stack for one frame, plus the flow used (None when disabled).

    Flow for frame i comes from the pair (i, i+1); the final frame reuses
    the last available pair so every frame has a full feature vector.
    """
    n = len(frames)
    frame = frames[index]
    flow = None
    div = None
    sift_mag = None
    if _flow_needed(cfg):
        a, b = (index, index + 1) if index < n - 1 else (n - 2, n - 1)
        flow, _, _ = horn_schunck(frames[a], frames[b], cfg.hs_params())
        div = divergence(flow)
    if cfg.features.use_sift_flow:
        a, b = (index, index + 1) if index < n - 1 else (n - 2, n - 1)
        d1 = dense_sift(frames[a], cfg.sift_cell_size)
        d2 = dense_sift(frames[b], cfg.sift_cell_size)
        disp = match_siftflow(d1, d2, cfg.sift_params())
        sift_mag = ScalarField(displacement_magnitude(disp))
    return build_feature_stack(frame, flow, div, sift_mag, cfg.features), flow


def _pool_stacks(stacks):
    data = np.concatenate([s.data for s in stacks], axis=0)
    return FeatureStack(data, stacks[0].channel_names)


def _cluster_intensity_means(frames_data, labels, k):
    flat_labels = labels.labels.ravel()
    sums = np.bincount(flat_labels, weights=frames_data.ravel(), minlength=k)
    counts = np.bincount(flat_labels, minlength=k)
    means = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    return means


def _semantics_from_means(means):
    order = sorted(range(3), key=lambda c: (-means[c], c))
    mapping = [None, None, None]
    mapping[order[0]] = FIRE
    mapping[order[1]] = 1
    mapping[order[2]] = 0
    return ClassSemantics(tuple(mapping))


def cmd_train(cfg):
    """Fit channel statistics and the cluster model on the training frames.

    Writes ``model.json`` into the output directory and returns its path.
    The random-field methods train the same Gaussian mixture that plain
    gmm does.
    """
    frames = load_sequence(cfg.input_dir, cfg.pattern)
    n_train = cfg.features.training_frames
    if len(frames) < n_train + 1:
        raise TooFewFramesError(
            f"{len(frames)} frames cannot supply {n_train} training frames plus a flow pair"
        )
    logger.info("training on %d frames from %s", n_train, cfg.input_dir)
    stacks = [frame_features(frames, i, cfg)[0] for i in range(n_train)]
    stats = fit_channel_stats(stacks)
    pooled = _pool_stacks([normalize(s, stats) for s in stacks])
    if cfg.method == "kmeans":
        model, labels = kmeans_fit(pooled, cfg.k, seed=cfg.seed, max_iters=cfg.kmeans_max_iters, tol=cfg.kmeans_tol)
        fit_history = list(model.wcss_history)
    else:
        model, labels = gmm_fit(
            pooled, cfg.k, seed=cfg.seed, max_iters=cfg.gmm_max_iters, tol=cfg.gmm_tol, reg=cfg.gmm_reg
        )
        fit_history = list(model.log_likelihood_history)
    raw_intensity = np.concatenate([frames[i].data for i in range(n_train)], axis=0)
    cluster_intensity = _cluster_intensity_means(raw_intensity, labels, cfg.k)
    doc = {
        "version": MODEL_FILE_VERSION,
        "method": cfg.method,
        "model": json.loads(model.to_json()),
        "stats": {
            "mean": stats.mean.tolist(),
            "std": stats.std.tolist(),
            "frame_count": stats.frame_count,
            "channel_names": list(stats.channel_names),
        },
        "cluster_intensity": cluster_intensity.tolist(),
        "fit_history": fit_history,
    }
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "model.json"
    atomic_write_bytes(path, (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("ascii"))
    return path


def load_model_file(path):
    """Parse a model.json into (model, stats, fallback_semantics)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_FILE_VERSION:
        raise ConfigError(f"{path}: unsupported model file version {doc.get('version')}")
    kind = doc["model"].get("kind")
    if kind == "kmeans":
        model = KMeansModel.from_json(json.dumps(doc["model"]))
    elif kind == "gmm":
        model = GmmModel.from_json(json.dumps(doc["model"]))
    else:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")
    s = doc["stats"]
    stats = ChannelStats(
        mean=np.array(s["mean"]),
        std=np.array(s["std"]),
        frame_count=int(s["frame_count"]),
        channel_names=tuple(s["channel_names"]),
    )
    fallback = _semantics_from_means(doc["cluster_intensity"])
    return model, stats, fallback


def _segment_labels(cfg, model, stack):
    """Run the configured segmenter; returns (cluster labels, diagnostics)."""
    if cfg.method == "kmeans":
        return kmeans_assign(model, stack), None
    if cfg.method == "gmm":
        return gmm_map_labels(model, stack), None
    if cfg.method == "mrf":
        init = gmm_map_labels(model, stack)
        labels, _, history = icm_segment(
            stack, model, MrfParams(beta=cfg.mrf_beta, max_sweeps=cfg.mrf_max_sweeps), init
        )
        return labels, ("energy", history)
    init_labels, residuals = gmrf_segment(
        stack,
        model,
        GmrfParams(lam=cfg.gmrf_lambda, kappa=cfg.gmrf_kappa, max_sweeps=cfg.gmrf_max_sweeps, tol=cfg.gmrf_tol),
    )
    return init_labels, ("residual", residuals)


def _segment_one(cfg, model, stats, fallback, frames, index, out_dir):
    stack_raw, flow = frame_features(frames, index, cfg)
    stack = normalize(stack_raw, stats)
    labels, diag = _segment_labels(cfg, model, stack)
    frame = frames[index]
    try:
        semantics = evaluation.assign_semantics(labels, ScalarField(frame.data))
    except EmptyClusterError:
        semantics = fallback
    semantic_labels = semantics.apply(labels)
    label_path = out_dir / f"label_{index:04d}.png"
    save_labelmap(semantic_labels, label_path)
    evaluation.render_overlay(frame, semantic_labels, None, out_dir / f"overlay_{index:04d}.png")
    if diag is not None:
        kind, payload = diag
        if kind == "energy":
            write_energy_csv(payload, out_dir / f"energy_{index:04d}.csv")
        else:
            write_residual_csv(payload, out_dir / f"residual_{index:04d}.csv")
    if cfg.dump_flow and flow is not None:
        save_flow_csv(flow, out_dir, prefix=f"flow_{index:04d}_")
    return label_path


def _segment_job(args):
    cfg, model, stats, fallback, frames, index, out_dir = args
    return _segment_one(cfg, model, stats, fallback, frames, index, Path(out_dir))


def cmd_segment(cfg, model_path):
    """Segment every frame after the training prefix; returns label-map paths."""
    model, stats, fallback = load_model_file(model_path)
    expected = cfg.features.channel_names
    if tuple(stats.channel_names) != expected:
        raise ChannelMismatchError(
            f"model was trained on channels {tuple(stats.channel_names)}, config wants {expected}"
        )
    if cfg.method == "kmeans" and not isinstance(model, KMeansModel):
        raise ConfigError("method kmeans needs a kmeans model file")
    if cfg.method in ("gmm", "mrf", "gmrf") and not isinstance(model, GmmModel):
        raise ConfigError(f"method {cfg.method} needs a gmm model file")
    frames = load_sequence(cfg.input_dir, cfg.pattern)
    n_train = cfg.features.training_frames
    if len(frames) <= n_train:
        raise TooFewFramesError(f"{len(frames)} frames leave nothing to segment after {n_train} training frames")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = range(n_train, len(frames))
    logger.info("segmenting %d frames with %s", len(indices), cfg.method)
    if cfg.jobs > 1:
        jobs = [(cfg, model, stats, fallback, frames, i, str(out_dir)) for i in indices]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_segment_job, jobs))
    return [_segment_one(cfg, model, stats, fallback, frames, i, out_dir) for i in indices]


_INDEX_RE = re.compile(r"(\d+)")


def _index_of(path):
    matches = _INDEX_RE.findall(Path(path).stem)
    return int(matches[-1]) if matches else None


def cmd_eval(pred_dir, truth_dir, out_dir=None, k=3):
    """Compare predicted label maps against ground truth by frame index.

    Predictions are the ``label_*.png`` files of a segment run; each needs
    a truth map whose filename carries the same frame index. Writes
    report.json, confusion.csv, and per_frame.csv when out_dir is given,
    and returns the report dict.
    """
    pred_paths = sorted(Path(pred_dir).glob("label_*.png"), key=lambda p: natural_key(p.name))
    if not pred_paths:
        raise MissingTruthError(f"no label_*.png predictions under {pred_dir}")
    truth_by_index = {}
    for p in Path(truth_dir).glob("*.png"):
        idx = _index_of(p)
        if idx is not None:
            truth_by_index[idx] = p
    per_frame = {}
    pooled = None
    for pred_path in pred_paths:
        idx = _index_of(pred_path)
        if idx not in truth_by_index:
            raise MissingTruthError(f"no truth map for frame {idx} ({pred_path.name}) under {truth_dir}")
        pred = load_labelmap(pred_path, k=k)
        truth = load_labelmap(truth_by_index[idx], k=k)
        cm = evaluation.confusion(pred, truth)
        pooled = cm if pooled is None else pooled + cm
        m = evaluation.metrics(cm)
        per_frame[idx] = {
            "accuracy": m.accuracy,
            "counts": cm.counts.tolist(),
            "fire_detected_pred": bool((pred.labels == FIRE).any()),
            "fire_detected_truth": bool((truth.labels == FIRE).any()),
        }
    report = {
        "version": 1,
        "class_names": list(CLASS_NAMES),
        "frames": {str(i): per_frame[i] for i in sorted(per_frame)},
        "pooled": evaluation.metrics_report(pooled),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(out_dir / "report.json", (json.dumps(report, sort_keys=True, indent=1) + "\n").encode("ascii"))
        evaluation.write_confusion_csv(pooled, out_dir / "confusion.csv", CLASS_NAMES)
        lines = ["frame,accuracy,fire_detected_pred,fire_detected_truth"]
        for i in sorted(per_frame):
            f = per_frame[i]
            lines.append(
                "%d,%.9g,%d,%d" % (i, f["accuracy"], f["fire_detected_pred"], f["fire_detected_truth"])
            )
        atomic_write_bytes(out_dir / "per_frame.csv", ("\n".join(lines) + "\n").encode("ascii"))
    return report


def cmd_synth(scene_name, out_dir):
    """Write one pinned benchmark scene; returns the manifest path."""
    spec = synthetic.benchmark_scene(scene_name)
    return synthetic.write_scene(spec, out_dir, name=scene_name)


def cmd_overlay(frames_dir, pattern, labels_dir, out_dir):
    """Render overlays for every (frame, semantic label map) pair by index."""
    frames_dir = Path(frames_dir)
    frame_paths = sorted(frames_dir.glob(pattern), key=lambda p: natural_key(p.name))
    labels_by_index = {}
    for p in Path(labels_dir).glob("*.png"):
        idx = _index_of(p)
        if idx is not None:
            labels_by_index[idx] = p
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .io import load_frame

    written = []
    for fp in frame_paths:
        idx = _index_of(fp)
        if idx is None or idx not in labels_by_index:
            continue
        frame = load_frame(fp)
        labels = load_labelmap(labels_by_index[idx], k=3)
        out = out_dir / f"overlay_{idx:04d}.png"
        evaluation.render_overlay(frame, labels, None, out)
        written.append(out)
    return written


FEATURE_SETS = {
    "intensity": dict(use_intensity=True, use_flow_mag=False, use_divergence=False, use_sift_flow=False),
    "full": dict(use_intensity=True, use_flow_mag=True, use_divergence=True, use_sift_flow=False),
}
_BENCH_METHODS = ("kmeans", "gmm", "mrf", "gmrf")


def cmd_bench(out_dir, base_cfg=None):
    """Run all four methods under both feature sets on the pinned scene suite.

    Writes bench.csv (one row per scene x feature set x method) and
    bench_pooled.csv (per method x feature set, pooled over all scenes)
    and returns (rows, pooled) where pooled maps (method, fset) to the
    pooled metrics dict.
    """
    out_dir = Path(out_dir)
    base_cfg = base_cfg or PipelineConfig()
    rows = []
    pooled_counts = {}
    for scene in synthetic.BENCHMARK_SCENE_NAMES:
        scene_dir = out_dir / "scenes" / scene
        cmd_synth(scene, scene_dir)
        for fset_name, flags in FEATURE_SETS.items():
            fcfg = replace(base_cfg.features, **flags)
            models = {}
            for kind in ("kmeans", "gmm"):
                run_dir = out_dir / "runs" / scene / fset_name / f"train_{kind}"
                cfg = replace(base_cfg, input_dir=str(scene_dir), output_dir=str(run_dir), method=kind, features=fcfg)
                models[kind] = cmd_train(cfg)
            for method in _BENCH_METHODS:
                run_dir = out_dir / "runs" / scene / fset_name / method
                cfg = replace(base_cfg, input_dir=str(scene_dir), output_dir=str(run_dir), method=method, features=fcfg)
                model_path = models["kmeans" if method == "kmeans" else "gmm"]
                cmd_segment(cfg, model_path)
                report = cmd_eval(run_dir, scene_dir, out_dir=run_dir)
                acc = report["pooled"]["accuracy"]
                rows.append((scene, fset_name, method, acc))
                key = (method, fset_name)
                counts = np.array(report["pooled"]["counts"], dtype=np.int64)
                pooled_counts[key] = pooled_counts.get(key, 0) + counts
                logger.info("bench %s/%s/%s accuracy %.4f", scene, fset_name, method, acc)
    lines = ["scene,feature_set,method,accuracy"]
    for scene, fset, method, acc in rows:
        lines.append("%s,%s,%s,%.6f" % (scene, fset, method, acc))
    atomic_write_bytes(out_dir / "bench.csv", ("\n".join(lines) + "\n").encode("ascii"))
    pooled = {}
    plines = ["method,feature_set,accuracy,recall_background,recall_smoke,recall_fire"]
    for fset_name in FEATURE_SETS:
        for method in _BENCH_METHODS:
            cm = evaluation.ConfusionMatrix(pooled_counts[(method, fset_name)])
            rep = evaluation.metrics_report(cm)
            pooled[(method, fset_name)] = rep
            rec = rep["per_class"]["recall"]
            plines.append(
                "%s,%s,%.6f,%.6f,%.6f,%.6f" % (method, fset_name, rep["accuracy"], rec[0], rec[1], rec[2])
            )
    atomic_write_bytes(out_dir / "bench_pooled.csv", ("\n".join(plines) + "\n").encode("ascii"))
    return rows, pooled
